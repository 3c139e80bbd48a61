import hashlib
import math
import pickle
from typing import Any, Dict, List, Tuple, Union

import numpy as np

"""
File contains a small list of utilities for the lab: checksums, angle helpers and the CSV layout shared by every
output file.
"""

TWO_PI = 2.0 * math.pi
VERSION = "0.1.0"


def hash_np(*mats: np.ndarray) -> str:
    """
    Hashes a sequence of np arrays by pickling them in order.
    :param mats: multidimensional numpy arrays.
    :return: hash
    """
    sha1_hash = hashlib.sha1()
    for mat in mats:
        sha1_hash.update(pickle.dumps(np.ascontiguousarray(mat)))
    return sha1_hash.hexdigest()


def wrap_angle(theta: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """
    Wrap to [0, 2 pi).
    """
    res = np.mod(theta, TWO_PI)
    # mod of tiny negatives rounds to 2 pi
    res = np.where(res >= TWO_PI, 0.0, res)
    return float(res) if np.ndim(res) == 0 else res


def angle_diff(a: Union[float, np.ndarray], b: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """
    a - b wrapped to [-pi, pi).
    """
    res = np.mod(np.asarray(a) - np.asarray(b) + math.pi, TWO_PI) - math.pi
    return float(res) if np.ndim(res) == 0 else res


# ======================================================================================================================
# CSV
# ======================================================================================================================

def _format_param(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_format_param(v) for v in value)
    return str(value).replace(" ", "_")


def header_line(params: Dict[str, Any]) -> str:
    """
    First line of every output file, the version followed by the full parameter set.
    """
    body = " ".join(f"{k}={_format_param(v)}" for k, v in params.items())
    return f"# sohr-py {VERSION} {body}".rstrip()


def parse_header(line: str) -> Dict[str, str]:
    tokens = line.lstrip("#").split()
    if len(tokens) < 2 or tokens[0] != "sohr-py":
        raise ValueError(f"Not a sohr-py header: {line.strip()}")
    params = {"version": tokens[1]}
    for tok in tokens[2:]:
        if "=" not in tok:
            raise ValueError(f"Malformed header token {tok}")
        key, value = tok.split("=", 1)
        params[key] = value
    return params


def write_csv(path: str, columns: List[str], data: np.ndarray, params: Dict[str, Any]):
    """
    Write a numeric table with the parameter header and the column line. Floats are written with 17 significant
    digits so reading back is exact.

    :param path: target file
    :param columns: column names
    :param data: array of shape (rows, len(columns))
    :param params: parameters for the header line
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.size > 0 and data.shape[1] != len(columns):
        raise ValueError(f"Got {data.shape[1]} data columns for {len(columns)} names")

    with open(path, "w") as f:
        f.write(header_line(params) + "\n")
        f.write(",".join(columns) + "\n")
        if data.size > 0:
            np.savetxt(f, data, fmt="%.17g", delimiter=",")


def read_csv(path: str) -> Tuple[Dict[str, str], List[str], np.ndarray]:
    """
    Inverse of write_csv.

    :return: header parameters, column names, data of shape (rows, columns)
    """
    with open(path, "r") as f:
        params = parse_header(f.readline())
        columns = f.readline().strip().split(",")
        data = np.loadtxt(f, delimiter=",", ndmin=2)
    if data.size == 0:
        data = np.zeros((0, len(columns)))
    return params, columns, data


def write_rows(path: str, columns: List[str], rows: List[List[Any]], params: Dict[str, Any]):
    """
    Write a mixed table (strings and numbers), used for reports.
    """
    def fmt(v):
        if isinstance(v, float):
            return "%.17g" % v
        return str(v)

    with open(path, "w") as f:
        f.write(header_line(params) + "\n")
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(fmt(v) for v in row) + "\n")
