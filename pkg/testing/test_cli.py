import logging
import os
import tempfile
import unittest
from unittest.mock import MagicMock

from sohr_py.main import (EXIT_CONFIG, EXIT_OK, EXIT_VALIDATION, build_parser, main, overrides_from_args,
                          run_command)
from sohr_py.utils import read_csv

SMALL = """
[general]
n_theta = 64
cpu_proc = 1

[profiles]
d = 1
w = 0, 2
"""


def write_config(directory: str, text: str) -> str:
    path = os.path.join(directory, "run.cfg")
    with open(path, "w") as f:
        f.write(text)
    return path


def read_report(path: str):
    """
    Reports mix strings and numbers, split them by hand.
    """
    with open(path) as f:
        f.readline()
        columns = f.readline().strip().split(",")
        rows = [line.strip().split(",") for line in f if line.strip()]
    return columns, rows


class TestArguments(unittest.TestCase):

    def test_overrides(self):
        args = build_parser().parse_args(["validate", "-o", "out", "-s", "--seed", "3", "-v", "-t", "gvm,ibm"])
        overrides = overrides_from_args(args)
        self.assertEqual(overrides["general"], {"out_dir": "out", "serial": True, "seed": 3,
                                                "log_level": logging.DEBUG})
        self.assertEqual(overrides["validate"], {"tags": "gvm,ibm"})

    def test_plain(self):
        args = build_parser().parse_args(["coeffs"])
        self.assertEqual(overrides_from_args(args), {"general": {}})

    def test_unknown_command(self):
        with self.assertRaises(SystemExit):
            build_parser().parse_args(["plot"])

    def test_validation_failure_exit_code(self):
        lab = MagicMock()
        lab.cmd_dispersion.return_value = (["scan.csv"], False)
        lab.cmd_coeffs.return_value = (["table.csv"], True)
        lab.cmd_profiles.return_value = ["profile.csv"]
        self.assertEqual(run_command(lab, "dispersion"), EXIT_VALIDATION)
        self.assertEqual(run_command(lab, "coeffs"), EXIT_OK)
        self.assertEqual(run_command(lab, "profiles"), EXIT_OK)


class TestMain(unittest.TestCase):

    def tearDown(self):
        # The lab routes the package logger through its queue, hand it back to the root logger
        pkg = logging.getLogger("sohr_py")
        pkg.handlers.clear()
        pkg.propagate = True

    def test_profiles(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = os.path.join(tmp, "out")
            code = main(["profiles", "-c", write_config(tmp, SMALL), "-o", out, "-s"])
            self.assertEqual(code, EXIT_OK)
            self.assertEqual(sorted(os.listdir(out)), ["profile_d1_w0.csv", "profile_d1_w2.csv"])

            params, columns, data = read_csv(os.path.join(out, "profile_d1_w2.csv"))
            self.assertEqual(columns, ["theta", "phi", "x", "vmf_ref", "g_ref"])
            self.assertEqual(data.shape, (64, 5))
            self.assertEqual(params["n_theta"], "64")
            self.assertGreater(float(params["psi"]), 0.0)

    def test_invalid_config(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(tmp, "[coeffs]\nn_w = 3\n")
            self.assertEqual(main(["coeffs", "-c", path, "-o", tmp]), EXIT_CONFIG)
            self.assertEqual(main(["coeffs", "-c", os.path.join(tmp, "missing.cfg")]), EXIT_CONFIG)

    def test_validate_subset(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = os.path.join(tmp, "out")
            code = main(["validate", "-c", write_config(tmp, SMALL), "-o", out, "-s", "-t", "neighbors"])
            self.assertEqual(code, EXIT_OK)
            columns, rows = read_report(os.path.join(out, "validation.csv"))
            self.assertEqual(columns, ["tag", "check", "value", "limit", "status"])
            self.assertEqual([r[4] for r in rows], ["PASS", "PASS"])


if __name__ == '__main__':
    unittest.main()
