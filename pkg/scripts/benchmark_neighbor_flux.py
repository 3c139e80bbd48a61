"""
This Benchmark times the neighbor flux of the particle model, cell list against brute force, for growing particle
counts at constant density. The thread pool variant runs the cell list with the given number of threads.
"""
import argparse
import datetime
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from sohr_py.ibm import neighbor_flux_all

particle_counts = [1000, 4000, 16000, 64000]
density = 10.0
retries = 3

if __name__ == "__main__":
    parser = argparse.ArgumentParser(
        description='Benchmark for the neighbor flux of sohr-py; cell list against brute force')

    parser.add_argument("-n", "--particles",
                        help="List of particle counts to use",
                        nargs="+", type=int, default=particle_counts, required=False)
    parser.add_argument("-d", "--density", type=float, default=density,
                        help="Particles per unit area, the box grows with the particle count")
    parser.add_argument("-a", "--attempts",
                        help="Number of timed calls per particle count and method",
                        type=int, default=retries)
    parser.add_argument("-p", "--threads", type=int, default=0,
                        help="Threads of the pooled cell list run, 0 skips it")
    parser.add_argument("-b", "--brute_limit", type=int, default=16000,
                        help="Largest particle count timed with brute force")
    parser.add_argument("-t", "--target",
                        help="Target File, where the statistics of the benchmark are stored, "
                             "defaults to {PWD}/benchmark_neighbor_flux_YYYY-MM-DD_HH-MM-SS.json",
                        required=False)

    args = parser.parse_args()

    if args.attempts < 1:
        raise ValueError("Attempts must be greater than 0")

    if args.density <= 0:
        raise ValueError("Density must be greater than 0")

    dts = datetime.datetime.now().strftime('%Y-%m-%d_%H-%M-%S')
    if args.target is None:
        target = os.path.join(os.getcwd(), f"benchmark_neighbor_flux_{dts}.json")
    else:
        target = args.target

    stats = {"grid": {}, "brute": {}, "pooled": {}}
    rng = np.random.default_rng(0)
    pool = ThreadPoolExecutor(args.threads) if args.threads > 0 else None

    for n in args.particles:
        box = float(np.sqrt(n / args.density))
        pos = rng.uniform(0.0, box, size=(n, 2))
        theta = rng.uniform(0.0, 2 * np.pi, size=n)

        runs = [("grid", "grid", None)]
        if n <= args.brute_limit:
            runs.append(("brute", "brute", None))
        if pool is not None:
            runs.append(("pooled", "grid", pool))

        for key, method, executor in runs:
            stats[key][n] = []
            for attempt in range(args.attempts):
                print(f"Running {key} with {n} particles, attempt {attempt + 1} of {args.attempts}")
                start = time.time()
                neighbor_flux_all(pos, theta, box, 1.0, method=method, pool=executor)
                stats[key][n].append(time.time() - start)

    if pool is not None:
        pool.shutdown()

    with open(target, "w") as f:
        json.dump(stats, f, indent=4)

    print(f"Stats written to {target}")
