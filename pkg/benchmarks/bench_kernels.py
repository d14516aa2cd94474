"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Each workload is timed with both backends (best of ``--repeat``) and the
outputs are checked for exact agreement. A whole closed-loop scenario is
timed as well, with the backend chosen through NAVSTACK_PURE_PYTHON in a
subprocess so that dispatch happens at import as it does in normal use.
"""
import argparse
import math
import os
import subprocess
import sys
import timeit

import numpy as np

from navstack import _kernels_py
from navstack.scan import ScanConfig, TiltMount, beam_directions, table_scene, tilt_steps

try:
    from navstack import _kernels as _compiled
except ImportError:
    _compiled = None


def tilt_scan_workload():
    world = table_scene()
    boxes, cyls = world.arrays()
    cfg = ScanConfig()
    mount = TiltMount()
    dirs = np.vstack([beam_directions(t, cfg.beam_angles(), 0.0) for t in tilt_steps(mount, cfg)])
    origins = np.tile([0.0, 0.0, mount.height_h], (len(dirs), 1))
    return lambda k: k.cast_rays(origins, dirs, boxes, cyls, cfg.max_range)


def sector_workload():
    rng = np.random.default_rng(0)
    points = rng.uniform(-3, 3, size=(2000, 2))
    return lambda k: k.sector_scan(points, 0.1, -0.2, 0.3, 2.0, 0.2, 36, math.pi / 2)


def ekf_workload():
    P0 = np.diag([1e-4, 1e-4, 1e-5]).ravel()
    rows = [(0, 0.01, 4e-4, 0.0, 0.0), (1, 4.5, 4e-4, 2.0, 4.0), (2, 1.1, 1e-4, 2.0, 4.0)]

    def run(k):
        buf = np.array([0.0, 0.0, 0.0, *P0])
        for _ in range(500):
            k.ekf_predict(buf, 5.0, 4.9, 0.02, 0.1, 0.4, 0.01, 1e-4)
            k.ekf_correct(buf, rows, True)
        return buf

    return run


WORKLOADS = {
    "cast_rays (tilt scan, 8100 rays)": tilt_scan_workload,
    "sector_scan (2000 map points)": sector_workload,
    "ekf predict+correct (500 steps)": ekf_workload,
}

SCENARIO_SNIPPET = (
    "import time; from navstack.scenario import load_scenario; from navstack.sim import run_scenario;"
    "s = load_scenario({path!r}); run_scenario(s); t = time.perf_counter();"
    "[run_scenario(s) for _ in range({n})]; print((time.perf_counter() - t) / {n})"
)


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b), equal_nan=True)


def time_scenario(path: str, pure: bool, n: int) -> float:
    env = dict(os.environ, NAVSTACK_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", SCENARIO_SNIPPET.format(path=path, n=n)],
                         env=env, check=True, capture_output=True, text=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scenario", default=os.path.join(os.path.dirname(__file__), "..", "scenarios", "avoidance.json"))
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled extension not built; only the fallback can be timed")
    print(f"{'workload':<36}{'python [ms]':>14}{'cython [ms]':>14}{'speedup':>10}  identical")
    for name, make in WORKLOADS.items():
        fn = make()
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        if _compiled is None:
            print(f"{name:<36}{t_py:>14.2f}{'-':>14}{'-':>10}")
            continue
        t_cy = min(timeit.repeat(lambda: fn(_compiled), number=1, repeat=args.repeat)) * 1e3
        same = _same(fn(_kernels_py), fn(_compiled))
        print(f"{name:<36}{t_py:>14.2f}{t_cy:>14.2f}{t_py / t_cy:>9.1f}x  {same}")
    t_py = time_scenario(args.scenario, True, 1) * 1e3
    line = f"{'full scenario ' + os.path.basename(args.scenario):<36}{t_py:>14.1f}"
    if _compiled is not None:
        t_cy = time_scenario(args.scenario, False, 3) * 1e3
        line += f"{t_cy:>14.1f}{t_py / t_cy:>9.1f}x"
    print(line)


if __name__ == "__main__":
    main()
