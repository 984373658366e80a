"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times the per-iteration kernels on a 20-sensor array and a full noiseless
localization, once per available backend.
"""

import argparse
import time

import numpy as np

from magloc import _pykernels
from magloc import localization as loc
from magloc.field_model import MagnetPose, MagnetSpec, flux_array
from magloc.measurement import ReadingSet
from magloc.sensor_array import paper_layouts

try:
    from magloc import _ckernels
except ImportError:
    _ckernels = None


def best_of(fn, repeat, number):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        times.append((time.perf_counter() - t0) / number)
    return min(times)


def bench(kern, repeat):
    spec = MagnetSpec()
    bt = spec.strength
    array = paper_layouts(5, "four_by_m")
    s = array.sensors
    truth = MagnetPose.normalized([0.01, -0.02, 0.06], [0.3, 0.2, 1.0])
    readings = flux_array(truth, spec, s)
    pos, h = np.array([0.0, 0.0, 0.05]), np.array([0.0, 0.0, 1.0])
    dh = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    out = {
        "flux": best_of(lambda: kern.flux(s, pos, h, bt, 1e-6), repeat, 2000),
        "flux_jacobian": best_of(lambda: kern.flux_jacobian(s, pos, h, bt, 1e-6), repeat, 2000),
        "normal_equations": best_of(lambda: kern.normal_equations(s, readings, pos, h, dh, bt, 1e-6), repeat, 2000),
    }
    saved = loc.kernels
    loc.kernels = kern
    try:
        rs = ReadingSet(readings)
        out["localize"] = best_of(lambda: loc.localize(rs, array, spec), repeat, 20)
    finally:
        loc.kernels = saved
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    results = {name: bench(k, args.repeat) for name, k in backends}
    names = list(results["python"])
    print(f"{'kernel':<18}" + "".join(f"{n:>14}" for n, _ in backends) + ("     speedup" if _ckernels else ""))
    for k in names:
        row = f"{k:<18}" + "".join(f"{results[n][k] * 1e6:>11.1f} us" for n, _ in backends)
        if _ckernels:
            row += f"{results['python'][k] / results['cython'][k]:>11.1f}x"
        print(row)
    if not _ckernels:
        print("compiled extension not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
