"""Time the compiled integrator against the pure-Python fallback.

Inputs are captured from real trials (one per modality) so both backends
see identical parameter vectors, start states and noise tables.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from pnav import _simcore_py, guidance
from pnav.scenario import NoiseConfig, gen_world, run_experiment

try:
    from pnav import _simcore
except ImportError:
    _simcore = None


def capture_inputs():
    calls = []
    real = guidance._kernels.simulate

    def spy(prm, x0, noise, record_every):
        calls.append((np.array(prm), np.array(x0), np.array(noise)))
        return real(prm, x0, noise, record_every)

    guidance._kernels.simulate = spy
    try:
        cfg = NoiseConfig(seed=0)
        run_experiment(gen_world(cfg), None, 1, cfg)
    finally:
        guidance._kernels.simulate = real
    return calls


def best_time(fn, inputs, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for prm, x0, noise in inputs:
            fn(prm, x0, noise, 0)
        best = min(best, time.perf_counter() - t0)
    return best / len(inputs)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    inputs = capture_inputs()
    t_py = best_time(_simcore_py.simulate, inputs, args.repeat)
    print(f"python  {1e3 * t_py:9.3f} ms/trial")
    if _simcore is None:
        print("compiled backend not built; run `python3 setup.py build_ext --inplace`")
        return
    ref = [_simcore_py.simulate(*i, 0)[0] for i in inputs]
    got = [_simcore.simulate(*i, 0)[0] for i in inputs]
    diff = max(float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) for a, b in zip(ref, got))
    t_cy = best_time(_simcore.simulate, inputs, args.repeat)
    print(f"cython  {1e3 * t_cy:9.3f} ms/trial")
    print(f"speedup {t_py / t_cy:9.1f}x  (max final-state difference {diff:.1e})")


if __name__ == "__main__":
    main()
