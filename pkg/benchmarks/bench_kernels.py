"""Time the compiled and numpy kernel backends on the same inputs.

    python benchmarks/bench_kernels.py [--n 100000] [--repeat 20]

Reports the best-of-N wall time per kernel and one full training run per
backend.  Backends are swapped by rebinding ``hypo.kernels._impl``.
"""

import argparse
import time

import numpy as np

from hypo import kernels
from hypo.core_math import HyperParams
from hypo.datagen import build_world, sample_preferences
from hypo.trainer import TrainConfig, train


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(n, seed=0):
    rng = np.random.default_rng(seed)
    dt, dr = rng.normal(0, 3, n), rng.normal(0, 3, n)
    logits = rng.normal(size=(64, 64))
    p, c = rng.integers(0, 64, n), rng.integers(0, 64, n)
    r = (c + rng.integers(1, 64, n)) % 64
    coef = rng.normal(size=n)

    def scatter(mod):
        mod.scatter_pairs(np.zeros((64, 64)), p, c, r, coef)

    return {
        "objective_terms[dpo]": lambda m: m.objective_terms(kernels.DPO, dt, dr, 0.5, 0.0, None, 0.0),
        "objective_terms[hypo_soft]": lambda m: m.objective_terms(kernels.HYPO_SOFT, dt, dr, 0.5, 0.0, 10.0, 0.0),
        "tabular_margins": lambda m: m.tabular_margins(logits, p, c, r),
        "scatter_pairs": scatter,
    }


def training_run():
    world = build_world(64, 16, 1.0, seed=0)
    data = sample_preferences(world, 10_000, seed=1)
    cfg = TrainConfig(objective="hypo_hard", hp=HyperParams(beta=1.0), peak_lr=0.1, epochs=3, batch_size=128)
    return lambda: train(world.ref_policy.copy(), world.ref_policy, data, cfg)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=100_000, help="records per kernel call")
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the numpy backend is timed")
    cases = kernel_cases(args.n)
    run = training_run()
    print(f"{'case':<28}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    rows = []
    for name, case in cases.items():
        rows.append((name, [best_of(lambda: case(kernels.get_backend(b)), args.repeat) for b in backends]))
    saved = kernels._impl
    try:
        times = []
        for b in backends:
            kernels._impl = kernels.get_backend(b)
            times.append(best_of(run, max(1, args.repeat // 5)))
        rows.append(("train (3 epochs, 10k pairs)", times))
    finally:
        kernels._impl = saved
    for name, times in rows:
        line = f"{name:<28}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) > 1:
            line += f"{times[0] / times[1]:>11.2f}x"
        print(line)


if __name__ == "__main__":
    main()
