"""Compare the compiled FK/Jacobian kernel against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--iters N] [--seed S]
"""

import argparse
import importlib.resources
import time

import numpy as np

from real2sim._core import pure
from real2sim.kinematics import KinematicChain

try:
    from real2sim._core import kernels
except ImportError:
    kernels = None


def bench(fn, chain, qs):
    args = (chain.axes, chain.origins, chain.rot_offsets, chain.tool_origin, chain.tool_rot)
    for q in qs[:50]:  # warmup
        fn(*args, q)
    t0 = time.perf_counter()
    for q in qs:
        fn(*args, q)
    return (time.perf_counter() - t0) / len(qs)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--iters", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    chain_file = importlib.resources.files("real2sim") / "assets/chains/default_7dof.yaml"
    chain = KinematicChain.from_yaml(str(chain_file))
    rng = np.random.default_rng(args.seed)
    qs = rng.uniform(-np.pi, np.pi, (args.iters, chain.dof))

    t_pure = bench(pure.chain_fk_jac, chain, qs)
    print(f"pure     : {t_pure * 1e6:8.2f} us/call  ({args.iters} calls)")
    if kernels is None:
        print("compiled : not built")
        return

    t_comp = bench(kernels.chain_fk_jac, chain, qs)
    print(f"compiled : {t_comp * 1e6:8.2f} us/call  ({args.iters} calls)")
    print(f"speedup  : {t_pure / t_comp:8.2f}x")

    # self-check: both backends must agree to float precision
    kernel_args = (chain.axes, chain.origins, chain.rot_offsets, chain.tool_origin, chain.tool_rot)
    worst = 0.0
    for q in qs[:200]:
        pa, qa, ja = pure.chain_fk_jac(*kernel_args, q)
        pb, qb, jb = kernels.chain_fk_jac(*kernel_args, q)
        worst = max(worst, np.max(np.abs(pa - pb)), np.max(np.abs(qa - qb)),
                    np.max(np.abs(ja - jb)))
    print(f"parity   : {worst:.2e} max abs difference over 200 configs")


if __name__ == "__main__":
    main()
