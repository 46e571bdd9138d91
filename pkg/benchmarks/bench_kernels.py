"""Benchmark the compiled kernels against the pure NumPy fallback.

Times a full training gradient step (three stacked family forwards, the
coefficient contraction, and the three backward passes) for a few model and
batch sizes, using each available backend on identical inputs.

Run:  python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

import mnolearn.mno as mno_mod
from mnolearn.backend import available_backends, get_backend
from mnolearn.mno import MnoSpec, init_mno_params, stack_family
from mnolearn.relu_net import NetClassSpec


def build_case(rng, P, H, N, width, batch, d_alpha=1, d_u=9, d_x=1):
    spec = MnoSpec(
        P, H, N,
        NetClassSpec(d_alpha, 1, 2, width, 10_000, 4.0, 1.0),
        NetClassSpec(d_u, 1, 2, max(width, d_u), 10_000, 4.0, 1.0),
        NetClassSpec(d_x, 1, 2, width, 10_000, 4.0, 1.0),
        2.0, 0.5,
    )
    params = init_mno_params(spec, rng)
    data = (
        np.ascontiguousarray(rng.uniform(0.5, 1.0, (batch, d_alpha))),
        np.ascontiguousarray(rng.uniform(-1, 1, (batch, d_u))),
        np.ascontiguousarray(rng.uniform(0, 0.5, (batch, d_x))),
        rng.uniform(-0.1, 0.1, batch),
    )
    stacks = (
        stack_family(params.l_nets),
        stack_family(params.b_nets),
        stack_family(params.tau_nets),
    )
    return params.theta, stacks, spec.clip_a, data


def time_backend(kernels, theta, stacks, clip_a, data, repeats):
    orig = mno_mod.kernels
    mno_mod.kernels = kernels
    try:
        # warm up once, then time
        mno_mod.batch_loss_grad_stacked(theta, *stacks, clip_a, *data)
        started = time.perf_counter()
        for _ in range(repeats):
            mno_mod.batch_loss_grad_stacked(theta, *stacks, clip_a, *data)
        return (time.perf_counter() - started) / repeats
    finally:
        mno_mod.kernels = orig


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    cases = [
        ("P=H=N=2, width 4, batch 32", build_case(rng, 2, 2, 2, 4, 32)),
        ("P=H=N=2, width 4, batch 2048", build_case(rng, 2, 2, 2, 4, 2048)),
        ("P=H=N=4, width 8, batch 256", build_case(rng, 4, 4, 4, 8, 256)),
    ]
    names = available_backends()
    print(f"available backends: {', '.join(names)}")
    header = f"{'case':<32}" + "".join(f"{n:>14}" for n in names)
    if len(names) > 1:
        header += f"{'speedup':>10}"
    print(header)
    for label, case in cases:
        times = [time_backend(get_backend(n), *case, args.repeats)
                 for n in names]
        row = f"{label:<32}" + "".join(f"{t * 1e6:>11.0f} us" for t in times)
        if len(times) > 1:
            row += f"{times[0] / times[-1]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
