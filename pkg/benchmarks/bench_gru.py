"""Time the compiled GRU kernels against the numpy fallback.

    python3 benchmarks/bench_gru.py [--repeat 20]

Shapes cover a training minibatch at desk and large model sizes and the
many-short-rows case of rollout scoring. Both backends are checked to agree
before timing.
"""
import argparse
import time

import numpy as np

from irecgan.nnet.kernels import get_backend

SHAPES = [
    ("desk minibatch", 64, 40, 32),
    ("rollout rows", 512, 12, 32),
    ("large minibatch", 64, 40, 512),
]


def inputs(B, T, H, rng):
    xw = rng.normal(0, 0.5, (B, T, 3 * H))
    lengths = rng.integers(1, T + 1, B)
    mask = (np.arange(T)[None, :] < lengths[:, None]).astype(float)
    h0 = np.zeros((B, H))
    U = rng.uniform(-0.08, 0.08, (H, 3 * H))
    dhs = rng.normal(size=(B, T, H))
    return xw, mask, h0, U, dhs


def run(backend, args):
    fwd, bwd = backend
    xw, mask, h0, U, dhs = args
    hs, zs, rs, ns = fwd(xw, mask, h0, U)
    return hs, bwd(mask, h0, U, hs, zs, rs, ns, dhs)


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    py = get_backend("python")
    try:
        ext = get_backend("compiled")
    except ImportError:
        print("compiled extension not built; only the numpy fallback is available")
        return
    rng = np.random.default_rng(0)
    print(f"{'case':<16} {'B':>4} {'T':>3} {'H':>4} {'numpy ms':>9} {'compiled ms':>12} {'speedup':>8}")
    for name, B, T, H in SHAPES:
        data = inputs(B, T, H, rng)
        a_hs, a_grads = run(py, data)
        b_hs, b_grads = run(ext, data)
        err = max(np.max(np.abs(a_hs - b_hs)),
                  *(np.max(np.abs(x - y)) for x, y in zip(a_grads, b_grads)))
        if err > 1e-10:
            raise SystemExit(f"{name}: backends disagree by {err:.2e}")
        repeat = max(3, args.repeat // (4 if H > 128 else 1))
        t_py = best_time(lambda: run(py, data), repeat)
        t_ext = best_time(lambda: run(ext, data), repeat)
        print(f"{name:<16} {B:>4} {T:>3} {H:>4} {t_py * 1e3:>9.2f} {t_ext * 1e3:>12.2f} "
              f"{t_py / t_ext:>7.1f}x")


if __name__ == "__main__":
    main()
