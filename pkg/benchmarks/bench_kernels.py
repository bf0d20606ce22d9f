"""Time the recurrent kernels under the numpy and compiled backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--dtype float32]

Prints one row per (kernel, shape, backend) with the best-of-N time and the
speedup of the compiled backend over numpy.
"""
import argparse
import timeit

import numpy as np

from nmtselect import kernels

SHAPES = [  # (T, B, H)
    (10, 32, 32),
    (30, 64, 64),
    (50, 64, 256),
]


def _inputs(T, B, H, gates, dtype, rng):
    zx = rng.standard_normal((T, B, gates * H)).astype(dtype)
    w_h = (0.1 * rng.standard_normal((H, gates * H))).astype(dtype)
    h0 = rng.standard_normal((B, H)).astype(dtype)
    c0 = rng.standard_normal((B, H)).astype(dtype)
    lengths = rng.integers(1, T + 1, size=B)
    mask = (np.arange(T)[:, None] < lengths[None, :]).astype(np.uint8)
    dhs = rng.standard_normal((T, B, H)).astype(dtype)
    return zx, w_h, h0, c0, mask, dhs


def _lstm(mod, zx, w_h, h0, c0, mask, dhs):
    acts, cs, hs = mod.lstm_forward(zx, w_h, h0, c0, mask, False)
    mod.lstm_backward(acts, cs, hs, w_h, h0, c0, mask, dhs, False)


def _gru(mod, zx, w_h, h0, c0, mask, dhs):
    acts, zh, hs = mod.gru_forward(zx, w_h, h0, mask, False)
    mod.gru_backward(acts, zh, hs, w_h, h0, mask, dhs, False)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--dtype", default="float32", choices=["float32", "float64"])
    args = ap.parse_args()

    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}  dtype={args.dtype}")
    print(f"{'kernel':<6} {'T,B,H':<12} " + " ".join(f"{b + ' ms':>12}" for b in backends)
          + ("   speedup" if len(backends) > 1 else ""))
    rng = np.random.default_rng(0)
    for name, fn, gates in (("lstm", _lstm, 4), ("gru", _gru, 3)):
        for T, B, H in SHAPES:
            data = _inputs(T, B, H, gates, args.dtype, rng)
            times = []
            for b in backends:
                mod = kernels.get_backend(b)
                fn(mod, *data)  # warm-up
                number = max(1, int(2000 // (T * B)))
                best = min(timeit.repeat(lambda: fn(mod, *data), number=number,
                                         repeat=args.repeat)) / number
                times.append(best * 1e3)
            row = f"{name:<6} {f'{T},{B},{H}':<12} " + " ".join(f"{t:12.3f}" for t in times)
            if len(times) > 1:
                row += f"   {times[0] / times[1]:7.2f}x"
            print(row)


if __name__ == "__main__":
    main()
