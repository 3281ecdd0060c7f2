"""Compare the compiled and pure-numpy kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from sslse import _kernels_ref, kernels


def bench(label, fn, repeat):
    fn()  # warm up
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    print(f"{label:<42} {min(times) * 1e3:8.2f} ms")
    return min(times)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    print(f"active backend: {kernels.BACKEND}\n")

    # overlap-add: ISTFT-sized workload (10 s of audio, 400/160 framing)
    frames = np.ascontiguousarray(rng.standard_normal((1000, 400)))
    n_out = 999 * 160 + 400
    t_active = bench("overlap_add (active backend)",
                     lambda: kernels.overlap_add(frames, 160, n_out), args.repeat)
    t_ref = bench("overlap_add (numpy reference)",
                  lambda: _kernels_ref.overlap_add(frames, 160, n_out), args.repeat)
    print(f"{'speedup':<42} {t_ref / t_active:8.2f}x\n")

    # polyphase resampling: 10 s of 16 kHz audio to 10 kHz (up=5, down=8)
    x = rng.standard_normal(160000)
    taps = np.ascontiguousarray(rng.standard_normal((5, 64)))
    x_padded = np.ascontiguousarray(np.pad(x, (31, 33)))
    n_out = round(len(x) * 5 / 8)
    t_active = bench("polyphase_resample (active backend)",
                     lambda: kernels.polyphase_resample(x_padded, taps, 5, 8, n_out), args.repeat)
    t_ref = bench("polyphase_resample (numpy reference)",
                  lambda: _kernels_ref.polyphase_resample(x_padded, taps, 5, 8, n_out), args.repeat)
    print(f"{'speedup':<42} {t_ref / t_active:8.2f}x")


if __name__ == "__main__":
    main()
