#!/usr/bin/env python3
"""Times each hot kernel under the compiled and pure-numpy backends.

Both implementations are imported directly, so one run compares them
side by side regardless of which backend the package itself selected.

    python3 benchmarks/kernel_bench.py [--repeat 5] [--batch 4]
"""

import argparse
import timeit

import numpy as np

from pdpcrn._kernels import _fallback

try:
    from pdpcrn._kernels import _ext
except ImportError:
    _ext = None


def make_cases(batch):
    rng = np.random.default_rng(0)
    # encoder-sized conv patches: (B, 32, 79, 101) with a (2, 3) kernel
    x = rng.standard_normal((batch, 32, 79, 101))
    cols = _fallback.im2col(x, 2, 3, 1, 1)
    # bottleneck-sized LSTM step: B*F sequences, hidden 80
    z = rng.standard_normal((batch * 51, 4 * 80))
    c_prev = rng.standard_normal((batch * 51, 80))
    _, c_now, gates = _fallback.lstm_step_forward(z, c_prev)
    dh = rng.standard_normal(c_prev.shape)
    # one reflective room's worth of image contributions
    h = np.zeros(16000)
    taps = rng.standard_normal((20000, 81))
    start = rng.integers(0, h.size - 81, 20000)
    amp = rng.standard_normal(20000)
    # one second of 400/200 synthesis frames for the whole array
    frames = rng.standard_normal((16, 79, 400))

    return {
        "im2col": lambda k: k.im2col(x, 2, 3, 1, 1),
        "col2im": lambda k: k.col2im(cols, 32, 79, 101, 2, 3, 1, 1),
        "lstm_step_forward": lambda k: k.lstm_step_forward(z, c_prev),
        "lstm_step_backward": lambda k: k.lstm_step_backward(dh, dh, gates, c_prev, c_now),
        "rir_accumulate": lambda k: k.rir_accumulate(h.copy(), start, amp, taps),
        "overlap_add": lambda k: k.overlap_add(frames, 200),
    }


def best_ms(fn, repeat):
    return 1e3 * min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=4)
    args = ap.parse_args()

    cases = make_cases(args.batch)
    print("| kernel | compiled ms | fallback ms | speedup |")
    print("| --- | ---: | ---: | ---: |")
    for name, call in cases.items():
        slow = best_ms(lambda: call(_fallback), args.repeat)
        if _ext is None:
            print(f"| {name} | n/a | {slow:.3f} | n/a |")
            continue
        fast = best_ms(lambda: call(_ext), args.repeat)
        print(f"| {name} | {fast:.3f} | {slow:.3f} | {slow / fast:.2f}x |")
    if _ext is None:
        print("\ncompiled extension not importable; fallback timings only")


if __name__ == "__main__":
    main()
