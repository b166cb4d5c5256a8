"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Full-forward timings run each backend in a fresh interpreter, since the
backend is fixed at import time.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from maskedit import _kernels_py

try:
    from maskedit import _kernels as compiled
except ImportError:
    compiled = None

FORWARD = """
import timeit, numpy as np, maskedit
from maskedit.denoiser import AttentionMode, DenoiserModel
from maskedit.conditioning import embed_text
m = DenoiserModel.from_seed(42)
x = np.random.default_rng(0).standard_normal((5, 9, 8, 8)).astype(np.float32)
text = embed_text("a red ball")
mode = AttentionMode.EXTENDED_ACROSS_BATCH
m.forward(x, 499, text, mode)
best = min(timeit.repeat(lambda: m.forward(x, 499, text, mode), number=1, repeat={repeat}))
print(maskedit.BACKEND, best)
"""


def kernel_cases(rng):
    x = rng.standard_normal((5, 32, 8, 8)).astype(np.float32)
    w = rng.standard_normal((64, 32, 3, 3)).astype(np.float32)
    b = np.zeros(64, np.float32)
    g = rng.standard_normal((5, 64, 16, 16)).astype(np.float32)
    ones, zeros = np.ones(64, np.float32), np.zeros(64, np.float32)
    s = rng.standard_normal((320, 320)).astype(np.float32)
    return {
        "conv2d_3x3_batch (5x32x8x8 -> 64)": lambda k: k.conv2d_3x3_batch(x, w, b),
        "group_norm_batch (5x64x16x16, 8 groups)": lambda k: k.group_norm_batch(g, 8, ones, zeros, 1e-5),
        "softmax_rows (320x320)": lambda k: k.softmax_rows(s),
    }


def best_of(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def forward_time(pure, repeat):
    env = dict(os.environ)
    env.pop("MASKEDIT_PURE_PYTHON", None)
    if pure:
        env["MASKEDIT_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", FORWARD.format(repeat=repeat)], env=env,
                         capture_output=True, text=True, check=True).stdout.split()
    return out[0], float(out[1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if compiled is None:
        print("compiled extension not built; only the fallback is available", file=sys.stderr)

    rows = []
    for name, case in kernel_cases(np.random.default_rng(0)).items():
        py = best_of(lambda: case(_kernels_py), args.repeat)
        cy = best_of(lambda: case(compiled), args.repeat) if compiled else float("nan")
        rows.append((name, py, cy))
    _, py = forward_time(True, args.repeat)
    cy = forward_time(False, args.repeat)[1] if compiled else float("nan")
    rows.append(("denoiser forward (5 frames, 8x8 latent, extended)", py, cy))

    print(f"{'kernel':<52}{'python ms':>11}{'cython ms':>11}{'speedup':>9}")
    for name, py, cy in rows:
        print(f"{name:<52}{py * 1e3:>11.3f}{cy * 1e3:>11.3f}{py / cy:>8.2f}x")


if __name__ == "__main__":
    main()
