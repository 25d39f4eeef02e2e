"""Compiled kernels versus the numpy fallback.

Both implementations are imported directly, so one process times both
regardless of ``PCVIT_PURE_PYTHON``. Every case also checks that the two
outputs agree before timing them.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""

import argparse
import json
import sys
import timeit

import numpy as np

from pcvit import _kernels_py

try:
    from pcvit import _kernels
except ImportError:
    sys.exit("compiled extension missing; run `python setup.py build_ext --inplace` first")


def _cases(rng):
    gray = rng.integers(0, 256, (496, 248), dtype=np.uint8)
    x = rng.normal(size=(197 * 8, 768)).astype(np.float32)
    gamma = rng.normal(size=768).astype(np.float32)
    beta = rng.normal(size=768).astype(np.float32)
    flat = rng.normal(size=197 * 3072).astype(np.float32)
    logits = rng.normal(size=(8 * 12 * 197, 197)).astype(np.float32)
    return {
        "resize 496x248 -> 224x224": lambda k: k.resize_bilinear(gray, 224, 224),
        "layer_norm fwd [1576, 768]": lambda k: k.layer_norm_forward(x, gamma, beta, 1e-6),
        "gelu fwd [605184]": lambda k: k.gelu_forward(flat),
        "gelu bwd [605184]": lambda k: k.gelu_backward(flat, flat),
        "softmax rows [18912, 197]": lambda k: k.softmax_rows(logits),
    }


def _agree(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(np.asarray(u, np.float64), np.asarray(v, np.float64), rtol=1e-5, atol=1e-6)
               for u, v in zip(a, b))


def run(repeat: int = 5) -> list[dict]:
    rows = []
    for name, call in _cases(np.random.default_rng(0)).items():
        if not _agree(call(_kernels), call(_kernels_py)):
            raise SystemExit(f"{name}: compiled and fallback outputs differ")
        best = {}
        for label, mod in (("cython", _kernels), ("numpy", _kernels_py)):
            best[label] = min(timeit.repeat(lambda: call(mod), number=1, repeat=repeat))
        rows.append({"kernel": name, **best, "speedup": best["numpy"] / best["cython"]})
    return rows


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", help="also write the rows as JSON")
    args = parser.parse_args(argv)

    rows = run(args.repeat)
    print(f"{'kernel':32s} {'cython ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for r in rows:
        print(f"{r['kernel']:32s} {1e3 * r['cython']:10.2f} {1e3 * r['numpy']:10.2f} {r['speedup']:7.2f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
