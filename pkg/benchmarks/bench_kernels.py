"""Time the compiled CRF kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--batch 50] [--length 30] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from causalgcn import _crf_py
from causalgcn.tagging import DEFAULT_TAGSET

try:
    from causalgcn import _crf_ext
except ImportError:  # extension not built
    _crf_ext = None


def _best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=50)
    ap.add_argument("--length", type=int, default=30)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    k = DEFAULT_TAGSET.size
    rng = np.random.default_rng(0)
    em = rng.normal(size=(args.batch, args.length, k))
    lengths = rng.integers(args.length // 2, args.length + 1, size=args.batch)
    trans = rng.normal(size=(k + 2, k + 2))
    mask = DEFAULT_TAGSET.transition_mask()

    backends = {"numpy": _crf_py}
    if _crf_ext is not None:
        backends["cython"] = _crf_ext
    else:
        print("compiled extension not available; timing numpy only")

    print(f"batch={args.batch} length<={args.length} tags={k}")
    print(f"{'kernel':<22}{'backend':<10}{'ms/call':>10}")
    results = {}
    for name, mod in backends.items():
        fb = _best(lambda: mod.crf_forward_backward(em, lengths, trans, mask), args.repeat, 3)
        vit = _best(lambda: [mod.viterbi(em[b, :lengths[b]], trans, mask) for b in range(args.batch)],
                    args.repeat, 3)
        results[name] = (fb, vit)
        print(f"{'forward-backward':<22}{name:<10}{fb * 1e3:>10.3f}")
        print(f"{'viterbi (whole batch)':<22}{name:<10}{vit * 1e3:>10.3f}")
    if len(results) == 2:
        (pf, pv), (cf, cv) = results["numpy"], results["cython"]
        print(f"speedup: forward-backward x{pf / cf:.1f}, viterbi x{pv / cv:.1f}")


if __name__ == "__main__":
    main()
