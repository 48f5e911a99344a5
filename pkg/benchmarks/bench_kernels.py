"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--frames 60 200]

Prints one row per (kernel, size): best-of-repeat seconds per call for each
backend and the speedup. Outputs are compared before timing.
"""
import argparse
import timeit

import numpy as np

from dimnet_toy.kernels import backends


def ctc_case(rng, T, V=14, label_len=None):
    logits = rng.normal(size=(T, V))
    lp = logits - np.log(np.exp(logits).sum(1, keepdims=True))
    n = label_len or max(1, T // 4)
    return lp, rng.integers(1, V, size=n)


def align_case(rng, n, vocab=40):
    ref = rng.integers(0, vocab, size=n)
    hyp = ref.copy()
    flips = rng.random(n) < 0.2
    hyp[flips] = rng.integers(0, vocab, size=int(flips.sum()))
    return ref, hyp[rng.random(n) > 0.05]


def cases(rng, frames):
    for T in frames:
        lp, y = ctc_case(rng, T)
        yield "ctc_logprob", T, (lp, y, 0)
        yield "ctc_forward_backward", T, (lp, y, 0)
        ref, hyp = align_case(rng, T)
        yield "edit_align", T, (ref, hyp)


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-9, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--frames", type=int, nargs="+", default=[60, 200])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    found = backends()
    if "cython" not in found:
        print("compiled extension not built; only the python backend is available")
    names = sorted(found)
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':22s} {'size':>5s} " + " ".join(f"{n:>12s}" for n in names) + "  speedup")
    for kernel, size, call_args in cases(rng, args.frames):
        funcs = {n: getattr(found[n], kernel) for n in names}
        outs = {n: f(*call_args) for n, f in funcs.items()}
        ref = outs[names[0]]
        if not all(same(ref, o) for o in outs.values()):
            raise SystemExit(f"backends disagree on {kernel} size {size}")
        secs = {}
        for n, f in funcs.items():
            number = max(1, int(0.2 / max(timeit.timeit(lambda: f(*call_args), number=1), 1e-6)))
            best = min(timeit.repeat(lambda: f(*call_args), number=number, repeat=args.repeat))
            secs[n] = best / number
        speed = f"{secs['python'] / secs['cython']:7.1f}x" if "cython" in secs else ""
        print(f"{kernel:22s} {size:5d} " + " ".join(f"{secs[n]:12.2e}" for n in names)
              + f"  {speed}")


if __name__ == "__main__":
    main()
