"""Compiled vs numpy kernels: mixture score, batched leapfrog and pairwise distances.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-``repeat`` wall time per kernel and backend plus the
speed-up, and checks that both backends agree on the inputs used.
"""

import argparse
import timeit

import numpy as np

from hamflow import kernels
from hamflow.core import make_rng


def cases():
    rng = make_rng(0)
    k, d = 8, 2
    logw = np.log(np.full(k, 1.0 / k))
    means = rng.normal(0, 2, size=(k, d))
    var = rng.uniform(0.3, 1.5, size=k)
    x = rng.normal(0, 2, size=(20000, d))
    v = rng.normal(size=(20000, d))
    h = np.full(20000, 0.05)
    a, b = rng.normal(size=(2000, d)), rng.normal(size=(2000, d))
    return {
        "gmm_logpdf_score (n=20000, k=8)": ("gmm_logpdf_score", (x, logw, means, var)),
        "leapfrog_gmm (n=20000, 5 steps)": ("leapfrog_gmm", (x, v, h, 5, logw, means, var, 1e6)),
        "mean_pairwise_distance (2000x2000)": ("mean_pairwise_distance", (a, b)),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the numpy backend is available")
    print(f"{'kernel':38s} " + " ".join(f"{name:>10s}" for name in sorted(backends)) + "   speed-up")
    for label, (fn, args_) in cases().items():
        times, outs = {}, {}
        for name in sorted(backends):
            f = getattr(backends[name], fn)
            outs[name] = f(*args_)
            times[name] = min(timeit.repeat(lambda: f(*args_), number=1, repeat=args.repeat))
        if len(outs) == 2:
            ref, got = outs["python"], outs["compiled"]
            ref = ref if isinstance(ref, tuple) else (ref,)
            got = got if isinstance(got, tuple) else (got,)
            for r, g in zip(ref, got):
                np.testing.assert_allclose(g, r, rtol=1e-10, atol=1e-12)
        speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{label:38s} " + " ".join(f"{times[n] * 1e3:8.2f}ms" for n in sorted(times)) + f"   {speed:6.1f}x")


if __name__ == "__main__":
    main()
