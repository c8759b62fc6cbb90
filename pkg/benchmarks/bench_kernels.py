"""Numba kernels versus the pure-numpy fallback.

Times every hot kernel on graph-sized inputs (default: a 1600-residue
chain with 30 neighbours, width 32, 4 heads), checks that both backends
agree, then times a full one-shot forward pass under each backend. The
forward pass runs in a subprocess per backend because the backend is
chosen once at import time from ``INVFOLD_NO_JIT``.

    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --nodes 400 --reps 20 --json out.json
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from invfold import _kernels


def _time(fn, reps):
    fn()  # compile / warm caches
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def kernel_cases(n, k, d, heads, dtype, rng):
    m = n * k
    seg = np.repeat(np.arange(n), k)
    src = rng.integers(0, n, size=m)
    vals = rng.normal(size=(m, d)).astype(dtype)
    logits = rng.normal(size=(m, heads)).astype(dtype)
    grad = rng.normal(size=(m, heads)).astype(dtype)
    agg_grad = rng.normal(size=(n, d)).astype(dtype)
    rows = rng.normal(size=(n, d)).astype(dtype)
    gain, bias = np.ones(d, dtype=dtype), np.zeros(d, dtype=dtype)
    soft = _kernels.NUMPY_KERNELS.segment_softmax(logits, seg, n)

    def gather(kern):
        out = np.zeros((m, d), dtype=dtype)
        kern.gather_add(out, rows, src)
        return out

    return {
        "gelu": lambda kern: kern.gelu(vals)[0],
        "gather_add": gather,
        "layer_norm": lambda kern: kern.layer_norm(vals, gain, bias, 1e-5)[0],
        "segment_sum": lambda kern: kern.segment_sum(vals, seg, n),
        "segment_max": lambda kern: kern.segment_max(vals, seg, n),
        "segment_softmax": lambda kern: kern.segment_softmax(logits, seg, n),
        "segment_softmax_backward": lambda kern: kern.segment_softmax_backward(soft, grad, seg, n),
        "segment_weighted_sum": lambda kern: kern.segment_weighted_sum(soft, vals, seg, n),
        "segment_weighted_sum_backward": lambda kern: np.concatenate(
            [a.ravel() for a in kern.segment_weighted_sum_backward(soft, vals, agg_grad, seg)]
        ),
    }


def _forward_timing(n, d, layers, reps, precision, no_jit):
    code = (
        "import time, numpy as np\n"
        "from invfold.autodiff import set_precision\n"
        "from invfold import _kernels\n"
        "from invfold.data import synth_protein\n"
        "from invfold.graph import featurize\n"
        "from invfold.pignn import ModelConfig, forward, init_params\n"
        f"set_precision({precision!r})\n"
        f"p = init_params(ModelConfig(d={d}, layers={layers}, dropout=0.0), seed=0, requires_grad=False)\n"
        f"g = featurize(synth_protein(0, {n}), p.config.features, p.virtual.value)\n"
        "forward(g, p)\n"
        "ts = []\n"
        f"for _ in range({reps}):\n"
        "    t0 = time.perf_counter(); forward(g, p); ts.append(time.perf_counter() - t0)\n"
        "print(_kernels.BACKEND, float(np.median(ts)))\n"
    )
    env = dict(os.environ)
    env.pop("INVFOLD_NO_JIT", None)
    if no_jit:
        env["INVFOLD_NO_JIT"] = "1"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    backend, seconds = out.stdout.split()
    return backend, float(seconds)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=1600)
    ap.add_argument("--k", type=int, default=30)
    ap.add_argument("--d", type=int, default=32)
    ap.add_argument("--heads", type=int, default=4)
    ap.add_argument("--layers", type=int, default=5, help="depth for the forward-pass comparison")
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--precision", choices=("f32", "f64"), default="f32")
    ap.add_argument("--skip-forward", action="store_true")
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    if _kernels.NUMBA_KERNELS is None:
        sys.exit("numba is not installed; nothing to compare")
    dtype = np.float32 if args.precision == "f32" else np.float64
    tol = 1e-4 if dtype == np.float32 else 1e-10
    rng = np.random.default_rng(0)
    cases = kernel_cases(args.nodes, args.k, args.d, args.heads, dtype, rng)

    print(f"kernels: n={args.nodes} m={args.nodes * args.k} d={args.d} heads={args.heads} {args.precision}")
    print(f"{'kernel':<32}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}  agree")
    rows = []
    for name, fn in cases.items():
        ref, got = fn(_kernels.NUMPY_KERNELS), fn(_kernels.NUMBA_KERNELS)
        agree = bool(np.allclose(ref, got, atol=tol, rtol=tol))
        t_np = _time(lambda: fn(_kernels.NUMPY_KERNELS), args.reps)
        t_nb = _time(lambda: fn(_kernels.NUMBA_KERNELS), args.reps)
        rows.append({"kernel": name, "numpy": t_np, "numba": t_nb, "agree": agree})
        print(f"{name:<32}{t_np * 1e3:>10.3f}{t_nb * 1e3:>10.3f}{t_np / t_nb:>8.2f}x  {'yes' if agree else 'NO'}")

    result = {"args": vars(args), "kernels": rows}
    if not args.skip_forward:
        timings = {}
        for no_jit in (True, False):
            backend, seconds = _forward_timing(args.nodes, args.d, args.layers, args.reps, args.precision, no_jit)
            timings[backend] = seconds
        print(f"\nforward pass, {args.layers} layers: numpy {timings['numpy'] * 1e3:.1f} ms, "
              f"numba {timings['numba'] * 1e3:.1f} ms ({timings['numpy'] / timings['numba']:.2f}x)")
        result["forward"] = timings

    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2)
    if not all(r["agree"] for r in rows):
        sys.exit("backends disagree")


if __name__ == "__main__":
    main()
