"""Time the compiled kernel backend against the pure-numpy reference.

Runs each low-level op on realistic decode-sized inputs for both
backends and prints a table of per-call microseconds plus speedup, then
times one full transducer beam decode per backend (the backend is fixed
at import, so the decode comparison re-executes this script in a
subprocess with ILMFUSE_BACKEND set).

Usage: python3 benchmarks/bench_kernels.py [--repeats N] [--dim D]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np


def bench(fn, args, repeats):
    fn(*args)
    best = float("inf")
    for _ in range(5):
        start = time.perf_counter()
        for _ in range(repeats):
            fn(*args)
        best = min(best, (time.perf_counter() - start) / repeats)
    return best * 1e6


def op_cases(rng, dim):
    logits = rng.normal(0, 2, dim + 1).astype(np.float32)
    values = rng.normal(-4, 2, dim).astype(np.float64)
    w = rng.normal(0, 0.3, (dim, dim)).astype(np.float32)
    x = rng.normal(0, 1, dim).astype(np.float32)
    b = rng.normal(0, 0.3, dim).astype(np.float32)
    w_x = rng.normal(0, 0.3, (4 * dim, dim)).astype(np.float32)
    w_h = rng.normal(0, 0.3, (4 * dim, dim)).astype(np.float32)
    gate_b = rng.normal(0, 0.3, 4 * dim).astype(np.float32)
    h = rng.normal(0, 1, dim).astype(np.float32)
    c = rng.normal(0, 1, dim).astype(np.float32)
    gamma = np.ones(dim, dtype=np.float32)
    beta = np.zeros(dim, dtype=np.float32)
    return {
        "softmax": ("softmax", (logits,)),
        "log_softmax": ("log_softmax", (logits,)),
        "log_sum_exp": ("log_sum_exp", (values,)),
        "affine": ("affine", (w, x, b)),
        "lstm_cell": ("lstm_cell", (x, h, c, w_x, w_h, gate_b)),
        "layer_norm": ("layer_norm", (x, gamma, beta, 1e-5)),
    }


def bench_decode(backend, seconds_budget=20.0):
    env = dict(os.environ, ILMFUSE_BACKEND=backend)
    script = (
        "import sys, time, numpy as np;"
        "sys.path.insert(0, 'tests');"
        "from ilmfuse.beam import FusionModels, beam_search_rnnt;"
        "from ilmfuse.fusion import FusionConfig;"
        "from modelzoo import make_rnnt, make_lm, random_features;"
        "rng = np.random.default_rng(7);"
        "m = make_rnnt(rng, n_tokens=12, enc_hidden=64, pred_hidden=64, enc_proj=32,"
        " pred_proj=32, joint_dim=32, embed_dim=16, feat_dim=8);"
        "models = FusionModels(e2e=m, target_lm=make_lm(rng, vocab=m.vocab));"
        "feats = random_features(rng, 20, feat_dim=8);"
        "cfg = FusionConfig('ilme', 0.3, 0.1);"
        "beam_search_rnnt(feats, models, cfg, beam=8);"
        "start = time.perf_counter();"
        "n = 0\n"
        "while time.perf_counter() - start < 2.0:\n"
        "    beam_search_rnnt(feats, models, cfg, beam=8); n += 1\n"
        "print((time.perf_counter() - start) / n)"
    )
    out = subprocess.run(
        [sys.executable, "-c", script],
        capture_output=True, text=True, timeout=seconds_budget,
        cwd=os.path.dirname(os.path.dirname(os.path.abspath(__file__))), env=env,
    )
    if out.returncode != 0:
        raise RuntimeError(f"decode benchmark failed under {backend}:\n{out.stderr}")
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=2000, help="calls per timing sample")
    parser.add_argument("--dim", type=int, default=64, help="vector dimension for the ops")
    parser.add_argument("--skip-decode", action="store_true",
                        help="only benchmark the raw kernels")
    args = parser.parse_args(argv)

    from ilmfuse import kernels

    backends = kernels.available_backends()
    if "fast" not in backends:
        print("compiled extension unavailable; showing reference backend only")
    rng = np.random.default_rng(0)
    cases = op_cases(rng, args.dim)

    print(f"kernel timings, dim={args.dim}, best of 5 x {args.repeats} calls (us/call)")
    header = f"{'op':<14}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label, (op, op_args) in cases.items():
        times = {name: bench(getattr(mod, op), op_args, args.repeats)
                 for name, mod in backends.items()}
        speedup = times["reference"] / times["fast"] if "fast" in times else float("nan")
        row = f"{label:<14}" + "".join(f"{times[name]:>12.2f}" for name in backends)
        print(row + f"{speedup:>9.1f}x")

    if not args.skip_decode and "fast" in backends:
        print()
        print("full transducer beam decode (T=20, beam 8, ilme), ms/utterance")
        times = {name: bench_decode(name) * 1e3 for name in backends}
        for name, ms in times.items():
            print(f"  {name:<10} {ms:8.2f}")
        print(f"  speedup    {times['reference'] / times['fast']:8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
