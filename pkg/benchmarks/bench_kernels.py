"""Time the hot kernels under both backends.

Each backend runs in a child process because ``CORPIPE_KERNELS`` is read at
import time.  Results of both backends are checked for equality.

    python3 benchmarks/bench_kernels.py --repeat 5
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _workloads(seed):
    rng = np.random.default_rng(seed)
    pushes = rng.integers(0, 3, size=20000).astype(np.int64)
    pops = rng.integers(0, 3, size=20000).astype(np.int64)
    scores = rng.normal(size=(400, 400))
    antecedents = np.array([rng.integers(0, i + 1) for i in range(20000)], dtype=np.int64)
    key = rng.integers(-1, 50, size=50000).astype(np.int64)
    resp = rng.integers(-1, 60, size=50000).astype(np.int64)
    weights = rng.random((120, 150))
    return pushes, pops, scores, antecedents, key, resp, weights


def child(repeat, seed):
    from corpipe import _kernels as k

    pushes, pops, scores, antecedents, key, resp, weights = _workloads(seed)
    cases = {
        "decode_actions": lambda: k.decode_actions(pushes, pops),
        "causal_argmax": lambda: k.causal_argmax(scores),
        "union_find_labels": lambda: k.union_find_labels(antecedents),
        "contingency": lambda: k.contingency(key, resp, 50, 60),
        "max_weight_assignment": lambda: k.max_weight_assignment(weights),
    }
    timings, digests = {}, {}
    for name, fn in cases.items():
        out = fn()  # warm-up (and JIT compilation)
        best = float("inf")
        for _ in range(repeat):
            start = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - start)
        timings[name] = best
        parts = out if isinstance(out, tuple) else (out,)
        digests[name] = [np.asarray(p).tolist() if np.ndim(p) == 0 else float(np.asarray(p, dtype=float).sum())
                         for p in parts]
    print(json.dumps({"backend": k.BACKEND, "timings": timings, "digests": digests}))


def run_backend(backend, repeat, seed):
    env = dict(os.environ, CORPIPE_KERNELS=backend)
    out = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(repeat), "--seed", str(seed)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args(argv)
    if args.child:
        child(args.repeat, args.seed)
        return 0
    results = {b: run_backend(b, args.repeat, args.seed) for b in ("numpy", "numba")}
    if results["numba"]["backend"] != "numba":
        print("numba is not installed; only the numpy backend ran")
    print(f"{'kernel':<24}{'numpy s':>12}{'numba s':>12}{'speedup':>10}  same")
    ok = True
    for name, t_np in results["numpy"]["timings"].items():
        t_nb = results["numba"]["timings"][name]
        same = results["numpy"]["digests"][name] == results["numba"]["digests"][name]
        ok &= same
        print(f"{name:<24}{t_np:12.5f}{t_nb:12.5f}{t_np / t_nb:10.1f}  {'yes' if same else 'NO'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
