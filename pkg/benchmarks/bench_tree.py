"""Compare the compiled and pure-Python tree kernels.

Grows the same trees with both backends, checks that they are identical
and reports the wall time of each.

    python3 benchmarks/bench_tree.py --rows 4500 --features 34 --trees 20
"""

import argparse
import time

import numpy as np

from delaylens.ensembles import _backend
from delaylens.ensembles.tree import grow, presort


def run(backend, X, y, trees, depth, leaf, seed):
    order = presort(X) if backend == "compiled" else None
    out = []
    t0 = time.perf_counter()
    for t in range(trees):
        out.append(grow(X, y, depth, leaf, X.shape[1], seed + t, backend=backend, check=False, order=order))
    return time.perf_counter() - t0, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=4500)
    p.add_argument("--features", type=int, default=34)
    p.add_argument("--trees", type=int, default=10)
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--min-leaf", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    X = rng.normal(size=(args.rows, args.features))
    X[:, ::3] = np.round(X[:, ::3], 1)  # some tied values
    y = (X[:, 0] + 0.5 * X[:, 1] + rng.normal(size=args.rows) > 0).astype(float)

    try:
        _backend.kernels("compiled")
    except ImportError:
        print("compiled core not built; only the Python kernel is available")
        return 1
    t_py, trees_py = run("python", X, y, args.trees, args.depth, args.min_leaf, args.seed)
    t_c, trees_c = run("compiled", X, y, args.trees, args.depth, args.min_leaf, args.seed)
    same = all(a.to_dict() == b.to_dict() for a, b in zip(trees_py, trees_c))
    print(f"data {args.rows}x{args.features}, {args.trees} trees, depth {args.depth}, min leaf {args.min_leaf}")
    print(f"python    {t_py:8.3f} s  ({1e3 * t_py / args.trees:.1f} ms/tree)")
    print(f"compiled  {t_c:8.3f} s  ({1e3 * t_c / args.trees:.1f} ms/tree)")
    print(f"speedup   {t_py / t_c:8.1f}x")
    print(f"identical trees: {same}")
    return 0 if same else 1


if __name__ == "__main__":
    raise SystemExit(main())
