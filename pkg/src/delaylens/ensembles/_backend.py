"""Select the tree kernels at import time.

The compiled core is preferred; set ``DELAYLENS_PURE_PYTHON=1`` to force the
numpy fallback (both produce identical trees).
"""

import os

from . import _tree_py

BACKEND = "python"
build_tree = _tree_py.build_tree
apply_tree = _tree_py.apply_tree

if not os.environ.get("DELAYLENS_PURE_PYTHON"):
    try:
        from . import _tree_core
    except ImportError:  # pragma: no cover - depends on the build
        pass
    else:
        BACKEND = "compiled"
        build_tree = _tree_core.build_tree
        apply_tree = _tree_core.apply_tree


def kernels(backend=None):
    """Return ``(build_tree, apply_tree)`` for ``backend`` (default: active one)."""
    if backend is None or backend == BACKEND:
        return build_tree, apply_tree
    if backend == "python":
        return _tree_py.build_tree, _tree_py.apply_tree
    if backend == "compiled":
        from . import _tree_core

        return _tree_core.build_tree, _tree_core.apply_tree
    raise ValueError(f"unknown backend {backend!r}")
