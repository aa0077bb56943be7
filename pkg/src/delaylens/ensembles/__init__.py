"""From-scratch CART, random forests, gradient boosting and permutation importance."""

from ._backend import BACKEND
from .importance import permutation_importance
from .models import EnsembleModel, fit_gradient_boosting, fit_random_forest, predict
from .tree import Tree, TreeParams, fit_tree

__all__ = [
    "BACKEND",
    "EnsembleModel",
    "Tree",
    "TreeParams",
    "fit_gradient_boosting",
    "fit_random_forest",
    "fit_tree",
    "permutation_importance",
    "predict",
]
