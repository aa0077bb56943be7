"""Exact Gaussian process regression with an RBF kernel.

Used for the spatial residual model (coordinates -> out-of-fold residuals)
and, through least-squares classification, as a probabilistic classifier.
Inputs are z-scored per axis before the kernel is evaluated, so the
lengthscale is in standardized units.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from scipy.spatial.distance import cdist

log = logging.getLogger(__name__)

JITTER_FLOOR = 1e-10
JITTER_MAX = 1e-6
MAX_POINTS = 10_000
PROB_EPS = 1e-6


class GPFactorizationError(RuntimeError):
    """The kernel matrix stayed non positive definite after jitter escalation."""


@dataclass(frozen=True)
class RbfHyperparams:
    lengthscale: float
    signal_variance: float
    noise_variance: float

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise ValueError("lengthscale must be > 0")
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be > 0")
        if not self.noise_variance >= 0:
            raise ValueError("noise_variance must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def rbf_kernel(a, b, h: RbfHyperparams) -> float:
    """``sf2 * exp(-|a - b|^2 / (2 l^2))`` for two coordinate vectors."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(h.signal_variance * np.exp(-np.dot(d, d) / (2.0 * h.lengthscale**2)))


def kernel_matrix(A, B, h: RbfHyperparams) -> np.ndarray:
    sq = cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean")
    return h.signal_variance * np.exp(-sq / (2.0 * h.lengthscale**2))


class _Standardizer:
    def __init__(self, coords, enabled=True):
        coords = np.asarray(coords, dtype=np.float64)
        if enabled:
            self.mean = coords.mean(axis=0)
            sd = coords.std(axis=0)
            self.scale = np.where(sd > 1e-12, sd, 1.0)
        else:
            self.mean = np.zeros(coords.shape[1])
            self.scale = np.ones(coords.shape[1])

    def __call__(self, coords):
        return (np.atleast_2d(np.asarray(coords, dtype=np.float64)) - self.mean) / self.scale


def _factor(K, noise, context=""):
    """Cholesky of ``K + noise I`` with jitter escalation; returns ``(L, added)``."""
    n = K.shape[0]
    added = noise if noise >= JITTER_FLOOR else JITTER_FLOOR
    extra = 0.0
    while True:
        try:
            L = cholesky(K + (added + extra) * np.eye(n), lower=True, check_finite=False)
            if np.all(np.isfinite(L)) and np.all(np.diag(L) > 0):
                return L, added + extra
        except LinAlgError:
            pass
        extra = JITTER_FLOOR if extra == 0.0 else extra * 10.0
        if extra > JITTER_MAX * (1 + 1e-9):
            cond = np.linalg.cond(K + added * np.eye(n))
            raise GPFactorizationError(
                f"kernel matrix not positive definite after jitter {JITTER_MAX:g}{context}; "
                f"condition number {cond:.3e}"
            )


@dataclass
class GPModel:
    training_coords: np.ndarray  # standardized
    alpha: np.ndarray
    cholesky_factor: np.ndarray
    hyperparams: RbfHyperparams
    diag_added: float
    standardizer: _Standardizer
    targets: np.ndarray

    def summary(self) -> dict:
        return {
            "n": int(len(self.alpha)),
            "hyperparams": self.hyperparams.to_dict(),
            "diag_added": self.diag_added,
            "log_marginal_likelihood": log_marginal_likelihood(self, self.targets),
        }


def fit_gp(coords, targets, h: RbfHyperparams, standardize: bool = True) -> GPModel:
    """Factor ``K + sn2 I`` and solve for the weight vector by triangular substitution."""
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    y = np.asarray(targets, dtype=np.float64).ravel()
    n = len(y)
    if n < 1 or coords.shape[0] != n:
        raise ValueError("need at least one point and one target per coordinate row")
    if n > MAX_POINTS:
        raise ValueError(f"exact GP limited to {MAX_POINTS} points (got {n})")
    if not (np.isfinite(coords).all() and np.isfinite(y).all()):
        raise ValueError("coordinates and targets must be finite")
    if h.noise_variance == 0.0 and len(np.unique(coords, axis=0)) < n:
        raise GPFactorizationError("duplicate coordinates with zero noise variance: singular kernel")
    std = _Standardizer(coords, standardize)
    Z = std(coords)
    K = kernel_matrix(Z, Z, h)
    L, added = _factor(K, h.noise_variance)
    alpha = solve_triangular(L.T, solve_triangular(L, y, lower=True), lower=False)
    return GPModel(Z, alpha, L, h, added, std, y)


def predict_gp(model: GPModel, query_coords):
    """Posterior mean and variance (floored at 0) at the query coordinates."""
    Q = model.standardizer(query_coords)
    if Q.shape[0] == 0:
        return np.zeros(0), np.zeros(0)
    Ks = kernel_matrix(model.training_coords, Q, model.hyperparams)
    mean = Ks.T @ model.alpha
    v = solve_triangular(model.cholesky_factor, Ks, lower=True)
    var = model.hyperparams.signal_variance - np.sum(v * v, axis=0)
    return mean, np.maximum(var, 0.0)


def log_marginal_likelihood(model: GPModel, targets) -> float:
    y = np.asarray(targets, dtype=np.float64).ravel()
    n = len(y)
    return float(
        -0.5 * y @ model.alpha
        - np.sum(np.log(np.diag(model.cholesky_factor)))
        - 0.5 * n * np.log(2.0 * np.pi)
    )


def default_grid(targets, points: int = 8) -> dict:
    """Geometric grids scaled to the target variance."""
    var = float(np.var(np.asarray(targets, dtype=np.float64)))
    if var <= 0:
        var = 1.0
    return {
        "lengthscale": list(np.geomspace(0.05, 5.0, points)),
        "signal_variance": list(var * np.geomspace(0.05, 5.0, points)),
        "noise_variance": list(var * np.geomspace(1e-3, 1.0, points)),
    }


def select_hyperparams(coords, targets, grid: dict | None = None, standardize: bool = True, method: str = "eigh"):
    """Grid point maximizing the log marginal likelihood.

    Ties go to the smallest lengthscale, then the smallest signal variance.
    ``method="eigh"`` diagonalizes the unit-variance kernel once per
    lengthscale, after which every (signal, noise) pair costs O(n);
    ``"cholesky"`` factors every grid point directly. Returns
    ``(best, best_lml)``.
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    y = np.asarray(targets, dtype=np.float64).ravel()
    if method not in ("eigh", "cholesky"):
        raise ValueError("method must be 'eigh' or 'cholesky'")
    grid = grid or default_grid(y)
    ls = sorted(float(v) for v in grid["lengthscale"])
    sf = sorted(float(v) for v in grid["signal_variance"])
    sn = sorted(float(v) for v in grid["noise_variance"])
    if not (ls and sf and sn):
        raise ValueError("hyperparameter grid must be non-empty on every axis")
    Z = _Standardizer(coords, standardize)(coords)
    sq = cdist(Z, Z, "sqeuclidean")
    n = len(y)
    has_dupes = len(np.unique(Z, axis=0)) < n
    const = 0.5 * n * np.log(2.0 * np.pi)
    best, best_lml = None, -np.inf
    for l in ls:
        base = np.exp(-sq / (2.0 * l * l))
        if method == "eigh":
            lam, Q = np.linalg.eigh(base)
            proj2 = (Q.T @ y) ** 2
        for s, noise in itertools.product(sf, sn):
            if noise == 0.0 and has_dupes:
                continue
            if method == "eigh":
                ev = s * lam + (noise if noise >= JITTER_FLOOR else JITTER_FLOOR)
                if np.any(ev <= 0):
                    continue
                lml = -0.5 * float(np.sum(proj2 / ev)) - 0.5 * float(np.sum(np.log(ev))) - const
            else:
                try:
                    L, _ = _factor(s * base, noise)
                except GPFactorizationError:
                    continue
                w = solve_triangular(L, y, lower=True)
                lml = -0.5 * float(w @ w) - float(np.sum(np.log(np.diag(L)))) - const
            if lml > best_lml:
                best, best_lml = RbfHyperparams(l, s, noise), lml
    if best is None:
        raise GPFactorizationError("every grid point failed to factorize")
    return best, best_lml


class GPClassifier:
    """Least-squares classification: GP regression on 0/1 labels, clamped to probabilities.

    An approximation (no link function); far from the data the prediction
    reverts to the zero prior mean, clamped to 1e-6.
    """

    def __init__(self, model: GPModel):
        self.model = model

    def predict_proba(self, X) -> np.ndarray:
        mean, _ = predict_gp(self.model, X)
        return np.clip(mean, PROB_EPS, 1.0 - PROB_EPS)

    predict = predict_proba


def gp_classify(features, labels, h: RbfHyperparams, standardize: bool = True) -> GPClassifier:
    labels = np.asarray(labels, dtype=np.float64)
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ValueError("labels must be 0/1")
    return GPClassifier(fit_gp(features, labels, h, standardize))
