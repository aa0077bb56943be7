"""Local Moran's I, conditional-permutation pseudo p-values and LISA quadrants."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

from .geo import SpatialWeights

MODES = ("standard", "paper-literal")
QUADRANTS = ("HH", "LL", "HL", "LH", "undefined")


class DegenerateInputWarning(UserWarning):
    """Constant input: local statistics are identically zero."""


def _dense(weights) -> np.ndarray:
    if isinstance(weights, SpatialWeights):
        return weights.dense()
    return np.asarray(weights, dtype=np.float64)


def local_morans_i(values, weights, mode: str = "standard") -> np.ndarray:
    """Local Moran's I for every area.

    ``standard``: ``I_j = z_j / m2 * sum_k w_jk z_k`` with
    ``m2 = sum_k z_k^2 / (n - 1)``.
    ``paper-literal``: ``I_j = (n - 1) z_j sum_k w_jk z_k / sum_k w_jk z_k^2``,
    i.e. the weights also enter the variance term.
    ``z`` are deviations from the mean. Zero denominators give ``I_j = 0``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    p = np.asarray(values, dtype=np.float64)
    W = _dense(weights)
    n = len(p)
    if W.shape != (n, n) or n < 2:
        raise ValueError("need n >= 2 values and an n x n weight matrix")
    z = p - p.mean()
    if not np.sum(z * z) > 0:
        warnings.warn("constant input vector: all local Moran's I are zero", DegenerateInputWarning, stacklevel=2)
        return np.zeros(n)
    lag = W @ z
    if mode == "standard":
        m2 = np.sum(z * z) / (n - 1)
        return z * lag / m2
    den = W @ (z * z)
    out = np.zeros(n)
    ok = den > 0
    out[ok] = (n - 1) * z[ok] * lag[ok] / den[ok]
    return out


def global_morans_i(values, weights) -> float:
    p = np.asarray(values, dtype=np.float64)
    W = _dense(weights)
    z = p - p.mean()
    return float(len(p) / W.sum() * (z @ W @ z) / (z @ z))


def classify_quadrants(values, weights) -> list[str]:
    """HH/LL/HL/LH from the area value and the plain mean of its neighbours' values."""
    p = np.asarray(values, dtype=np.float64)
    W = _dense(weights)
    pbar = p.mean()
    card = W.sum(axis=1)
    out = []
    for j in range(len(p)):
        if card[j] == 0:
            out.append("undefined")
            continue
        lag = (W[j] @ p) / card[j]
        dz, dl = p[j] - pbar, lag - pbar
        if dz == 0 or dl == 0:
            out.append("undefined")
        elif dz > 0:
            out.append("HH" if dl > 0 else "HL")
        else:
            out.append("LH" if dl > 0 else "LL")
    return out


@dataclass
class LisaResult:
    I: np.ndarray  # noqa: E741
    pseudo_p: np.ndarray
    quadrant: list
    n_permutations: int
    seed: int
    mode: str = "standard"

    def rows(self, ids):
        return [
            {"area_id": aid, "I": float(self.I[j]), "pseudo_p": float(self.pseudo_p[j]), "quadrant": self.quadrant[j]}
            for j, aid in enumerate(ids)
        ]

    def to_csv(self, ids) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["area_id", "I", "pseudo_p", "quadrant"], lineterminator="\n")
        w.writeheader()
        for row in self.rows(ids):
            w.writerow({**row, "I": repr(row["I"]), "pseudo_p": repr(row["pseudo_p"])})
        return buf.getvalue()


def permutation_pseudo_p(values, weights, n_permutations: int = 999, seed: int = 0, mode: str = "standard") -> LisaResult:
    """Two-sided pseudo p-values by conditional permutation.

    For area ``j`` its own value stays put while its neighbour set is
    redrawn (without replacement) from the other ``n - 1`` values;
    ``p = (#{|I_perm| >= |I_obs|} + 1) / (n_permutations + 1)``. The draws
    for area ``j`` come from ``default_rng([seed, j])`` so the result does
    not depend on evaluation order.
    """
    if n_permutations < 99:
        raise ValueError("n_permutations must be >= 99")
    p = np.asarray(values, dtype=np.float64)
    W = _dense(weights)
    n = len(p)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateInputWarning)
        I_obs = local_morans_i(p, W, mode)
    quadrant = classify_quadrants(p, W)
    z = p - p.mean()
    pvals = np.ones(n)
    if not np.sum(z * z) > 0:
        warnings.warn("constant input vector: pseudo p-values are all 1", DegenerateInputWarning, stacklevel=2)
        return LisaResult(I_obs, pvals, ["undefined"] * n, n_permutations, seed, mode)
    m2 = np.sum(z * z) / (n - 1)
    card = (W > 0).sum(axis=1)
    for j in range(n):
        k = int(card[j])
        if k == 0:
            quadrant[j] = "undefined"
            continue
        others = np.delete(np.arange(n), j)
        rng = np.random.default_rng([seed, j])
        draw = others[np.argsort(rng.random((n_permutations, n - 1)), axis=1)[:, :k]]
        zs = z[draw]
        lag = zs.sum(axis=1)
        if mode == "standard":
            I_perm = z[j] * lag / m2
        else:
            den = (zs * zs).sum(axis=1)
            I_perm = np.where(den > 0, (n - 1) * z[j] * lag / np.where(den > 0, den, 1.0), 0.0)
        obs = abs(I_obs[j])
        hits = int(np.sum(np.abs(I_perm) >= obs - 1e-12 * max(1.0, obs)))
        pvals[j] = (hits + 1) / (n_permutations + 1)
    return LisaResult(I_obs, pvals, quadrant, n_permutations, seed, mode)
