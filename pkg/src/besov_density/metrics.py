"""Distances between densities on a common grid and log-log rate fits."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .link import DensityOnGrid

__all__ = [
    "RateFit",
    "tv_distance",
    "hellinger",
    "kl_divergence",
    "fit_rate",
    "theoretical_exponent",
    "KL_FLOOR",
]

KL_FLOOR = 1e-300


def _check(p: DensityOnGrid, q: DensityOnGrid) -> None:
    if p.J != q.J or p.d != q.d:
        raise ValueError(f"grid mismatch: (J={p.J}, d={p.d}) vs (J={q.J}, d={q.d})")


def tv_distance(p: DensityOnGrid, q: DensityOnGrid) -> float:
    """Half the L1 distance."""
    _check(p, q)
    return float(0.5 * np.abs(p.values - q.values).sum() * p.cell_volume)


def hellinger(p: DensityOnGrid, q: DensityOnGrid) -> float:
    """``sqrt(int (sqrt p - sqrt q)^2)``, with values in ``[0, sqrt 2]``."""
    _check(p, q)
    diff = np.sqrt(p.values) - np.sqrt(q.values)
    return float(math.sqrt(np.sum(diff * diff) * p.cell_volume))


def kl_divergence(p0: DensityOnGrid, p: DensityOnGrid, return_flag: bool = False):
    """``(KL(p0 || p), E_{p0} log^2(p / p0))`` by quadrature.

    Cells where ``p0 > 0`` but ``p`` is below ``KL_FLOOR`` are clipped; pass
    ``return_flag=True`` to also get whether clipping happened.
    """
    _check(p0, p)
    mask = p0.values > 0.0
    q = p.values[mask]
    clipped = bool(np.any(q < KL_FLOOR))
    q = np.maximum(q, KL_FLOOR)
    r = p0.values[mask]
    log_ratio = np.log(r) - np.log(q)
    w = r * p0.cell_volume
    kl = float(np.sum(w * log_ratio))
    v = float(np.sum(w * log_ratio**2))
    kl = max(kl, 0.0)
    return (kl, v, clipped) if return_flag else (kl, v)


@dataclass(frozen=True)
class RateFit:
    """Least-squares line ``log error = intercept + slope * log n``."""

    n: tuple
    errors: tuple
    slope: float
    intercept: float
    residual: float

    @property
    def n_points(self) -> int:
        return len(self.n)

    def to_csv_row(self) -> str:
        return f"{self.slope!r},{self.intercept!r},{self.residual!r},{self.n_points}"

    @staticmethod
    def csv_header() -> str:
        return "slope,intercept,residual,n_points"


def fit_rate(pairs) -> RateFit:
    """OLS of ``log(error)`` on ``log(n)`` for ``(n, error)`` pairs."""
    pairs = list(pairs)
    if len(pairs) < 3:
        raise ValueError("need at least 3 (n, error) pairs")
    n = np.array([p[0] for p in pairs], dtype=float)
    e = np.array([p[1] for p in pairs], dtype=float)
    if np.any(e <= 0) or np.any(n <= 0):
        raise ValueError("n and errors must be positive")
    x, y = np.log(n), np.log(e)
    if np.ptp(x) == 0.0:
        raise ValueError("degenerate fit: all n are equal")
    A = np.stack([np.ones_like(x), x], axis=1)
    (intercept, slope), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (intercept + slope * x)
    return RateFit(tuple(int(v) for v in n), tuple(float(v) for v in e), float(slope),
                   float(intercept), float(math.sqrt(np.mean(resid**2))))


def theoretical_exponent(s: float, d: int) -> float:
    """Exponent of the contraction rate ``n^{-s/(2s+d)}``."""
    return -s / (2.0 * s + d)
