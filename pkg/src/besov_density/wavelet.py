"""Periodized tensor-product wavelet bases on [0, 1]^d.

Levels are indexed from 1. Level ``l`` holds the wavelets at dyadic scale
``j = l - 1``: ``2**(l-1)`` functions in one dimension and
``3 * 4**(l-1)`` in two, so that ``V_L`` together with the constants spans
all piecewise-constant functions on ``2**(L*d)`` cells (Haar case).

Functions are tabulated on the uniform midpoint grid with ``2**(J*d)``
cells. Tabulation uses the periodic orthogonal DWT (the cascade algorithm
run to depth ``J``), which makes the tabulated basis exactly orthonormal
under midpoint quadrature for every family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator

import numpy as np
from numpy.polynomial import polynomial as P

__all__ = [
    "WaveletBasis",
    "CoefficientTree",
    "GridFunction",
    "ResolutionError",
    "daubechies_filter",
    "level_size",
    "eval_basis",
    "synthesize",
    "analyze",
    "project",
    "besov_norm",
    "grid_norm",
    "grid_points",
]


class ResolutionError(ValueError):
    """Requested level exceeds what the grid can represent."""


@lru_cache(maxsize=None)
def daubechies_filter(n_moments: int) -> np.ndarray:
    """Orthonormal Daubechies low-pass filter with ``n_moments`` vanishing moments.

    Computed by spectral factorization, keeping the minimum-phase roots.
    ``n_moments=1`` gives Haar. Coefficients sum to ``sqrt(2)``.
    """
    N = int(n_moments)
    if N < 1 or N > 10:
        raise ValueError("n_moments must be in 1..10")
    if N == 1:
        return np.array([1.0, 1.0]) / math.sqrt(2.0)
    # P(y) = sum_k C(N-1+k, k) y^k with y = (2 - z - 1/z) / 4
    p_y = np.array([math.comb(N - 1 + k, k) for k in range(N)], dtype=float)
    y_of_z = np.array([-0.25, 0.5, -0.25])  # coefficients of z^0..z^2 for z*y
    q = np.zeros(1)
    # q(z) = z^(N-1) P(y(z)) = sum_k p_k (z y)^k z^(N-1-k)
    for k, pk in enumerate(p_y):
        term = np.array([1.0])
        for _ in range(k):
            term = P.polymul(term, y_of_z)
        term = np.concatenate([np.zeros(N - 1 - k), term])
        q = P.polyadd(q, pk * term)
    roots = P.polyroots(q)
    inside = roots[np.abs(roots) < 1.0]
    Q = np.real(P.polyfromroots(inside))
    h = P.polymul(Q, P.polypow([1.0, 1.0], N))
    h = np.real(h)
    h *= math.sqrt(2.0) / h.sum()
    return h[::-1].copy()


def _regularity_for(n_moments: int) -> int:
    # S-regular in the sense of reproducing polynomials of degree < S
    return max(1, int(n_moments))


def level_size(l: int, d: int) -> int:
    """Number of wavelets at level ``l`` (scale ``l - 1``) in dimension ``d``."""
    if l < 1:
        raise ValueError("levels start at 1")
    j = l - 1
    return (2**d - 1) * 2 ** (j * d)


def _level_offsets(L: int, d: int) -> np.ndarray:
    sizes = [level_size(l, d) for l in range(1, L + 1)]
    return np.concatenate([[0], np.cumsum(sizes)]).astype(int)


@dataclass(frozen=True)
class WaveletBasis:
    """Periodized orthonormal wavelet basis.

    Parameters
    ----------
    family : str
        ``"haar"`` or ``"daubN"`` with ``N`` vanishing moments (``N`` in 2..10).
    d : int
        Dimension, 1 or 2.
    J : int
        Grid level used for tabulation and quadrature.
    """

    family: str = "haar"
    d: int = 1
    J: int = 12
    filter: np.ndarray = field(init=False, repr=False, compare=False)
    n_moments: int = field(init=False, compare=False)

    def __post_init__(self):
        fam = self.family.lower()
        if fam == "haar":
            n = 1
        elif fam.startswith("daub"):
            try:
                n = int(fam[4:])
            except ValueError as exc:
                raise ValueError(f"unknown wavelet family {self.family!r}") from exc
        else:
            raise ValueError(f"unknown wavelet family {self.family!r}")
        if self.d not in (1, 2):
            raise ValueError("only d = 1 and d = 2 are supported")
        if self.J < 1:
            raise ValueError("grid level J must be >= 1")
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "n_moments", n)
        object.__setattr__(self, "filter", daubechies_filter(n))

    @property
    def regularity(self) -> int:
        return _regularity_for(self.n_moments)

    @property
    def is_haar(self) -> bool:
        return self.n_moments == 1

    @property
    def n_cells(self) -> int:
        return 2 ** (self.J * self.d)

    def with_grid(self, J: int) -> "WaveletBasis":
        return WaveletBasis(self.family, self.d, J)

    # -- periodic DWT ------------------------------------------------------

    def _highpass(self) -> np.ndarray:
        h = self.filter
        n = np.arange(h.size)
        return ((-1.0) ** n) * h[::-1]

    def _fwd_axis(self, x: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
        h, g = self.filter, self._highpass()
        m = x.shape[axis]
        idx = (2 * np.arange(m // 2)[:, None] + np.arange(h.size)[None, :]) % m
        xt = np.take(x, idx, axis=axis)  # axis -> (m/2, taps)
        xt = np.moveaxis(xt, (axis, axis + 1), (-2, -1))
        a = np.moveaxis(xt @ h, -1, axis)
        dd = np.moveaxis(xt @ g, -1, axis)
        return a, dd

    def _inv_axis(self, a: np.ndarray, dd: np.ndarray, axis: int) -> np.ndarray:
        h, g = self.filter, self._highpass()
        half = a.shape[axis]
        m = 2 * half
        a_ = np.moveaxis(a, axis, -1)
        d_ = np.moveaxis(dd, axis, -1)
        out = np.zeros(a_.shape[:-1] + (m,))
        k2 = 2 * np.arange(half)
        for n in range(h.size):
            # (2k + n) mod m is injective in k, so plain fancy indexing is safe
            out[..., (k2 + n) % m] += h[n] * a_ + g[n] * d_
        return np.moveaxis(out, -1, axis)

    def dwt(self, values: np.ndarray) -> tuple[np.ndarray, list]:
        """Full periodic DWT over the trailing ``d`` axes.

        Returns the coarsest approximation and a list of detail blocks
        indexed by scale ``j = 0 .. J-1``. In 1D a block has shape
        ``(..., 2**j)``; in 2D it has shape ``(..., 3, 2**j, 2**j)``.
        """
        d = self.d
        a = np.asarray(values, dtype=float)
        J = int(round(math.log2(a.shape[-1])))
        details = [None] * J
        for j in range(J - 1, -1, -1):
            if d == 1:
                a, dj = self._fwd_axis(a, a.ndim - 1)
            else:
                lo0, hi0 = self._fwd_axis(a, a.ndim - 2)
                ll, lh = self._fwd_axis(lo0, a.ndim - 1)
                hl, hh = self._fwd_axis(hi0, a.ndim - 1)
                a = ll
                dj = np.stack([hl, lh, hh], axis=-3)
            details[j] = dj
        return a, details

    def idwt(self, approx: np.ndarray, details: list) -> np.ndarray:
        a = np.asarray(approx, dtype=float)
        for dj in details:
            if self.d == 1:
                a = self._inv_axis(a, dj, a.ndim - 1)
            else:
                hl, lh, hh = dj[..., 0, :, :], dj[..., 1, :, :], dj[..., 2, :, :]
                lo0 = self._inv_axis(a, lh, a.ndim - 1)
                hi0 = self._inv_axis(hl, hh, a.ndim - 1)
                a = self._inv_axis(lo0, hi0, a.ndim - 2)
        return a

    # -- coefficient vector <-> detail blocks ------------------------------

    def vector_to_details(self, vec: np.ndarray, L: int, J: int) -> list:
        """Place level-ordered coefficient vectors (batch on leading axes)
        into DWT detail slots for a grid of level ``J``."""
        vec = np.asarray(vec, dtype=float)
        batch = vec.shape[:-1]
        off = _level_offsets(L, self.d)
        details = []
        for j in range(J):
            if self.d == 1:
                shape = batch + (2**j,)
            else:
                shape = batch + (3, 2**j, 2**j)
            if j < L:
                details.append(vec[..., off[j] : off[j + 1]].reshape(shape))
            else:
                details.append(np.zeros(shape))
        return details

    def details_to_vector(self, details: list, L: int) -> np.ndarray:
        parts = []
        for j in range(L):
            dj = details[j]
            ndim_block = 1 if self.d == 1 else 3
            parts.append(dj.reshape(dj.shape[: dj.ndim - ndim_block] + (-1,)))
        return np.concatenate(parts, axis=-1)

    def synthesize_vectors(self, vecs: np.ndarray, L: int, J: int | None = None) -> np.ndarray:
        """Grid values for a batch of coefficient vectors, flattened per cell."""
        J = self.J if J is None else J
        if L > J:
            raise ResolutionError(f"max level {L} exceeds grid level {J}")
        vecs = np.asarray(vecs, dtype=float)
        batch = vecs.shape[:-1]
        details = self.vector_to_details(vecs, L, J)
        approx = np.zeros(batch + (1,) * self.d)
        grid = self.idwt(approx, details)
        scale = 2.0 ** (J * self.d / 2.0)
        return grid.reshape(batch + (-1,)) * scale

    def analyze_values(self, values: np.ndarray, L: int) -> np.ndarray:
        """Level-ordered coefficient vectors of flattened grid values."""
        values = np.asarray(values, dtype=float)
        n = values.shape[-1]
        J = int(round(math.log2(n) / self.d))
        if L > J:
            raise ResolutionError(f"max level {L} exceeds grid level {J}")
        shape = values.shape[:-1] + (2**J,) * self.d
        _, details = self.dwt(values.reshape(shape) * 2.0 ** (-J * self.d / 2.0))
        return self.details_to_vector(details, L)

    @lru_cache(maxsize=4096)
    def _tabulated(self, l: int, r: int, J: int) -> np.ndarray:
        L = l
        vec = np.zeros(_level_offsets(L, self.d)[-1])
        vec[_level_offsets(L, self.d)[l - 1] + r - 1] = 1.0
        return self.synthesize_vectors(vec, L, J)


def _check_index(l: int, r: int, d: int) -> None:
    if l < 1:
        raise ValueError(f"level {l} out of range (levels start at 1)")
    if not 1 <= r <= level_size(l, d):
        raise ValueError(f"index r={r} out of range 1..{level_size(l, d)} at level {l}")


def _haar1(u: np.ndarray, kind: int) -> np.ndarray:
    # kind 0: scaling function, kind 1: wavelet; evaluated on [0, 1)
    inside = (u >= 0.0) & (u < 1.0)
    if kind == 0:
        return inside.astype(float)
    return np.where(inside, np.where(u < 0.5, 1.0, -1.0), 0.0)


def eval_basis(basis: WaveletBasis, l: int, r: int, x) -> np.ndarray | float:
    """Value of ``psi_{lr}`` at point(s) ``x``.

    ``x`` is a scalar or array of shape ``(..., d)`` (``(...,)`` for d=1).
    Haar uses the closed form; other families look up the cascade
    tabulation at the basis grid level (nearest cell).
    """
    _check_index(l, r, basis.d)
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0 or (basis.d > 1 and x.ndim == 1)
    pts = x.reshape(-1, basis.d) if basis.d > 1 else x.reshape(-1, 1)
    if np.any((pts < 0.0) | (pts > 1.0)):
        raise ValueError("points must lie in [0, 1]^d")
    j = l - 1
    if basis.is_haar:
        if basis.d == 1:
            out = 2.0 ** (j / 2.0) * _haar1(2.0**j * pts[:, 0] - (r - 1), 1)
        else:
            t, rem = divmod(r - 1, 4**j)
            k1, k2 = divmod(rem, 2**j)
            kinds = {0: (1, 0), 1: (0, 1), 2: (1, 1)}[t]
            out = 2.0**j * _haar1(2.0**j * pts[:, 0] - k1, kinds[0]) * _haar1(
                2.0**j * pts[:, 1] - k2, kinds[1]
            )
    else:
        if l > basis.J:
            raise ResolutionError(f"level {l} exceeds grid level {basis.J}")
        tab = basis._tabulated(l, r, basis.J).reshape((2**basis.J,) * basis.d)
        cells = np.minimum((pts * 2**basis.J).astype(int), 2**basis.J - 1)
        out = tab[tuple(cells.T)]
    return float(out[0]) if scalar else out.reshape(x.shape[: x.ndim - (basis.d > 1)])


class CoefficientTree:
    """Wavelet coefficients ``c_{lr}`` for levels ``1..max_level``.

    Stored as one dense array per level; absent levels are zero.
    """

    def __init__(self, d: int = 1, max_level: int = 0, levels: dict | None = None):
        self.d = int(d)
        self.max_level = int(max_level)
        self._levels: dict[int, np.ndarray] = {}
        for l, arr in (levels or {}).items():
            self[l] = arr

    # level access
    def __getitem__(self, l: int) -> np.ndarray:
        if l in self._levels:
            return self._levels[l]
        return np.zeros(level_size(l, self.d))

    def __setitem__(self, l: int, arr) -> None:
        arr = np.asarray(arr, dtype=float).ravel()
        if arr.size != level_size(l, self.d):
            raise ValueError(f"level {l} needs {level_size(l, self.d)} entries")
        if l > self.max_level:
            self.max_level = l
        self._levels[l] = arr.copy()

    def get(self, l: int, r: int) -> float:
        _check_index(l, r, self.d)
        return float(self[l][r - 1]) if l in self._levels else 0.0

    def set(self, l: int, r: int, value: float) -> None:
        _check_index(l, r, self.d)
        if l not in self._levels:
            self[l] = np.zeros(level_size(l, self.d))
        self._levels[l][r - 1] = value

    def items(self) -> Iterator[tuple[int, int, float]]:
        """Nonzero entries as ``(l, r, value)`` in canonical order."""
        for l in sorted(self._levels):
            arr = self._levels[l]
            for idx in np.flatnonzero(arr):
                yield l, int(idx) + 1, float(arr[idx])

    def levels(self) -> list[int]:
        return sorted(self._levels)

    def __len__(self) -> int:
        return sum(int(np.count_nonzero(a)) for a in self._levels.values())

    def __eq__(self, other) -> bool:
        if not isinstance(other, CoefficientTree) or other.d != self.d:
            return NotImplemented
        L = max(self.max_level, other.max_level)
        return bool(np.array_equal(self.to_vector(L), other.to_vector(L)))

    def __repr__(self) -> str:
        return f"CoefficientTree(d={self.d}, max_level={self.max_level}, nnz={len(self)})"

    def copy(self) -> "CoefficientTree":
        return CoefficientTree(self.d, self.max_level, {l: a for l, a in self._levels.items()})

    def to_vector(self, L: int | None = None) -> np.ndarray:
        L = self.max_level if L is None else L
        return np.concatenate([self[l] for l in range(1, L + 1)]) if L > 0 else np.zeros(0)

    @classmethod
    def from_vector(cls, vec, d: int, L: int) -> "CoefficientTree":
        vec = np.asarray(vec, dtype=float)
        off = _level_offsets(L, d)
        if vec.size != off[-1]:
            raise ValueError(f"vector of length {vec.size} does not match L={L}, d={d}")
        return cls(d, L, {l: vec[off[l - 1] : off[l]] for l in range(1, L + 1)})


@dataclass
class GridFunction:
    """Function tabulated on the midpoint grid of ``2**(J*d)`` cells."""

    values: np.ndarray
    J: int
    d: int = 1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.size != 2 ** (self.J * self.d):
            raise ValueError(
                f"expected {2 ** (self.J * self.d)} values for J={self.J}, d={self.d}"
            )

    @property
    def cell_volume(self) -> float:
        return 2.0 ** (-self.J * self.d)

    def integral(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def __add__(self, other):
        if isinstance(other, GridFunction):
            _same_grid(self, other)
            return GridFunction(self.values + other.values, self.J, self.d)
        return GridFunction(self.values + other, self.J, self.d)

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            _same_grid(self, other)
            return GridFunction(self.values - other.values, self.J, self.d)
        return GridFunction(self.values - other, self.J, self.d)

    def refine(self, J: int) -> "GridFunction":
        """Piecewise-constant refinement onto a finer grid."""
        if J < self.J:
            raise ResolutionError("refine only goes to finer grids")
        k = 2 ** (J - self.J)
        v = self.values.reshape((2**self.J,) * self.d)
        for ax in range(self.d):
            v = np.repeat(v, k, axis=ax)
        return GridFunction(v.ravel(), J, self.d)


def _same_grid(a, b) -> None:
    if a.J != b.J or a.d != b.d:
        raise ValueError(f"grid mismatch: (J={a.J}, d={a.d}) vs (J={b.J}, d={b.d})")


def grid_points(J: int, d: int = 1) -> np.ndarray:
    """Cell midpoints, shape ``(2**J,)`` for d=1 or ``(2**(J*d), d)``."""
    x = (np.arange(2**J) + 0.5) / 2**J
    if d == 1:
        return x
    mesh = np.meshgrid(*([x] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def synthesize(coeffs: CoefficientTree, basis: WaveletBasis, J: int | None = None) -> GridFunction:
    """Tabulate ``sum_{l,r} c_{lr} psi_{lr}`` on the grid of level ``J``."""
    J = basis.J if J is None else J
    if coeffs.d != basis.d:
        raise ValueError("tree and basis dimensions differ")
    if coeffs.max_level > J:
        raise ResolutionError(f"max level {coeffs.max_level} exceeds grid level {J}")
    L = coeffs.max_level
    if L == 0:
        return GridFunction(np.zeros(2 ** (J * basis.d)), J, basis.d)
    return GridFunction(basis.synthesize_vectors(coeffs.to_vector(L), L, J), J, basis.d)


def analyze(f: GridFunction, basis: WaveletBasis, L: int) -> CoefficientTree:
    """Midpoint-quadrature inner products ``<f, psi_{lr}>`` for ``l <= L``."""
    if f.d != basis.d:
        raise ValueError("function and basis dimensions differ")
    if L > f.J:
        raise ResolutionError(f"level {L} exceeds grid level {f.J}")
    return CoefficientTree.from_vector(basis.analyze_values(f.values, L), basis.d, L)


def project(coeffs: CoefficientTree, L: int) -> CoefficientTree:
    if L < 1:
        raise ValueError("L must be >= 1")
    kept = {l: coeffs[l] for l in coeffs.levels() if l <= L}
    return CoefficientTree(coeffs.d, min(L, coeffs.max_level), kept)


def besov_norm(coeffs: CoefficientTree, s: float, p: float, q: float, d: int | None = None) -> float:
    """Wavelet-characterised ``B^s_{pq}`` norm; ``p`` or ``q`` may be ``inf``."""
    d = coeffs.d if d is None else d
    inv_p = 0.0 if math.isinf(p) else 1.0 / p
    level_terms = []
    for l in range(1, coeffs.max_level + 1):
        c = np.abs(coeffs[l])
        inner = c.max(initial=0.0) if math.isinf(p) else float(np.sum(c**p) ** (1.0 / p))
        level_terms.append(2.0 ** (l * (s - d * inv_p + d / 2.0)) * inner)
    if not level_terms:
        return 0.0
    t = np.array(level_terms)
    if math.isinf(q):
        return float(t.max())
    return float(np.sum(t**q) ** (1.0 / q))


def grid_norm(f: GridFunction, which: str = "L2") -> float:
    """Midpoint-quadrature ``L1``/``L2`` norm, or ``sup`` over the grid."""
    v = np.abs(f.values)
    which = which.lower()
    if which == "l1":
        return float(v.sum() * f.cell_volume)
    if which == "l2":
        return float(math.sqrt(np.sum(v**2) * f.cell_volume))
    if which in ("sup", "inf", "linf"):
        return float(v.max())
    raise ValueError(f"unknown norm {which!r}")
