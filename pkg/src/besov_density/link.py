"""Link functions and the normalized push-forward ``phi(w) / int phi(w)``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P

from .wavelet import GridFunction, _same_grid, grid_norm

__all__ = [
    "LinkFunction",
    "ExponentialLink",
    "RegularFloorLink",
    "DensityOnGrid",
    "push_forward",
    "lemma_a1_bound",
    "lemma_a2_bound",
    "LEMMA_A2_KL_CONSTANT",
    "make_link",
]

# Multiplicative constant in the KL / second-moment bound:
# max{KL, V} <= 4 * ||q/p||_inf * d_H^2  (via chi^2 and log x <= 2(sqrt x - 1)).
LEMMA_A2_KL_CONSTANT = 4.0


class LinkFunction:
    """Strictly increasing bijection from R onto ``(floor, inf)``."""

    kind: str = ""
    floor: float = 0.0

    def __call__(self, z):
        return self.eval(z)

    def eval(self, z):
        raise NotImplementedError

    def log_eval(self, z):
        return np.log(self.eval(z))

    def derivative(self, z):
        raise NotImplementedError

    def inverse(self, y):
        raise NotImplementedError

    @property
    def lipschitz_constant(self) -> float:
        raise NotImplementedError

    @property
    def log_lipschitz_constant(self) -> float:
        raise NotImplementedError


class ExponentialLink(LinkFunction):
    kind = "exp"
    floor = 0.0

    def eval(self, z):
        return np.exp(z)

    def log_eval(self, z):
        return np.asarray(z, dtype=float)

    def derivative(self, z):
        return np.exp(z)

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y <= 0.0):
            raise ValueError("exponential link inverse needs y > 0")
        return np.log(y)

    @property
    def lipschitz_constant(self) -> float:
        return math.inf

    @property
    def log_lipschitz_constant(self) -> float:
        return 1.0

    def __repr__(self):
        return "ExponentialLink()"


def _bump_poly() -> np.ndarray:
    # (1 - u^2)^4 normalized to unit mass on [-1, 1]
    g = P.polypow([1.0, 0.0, -1.0], 4)
    G = P.polyint(g)
    mass = P.polyval(1.0, G) - P.polyval(-1.0, G)
    return g / mass


@dataclass(frozen=True)
class RegularFloorLink(LinkFunction):
    """``phi(z) = B + (1-B) (g*eta)(z) / (g*eta)(0)`` with a polynomial bump ``g``.

    ``eta(z) = e^z 1{z<0} + (1+z) 1{z>=0}`` and ``g(u) = k (1-u^2)^4`` on
    ``[-1, 1]``. The convolution has closed form: exactly ``1+z`` for
    ``z >= 1``, exactly ``M e^z`` for ``z <= -1`` and a polynomial plus
    exponential term in between.
    """

    floor: float = 0.1
    kind: str = field(default="regular_floor", init=False)

    def __post_init__(self):
        if not 0.0 < self.floor < 1.0:
            raise ValueError("floor B must lie in (0, 1)")
        g = _bump_poly()
        G0 = P.polyint(g, lbnd=-1.0)
        G1 = P.polyint(P.polymul([0.0, 1.0], g), lbnd=-1.0)
        # Pe = g + g' + g'' + ...  so that  int p e^{-u} du = -e^{-u} Pe(u)
        Pe = np.zeros_like(g)
        term = g.copy()
        while term.size and np.any(term):
            Pe = P.polyadd(Pe, term)
            term = P.polyder(term)
        poly = P.polysub(P.polysub(P.polymul([1.0, 1.0], G0), G1), 0.0)
        poly = P.polyadd(poly, Pe)
        pe1 = P.polyval(1.0, Pe)
        object.__setattr__(self, "_g", g)
        object.__setattr__(self, "_G0", G0)
        object.__setattr__(self, "_Pe", Pe)
        object.__setattr__(self, "_poly", poly)
        object.__setattr__(self, "_pe1", pe1)
        # tail constant: (g*eta)(z) = M e^z for z <= -1
        M = math.e * P.polyval(-1.0, Pe) - P.polyval(1.0, Pe) / math.e
        object.__setattr__(self, "_M", M)
        F0 = self._conv(np.array(0.0))
        object.__setattr__(self, "_scale", (1.0 - self.floor) / float(F0))

    # (g * eta)(z) and its derivative
    def _conv(self, z):
        z = np.asarray(z, dtype=float)
        mid = np.clip(z, -1.0, 1.0)
        inner = P.polyval(mid, self._poly) - np.exp(mid - 1.0) * self._pe1
        return np.where(z >= 1.0, 1.0 + z, np.where(z <= -1.0, self._M * np.exp(np.minimum(z, -1.0)), inner))

    def _conv_deriv(self, z):
        z = np.asarray(z, dtype=float)
        mid = np.clip(z, -1.0, 1.0)
        inner = P.polyval(mid, self._G0) + P.polyval(mid, self._Pe) - np.exp(mid - 1.0) * self._pe1
        return np.where(z >= 1.0, 1.0, np.where(z <= -1.0, self._M * np.exp(np.minimum(z, -1.0)), inner))

    def eval(self, z):
        return self.floor + self._scale * self._conv(z)

    def derivative(self, z):
        return self._scale * self._conv_deriv(z)

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y <= self.floor):
            raise ValueError(f"inverse needs y > floor B = {self.floor}")
        F = (y - self.floor) / self._scale
        lo_val = self._M * math.exp(-1.0)
        z = np.where(F >= 2.0, F - 1.0, np.log(np.maximum(F, 1e-300) / self._M))
        mid = (F > lo_val) & (F < 2.0)
        if np.any(mid):
            target = F[mid] if F.ndim else F
            a = np.full(np.shape(target), -1.0)
            b = np.full(np.shape(target), 1.0)
            for _ in range(60):
                c = 0.5 * (a + b)
                below = self._conv(c) < target
                a = np.where(below, c, a)
                b = np.where(below, b, c)
            c = 0.5 * (a + b)
            for _ in range(2):
                c = c - (self._conv(c) - target) / self._conv_deriv(c)
            if F.ndim:
                z = z.copy()
                z[mid] = c
            else:
                z = c
        return float(z) if np.ndim(z) == 0 else z

    @property
    def lipschitz_constant(self) -> float:
        # (g*eta)' <= 1 with equality for z >= 1
        return self._scale

    @property
    def log_lipschitz_constant(self) -> float:
        # phi'/phi is increasing below -1 and decreasing above 1; search [-1, 1]
        z = np.linspace(-1.0, 1.0, 20001)
        r = self.derivative(z) / self.eval(z)
        return float(r.max())

    def __repr__(self):
        return f"RegularFloorLink(floor={self.floor})"


def make_link(kind: str = "exp", floor: float = 0.1) -> LinkFunction:
    kind = kind.lower()
    if kind in ("exp", "exponential"):
        return ExponentialLink()
    if kind in ("regular_floor", "regular", "floor"):
        return RegularFloorLink(floor)
    raise ValueError(f"unknown link {kind!r}")


@dataclass
class DensityOnGrid:
    """Probability density tabulated on the midpoint grid."""

    values: np.ndarray
    J: int
    d: int = 1
    normalizer: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.size != 2 ** (self.J * self.d):
            raise ValueError("values do not match the grid size")

    @property
    def cell_volume(self) -> float:
        return 2.0 ** (-self.J * self.d)

    def integral(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def as_grid_function(self) -> GridFunction:
        return GridFunction(self.values, self.J, self.d)

    def refine(self, J: int) -> "DensityOnGrid":
        g = self.as_grid_function().refine(J)
        return DensityOnGrid(g.values, J, self.d, self.normalizer)

    def cell_probabilities(self) -> np.ndarray:
        p = self.values * self.cell_volume
        return p / p.sum()

    def __call__(self, x) -> np.ndarray:
        """Value at points (cell lookup)."""
        x = np.asarray(x, dtype=float)
        pts = x.reshape(-1, self.d)
        cells = np.minimum((pts * 2**self.J).astype(int), 2**self.J - 1)
        flat = np.ravel_multi_index(tuple(cells.T), (2**self.J,) * self.d)
        return self.values[flat]


def push_forward(w: GridFunction, link: LinkFunction) -> DensityOnGrid:
    """``phi(w) / int phi(w)`` by midpoint quadrature."""
    if not np.all(np.isfinite(w.values)):
        raise ValueError("w has non-finite values")
    if link.floor == 0.0:
        # constants cancel in the quotient; shift for overflow safety
        logv = link.log_eval(w.values)
        shift = float(logv.max())
        v = np.exp(logv - shift)
        Z = float(v.sum() * w.cell_volume)
        with np.errstate(over="ignore"):
            normalizer = float(np.exp(math.log(Z) + shift))
        return DensityOnGrid(v / Z, w.J, w.d, normalizer)
    v = link.eval(w.values)
    Z = float(v.sum() * w.cell_volume)
    return DensityOnGrid(v / Z, w.J, w.d, Z)


def lemma_a1_bound(w: GridFunction, w_prime: GridFunction, link: LinkFunction) -> float:
    """Upper bound on ``||phi_w - phi_{w'}||_1`` for log-Lipschitz links."""
    _same_grid(w, w_prime)
    lip = link.log_lipschitz_constant
    diff = w - w_prime
    sup = grid_norm(diff, "sup")
    l1 = grid_norm(diff, "L1")
    if l1 == 0.0:
        return 0.0
    denom = float(link.eval(-grid_norm(w_prime, "sup")))
    return 2.0 * lip * math.exp(lip * sup) / denom * l1


def lemma_a2_bound(w: GridFunction, w_prime: GridFunction, link: LinkFunction) -> tuple[float, float]:
    """Bounds for floor links: ``(kl_bound, tv_bound)``.

    ``kl_bound`` bounds both ``KL(phi_{w'} || phi_w)`` and the second
    log-moment; it includes ``LEMMA_A2_KL_CONSTANT``. ``tv_bound`` bounds
    ``||phi_w - phi_{w'}||_1``.
    """
    _same_grid(w, w_prime)
    B = link.floor
    if B <= 0.0:
        raise ValueError("lemma_a2_bound needs a link bounded below by B > 0")
    lip = link.lipschitz_constant
    diff = w - w_prime
    l1 = grid_norm(diff, "L1")
    l2sq = grid_norm(diff, "L2") ** 2
    if l1 == 0.0:
        return 0.0, 0.0
    p = push_forward(w, link).values
    q = push_forward(w_prime, link).values
    ratio = float(np.max(q / p))
    kl = LEMMA_A2_KL_CONSTANT * lip**2 / B**2 * ratio * l2sq
    return kl, 2.0 * lip / B * l1
