"""Besov-Laplace priors: the four scaling regimes and the smoothness hyper-prior."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import integrate

from .wavelet import CoefficientTree, level_size

__all__ = [
    "Regime",
    "PriorSpec",
    "PriorDraw",
    "HyperPrior",
    "EmptySupportError",
    "scaling_factor",
    "level_scales",
    "truncation_level",
    "effective_level",
    "sample_laplace",
    "sample_prior",
    "log_prior_density",
    "hyperprior_normalizer",
    "hyperprior",
    "sample_hyperprior",
    "z_norm",
]


class Regime(str, enum.Enum):
    RESCALED = "rescaled"
    PARTIALLY_RESCALED = "partially_rescaled"
    TRUNCATED = "truncated"
    HIERARCHICAL = "hierarchical"


class EmptySupportError(ValueError):
    """The hyper-prior support ``(d, log n]`` is empty."""


@dataclass(frozen=True)
class PriorSpec:
    """Parameters of a Laplace prior on wavelet coefficients.

    ``s`` is the regularity parameter; for the hierarchical regime it is the
    current value of the random smoothness ``S``. ``hierarchical_base``
    selects the conditional prior given ``S``: ``"truncated"`` (non-rescaled,
    truncated at ``L_{S,n}``) or ``"rescaled"`` (rescaled under-smoothing).
    """

    regime: Regime = Regime.TRUNCATED
    s: float = 2.0
    d: int = 1
    n: int = 1000
    L_max: int = 12
    hierarchical_base: str = "truncated"

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime(self.regime))
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not self.s > self.d:
            raise ValueError(f"regularity s={self.s} must exceed the dimension d={self.d} (s > d)")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.L_max < 1:
            raise ValueError("L_max must be >= 1")
        if self.hierarchical_base not in ("truncated", "rescaled"):
            raise ValueError("hierarchical_base must be 'truncated' or 'rescaled'")
        if self.regime is Regime.HIERARCHICAL and not self.s <= math.log(self.n):
            raise ValueError(f"drawn S={self.s} outside hyper-prior support ({self.d}, log n]")

    def with_s(self, s: float) -> "PriorSpec":
        return replace(self, s=float(s))

    def with_n(self, n: int) -> "PriorSpec":
        return replace(self, n=int(n))

    @property
    def truncated(self) -> bool:
        return self.regime is Regime.TRUNCATED or (
            self.regime is Regime.HIERARCHICAL and self.hierarchical_base == "truncated"
        )

    @property
    def rescaled(self) -> bool:
        return self.regime is Regime.RESCALED or (
            self.regime is Regime.HIERARCHICAL and self.hierarchical_base == "rescaled"
        )

    @property
    def regularity(self) -> float:
        """Regularity ``t`` of the draws: ``s - d`` or ``s``."""
        return self.s if self.truncated else self.s - self.d


def truncation_level(s: float, d: int, n: float) -> int:
    """Smallest ``L >= 1`` with ``2**L >= n**(1/(2s+d))``."""
    if n < 2:
        raise ValueError("n must be >= 2")
    x = math.log2(n) / (2.0 * s + d)
    return max(1, math.ceil(x - 1e-12))


def effective_level(spec: PriorSpec) -> int:
    """Highest level with nonzero scaling under ``spec``."""
    if spec.truncated:
        return min(truncation_level(spec.s, spec.d, spec.n), spec.L_max)
    return spec.L_max


def scaling_factor(spec: PriorSpec, l: int) -> float:
    """``sigma_{n,lr}`` (independent of ``r``)."""
    if l < 1:
        raise ValueError("levels start at 1")
    s, d, n = spec.s, spec.d, spec.n
    if spec.truncated:
        if l > truncation_level(s, d, n):
            return 0.0
        return 2.0 ** (-l * (s + d / 2.0))
    base = 2.0 ** (-l * (s - d / 2.0))
    rescale = n ** (-d / (2.0 * s + d))
    if spec.rescaled:
        return base * rescale
    # partially rescaled
    if l <= truncation_level(s, d, n):
        return base
    return base * rescale / math.log(n)


def level_scales(spec: PriorSpec, L: int, untruncated: bool = False) -> np.ndarray:
    """Per-coefficient scalings for levels ``1..L`` in canonical order.

    With ``untruncated=True`` the truncated regimes report
    ``2**(-l(s+d/2))`` at every level (used as pseudo-prior above ``L_n``).
    """
    out = []
    for l in range(1, L + 1):
        if untruncated and spec.truncated:
            sig = 2.0 ** (-l * (spec.s + spec.d / 2.0))
        else:
            sig = scaling_factor(spec, l)
        out.append(np.full(level_size(l, spec.d), sig))
    return np.concatenate(out) if out else np.zeros(0)


def sample_laplace(rng: np.random.Generator, size) -> np.ndarray:
    """Standard Laplace variates by inverse CDF of uniforms."""
    u = rng.random(size) - 0.5
    return -np.sign(u) * np.log1p(-2.0 * np.abs(u))


@dataclass
class PriorDraw:
    coeffs: CoefficientTree
    spec: PriorSpec
    s_drawn: float | None = None


def sample_prior(spec: PriorSpec, rng: np.random.Generator) -> PriorDraw:
    """Draw ``c_{lr} = sigma_{n,lr} W_{lr}`` with ``W_{lr}`` i.i.d. Laplace.

    For the hierarchical regime ``S`` is drawn first from the hyper-prior
    and the returned spec carries it.
    """
    s_drawn = None
    if spec.regime is Regime.HIERARCHICAL:
        s_drawn = sample_hyperprior(spec.n, rng, spec.d)
        spec = spec.with_s(s_drawn)
    L = effective_level(spec)
    sig = level_scales(spec, L)
    coeffs = CoefficientTree.from_vector(sig * sample_laplace(rng, sig.size), spec.d, L)
    return PriorDraw(coeffs, spec, s_drawn)


def log_prior_density(coeffs: CoefficientTree, spec: PriorSpec) -> float:
    """Log density of the product of Laplace laws over levels ``1..L_eff``.

    Nonzero coefficients at zero-scaled levels give ``-inf``.
    """
    L = effective_level(spec)
    for l in coeffs.levels():
        if l > L and np.any(coeffs[l] != 0.0):
            return -math.inf
    sig = level_scales(spec, L)
    c = np.concatenate([coeffs[l] for l in range(1, L + 1)])
    return float(np.sum(-np.abs(c) / sig - np.log(2.0 * sig)))


def z_norm(coeffs: CoefficientTree, spec: PriorSpec) -> float:
    """Weighted l1 norm ``sum |w_{lr}| / sigma_{n,lr}`` of the decentering space."""
    L = effective_level(spec)
    total = 0.0
    for l in coeffs.levels():
        c = np.abs(coeffs[l])
        if not np.any(c):
            continue
        sig = scaling_factor(spec, l) if l <= L else 0.0
        if sig == 0.0:
            return math.inf
        total += float(c.sum() / sig)
    return total


# -- hyper-prior on the smoothness ----------------------------------------


def _hyper_log_kernel(s, n: float, d: int):
    return -np.power(n, d / (2.0 * np.asarray(s, dtype=float) + d))


def hyperprior_normalizer(n: float, d: int = 1) -> float:
    """``zeta_n = int_d^{log n} exp(-n^{d/(2s+d)}) ds`` by adaptive quadrature."""
    hi = math.log(n)
    if not hi > d:
        raise EmptySupportError(f"log n = {hi:.4g} must exceed d = {d}")
    val, _ = integrate.quad(
        lambda s: math.exp(-(n ** (d / (2.0 * s + d)))), d, hi, epsabs=0.0, epsrel=1e-12, limit=200
    )
    return val


@dataclass(frozen=True)
class HyperPrior:
    """Density ``exp(-n^{d/(2s+d)}) / zeta_n`` on ``(d, log n]``.

    The CDF is tabulated at ``grid_size`` equispaced abscissae with the
    cumulative trapezoid rule and inverted by linear interpolation.
    """

    n: float
    d: int = 1
    grid_size: int = 10_000
    normalizer: float = field(init=False)
    _s_grid: np.ndarray = field(init=False, repr=False, compare=False)
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        z = hyperprior_normalizer(self.n, self.d)
        object.__setattr__(self, "normalizer", z)
        s = np.linspace(self.lower, self.upper, self.grid_size)
        dens = np.exp(_hyper_log_kernel(s, self.n, self.d))
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(s))])
        cdf /= cdf[-1]
        object.__setattr__(self, "_s_grid", s)
        object.__setattr__(self, "_cdf", cdf)

    @property
    def lower(self) -> float:
        return float(self.d)

    @property
    def upper(self) -> float:
        return math.log(self.n)

    def logpdf(self, s):
        s = np.asarray(s, dtype=float)
        inside = (s > self.lower) & (s <= self.upper)
        out = np.where(inside, _hyper_log_kernel(np.where(inside, s, self.upper), self.n, self.d), -np.inf)
        out = out - math.log(self.normalizer)
        return float(out) if out.ndim == 0 else out

    def pdf(self, s):
        return np.exp(self.logpdf(s))

    def cdf(self, s):
        s = np.clip(np.asarray(s, dtype=float), self.lower, self.upper)
        out = np.interp(s, self._s_grid, self._cdf)
        return float(out) if out.ndim == 0 else out

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        out = np.interp(u, self._cdf, self._s_grid)
        # keep draws inside the half-open support
        out = np.maximum(out, np.nextafter(self.lower, math.inf))
        return float(out) if out.ndim == 0 else out

    def sample(self, rng: np.random.Generator, size=None):
        return self.ppf(rng.random(size))


@lru_cache(maxsize=64)
def hyperprior(n: float, d: int = 1) -> HyperPrior:
    return HyperPrior(n, d)


def sample_hyperprior(n: float, rng: np.random.Generator, d: int = 1, size=None):
    """Inverse-CDF draw(s) of ``S`` from the tabulated hyper-prior."""
    return hyperprior(n, d).sample(rng, size)
