"""Ground-truth densities, data simulation, contraction studies and prior diagnostics."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from joblib import Parallel, delayed

from .link import DensityOnGrid, make_link, push_forward
from .metrics import RateFit, fit_rate, tv_distance
from .posterior import Dataset, MCMCConfig, PosteriorModel, run_chain
from .prior import PriorSpec, Regime, effective_level, level_scales, sample_laplace, z_norm
from .wavelet import CoefficientTree, WaveletBasis, besov_norm, eval_basis, level_size, synthesize

__all__ = [
    "TruthSpec",
    "StudyConfig",
    "ReplicateRecord",
    "StudyResult",
    "StudyQualityError",
    "PriorDiagnostics",
    "DecenteringRow",
    "make_truth",
    "simulate_data",
    "contraction_study",
    "replicate_rngs",
    "sup_norm_samples",
    "regular_scales",
    "small_ball_table",
    "fit_small_ball",
    "sup_tail_table",
    "decentering_check",
    "prior_diagnostics",
    "canonical_hash",
    "truth_besov_profile",
    "DEFAULT_GRID_LEVEL",
]

DEFAULT_GRID_LEVEL = {1: 12, 2: 7}
MAX_EXCLUDED_FRACTION = 0.2


class StudyQualityError(RuntimeError):
    """Too many replicates were excluded for the study to be meaningful."""


def canonical_hash(payload) -> str:
    """Short SHA-256 fingerprint of a JSON-serializable object."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    if hasattr(obj, "value"):
        return obj.value
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# -- ground truths ---------------------------------------------------------------


@dataclass(frozen=True)
class TruthSpec:
    """Recipe for a ground-truth density ``p0 = phi(w0) / int phi(w0)``.

    Parameters
    ----------
    kind : {"homogeneous_smooth", "inhomogeneous_spiky", "custom"}
        ``homogeneous_smooth`` draws ``c_lr = A 2^{-l(s+d/2)} u_lr`` with
        ``u_lr`` uniform on ``[-1, 1]``; ``inhomogeneous_spiky`` places
        coefficients ``A 2^{-l(s-d/2)} l^{-2}`` along the dyadic path of
        ``location`` (levels ``2..levels``) on top of a level-1 background;
        ``custom`` uses ``coefficients`` verbatim.
    s_true : float
        Smoothness index of the construction.
    amplitude : float, optional
        ``A``; defaults to 1 for the homogeneous truth and 24 for the spiky one.
    coefficients : tuple of (l, r, value), optional
        Entries for ``kind="custom"``.
    """

    kind: str = "homogeneous_smooth"
    s_true: float = 2.0
    d: int = 1
    link: str = "exp"
    floor: float = 0.1
    amplitude: float | None = None
    levels: int = 10
    location: float = 0.3
    background: float = 0.2
    seed: int = 0
    coefficients: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("homogeneous_smooth", "inhomogeneous_spiky", "custom"):
            raise ValueError(f"unknown truth kind {self.kind!r}")
        if self.kind == "custom" and self.coefficients is None:
            raise ValueError("custom truth needs coefficients")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if not 0.0 <= self.location < 1.0:
            raise ValueError("location must lie in [0, 1)")

    @property
    def resolved_amplitude(self) -> float:
        if self.amplitude is not None:
            return float(self.amplitude)
        return 24.0 if self.kind == "inhomogeneous_spiky" else 1.0


def _path_index(l: int, x: float, d: int) -> int:
    """Index ``r`` of the level-``l`` wavelet whose support holds ``(x, ..., x)``."""
    j = l - 1
    k = min(int(x * 2**j), 2**j - 1)
    if d == 1:
        return k + 1
    # diagonal-type wavelet psi(x1) psi(x2)
    return 2 * 4**j + k * 2**j + k + 1


def _truth_coefficients(spec: TruthSpec, basis: WaveletBasis) -> CoefficientTree:
    d, L = spec.d, spec.levels
    tree = CoefficientTree(d, L)
    A = spec.resolved_amplitude
    if spec.kind == "homogeneous_smooth":
        rng = np.random.default_rng(spec.seed)
        for l in range(1, L + 1):
            u = rng.uniform(-1.0, 1.0, level_size(l, d))
            tree[l] = A * 2.0 ** (-l * (spec.s_true + d / 2.0)) * u
    elif spec.kind == "inhomogeneous_spiky":
        tree.set(1, 1, spec.background)
        point = np.full(d, spec.location + 2.0**-(L + 2)) if d > 1 else spec.location + 2.0**-(L + 2)
        for l in range(2, L + 1):
            r = _path_index(l, spec.location, d)
            sign = float(np.sign(eval_basis(basis, l, r, point))) or 1.0
            tree.set(l, r, sign * A * 2.0 ** (-l * (spec.s_true - d / 2.0)) / l**2)
    else:
        for l, r, v in spec.coefficients:
            if l > L:
                raise ValueError(f"custom coefficient at level {l} exceeds levels={L}")
            tree.set(int(l), int(r), float(v))
    return tree


def make_truth(spec: TruthSpec, basis: WaveletBasis | None = None,
               J: int | None = None) -> tuple[DensityOnGrid, CoefficientTree]:
    """Build the truth density on the grid of level ``J`` and its coefficients.

    Raises
    ------
    ValueError
        If the resulting density is not strictly positive on the grid.
    """
    J = DEFAULT_GRID_LEVEL.get(spec.d, 7) if J is None else J
    basis = WaveletBasis("haar", spec.d, J) if basis is None else basis
    if spec.levels > J:
        raise ValueError(f"truth levels {spec.levels} exceed grid level {J}")
    w0 = _truth_coefficients(spec, basis)
    link = make_link(spec.link, spec.floor)
    p0 = push_forward(synthesize(w0, basis, J), link)
    if not np.all(p0.values > 0.0):
        raise ValueError("truth density is not strictly positive on the grid")
    return p0, w0


def simulate_data(p0: DensityOnGrid, n: int, rng: np.random.Generator) -> Dataset:
    """I.i.d. draws by grid-cell sampling plus uniform jitter within the cell."""
    if n < 1:
        raise ValueError("n must be >= 1")
    m = 2**p0.J
    cells = rng.choice(p0.values.size, size=n, p=p0.cell_probabilities())
    idx = np.stack(np.unravel_index(cells, (m,) * p0.d), axis=-1)
    pts = (idx + rng.random((n, p0.d))) / m
    return Dataset(pts)


# -- contraction studies ---------------------------------------------------------


@dataclass
class StudyConfig:
    """A rate study over a grid of sample sizes.

    ``prior.n`` is overwritten by each grid value. ``error`` chooses the
    per-replicate summary: ``"tv_median"`` (posterior median of the TV
    distance of sampled densities to the truth) or ``"mean_tv"`` (TV
    distance of the posterior mean density).
    """

    truth: TruthSpec
    prior: PriorSpec
    n_grid: tuple = (500, 1000, 2000, 4000, 8000)
    replicates: int = 5
    mcmc: MCMCConfig = field(default_factory=MCMCConfig)
    error: str = "tv_median"
    seed: int = 0
    link: str = "exp"
    floor: float = 0.1
    wavelet: str = "haar"
    grid_level: int | None = None
    n_jobs: int = 1

    def __post_init__(self):
        self.n_grid = tuple(int(v) for v in self.n_grid)
        if len(self.n_grid) < 3:
            raise ValueError("n_grid needs at least 3 sample sizes")
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ValueError("n_grid must be strictly increasing")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.error not in ("tv_median", "mean_tv"):
            raise ValueError("error must be 'tv_median' or 'mean_tv'")
        if self.truth.d != self.prior.d:
            raise ValueError("truth and prior dimensions differ")

    @property
    def J(self) -> int:
        return self.grid_level or DEFAULT_GRID_LEVEL.get(self.prior.d, 7)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out.pop("n_jobs")  # execution detail, does not change results
        out["prior"]["regime"] = self.prior.regime.value
        return out

    def config_hash(self) -> str:
        return canonical_hash(self.to_dict())


@dataclass
class ReplicateRecord:
    n: int
    replicate: int
    error: float
    excluded: bool
    acceptance: float
    s_mean: float
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class StudyResult:
    records: list
    medians: dict
    rate_fit: RateFit | None
    config_hash: str
    seed: int
    n_excluded: int

    @property
    def n_total(self) -> int:
        return len(self.records)

    @property
    def excluded_fraction(self) -> float:
        return self.n_excluded / max(self.n_total, 1)

    @property
    def quality_ok(self) -> bool:
        return self.excluded_fraction <= MAX_EXCLUDED_FRACTION and self.rate_fit is not None

    def monotone_pairs(self) -> tuple[int, int]:
        """``(nonincreasing adjacent pairs, total adjacent pairs)`` of the medians."""
        ns = sorted(self.medians)
        vals = [self.medians[k] for k in ns]
        good = sum(b <= a for a, b in zip(vals, vals[1:]))
        return good, len(vals) - 1


def replicate_rngs(seed: int, n: int, replicate: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (data, chain) streams derived from ``(seed, n, replicate)``."""
    ss = np.random.SeedSequence(seed, spawn_key=(int(n), int(replicate)))
    data_ss, chain_ss = ss.spawn(2)
    return np.random.default_rng(data_ss), np.random.default_rng(chain_ss)


def _run_replicate(config: StudyConfig, p0: DensityOnGrid, n: int, rep: int,
                   error_fn: Callable | None) -> ReplicateRecord:
    t0 = time.perf_counter()
    data_rng, chain_rng = replicate_rngs(config.seed, n, rep)
    if error_fn is not None:
        err = float(error_fn(n, rep, data_rng))
        ok = math.isfinite(err) and err > 0.0
        return ReplicateRecord(n, rep, err, not ok, math.nan, math.nan, time.perf_counter() - t0)
    data = simulate_data(p0, n, data_rng)
    spec = config.prior.with_n(n)
    basis = WaveletBasis(config.wavelet, spec.d, config.J)
    link = make_link(config.link, config.floor)
    try:
        model = PosteriorModel(spec, data, link, basis)
        summary = run_chain(config.mcmc, model, reference=p0, rng=chain_rng)
        finite = np.all(np.isfinite(summary.log_post))
        if config.error == "tv_median":
            err = summary.tv_median()
        else:
            err = tv_distance(summary.mean_density, p0)
        acc = float(np.nanmean(summary.acceptance))
        s_mean = float(np.mean(summary.s_samples)) if summary.s_samples is not None else math.nan
    except FloatingPointError:
        finite, err, acc, s_mean = False, math.nan, math.nan, math.nan
    excluded = not (finite and math.isfinite(err))
    return ReplicateRecord(n, rep, float(err), bool(excluded), acc, s_mean, time.perf_counter() - t0)


def contraction_study(config: StudyConfig, error_fn: Callable | None = None) -> StudyResult:
    """Simulate, sample and summarize every ``(n, replicate)`` pair, then fit the rate.

    Parameters
    ----------
    config : StudyConfig
    error_fn : callable, optional
        Synthetic bypass ``error_fn(n, replicate, rng) -> error`` that
        replaces data simulation and sampling; used to check the harness.

    Returns
    -------
    StudyResult
        Records sorted by ``(n, replicate)``; the rate fit uses per-n
        medians over non-excluded replicates.
    """
    p0 = None
    if error_fn is None:
        basis = WaveletBasis(config.wavelet, config.truth.d, config.J)
        p0, _ = make_truth(config.truth, basis, config.J)
    tasks = [(n, rep) for n in config.n_grid for rep in range(config.replicates)]
    if config.n_jobs == 1:
        records = [_run_replicate(config, p0, n, rep, error_fn) for n, rep in tasks]
    else:
        records = Parallel(n_jobs=config.n_jobs)(
            delayed(_run_replicate)(config, p0, n, rep, error_fn) for n, rep in tasks
        )
    records.sort(key=lambda r: (r.n, r.replicate))
    medians = {}
    for n in config.n_grid:
        errs = [r.error for r in records if r.n == n and not r.excluded]
        if errs:
            medians[n] = float(np.median(errs))
    n_excluded = sum(r.excluded for r in records)
    fit = fit_rate(sorted(medians.items())) if len(medians) >= 3 else None
    return StudyResult(records, medians, fit, config.config_hash(), config.seed, n_excluded)


# -- prior diagnostics --------------------------------------------------------------


def regular_scales(t: float, d: int, L: int) -> np.ndarray:
    """Unit-scale ``t``-regular scalings ``2^{-l(t+d/2)}`` for levels ``1..L``."""
    return np.concatenate([np.full(level_size(l, d), 2.0 ** (-l * (t + d / 2.0))) for l in range(1, L + 1)])


def sup_norm_samples(scales: np.ndarray, d: int, L: int, draws: int, rng: np.random.Generator,
                     basis: WaveletBasis | None = None, shifts: np.ndarray | None = None,
                     chunk: int = 4096) -> np.ndarray:
    """Sup norms over the grid of Laplace series ``sum sigma W psi``.

    With ``shifts`` (rows of coefficient vectors) the result has shape
    ``(1 + n_shifts, draws)``: the centred norms followed by
    ``||W - w_k||_inf`` on the same draws (common random numbers).
    """
    basis = WaveletBasis("haar", d, L) if basis is None else basis
    J = max(basis.J, L) if not basis.is_haar else L
    shift_grid = None
    if shifts is not None:
        shift_grid = basis.synthesize_vectors(np.atleast_2d(shifts), L, J)
    out = np.empty((1 if shifts is None else 1 + shift_grid.shape[0], draws))
    for start in range(0, draws, chunk):
        m = min(chunk, draws - start)
        W = sample_laplace(rng, (m, scales.size)) * scales
        G = basis.synthesize_vectors(W, L, J)
        out[0, start:start + m] = np.abs(G).max(axis=1)
        if shift_grid is not None:
            for k, sg in enumerate(shift_grid):
                out[k + 1, start:start + m] = np.abs(G - sg).max(axis=1)
    return out[0] if shifts is None else out


def small_ball_table(sups: np.ndarray, p_range=(0.001, 0.5), points: int = 20) -> np.ndarray:
    """Rows ``(xi, P(||W|| <= xi))`` at empirical quantiles spanning ``p_range``."""
    sups = np.sort(np.asarray(sups))
    ps = np.geomspace(p_range[0], p_range[1], points)
    xi = np.quantile(sups, ps)
    P = np.searchsorted(sups, xi, side="right") / sups.size
    return np.column_stack([xi, P])


def fit_small_ball(table: np.ndarray, p_range=(0.001, 0.5)) -> tuple[float, float]:
    """Least-squares slope and intercept of ``log(-log P)`` on ``log xi``."""
    xi, P = table[:, 0], table[:, 1]
    keep = (P >= p_range[0]) & (P <= p_range[1]) & (P < 1.0) & (P > 0.0)
    if keep.sum() < 3:
        raise ValueError("fewer than 3 usable small-ball points")
    slope, intercept = np.polyfit(np.log(xi[keep]), np.log(-np.log(P[keep])), 1)
    return float(slope), float(intercept)


def sup_tail_table(sups: np.ndarray, points: int = 15, min_count: int = 50) -> np.ndarray:
    """Rows ``(R, P(||W|| > R))`` from the median up to the level with ``min_count`` exceedances."""
    sups = np.sort(np.asarray(sups))
    hi_q = 1.0 - min_count / sups.size
    R = np.linspace(np.quantile(sups, 0.5), np.quantile(sups, hi_q), points)
    P = 1.0 - np.searchsorted(sups, R, side="right") / sups.size
    return np.column_stack([R, P])


@dataclass
class DecenteringRow:
    z_norm: float
    xi: float
    p_shifted: float
    p_centred: float
    bound: float
    se: float

    @property
    def holds(self) -> bool:
        return self.p_shifted >= self.bound - 3.0 * self.se


def _random_shifts(sig: np.ndarray, n_shifts: int, rng: np.random.Generator,
                   z_range=(0.5, 3.0), support: int = 15) -> tuple[np.ndarray, np.ndarray]:
    """Sparse shifts on the coarsest ``support`` coefficients with ``||w||_Z`` in ``z_range``."""
    support = min(support, sig.size)
    shifts = np.zeros((n_shifts, sig.size))
    targets = rng.uniform(z_range[0], z_range[1], n_shifts)
    for k in range(n_shifts):
        m = int(rng.integers(1, 4))
        idx = rng.choice(support, size=min(m, support), replace=False)
        v = rng.standard_normal(idx.size)
        v *= targets[k] / np.abs(v).sum()
        shifts[k, idx] = v * sig[idx]
    return shifts, targets


def decentering_check(spec: PriorSpec, draws: int, rng: np.random.Generator, n_shifts: int = 20,
                      target_p: float = 0.2, basis: WaveletBasis | None = None) -> list:
    """Compare shifted and centred sup-norm ball probabilities on common draws.

    The ball radius ``xi`` is the empirical ``target_p`` quantile of the
    centred norms. Each row reports ``P(||W - w|| <= xi)`` against the
    lower bound ``exp(-||w||_Z) P(||W|| <= xi)`` and the pooled standard error.
    """
    L = effective_level(spec)
    sig = level_scales(spec, L)
    shifts, _ = _random_shifts(sig, n_shifts, rng)
    sups = sup_norm_samples(sig, spec.d, L, draws, rng, basis, shifts=shifts)
    xi = float(np.quantile(sups[0], target_p))
    p0 = float(np.mean(sups[0] <= xi))
    rows = []
    for k in range(n_shifts):
        z = z_norm(CoefficientTree.from_vector(shifts[k], spec.d, L), spec)
        p1 = float(np.mean(sups[k + 1] <= xi))
        factor = math.exp(-z)
        se = math.sqrt((p1 * (1 - p1) + factor**2 * p0 * (1 - p0)) / draws)
        rows.append(DecenteringRow(z, xi, p1, p0, factor * p0, se))
    return rows


@dataclass
class PriorDiagnostics:
    sup_tail: np.ndarray
    small_ball: np.ndarray
    small_ball_slope: float
    decentering: list
    tail_bound: float

    @property
    def decentering_ok(self) -> bool:
        return all(r.holds for r in self.decentering)


def prior_diagnostics(spec: PriorSpec, draws: int, rng: np.random.Generator,
                      basis: WaveletBasis | None = None, n_shifts: int = 20) -> PriorDiagnostics:
    """Monte-Carlo tables for sup-norm tails, small balls and decentering.

    ``tail_bound`` is the geometric bound on the sup norm of the series
    beyond ``L_max``, in units of the Laplace variables' sup.
    """
    if draws < 1000:
        raise ValueError("prior diagnostics need at least 1000 draws")
    if spec.regime is Regime.HIERARCHICAL:
        raise ValueError("prior diagnostics are defined for fixed-smoothness regimes")
    L = effective_level(spec)
    sig = level_scales(spec, L)
    sups = sup_norm_samples(sig, spec.d, L, draws, rng, basis)
    tail = sup_tail_table(sups)
    sb = small_ball_table(sups)
    try:
        slope, _ = fit_small_ball(sb)
    except ValueError:
        slope = math.nan
    rows = decentering_check(spec, draws, rng, n_shifts=n_shifts, basis=basis)
    t = spec.regularity
    # sum over l > L of sigma_l * 2^{(l-1)d/2}: per-point sup of the neglected tail per unit W
    tail_bound = 0.0
    if not spec.truncated:
        ratio = 2.0 ** (-t)
        lead = sig[-1] * 2.0 ** ((L - 1) * spec.d / 2.0) * ratio if sig.size else 0.0
        tail_bound = float(lead / (1.0 - ratio)) if t > 0 else math.inf
    return PriorDiagnostics(tail, sb, slope, rows, tail_bound)


def truth_besov_profile(w0: CoefficientTree, s: float) -> dict:
    """B^s_11, B^{s+1/2}_11 and B^s_inf,inf norms of a truth's coefficients."""
    return {
        "b11": besov_norm(w0, s, 1, 1),
        "b11_plus": besov_norm(w0, s + 0.5, 1, 1),
        "binf": besov_norm(w0, s, math.inf, math.inf),
    }
