"""Discretized posterior and Metropolis-within-Gibbs samplers.

The likelihood of a wavelet expansion ``w`` is
``sum_i log phi(w(X_i)) - n log int phi(w)``. Data are binned to the cells
of a working grid; for Haar bases with the working grid at the maximal
level this is exact, since ``w`` is constant on each cell.

Coefficient updates are single-site Gaussian random-walk proposals with
per-level scales (relative to the prior scale) adapted toward a target
acceptance rate during burn-in. For hierarchical priors, smoothness moves
propose ``S' = S + eps`` (reflected into ``(d, log n]``). Two moves are
available: ``"rescale"`` maps ``c -> c * sigma(S') / sigma(S)`` (the
standardized Laplace variables stay fixed) and ``"fixed"`` keeps ``c``.
Coefficients above the truncation level ``L_{S,n}`` are retained in the
state with their untruncated Laplace law as a pseudo-prior and do not
enter the likelihood, which keeps the chain on a fixed-dimensional space
with the correct marginal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from numba import njit

from .link import DensityOnGrid, ExponentialLink, LinkFunction, RegularFloorLink, push_forward
from .prior import (
    PriorSpec,
    Regime,
    effective_level,
    hyperprior,
    level_scales,
    log_prior_density,
    truncation_level,
)
from .wavelet import CoefficientTree, GridFunction, WaveletBasis, eval_basis, level_size, synthesize

__all__ = [
    "Dataset",
    "MCMCConfig",
    "ChainState",
    "PosteriorModel",
    "PosteriorSummary",
    "log_likelihood",
    "log_posterior",
    "mh_step",
    "gibbs_sweep",
    "run_chain",
    "reflect",
]


@dataclass
class Dataset:
    """I.i.d. observations in ``[0, 1]^d``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[0] < 1:
            raise ValueError("dataset needs at least one point")
        if np.any((pts < 0.0) | (pts > 1.0)) or not np.all(np.isfinite(pts)):
            raise ValueError("all points must lie in [0, 1]^d")
        self.points = pts

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def cell_counts(self, J: int) -> np.ndarray:
        m = 2**J
        cells = np.minimum((self.points * m).astype(np.int64), m - 1)
        flat = np.ravel_multi_index(tuple(cells.T), (m,) * self.d)
        return np.bincount(flat, minlength=m**self.d).astype(float)


@dataclass
class MCMCConfig:
    """Sampler settings. ``iterations``, ``burn_in`` and ``thinning`` count sweeps.

    A sweep is ``steps_per_sweep`` single-coefficient proposals (default:
    the number of updated coefficients) followed, for hierarchical priors,
    by ``s_steps`` smoothness moves.
    """

    iterations: int = 2000
    burn_in: int | None = None
    thinning: int = 10
    steps_per_sweep: int | None = None
    proposal_scales: np.ndarray | None = None
    adapt: bool = True
    target_acceptance: float = 0.234
    seed: int = 0
    s_proposal_scale: float = 0.5
    s_steps: int = 1
    s_move: str = "rescale"
    use_likelihood: bool = True
    active: list | None = None
    block_sweeps: int = 2000

    def __post_init__(self):
        if self.burn_in is None:
            self.burn_in = self.iterations // 5
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.s_move not in ("rescale", "fixed"):
            raise ValueError("s_move must be 'rescale' or 'fixed'")
        if self.proposal_scales is not None:
            self.proposal_scales = np.asarray(self.proposal_scales, dtype=float)
            if np.any(self.proposal_scales <= 0):
                raise ValueError("proposal scales must be positive")

    @property
    def n_kept(self) -> int:
        return (self.iterations - self.burn_in) // self.thinning


def reflect(s: float, lo: float, hi: float) -> float:
    """Reflect ``s`` into the half-open interval ``(lo, hi]``."""
    return _reflect(s, lo, hi)


@njit(cache=True)
def _reflect(s, lo, hi):
    width = hi - lo
    if width <= 0.0:
        return hi
    if lo < s <= hi:
        return s
    # fold onto a period of length 2 * width; the excluded endpoint ``lo``
    # (a null event for continuous proposals) is sent to ``hi``
    u = (s - lo) % (2.0 * width)
    if u > width:
        u = 2.0 * width - u
    if u <= 0.0:
        return hi
    return lo + u


# -- link evaluation inside the kernel --------------------------------------
# link_params: [floor, scale, M, pe1]; polynomial coefficients separate.


@njit(cache=True)
def _horner(coefs, x):
    acc = 0.0
    for i in range(coefs.size - 1, -1, -1):
        acc = acc * x + coefs[i]
    return acc


@njit(cache=True)
def _phi(z, link_code, link_params, poly):
    if link_code == 0:
        return math.exp(z)
    B, scale, M, pe1 = link_params[0], link_params[1], link_params[2], link_params[3]
    if z >= 1.0:
        F = 1.0 + z
    elif z <= -1.0:
        F = M * math.exp(z)
    else:
        F = _horner(poly, z) - math.exp(z - 1.0) * pe1
    return B + scale * F


@njit(cache=True)
def _logphi(z, link_code, link_params, poly):
    if link_code == 0:
        return z
    return math.log(_phi(z, link_code, link_params, poly))


@njit(cache=True)
def _scales_for(s, sig_out, active_out, level_of, regime, d, n, L_cap):
    """Scalings (untruncated) and active mask at smoothness ``s``.

    regime codes: 0 rescaled, 1 partially rescaled, 2 truncated,
    3 hierarchical-truncated, 4 hierarchical-rescaled.
    """
    Ln = int(math.ceil(math.log2(n) / (2.0 * s + d) - 1e-12))
    if Ln < 1:
        Ln = 1
    resc = n ** (-d / (2.0 * s + d))
    for k in range(level_of.size):
        l = level_of[k]
        if regime == 2 or regime == 3:
            sig_out[k] = 2.0 ** (-l * (s + d / 2.0))
            active_out[k] = l <= Ln
        elif regime == 0 or regime == 4:
            sig_out[k] = 2.0 ** (-l * (s - d / 2.0)) * resc
            active_out[k] = True
        else:
            if l <= Ln:
                sig_out[k] = 2.0 ** (-l * (s - d / 2.0))
            else:
                sig_out[k] = 2.0 ** (-l * (s - d / 2.0)) * resc / math.log(n)
            active_out[k] = True


@njit(cache=True)
def _full_likelihood(c, active, ptr, cells, vals, counts, n_data, cell_vol, w, phi, logphi,
                     link_code, link_params, poly):
    for i in range(w.size):
        w[i] = 0.0
    for k in range(c.size):
        if active[k] and c[k] != 0.0:
            for p in range(ptr[k], ptr[k + 1]):
                w[cells[p]] += c[k] * vals[p]
    Zs = 0.0
    A = 0.0
    for i in range(w.size):
        phi[i] = _phi(w[i], link_code, link_params, poly)
        logphi[i] = _logphi(w[i], link_code, link_params, poly)
        Zs += phi[i]
        A += counts[i] * logphi[i]
    Z = Zs * cell_vol
    return A - n_data * math.log(Z), Z


@njit(cache=True)
def _log_prior(c, sig):
    acc = 0.0
    for k in range(c.size):
        acc += -abs(c[k]) / sig[k] - math.log(2.0 * sig[k])
    return acc


@njit(cache=True)
def _run_block(
    c, state_f, w, phi, logphi, sig, active,
    counts, n_data, cell_vol, ptr, cells, vals,
    level_of, update_idx, regime, d, n, L_cap,
    link_code, link_params, poly, use_lik,
    choice, normals, log_us, s_normals, s_log_us,
    n_sweeps, steps_per_sweep, s_steps, s_scale, s_lo, s_hi, hier, s_rescale, log_zeta,
    sweep0, burn_in, adapt, target, log_rho, adapt_n,
    acc_lvl, prop_lvl, s_acc, thin, out_c, out_s, out_lp, out_pos,
):
    # state_f: [s, loglik, Z, logprior, loghyper]
    s = state_f[0]
    loglik = state_f[1]
    Z = state_f[2]
    logprior = state_f[3]
    loghyper = state_f[4]
    n_cells = w.size
    sig_new = np.empty_like(sig)
    act_new = np.empty_like(active)
    c_new = np.empty_like(c)
    w_new = np.empty_like(w)
    phi_new = np.empty_like(phi)
    logphi_new = np.empty_like(logphi)
    t = 0
    ts = 0
    pos = out_pos[0]
    for sweep in range(n_sweeps):
        global_sweep = sweep0 + sweep
        in_burn = global_sweep < burn_in
        for _ in range(steps_per_sweep):
            k = update_idx[choice[t]]
            lvl = level_of[k] - 1
            scale = math.exp(log_rho[lvl]) * sig[k]
            delta = scale * normals[t]
            c_old = c[k]
            c_prop = c_old + delta
            dprior = -(abs(c_prop) - abs(c_old)) / sig[k]
            dlik = 0.0
            Znew = Z
            if use_lik and active[k] and delta != 0.0:
                dA = 0.0
                dZ = 0.0
                for p in range(ptr[k], ptr[k + 1]):
                    cell = cells[p]
                    wn = w[cell] + delta * vals[p]
                    dA += counts[cell] * (_logphi(wn, link_code, link_params, poly) - logphi[cell])
                    dZ += _phi(wn, link_code, link_params, poly) - phi[cell]
                Znew = Z + dZ * cell_vol
                if Znew <= 0.0:
                    Znew = 1e-300
                dlik = dA - n_data * (math.log(Znew) - math.log(Z))
            logr = dlik + dprior
            accepted = log_us[t] < logr
            prop_lvl[lvl] += 1
            if accepted:
                acc_lvl[lvl] += 1
                c[k] = c_prop
                logprior += dprior
                if use_lik and active[k] and delta != 0.0:
                    for p in range(ptr[k], ptr[k + 1]):
                        cell = cells[p]
                        w[cell] += delta * vals[p]
                        phi[cell] = _phi(w[cell], link_code, link_params, poly)
                        logphi[cell] = _logphi(w[cell], link_code, link_params, poly)
                    Zs = 0.0
                    A = 0.0
                    for i in range(n_cells):
                        Zs += phi[i]
                        A += counts[i] * logphi[i]
                    Z = Zs * cell_vol
                    loglik = A - n_data * math.log(Z)
            if adapt and in_burn:
                adapt_n[lvl] += 1
                a = 1.0 if logr >= 0.0 else math.exp(logr)
                log_rho[lvl] += (a - target) / adapt_n[lvl] ** 0.6
            t += 1
        if hier:
            for _ in range(s_steps):
                s_prop = _reflect(s + s_scale * s_normals[ts], s_lo, s_hi)
                _scales_for(s_prop, sig_new, act_new, level_of, regime, d, n, L_cap)
                lh_new = -(n ** (d / (2.0 * s_prop + d))) - log_zeta
                if s_rescale:
                    for k in range(c.size):
                        c_new[k] = c[k] * sig_new[k] / sig[k]
                else:
                    for k in range(c.size):
                        c_new[k] = c[k]
                lp_new = _log_prior(c_new, sig_new)
                if use_lik:
                    ll_new, Z_new = _full_likelihood(c_new, act_new, ptr, cells, vals, counts, n_data,
                                                     cell_vol, w_new, phi_new, logphi_new,
                                                     link_code, link_params, poly)
                else:
                    ll_new = 0.0
                    Z_new = Z
                logr = (lh_new - loghyper) + (ll_new - loglik)
                if s_rescale:
                    # Laplace terms cancel against the Jacobian of the rescaling
                    pass
                else:
                    logr += lp_new - logprior
                if s_log_us[ts] < logr:
                    s_acc[0] += 1
                    s = s_prop
                    loghyper = lh_new
                    logprior = lp_new
                    for k in range(c.size):
                        c[k] = c_new[k]
                        sig[k] = sig_new[k]
                        active[k] = act_new[k]
                    if use_lik:
                        loglik = ll_new
                        Z = Z_new
                        for i in range(n_cells):
                            w[i] = w_new[i]
                            phi[i] = phi_new[i]
                            logphi[i] = logphi_new[i]
                s_acc[1] += 1
                ts += 1
        if (not in_burn) and ((global_sweep - burn_in + 1) % thin == 0) and pos < out_c.shape[0]:
            for k in range(c.size):
                out_c[pos, k] = c[k]
            out_s[pos] = s
            out_lp[pos] = loglik + logprior + loghyper
            pos += 1
    out_pos[0] = pos
    state_f[0] = s
    state_f[1] = loglik
    state_f[2] = Z
    state_f[3] = logprior
    state_f[4] = loghyper


_REGIME_CODE = {
    Regime.RESCALED: 0,
    Regime.PARTIALLY_RESCALED: 1,
    Regime.TRUNCATED: 2,
}


@dataclass
class ChainState:
    """Current chain position with cached likelihood ingredients."""

    coeffs: np.ndarray
    s_current: float
    sig: np.ndarray
    active: np.ndarray
    w: np.ndarray
    phi: np.ndarray
    logphi: np.ndarray
    loglik: float
    normalizer: float
    logprior: float
    loghyper: float

    @property
    def cached_log_post(self) -> float:
        return self.loglik + self.logprior + self.loghyper

    def copy(self) -> "ChainState":
        return ChainState(
            self.coeffs.copy(), self.s_current, self.sig.copy(), self.active.copy(), self.w.copy(),
            self.phi.copy(), self.logphi.copy(), self.loglik, self.normalizer, self.logprior,
            self.loghyper,
        )


class PosteriorModel:
    """Posterior for one prior, dataset, link and basis.

    ``grid_level`` is the working grid; the default is the maximal
    coefficient level for Haar (exact) and the basis grid level otherwise.
    """

    def __init__(self, spec: PriorSpec, data: Dataset, link: LinkFunction, basis: WaveletBasis,
                 grid_level: int | None = None):
        if data.d != spec.d or basis.d != spec.d:
            raise ValueError("dimension mismatch between prior, data and basis")
        self.spec = spec
        self.data = data
        self.link = link
        self.basis = basis
        self.hierarchical = spec.regime is Regime.HIERARCHICAL
        if self.hierarchical:
            self.hyper = hyperprior(spec.n, spec.d)
            if spec.hierarchical_base == "truncated":
                self.regime_code = 3
                self.L_cap = min(truncation_level(spec.d, spec.d, spec.n), spec.L_max)
            else:
                self.regime_code = 4
                self.L_cap = spec.L_max
        else:
            self.hyper = None
            self.regime_code = _REGIME_CODE[spec.regime]
            self.L_cap = effective_level(spec)
        if grid_level is None:
            grid_level = self.L_cap if basis.is_haar else max(basis.J, self.L_cap)
        if grid_level < self.L_cap:
            raise ValueError("working grid coarser than the maximal coefficient level")
        self.J = grid_level
        self.n_cells = 2 ** (grid_level * spec.d)
        self.cell_vol = 2.0 ** (-grid_level * spec.d)
        self.level_of = np.concatenate(
            [np.full(level_size(l, spec.d), l, dtype=np.int64) for l in range(1, self.L_cap + 1)]
        )
        self.dim = self.level_of.size
        self.psi = self._tabulate()
        self.counts = data.cell_counts(grid_level)
        if isinstance(link, ExponentialLink):
            self.link_code = 0
            self.link_params = np.zeros(4)
            self.poly = np.zeros(1)
        elif isinstance(link, RegularFloorLink):
            self.link_code = 1
            self.link_params = np.array([link.floor, link._scale, link._M, link._pe1])
            self.poly = np.asarray(link._poly, dtype=float)
        else:
            raise TypeError(f"unsupported link {link!r}")

    def _tabulate(self) -> sp.csr_matrix:
        rows = []
        eye_block = 256
        for start in range(0, self.dim, eye_block):
            stop = min(start + eye_block, self.dim)
            units = np.zeros((stop - start, self.dim))
            units[np.arange(stop - start), np.arange(start, stop)] = 1.0
            vals = self.basis.synthesize_vectors(units, self.L_cap, self.J)
            vals[np.abs(vals) < 1e-14] = 0.0
            rows.append(sp.csr_matrix(vals))
        return sp.vstack(rows).tocsr()

    # -- scalings --------------------------------------------------------

    def scales_at(self, s: float) -> tuple[np.ndarray, np.ndarray]:
        sig = np.empty(self.dim)
        act = np.empty(self.dim, dtype=np.bool_)
        _scales_for(float(s), sig, act, self.level_of, self.regime_code, self.spec.d,
                    float(self.spec.n), self.L_cap)
        return sig, act

    def log_hyper(self, s: float) -> float:
        if not self.hierarchical:
            return 0.0
        return float(self.hyper.logpdf(s))

    # -- states -----------------------------------------------------------

    def state_from(self, coeffs, s: float | None = None) -> ChainState:
        """Build a state with all caches computed from scratch."""
        c = np.array(coeffs.to_vector(self.L_cap) if isinstance(coeffs, CoefficientTree) else coeffs,
                     dtype=float)
        if c.size != self.dim:
            raise ValueError(f"expected {self.dim} coefficients")
        s = self.spec.s if s is None else float(s)
        sig, act = self.scales_at(s)
        w = np.empty(self.n_cells)
        phi = np.empty(self.n_cells)
        logphi = np.empty(self.n_cells)
        ptr, cells, vals = self.psi.indptr, self.psi.indices.astype(np.int64), self.psi.data
        ll, Z = _full_likelihood(c, act, ptr.astype(np.int64), cells, vals, self.counts,
                                 float(self.data.n), self.cell_vol, w, phi, logphi,
                                 self.link_code, self.link_params, self.poly)
        lp = float(np.sum(-np.abs(c) / sig - np.log(2.0 * sig)))
        return ChainState(c, s, sig, act, w, phi, logphi, float(ll), float(Z), lp, self.log_hyper(s))

    def initial_state(self, rng: np.random.Generator | None = None) -> ChainState:
        s = self.spec.s
        if self.hierarchical and rng is not None:
            s = float(self.hyper.sample(rng))
        return self.state_from(np.zeros(self.dim), s)

    def log_posterior(self, state: ChainState, use_likelihood: bool = True) -> float:
        """Full recomputation of the (unnormalized) log posterior."""
        fresh = self.state_from(state.coeffs, state.s_current)
        ll = fresh.loglik if use_likelihood else 0.0
        return ll + fresh.logprior + fresh.loghyper

    def tree(self, coeffs: np.ndarray, s: float | None = None) -> CoefficientTree:
        """Coefficient tree of the function entering the likelihood."""
        c = np.asarray(coeffs, dtype=float)
        if s is not None:
            _, act = self.scales_at(s)
            c = np.where(act, c, 0.0)
        return CoefficientTree.from_vector(c, self.spec.d, self.L_cap)

    def grid_values(self, coeff_rows: np.ndarray, s_values: np.ndarray | None = None) -> np.ndarray:
        """``w`` on the working grid for a batch of coefficient vectors."""
        C = np.atleast_2d(np.asarray(coeff_rows, dtype=float))
        if s_values is not None and self.regime_code == 3:
            masks = np.stack([self.scales_at(s)[1] for s in np.atleast_1d(s_values)])
            C = C * masks
        return np.asarray((self.psi.T @ C.T).T)

    def densities(self, coeff_rows: np.ndarray, s_values: np.ndarray | None = None) -> np.ndarray:
        W = self.grid_values(coeff_rows, s_values)
        if isinstance(self.link, ExponentialLink):
            W = W - W.max(axis=1, keepdims=True)
            V = np.exp(W)
        else:
            V = self.link.eval(W)
        return V / (V.sum(axis=1, keepdims=True) * self.cell_vol)

    # -- kernel plumbing ----------------------------------------------------

    def _advance(self, state: ChainState, config: MCMCConfig, rng: np.random.Generator,
                 n_sweeps: int, steps_per_sweep: int, update_idx: np.ndarray, sweep0: int,
                 log_rho: np.ndarray, adapt_n: np.ndarray, acc: np.ndarray, prop: np.ndarray,
                 s_acc: np.ndarray, out=None, adapt: bool | None = None, proposal=None):
        n_steps = n_sweeps * steps_per_sweep
        if proposal is None:
            choice = rng.integers(0, update_idx.size, size=n_steps)
            normals = rng.standard_normal(n_steps)
            log_us = np.log(rng.random(n_steps))
        else:
            choice, normals, log_us = proposal
        n_s = n_sweeps * config.s_steps if self.hierarchical else 0
        s_normals = rng.standard_normal(n_s) if n_s else np.zeros(1)
        s_log_us = np.log(rng.random(n_s)) if n_s else np.zeros(1)
        if out is None:
            out = (np.zeros((0, self.dim)), np.zeros(0), np.zeros(0), np.zeros(1, dtype=np.int64))
        state_f = np.array([state.s_current, state.loglik, state.normalizer, state.logprior,
                            state.loghyper])
        s_lo = float(self.spec.d)
        s_hi = math.log(self.spec.n)
        _run_block(
            state.coeffs, state_f, state.w, state.phi, state.logphi, state.sig, state.active,
            self.counts, float(self.data.n), self.cell_vol,
            self.psi.indptr.astype(np.int64), self.psi.indices.astype(np.int64), self.psi.data,
            self.level_of, update_idx, self.regime_code, float(self.spec.d), float(self.spec.n),
            self.L_cap, self.link_code, self.link_params, self.poly, config.use_likelihood,
            choice.astype(np.int64), normals, log_us, s_normals, s_log_us,
            n_sweeps, steps_per_sweep, config.s_steps, config.s_proposal_scale, s_lo, s_hi,
            self.hierarchical, config.s_move == "rescale",
            math.log(self.hyper.normalizer) if self.hierarchical else 0.0,
            sweep0, config.burn_in, config.adapt if adapt is None else adapt,
            config.target_acceptance, log_rho, adapt_n, acc, prop, s_acc, config.thinning,
            out[0], out[1], out[2], out[3],
        )
        state.s_current, state.loglik, state.normalizer, state.logprior, state.loghyper = (
            float(v) for v in state_f
        )
        return state

    def update_indices(self, config: MCMCConfig) -> np.ndarray:
        if config.active is None:
            return np.arange(self.dim, dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum([level_size(l, self.spec.d)
                                                  for l in range(1, self.L_cap + 1)])])
        idx = []
        for l, r in config.active:
            if not (1 <= l <= self.L_cap and 1 <= r <= level_size(l, self.spec.d)):
                raise ValueError(f"active index ({l}, {r}) outside the model")
            idx.append(offsets[l - 1] + r - 1)
        return np.array(sorted(set(idx)), dtype=np.int64)

    def initial_log_rho(self, config: MCMCConfig) -> np.ndarray:
        if config.proposal_scales is None:
            return np.zeros(self.L_cap)
        scales = np.resize(config.proposal_scales, self.L_cap)
        return np.log(scales)


# -- free functions ------------------------------------------------------------


def log_likelihood(coeffs: CoefficientTree, data: Dataset, link: LinkFunction,
                   basis: WaveletBasis) -> float:
    """``sum_i log phi(w(X_i)) - n log int phi(w)`` by direct basis evaluation."""
    pts = data.points if data.d > 1 else data.points[:, 0]
    w_at = np.zeros(data.n)
    for l, r, c in coeffs.items():
        w_at += c * eval_basis(basis, l, r, pts)
    grid = synthesize(coeffs, basis, max(basis.J, coeffs.max_level))
    if isinstance(link, ExponentialLink):
        m = float(grid.values.max()) if grid.values.size else 0.0
        logZ = m + math.log(np.mean(np.exp(grid.values - m)))
    else:
        logZ = math.log(np.mean(link.eval(grid.values)))
    val = float(np.sum(link.log_eval(w_at)) - data.n * logZ)
    if not math.isfinite(val):
        raise FloatingPointError("non-finite log-likelihood")
    return val


def log_posterior(coeffs: CoefficientTree, spec: PriorSpec, data: Dataset, link: LinkFunction,
                  basis: WaveletBasis) -> float:
    """Log-likelihood plus log prior density (plus log hyper-prior density)."""
    lp = log_prior_density(coeffs, spec)
    if spec.regime is Regime.HIERARCHICAL:
        lp += float(hyperprior(spec.n, spec.d).logpdf(spec.s))
    if lp == -math.inf:
        return lp
    return log_likelihood(coeffs, data, link, basis) + lp


def mh_step(state: ChainState, model: PosteriorModel, config: MCMCConfig,
            rng: np.random.Generator, proposal: tuple[int, float] | None = None):
    """One single-site random-walk step. Returns ``(new_state, accepted)``.

    ``proposal=(k, delta)`` fixes the coefficient index and perturbation.
    """
    new = state.copy()
    update_idx = np.arange(model.dim, dtype=np.int64)
    log_rho = model.initial_log_rho(config)
    if proposal is not None:
        k, delta = proposal
        lvl = model.level_of[k] - 1
        scale = math.exp(log_rho[lvl]) * new.sig[k]
        prop = (np.array([k]), np.array([delta / scale]), np.log(rng.random(1)))
    else:
        prop = None
    acc = np.zeros(model.L_cap, dtype=np.int64)
    tried = np.zeros(model.L_cap, dtype=np.int64)
    cfg = replace(config, s_steps=0) if model.hierarchical else config
    model._advance(new, cfg, rng, 1, 1, update_idx, config.burn_in, log_rho,
                   np.zeros(model.L_cap), acc, tried, np.zeros(2, dtype=np.int64), adapt=False,
                   proposal=prop)
    return new, bool(acc.sum())


def gibbs_sweep(state: ChainState, model: PosteriorModel, config: MCMCConfig,
                rng: np.random.Generator, k1: int | None = None) -> ChainState:
    """``k1`` coefficient steps at fixed ``S`` then ``config.s_steps`` moves on ``S``."""
    if not model.hierarchical:
        raise ValueError("gibbs_sweep needs a hierarchical prior")
    new = state.copy()
    k1 = model.dim if k1 is None else k1
    model._advance(new, config, rng, 1, k1, model.update_indices(config), config.burn_in,
                   model.initial_log_rho(config), np.zeros(model.L_cap),
                   np.zeros(model.L_cap, dtype=np.int64), np.zeros(model.L_cap, dtype=np.int64),
                   np.zeros(2, dtype=np.int64), adapt=False)
    return new


@dataclass
class PosteriorSummary:
    samples: np.ndarray
    s_samples: np.ndarray | None
    log_post: np.ndarray
    acceptance: np.ndarray
    s_acceptance: float | None
    proposal_scales: np.ndarray
    mean_density: DensityOnGrid
    tv_samples: np.ndarray | None
    final_state: ChainState
    model: PosteriorModel = field(repr=False)

    @property
    def kept_iterations(self) -> np.ndarray:
        return np.arange(self.samples.shape[0])

    def tv_median(self) -> float:
        if self.tv_samples is None:
            raise ValueError("no reference density was supplied")
        return float(np.median(self.tv_samples))


def run_chain(config: MCMCConfig, model: PosteriorModel, reference: DensityOnGrid | None = None,
              output_level: int | None = None, rng: np.random.Generator | None = None) -> PosteriorSummary:
    """Run the sampler and summarize the kept draws.

    The posterior mean density and the TV distances to ``reference`` are
    computed on the grid of level ``output_level`` (default: the reference
    grid, else the basis grid).
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    state = model.initial_state(rng)
    update_idx = model.update_indices(config)
    steps = config.steps_per_sweep or update_idx.size
    log_rho = model.initial_log_rho(config)
    adapt_n = np.zeros(model.L_cap)
    acc = np.zeros(model.L_cap, dtype=np.int64)
    prop = np.zeros(model.L_cap, dtype=np.int64)
    s_acc = np.zeros(2, dtype=np.int64)
    n_keep = config.n_kept
    out = (np.zeros((n_keep, model.dim)), np.zeros(n_keep), np.zeros(n_keep),
           np.zeros(1, dtype=np.int64))
    done = 0
    post_acc = np.zeros(model.L_cap, dtype=np.int64)
    post_prop = np.zeros(model.L_cap, dtype=np.int64)
    while done < config.iterations:
        # split blocks at the end of burn-in so acceptance is reported post burn-in
        stop = min(done + config.block_sweeps, config.iterations)
        if done < config.burn_in < stop:
            stop = config.burn_in
        a_blk = np.zeros_like(acc)
        p_blk = np.zeros_like(prop)
        model._advance(state, config, rng, stop - done, steps, update_idx, done, log_rho,
                       adapt_n, a_blk, p_blk, s_acc, out=out)
        if done >= config.burn_in:
            post_acc += a_blk
            post_prop += p_blk
        acc += a_blk
        prop += p_blk
        done = stop
    samples, s_samples, lp = out[0], out[1], out[2]
    with np.errstate(invalid="ignore"):
        acceptance = np.where(post_prop > 0, post_acc / np.maximum(post_prop, 1), np.nan)
    J_out = output_level or (reference.J if reference is not None else max(model.basis.J, model.J))
    mean_vals = np.zeros(2 ** (J_out * model.spec.d))
    tvs = [] if reference is not None else None
    chunk = 2048
    for start in range(0, samples.shape[0], chunk):
        rows = samples[start:start + chunk]
        dens = model.densities(rows, s_samples[start:start + chunk] if model.hierarchical else None)
        dens = _refine_rows(dens, model.J, J_out, model.spec.d)
        mean_vals += dens.sum(axis=0)
        if reference is not None:
            tvs.append(0.5 * np.abs(dens - reference.values[None, :]).sum(axis=1)
                       * 2.0 ** (-J_out * model.spec.d))
    mean_vals /= max(samples.shape[0], 1)
    mean_density = DensityOnGrid(mean_vals, J_out, model.spec.d)
    return PosteriorSummary(
        samples=samples,
        s_samples=s_samples if model.hierarchical else None,
        log_post=lp,
        acceptance=acceptance,
        s_acceptance=(s_acc[0] / s_acc[1]) if model.hierarchical and s_acc[1] else None,
        proposal_scales=np.exp(log_rho),
        mean_density=mean_density,
        tv_samples=np.concatenate(tvs) if tvs is not None else None,
        final_state=state,
        model=model,
    )


def _refine_rows(dens: np.ndarray, J_from: int, J_to: int, d: int) -> np.ndarray:
    if J_to == J_from:
        return dens
    if J_to < J_from:
        raise ValueError("output grid must be at least as fine as the working grid")
    k = 2 ** (J_to - J_from)
    m = 2**J_from
    v = dens.reshape((dens.shape[0],) + (m,) * d)
    for ax in range(1, d + 1):
        v = np.repeat(v, k, axis=ax)
    return v.reshape(dens.shape[0], -1)
