"""Scikit-learn style density estimator backed by the posterior sampler."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted

from .experiments import simulate_data
from .link import make_link
from .posterior import Dataset, MCMCConfig, PosteriorModel, run_chain
from .prior import PriorSpec, Regime
from .wavelet import WaveletBasis

__all__ = ["BesovLaplaceDensity"]


class BesovLaplaceDensity(DensityMixin, BaseEstimator):
    """Posterior-mean density estimate on ``[0, 1]^d`` under a Besov-Laplace prior.

    Parameters
    ----------
    regime : str, default="truncated"
        One of ``"rescaled"``, ``"partially_rescaled"``, ``"truncated"``,
        ``"hierarchical"``.
    s : float, default=2.0
        Regularity parameter (initial value for the hierarchical prior).
    L_max : int, default=12
        Computational truncation of the wavelet series.
    link : {"exp", "regular_floor"}, default="exp"
    floor : float, default=0.1
        Lower bound ``B`` of the regular link.
    wavelet : str, default="haar"
        ``"haar"`` or ``"daubN"``.
    grid_level : int, optional
        Output grid level; defaults to 12 for d=1 and 7 for d=2.
    hierarchical_base : {"truncated", "rescaled"}, default="truncated"
    iterations, burn_in, thinning : int
        Chain length settings in sweeps.
    random_state : int, Generator or None

    Attributes
    ----------
    density_ : DensityOnGrid
        Posterior mean density.
    summary_ : PosteriorSummary
    n_features_in_ : int

    Examples
    --------
    >>> import numpy as np
    >>> X = np.random.default_rng(0).beta(2, 5, size=(500, 1))
    >>> est = BesovLaplaceDensity(iterations=500, random_state=0).fit(X)
    >>> est.score_samples(X[:3]).shape
    (3,)
    """

    def __init__(self, regime="truncated", s=2.0, L_max=12, link="exp", floor=0.1, wavelet="haar",
                 grid_level=None, hierarchical_base="truncated", iterations=2000, burn_in=None,
                 thinning=10, random_state=None):
        self.regime = regime
        self.s = s
        self.L_max = L_max
        self.link = link
        self.floor = floor
        self.wavelet = wavelet
        self.grid_level = grid_level
        self.hierarchical_base = hierarchical_base
        self.iterations = iterations
        self.burn_in = burn_in
        self.thinning = thinning
        self.random_state = random_state

    def _validate_X(self, X, reset: bool) -> np.ndarray:
        X = check_array(X, dtype=np.float64, ensure_2d=True)
        if reset:
            if X.shape[1] not in (1, 2):
                raise ValueError("only d = 1 or d = 2 is supported")
            self.n_features_in_ = X.shape[1]
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        if np.any((X < 0.0) | (X > 1.0)):
            raise ValueError("observations must lie in [0, 1]^d")
        return X

    def fit(self, X, y=None):
        X = self._validate_X(X, reset=True)
        d = X.shape[1]
        n = max(X.shape[0], 2)
        spec = PriorSpec(Regime(self.regime), s=float(self.s), d=d, n=n, L_max=int(self.L_max),
                         hierarchical_base=self.hierarchical_base)
        J = self.grid_level or (12 if d == 1 else 7)
        basis = WaveletBasis(self.wavelet, d, J)
        model = PosteriorModel(spec, Dataset(X), make_link(self.link, self.floor), basis)
        rng = self.random_state
        if not isinstance(rng, np.random.Generator):
            seed = check_random_state(rng).randint(0, 2**31 - 1)
            rng = np.random.default_rng(seed)
        config = MCMCConfig(iterations=int(self.iterations), burn_in=self.burn_in,
                            thinning=int(self.thinning))
        self.summary_ = run_chain(config, model, output_level=max(J, model.J), rng=rng)
        self.density_ = self.summary_.mean_density
        return self

    def score_samples(self, X) -> np.ndarray:
        """Log posterior-mean density at each row of ``X``."""
        check_is_fitted(self, "density_")
        X = self._validate_X(X, reset=False)
        return np.log(self.density_(X))

    def score(self, X, y=None) -> float:
        """Total log density of ``X``."""
        return float(np.sum(self.score_samples(X)))

    def sample(self, n_samples: int = 1, random_state=None) -> np.ndarray:
        """Draw from the posterior-mean density."""
        check_is_fitted(self, "density_")
        seed = check_random_state(random_state).randint(0, 2**31 - 1)
        return simulate_data(self.density_, n_samples, np.random.default_rng(seed)).points
