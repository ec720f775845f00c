"""scikit-learn style wrappers.

``GuidanceFlow`` is a transformer carrying positions along the pilot-wave
flow; ``CoarseGrainedH`` fits cell densities to an ensemble of positions and
exposes the distance measures as fitted attributes.
"""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import coarse_graining as cg
from .dynamics import DEFAULT_TOL, flow
from .wavefunction import appendix_superposition, density


def _positions(X):
    X = check_array(X, dtype=np.float64, ensure_min_features=2)
    if X.shape[1] != 2:
        raise ValueError(f"expected positions with 2 columns, got {X.shape[1]}")
    return X


class GuidanceFlow(TransformerMixin, BaseEstimator):
    """Map positions at ``t_start`` to positions at ``t_end``.

    Parameters
    ----------
    superposition : Superposition, optional
        Guiding wavefunction; the ten-mode appendix wavefunction by default.
    t_start, t_end : float
        Start and end times. ``inverse_transform`` runs the flow backwards.
    tol : float
        Local error tolerance of the adaptive integrator.
    n_jobs : int
        Worker threads for integration.
    """

    def __init__(self, superposition=None, t_start=0.0, t_end=1.0, tol=DEFAULT_TOL, n_jobs=1):
        self.superposition = superposition
        self.t_start = t_start
        self.t_end = t_end
        self.tol = tol
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        _positions(X)
        self.superposition_ = self.superposition or appendix_superposition()
        self.n_features_in_ = 2
        return self

    def _carry(self, X, t_from, t_to):
        check_is_fitted(self)
        X = _positions(X)
        res = flow(self.superposition_, X, t_from, [t_to], self.tol, n_jobs=self.n_jobs)
        res.raise_on_failure()
        return res.positions[:, 0]

    def transform(self, X):
        return self._carry(X, self.t_start, self.t_end)

    def inverse_transform(self, X):
        return self._carry(X, self.t_end, self.t_start)


class CoarseGrainedH(BaseEstimator):
    """Forward-tracking coarse-grained H-function of an ensemble at time ``t``.

    After ``fit(X)``, ``h_``, ``g_`` and ``f_`` hold the three distance
    measures and ``rho_cells_`` / ``eq_cells_`` the cell densities.
    """

    def __init__(self, superposition=None, t=0.0, eps=0.05, D=8):
        self.superposition = superposition
        self.t = t
        self.eps = eps
        self.D = D

    def fit(self, X, y=None):
        X = _positions(X)
        sup = self.superposition or appendix_superposition()
        grid = cg.grid_at(sup.params, self.eps, self.t, self.D)
        self.grid_ = grid
        self.rho_cells_ = cg.bin_positions(X, grid) / (len(X) * grid.eps ** 2)
        self.eq_cells_ = cg.cg_average(lambda x: density(sup, self.t, x), grid)
        self.h_ = cg.h_bar(self.rho_cells_, self.eq_cells_, grid.eps)
        self.g_ = cg.g_bar(self.rho_cells_, self.eq_cells_, grid.eps)
        self.f_ = cg.f_bar(self.rho_cells_, self.eq_cells_, grid.eps)
        self.n_features_in_ = 2
        return self

    def score(self, X, y=None):
        """Negative H-function of ``X``: higher means closer to equilibrium."""
        return -self.fit(X).h_
