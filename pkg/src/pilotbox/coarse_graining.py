"""Coarse-graining grids, distance measures and the two H-function estimators.

Cell arrays are indexed ``[a, b]`` with ``a`` along x1 and ``b`` along x2.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DEFAULT_TOL, flow, scale_factor, retarded_time
from .ensembles import InitialDistribution, liouville_ratio, sample
from .exceptions import ConfigError, IntegrationError
from .wavefunction import PhysParams, Superposition, density

FAIL_SOFT_FRACTION = 1e-3
LOG_FLOOR = 1e-300
# cells whose equilibrium mass is below this are left out of f
F_CELL_MASS_FLOOR = 1e-12


@dataclass(frozen=True)
class CGGrid:
    """C x C coarse-graining cells of side ``eps``, each holding D x D lattice points."""

    eps: float
    C: int
    D: int
    L: float

    def __post_init__(self):
        problems = []
        if not (self.eps > 0 and self.L > 0):
            problems.append("eps and L must be positive")
        if int(self.C) != self.C or self.C < 1:
            problems.append("C must be a positive integer")
        if int(self.D) != self.D or self.D < 1:
            problems.append("D must be a positive integer")
        if not problems and abs(self.C * self.eps - self.L) > 1e-12 * self.L:
            problems.append(f"C * eps = {self.C * self.eps} does not equal L = {self.L}")
        if problems:
            raise ConfigError(problems)

    @classmethod
    def for_box(cls, eps, L, D) -> "CGGrid":
        ratio = L / eps
        C = int(round(ratio))
        if C < 1 or abs(ratio - C) > 1e-9 * ratio:
            raise ConfigError(f"box side {L} is not a multiple of the cell length {eps}")
        # snap L to C * eps so that roundoff in t_n does not trip the check
        return cls(float(eps), C, int(D), C * float(eps))

    @property
    def K(self) -> int:
        return self.C * self.D

    @property
    def delta(self) -> float:
        return self.L / self.K

    def lattice(self) -> np.ndarray:
        """Lattice points, shape (K, K, 2), point (k, l) at ((k+1/2) delta, (l+1/2) delta)."""
        s = (np.arange(self.K) + 0.5) * self.delta
        X1, X2 = np.meshgrid(s, s, indexing="ij")
        return np.stack([X1, X2], axis=-1)


def sample_times(eps, v_e, n_max, params: PhysParams | None = None):
    """Times n eps / v_e, n = 0..n_max, at which the box side is a whole number of cells."""
    if not (eps > 0 and v_e > 0):
        raise ConfigError("eps and v_e must be positive")
    return np.arange(int(n_max) + 1) * (eps / v_e)


def grid_at(params: PhysParams, eps, t, D) -> CGGrid:
    return CGGrid.for_box(eps, float(params.box_length(t)), D)


def cg_average(field, grid: CGGrid) -> np.ndarray:
    """Average a lattice field over the D x D points of every cell.

    ``field`` is either a callable evaluated on ``grid.lattice()`` or an
    array of shape (K, K).
    """
    values = field(grid.lattice()) if callable(field) else np.asarray(field, dtype=float)
    if values.shape != (grid.K, grid.K):
        raise ConfigError(f"lattice field has shape {values.shape}, expected {(grid.K, grid.K)}")
    return values.reshape(grid.C, grid.D, grid.C, grid.D).mean(axis=(1, 3))


def h_bar(rho_cells, eq_cells, eps) -> float:
    rho = np.asarray(rho_cells, dtype=float)
    eq = np.maximum(np.asarray(eq_cells, dtype=float), LOG_FLOOR)
    pos = rho > 0
    return float(eps ** 2 * np.sum(rho[pos] * np.log(rho[pos] / eq[pos])))


def g_bar(rho_cells, eq_cells, eps) -> float:
    return float(eps ** 2 * np.sum(np.abs(np.asarray(rho_cells) - np.asarray(eq_cells))))


def f_bar(rho_cells, eq_cells, eps) -> float:
    rho = np.asarray(rho_cells, dtype=float)
    eq = np.asarray(eq_cells, dtype=float)
    keep = eq * eps ** 2 >= F_CELL_MASS_FLOOR
    if not np.all(keep):
        warnings.warn(f"{int((~keep).sum())} near-empty equilibrium cells excluded from f", RuntimeWarning,
                      stacklevel=2)
    if not np.any(keep):
        return 0.0
    return float(np.mean(np.abs(rho[keep] - eq[keep]) / eq[keep]))


@dataclass
class CGReport:
    """Distance measures at one sample time.

    ``g`` and ``f`` come from the back-tracking cells when those were
    computed, otherwise from forward tracking. ``raw_mass`` is the
    back-tracked eps^2 * sum(rho_cells) before renormalization.
    """

    t: float
    h_back: float = math.nan
    h_forward: float = math.nan
    g: float = math.nan
    f: float = math.nan
    rho_cells: np.ndarray | None = field(default=None, repr=False)
    eq_cells: np.ndarray | None = field(default=None, repr=False)
    excluded_points: int = 0
    raw_mass: float = math.nan
    forward_cells: np.ndarray | None = field(default=None, repr=False)
    g_forward: float = math.nan
    f_forward: float = math.nan
    n: int | None = None
    eps: float | None = None

    def merge(self, other: "CGReport") -> "CGReport":
        """Fill fields that are missing here with those of ``other``."""
        for name in ("h_back", "h_forward", "g", "f", "g_forward", "f_forward", "raw_mass"):
            if math.isnan(getattr(self, name)) and not math.isnan(getattr(other, name)):
                setattr(self, name, getattr(other, name))
        for name in ("rho_cells", "eq_cells", "forward_cells", "eps"):
            if getattr(self, name) is None:
                setattr(self, name, getattr(other, name))
        self.excluded_points += other.excluded_points
        return self


REPORT_HEADER = ["n", "t", "h_back", "h_forward", "g", "f", "excluded_points"]


def write_reports(path, reports, time_scale=1.0):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for i, r in enumerate(reports):
            n = r.n if r.n is not None else i
            w.writerow([n, repr(float(r.t) * time_scale), repr(r.h_back), repr(r.h_forward),
                        repr(r.g), repr(r.f), r.excluded_points])


def write_cells(path, report: CGReport):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a", "b", "rho_bar", "eq_bar"])
        rho = report.rho_cells if report.rho_cells is not None else report.forward_cells
        for a in range(rho.shape[0]):
            for b in range(rho.shape[1]):
                w.writerow([a, b, repr(float(rho[a, b])), repr(float(report.eq_cells[a, b]))])


@dataclass
class Backtrack:
    """Lattice points at time ``t`` carried back to the initial time ``t0``."""

    grid: CGGrid
    t: float
    t0: float
    x_back: np.ndarray
    ok: np.ndarray
    tol: float = DEFAULT_TOL

    def matches(self, grid: CGGrid, t, t0, tol) -> bool:
        return self.grid == grid and self.t == t and self.t0 == t0 and self.tol == tol

    @property
    def n_failed(self) -> int:
        return int((~self.ok).sum())


def backtrack_lattice(sup: Superposition, t, grid: CGGrid, t0=0.0, tol=DEFAULT_TOL, n_jobs=1) -> Backtrack:
    """Integrate every lattice point of ``grid`` from ``t`` back to ``t0``.

    The result does not depend on the initial distribution, so one call can
    serve several estimates.
    """
    pts = grid.lattice()
    K = grid.K
    if t == t0:
        return Backtrack(grid, t, t0, pts, np.ones((K, K), dtype=bool), tol)
    res = flow(sup, pts.reshape(-1, 2), t, [t0], tol, n_jobs=n_jobs)
    return Backtrack(grid, t, t0, res.positions[:, 0].reshape(K, K, 2), (~res.failed).reshape(K, K), tol)


def _check_fail_soft(n_bad, total, what):
    if n_bad > FAIL_SOFT_FRACTION * total:
        raise IntegrationError(f"{what}: {n_bad} of {total} trajectories failed "
                               f"(more than {FAIL_SOFT_FRACTION:.1%})")


def backtrack_estimate(sup: Superposition, dist: InitialDistribution, t, grid: CGGrid, tol=DEFAULT_TOL,
                       backtrack: Backtrack | None = None, n_jobs=1) -> CGReport:
    """Back-tracking estimate of h, g and f at time ``t`` on ``grid``.

    Each cell value is eq_cell * sum(rho) / sum(|psi|^2) over the cell's usable
    lattice points. With every point usable this is exactly the lattice mean
    of rho; a failed point is thereby excluded from its cell's average of the
    conserved ratio rho / |psi|^2.
    """
    if backtrack is None:
        backtrack = backtrack_lattice(sup, t, grid, dist.t0, tol, n_jobs)
    pts = grid.lattice()
    eq_pts = density(sup, t, pts)
    eq_cells = cg_average(eq_pts, grid)
    ratio = np.full(eq_pts.shape, np.nan)
    ok = backtrack.ok
    ratio[ok] = liouville_ratio(dist, backtrack.x_back[ok])
    usable = ~np.isnan(ratio)
    n_bad = int((~usable).sum())
    _check_fail_soft(n_bad, usable.size, f"back-tracking at t={t}")
    rho_pts = np.where(usable, eq_pts * np.where(usable, ratio, 0.0), 0.0)
    shape = (grid.C, grid.D, grid.C, grid.D)
    rho_sum = rho_pts.reshape(shape).sum(axis=(1, 3))
    eq_sum = np.where(usable, eq_pts, 0.0).reshape(shape).sum(axis=(1, 3))
    if n_bad:
        with np.errstate(invalid="ignore", divide="ignore"):
            rho_cells = np.where(eq_sum > 0, eq_cells * rho_sum / eq_sum, 0.0)
    else:
        rho_cells = rho_sum / grid.D ** 2
    raw_mass = float(grid.eps ** 2 * rho_cells.sum())
    rho_cells = rho_cells / raw_mass
    return CGReport(t=float(t), h_back=h_bar(rho_cells, eq_cells, grid.eps), g=g_bar(rho_cells, eq_cells, grid.eps),
                    f=f_bar(rho_cells, eq_cells, grid.eps), rho_cells=rho_cells, eq_cells=eq_cells,
                    excluded_points=n_bad, raw_mass=raw_mass, eps=grid.eps)


def bin_positions(positions, grid: CGGrid) -> np.ndarray:
    """Particle counts per cell (positions on the far wall go to the last cell)."""
    idx = np.clip(np.floor(positions / grid.eps).astype(np.int64), 0, grid.C - 1)
    counts = np.zeros((grid.C, grid.C), dtype=np.int64)
    np.add.at(counts, (idx[:, 0], idx[:, 1]), 1)
    return counts


def forward_estimates(sup: Superposition, dist: InitialDistribution, times, grids, P, seed=None, tol=DEFAULT_TOL,
                      n_jobs=1, particles=None) -> list[CGReport]:
    """Forward-tracking estimates at several times from one sampled ensemble.

    Cell densities are counts / (P * eps^2), i.e. normalized so that
    eps^2 * sum(rho_cells) = 1.
    """
    times = np.asarray(times, dtype=float)
    if particles is None:
        particles = sample(dist, P, seed)
    x0 = particles.positions
    res = flow(sup, x0, dist.t0, times, tol, n_jobs=n_jobs)
    ok = ~res.failed
    n_bad = int((~ok).sum())
    _check_fail_soft(n_bad, len(x0), "forward tracking")
    reports = []
    for j, (t, grid) in enumerate(zip(times, grids)):
        counts = bin_positions(res.positions[ok, j], grid)
        rho_cells = counts / (ok.sum() * grid.eps ** 2)
        eq_cells = cg_average(lambda x: density(sup, t, x), grid)
        h = h_bar(rho_cells, eq_cells, grid.eps)
        g = g_bar(rho_cells, eq_cells, grid.eps)
        f = f_bar(rho_cells, eq_cells, grid.eps)
        reports.append(CGReport(t=float(t), h_forward=h, g=g, f=f, g_forward=g, f_forward=f, eq_cells=eq_cells,
                                forward_cells=rho_cells, excluded_points=n_bad, eps=grid.eps))
    return reports


def forward_estimate(sup, dist, t, grid, P, seed=None, tol=DEFAULT_TOL, n_jobs=1) -> CGReport:
    return forward_estimates(sup, dist, [t], [grid], P, seed, tol, n_jobs)[0]


def tilde_grid(params: PhysParams, t, eps0, D) -> CGGrid:
    """Grid whose cells grow with the box: side s(t) eps0, fixed count L0 / eps0."""
    C = params.L0 / eps0
    if abs(C - round(C)) > 1e-9 * C:
        raise ConfigError(f"eps0 {eps0} does not divide L0 {params.L0}")
    C = int(round(C))
    L = float(params.box_length(t))
    return CGGrid(L / C, C, int(D), L)


def h_tilde(sup: Superposition, dist: InitialDistribution, t, eps0, D, tol=DEFAULT_TOL, n_jobs=1,
            backtrack: Backtrack | None = None) -> float:
    """Back-tracked H-function with the cell side growing as s(t) eps0."""
    grid = tilde_grid(sup.params, t, eps0, D)
    return backtrack_estimate(sup, dist, t, grid, tol, backtrack=backtrack, n_jobs=n_jobs).h_back


def companion_h_bar(sup: Superposition, dist: InitialDistribution, tau, eps0, D, tol=DEFAULT_TOL, n_jobs=1) -> float:
    """Back-tracked H-function of the static companion box at time ``tau``."""
    if dist.t0 != 0:
        raise ConfigError("the companion system shares the initial state only when t0 = 0")
    comp = sup.companion()
    grid = CGGrid.for_box(eps0, sup.params.L0, D)
    return backtrack_estimate(comp, dist, tau, grid, tol, n_jobs=n_jobs).h_back


def rescaling_check(sup, dist, t, eps0, D, tol=DEFAULT_TOL, n_jobs=1):
    """(h_tilde(t), companion h_bar at tau(t)); equal up to integration error."""
    tau = float(retarded_time(t, sup.params))
    return (h_tilde(sup, dist, t, eps0, D, tol, n_jobs),
            companion_h_bar(sup, dist, tau, eps0, D, tol, n_jobs))


def plugin_bias_bound(C, P) -> float:
    """Leading bias (C^2 - 1) / (2P) of plug-in relative entropy between equal multinomials."""
    return (C * C - 1) / (2.0 * P)


__all__ = [
    "CGGrid", "CGReport", "Backtrack", "sample_times", "grid_at", "cg_average", "h_bar", "g_bar", "f_bar",
    "backtrack_lattice", "backtrack_estimate", "forward_estimate", "forward_estimates", "bin_positions",
    "tilde_grid", "h_tilde", "companion_h_bar", "rescaling_check", "plugin_bias_bound", "write_reports",
    "write_cells", "scale_factor",
]
