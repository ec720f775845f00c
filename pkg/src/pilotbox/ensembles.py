"""Initial non-equilibrium densities, sampling, and Liouville transport."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, optimize

from .dynamics import DEFAULT_TOL, divergence, flow, velocity
from .exceptions import ConfigError, DomainError, EnvelopeError, IntegrationError, SingularityError
from .wavefunction import Superposition, _as_points, check_in_box, density

KINDS = ("equilibrium", "rho0", "rho1", "rho2", "grid")
# initial |psi|^2 below this multiple of 4/L0^2 makes the Liouville ratio singular
RATIO_FLOOR = 1e-24
ENVELOPE_FACTOR = 1.05
# points drawn per independent random stream
SAMPLE_BLOCK = 1 << 16
_GAUSS_NODES = 16


@dataclass(frozen=True, eq=False)
class InitialDistribution:
    """A normalized density on the box at time ``t0``.

    ``values`` / ``cell_length`` describe piecewise-constant kinds (rho1 and
    grid); ``mix_weight`` is the rho0 fraction of rho2.
    """

    kind: str
    sup: Superposition
    t0: float = 0.0
    cg_length: float | None = None
    mix_weight: float = 0.1
    values: np.ndarray | None = field(default=None, repr=False)
    cell_length: float | None = None

    def __post_init__(self):
        problems = []
        if self.kind not in KINDS:
            problems.append(f"unknown distribution kind {self.kind!r}; expected one of {KINDS}")
        if not (0.0 <= self.mix_weight <= 1.0):
            problems.append("mix_weight must lie in [0, 1]")
        if self.t0 < 0:
            problems.append("t0 must be non-negative")
        if self.kind in ("rho1", "grid"):
            if self.values is None or self.cell_length is None:
                problems.append(f"{self.kind} needs cell values and a cell length")
            else:
                v = np.asarray(self.values, dtype=float)
                if v.ndim != 2 or v.shape[0] != v.shape[1]:
                    problems.append("cell values must be a square 2D array")
                elif np.any(v < 0) or not np.all(np.isfinite(v)):
                    problems.append("cell values must be finite and non-negative")
                elif abs(v.shape[0] * self.cell_length - self.box_length) > 1e-9 * self.box_length:
                    problems.append("cells x cell_length must cover the box exactly")
                else:
                    mass = v.sum() * self.cell_length ** 2
                    if abs(mass - 1.0) > 1e-8:
                        problems.append(f"cell values integrate to {mass}, not 1")
                object.__setattr__(self, "values", v)
        if problems:
            raise ConfigError(problems)

    @property
    def box_length(self) -> float:
        return float(self.sup.params.box_length(self.t0))

    @property
    def piecewise_constant(self) -> bool:
        return self.kind in ("rho1", "grid")

    def __call__(self, x):
        return eval_initial_density(self, x)


def equilibrium(sup: Superposition, t0=0.0) -> InitialDistribution:
    return InitialDistribution("equilibrium", sup, t0)


def rho0(sup: Superposition, t0=0.0) -> InitialDistribution:
    """Ground-state density (4/L^2) sin^2(pi x1/L) sin^2(pi x2/L)."""
    return InitialDistribution("rho0", sup, t0)


def rho2(sup: Superposition, mix_weight=0.1, t0=0.0) -> InitialDistribution:
    """(1 - w) |psi|^2 + w rho0."""
    return InitialDistribution("rho2", sup, t0, mix_weight=mix_weight)


def grid_distribution(values, cell_length, sup: Superposition, t0=0.0) -> InitialDistribution:
    return InitialDistribution("grid", sup, t0, values=np.asarray(values, dtype=float), cell_length=cell_length)


def _cell_quadrature(fn, L, C, nodes=_GAUSS_NODES):
    """Cell averages of ``fn`` on a CxC partition of [0, L]^2 by Gauss-Legendre."""
    g, w = np.polynomial.legendre.leggauss(nodes)
    h = L / C
    centers = (np.arange(C) + 0.5) * h
    pts = (centers[:, None] + 0.5 * h * g[None, :]).ravel()
    X1, X2 = np.meshgrid(pts, pts, indexing="ij")
    vals = fn(np.stack([X1, X2], axis=-1)).reshape(C, nodes, C, nodes)
    return 0.25 * np.einsum("aibj,i,j->ab", vals, w, w)


def build_rho1(sup: Superposition, t0=0.0, cg_length=1 / 16) -> InitialDistribution:
    """Equilibrium density coarse-grained over cells of side ``cg_length``."""
    L = float(sup.params.box_length(t0))
    ratio = L / cg_length
    C = int(round(ratio))
    if C < 1 or abs(ratio - C) > 1e-9 * max(1.0, ratio):
        raise ConfigError(f"cg_length {cg_length} does not divide the box side {L}")
    cells = _cell_quadrature(lambda x: density(sup, t0, x), L, C)
    # quadrature is exact to roundoff; remove the residual so the mass is 1
    cells = cells / (cells.sum() * (L / C) ** 2)
    return InitialDistribution("rho1", sup, t0, cg_length=cg_length, values=cells, cell_length=L / C)


def _rho0_values(x, L):
    return (4.0 / L ** 2) * np.sin(np.pi * x[..., 0] / L) ** 2 * np.sin(np.pi * x[..., 1] / L) ** 2


def eval_initial_density(dist: InitialDistribution, x):
    x = _as_points(x)
    L = dist.box_length
    check_in_box(x, L)
    if dist.kind == "equilibrium":
        return density(dist.sup, dist.t0, x)
    if dist.kind == "rho0":
        return _rho0_values(x, L)
    if dist.kind == "rho2":
        w = dist.mix_weight
        return (1.0 - w) * density(dist.sup, dist.t0, x) + w * _rho0_values(x, L)
    C = dist.values.shape[0]
    idx = np.clip(np.floor(x / dist.cell_length).astype(np.int64), 0, C - 1)
    return dist.values[idx[..., 0], idx[..., 1]]


def density_maximum(dist: InitialDistribution, scan=101) -> float:
    """Maximum of the density: grid scan followed by bounded local refinement."""
    if dist.piecewise_constant:
        return float(dist.values.max())
    L = dist.box_length
    s = np.linspace(0.0, L, scan)
    X1, X2 = np.meshgrid(s, s, indexing="ij")
    pts = np.stack([X1, X2], axis=-1).reshape(-1, 2)
    vals = eval_initial_density(dist, pts)
    best = float(vals.max())
    for i in np.argsort(vals)[-5:]:
        res = optimize.minimize(lambda p: -float(eval_initial_density(dist, p)), pts[i],
                                method="L-BFGS-B", bounds=[(0.0, L), (0.0, L)])
        best = max(best, -float(res.fun))
    return best


@dataclass(frozen=True, eq=False)
class ParticleSet:
    positions: np.ndarray
    t: float
    seed: int | None

    def __len__(self):
        return len(self.positions)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2"])
            for a, b in self.positions:
                w.writerow([repr(float(a)), repr(float(b))])

    @classmethod
    def from_csv(cls, path, t=0.0, seed=None):
        pos = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(pos, t, seed)


def _sample_block(dist, n, M, rng):
    L = dist.box_length
    out = np.empty((n, 2))
    filled = 0
    while filled < n:
        batch = max(1024, int(1.3 * (n - filled) * M * L * L))
        cand = rng.random((batch, 2)) * L
        u = rng.random(batch) * M
        f = eval_initial_density(dist, cand)
        if np.any(f > M):
            raise EnvelopeError(f"density {f.max()} exceeds envelope {M}")
        acc = cand[u < f]
        take = min(len(acc), n - filled)
        out[filled:filled + take] = acc[:take]
        filled += take
    return out


def sample(dist: InitialDistribution, P: int, seed=None, envelope=None) -> ParticleSet:
    """Draw ``P`` positions from ``dist`` by rejection from a uniform proposal.

    Points are produced in blocks of ``SAMPLE_BLOCK``; block ``i`` uses the
    i-th child stream of ``SeedSequence(seed)``, so any subset of blocks can be
    regenerated independently and in any order.
    """
    if int(P) != P or P < 1:
        raise ConfigError(f"P must be a positive integer, got {P}")
    P = int(P)
    M = ENVELOPE_FACTOR * density_maximum(dist) if envelope is None else float(envelope)
    ss = np.random.SeedSequence(seed)
    n_blocks = math.ceil(P / SAMPLE_BLOCK)
    blocks = []
    for i, child in enumerate(ss.spawn(n_blocks)):
        n = min(SAMPLE_BLOCK, P - i * SAMPLE_BLOCK)
        blocks.append(_sample_block(dist, n, M, np.random.default_rng(child)))
    return ParticleSet(np.concatenate(blocks), dist.t0, seed)


def liouville_ratio(dist: InitialDistribution, x_back):
    """rho / |psi|^2 at initial-time positions; NaN where |psi|^2 is below the floor."""
    x_back = _as_points(x_back)
    eq = density(dist.sup, dist.t0, x_back)
    rho = eval_initial_density(dist, x_back)
    L = dist.box_length
    singular = ~(eq >= RATIO_FLOOR * 4.0 / L ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(singular, np.nan, rho / np.where(singular, 1.0, eq))
    return ratio


def transport_density(dist: InitialDistribution, sup: Superposition, t, x, tol=DEFAULT_TOL):
    """Non-equilibrium density at time ``t`` by back-tracking to ``dist.t0``.

    rho(t, x) = |psi(t, x)|^2 rho(t0, x_back) / |psi(t0, x_back)|^2.
    """
    x = _as_points(x)
    shape = x.shape[:-1]
    flat = x.reshape(-1, 2)
    t = float(t)
    if t < dist.t0:
        raise DomainError("transport runs from the initial time forwards only")
    if t == dist.t0:
        return eval_initial_density(dist, x)
    res = flow(sup, flat, t, [dist.t0], tol)
    res.raise_on_failure()
    ratio = liouville_ratio(dist, res.positions[:, 0])
    if np.any(np.isnan(ratio)):
        i = int(np.argmax(np.isnan(ratio)))
        raise SingularityError(f"|psi(t0)|^2 vanishes at back-tracked point {res.positions[i, 0].tolist()}",
                               location=(dist.t0, res.positions[i, 0]))
    return (density(sup, t, flat) * ratio).reshape(shape)


def transport_along(dist: InitialDistribution, sup: Superposition, x0, t1, tol=DEFAULT_TOL):
    """Carry one point forward together with its density.

    Integrates dx/dt = v and d(ln rho)/dt = -div v from ``(dist.t0, x0)`` to
    ``t1`` and returns ``(x(t1), rho(t1, x(t1)))``. Unlike
    :func:`transport_density` no back-tracking is involved.
    """
    x0 = np.asarray(_as_points(x0), dtype=float).reshape(2)
    rho_start = float(eval_initial_density(dist, x0))
    if not rho_start > 0:
        raise DomainError(f"initial density vanishes at {x0.tolist()}")

    def rhs(t, y):
        L = float(sup.params.box_length(t))
        x = np.clip(y[:2], 0.0, L)
        return np.append(velocity(sup, t, x), -divergence(sup, t, x))

    sol = integrate.solve_ivp(rhs, (dist.t0, float(t1)), np.append(x0, math.log(rho_start)), method="RK45",
                              rtol=tol, atol=tol)
    if not sol.success:
        raise IntegrationError(f"density transport failed: {sol.message}", t=float(sol.t[-1]), x=sol.y[:2, -1])
    y = sol.y[:, -1]
    return y[:2], math.exp(y[2])


def save_grid(path, values, cell_length):
    values = np.asarray(values, dtype=float)
    header = f"cells={values.shape[0]} length={cell_length!r}"
    np.savetxt(path, values, header=header, comments="", fmt="%.17g")


def load_grid(path, sup: Superposition, t0=0.0, length_scale=1.0) -> InitialDistribution:
    """Read a grid density file whose first line is ``cells=<C> length=<cell_length>``.

    File values are converted to internal units by dividing lengths by
    ``length_scale`` (densities scale with its square).
    """
    text = Path(path).read_text().splitlines()
    if not text:
        raise ConfigError(f"{path}: empty grid file")
    try:
        meta = dict(item.split("=", 1) for item in text[0].split())
        C = int(meta["cells"])
        cell_length = float(meta["length"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: bad header {text[0]!r}, expected 'cells=<C> length=<cell_length>'") from exc
    values = np.loadtxt(text[1:], ndmin=2)
    if values.shape != (C, C):
        raise ConfigError(f"{path}: expected {C}x{C} values, found {values.shape}")
    return grid_distribution(values * length_scale ** 2, cell_length / length_scale, sup, t0)
