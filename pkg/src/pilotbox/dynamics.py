"""Expansion kinematics, the guidance velocity field and trajectory integration."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .exceptions import ConfinementError, DomainError, IntegrationError, SingularityError
from .wavefunction import PhysParams, Superposition, _as_points, check_in_box, mode_amplitudes

DEFAULT_TOL = 1e-8
# trajectories per work unit; fixed so that results do not depend on n_jobs
CHUNK = 4096


@dataclass(frozen=True)
class Expansion:
    params: PhysParams

    def scale_factor(self, t):
        return scale_factor(t, self.params)

    def retarded_time(self, t):
        return retarded_time(t, self.params)

    @property
    def tau_limit(self) -> float:
        """Asymptote of the retarded time, L0 / v_e (infinite for a static box)."""
        p = self.params
        return math.inf if p.v_expand == 0 else p.L0 / p.v_expand


def _check_times(t):
    t = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t < 0):
        raise DomainError("times must be finite and non-negative")
    return t


def scale_factor(t, params: PhysParams):
    t = _check_times(t)
    return 1.0 + params.v_expand * t / params.L0


def retarded_time(t, params: PhysParams):
    t = _check_times(t)
    return t / (1.0 + params.v_expand * t / params.L0)


def _wave_args(sup: Superposition):
    p = sup.params
    return (np.exp(1j * sup.phases), sup.n1, sup.n2, sup.n1 ** 2 + sup.n2 ** 2,
            p.energy_unit / p.hbar, p.hbar / p.mass, p.L0, p.v_expand)


def velocity(sup: Superposition, t, x):
    """Guidance velocity at positions ``x`` (any leading shape, trailing 2).

    Raises SingularityError where the wavefunction vanishes to within the node
    floor.
    """
    t = float(_check_times(t))
    x = _as_points(x)
    L = float(sup.params.box_length(t))
    check_in_box(x, L)
    flat = np.ascontiguousarray(x.reshape(-1, 2))
    res = _kernels.guidance_many(t, flat, *_wave_args(sup))
    bad = res[:, 2] < _kernels.NODE_FLOOR
    if np.any(bad):
        loc = flat[np.argmax(bad)]
        raise SingularityError(f"wavefunction node at t={t}, x={loc.tolist()}", location=(t, loc))
    return res[:, :2].reshape(x.shape)


def divergence(sup: Superposition, t, x):
    """Divergence of the guidance velocity field at ``x``.

    With psi = exp(i theta) chi, theta quadratic in x, the velocity is
    (hbar/m) Im(grad chi / chi) + v_e x / L, so its divergence is
    (hbar/m) Im(lap chi / chi - (grad chi / chi)^2) + 2 v_e / L.
    """
    t = float(_check_times(t))
    x = _as_points(x)
    p = sup.params
    L = float(p.box_length(t))
    check_in_box(x, L)
    k1 = np.pi * sup.n1 / L
    k2 = np.pi * sup.n2 / L
    a = mode_amplitudes(sup, t)
    s1, c1 = np.sin(x[..., 0, None] * k1), np.cos(x[..., 0, None] * k1)
    s2, c2 = np.sin(x[..., 1, None] * k2), np.cos(x[..., 1, None] * k2)
    chi = (s1 * s2) @ a
    if np.any(np.abs(chi) < _kernels.NODE_FLOOR):
        raise SingularityError(f"wavefunction node at t={t}", location=(t, x))
    d1 = (c1 * s2 * k1) @ a / chi
    d2 = (s1 * c2 * k2) @ a / chi
    lap = -(s1 * s2 * (k1 ** 2 + k2 ** 2)) @ a / chi
    return p.hbar / p.mass * np.imag(lap - d1 ** 2 - d2 ** 2) + 2.0 * p.v_expand / L


@dataclass(frozen=True)
class TrajectoryPath:
    """Accepted integration nodes with quartic dense output between them.

    ``coeffs[i]`` (shape 2x4) interpolates the step from ``times[i]`` to
    ``times[i+1]``.
    """

    times: np.ndarray
    positions: np.ndarray
    coeffs: np.ndarray

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def direction(self) -> float:
        return 1.0 if self.t_end >= self.t_start else -1.0

    def __call__(self, t):
        """Position(s) at time(s) ``t`` inside the integrated interval."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        lo, hi = sorted((self.t_start, self.t_end))
        if np.any((t < lo - 1e-12 * max(1.0, abs(lo))) | (t > hi + 1e-12 * max(1.0, abs(hi)))):
            raise DomainError(f"query time outside [{lo}, {hi}]")
        if len(self.times) == 1:
            out = np.broadcast_to(self.positions[0], (len(t), 2)).copy()
            return out[0] if scalar else out
        d = self.direction
        idx = np.searchsorted(d * self.times, d * t, side="right") - 1
        idx = np.clip(idx, 0, len(self.times) - 2)
        h = self.times[idx + 1] - self.times[idx]
        theta = (t - self.times[idx]) / h
        powers = np.stack([theta, theta ** 2, theta ** 3, theta ** 4], axis=-1)
        out = self.positions[idx] + h[:, None] * np.einsum("ncj,nj->nc", self.coeffs[idx], powers)
        return out[0] if scalar else out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x1", "x2"])
            for t, (a, b) in zip(self.times, self.positions):
                w.writerow([repr(float(t)), repr(float(a)), repr(float(b))])


def _raise_for_status(status, t_last, x_last, what="trajectory"):
    if status == _kernels.STATUS_FAILED:
        raise IntegrationError(f"{what}: step underflow, node, or step budget exhausted at t={t_last}, x={list(x_last)}",
                               t=t_last, x=np.asarray(x_last))
    if status == _kernels.STATUS_ESCAPED:
        raise ConfinementError(f"{what}: left the box at t={t_last}, x={list(x_last)}",
                               t=t_last, x=np.asarray(x_last))


def integrate_trajectory(sup: Superposition, x0, t0, t1, tol=DEFAULT_TOL,
                         max_steps=_kernels.MAX_STEPS) -> TrajectoryPath:
    """Integrate the guidance equation from ``(t0, x0)`` to ``t1`` (either direction)."""
    t0, t1 = float(_check_times(t0)), float(_check_times(t1))
    x0 = np.asarray(_as_points(x0), dtype=float).reshape(2)
    check_in_box(x0, float(sup.params.box_length(t0)))
    args = _wave_args(sup)
    t_out = np.array([t1])
    cap = 1024
    while True:
        out = np.empty((1, 2))
        rec_t = np.empty(cap)
        rec_y = np.empty((cap, 2))
        rec_q = np.empty((cap, 2, 4))
        status, n, tl, a, b = _kernels.integrate_one(x0, t0, t_out, tol, max_steps, *args, out, True, rec_t, rec_y, rec_q)
        if status != _kernels.STATUS_CAPACITY:
            break
        cap *= 4
    _raise_for_status(status, tl, (a, b))
    return TrajectoryPath(rec_t[:n + 1].copy(), rec_y[:n + 1].copy(), rec_q[:n].copy())


def integrate_fixed_trajectory(sup: Superposition, y0, tau0, tau1, tol=DEFAULT_TOL,
                               max_steps=_kernels.MAX_STEPS) -> TrajectoryPath:
    """Trajectory of the static-box companion system (side L0, no expansion)."""
    y0 = np.asarray(_as_points(y0), dtype=float).reshape(2)
    check_in_box(y0, sup.params.L0)
    return integrate_trajectory(sup.companion(), y0, tau0, tau1, tol, max_steps)


@dataclass
class FlowResult:
    """Positions of many trajectories at a sequence of times.

    ``positions`` has shape (P, M, 2); rows of failed trajectories are NaN
    from the failure onwards. ``status`` uses the kernel codes (0 = ok).
    """

    times: np.ndarray
    positions: np.ndarray
    status: np.ndarray
    steps: np.ndarray
    last_state: np.ndarray

    @property
    def failed(self) -> np.ndarray:
        return self.status != _kernels.STATUS_OK

    def raise_on_failure(self):
        if np.any(self.failed):
            i = int(np.argmax(self.failed))
            _raise_for_status(int(self.status[i]), self.last_state[i, 0], self.last_state[i, 1:],
                              what=f"trajectory {i}")


def flow(sup: Superposition, x0, t0, times, tol=DEFAULT_TOL, n_jobs=1,
         max_steps=_kernels.MAX_STEPS) -> FlowResult:
    """Carry every point of ``x0`` (shape (P, 2)) from ``t0`` through ``times``.

    ``times`` must be monotone in one direction away from ``t0``. Work is cut
    into fixed chunks; with ``n_jobs > 1`` chunks run on threads (the kernel
    releases the GIL). Output does not depend on ``n_jobs``.
    """
    t0 = float(_check_times(t0))
    times = np.atleast_1d(_check_times(times)).astype(float)
    d = np.sign(times[-1] - t0) if times[-1] != t0 else 1.0
    if np.any(np.diff(d * np.concatenate([[t0], times])) < 0):
        raise DomainError("output times must be monotone away from the start time")
    x0 = np.ascontiguousarray(_as_points(x0).reshape(-1, 2), dtype=float)
    check_in_box(x0, float(sup.params.box_length(t0)))
    args = _wave_args(sup)
    chunks = [x0[i:i + CHUNK] for i in range(0, len(x0), CHUNK)]

    def run(chunk):
        return _kernels.integrate_batch(chunk, t0, times, tol, max_steps, *args)

    if n_jobs == 1 or len(chunks) <= 1:
        parts = [run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(run, chunks))
    if not parts:
        return FlowResult(times, np.empty((0, len(times), 2)), np.empty(0, dtype=np.int64),
                          np.empty(0, dtype=np.int64), np.empty((0, 3)))
    return FlowResult(times, *(np.concatenate(z) for z in zip(*parts)))
