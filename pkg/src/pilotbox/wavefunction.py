"""Exact modes of the uniformly expanding square box and their superpositions.

The box is ``[0, L(t)]^2`` with ``L(t) = L0 + v_expand * t``. Each mode is the
static-well eigenfunction written in the rescaled coordinate ``y = x / s(t)``
and evaluated at the retarded time ``tau = t / s(t)``, multiplied by the
quadratic phase that carries the expansion velocity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .exceptions import ConfigError, DomainError

# relative slack when checking that a point sits inside the closed box
_BOX_SLACK = 1e-12


@dataclass(frozen=True)
class PhysParams:
    """Physical constants and box geometry.

    Defaults are natural units (hbar = mass = L0 = 1). ``v_expand = 0`` is
    accepted and describes the static box.
    """

    hbar: float = 1.0
    mass: float = 1.0
    L0: float = 1.0
    v_expand: float = 1.0

    def __post_init__(self):
        bad = [name for name in ("hbar", "mass", "L0")
               if not (math.isfinite(getattr(self, name)) and getattr(self, name) > 0)]
        if bad:
            raise ConfigError([f"{name} must be a positive finite number" for name in bad])
        if not (math.isfinite(self.v_expand) and self.v_expand >= 0):
            raise ConfigError("v_expand must be finite and non-negative")

    def box_length(self, t):
        return self.L0 + self.v_expand * np.asarray(t, dtype=float)

    @property
    def energy_unit(self) -> float:
        """hbar^2 pi^2 / (2 m L0^2): energy of a mode per unit of n1^2 + n2^2."""
        return self.hbar ** 2 * math.pi ** 2 / (2.0 * self.mass * self.L0 ** 2)


@dataclass(frozen=True, order=True)
class Mode:
    n1: int
    n2: int

    def __post_init__(self):
        if int(self.n1) != self.n1 or int(self.n2) != self.n2 or self.n1 < 1 or self.n2 < 1:
            raise ConfigError(f"mode quantum numbers must be positive integers, got ({self.n1}, {self.n2})")

    @property
    def shell(self) -> int:
        return self.n1 ** 2 + self.n2 ** 2

    def __str__(self):
        return f"{self.n1}{self.n2}"


def mode_energy(mode: Mode, params: PhysParams) -> float:
    return params.energy_unit * mode.shell


def order_modes(N: int, seed=None) -> list[Mode]:
    """First ``N`` modes in order of increasing energy.

    Complete energy shells are kept in lexicographic ``(n1, n2)`` order. When
    ``N`` ends inside a shell, the required number of its members is drawn
    uniformly at random with ``seed`` and then sorted lexicographically.
    """
    if int(N) != N or N < 1:
        raise ConfigError(f"N must be a positive integer, got {N}")
    N = int(N)
    # every shell up to n^2 + 1 is complete once n1, n2 range over 1..n
    nmax = 1
    while nmax * nmax < N:
        nmax += 1
    nmax += 1
    candidates = sorted((Mode(a, b) for a in range(1, nmax + 1) for b in range(1, nmax + 1)),
                        key=lambda m: (m.shell, m.n1, m.n2))
    cutoff = candidates[N - 1].shell
    below = [m for m in candidates if m.shell < cutoff]
    shell = [m for m in candidates if m.shell == cutoff]
    need = N - len(below)
    if need == len(shell):
        return below + shell
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(shell), size=need, replace=False)
    return below + [shell[i] for i in sorted(picked)]


@dataclass(frozen=True)
class Superposition:
    """Equal-weight superposition of modes with per-mode phases.

    Phases are stored as fractions of a full turn (``phi / 2 pi``), which is
    how they are tabulated and serialized.
    """

    modes: tuple
    phase_fractions: tuple
    params: PhysParams = field(default_factory=PhysParams)

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(m if isinstance(m, Mode) else Mode(*m) for m in self.modes))
        object.__setattr__(self, "phase_fractions", tuple(float(p) for p in self.phase_fractions))
        problems = []
        if not self.modes:
            problems.append("superposition needs at least one mode")
        if len(set(self.modes)) != len(self.modes):
            problems.append("modes must be pairwise distinct")
        if len(self.phase_fractions) != len(self.modes):
            problems.append("one phase per mode is required")
        if any(not (0.0 <= p < 1.0) for p in self.phase_fractions):
            problems.append("phase fractions must lie in [0, 1)")
        if problems:
            raise ConfigError(problems)

    @classmethod
    def random(cls, N, params=None, seed=None):
        """Superpose the first ``N`` modes with uniformly random phases."""
        rng = np.random.default_rng(seed)
        modes = order_modes(N, rng)
        return cls(tuple(modes), tuple(rng.random(len(modes))), params or PhysParams())

    @property
    def N(self) -> int:
        return len(self.modes)

    @property
    def n1(self) -> np.ndarray:
        return np.array([m.n1 for m in self.modes], dtype=np.int64)

    @property
    def n2(self) -> np.ndarray:
        return np.array([m.n2 for m in self.modes], dtype=np.int64)

    @property
    def phases(self) -> np.ndarray:
        return 2.0 * math.pi * np.asarray(self.phase_fractions)

    @property
    def energies(self) -> np.ndarray:
        return np.array([mode_energy(m, self.params) for m in self.modes])

    def with_params(self, params: PhysParams) -> "Superposition":
        return replace(self, params=params)

    def companion(self) -> "Superposition":
        """Same modes and phases in the static box of side ``L0``.

        With zero wall speed the retarded time equals the time and the
        quadratic phase is 1, so every mode reduces to a normalized static
        eigenstate.
        """
        return self.with_params(replace(self.params, v_expand=0.0))

    def to_table(self) -> str:
        lines = ["n n1 n2 phase_over_2pi"]
        for i, (m, p) in enumerate(zip(self.modes, self.phase_fractions), start=1):
            lines.append(f"{i} {m.n1} {m.n2} {p!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_table(cls, text: str, params=None) -> "Superposition":
        modes, phases = [], []
        for line in text.splitlines():
            parts = line.replace("|", " ").replace("&", " ").split()
            if not parts or not parts[0].lstrip("-").isdigit():
                continue
            if len(parts) != 4:
                raise ConfigError(f"expected 4 columns 'n n1 n2 phase_over_2pi', got {line!r}")
            modes.append(Mode(int(parts[1]), int(parts[2])))
            phases.append(float(parts[3]))
        return cls(tuple(modes), tuple(phases), params or PhysParams())


# (n1, n2, phi/2pi) for the ten-mode wavefunction, full printed precision
APPENDIX_TABLE = (
    (1, 1, 0.5007885937046778),
    (1, 2, 0.2563559569433025),
    (2, 1, 0.0577194737040234),
    (2, 2, 0.5942444602612857),
    (1, 3, 0.9461819879073565),
    (3, 1, 0.5466682505848018),
    (2, 3, 0.1652644360494799),
    (3, 2, 0.3915951186360821),
    (1, 4, 0.9067195609839858),
    (4, 1, 0.4541288770927727),
)


def appendix_superposition(params: PhysParams | None = None) -> Superposition:
    modes = tuple(Mode(a, b) for a, b, _ in APPENDIX_TABLE)
    return Superposition(modes, tuple(p for _, _, p in APPENDIX_TABLE), params or PhysParams())


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (2,):
        raise DomainError(f"positions must have a trailing axis of length 2, got shape {x.shape}")
    return x


def check_in_box(x, L, what="position"):
    bad = (x < -_BOX_SLACK * L) | (x > L * (1.0 + _BOX_SLACK))
    if np.any(bad):
        idx = np.argwhere(bad.any(axis=-1))[0]
        raise DomainError(f"{what} {x[tuple(idx)].tolist()} outside box [0, {float(L)}]^2")


def _time_scalar(t) -> float:
    t = float(t)
    if not math.isfinite(t) or t < 0:
        raise DomainError(f"time must be finite and non-negative, got {t}")
    return t


def _spatial_factors(n1, n2, x, L):
    """sin(n1 pi x1/L) sin(n2 pi x2/L) with the mode index as the last axis."""
    k1 = np.pi * np.asarray(n1) / L
    k2 = np.pi * np.asarray(n2) / L
    return np.sin(x[..., 0, None] * k1) * np.sin(x[..., 1, None] * k2)


def _expansion_phase(params: PhysParams, t: float, x, L):
    return np.exp(1j * params.mass * params.v_expand * (x[..., 0] ** 2 + x[..., 1] ** 2)
                  / (2.0 * params.hbar * L))


def eval_mode(mode: Mode, t, x, params: PhysParams):
    """Amplitude of a single normalized mode at time ``t`` and position(s) ``x``."""
    t = _time_scalar(t)
    x = _as_points(x)
    L = float(params.box_length(t))
    check_in_box(x, L)
    tau = params.L0 * t / L
    temporal = np.exp(-1j * mode_energy(mode, params) * tau / params.hbar)
    spatial = _spatial_factors(mode.n1, mode.n2, x, L)[..., 0]
    return (2.0 / L) * temporal * _expansion_phase(params, t, x, L) * spatial


def mode_amplitudes(sup: Superposition, t: float) -> np.ndarray:
    """Complex weight of each mode at time ``t``, including 1/sqrt(N) and 2/L."""
    p = sup.params
    L = float(p.box_length(t))
    tau = p.L0 * t / L
    return (2.0 / L) / math.sqrt(sup.N) * np.exp(1j * (sup.phases - sup.energies * tau / p.hbar))


def eval_psi(sup: Superposition, t, x):
    """Wavefunction amplitude; ``x`` may carry any leading batch shape."""
    t = _time_scalar(t)
    x = _as_points(x)
    L = float(sup.params.box_length(t))
    check_in_box(x, L)
    spatial = _spatial_factors(sup.n1, sup.n2, x, L)
    return (spatial @ mode_amplitudes(sup, t)) * _expansion_phase(sup.params, t, x, L)


def density(sup: Superposition, t, x):
    """|psi|^2; the quadratic phase drops out so it is skipped."""
    t = _time_scalar(t)
    x = _as_points(x)
    L = float(sup.params.box_length(t))
    check_in_box(x, L)
    amp = _spatial_factors(sup.n1, sup.n2, x, L) @ mode_amplitudes(sup, t)
    return amp.real ** 2 + amp.imag ** 2


def eval_fixed_psi(sup: Superposition, tau, y):
    """Companion wavefunction in the static box of side ``L0`` at time ``tau``."""
    y = _as_points(y)
    check_in_box(y, sup.params.L0)
    return eval_psi(sup.companion(), tau, y)


def mode_table_energies(modes: Sequence[Mode]) -> list[int]:
    """Energies of ``modes`` in units of hbar^2 pi^2 / (2 m L0^2)."""
    return [m.shell for m in modes]
