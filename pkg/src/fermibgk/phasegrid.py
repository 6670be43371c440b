"""Phase-space grids, state storage, discrete moments and the H-functional.

Velocity space is a symmetric Cartesian midpoint grid on [-p_max, p_max]^3
(no node at p = 0 along any axis pair, exact odd-moment cancellation).
Space is a periodic interval of length ``length`` split into ``n_x`` cells;
only the p_1 component of velocity streams along it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.special import xlogy

from .equilibrium import (
    FermiParams,
    Moments,
    equilibrium_moments,
    fermi_dirac_eval,
    invert_equilibrium,
)
from .errors import InvariantViolationError, PositivityError, UsageError

__all__ = [
    "VelocityGrid",
    "SpatialGrid",
    "PhaseState",
    "GlobalEquilibrium",
    "compute_moments",
    "h_functional",
    "init_perturbed_state",
    "PerturbationSpec",
    "save_snapshot",
    "load_snapshot",
]


@dataclass(frozen=True)
class VelocityGrid:
    p_max: float
    n_p: int

    def __post_init__(self):
        if not self.p_max > 0 or self.n_p < 1:
            raise ValueError("need p_max > 0 and n_p >= 1")

    @property
    def dp(self):
        return 2.0 * self.p_max / self.n_p

    @cached_property
    def axis(self):
        # half-integer offsets are exact, so the axis is exactly antisymmetric
        return (np.arange(self.n_p) + 0.5 - 0.5 * self.n_p) * self.dp

    @cached_property
    def nodes(self):
        """Flattened (n_p^3, 3) array of node velocities."""
        g = np.meshgrid(self.axis, self.axis, self.axis, indexing="ij")
        return np.stack([x.ravel() for x in g], axis=1)

    @cached_property
    def weights(self):
        return np.full(self.n_p**3, self.dp**3)

    @cached_property
    def speed2(self):
        return np.sum(self.nodes**2, axis=1)

    @cached_property
    def moment_basis(self):
        """Columns (1, p1, p2, p3, |p|^2) times the quadrature weight."""
        phi = np.column_stack([np.ones(len(self.nodes)), self.nodes, self.speed2])
        return self.weights[:, None] * phi

    @property
    def size(self):
        return self.n_p**3

    def reflect_index(self):
        """Index permutation for p -> -p."""
        return np.arange(self.size)[::-1]

    @classmethod
    def for_equilibrium(cls, a0, n_p=32, width=6.0):
        return cls(p_max=width / math.sqrt(a0), n_p=n_p)


@dataclass(frozen=True)
class SpatialGrid:
    length: float = 1.0
    n_x: int = 1
    dimension: int = 1

    def __post_init__(self):
        if self.dimension != 1:
            raise UsageError("only one periodic spatial dimension is supported")
        if not self.length > 0 or self.n_x < 1:
            raise ValueError("need length > 0 and n_x >= 1")

    @property
    def dx(self):
        return self.length / self.n_x

    @cached_property
    def centers(self):
        return (np.arange(self.n_x) + 0.5) * self.dx


@dataclass
class PhaseState:
    """Distribution values F[x-cell, p-node] at ``time``."""

    F: np.ndarray
    space: SpatialGrid
    velocity: VelocityGrid
    time: float = 0.0

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=float)
        expected = (self.space.n_x, self.velocity.size)
        if self.F.shape != expected:
            raise ValueError(f"F has shape {self.F.shape}, expected {expected}")

    def check(self, slack=0.0):
        """Raise :class:`InvariantViolationError` unless 0 <= F <= 1 and finite."""
        F = self.F
        if not np.all(np.isfinite(F)):
            raise InvariantViolationError("state contains non-finite values")
        lo, hi = float(F.min()), float(F.max())
        if lo < -slack:
            raise InvariantViolationError(f"min F = {lo!r} < 0", extremum=lo)
        if hi > 1.0 + slack:
            raise InvariantViolationError(f"max F = {hi!r} > 1", extremum=hi)
        return self

    def copy(self, F=None, time=None):
        return PhaseState(
            self.F.copy() if F is None else F,
            self.space,
            self.velocity,
            self.time if time is None else time,
        )


def compute_moments(s: PhaseState, g: VelocityGrid | None = None) -> Moments:
    """Per-cell quadrature moments (N, P, E) of F."""
    g = s.velocity if g is None else g
    return Moments.from_array(s.F @ g.moment_basis)


def total_moments(s: PhaseState):
    """(N, P1, P2, P3, E) integrated over space and velocity."""
    return s.space.dx * np.sum(s.F @ s.velocity.moment_basis, axis=0)


def h_functional(s: PhaseState) -> float:
    """H(F) = sum dx w [F ln F + (1 - F) ln(1 - F)], with 0 ln 0 = 0."""
    s.check()
    F = s.F
    dens = xlogy(F, F) + xlogy(1.0 - F, 1.0 - F)
    return float(s.space.dx * np.sum(dens @ s.velocity.weights))


@dataclass
class GlobalEquilibrium:
    """Global Fermi-Dirac m(p) = 1/(exp(a0 |p|^2 + c0) + 1) sampled on a grid.

    ``N0`` and ``E0`` are densities per unit spatial volume. ``k`` is the grid
    sum of w (m - m^2) and is the only value of k used downstream. The grid
    is adequate when the grid moments of m match the exact moments of
    (a0, c0) to ``adequacy_tol`` relative.
    """

    a0: float
    c0: float
    N0: float
    E0: float
    grid: VelocityGrid
    adequacy_tol: float = 1e-6
    m: np.ndarray = field(init=False, repr=False)
    k: float = field(init=False)

    def __post_init__(self):
        self.m = fermi_dirac_eval(FermiParams(self.a0, np.zeros(3), self.c0), self.grid.nodes)
        self.k = float(np.sum(self.grid.weights * (self.m - self.m**2)))
        self.check_adequacy()

    @classmethod
    def from_params(cls, a0, c0, grid=None, n_p=32, adequacy_tol=1e-6):
        mom = equilibrium_moments(FermiParams(a0, np.zeros(3), c0))
        grid = VelocityGrid.for_equilibrium(a0, n_p) if grid is None else grid
        return cls(float(a0), float(c0), float(mom.N), float(mom.E), grid, adequacy_tol)

    @classmethod
    def from_moments(cls, N0, E0, grid=None, n_p=32, adequacy_tol=1e-6):
        fp = invert_equilibrium(Moments(N0, np.zeros(3), E0))
        grid = VelocityGrid.for_equilibrium(float(fp.a), n_p) if grid is None else grid
        return cls(float(fp.a), float(fp.c), float(N0), float(E0), grid, adequacy_tol)

    @classmethod
    def from_state(cls, s: PhaseState, adequacy_tol=1e-6):
        """Equilibrium whose grid moments equal the mean moments of ``s``.

        Uses the discrete inversion so that m is exactly the long-time limit
        of a conservative discrete run started from ``s``.
        """
        from .equilibrium import discrete_invert_equilibrium

        mean = total_moments(s) / s.space.length
        scale = math.sqrt(mean[0] * mean[4])
        if np.max(np.abs(mean[1:4])) > 1e-10 * scale:
            raise ValueError(f"state carries net momentum {mean[1:4]!r}; need P0 = 0")
        mom = Moments(mean[0], np.zeros(3), mean[4])
        fp = discrete_invert_equilibrium(mom, s.velocity)
        return cls(float(fp.a), float(fp.c), float(mean[0]), float(mean[4]), s.velocity, adequacy_tol)

    def check_adequacy(self):
        """Relative gap between grid moments of m and its exact moments."""
        exact = equilibrium_moments(FermiParams(self.a0, np.zeros(3), self.c0))
        w = self.grid.weights
        n_grid = float(np.sum(w * self.m))
        e_grid = float(np.sum(w * self.m * self.grid.speed2))
        rel = max(abs(n_grid / float(exact.N) - 1.0), abs(e_grid / float(exact.E) - 1.0))
        if not rel <= self.adequacy_tol:
            raise ValueError(
                f"velocity grid too coarse: grid moments off by {rel:.2e} "
                f"(tolerance {self.adequacy_tol:.1e})"
            )
        return rel

    @cached_property
    def grid_moments(self):
        """(N, P1, P2, P3, E) of m under the grid quadrature."""
        return self.m @ self.grid.moment_basis

    @cached_property
    def weight(self):
        """sqrt(m - m^2) on the grid."""
        return np.sqrt(self.m - self.m**2)

    @property
    def positivity_gap(self):
        """E0 k - 9 N0^2 / (10 a0); strictly positive on the admissible branch."""
        return self.E0 * self.k - 0.9 * self.N0**2 / self.a0

    def require_positive_gap(self):
        gap = self.positivity_gap
        if not gap > 0:
            raise PositivityError(
                f"E0 k - 9 N0^2/(10 a0) = {gap!r} <= 0; (a0, c0) = ({self.a0}, {self.c0}) "
                "is not an admissible global equilibrium"
            )
        return gap

    def uniform_state(self, space: SpatialGrid, time=0.0) -> PhaseState:
        return PhaseState(np.tile(self.m, (space.n_x, 1)), space, self.grid, time)

    @cached_property
    def basis(self):
        from .linearized import build_basis

        return build_basis(self)


@dataclass(frozen=True)
class PerturbationSpec:
    """f0(x, p) = amplitude cos(2 pi mode x / L) phi(p).

    ``shape`` is one of "e1".."e5" or "bump"; the bump is a Gaussian of
    width ``bump_width`` centred at ``bump_center``, normalised to unit norm.
    ``spatial`` is "cos" or "uniform".
    """

    amplitude: float = 1e-3
    shape: str = "e1"
    mode: int = 1
    spatial: str = "cos"
    bump_center: tuple = (0.0, 0.0, 0.0)
    bump_width: float = 0.5


def velocity_profile(ge: GlobalEquilibrium, shape: str):
    if shape in ("e1", "e2", "e3", "e4", "e5"):
        return ge.basis.e[int(shape[1]) - 1].copy()
    if shape == "bump":
        raise UsageError("bump profile needs the PerturbationSpec; use init_perturbed_state")
    raise UsageError(f"unknown perturbation shape {shape!r}")


def _bump(ge, spec):
    d2 = np.sum((ge.grid.nodes - np.asarray(spec.bump_center)) ** 2, axis=1)
    phi = np.exp(-0.5 * d2 / spec.bump_width**2)
    return phi / math.sqrt(float(np.sum(ge.grid.weights * phi**2)))


def init_perturbed_state(
    ge: GlobalEquilibrium, spec: PerturbationSpec, space: SpatialGrid
) -> tuple[PhaseState, float]:
    """Build F = m + sqrt(m - m^2) f0; returns (state, ||f0||^2).

    Raises :class:`InvariantViolationError` carrying the offending extremum
    if F would leave [0, 1].
    """
    phi = _bump(ge, spec) if spec.shape == "bump" else velocity_profile(ge, spec.shape)
    if spec.spatial == "cos":
        xs = np.cos(2.0 * math.pi * spec.mode * space.centers / space.length)
    elif spec.spatial == "uniform":
        xs = np.ones(space.n_x)
    else:
        raise UsageError(f"unknown spatial profile {spec.spatial!r}")
    f0 = spec.amplitude * xs[:, None] * phi[None, :]
    if spec.amplitude == 0:
        F = np.tile(ge.m, (space.n_x, 1))
    else:
        F = ge.m[None, :] + ge.weight[None, :] * f0
    lo, hi = float(F.min()), float(F.max())
    if lo < 0:
        raise InvariantViolationError(f"perturbation drives min F to {lo!r} < 0", extremum=lo)
    if hi > 1:
        raise InvariantViolationError(f"perturbation drives max F to {hi!r} > 1", extremum=hi)
    energy = float(space.dx * np.sum(f0**2 @ ge.grid.weights))
    return PhaseState(F, space, ge.grid), energy


_MAGIC = "FERMIBGK-SNAPSHOT v1"


def save_snapshot(path, s: PhaseState):
    """Write one text header line then F as little-endian float64, C order.

    Header: ``FERMIBGK-SNAPSHOT v1 n_x=.. n_p=.. p_max=.. length=.. time=..``
    with floats in ``repr`` form so they round-trip exactly.
    """
    header = (
        f"{_MAGIC} n_x={s.space.n_x} n_p={s.velocity.n_p} p_max={s.velocity.p_max!r} "
        f"length={s.space.length!r} time={float(s.time)!r}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(s.F, dtype="<f8").tobytes())
    return Path(path)


def load_snapshot(path) -> PhaseState:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        payload = fh.read()
    if not header.startswith(_MAGIC):
        raise ValueError(f"{path}: not a fermibgk snapshot")
    fields = dict(item.split("=", 1) for item in header[len(_MAGIC):].split())
    n_x, n_p = int(fields["n_x"]), int(fields["n_p"])
    F = np.frombuffer(payload, dtype="<f8").reshape(n_x, n_p**3).astype(float)
    space = SpatialGrid(float(fields["length"]), n_x)
    vel = VelocityGrid(float(fields["p_max"]), n_p)
    return PhaseState(F, space, vel, float(fields["time"]))
