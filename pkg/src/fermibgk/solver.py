"""Operator-splitting time integration of the quantum BGK equation.

    dF/dt + p1 dF/dx = (1/tau) (FD[F] - F)

One step is Strang-split: half-step free streaming, an implicit relaxation
step, half-step free streaming. Relaxation conserves the local moments, so
the local equilibrium FD[F] and tau are computed once from the pre-step
state and the implicit update is closed-form::

    F <- (F + (dt/tau) FD) / (1 + dt/tau)

which is a convex combination of F and FD and keeps 0 <= F <= 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import perturbation_field, perturbation_integrals, smallness_monitor
from .equilibrium import (
    FermiParams,
    TauCoefficients,
    discrete_invert_equilibrium,
    fermi_dirac_eval,
    invert_equilibrium,
    moments_B,
    relaxation_frequency,
)
from .errors import AdmissibilityError, ConfigError, DegenerateMomentsError, UsageError
from .fdintegrals import beta_branch
from .phasegrid import GlobalEquilibrium, PhaseState, compute_moments, h_functional, total_moments

log = logging.getLogger(__name__)

__all__ = [
    "RunConfig",
    "LocalEquilibrium",
    "SimulationResult",
    "PicardResult",
    "CSV_COLUMNS",
    "local_equilibrium",
    "relaxation_step",
    "transport_step",
    "strang_step",
    "run_simulation",
    "picard_iteration",
    "diagnostics_record",
]

TRANSPORT_SCHEMES = ("semi-lagrangian", "upwind")
INVERSION_MODES = ("discrete", "continuous")

CSV_COLUMNS = (
    "time",
    "N_total",
    "P1_total",
    "P2_total",
    "P3_total",
    "E_total",
    "H",
    "f_l2",
    "F_min",
    "F_max",
    "B_max_margin",
)


@dataclass
class RunConfig:
    dt: float
    t_final: float
    tau: TauCoefficients = field(default_factory=TauCoefficients)
    transport: str = "semi-lagrangian"
    inversion: str = "discrete"
    snapshot_every: int = 1
    scenario: str = "custom"
    monitor: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not self.t_final >= 0:
            raise ConfigError(f"t_final must be >= 0, got {self.t_final}")
        if self.transport not in TRANSPORT_SCHEMES:
            raise ConfigError(f"transport must be one of {TRANSPORT_SCHEMES}")
        if self.inversion not in INVERSION_MODES:
            raise ConfigError(f"inversion must be one of {INVERSION_MODES}")
        if self.snapshot_every < 1:
            raise ConfigError("snapshot_every must be >= 1")

    @property
    def n_steps(self):
        return int(round(self.t_final / self.dt))

    def cfl(self, s: PhaseState):
        """Courant number of one transport half-step."""
        return s.velocity.p_max * 0.5 * self.dt / s.space.dx


@dataclass
class LocalEquilibrium:
    params: FermiParams
    F: np.ndarray
    frequency: np.ndarray
    B: np.ndarray


def _check_admissible(mom):
    branch = beta_branch()
    try:
        B = np.atleast_1d(moments_B(mom))
    except DegenerateMomentsError:
        N = np.atleast_1d(mom.N)
        internal = np.atleast_1d(mom.internal_energy)
        cell = int(np.flatnonzero(~((N > 0) & (internal > 0)))[0])
        raise AdmissibilityError(cell, math.nan, branch.beta_lower) from None
    bad = np.flatnonzero(~branch.contains(B))
    if bad.size:
        cell = int(bad[0])
        raise AdmissibilityError(cell, float(B[cell]), branch.beta_lower)
    return B


def local_equilibrium(s: PhaseState, tau: TauCoefficients, mode="discrete") -> LocalEquilibrium:
    """Per-cell local Fermi-Dirac equilibrium and relaxation frequency of ``s``.

    Raises :class:`AdmissibilityError` naming the first cell whose B is
    outside (0, beta(-ln 3)).
    """
    mom = compute_moments(s)
    B = _check_admissible(mom)
    if mode == "discrete":
        fp = discrete_invert_equilibrium(mom, s.velocity)
    elif mode == "continuous":
        fp = invert_equilibrium(mom)
    else:
        raise UsageError(f"unknown inversion mode {mode!r}")
    Feq = fermi_dirac_eval(fp, s.velocity.nodes)
    nu = np.broadcast_to(relaxation_frequency(mom, fp, tau), (s.space.n_x,))
    return LocalEquilibrium(fp, Feq, np.asarray(nu, dtype=float), B)


def _relax(F, Feq, nu, dt):
    h = dt * nu[:, None]
    return (F + h * Feq) / (1.0 + h)


def relaxation_step(s: PhaseState, dt, tau: TauCoefficients, mode="discrete") -> PhaseState:
    """Implicit relaxation over ``dt`` with FD and tau frozen at the pre-step state."""
    eq = local_equilibrium(s, tau, mode)
    return s.copy(F=_relax(s.F, eq.F, eq.frequency, dt), time=s.time + dt)


def _shift_indices(n_x, shift):
    """Integer part and fraction of a per-column shift in cells."""
    near = np.round(shift)
    # snap shifts within rounding of an integer so exact shifts stay exact
    shift = np.where(np.abs(shift - near) < 1e-12 * np.maximum(1.0, np.abs(shift)), near, shift)
    whole = np.floor(shift)
    frac = shift - whole
    return whole.astype(np.int64), frac


def transport_step(s: PhaseState, dt, scheme="semi-lagrangian") -> PhaseState:
    """Free streaming x -> x + p1 dt on the periodic grid.

    ``semi-lagrangian``: F(x, p) <- F(x - p1 dt, p) by periodic linear
    interpolation. ``upwind``: first-order finite-volume upwinding, which
    conserves the column sums exactly; bounds need Courant number <= 1.
    """
    F = s.F
    n_x = s.space.n_x
    if n_x == 1 or dt == 0:
        return s.copy(time=s.time + dt)
    p1 = s.velocity.nodes[:, 0]
    nu = p1 * dt / s.space.dx
    if scheme == "upwind":
        if np.max(np.abs(nu)) > 1.0 + 1e-12:
            log.warning("upwind Courant number %.3f exceeds 1", float(np.max(np.abs(nu))))
        pos = np.maximum(nu, 0.0)
        neg = np.minimum(nu, 0.0)
        left = np.roll(F, 1, axis=0)
        right = np.roll(F, -1, axis=0)
        out = F - pos * (F - left) - neg * (right - F)
    elif scheme == "semi-lagrangian":
        whole, frac = _shift_indices(n_x, nu)
        j = np.arange(n_x)[:, None]
        i0 = (j - whole[None, :]) % n_x
        i1 = (i0 - 1) % n_x
        cols = np.arange(F.shape[1])[None, :]
        out = (1.0 - frac) * F[i0, cols] + frac * F[i1, cols]
    else:
        raise UsageError(f"unknown transport scheme {scheme!r}")
    return s.copy(F=out, time=s.time + dt)


def strang_step(s: PhaseState, cfg: RunConfig, frozen: LocalEquilibrium | None = None):
    """Half transport, relaxation, half transport.

    With ``frozen`` the relaxation uses the given equilibrium and frequency
    instead of those of the intermediate state. Returns (new state,
    equilibrium used).
    """
    half = 0.5 * cfg.dt
    mid = transport_step(s, half, cfg.transport)
    eq = local_equilibrium(mid, cfg.tau, cfg.inversion) if frozen is None else frozen
    relaxed = mid.copy(F=_relax(mid.F, eq.F, eq.frequency, cfg.dt))
    out = transport_step(relaxed, half, cfg.transport)
    out.time = s.time + cfg.dt
    return out, eq, mid


def diagnostics_record(s: PhaseState, ge: GlobalEquilibrium, reference_integrals=None, monitor=True):
    """One CSV row (dict) of global diagnostics for ``s``."""
    tot = total_moments(s)
    mom = compute_moments(s)
    try:
        B = np.atleast_1d(moments_B(mom))
        margin = float(beta_branch().beta_lower - np.max(B))
    except DegenerateMomentsError:
        margin = -math.inf
    row = {
        "time": float(s.time),
        "N_total": float(tot[0]),
        "P1_total": float(tot[1]),
        "P2_total": float(tot[2]),
        "P3_total": float(tot[3]),
        "E_total": float(tot[4]),
        "H": h_functional(s),
        "f_l2": perturbation_field(s, ge).norm,
        "F_min": float(s.F.min()),
        "F_max": float(s.F.max()),
        "B_max_margin": margin,
    }
    if monitor:
        row.update(smallness_monitor(s, ge, reference_integrals).columns())
    return row


def _report_cfl(cfg: RunConfig, s0: PhaseState):
    if cfg.transport != "upwind" or s0.space.n_x == 1:
        return
    cfl = cfg.cfl(s0)
    log.info("upwind CFL p_max dt/(2 dx) = %.4f", cfl)
    if cfl > 1.0:
        raise ConfigError(
            f"upwind Courant number p_max dt/(2 dx) = {cfl:.3f} exceeds 1; reduce dt or n_x"
        )


@dataclass
class SimulationResult:
    records: list
    final: PhaseState
    global_equilibrium: GlobalEquilibrium
    steps: int

    def column(self, name):
        return np.array([r[name] for r in self.records])


def run_simulation(cfg: RunConfig, s0: PhaseState, ge: GlobalEquilibrium | None = None, progress=None):
    """Integrate to ``cfg.t_final`` and record diagnostics every ``snapshot_every`` steps.

    ``ge`` defaults to the equilibrium matching the mean moments of ``s0``.
    On an admissibility failure the raised :class:`AdmissibilityError`
    carries the last state reached as ``checkpoint`` (``s0`` itself when the
    initial data are already inadmissible).
    """
    s0.check()
    try:
        _check_admissible(compute_moments(s0))
    except AdmissibilityError as exc:
        exc.checkpoint = s0
        raise
    ge = GlobalEquilibrium.from_state(s0) if ge is None else ge
    _report_cfl(cfg, s0)
    ref = perturbation_integrals(s0, ge)
    records = [diagnostics_record(s0, ge, ref, cfg.monitor)]
    s = s0
    n = cfg.n_steps
    for step in range(1, n + 1):
        try:
            s, _, _ = strang_step(s, cfg)
        except AdmissibilityError as exc:
            exc.checkpoint = s
            raise
        s.time = step * cfg.dt
        if step % cfg.snapshot_every == 0 or step == n:
            records.append(diagnostics_record(s, ge, ref, cfg.monitor))
        if progress is not None:
            progress(step, s)
    return SimulationResult(records, s, ge, n)


@dataclass
class PicardResult:
    differences: list
    final: PhaseState
    trajectory: list = field(repr=False)


def _trajectory_norm(a: PhaseState, b: PhaseState):
    d = a.F - b.F
    return math.sqrt(a.space.dx * float(np.sum((d * d) @ a.velocity.weights)))


def picard_iteration(cfg: RunConfig, s0: PhaseState, n_iter: int):
    """Iterate dF'/dt + p.grad F' = (1/tau(F)) (FD[F] - F') from F^0(t) = F0.

    Each iterate is marched with the same Strang splitting as
    :func:`run_simulation`, but the relaxation at step k uses the
    equilibrium and frequency of the previous iterate's half-transported
    state at step k. The fixed point is therefore the direct solution.
    ``differences[n]`` is max_k ||F^{n+1}(t_k) - F^n(t_k)||.
    """
    s0.check()
    _report_cfl(cfg, s0)
    n = cfg.n_steps
    half = 0.5 * cfg.dt
    prev = [s0] * (n + 1)
    diffs = []
    for _ in range(n_iter):
        frozen = [
            local_equilibrium(transport_step(prev[k], half, cfg.transport), cfg.tau, cfg.inversion)
            for k in range(n)
        ]
        traj = [s0]
        s = s0
        for k in range(n):
            try:
                s, _, _ = strang_step(s, cfg, frozen=frozen[k])
            except AdmissibilityError as exc:
                exc.checkpoint = s
                raise
            s.time = (k + 1) * cfg.dt
            traj.append(s)
        diffs.append(max(_trajectory_norm(a, b) for a, b in zip(traj, prev)))
        prev = traj
    return PicardResult(diffs, prev[-1], prev)
