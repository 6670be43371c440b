"""Perturbation extraction, decay fits, smallness monitors, drift accounting."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .equilibrium import Moments, moments_B
from .errors import DegenerateMomentsError
from .fdintegrals import beta_branch
from .phasegrid import GlobalEquilibrium, PhaseState, compute_moments, total_moments

__all__ = [
    "MASK_THRESHOLD",
    "PerturbationField",
    "DecayFit",
    "MonitorRecord",
    "perturbation_field",
    "perturbation_integrals",
    "decay_fit",
    "smallness_monitor",
    "spatial_gradient_norm",
    "format_fit",
]

MASK_THRESHOLD = 1e-30


@dataclass
class PerturbationField:
    f: np.ndarray
    mask: np.ndarray
    norm: float

    @property
    def n_masked(self):
        return int(self.mask.size - np.count_nonzero(self.mask))


def perturbation_field(s: PhaseState, ge: GlobalEquilibrium, threshold=MASK_THRESHOLD):
    """f = (F - m) / sqrt(m - m^2) on nodes where m - m^2 > ``threshold``.

    Masked nodes carry f = 0. The norm is the weighted L2 norm over space
    and unmasked velocity nodes.
    """
    mask = (ge.m - ge.m**2) > threshold
    f = np.zeros_like(s.F)
    f[:, mask] = (s.F[:, mask] - ge.m[mask]) / ge.weight[mask]
    norm = math.sqrt(s.space.dx * float(np.sum((f * f) @ ge.grid.weights)))
    return PerturbationField(f, mask, norm)


def spatial_gradient_norm(pf: PerturbationField, s: PhaseState):
    """||d_x f|| by periodic central differences; reported next to ||f||, never summed with it."""
    dx = s.space.dx
    if s.space.n_x < 3:
        return 0.0
    df = (np.roll(pf.f, -1, axis=0) - np.roll(pf.f, 1, axis=0)) / (2.0 * dx)
    return math.sqrt(dx * float(np.sum((df * df) @ s.velocity.weights)))


def perturbation_integrals(s: PhaseState, ge: GlobalEquilibrium, threshold=MASK_THRESHOLD):
    """Integrals of f sqrt(m - m^2) against (1, p1, p2, p3, |p|^2) over x and p."""
    pf = perturbation_field(s, ge, threshold)
    g = pf.f * ge.weight
    return s.space.dx * np.sum(g @ ge.grid.moment_basis, axis=0)


@dataclass
class DecayFit:
    """Least-squares fit of log ||f|| = intercept - rate t on [t_lo, t_hi]."""

    rate: float
    intercept: float
    r2: float
    t_lo: float
    t_hi: float
    n_samples: int
    reached_floor: bool = False

    def as_dict(self):
        return asdict(self)


def decay_fit(t, norms, *, t_lo=None, t_hi=None, floor=0.0, tau=None, min_samples=10):
    """Fit ||f(t)|| ~ C exp(-rate t).

    The window starts at ``t_lo`` (default ``2 tau`` when ``tau`` is given,
    else the first sample) and is truncated before the first norm that is
    ``<= floor``; hitting it sets ``reached_floor``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(norms, dtype=float)
    if t_lo is None:
        t_lo = t[0] + (2.0 * tau if tau is not None else 0.0)
    if t_hi is None:
        t_hi = t[-1]
    sel = (t >= t_lo) & (t <= t_hi)
    t, y = t[sel], y[sel]
    below = np.flatnonzero(y <= floor)
    reached = below.size > 0
    if reached:
        t, y = t[: below[0]], y[: below[0]]
    if len(t) < min_samples:
        raise ValueError(f"decay fit needs >= {min_samples} samples in window, got {len(t)}")
    logy = np.log(y)
    slope, intercept = np.polyfit(t, logy, 1)
    resid = logy - (slope * t + intercept)
    ss_tot = float(np.sum((logy - logy.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        # flat series: a perfect fit by a zero-rate line
        r2 = 1.0
    return DecayFit(
        rate=float(-slope),
        intercept=float(intercept),
        r2=r2,
        t_lo=float(t[0]),
        t_hi=float(t[-1]),
        n_samples=len(t),
        reached_floor=reached,
    )


def format_fit(fit: DecayFit, label="decay"):
    lines = [
        f"[{label}]",
        f"rate = {fit.rate:.10g}",
        f"intercept = {fit.intercept:.10g}",
        f"r2 = {fit.r2:.10g}",
        f"t_lo = {fit.t_lo:.10g}",
        f"t_hi = {fit.t_hi:.10g}",
        f"n_samples = {fit.n_samples}",
        f"reached_floor = {str(fit.reached_floor).lower()}",
    ]
    return "\n".join(lines) + "\n"


@dataclass
class MonitorRecord:
    """Per-state smallness monitor.

    ``ratio_*`` are max-over-cells deviations divided by ||f||; they are 0 at
    equilibrium. ``drift`` holds the change of the five f-integrals since the
    reference, scaled by (N, sqrt(N E), sqrt(N E), sqrt(N E), E) totals.
    """

    dev_N: float
    dev_P: float
    dev_E: float
    dev_B: float
    ratio_N: float
    ratio_P: float
    ratio_E: float
    ratio_B: float
    f_norm: float
    margin: float
    warning: bool
    drift: np.ndarray

    def columns(self):
        return {
            "dev_N_ratio": self.ratio_N,
            "dev_P_ratio": self.ratio_P,
            "dev_E_ratio": self.ratio_E,
            "dev_B_ratio": self.ratio_B,
            "f_int_drift_N": float(self.drift[0]),
            "f_int_drift_P": float(np.max(np.abs(self.drift[1:4]))),
            "f_int_drift_E": float(self.drift[4]),
            "margin_warning": int(self.warning),
        }


def smallness_monitor(
    s: PhaseState,
    ge: GlobalEquilibrium,
    reference_integrals=None,
    *,
    warn_fraction=1e-3,
):
    """Deviations of local moments from those of m and their ratio to ||f||.

    The reference (N, P, E) are the grid moments of m, so every deviation
    is exactly zero at F = m. ``warning`` is set when the admissibility margin beta(-ln 3) - max B
    falls below ``warn_fraction * beta(-ln 3)``.
    """
    mom = compute_moments(s)
    try:
        B = np.atleast_1d(moments_B(mom))
    except DegenerateMomentsError:
        B = np.full(s.space.n_x, np.inf)
    # same product shape as compute_moments, so F = m gives bitwise-equal rows
    ref = Moments.from_array(np.tile(ge.m, (s.F.shape[0], 1)) @ s.velocity.moment_basis)
    B0 = np.atleast_1d(moments_B(ref))
    dev_N = float(np.max(np.abs(mom.N - ref.N)))
    dev_P = float(np.max(np.linalg.norm(mom.P - ref.P, axis=-1)))
    dev_E = float(np.max(np.abs(mom.E - ref.E)))
    dev_B = float(np.max(np.abs(B - B0)))
    pf = perturbation_field(s, ge)
    norm = pf.norm

    def ratio(d):
        if d == 0.0:
            return 0.0
        return d / norm if norm > 0 else math.inf

    beta_lower = beta_branch().beta_lower
    margin = float(beta_lower - np.max(B))
    integrals = s.space.dx * np.sum((pf.f * ge.weight) @ ge.grid.moment_basis, axis=0)
    if reference_integrals is None:
        drift = np.zeros(5)
    else:
        tot = total_moments(s)
        sc = math.sqrt(abs(tot[0] * tot[4]))
        scale = np.array([abs(tot[0]), sc, sc, sc, abs(tot[4])])
        drift = (integrals - np.asarray(reference_integrals)) / scale
    return MonitorRecord(
        dev_N=dev_N,
        dev_P=dev_P,
        dev_E=dev_E,
        dev_B=dev_B,
        ratio_N=ratio(dev_N),
        ratio_P=ratio(dev_P),
        ratio_E=ratio(dev_E),
        ratio_B=ratio(dev_B),
        f_norm=norm,
        margin=margin,
        warning=bool(margin < warn_fraction * beta_lower),
        drift=drift,
    )
