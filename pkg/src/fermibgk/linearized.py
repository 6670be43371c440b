"""Linearization of the relaxation operator around a global equilibrium m.

Perturbations are written F = m + sqrt(m - m^2) f. The five collision
invariants weighted by sqrt(m - m^2) span the null space of L = P - I,
where P is the orthogonal projection onto that span under the grid inner
product <f, g> = sum_p w f g.

Closed forms used for the orthonormal basis (with k = sum w (m - m^2) and
D = E0 k - 9 N0^2 / (10 a0) > 0)::

    e1 = k^(-1/2) sqrt(m - m^2)
    e_{i+1} = (2 a0 / N0)^(1/2) p_i sqrt(m - m^2)          i = 1, 2, 3
    e5 = (2 a0 k / (5 D))^(1/2) (|p|^2 - 3 N0 / (2 a0 k)) sqrt(m - m^2)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .equilibrium import (
    FermiParams,
    Moments,
    discrete_invert_equilibrium,
    fermi_dirac_eval,
    invert_equilibrium,
)
from .fdintegrals import fd_integral
from .errors import AdmissibilityError, OutOfBranchError, UsageError

__all__ = [
    "OrthoBasis",
    "CoefficientDerivatives",
    "MicroMacro",
    "build_basis",
    "gram_schmidt_basis",
    "project_P",
    "apply_L",
    "inner",
    "grid_norm",
    "linearization_residual",
    "coefficient_derivatives",
    "equilibrium_gateaux",
    "transition_params",
    "micro_macro_decompose",
    "positivity_gap_continuous",
    "random_direction",
    "run_lincheck",
    "corrupt_basis",
    "LincheckReport",
    "CheckItem",
]


@dataclass
class OrthoBasis:
    """Rows ``e[0..4]`` are e1..e5 sampled on the velocity grid."""

    e: np.ndarray
    weights: np.ndarray

    @property
    def gram(self):
        return (self.e * self.weights) @ self.e.T

    def coefficients(self, f):
        """<f, e_i> for i = 1..5 along the last axis of ``f``."""
        return np.asarray(f) @ (self.e * self.weights).T


def inner(f, g, weights):
    return np.sum(np.asarray(f) * np.asarray(g) * weights, axis=-1)


def grid_norm(f, weights):
    return np.sqrt(inner(f, f, weights))


def build_basis(ge, form="closed") -> OrthoBasis:
    """Orthonormal basis e1..e5 sampled on the velocity grid.

    ``form="closed"`` uses the simplified normalisations in terms of
    (a0, N0, E0, k); these rely on continuum integration-by-parts identities
    and are orthonormal on the grid only up to its quadrature error.
    ``form="quadrature"`` evaluates every normalising integral of the
    defining expressions with the grid weights, which makes the result
    orthonormal to rounding on any symmetric grid.

    Raises :class:`~fermibgk.errors.PositivityError` if
    E0 k - 9 N0^2/(10 a0) <= 0.
    """
    gap = ge.require_positive_gap()
    a0, N0, k = ge.a0, ge.N0, ge.k
    wt = ge.weight
    p = ge.grid.nodes
    p2 = ge.grid.speed2
    w = ge.grid.weights
    e = np.empty((5, ge.grid.size))
    e[0] = wt / math.sqrt(k)
    if form == "closed":
        e[1:4] = math.sqrt(2.0 * a0 / N0) * p.T * wt
        e[4] = math.sqrt(0.4 * a0 * k / gap) * (p2 - 1.5 * N0 / (a0 * k)) * wt
    elif form == "quadrature":
        mm = wt**2
        e[1:4] = p.T * wt / np.sqrt((p.T**2 * mm) @ w)[:, None]
        num = (p2 - np.sum(w * p2 * mm) / k) * wt
        e[4] = num / grid_norm(num, w)
    else:
        raise UsageError(f"unknown basis form {form!r}")
    return OrthoBasis(e, w)


def gram_schmidt_basis(ge) -> OrthoBasis:
    """Modified Gram-Schmidt on (1, p1, p2, p3, |p|^2) sqrt(m - m^2).

    Independent of the closed forms; used to cross-check them.
    """
    w = ge.grid.weights
    raw = np.vstack([np.ones(ge.grid.size), ge.grid.nodes.T, ge.grid.speed2]) * ge.weight
    out = np.empty_like(raw)
    for i, v in enumerate(raw):
        v = v.copy()
        for j in range(i):
            v -= inner(v, out[j], w) * out[j]
        out[i] = v / grid_norm(v, w)
    return OrthoBasis(out, w)


def project_P(f, basis: OrthoBasis):
    """P f = sum_i <f, e_i> e_i; acts on the last axis."""
    return basis.coefficients(f) @ basis.e


def apply_L(f, basis: OrthoBasis):
    """L f = P f - f."""
    return project_P(f, basis) - f


def linearization_residual(ge, g, eps, *, mode="discrete", basis=None):
    """r(eps) = || (F(m + eps s g) - m) / s - eps P g ||, s = sqrt(m - m^2).

    ``F(.)`` is the local Fermi-Dirac equilibrium of the perturbed state,
    obtained with the discrete or continuous inversion.
    """
    basis = ge.basis if basis is None else basis
    g = np.asarray(g, dtype=float)
    w = ge.grid.weights
    F = ge.m + eps * ge.weight * g
    mom = Moments.from_array(F @ ge.grid.moment_basis)
    try:
        if mode == "discrete":
            fp = discrete_invert_equilibrium(mom, ge.grid)
        elif mode == "continuous":
            fp = invert_equilibrium(mom)
        else:
            raise UsageError(f"unknown inversion mode {mode!r}")
    except OutOfBranchError as exc:
        raise AdmissibilityError(None, exc.B, exc.beta_lower) from exc
    local = fermi_dirac_eval(fp, ge.grid.nodes)
    mask = ge.m - ge.m**2 > 1e-30
    diff = np.zeros_like(g)
    diff[mask] = (local[mask] - ge.m[mask]) / ge.weight[mask]
    diff -= eps * project_P(g, basis)
    return float(grid_norm(diff[mask], w[mask]))


@dataclass(frozen=True)
class CoefficientDerivatives:
    """Derivatives of c and a with respect to (N, P, E) at the global state."""

    dc_dN: float
    dc_dP: np.ndarray
    dc_dE: float
    da_dN: float
    da_dP: np.ndarray
    da_dE: float
    denominator: float


def coefficient_derivatives(ge) -> CoefficientDerivatives:
    """Closed forms at theta = 0, with D = -E0 k + 9 N0^2/(10 a0) < 0.

    dc/dN = E0 / D, dc/dE = -3/5 N0 / D, da/dN = -3/5 N0 / D,
    da/dE = 2/5 a0 k / D, and both P-derivatives vanish since P0 = 0.
    """
    D = -ge.require_positive_gap()
    zero = np.zeros(3)
    return CoefficientDerivatives(
        dc_dN=ge.E0 / D,
        dc_dP=zero,
        dc_dE=-0.6 * ge.N0 / D,
        da_dN=-0.6 * ge.N0 / D,
        da_dP=zero.copy(),
        da_dE=0.4 * ge.a0 * ge.k / D,
        denominator=D,
    )


_DIRECTIONS = ("N", "P1", "P2", "P3", "E")


def equilibrium_gateaux(ge, direction):
    """Pointwise derivative of the local equilibrium at m along N, P_i or E."""
    if direction not in _DIRECTIONS:
        raise UsageError(f"direction must be one of {_DIRECTIONS}, got {direction!r}")
    cd = coefficient_derivatives(ge)
    mm = ge.m - ge.m**2
    p2 = ge.grid.speed2
    if direction == "N":
        return -(cd.da_dN * p2 + cd.dc_dN) * mm
    if direction == "E":
        return -(cd.da_dE * p2 + cd.dc_dE) * mm
    i = int(direction[1]) - 1
    return (2.0 * ge.a0 / ge.N0) * ge.grid.nodes[:, i] * mm


def transition_params(ge, moments: Moments, theta) -> FermiParams:
    """Equilibrium parameters along N_t = t N + (1-t) N0, P_t = t P, E_t = t E + (1-t) E0.

    Pure evaluation; no derivative claims are attached for 0 < theta < 1.
    """
    mt = Moments(
        theta * moments.N + (1.0 - theta) * ge.N0,
        theta * moments.P,
        theta * moments.E + (1.0 - theta) * ge.E0,
    )
    return invert_equilibrium(mt)


@dataclass
class MicroMacro:
    a_bar: np.ndarray
    b_bar: np.ndarray
    c_bar: np.ndarray
    macro: np.ndarray
    micro: np.ndarray


def micro_macro_decompose(f, ge) -> MicroMacro:
    """Split f into (a + b.p + c|p|^2) sqrt(m - m^2) and the remainder.

    a, b, c are the raw moments of f against sqrt(m - m^2) (1, p, |p|^2).
    The monomials are not orthonormal, so this split is not a projection:
    decomposing the micro part again generally yields nonzero coefficients.
    """
    f = np.asarray(f, dtype=float)
    wt = ge.weight
    mb = ge.grid.moment_basis * wt[:, None]
    coeff = f @ mb
    a_bar, b_bar, c_bar = coeff[..., 0], coeff[..., 1:4], coeff[..., 4]
    poly = a_bar[..., None] + b_bar @ ge.grid.nodes.T + c_bar[..., None] * ge.grid.speed2
    macro = poly * wt
    return MicroMacro(a_bar, b_bar, c_bar, macro, f - macro)


def positivity_gap_continuous(a0, c0):
    """E0 k - 9 N0^2/(10 a0) from exact radial integrals (no grid)."""
    M0 = 4 * math.pi * fd_integral("I", 2, c0)
    M2 = 4 * math.pi * fd_integral("I", 4, c0)
    K = 2 * math.pi * fd_integral("I", 0, c0)
    N0 = a0**-1.5 * M0
    E0 = a0**-2.5 * M2
    k = a0**-1.5 * K
    return E0 * k - 0.9 * N0**2 / a0


@dataclass
class CheckItem:
    name: str
    value: float
    tol: float
    passed: bool
    note: str = ""

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        tail = f"  ({self.note})" if self.note else ""
        return f"{flag} {self.name}: {self.value:.3e} (tol {self.tol:.1e}){tail}"


@dataclass
class LincheckReport:
    items: list
    warnings: list

    @property
    def passed(self):
        return all(item.passed for item in self.items)

    def text(self):
        lines = [f"WARNING {w}" for w in self.warnings]
        lines += [item.line() for item in self.items]
        return "\n".join(lines) + "\n"


NEAR_BOUNDARY = 1e-3


def _fd_step(ge):
    """Relative finite-difference step, shrunk so both sides stay on the branch."""
    dist = ge.c0 + math.log(3.0)
    return min(1e-6, 0.1 * dist)


def _fd_invert(ge, dN=0.0, dP=0.0, dE=0.0):
    mom = Moments(ge.N0 + dN, np.array([dP, 0.0, 0.0]), ge.E0 + dE)
    return invert_equilibrium(mom)


def _check(name, value, tol, note=""):
    return CheckItem(name, float(value), tol, bool(value <= tol), note)


def _rel(x, ref):
    return abs(x - ref) / abs(ref)


def random_direction(ge, rng, noise=0.3):
    """Unit-norm g = sum_i c_i e_i + noise * xi with Gaussian c, xi."""
    g = rng.standard_normal(5) @ ge.basis.e + noise * rng.standard_normal(ge.grid.size)
    return g / grid_norm(g, ge.grid.weights)


def _oriented(ge, g, eps_values, mode):
    """Return g or -g, whichever keeps every perturbed state on the branch."""
    for cand in (g, -g):
        try:
            for eps in eps_values:
                linearization_residual(ge, cand, eps, mode=mode)
            return cand
        except AdmissibilityError:
            continue
    return None


def run_lincheck(
    ge,
    rng,
    *,
    basis=None,
    n_coercivity=100,
    n_residual=20,
    eps_values=(1e-2, 1e-3, 1e-4),
    mode="discrete",
):
    """Numerical checks of the linearization identities at ``ge``.

    ``basis`` overrides the closed-form basis (used for fault injection).
    Returns a :class:`LincheckReport`; ``report.passed`` is the verdict.
    """
    warnings = []
    dist = ge.c0 + math.log(3.0)
    if dist < NEAR_BOUNDARY:
        warnings.append(
            f"c0 + ln 3 = {dist:.1e}: equilibrium is near the branch endpoint; "
            "finite-difference steps are shortened and perturbations are oriented into the branch"
        )
    items = []
    w = ge.grid.weights

    gap = ge.require_positive_gap()
    gap_cont = positivity_gap_continuous(ge.a0, ge.c0)
    items.append(CheckItem("gap positivity E0 k - 9 N0^2/(10 a0)", gap, 0.0, gap > 0 and gap_cont > 0,
                           f"continuous value {gap_cont:.6e}"))

    basis = build_basis(ge) if basis is None else basis
    items.append(_check("orthonormality max|G - I|", np.max(np.abs(basis.gram - np.eye(5))), 1e-10))
    gs = gram_schmidt_basis(ge)
    scale = np.max(np.abs(gs.e), axis=1)
    items.append(_check("closed forms vs Gram-Schmidt",
                        np.max(np.max(np.abs(basis.e - gs.e), axis=1) / scale), 1e-10))

    worst = 0.0
    idem = 0.0
    for _ in range(n_coercivity):
        f = rng.standard_normal(ge.grid.size)
        Pf = project_P(f, basis)
        lhs = inner(apply_L(f, basis), f, w) + inner(f - Pf, f - Pf, w)
        worst = max(worst, abs(lhs) / inner(f, f, w))
        idem = max(idem, float(grid_norm(project_P(Pf, basis) - Pf, w) / grid_norm(f, w)))
    items.append(_check("coercivity <Lf,f> + |(I-P)f|^2", worst, 1e-12, f"{n_coercivity} random f"))
    items.append(_check("idempotence |P(Pf) - Pf|", idem, 1e-10))

    cd = coefficient_derivatives(ge)
    h = _fd_step(ge)
    hN, hE = h * ge.N0, h * ge.E0
    up, dn = _fd_invert(ge, dN=hN), _fd_invert(ge, dN=-hN)
    dc_dN = float(up.c - dn.c) / (2 * hN)
    da_dN = float(up.a - dn.a) / (2 * hN)
    up, dn = _fd_invert(ge, dE=hE), _fd_invert(ge, dE=-hE)
    dc_dE = float(up.c - dn.c) / (2 * hE)
    da_dE = float(up.a - dn.a) / (2 * hE)
    items.append(_check("dc/dN vs finite difference", _rel(cd.dc_dN, dc_dN), 1e-5))
    items.append(_check("dc/dE vs finite difference", _rel(cd.dc_dE, dc_dE), 1e-5))
    items.append(_check("da/dN vs finite difference", _rel(cd.da_dN, da_dN), 1e-5))
    items.append(_check("da/dE vs finite difference", _rel(cd.da_dE, da_dE), 1e-5))
    hP = h * math.sqrt(ge.N0 * ge.E0)
    up, dn = _fd_invert(ge, dP=hP), _fd_invert(ge, dP=-hP)
    p_fd = max(abs(float(up.c - dn.c)), abs(float(up.a - dn.a))) / (2 * hP)
    p_closed = float(np.max(np.abs(np.concatenate([cd.dc_dP, cd.da_dP]))))
    items.append(_check("dc/dP, da/dP (closed and finite difference)", max(p_fd, p_closed), 0.0))

    for direction, kw, step in (("N", "dN", hN), ("P1", "dP", hP), ("E", "dE", hE)):
        up = fermi_dirac_eval(_fd_invert(ge, **{kw: step}), ge.grid.nodes)
        dn = fermi_dirac_eval(_fd_invert(ge, **{kw: -step}), ge.grid.nodes)
        fd = (up - dn) / (2 * step)
        closed = equilibrium_gateaux(ge, direction)
        err = np.max(np.abs(closed - fd)) / np.max(np.abs(closed))
        items.append(_check(f"dF/d{direction} vs finite difference", err, 1e-5))

    spread = 1.0
    skipped = 0
    for _ in range(n_residual):
        g = _oriented(ge, random_direction(ge, rng), eps_values, mode)
        if g is None:
            skipped += 1
            continue
        ratios = [linearization_residual(ge, g, eps, mode=mode, basis=basis) / eps**2 for eps in eps_values]
        spread = max(spread, max(ratios) / min(ratios))
    if skipped:
        warnings.append(f"{skipped} of {n_residual} residual directions left the branch in both orientations")
    items.append(_check("residual order max/min of r(eps)/eps^2", spread, 2.0,
                        f"{n_residual - skipped} directions, {mode} inversion"))
    return LincheckReport(items, warnings)


def corrupt_basis(basis: OrthoBasis, amount=1e-3) -> OrthoBasis:
    """Fault-injection hook: mix a little e1 into e5."""
    e = basis.e.copy()
    e[4] = e[4] + amount * e[0]
    return OrthoBasis(e, basis.weights)
