"""Moments <-> Fermi-Dirac parameters, local equilibria and the relaxation law.

The local Fermi-Dirac distribution is ``1 / (exp(a |p - b|^2 + c) + 1)``.
Its moments are::

    N = a^(-3/2) 4 pi I_2(c)
    P = N b
    E = a^(-5/2) 4 pi I_4(c) + N |b|^2

so ``B = N / (E - |P|^2/N)^(3/5) = beta(c)`` fixes c and the rest follows.

All containers accept either scalars or arrays with a leading batch axis
(one entry per spatial cell); every operation here is batched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConvergenceError, DegenerateMomentsError, SingularFrequencyError
from .fdintegrals import beta_inverse, log_moment_integrals

__all__ = [
    "Moments",
    "FermiParams",
    "TauCoefficients",
    "moments_B",
    "invert_equilibrium",
    "equilibrium_moments",
    "fermi_dirac_eval",
    "discrete_invert_equilibrium",
    "relaxation_frequency",
    "natural_from_params",
    "params_from_natural",
]


def _vec3(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (3,):
        raise ValueError(f"expected trailing axis of length 3, got shape {x.shape}")
    return x


@dataclass
class Moments:
    """Density N, momentum density P (trailing axis 3) and energy density E."""

    N: np.ndarray | float
    P: np.ndarray
    E: np.ndarray | float

    def __post_init__(self):
        self.N = np.asarray(self.N, dtype=float)
        self.E = np.asarray(self.E, dtype=float)
        self.P = _vec3(self.P)

    @property
    def internal_energy(self):
        return self.E - np.sum(self.P**2, axis=-1) / self.N

    def as_array(self):
        """Stack to shape (..., 5) as (N, P1, P2, P3, E)."""
        return np.concatenate([self.N[..., None], self.P, self.E[..., None]], axis=-1)

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=float)
        return cls(arr[..., 0], arr[..., 1:4], arr[..., 4])

    def __getitem__(self, idx):
        return Moments(self.N[idx], self.P[idx], self.E[idx])


@dataclass
class FermiParams:
    """Coefficients (a, b, c) of a Fermi-Dirac distribution.

    Any real c is accepted; inversion only ever produces c > -ln 3.
    """

    a: np.ndarray | float
    b: np.ndarray
    c: np.ndarray | float

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        self.b = _vec3(self.b)
        if np.any(~(self.a > 0)):
            raise ValueError(f"a must be positive, got {self.a!r}")

    def __getitem__(self, idx):
        return FermiParams(self.a[idx], self.b[idx], self.c[idx])


@dataclass(frozen=True)
class TauCoefficients:
    """1/tau = P(N) (C1 a^n + C2 a^m + C3) + C4.

    ``poly`` holds the coefficients of P(N) in ascending powers of N.
    """

    poly: tuple = (1.0,)
    n: float = 0.0
    m: float = 0.0
    C1: float = 0.0
    C2: float = 0.0
    C3: float = 0.0
    C4: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "poly", tuple(float(v) for v in self.poly))
        if self.n < 0:
            raise ValueError(f"exponent n must be >= 0, got {self.n}")
        if self.m > 0:
            raise ValueError(f"exponent m must be <= 0, got {self.m}")
        Cs = (self.C1, self.C2, self.C3, self.C4)
        if any(C < 0 for C in Cs):
            raise ValueError(f"C1..C4 must be >= 0, got {Cs}")
        if sum(Cs) == 0:
            raise ValueError("C1 + C2 + C3 + C4 must be nonzero")
        if not self.poly:
            raise ValueError("poly must contain at least one coefficient")

    @classmethod
    def constant(cls, tau=1.0):
        return cls(C4=1.0 / tau)


def moments_B(m: Moments):
    """B(N, P, E) = N / (E - |P|^2/N)^(3/5)."""
    if np.any(~(m.N > 0)):
        raise DegenerateMomentsError(f"N must be positive, got {m.N!r}")
    internal = m.internal_energy
    if np.any(~(internal > 0)):
        raise DegenerateMomentsError(
            f"E - |P|^2/N must be positive, got {internal!r}"
        )
    out = m.N / internal**0.6
    return float(out) if out.ndim == 0 else out


def _log_4pi_I(c, order_index):
    shift, I, _ = log_moment_integrals(c)
    return math.log(4.0 * math.pi) + np.log(I[..., order_index]) - shift


def invert_equilibrium(m: Moments) -> FermiParams:
    """Continuous inversion: c = beta^{-1}(B), a = (4 pi I_2(c) / N)^(2/3), b = P/N.

    Raises :class:`DegenerateMomentsError` or
    :class:`~fermibgk.errors.OutOfBranchError`.
    """
    B = moments_B(m)
    c = np.asarray(beta_inverse(B))
    log_a = (2.0 / 3.0) * (_log_4pi_I(c, 1) - np.log(m.N))
    return FermiParams(np.exp(log_a), m.P / m.N[..., None], c)


def equilibrium_moments(fp: FermiParams) -> Moments:
    """Exact continuous moments of the Fermi-Dirac distribution ``fp``."""
    a = fp.a
    N = np.exp(_log_4pi_I(fp.c, 1) - 1.5 * np.log(a))
    thermal = np.exp(_log_4pi_I(fp.c, 2) - 2.5 * np.log(a))
    P = N[..., None] * fp.b
    E = thermal + N * np.sum(fp.b**2, axis=-1)
    return Moments(N, P, E)


def fermi_dirac_eval(fp: FermiParams, p):
    """1 / (exp(a |p - b|^2 + c) + 1) at velocity points ``p`` (..., 3).

    With batched ``fp`` of shape (n,) and ``p`` of shape (v, 3) the result
    has shape (n, v).
    """
    p = _vec3(p)
    a = np.asarray(fp.a)
    if a.ndim == 0:
        d2 = np.sum((p - fp.b) ** 2, axis=-1)
        return expit(-(a * d2 + fp.c))
    d2 = np.sum((p[None, ...] - fp.b[:, None, :]) ** 2, axis=-1)
    return expit(-(a[:, None] * d2 + fp.c[:, None]))


def natural_from_params(fp: FermiParams):
    """Exponent a|p-b|^2 + c as l0 + l.p + l4 |p|^2; returns (..., 5)."""
    a = np.asarray(fp.a)
    l4 = a
    lv = -2.0 * a[..., None] * fp.b
    l0 = fp.c + a * np.sum(fp.b**2, axis=-1)
    return np.concatenate([l0[..., None], lv, l4[..., None]], axis=-1)


def params_from_natural(lam):
    lam = np.asarray(lam, dtype=float)
    a = lam[..., 4]
    b = -lam[..., 1:4] / (2.0 * a[..., None])
    c = lam[..., 0] - a * np.sum(b**2, axis=-1)
    return FermiParams(a, b, c)


def _moment_scales(target):
    N = np.abs(target[:, 0])
    E = np.abs(target[:, 4])
    s = np.sqrt(N * E)
    return np.stack([N, s, s, s, E], axis=1)


def discrete_invert_equilibrium(
    m_discrete: Moments,
    grid,
    *,
    guess: FermiParams | None = None,
    tol: float = 1e-12,
    max_iter: int = 50,
) -> FermiParams:
    """Fermi-Dirac parameters whose grid quadrature moments equal ``m_discrete``.

    Newton iteration in the natural parameters of the exponent, where the
    Jacobian is minus the weighted Gram matrix of (1, p, |p|^2) under
    w F (1 - F) and hence symmetric negative definite. Steps are halved up to
    8 times when the scaled residual does not decrease. The starting point is
    the continuous inversion of the same moments unless ``guess`` is given.

    ``grid`` is any object with ``nodes`` (v, 3) and ``weights`` (v,).
    """
    target = np.atleast_2d(m_discrete.as_array())
    scalar = np.ndim(m_discrete.N) == 0
    if guess is None:
        guess = invert_equilibrium(Moments.from_array(target))
    lam = np.atleast_2d(natural_from_params(guess)).copy()

    nodes = np.asarray(grid.nodes)
    w = np.asarray(grid.weights)
    phi = np.column_stack([np.ones(len(nodes)), nodes, np.sum(nodes**2, axis=1)])
    wphi = w[:, None] * phi
    outer = (phi[:, :, None] * phi[:, None, :]).reshape(len(nodes), 25)
    scale = _moment_scales(target)

    def residual(lam_, rows=slice(None)):
        F = expit(-(lam_ @ phi.T))
        r = F @ wphi - target[rows]
        return F, r, np.max(np.abs(r) / scale[rows], axis=1)

    F, r, err = residual(lam)
    # a cell is finished after one extra full step taken below tolerance
    hits = np.zeros(len(lam), dtype=int)
    for it in range(max_iter):
        hits += err <= tol
        idx = np.flatnonzero(hits < 2)
        if idx.size == 0:
            break
        Fa = F[idx]
        jac = -((Fa * (1.0 - Fa) * w) @ outer).reshape(len(idx), 5, 5)
        try:
            step = -np.linalg.solve(jac, r[idx][..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(
                "singular Jacobian in discrete inversion",
                residual=float(err.max()),
                iterations=it,
            ) from exc
        t = np.ones(len(idx))
        lam_new = lam[idx] + step
        F_new, r_new, err_new = residual(lam_new, idx)
        for _ in range(8):
            worse = ~(err_new <= err[idx])
            if not np.any(worse):
                break
            t = np.where(worse, 0.5 * t, t)
            lam_new = lam[idx] + t[:, None] * step
            F_new, r_new, err_new = residual(lam_new, idx)
        keep = err_new <= err[idx]
        # unconverged cells accept the damped step even if it did not help
        keep |= err[idx] > tol
        sel = idx[keep]
        lam[sel] = lam_new[keep]
        F[sel] = F_new[keep]
        r[sel] = r_new[keep]
        err[sel] = err_new[keep]

    bad = ~(err <= tol) | ~(lam[:, 4] > 0) | ~np.all(np.isfinite(lam), axis=1)
    if np.any(bad):
        raise ConvergenceError(
            f"discrete inversion did not converge in {max_iter} iterations "
            f"(max scaled residual {float(np.nanmax(err)):.3e}, tol {tol:.1e})",
            residual=err,
            iterations=max_iter,
        )
    fp = params_from_natural(lam)
    return fp[0] if scalar else fp


def relaxation_frequency(m: Moments, fp: FermiParams, tc: TauCoefficients):
    """1/tau = P(N) (C1 a^n + C2 a^m + C3) + C4, batched over cells."""
    a = np.asarray(fp.a, dtype=float)
    N = np.asarray(m.N, dtype=float)
    if tc.C2 > 0 and tc.m < 0 and np.any(a == 0):
        raise SingularFrequencyError("a = 0 with C2 > 0 and m < 0")
    PN = np.polynomial.polynomial.polyval(N, tc.poly)
    with np.errstate(divide="ignore"):
        temp = tc.C1 * a**tc.n + (tc.C2 * a**tc.m if tc.C2 else 0.0) + tc.C3
    out = PN * temp + tc.C4
    return float(out) if np.ndim(out) == 0 else out
