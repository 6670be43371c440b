"""Radial Fermi-Dirac integrals and the moment-ratio function beta.

Two families of integrals over r in [0, inf) are evaluated::

    I_k(c) = int r^k / (exp(r^2 + c) + 1) dr
    J_k(c) = int r^k exp(r^2 + c) / (exp(r^2 + c) + 1)^2 dr

for even k in {0, 2, 4, 6}. Internally every integral is computed in the
scaled form exp(c) * I_k(c) when c > 0, so beta and its derivative stay
finite for arbitrarily large c (beta decays like exp(-2c/5)).

beta(c) = 4 pi I_2 / (4 pi I_4)^(3/5) is strictly decreasing on
[-ln 3, inf); ``beta_inverse`` solves beta(c) = B on that branch only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit

from .errors import ConvergenceError, DomainError, OutOfBranchError, UsageError

__all__ = [
    "LN3",
    "QuadratureRule",
    "BetaBranch",
    "fd_integral",
    "beta",
    "beta_prime",
    "beta_inverse",
    "beta_branch",
    "log_moment_integrals",
]

LN3 = math.log(3.0)
_ORDERS = (0, 2, 4, 6)
_KINDS = {"I": "I", "plain": "I", "J": "J", "weighted": "J"}


@dataclass(frozen=True)
class QuadratureRule:
    """Composite rule on [0, R(c)] with R(c) = sqrt(max(0, 36 - min(c, 0))) + 6.

    Panels are at most ``max_panel_width`` wide; each panel carries
    ``nodes_per_panel`` points.
    """

    nodes_per_panel: int = 64
    max_panel_width: float = 1.0
    scheme: str = "gauss-legendre"

    def __post_init__(self):
        if self.scheme not in ("gauss-legendre", "simpson"):
            raise UsageError(f"unknown quadrature scheme {self.scheme!r}")
        if self.nodes_per_panel < 2:
            raise UsageError("nodes_per_panel must be >= 2")
        if self.scheme == "simpson" and self.nodes_per_panel % 2 == 0:
            # Simpson needs an odd point count per panel
            object.__setattr__(self, "nodes_per_panel", self.nodes_per_panel + 1)

    @staticmethod
    def cutoff(c):
        c = np.asarray(c, dtype=float)
        return np.sqrt(np.maximum(0.0, 36.0 - np.minimum(c, 0.0))) + 6.0

    def reference(self, n_panels):
        """Nodes and weights on [0, 1] split into ``n_panels`` equal panels."""
        return _reference_rule(self.scheme, self.nodes_per_panel, n_panels)

    def doubled(self):
        return QuadratureRule(2 * self.nodes_per_panel, self.max_panel_width, self.scheme)


@lru_cache(maxsize=64)
def _reference_rule(scheme, n, n_panels):
    if scheme == "gauss-legendre":
        x, w = np.polynomial.legendre.leggauss(n)
        x = 0.5 * (x + 1.0)
        w = 0.5 * w
    else:
        x = np.linspace(0.0, 1.0, n)
        w = np.ones(n)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        w *= 1.0 / (3.0 * (n - 1))
    h = 1.0 / n_panels
    starts = np.arange(n_panels) * h
    nodes = (starts[:, None] + h * x[None, :]).ravel()
    weights = np.tile(h * w, n_panels)
    return nodes, weights


DEFAULT_RULE = QuadratureRule()


def _check_c(c):
    c = np.asarray(c, dtype=float)
    if not np.all(np.isfinite(c)):
        raise DomainError(f"c must be finite, got {c!r}")
    return c


def _scaled_integrands(r2, c):
    """Return (plain, weighted) integrands times exp(max(c, 0)).

    For c > 0 the factor exp(-c) is pulled out analytically so nothing
    underflows.
    """
    pos = c > 0
    x = r2 + c
    # c <= 0: the direct logistic forms are safe
    plain = expit(-x)
    weighted = expit(x) * plain
    if np.any(pos):
        t = np.exp(-r2) / (1.0 + np.exp(-x))
        plain = np.where(pos, t, plain)
        weighted = np.where(pos, t / (1.0 + np.exp(-x)), weighted)
    return plain, weighted


def log_moment_integrals(c, rule: QuadratureRule = DEFAULT_RULE):
    """Scaled integrals for every supported order at once.

    Returns ``(shift, I, J)`` where ``I`` and ``J`` have a trailing axis of
    length 4 (orders 0, 2, 4, 6) and the true values are
    ``I * exp(-shift)``, ``J * exp(-shift)`` with ``shift = max(c, 0)``.
    """
    c = _check_c(c)
    flat = np.atleast_1d(c).ravel()
    R = QuadratureRule.cutoff(flat)
    n_panels = int(math.ceil(float(R.max()) / rule.max_panel_width))
    t, w = rule.reference(n_panels)
    r = R[:, None] * t[None, :]
    wr = R[:, None] * w[None, :]
    plain, weighted = _scaled_integrands(r * r, flat[:, None])
    powers = np.stack([r**k for k in _ORDERS], axis=-1)
    I = np.einsum("cn,cnk->ck", wr * plain, powers)
    J = np.einsum("cn,cnk->ck", wr * weighted, powers)
    shift = np.maximum(flat, 0.0)
    shape = c.shape + (len(_ORDERS),)
    return shift.reshape(c.shape), I.reshape(shape), J.reshape(shape)


def fd_integral(kind, k, c, rule: QuadratureRule = DEFAULT_RULE):
    """Evaluate I_k(c) (``kind="I"``) or J_k(c) (``kind="J"``).

    Works elementwise on array ``c``. Raises :class:`DomainError` for
    non-finite c and :class:`UsageError` for unsupported ``kind``/``k``.
    """
    if kind not in _KINDS:
        raise UsageError(f"kind must be one of {sorted(_KINDS)}, got {kind!r}")
    if k not in _ORDERS:
        raise UsageError(f"order k must be one of {_ORDERS}, got {k!r}")
    shift, I, J = log_moment_integrals(c, rule)
    vals = (I if _KINDS[kind] == "I" else J)[..., _ORDERS.index(k)]
    out = vals * np.exp(-shift)
    return float(out) if np.ndim(out) == 0 else out


def _beta_parts(c, rule):
    shift, I, _ = log_moment_integrals(c, rule)
    m0 = 4.0 * math.pi * I[..., 1]
    m2 = 4.0 * math.pi * I[..., 2]
    kk = 2.0 * math.pi * I[..., 0]
    # scaled moments carry exp(-shift); beta and beta' carry exp(-2 shift / 5)
    return np.exp(-0.4 * shift), m0, m2, kk


def beta(c, rule: QuadratureRule = DEFAULT_RULE):
    """beta(c) = 4 pi I_2(c) / (4 pi I_4(c))^(3/5)."""
    scale, m0, m2, _ = _beta_parts(c, rule)
    out = scale * m0 / m2**0.6
    return float(out) if np.ndim(out) == 0 else out


def beta_prime(c, rule: QuadratureRule = DEFAULT_RULE):
    """Derivative of beta using the integration-by-parts reduced form.

    With M0 = 4 pi I_2, M2 = 4 pi I_4 and K = 2 pi I_0::

        beta'(c) = (-M2 K + 9/10 M0^2) / M2^(8/5)
    """
    scale, m0, m2, kk = _beta_parts(c, rule)
    out = scale * (-m2 * kk + 0.9 * m0 * m0) / m2**1.6
    return float(out) if np.ndim(out) == 0 else out


def _log_beta_and_slope(c, rule):
    scale, m0, m2, kk = _beta_parts(c, rule)
    c = np.asarray(c, dtype=float)
    log_b = -0.4 * np.maximum(c, 0.0) + np.log(m0) - 0.6 * np.log(m2)
    slope = -kk / m0 + 0.9 * m0 / m2
    return log_b, slope


@dataclass(frozen=True)
class BetaBranch:
    """The monotone branch [-ln 3, inf) of beta."""

    lower: float
    beta_lower: float
    decreasing: bool = True

    def contains(self, B):
        B = np.asarray(B, dtype=float)
        return (B > 0.0) & (B < self.beta_lower)


@lru_cache(maxsize=None)
def beta_branch() -> BetaBranch:
    """Branch endpoint data, computed once per process."""
    return BetaBranch(lower=-LN3, beta_lower=beta(-LN3))


def beta_inverse(B, rule: QuadratureRule = DEFAULT_RULE, *, max_iter=200):
    """Solve beta(c) = B for c in (-ln 3, inf).

    Safeguarded Newton on log beta inside a bracket [lo, hi] that starts at
    [-ln 3, -ln 3 + 1] and grows geometrically until beta(hi) < B. A step
    that leaves the bracket, or a log-derivative below 1e-14 in magnitude,
    falls back to bisection. Accepts scalars or arrays.

    Raises :class:`OutOfBranchError` unless 0 < B < beta(-ln 3).
    """
    branch = beta_branch()
    B_arr = np.asarray(B, dtype=float)
    scalar = B_arr.ndim == 0
    B_arr = np.atleast_1d(B_arr).ravel()
    bad = ~(np.isfinite(B_arr) & branch.contains(B_arr))
    if np.any(bad):
        first = B_arr[bad][0]
        raise OutOfBranchError(float(first) if scalar else B_arr[bad], branch.beta_lower)
    log_target = np.log(B_arr)

    lo = np.full_like(B_arr, -LN3)
    width = np.ones_like(B_arr)
    hi = lo + width
    for _ in range(64):
        lb_hi, _ = _log_beta_and_slope(hi, rule)
        grow = lb_hi >= log_target
        if not np.any(grow):
            break
        width = np.where(grow, 2.0 * width, width)
        lo = np.where(grow, hi, lo)
        hi = np.where(grow, -LN3 + width, hi)
    else:
        raise ConvergenceError("could not bracket beta^{-1}(B)")

    # Maxwell-Boltzmann asymptote beta ~ pi^(3/5) (3/2)^(-3/5) exp(-2c/5)
    mb = 0.6 * math.log(math.pi) - 0.6 * math.log(1.5)
    c = -2.5 * (log_target - mb)
    inside = (c > lo) & (c < hi)
    c = np.where(inside, c, 0.5 * (lo + hi))

    done = np.zeros(B_arr.shape, dtype=bool)
    g = np.empty_like(B_arr)
    for it in range(max_iter):
        log_b, slope = _log_beta_and_slope(c, rule)
        g = log_b - log_target
        done = np.abs(g) <= 4e-15 * np.maximum(1.0, np.abs(log_target))
        # beta decreasing: g > 0 means the root lies to the right
        lo = np.where(g > 0, c, lo)
        hi = np.where(g < 0, c, hi)
        if np.all(done | (hi - lo <= 4e-16 * np.maximum(1.0, np.abs(c)))):
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            step = c - g / slope
        ok = np.isfinite(step) & (np.abs(slope) >= 1e-14) & (step > lo) & (step < hi)
        nxt = np.where(ok, step, 0.5 * (lo + hi))
        c = np.where(done, c, nxt)

    resid = np.abs(np.expm1(g))
    if np.any(resid > 1e-10):
        raise ConvergenceError(
            "beta_inverse did not reach |beta(c) - B| <= 1e-10 B",
            residual=float(resid.max()),
            iterations=it + 1,
        )
    return float(c[0]) if scalar else c.reshape(np.shape(B))
