"""Gaussian MAC ``Y = sqrt(P1) X1 + sqrt(P2) X2 + Z`` and its quantized inputs.

Discrete inputs are ``m``-point Gauss rules for the standard normal
(probabilists' Hermite weight).  Output integrals use composite
Gauss-Legendre panels over a fixed domain with panel doubling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import logsumexp

from ._quadrature import QuadratureError
from .dispersion import DispersionMatrix, RateVector

LOG_2PI = math.log(2 * math.pi)
OUTPUT_TOL = 1e-10
TAIL_SD = 10.0
_PANEL_ORDER = 20
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_PANEL_ORDER)
_MAX_PANELS = 1 << 14
DEFAULT_DPS = 40


@dataclass(frozen=True)
class GaussianMac:
    p1: float
    p2: float

    def __post_init__(self):
        if not (self.p1 >= 0 and self.p2 >= 0 and math.isfinite(self.p1) and math.isfinite(self.p2)):
            raise ValueError("powers must be finite and nonnegative")


def closed_form_iv(mac: GaussianMac) -> tuple[RateVector, DispersionMatrix]:
    p1, p2 = mac.p1, mac.p2
    s = p1 + p2
    i = RateVector(0.5 * math.log1p(p1), 0.5 * math.log1p(p2), 0.5 * math.log1p(s))
    v11 = p1 * (2 + p1) / (2 * (1 + p1) ** 2)
    v22 = p2 * (2 + p2) / (2 * (1 + p2) ** 2)
    v12 = p1 * p2 / (2 * (1 + p1) * (1 + p2))
    v13 = p1 * (2 + s) / (2 * (1 + p1) * (1 + s))
    v23 = p2 * (2 + s) / (2 * (1 + p2) * (1 + s))
    v33 = (s * (2 + s) + 2 * p1 * p2) / (2 * (1 + s) ** 2)
    v = np.array([[v11, v12, v13], [v12, v22, v23], [v13, v23, v33]])
    return i, DispersionMatrix(v, "cc")


# --------------------------------------------------------------------------
# Gauss rules


@dataclass(frozen=True)
class QuadratureRule:
    m: int
    nodes: np.ndarray
    weights: np.ndarray
    mp_nodes: tuple | None = None
    mp_weights: tuple | None = None
    dps: int | None = None

    def __post_init__(self):
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(np.diff(self.nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        if not (np.array_equal(self.nodes, -self.nodes[::-1]) and np.array_equal(self.weights, self.weights[::-1])):
            raise ValueError("rule must be symmetric")

    def moment(self, k: int):
        """``E[X^k]``; exact-precision arithmetic when high-precision nodes are attached."""
        if self.mp_nodes is not None:
            with mpmath.workdps(self.dps):
                return +mpmath.fsum(w * x**k for x, w in zip(self.mp_nodes, self.mp_weights))
        return float(self.weights @ self.nodes**k)


def normal_moment(k: int) -> int:
    """``E[Z^k]`` for ``Z ~ N(0, 1)``: zero for odd ``k``, ``(k-1)!!`` otherwise."""
    if k % 2:
        return 0
    return math.prod(range(k - 1, 0, -2))


def _hermite_pair(m: int, x):
    """``(He_m(x), He_{m-1}(x))`` by the three-term recurrence."""
    prev, cur = 1, x
    if m == 0:
        return 1, 0
    for k in range(1, m):
        prev, cur = cur, x * cur - k * prev
    return cur, prev


def _refine(m: int, x0: float, dps: int):
    with mpmath.workdps(dps + 10):
        x = mpmath.mpf(x0)
        for _ in range(100):
            h, hm1 = _hermite_pair(m, x)
            step = h / (m * hm1)
            x -= step
            if abs(step) < mpmath.mpf(10) ** (-(dps + 5)):
                break
        _, hm1 = _hermite_pair(m, x)
        w = mpmath.factorial(m) / (m * m * hm1 * hm1)
        return +x, +w


def _mp_rule(m: int, nodes: np.ndarray, dps: int):
    with mpmath.workdps(dps):
        if m == 1:
            return (mpmath.mpf(0),), (mpmath.mpf(1),)
        half = [_refine(m, float(x), dps) for x in nodes[m // 2 :]]
        # round to working precision first so that negation is exact
        pos = [+x for x, _ in half]
        pw = [+w for _, w in half]
        if m % 2:
            pos[0] = mpmath.mpf(0)
        xs = [-x for x in reversed(pos[m % 2 :])] + pos
        ws = list(reversed(pw[m % 2 :])) + pw
        total = mpmath.fsum(ws)
        return tuple(xs), tuple(w / total for w in ws)


@lru_cache(maxsize=64)
def gauss_rule(m: int, dps: int | None = DEFAULT_DPS) -> QuadratureRule:
    """``m``-point Gauss rule for ``N(0, 1)``, exact through moment ``2m - 1``.

    Nodes and weights come from the Jacobi matrix of the recurrence
    ``He_{k+1} = x He_k - k He_{k-1}`` (zero diagonal, off-diagonal
    ``sqrt(k)``).  Unless ``dps`` is None, nodes are also refined by
    Newton's method on ``He_m`` at that many digits.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    off = np.sqrt(np.arange(1, m, dtype=float))
    if m == 1:
        nodes, weights = np.zeros(1), np.ones(1)
    else:
        nodes, vecs = eigh_tridiagonal(np.zeros(m), off)
        weights = vecs[0] ** 2
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    weights = weights / weights.sum()
    mp_nodes = mp_weights = None
    if dps is not None:
        mp_nodes, mp_weights = _mp_rule(m, nodes, dps)
        nodes = np.array([float(x) for x in mp_nodes])
        nodes = 0.5 * (nodes - nodes[::-1])
        weights = np.array([float(w) for w in mp_weights])
        weights = 0.5 * (weights + weights[::-1])
        weights = weights / weights.sum()
    return QuadratureRule(m, nodes, weights, mp_nodes, mp_weights, dps)


def hermite_expectation(m: int, k: int, p1: float = 1.0, p2: float = 1.0, dps: int = DEFAULT_DPS):
    """``E[He_k(S)]`` with ``S = (sqrt(P1) X1 + sqrt(P2) X2)/sqrt(P1 + P2)``, ``X_nu`` on the m-point rule.

    Evaluated at ``dps`` digits and returned as a float.  ``He_0 = 1``.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if p1 < 0 or p2 < 0 or p1 + p2 <= 0:
        raise ValueError("need nonnegative powers with positive sum")
    rule = gauss_rule(m, dps or DEFAULT_DPS)
    with mpmath.workdps(rule.dps):
        s = mpmath.sqrt(mpmath.mpf(p1) + p2)
        a, b = mpmath.sqrt(p1) / s, mpmath.sqrt(p2) / s
        terms = [
            w1 * w2 * _hermite_pair(k, a * x1 + b * x2)[0]
            for x1, w1 in zip(rule.mp_nodes, rule.mp_weights)
            for x2, w2 in zip(rule.mp_nodes, rule.mp_weights)
        ]
        # fsum adds exactly, so mirrored terms of odd degree cancel
        return float(mpmath.fsum(terms))


def m_for_blocklength(n: int) -> int:
    """Quantization size ``m ~ n^(1/4)`` (at least 1)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return max(1, round(n**0.25))


# --------------------------------------------------------------------------
# Output integrals


def _panel_grid(lo: float, hi: float, panels: int) -> tuple[np.ndarray, np.ndarray]:
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = edges[:-1] + half
    y = (mid[:, None] + half[:, None] * _GL_X).ravel()
    w = (half[:, None] * _GL_W).ravel()
    return y, w


def _doubling(integrate, lo: float, hi: float, tol: float):
    if not hi - lo < _MAX_PANELS:
        raise QuadratureError(f"integration domain of width {hi - lo:g} exceeds the panel budget")
    panels = max(16, int(math.ceil(hi - lo)))
    prev = integrate(*_panel_grid(lo, hi, panels))
    while panels < _MAX_PANELS:
        panels *= 2
        cur = integrate(*_panel_grid(lo, hi, panels))
        if np.max(np.abs(cur - prev)) < tol:
            return cur
        prev = cur
    raise QuadratureError(f"output integral did not converge to {tol:g} within {_MAX_PANELS} panels")


@dataclass(frozen=True)
class _CellIntegrals:
    w1: np.ndarray
    w2: np.ndarray
    mean: np.ndarray  # (m, m, 3): E[i | x1, x2]
    second: np.ndarray  # (m, m, 3, 3): E[i i^T | x1, x2]
    third_abs: np.ndarray  # (m, m, 3): E[|i|^3 | x1, x2]


@lru_cache(maxsize=128)
def _cells(mac: GaussianMac, m: int, tol: float) -> _CellIntegrals:
    rule = gauss_rule(m)
    a = math.sqrt(mac.p1) * rule.nodes
    b = math.sqrt(mac.p2) * rule.nodes
    lw = np.log(rule.weights)
    mu = a[:, None] + b[None, :]
    lo, hi = mu.min() - TAIL_SD, mu.max() + TAIL_SD

    def integrate(y, gw):
        log_w = -0.5 * (y[None, None, :] - mu[:, :, None]) ** 2 - 0.5 * LOG_2PI
        log_p2 = logsumexp(lw[:, None, None] + log_w, axis=0)  # (x2, y)
        log_p1 = logsumexp(lw[None, :, None] + log_w, axis=1)  # (x1, y)
        log_p = logsumexp(lw[:, None, None] + lw[None, :, None] + log_w, axis=(0, 1))
        dens = np.stack(
            [log_w - log_p2[None, :, :], log_w - log_p1[:, None, :], log_w - log_p[None, None, :]], axis=-1
        )
        kern = np.exp(log_w) * gw
        mean = np.einsum("aby,abyk->abk", kern, dens)
        second = np.einsum("aby,abyk,abyl->abkl", kern, dens, dens)
        third = np.einsum("aby,abyk->abk", kern, np.abs(dens) ** 3)
        return np.concatenate([mean.ravel(), second.ravel(), third.ravel()])

    out = _doubling(integrate, lo, hi, tol)
    k = m * m
    return _CellIntegrals(
        rule.weights,
        rule.weights,
        out[: 3 * k].reshape(m, m, 3),
        out[3 * k : 12 * k].reshape(m, m, 3, 3),
        out[12 * k :].reshape(m, m, 3),
    )


def quantized_iv(mac: GaussianMac, m: int, tol: float = OUTPUT_TOL) -> tuple[RateVector, DispersionMatrix]:
    """``(I_m, V_m)`` for inputs on the ``m``-point rule, with ``V_m = Cov[i] - Cov[i^(1)] - Cov[i^(2)]``."""
    c = _cells(mac, m, tol)
    q = np.outer(c.w1, c.w2)
    mean = np.einsum("ab,abk->k", q, c.mean)
    cov = np.einsum("ab,abkl->kl", q, c.second) - np.outer(mean, mean)
    i1 = np.einsum("b,abk->ak", c.w2, c.mean) - mean
    i2 = np.einsum("a,abk->bk", c.w1, c.mean) - mean
    v = cov - np.einsum("a,ak,al->kl", c.w1, i1, i1) - np.einsum("b,bk,bl->kl", c.w2, i2, i2)
    return RateVector.from_array(mean), DispersionMatrix(v, "cc")


def third_abs_moments(mac: GaussianMac, m: int, tol: float = OUTPUT_TOL) -> np.ndarray:
    """``E|i_k|^3`` for each entry of the density vector under the quantized inputs."""
    c = _cells(mac, m, tol)
    return np.einsum("a,b,abk->k", c.w1, c.w2, c.third_abs)


def relative_entropy_gap(mac: GaussianMac, m: int, tol: float = OUTPUT_TOL) -> float:
    """``D(N(0, 1+P1+P2) || quantized output mixture)`` by direct quadrature.

    The integrand ``p log(p/q) - p + q`` is pointwise nonnegative and
    integrates to the divergence, so the estimate is never negative.
    """
    rule = gauss_rule(m)
    mu = (math.sqrt(mac.p1) * rule.nodes[:, None] + math.sqrt(mac.p2) * rule.nodes[None, :]).ravel()
    lq_w = (np.log(rule.weights)[:, None] + np.log(rule.weights)[None, :]).ravel()
    var = 1 + mac.p1 + mac.p2
    sd = math.sqrt(var)
    lo = min(mu.min() - TAIL_SD, -TAIL_SD * sd)
    hi = max(mu.max() + TAIL_SD, TAIL_SD * sd)

    def integrate(y, gw):
        log_p = -0.5 * y**2 / var - 0.5 * LOG_2PI - math.log(sd)
        log_q = logsumexp(lq_w[:, None] - 0.5 * (y[None, :] - mu[:, None]) ** 2, axis=0) - 0.5 * LOG_2PI
        p, q = np.exp(log_p), np.exp(log_q)
        integrand = p * (log_p - log_q) - p + q
        return np.array([gw @ integrand])

    # pointwise roundoff can leave a residue of order 1e-18 below zero
    return max(float(_doubling(integrate, lo, hi, tol * 1e-2)[0]), 0.0)


def convergence_table(mac: GaussianMac, ms) -> list[dict]:
    """Rows of ``(m, I_m, V_m, errors, D_m)`` against the closed form."""
    i, v = closed_form_iv(mac)
    rows = []
    for m in ms:
        im, vm = quantized_iv(mac, m)
        rows.append(
            {
                "m": int(m),
                "I1_m": im.r1,
                "I2_m": im.r2,
                "I12_m": im.r12,
                "I_err_inf": float(np.max(np.abs(im.as_array() - i.as_array()))),
                "V_err_inf": float(np.max(np.abs(vm.m - v.m))),
                "D_m": relative_entropy_gap(mac, m),
            }
        )
    return rows
