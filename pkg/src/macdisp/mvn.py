"""Lower-orthant probabilities of (possibly singular) trivariate Gaussians.

``P[Z <= z]`` for ``Z ~ N(0, V)`` is evaluated deterministically:

* rank 3: condition on ``Z_1`` and integrate the conditional bivariate
  normal CDF (Genz's algorithm) with adaptive quadrature;
* rank 2: write ``Z = A W`` with ``W ~ N(0, I_2)``, integrate over ``W_1``
  with the ``W_2`` interval in closed form;
* rank 1: closed form;
* rank 0: point mass at the origin.

Coordinates with zero variance impose hard ``z_k >= 0`` constraints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from ._quadrature import adaptive_quad

TRUNC_REL = 1e-12
NOT_PSD_REL = 1e-8
SYM_TOL = 1e-9
TAIL = 8.5
QUAD_TOL = 1e-10


class NotPSDError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianSpec:
    cov: np.ndarray
    rank: int
    eigenvalues: np.ndarray  # retained, descending
    basis: np.ndarray  # (3, rank) orthonormal
    truncated: np.ndarray  # eigenvalues set to zero

    @property
    def support_sqrt(self) -> np.ndarray:
        """``A`` with ``A A^T`` equal to the truncated covariance."""
        return self.basis * np.sqrt(self.eigenvalues)

    @property
    def truncated_cov(self) -> np.ndarray:
        a = self.support_sqrt
        return a @ a.T

    def diagnostics(self) -> dict:
        return {
            "rank": self.rank,
            "eigenvalues": self.eigenvalues.tolist(),
            "truncated_eigenvalues": self.truncated.tolist(),
            "method": "subspace projection",
        }


def decompose(cov) -> GaussianSpec:
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got {cov.shape}")
    scale = max(float(np.max(np.abs(cov))), 1e-300)
    if np.max(np.abs(cov - cov.T)) > SYM_TOL * max(scale, 1.0):
        raise NotPSDError("covariance is not symmetric")
    sym = 0.5 * (cov + cov.T)
    lam, vec = np.linalg.eigh(sym)
    lam, vec = lam[::-1], vec[:, ::-1]
    top = max(float(lam[0]), 0.0)
    if lam[-1] < -NOT_PSD_REL * top - 1e-300:
        raise NotPSDError(f"covariance has eigenvalue {lam[-1]:.3g}")
    keep = lam > TRUNC_REL * top if top > 0 else np.zeros(3, bool)
    for k in range(3):
        col = vec[:, k]
        first = np.flatnonzero(np.abs(col) > 1e-12)
        if first.size and col[first[0]] < 0:
            vec[:, k] = -col
    r = int(keep.sum())
    return GaussianSpec(
        cov=sym,
        rank=r,
        eigenvalues=lam[:r].copy(),
        basis=vec[:, :r].copy(),
        truncated=lam[r:].copy(),
    )


# --------------------------------------------------------------------------
# Bivariate normal (Genz, "Numerical computation of rectangular bivariate
# and trivariate normal probabilities", 2004)

_GL = {
    6: (
        [0.1713244923791705, 0.3607615730481384, 0.4679139345726904],
        [0.9324695142031522, 0.6612093864662647, 0.2386191860831970],
    ),
    12: (
        [0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
         0.2031674267230659, 0.2334925365383547, 0.2491470458134029],
        [0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
         0.5873179542866171, 0.3678314989981802, 0.1252334085114692],
    ),
    20: (
        [0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
         0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
         0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
         0.1527533871307259],
        [0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
         0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
         0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
         0.07652652113349733],
    ),
}


def _gl_nodes(r: float) -> tuple[np.ndarray, np.ndarray]:
    n = 6 if abs(r) < 0.3 else 12 if abs(r) < 0.75 else 20
    w, x = (np.asarray(v) for v in _GL[n])
    return np.r_[w, w], np.r_[1 - x, 1 + x]


def _bvnu(h: np.ndarray, k: np.ndarray, r: float) -> np.ndarray:
    """``P[X > h, Y > k]`` for standard bivariate normal with correlation ``r``; finite h, k."""
    tp = 2 * np.pi
    hk = h * k
    w, x = _gl_nodes(r)
    if r == 0:
        return ndtr(-h) * ndtr(-k)
    with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
        if abs(r) < 0.925:
            hs = (h * h + k * k) / 2
            asr = np.arcsin(r) / 2
            sn = np.sin(asr * x)
            terms = np.exp((sn * hk[..., None] - hs[..., None]) / (1 - sn**2))
            bvn = terms @ w * asr / tp + ndtr(-h) * ndtr(-k)
        else:
            if r < 0:
                k = -k
                hk = -hk
            bvn = np.zeros_like(h)
            if abs(r) < 1:
                as_ = 1 - r * r
                a = np.sqrt(as_)
                bs = (h - k) ** 2
                asr = -(bs / as_ + hk) / 2
                c = (4 - hk) / 8
                d = (12 - hk) / 80
                bvn = np.where(
                    asr > -100,
                    a * np.exp(asr) * (1 - c * (bs - as_) * (1 - d * bs) / 3 + c * d * as_**2),
                    0.0,
                )
                b = np.sqrt(bs)
                sp = np.sqrt(tp) * ndtr(-b / a)
                bvn = np.where(
                    hk > -100, bvn - np.exp(-hk / 2) * sp * b * (1 - c * bs * (1 - d * bs) / 3), bvn
                )
                a2 = a / 2
                xs = (a2 * x) ** 2
                asr_j = -(bs[..., None] / xs + hk[..., None]) / 2
                sp_j = 1 + c[..., None] * xs * (1 + 5 * d[..., None] * xs)
                rs = np.sqrt(1 - xs)
                ep = np.exp(-(hk[..., None] / 2) * xs / (1 + rs) ** 2) / rs
                terms = np.where(asr_j > -100, np.exp(asr_j) * (sp_j - ep), 0.0)
                bvn = (a2 * (terms @ w) - bvn) / tp
            if r > 0:
                bvn = bvn + ndtr(-np.maximum(h, k))
            else:
                lower = np.where(h < 0, ndtr(k) - ndtr(h), ndtr(-h) - ndtr(-k))
                bvn = np.where(h >= k, -bvn, lower - bvn)
    return np.clip(bvn, 0.0, 1.0)


def bvn_cdf(x, y, rho: float) -> np.ndarray:
    """``P[X <= x, Y <= y]`` for a standard bivariate normal, vectorized in ``x, y``."""
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    x, y = x.astype(float), y.astype(float)
    out = np.empty(x.shape)
    if rho >= 1:
        return ndtr(np.minimum(x, y))
    if rho <= -1:
        return np.clip(ndtr(x) - ndtr(-y), 0.0, 1.0)
    fx, fy = np.isfinite(x), np.isfinite(y)
    both = fx & fy
    out[~both] = np.where(
        (x[~both] == -np.inf) | (y[~both] == -np.inf),
        0.0,
        np.where(x[~both] == np.inf, ndtr(y[~both]), ndtr(x[~both])),
    )
    if both.any():
        out[both] = _bvnu(-x[both], -y[both], float(rho))
    return out


# --------------------------------------------------------------------------
# Orthant probabilities


def _rank3(cov: np.ndarray, z: np.ndarray) -> float:
    s11 = cov[0, 0]
    sd1 = np.sqrt(s11)
    top = z[0] / sd1
    if top <= -TAIL:
        return 0.0
    top = min(top, TAIL)
    slope = cov[1:, 0] / sd1  # conditional mean per unit of Z_1 / sd1
    cond = cov[1:, 1:] - np.outer(cov[1:, 0], cov[1:, 0]) / s11
    sd = np.sqrt(np.maximum(np.diag(cond), 0.0))
    rho = float(np.clip(cond[0, 1] / (sd[0] * sd[1]), -1.0, 1.0))
    z_rest = z[1:]

    def integrand(s):
        with np.errstate(divide="ignore", invalid="ignore"):
            a = (z_rest[0] - slope[0] * s) / sd[0]
            b = (z_rest[1] - slope[1] * s) / sd[1]
        return np.exp(-0.5 * s * s) / np.sqrt(2 * np.pi) * bvn_cdf(a, b, rho)

    return adaptive_quad(integrand, -TAIL, top, abstol=QUAD_TOL)


def _rank1(a: np.ndarray, z: np.ndarray) -> float:
    a = a[:, 0]
    with np.errstate(divide="ignore"):
        bounds = z / a
    hi = np.min(bounds[a > 0], initial=np.inf)
    lo = np.max(bounds[a < 0], initial=-np.inf)
    return float(max(0.0, ndtr(hi) - ndtr(lo))) if hi > lo else 0.0


def _rank2(a: np.ndarray, z: np.ndarray) -> float:
    a1, a2 = a[:, 0], a[:, 1]
    row = np.hypot(a1, a2)
    flat = np.abs(a2) <= 1e-12 * row  # constrains W_1 only
    lo_w1, hi_w1 = -TAIL, TAIL
    for k in np.flatnonzero(flat):
        if a1[k] > 0:
            hi_w1 = min(hi_w1, z[k] / a1[k])
        else:
            lo_w1 = max(lo_w1, z[k] / a1[k])
    if hi_w1 <= lo_w1:
        return 0.0
    act = np.flatnonzero(~flat)
    up = [k for k in act if a2[k] > 0]
    dn = [k for k in act if a2[k] < 0]
    breaks = []
    for i, k in enumerate(act):
        for l in act[i + 1 :]:
            det = a1[k] * a2[l] - a1[l] * a2[k]
            if abs(det) > 1e-14 * row[k] * row[l]:
                breaks.append((z[k] * a2[l] - z[l] * a2[k]) / det)

    def integrand(w1):
        hi = np.full_like(w1, np.inf)
        lo = np.full_like(w1, -np.inf)
        for k in up:
            hi = np.minimum(hi, (z[k] - a1[k] * w1) / a2[k])
        for k in dn:
            lo = np.maximum(lo, (z[k] - a1[k] * w1) / a2[k])
        inner = np.where(hi > lo, ndtr(hi) - ndtr(lo), 0.0)
        return np.exp(-0.5 * w1 * w1) / np.sqrt(2 * np.pi) * inner

    return adaptive_quad(integrand, lo_w1, hi_w1, breakpoints=breaks, abstol=QUAD_TOL)


def lower_orthant(spec: GaussianSpec, z) -> float:
    """``P[Z <= z]`` (componentwise) for ``Z ~ N(0, spec.cov)``.

    Components of ``z`` may be ``+inf``.  For rank-deficient covariances the
    probability is that of the truncated (support-projected) Gaussian.
    """
    z = np.asarray(z, dtype=float)
    if spec.rank == 0:
        return float(np.all(z >= 0))
    a = spec.support_sqrt
    lam_max = float(spec.eigenvalues[0])
    det = np.sum(a * a, axis=1) <= TRUNC_REL * lam_max
    if np.any(z[det] < 0):
        return 0.0
    live = ~det & (z < np.inf)
    if not live.any():
        return 1.0
    if spec.rank == 3 and live.all():
        p = _rank3(spec.truncated_cov, z)
    elif spec.rank == 3:
        idx = np.flatnonzero(live)
        sub = spec.truncated_cov[np.ix_(idx, idx)]
        p = _marginal(sub, z[idx])
    elif spec.rank == 2:
        p = _rank2(a[live], z[live])
    else:
        p = _rank1(a[live], z[live])
    return float(np.clip(p, 0.0, 1.0))


def _marginal(cov: np.ndarray, z: np.ndarray) -> float:
    """Full-rank 1- or 2-dimensional block (remaining coordinates sent to infinity)."""
    if z.size == 1:
        return float(ndtr(z[0] / np.sqrt(cov[0, 0])))
    sd = np.sqrt(np.diag(cov))
    rho = float(np.clip(cov[0, 1] / (sd[0] * sd[1]), -1, 1))
    return float(bvn_cdf(z[0] / sd[0], z[1] / sd[1], rho))


def qinv_member(v, eps: float, z) -> bool:
    """Whether ``z`` lies in ``{z : P[Z <= z] >= 1 - eps}``."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    spec = v if isinstance(v, GaussianSpec) else decompose(v)
    return lower_orthant(spec, z) >= 1 - eps
