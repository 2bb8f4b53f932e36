"""Rate vector, dispersion matrices and exact finite-blocklength moments.

The matrices follow one recipe: within each time-sharing block ``u`` take
the covariance of the density vector and subtract the covariance of the
conditional means that the coding scheme holds fixed, then average over
``Q_U``.

=============  ==========================================================
kind           block matrix
=============  ==========================================================
``iid``        Cov[i | u]
``cc_iid_1``   Cov[i | u] - Cov[i^(1) | u]     (user 1 constant composition)
``cc_iid_2``   Cov[i | u] - Cov[i^(2) | u]
``cc``         Cov[i | u] - Cov[i^(1) | u] - Cov[i^(2) | u]
``joint``      Cov[i | u] - Cov[i^(12) | u]
=============  ==========================================================
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Literal

import numpy as np

from .model import InfoDensity, JointLaw, ModelError, cond_mean_info

PSD_TOL = 1e-10
INTEGRAL_TOL = 1e-9

MatrixKind = Literal["cc", "iid", "cc_iid_1", "cc_iid_2", "joint", "finite_n", "sigma_n"]


@dataclass(frozen=True)
class RateVector:
    r1: float
    r2: float
    r12: float

    def as_array(self) -> np.ndarray:
        return np.array([self.r1, self.r2, self.r12])

    @classmethod
    def from_array(cls, a) -> "RateVector":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]))

    @classmethod
    def rate_point(cls, r1: float, r2: float) -> "RateVector":
        return cls(r1, r2, r1 + r2)


@dataclass(frozen=True)
class DispersionMatrix:
    m: np.ndarray
    kind: MatrixKind

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.m)

    @property
    def min_eig(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def is_psd(self) -> bool:
        """PSD up to ``PSD_TOL`` relative to the largest eigenvalue (absolute if that is < 1)."""
        scale = max(1.0, float(np.max(np.abs(self.eigenvalues))))
        return self.min_eig >= -PSD_TOL * scale

    def to_json(self) -> dict:
        return {"kind": self.kind, "entries": self.m.ravel().tolist()}


@dataclass(frozen=True)
class MomentReport:
    """Exact second moments of the summed density vector at blocklength ``n``.

    ``exact_cov = sum_u n_u Cov[i|u] + (n^2 - n)(m1 + m2 + m3 + m4)``.  With
    time sharing the ``m_k`` are the block terms reweighted by
    ``(n_u^2 - n_u) / (n^2 - n)``.
    """

    n: int
    m1: np.ndarray
    m2: np.ndarray
    m3: np.ndarray
    m4: np.ndarray
    exact_cov: np.ndarray
    mean: np.ndarray

    @property
    def sigma_n(self) -> DispersionMatrix:
        return DispersionMatrix(self.exact_cov / self.n, "sigma_n")

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "kind": "finite_n",
            "mean": self.mean.tolist(),
            "exact_cov": self.exact_cov.ravel().tolist(),
            "sigma_n": self.sigma_n.m.ravel().tolist(),
            "m1": self.m1.ravel().tolist(),
            "m2": self.m2.ravel().tolist(),
            "m3": self.m3.ravel().tolist(),
            "m4": self.m4.ravel().tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2)


def _cov(weights: np.ndarray, values: np.ndarray, mean: np.ndarray) -> np.ndarray:
    """Weighted covariance of the rows of ``values`` (NaN rows must have weight 0)."""
    dev = np.nan_to_num(values - mean, nan=0.0, posinf=0.0, neginf=0.0)
    flat = dev.reshape(-1, 3)
    return np.einsum("k,ki,kj->ij", weights.ravel(), flat, flat)


@dataclass(frozen=True)
class BlockMoments:
    """First and second moments inside one time-sharing block."""

    index: int
    weight: float
    mean: np.ndarray
    cov: np.ndarray  # Cov[i | u]
    cov1: np.ndarray  # Cov[i^(1) | u]
    cov2: np.ndarray  # Cov[i^(2) | u]
    cov12: np.ndarray  # Cov[i^(12) | u]
    i1: np.ndarray  # (x1, 3)
    i2: np.ndarray  # (x2, 3)
    q1: np.ndarray
    q2: np.ndarray


def block_moments(j: JointLaw, d: InfoDensity) -> list[BlockMoments]:
    vals = d.masked
    cw = j.cond_weights
    i1 = cond_mean_info(j, d, "user1")
    i2 = cond_mean_info(j, d, "user2")
    i12 = cond_mean_info(j, d, "both")
    q1, q2 = j.inputs.q1, j.inputs.q2
    out = []
    for u, qu in enumerate(j.inputs.weights):
        c = cw[u]
        mean = np.einsum("aby,abyk->k", c, vals[u])
        out.append(
            BlockMoments(
                index=u,
                weight=float(qu),
                mean=mean,
                cov=_cov(c, vals[u], mean),
                cov1=_cov(q1[u], i1[u], mean),
                cov2=_cov(q2[u], i2[u], mean),
                cov12=_cov(np.outer(q1[u], q2[u]), i12[u], mean),
                i1=i1[u],
                i2=i2[u],
                q1=q1[u],
                q2=q2[u],
            )
        )
    return out


def mean_vector(j: JointLaw, d: InfoDensity) -> RateVector:
    return RateVector.from_array(np.einsum("uaby,uabyk->k", j.p, d.masked))


def _average(blocks: list[BlockMoments], fn) -> np.ndarray:
    return sum(b.weight * fn(b) for b in blocks)


def cov_cc(j: JointLaw, d: InfoDensity) -> DispersionMatrix:
    """Dispersion matrix of constant-composition coding for both users."""
    blocks = block_moments(j, d)
    return DispersionMatrix(_average(blocks, lambda b: b.cov - b.cov1 - b.cov2), "cc")


def cov_iid(j: JointLaw, d: InfoDensity) -> DispersionMatrix:
    blocks = block_moments(j, d)
    return DispersionMatrix(_average(blocks, lambda b: b.cov), "iid")


def cov_cc_iid(j: JointLaw, d: InfoDensity, which_user: int = 1) -> DispersionMatrix:
    """One user constant-composition (``which_user``), the other i.i.d."""
    blocks = block_moments(j, d)
    if which_user == 1:
        return DispersionMatrix(_average(blocks, lambda b: b.cov - b.cov1), "cc_iid_1")
    if which_user == 2:
        return DispersionMatrix(_average(blocks, lambda b: b.cov - b.cov2), "cc_iid_2")
    raise ValueError("which_user must be 1 or 2")


def cov_joint(j: JointLaw, d: InfoDensity) -> DispersionMatrix:
    blocks = block_moments(j, d)
    return DispersionMatrix(_average(blocks, lambda b: b.cov - b.cov12), "joint")


def all_dispersions(j: JointLaw, d: InfoDensity) -> dict[str, DispersionMatrix]:
    blocks = block_moments(j, d)
    recipes = {
        "cc": lambda b: b.cov - b.cov1 - b.cov2,
        "cc_iid_1": lambda b: b.cov - b.cov1,
        "cc_iid_2": lambda b: b.cov - b.cov2,
        "iid": lambda b: b.cov,
        "joint": lambda b: b.cov - b.cov12,
    }
    return {k: DispersionMatrix(_average(blocks, f), k) for k, f in recipes.items()}


def ordering_gaps(mats: dict[str, DispersionMatrix]) -> dict[str, float]:
    """Smallest eigenvalue of each consecutive difference in the PSD chain.

    ``joint <= cc <= cc_iid_nu <= iid``; all gaps are >= 0 up to round-off.
    """
    pairs = {
        "iid-cc_iid_1": ("iid", "cc_iid_1"),
        "iid-cc_iid_2": ("iid", "cc_iid_2"),
        "cc_iid_1-cc": ("cc_iid_1", "cc"),
        "cc_iid_2-cc": ("cc_iid_2", "cc"),
        "cc-joint": ("cc", "joint"),
    }
    return {
        name: float(np.linalg.eigvalsh(mats[a].m - mats[b].m)[0]) for name, (a, b) in pairs.items()
    }


# --------------------------------------------------------------------------
# Finite blocklength


def pairwise_law(q, n: int) -> np.ndarray:
    """``P[X' = x' | X = x]`` for two distinct positions of a uniform type-class draw."""
    if n < 2:
        raise ModelError("pairwise law needs n >= 2")
    q = np.asarray(q, dtype=float)
    counts = n * q
    if np.max(np.abs(counts - np.round(counts))) > INTEGRAL_TOL * n:
        raise ModelError(f"n*q is not integral for n={n}; use nearest_type first")
    counts = np.round(counts)
    return (counts[None, :] - np.eye(q.size)) / (n - 1)


def _block_sizes(j: JointLaw, n: int) -> list[int]:
    sizes = n * j.inputs.weights
    if np.max(np.abs(sizes - np.round(sizes))) > INTEGRAL_TOL * n:
        raise ModelError(f"n*Q_U is not integral for n={n}; use typed_inputs/nearest_type first")
    sizes = np.round(sizes).astype(int)
    for u, nu in enumerate(sizes):
        for q in (j.inputs.q1[u], j.inputs.q2[u]):
            c = nu * q
            if nu and np.max(np.abs(c - np.round(c))) > INTEGRAL_TOL * max(nu, 1):
                raise ModelError(
                    f"block u={u} of size {nu}: n_u*Q is not integral; use typed_inputs first"
                )
    return [int(s) for s in sizes]


def finite_n_cov(j: JointLaw, d: InfoDensity, n: int) -> MomentReport:
    """Exact ``Cov[i^n]`` when each user's codeword is uniform on its type class.

    Within a block of size ``n_u`` two distinct positions are coupled through
    the pairwise law; blocks are independent.  The same-codeword / fresh-output
    term ``m4`` is ``Cov[i^(12)] / (n-1)^2``.
    """
    if n < 2:
        raise ModelError("finite_n_cov needs n >= 2")
    sizes = _block_sizes(j, n)
    blocks = block_moments(j, d)
    total = np.zeros((3, 3))
    mean = np.zeros(3)
    ms = [np.zeros((3, 3)) for _ in range(4)]
    pairs = n * n - n
    for b, nu in zip(blocks, sizes):
        if nu == 0:
            continue
        mean += nu * b.mean
        total += nu * b.cov
        if nu < 2:
            continue
        centred = np.einsum("aby,abyk->k", j.cond_weights[b.index], d.masked[b.index] - b.mean)
        m1 = nu**2 / (nu - 1) ** 2 * np.outer(centred, centred)
        m2 = -nu / (nu - 1) ** 2 * b.cov2
        m3 = -nu / (nu - 1) ** 2 * b.cov1
        m4 = b.cov12 / (nu - 1) ** 2
        block_pairs = nu * nu - nu
        for acc, m in zip(ms, (m1, m2, m3, m4)):
            acc += block_pairs / pairs * m
        total += block_pairs * (m1 + m2 + m3 + m4)
    return MomentReport(n, *ms, exact_cov=0.5 * (total + total.T), mean=mean)


def cross_moment_terms(j: JointLaw, d: InfoDensity, n: int) -> tuple[np.ndarray, ...]:
    """``M1..M4`` evaluated directly from their sums over the coupled pair (no identities).

    Only for ``U`` empty.  Used to check the closed forms in ``finite_n_cov``.
    """
    if j.inputs.u_size > 1:
        raise ModelError("cross_moment_terms is for inputs without time sharing")
    q1, q2 = j.inputs.q1[0], j.inputs.q2[0]
    w = j.channel.w
    vals = d.masked[0]
    mean = np.einsum("a,b,aby,abyk->k", q1, q2, w, vals)
    dev = np.where(j.support[0][..., None], vals - mean, 0.0)  # (x1,x2,y,3)
    # expected centred density at fixed (x1,x2)
    e12 = np.einsum("aby,abyk->abk", w, dev)
    c = 1.0 / (n - 1) ** 2
    m1 = c * n * n * np.einsum("a,b,abk,c,d,cdl->kl", q1, q2, e12, q1, q2, e12)
    # M2: X2 shared, X1 and output fresh
    m2 = -c * n * np.einsum("a,b,abk,c,cbl->kl", q1, q2, e12, q1, e12)
    m3 = -c * n * np.einsum("a,b,abk,d,adl->kl", q1, q2, e12, q2, e12)
    # M4: same inputs, independent outputs y and y~
    m4 = c * np.einsum("a,b,aby,abyk,abz,abzl->kl", q1, q2, w, dev, w, dev)
    return m1, m2, m3, m4


# --------------------------------------------------------------------------
# Berry-Esseen moment


def _inv_sqrt(m: np.ndarray) -> np.ndarray:
    lam, vec = np.linalg.eigh(m)
    if lam[0] <= PSD_TOL * max(1.0, lam[-1]):
        raise ModelError("sigma_n is singular; restrict to its support")
    return (vec / np.sqrt(lam)) @ vec.T


def beta_n(
    j: JointLaw, d: InfoDensity, sigma_n: DispersionMatrix | np.ndarray, basis: np.ndarray | None = None
) -> float:
    """Third absolute moment of the whitened, doubly-centred density vector.

    ``basis`` (3 x r, orthonormal columns) restricts the computation to a
    subspace, for rank-deficient ``sigma_n``.
    """
    s = sigma_n.m if isinstance(sigma_n, DispersionMatrix) else np.asarray(sigma_n, float)
    if basis is not None:
        s = basis.T @ s @ basis
    else:
        basis = np.eye(3)
    root = _inv_sqrt(s) @ basis.T  # (r, 3)
    vals = d.masked
    w = j.channel.w
    total = 0.0
    for u, b in enumerate(block_moments(j, d)):
        centred = (
            vals[u]
            - np.nan_to_num(b.i1)[:, None, None, :]
            - np.nan_to_num(b.i2)[None, :, None, :]
            + b.mean
        )
        t = np.einsum("rk,abyk->abyr", root, centred)
        norm3 = np.linalg.norm(t, axis=-1) ** 3
        inner = np.einsum("aby,aby->ab", w * j.support[u], norm3)
        total += b.weight * float(np.einsum("a,b,ab->", b.q1, b.q2, inner))
    return total

