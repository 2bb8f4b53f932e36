"""First- and second-order rate regions, and the collision channel.

Regions are traced by radial bisection: membership is monotone along every
ray from the origin in the positive quadrant, so each ray meets the boundary
once.  Points are returned with ``r1`` increasing (``r2`` nonincreasing).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Literal

import numpy as np
from scipy.optimize import brentq

from .dispersion import DispersionMatrix, RateVector, mean_vector
from .model import Channel, InputSpec, ModelError, cond_mean_info, info_density, joint_law
from .mvn import QUAD_TOL, GaussianSpec, decompose, qinv_member

RAY_REL_TOL = 1e-6


@dataclass(frozen=True)
class RegionConfig:
    n: int
    eps: float
    resolution: int = 64
    ignore_third_order: bool = True

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if self.resolution < 16:
            raise ValueError("resolution must be >= 16")
        if not self.ignore_third_order:
            raise ValueError("third-order terms are always ignored")


@dataclass(frozen=True)
class RegionBoundary:
    points: np.ndarray  # (k, 2), nats per channel use
    kind: Literal["first_order", "second_order", "capacity_union"]
    provenance: dict = field(default_factory=dict)
    label: str = ""
    angles: np.ndarray | None = None
    radii: np.ndarray | None = None

    @property
    def empty(self) -> bool:
        return len(self.points) == 0

    @property
    def csv_kind(self) -> str:
        return f"{self.kind}:{self.label}" if self.label else self.kind


def ray_angles(resolution: int) -> np.ndarray:
    return np.linspace(0.0, np.pi / 2, resolution)


def _ray(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    # exact axes so that boundary points land on them
    if theta == 0.0:
        c, s = 1.0, 0.0
    elif theta == np.pi / 2:
        c, s = 0.0, 1.0
    return np.array([c, s, c + s])


def _points(angles: np.ndarray, radii: np.ndarray) -> np.ndarray:
    pts = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
    pts[angles == 0.0, 1] = 0.0
    pts[angles == np.pi / 2, 0] = 0.0
    pts = pts[::-1]  # r1 increasing
    if len(pts) > 1:
        keep = np.r_[True, np.any(np.abs(np.diff(pts, axis=0)) > 0, axis=1)]
        pts = pts[keep]
    return pts


def first_order_radius(i: RateVector, theta: float) -> float:
    d = _ray(theta)
    limits = [i.as_array()[k] / d[k] for k in range(3) if d[k] > 0]
    return max(0.0, min(limits))


def first_order_region(i: RateVector, resolution: int = 64) -> RegionBoundary:
    """Pentagon ``{R >= 0 : R <= I}`` sampled along ``resolution`` rays."""
    if np.any(i.as_array() < 0):
        raise ValueError("mutual informations must be nonnegative")
    angles = ray_angles(resolution)
    radii = np.array([first_order_radius(i, t) for t in angles])
    return RegionBoundary(
        _points(angles, radii),
        "first_order",
        {"I": i.as_array().tolist()},
        angles=angles,
        radii=radii,
    )


def _spec(v) -> GaussianSpec:
    if isinstance(v, GaussianSpec):
        return v
    m = v.m if isinstance(v, DispersionMatrix) else np.asarray(v, dtype=float)
    return decompose(m)


def second_order_member(i: RateVector, v, cfg: RegionConfig, r1: float, r2: float) -> bool:
    """``n R`` inside ``n I - sqrt(n) Q_inv(V, eps)`` (third-order term dropped)."""
    z = np.sqrt(cfg.n) * (i.as_array() - np.array([r1, r2, r1 + r2]))
    return qinv_member(_spec(v), cfg.eps, z)


def _radius(member, theta: float, guess: float) -> float:
    d = _ray(theta)
    hi = max(guess, 1e-3)
    for _ in range(80):
        if not member(hi * d):
            break
        hi *= 2
    else:
        raise ModelError("region appears unbounded along a ray")
    lo = 0.0
    while hi - lo > RAY_REL_TOL * lo and hi > 1e-14:
        mid = 0.5 * (lo + hi)
        if member(mid * d):
            lo = mid
        else:
            hi = mid
    return lo


def trace_boundary(i: RateVector, v, cfg: RegionConfig, label: str = "") -> RegionBoundary:
    """Second-order boundary along ``cfg.resolution`` rays spanning 0 to 90 degrees."""
    spec = _spec(v)
    mean = i.as_array()
    root_n = np.sqrt(cfg.n)

    def member(rate):
        return qinv_member(spec, cfg.eps, root_n * (mean - rate))

    kind = v.kind if isinstance(v, DispersionMatrix) else "custom"
    provenance = {
        "n": cfg.n,
        "eps": cfg.eps,
        "I": mean.tolist(),
        "V": spec.cov.ravel().tolist(),
        "V_kind": kind,
        "quadrature_tol": QUAD_TOL,
        "ignore_third_order": True,
        **spec.diagnostics(),
    }
    angles = ray_angles(cfg.resolution)
    if not member(np.zeros(3)):
        return RegionBoundary(np.zeros((0, 2)), "second_order", provenance, label or kind)
    radii = np.array([_radius(member, t, first_order_radius(i, t)) for t in angles])
    return RegionBoundary(
        _points(angles, radii),
        "second_order",
        provenance,
        label or kind,
        angles=angles,
        radii=radii,
    )


def capacity_union(rates: Iterable[RateVector], resolution: int = 64, description: str = "") -> RegionBoundary:
    """Outer envelope of the first-order pentagons of a family of inputs."""
    angles = ray_angles(resolution)
    radii = np.zeros(resolution)
    count = 0
    for i in rates:
        radii = np.maximum(radii, [first_order_radius(i, t) for t in angles])
        count += 1
    return RegionBoundary(
        _points(angles, radii),
        "capacity_union",
        {"family": description, "members": count},
        angles=angles,
        radii=radii,
    )


def rectangle_deviation(boundary: RegionBoundary) -> float:
    """Largest distance from a boundary point to the best axis-aligned rectangle.

    The rectangle is ``[0, max r1] x [0, max r2]``; a point's distance to its
    outer edges is ``min(a - r1, b - r2)``.
    """
    pts = boundary.points
    a, b = pts[:, 0].max(), pts[:, 1].max()
    return float(np.max(np.minimum(a - pts[:, 0], b - pts[:, 1])))


# --------------------------------------------------------------------------
# The collision channel

COLLISION_OUTPUTS = ((0, 0), (0, 1), (0, 2), (1, 0), (2, 0), "c")


def collision_channel() -> Channel:
    """Inputs {0,1,2}; output is the pair unless both users send a nonzero symbol."""
    w = np.zeros((3, 3, 6))
    for a in range(3):
        for b in range(3):
            y = COLLISION_OUTPUTS.index((a, b)) if min(a, b) == 0 else 5
            w[a, b, y] = 1.0
    return Channel(w)


def collision_inputs(p1: float, p2: float) -> InputSpec:
    for p in (p1, p2):
        if not 0 <= p < 0.5:
            raise ValueError(f"p must lie in [0, 1/2), got {p}")
    return InputSpec.product([1 - 2 * p1, p1, p1], [1 - 2 * p2, p2, p2])


def collision_rates(p1: float, p2: float) -> RateVector:
    j = joint_law(collision_channel(), collision_inputs(p1, p2))
    return mean_vector(j, info_density(j))


def collision_family(grid: int = 200):
    """Rates over the uniform ``grid x grid`` lattice on ``[0, 1/2)^2``."""
    ps = np.arange(grid) / (2 * grid)
    for p1 in ps:
        for p2 in ps:
            yield collision_rates(p1, p2)


def conditional_mean_variances(p1: float, p2: float) -> dict[str, float]:
    """Variances of ``i_nu^(1)(X1)`` and ``i_nu^(2)(X2)`` for the collision channel.

    Keys are ``"1:<nu>"`` (conditioning on user 1) and ``"2:<nu>"``.
    """
    j = joint_law(collision_channel(), collision_inputs(p1, p2))
    d = info_density(j)
    out = {}
    for user, which, q in (("1", "user1", j.inputs.q1[0]), ("2", "user2", j.inputs.q2[0])):
        means = np.nan_to_num(cond_mean_info(j, d, which)[0])
        centre = q @ means
        var = q @ (means - centre) ** 2
        for k, nu in enumerate(("1", "2", "12")):
            out[f"{user}:{nu}"] = float(var[k])
    return out


def _user1_gap(p: float, component: int) -> float:
    j = joint_law(collision_channel(), collision_inputs(p, p))
    means = cond_mean_info(j, info_density(j), "user1")[0]
    # symbols 1 and 2 are exchangeable, so zero variance <=> symbol 0 agrees with symbol 1
    return float(means[0, component] - means[1, component])


def optimality_roots() -> tuple[float, float]:
    """Symmetric input parameters at which conditional-mean variances vanish.

    The first value zeroes the variance of the collision-free part of
    ``i12^(1)``, namely ``H(Q2) + log 1/Q1(x1)``: it is constant exactly
    when ``Q1`` is uniform, so ``p = 1/3``.  The second is the numerical root
    of ``Var[i1^(1)] = 0`` with ``p1 = p2``.  (With the collision output
    included, ``Var[i12^(1)]`` vanishes instead on ``p1/(1-2p1) = 2^(-4 p2)``;
    see ``sum_rate_variance_root``.)
    """
    uniform = 1.0 / 3.0
    root = brentq(_user1_gap, 0.2, 0.32, args=(0,), xtol=1e-14)
    return uniform, float(root)


def sum_rate_variance_root(p2: float | None = None) -> float:
    """``p1`` at which ``Var[i12^(1)]`` is exactly zero.

    With ``p2=None`` the root is taken on the diagonal ``p1 = p2``.
    """
    if p2 is None:
        return float(brentq(_user1_gap, 0.05, 0.45, args=(2,), xtol=1e-14))

    def gap(p1):
        j = joint_law(collision_channel(), collision_inputs(p1, p2))
        means = cond_mean_info(j, info_density(j), "user1")[0]
        return means[0, 2] - means[1, 2]

    return float(brentq(gap, 1e-9, 0.5 - 1e-9, xtol=1e-14))
