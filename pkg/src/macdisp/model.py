"""Channels, input distributions, joint laws and information densities.

Everything here is in nats.  Arrays are indexed ``(u, x1, x2, y)``; the
absence of time sharing is encoded as ``u_size == 0`` with a single implicit
``u`` of probability one, so downstream formulas are always written with a
leading ``u`` axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np

ROW_TOL = 1e-9


class ModelError(ValueError):
    """Malformed or inconsistent channel / input description."""


def _frozen(a: Any, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _check_rows(table: np.ndarray, what: str) -> np.ndarray:
    """Validate that the last axis holds probability vectors.

    Rows within ``ROW_TOL`` of one are renormalized, anything else is
    rejected.
    """
    if not np.all(np.isfinite(table)):
        raise ModelError(f"{what}: non-finite entry")
    if np.any(table < 0):
        raise ModelError(f"{what}: negative entry")
    if np.any(table > 1 + ROW_TOL):
        raise ModelError(f"{what}: entry above 1")
    sums = table.sum(axis=-1, keepdims=True)
    bad = np.abs(sums - 1.0) > ROW_TOL
    if np.any(bad):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ModelError(f"{what}: row sums deviate from 1 by {worst:.3g}")
    return table / sums


@dataclass(frozen=True)
class Channel:
    """Two-user discrete memoryless MAC ``W(y | x1, x2)``."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 3 or min(w.shape) < 1:
            raise ModelError(f"channel table must be 3-dimensional, got shape {w.shape}")
        object.__setattr__(self, "w", _frozen(_check_rows(w, "channel")))

    @property
    def x1_size(self) -> int:
        return self.w.shape[0]

    @property
    def x2_size(self) -> int:
        return self.w.shape[1]

    @property
    def y_size(self) -> int:
        return self.w.shape[2]


@dataclass(frozen=True)
class InputSpec:
    """Time-sharing law ``q_u`` and conditional input laws ``q1[u], q2[u]``.

    ``u_size == 0`` means no time sharing: ``q_u`` is empty and ``q1``/``q2``
    have a single row.
    """

    q1: np.ndarray
    q2: np.ndarray
    q_u: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        q_u = np.atleast_1d(np.asarray(self.q_u, dtype=float))
        q1 = np.atleast_2d(np.asarray(self.q1, dtype=float))
        q2 = np.atleast_2d(np.asarray(self.q2, dtype=float))
        if q1.ndim != 2 or q2.ndim != 2:
            raise ModelError("q1 and q2 must be conditional probability tables")
        rows = max(q_u.size, 1)
        if q1.shape[0] != rows or q2.shape[0] != rows:
            raise ModelError(
                f"q1/q2 need {rows} rows for u_size={q_u.size}, "
                f"got {q1.shape[0]} and {q2.shape[0]}"
            )
        if q_u.size:
            q_u = _check_rows(q_u, "q_u")
        object.__setattr__(self, "q_u", _frozen(q_u))
        object.__setattr__(self, "q1", _frozen(_check_rows(q1, "q1")))
        object.__setattr__(self, "q2", _frozen(_check_rows(q2, "q2")))

    @property
    def u_size(self) -> int:
        return self.q_u.size

    @property
    def weights(self) -> np.ndarray:
        """Probability of each time-sharing block (``[1.0]`` when ``U`` is empty)."""
        return self.q_u if self.q_u.size else np.ones(1)

    @classmethod
    def product(cls, q1, q2) -> "InputSpec":
        """Inputs without time sharing."""
        return cls(q1=np.atleast_2d(q1), q2=np.atleast_2d(q2))


@dataclass(frozen=True)
class JointLaw:
    """``P(u,x1,x2,y) = Q_U(u) Q1(x1|u) Q2(x2|u) W(y|x1,x2)`` plus output marginals.

    The conditional output laws are defined for every conditioning value,
    including zero-probability ones, because ``X1`` and ``X2`` are
    conditionally independent given ``U``: e.g.
    ``P_{Y|X2,U}(y|x2,u) = sum_x1 Q1(x1|u) W(y|x1,x2)``.
    """

    channel: Channel
    inputs: InputSpec
    p: np.ndarray
    p_y_given_x2u: np.ndarray  # (u, x2, y)
    p_y_given_x1u: np.ndarray  # (u, x1, y)
    p_y_given_u: np.ndarray  # (u, y)

    @property
    def support(self) -> np.ndarray:
        return self.p > 0

    @property
    def cond_weights(self) -> np.ndarray:
        """``Q1(x1|u) Q2(x2|u) W(y|x1,x2)``: the joint law within each block."""
        q1, q2 = self.inputs.q1, self.inputs.q2
        return q1[:, :, None, None] * q2[:, None, :, None] * self.channel.w[None]


def joint_law(ch: Channel, inp: InputSpec) -> JointLaw:
    if inp.q1.shape[1] != ch.x1_size or inp.q2.shape[1] != ch.x2_size:
        raise ModelError(
            f"input alphabets ({inp.q1.shape[1]}, {inp.q2.shape[1]}) do not match "
            f"channel ({ch.x1_size}, {ch.x2_size})"
        )
    q1, q2, w = inp.q1, inp.q2, ch.w
    qu = inp.weights
    p = qu[:, None, None, None] * q1[:, :, None, None] * q2[:, None, :, None] * w[None]
    p_y_x2u = np.einsum("ua,aby->uby", q1, w)
    p_y_x1u = np.einsum("ub,aby->uay", q2, w)
    p_y_u = np.einsum("ua,ub,aby->uy", q1, q2, w)
    return JointLaw(
        channel=ch,
        inputs=inp,
        p=_frozen(p),
        p_y_given_x2u=_frozen(p_y_x2u),
        p_y_given_x1u=_frozen(p_y_x1u),
        p_y_given_u=_frozen(p_y_u),
    )


@dataclass(frozen=True)
class InfoDensity:
    """Information density vector ``(i1, i2, i12)`` on the grid ``(u,x1,x2,y)``.

    ``values`` is the raw table: ``-inf`` where ``W = 0`` (useful when the
    density is evaluated at mismatched codeword symbols), finite wherever the
    joint law is positive.  Expectations must go through ``masked``.
    """

    values: np.ndarray  # (u, x1, x2, y, 3)
    support_mask: np.ndarray  # (u, x1, x2, y)

    @property
    def masked(self) -> np.ndarray:
        """``values`` with off-support entries set to zero."""
        return np.where(self.support_mask[..., None], self.values, 0.0)


def info_density(j: JointLaw) -> InfoDensity:
    w = j.channel.w[None]  # (1, x1, x2, y)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_w = np.log(w)
        i1 = log_w - np.log(j.p_y_given_x2u[:, None, :, :])
        i2 = log_w - np.log(j.p_y_given_x1u[:, :, None, :])
        i12 = log_w - np.log(j.p_y_given_u[:, None, None, :])
    shape = j.p.shape
    vals = np.stack(
        [np.broadcast_to(i1, shape), np.broadcast_to(i2, shape), np.broadcast_to(i12, shape)],
        axis=-1,
    )
    # 0/0 only happens where W = 0; such points are never charged.
    vals = np.where(np.isnan(vals), -np.inf, vals)
    return InfoDensity(values=_frozen(vals), support_mask=_frozen(j.p > 0, dtype=bool))


def cond_mean_info(
    j: JointLaw, d: InfoDensity, which: Literal["user1", "user2", "both"]
) -> np.ndarray:
    """Conditional means of the density vector.

    ``user1`` gives ``i^(1)(u, x1)``, ``user2`` gives ``i^(2)(u, x2)`` and
    ``both`` gives ``i^(12)(u, x1, x2)``; the last axis holds the three
    components.  Entries whose conditioning event has probability zero are
    NaN.
    """
    vals = d.masked
    q1, q2 = j.inputs.q1, j.inputs.q2
    qu = j.inputs.weights
    if which == "both":
        out = np.einsum("aby,uabyk->uabk", j.channel.w, vals)
        prob = qu[:, None, None] * q1[:, :, None] * q2[:, None, :]
    elif which == "user1":
        # weights Q2(x2|u) W(y|x1,x2) conditional on (u, x1)
        wts = q2[:, None, :, None] * j.channel.w[None]
        out = np.einsum("uaby,uabyk->uak", wts, vals)
        prob = qu[:, None] * q1
    elif which == "user2":
        wts = q1[:, :, None, None] * j.channel.w[None]
        out = np.einsum("uaby,uabyk->ubk", wts, vals)
        prob = qu[:, None] * q2
    else:
        raise ValueError(f"unknown conditioning {which!r}")
    return np.where((prob > 0)[..., None], out, np.nan)


# --------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class Composition:
    counts: tuple[int, ...]

    def __post_init__(self):
        if any(c < 0 for c in self.counts):
            raise ModelError("composition counts must be nonnegative")

    @property
    def n(self) -> int:
        return int(sum(self.counts))

    @property
    def distribution(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.n

    def base_sequence(self) -> np.ndarray:
        """Sorted arrangement ``0...0 1...1 ...`` of the type class."""
        return np.repeat(np.arange(len(self.counts)), self.counts)


def nearest_type(q, n: int) -> Composition:
    """Closest type of length ``n`` to ``q``: floors, then largest remainders.

    Ties among fractional parts go to the lowest symbol index.  The result
    is within ``1/n`` of ``q`` in the sup norm.
    """
    if n < 1:
        raise ModelError("blocklength must be positive")
    q = np.asarray(q, dtype=float)
    scaled = n * q
    counts = np.floor(scaled + 1e-9).astype(int)
    frac = scaled - counts
    remaining = n - int(counts.sum())
    # stable sort keeps lowest index first among equal fractional parts
    if remaining > 0:
        order = np.argsort(-frac, kind="stable")
        counts[order[:remaining]] += 1
    elif remaining < 0:
        order = np.argsort(frac, kind="stable")
        order = [k for k in order if counts[k] > 0]
        counts[order[:-remaining]] -= 1
    return Composition(tuple(int(c) for c in counts))


@dataclass(frozen=True)
class TypedInputs:
    """Inputs replaced by (conditional) types for blocklength ``n``."""

    n: int
    inputs: InputSpec
    block_sizes: tuple[int, ...]
    comps1: tuple[Composition, ...]
    comps2: tuple[Composition, ...]

    def time_sharing_sequence(self) -> np.ndarray:
        """Deterministic ``u`` sequence: symbols in sorted order."""
        return np.repeat(np.arange(len(self.block_sizes)), self.block_sizes)


def typed_inputs(inp: InputSpec, n: int) -> TypedInputs:
    """Nearest types ``Q_{U,n}``, then ``Q_{nu,n}(.|u)`` within each ``u`` block."""
    if inp.u_size:
        sizes = nearest_type(inp.q_u, n).counts
    else:
        sizes = (n,)
    comps1, comps2, rows1, rows2 = [], [], [], []
    for u, nu in enumerate(sizes):
        if nu == 0:
            # empty block never appears in the sequence; keep the row as given
            c1 = Composition((0,) * inp.q1.shape[1])
            c2 = Composition((0,) * inp.q2.shape[1])
            rows1.append(inp.q1[u])
            rows2.append(inp.q2[u])
        else:
            c1 = nearest_type(inp.q1[u], nu)
            c2 = nearest_type(inp.q2[u], nu)
            rows1.append(c1.distribution)
            rows2.append(c2.distribution)
        comps1.append(c1)
        comps2.append(c2)
    q_u = np.asarray(sizes, dtype=float) / n if inp.u_size else np.zeros(0)
    typed = InputSpec(q1=np.array(rows1), q2=np.array(rows2), q_u=q_u)
    return TypedInputs(n, typed, tuple(sizes), tuple(comps1), tuple(comps2))


# --------------------------------------------------------------------------
# Document format


def _parse(doc) -> dict:
    if isinstance(doc, dict):
        return doc
    try:
        return json.loads(doc)
    except (TypeError, json.JSONDecodeError) as exc:
        raise ModelError(f"channel document does not parse: {exc}") from None


def load_channel(doc) -> Channel:
    """Parse a channel from a JSON document (text or already-decoded dict)."""
    d = _parse(doc)
    try:
        sizes = int(d["x1_size"]), int(d["x2_size"]), int(d["y_size"])
        w = np.asarray(d["w"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"malformed channel document: {exc}") from None
    if w.size != np.prod(sizes):
        raise ModelError(f"w has {w.size} entries, expected {np.prod(sizes)} for sizes {sizes}")
    return Channel(w.reshape(sizes))


def load_inputs(doc, ch: Channel) -> InputSpec:
    """Input distributions from the same document; uniform where omitted."""
    d = _parse(doc)
    u_size = int(d.get("u_size", 0))
    rows = max(u_size, 1)
    try:
        q_u = np.asarray(d.get("q_u", np.full(u_size, 1.0 / u_size) if u_size else []), float)
        q1 = np.asarray(d.get("q1", np.full((rows, ch.x1_size), 1.0 / ch.x1_size)), float)
        q2 = np.asarray(d.get("q2", np.full((rows, ch.x2_size), 1.0 / ch.x2_size)), float)
    except (TypeError, ValueError) as exc:
        raise ModelError(f"malformed input distributions: {exc}") from None
    if q_u.size != u_size:
        raise ModelError(f"q_u has {q_u.size} entries, u_size is {u_size}")
    return InputSpec(q1=np.atleast_2d(q1), q2=np.atleast_2d(q2), q_u=q_u)


def dump_document(ch: Channel, inp: InputSpec | None = None) -> dict:
    doc: dict[str, Any] = {
        "x1_size": ch.x1_size,
        "x2_size": ch.x2_size,
        "y_size": ch.y_size,
        "w": ch.w.tolist(),
    }
    if inp is not None:
        doc["u_size"] = inp.u_size
        if inp.u_size:
            doc["q_u"] = inp.q_u.tolist()
        doc["q1"] = inp.q1.tolist()
        doc["q2"] = inp.q2.tolist()
    return doc


def random_channel(rng: np.random.Generator, x1: int, x2: int, y: int, sparsity: float = 0.0) -> Channel:
    """Random channel with Dirichlet rows; ``sparsity`` zeroes entries at random."""
    w = rng.dirichlet(np.ones(y), size=(x1, x2))
    if sparsity:
        mask = rng.random(w.shape) < sparsity
        mask[..., 0] = False
        w = np.where(mask, 0.0, w)
        w /= w.sum(-1, keepdims=True)
    return Channel(w)


def random_inputs(rng: np.random.Generator, x1: int, x2: int, u: int = 0) -> InputSpec:
    rows = max(u, 1)
    return InputSpec(
        q1=rng.dirichlet(np.ones(x1), size=rows),
        q2=rng.dirichlet(np.ones(x2), size=rows),
        q_u=rng.dirichlet(np.ones(u)) if u else np.zeros(0),
    )
