"""Constant-composition random coding by simulation.

Codewords are uniform draws from (conditional) type classes, obtained by
shuffling the sorted base sequence.  Two samplers produce the density sum
``i^n``:

* ``"sequence"`` draws the codewords and outputs symbol by symbol;
* ``"counts"`` draws the joint type of ``(X1, X2)`` by sequential
  hypergeometric splits and the output counts per cell by multinomials.

They have the same law for ``i^n`` (it depends on the sequences only through
joint counts); the count sampler is much cheaper for large ``n``.

Randomness: trials are grouped into chunks of ``chunk_size``; chunk ``c``
uses a Philox stream seeded by ``SeedSequence(seed, spawn_key=(c,))``.  The
sample set depends only on ``(seed, chunk_size)``, and chunk results are
combined in chunk order, so results are bit-identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from scipy.special import ndtr

from .dispersion import DispersionMatrix, finite_n_cov
from .model import (
    Channel,
    Composition,
    InfoDensity,
    InputSpec,
    JointLaw,
    ModelError,
    TypedInputs,
    info_density,
    joint_law,
    typed_inputs,
)
from .mvn import decompose, lower_orthant

Sampler = Literal["counts", "sequence"]
CLT_GRID = np.linspace(-2.5, 2.5, 11)


@dataclass(frozen=True)
class SimConfig:
    n: int
    trials: int
    seed: int = 0
    workers: int = 1
    chunk_size: int = 8192
    compositions: TypedInputs | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.compositions is not None and self.compositions.n != self.n:
            raise ValueError("compositions do not match n")


@dataclass(frozen=True)
class TailEstimate:
    estimate: float
    stderr: float
    trials: int

    @classmethod
    def from_count(cls, hits: int, trials: int) -> "TailEstimate":
        p = hits / trials
        return cls(p, math.sqrt(p * (1 - p) / trials), trials)


@dataclass(frozen=True)
class MomentEstimate:
    mean: np.ndarray
    cov: np.ndarray
    mean_stderr: np.ndarray
    cov_stderr: np.ndarray
    trials: int

    def z_scores(self, exact_cov: np.ndarray) -> np.ndarray:
        diff = self.cov - exact_cov
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.abs(diff) / self.cov_stderr
        return np.where(self.cov_stderr > 0, z, np.where(np.abs(diff) <= 1e-12, 0.0, np.inf))


# --------------------------------------------------------------------------
# Randomness and scheduling


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(chunk,))))


def _run_chunks(cfg: SimConfig, work: Callable[[np.random.Generator, int], object]) -> list:
    sizes = [cfg.chunk_size] * (cfg.trials // cfg.chunk_size)
    if cfg.trials % cfg.chunk_size:
        sizes.append(cfg.trials % cfg.chunk_size)

    def job(c):
        return work(chunk_rng(cfg.seed, c), sizes[c])

    if cfg.workers == 1 or len(sizes) == 1:
        return [job(c) for c in range(len(sizes))]
    with ThreadPoolExecutor(cfg.workers) as pool:
        return list(pool.map(job, range(len(sizes))))


def sample_type_class(comp: Composition, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Uniform draw(s) from the type class of ``comp``.

    Each row is a Fisher-Yates shuffle of the sorted base sequence.
    """
    base = comp.base_sequence()
    if size is None:
        return rng.permuted(base)
    return rng.permuted(np.broadcast_to(base, (size, base.size)), axis=1)


# --------------------------------------------------------------------------
# Per-block sampling plans


@dataclass
class _Block:
    u: int
    size: int
    comp1: Composition
    comp2: Composition
    w: np.ndarray  # (x1, x2, y)
    vals: np.ndarray  # masked densities (x1, x2, y, 3)
    raw: np.ndarray  # densities with -inf off support
    cdf: np.ndarray = field(init=False)  # (x1*x2, y)
    deterministic: np.ndarray = field(init=False)  # (x1, x2) -> y or -1

    def __post_init__(self):
        flat = self.w.reshape(-1, self.w.shape[-1])
        cdf = np.cumsum(flat, axis=1)
        last = flat.shape[1] - 1 - np.argmax(flat[:, ::-1] > 0, axis=1)
        for k, l in enumerate(last):
            cdf[k, l:] = 1.0
        self.cdf = cdf
        det = np.where(np.isclose(flat.max(axis=1), 1.0, rtol=0, atol=0), flat.argmax(axis=1), -1)
        self.deterministic = det.reshape(self.w.shape[:2])


@dataclass
class _Plan:
    typed: TypedInputs
    law: JointLaw
    density: InfoDensity
    blocks: list[_Block]


def make_plan(ch: Channel, inp: InputSpec, cfg: SimConfig) -> _Plan:
    """Types for ``cfg.n`` and the densities they induce.

    All densities are taken with respect to the typed inputs, so the exact
    moments of ``finite_n_cov`` apply to the simulated law.
    """
    typed = cfg.compositions or typed_inputs(inp, cfg.n)
    law = joint_law(ch, typed.inputs)
    d = info_density(law)
    blocks = [
        _Block(u, nu, typed.comps1[u], typed.comps2[u], ch.w, d.masked[u], d.values[u])
        for u, nu in enumerate(typed.block_sizes)
        if nu > 0
    ]
    return _Plan(typed, law, d, blocks)


def _joint_type(rng: np.random.Generator, c1: np.ndarray, c2: np.ndarray, size: int) -> np.ndarray:
    """Counts ``N(a, b)`` of ``(X1, X2) = (a, b)`` for a uniform shuffle of ``X1``.

    The positions of ``X2 = b`` form a segment of length ``c2[b]``; its
    ``X1`` content is a multivariate hypergeometric draw from what remains.
    """
    a_size, b_size = c1.size, c2.size
    remaining = np.tile(c1.astype(np.int64), (size, 1))
    out = np.zeros((size, a_size, b_size), dtype=np.int64)
    for b in range(b_size):
        need = np.full(size, int(c2[b]), dtype=np.int64)
        for a in range(a_size - 1):
            others = remaining[:, a + 1 :].sum(axis=1)
            k = rng.hypergeometric(remaining[:, a], others, need)
            out[:, a, b] = k
            need -= k
        out[:, a_size - 1, b] = need
        remaining -= out[:, :, b]
    return out


def _counts_chunk(plan: _Plan, rng: np.random.Generator, size: int) -> np.ndarray:
    total = np.zeros((size, 3))
    for blk in plan.blocks:
        cells = _joint_type(rng, np.array(blk.comp1.counts), np.array(blk.comp2.counts), size)
        for a in range(cells.shape[1]):
            for b in range(cells.shape[2]):
                cnt = cells[:, a, b]
                if not cnt.any():
                    continue
                y = blk.deterministic[a, b]
                if y >= 0:
                    total += cnt[:, None] * blk.vals[a, b, y]
                else:
                    ycounts = rng.multinomial(cnt, blk.w[a, b])
                    total += ycounts @ blk.vals[a, b]
    return total


def _sample_outputs(blk: _Block, rng: np.random.Generator, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    cell = x1 * blk.w.shape[1] + x2
    u = 1.0 - rng.random(cell.shape)  # in (0, 1]
    y = np.zeros(cell.shape, dtype=np.int64)
    for k in range(blk.cdf.shape[1] - 1):
        y += u > blk.cdf[cell, k]
    return y


def _sequences(blk: _Block, rng: np.random.Generator, size: int):
    x1 = sample_type_class(blk.comp1, rng, size)
    x2 = sample_type_class(blk.comp2, rng, size)
    return x1, x2, _sample_outputs(blk, rng, x1, x2)


def _sequence_chunk(plan: _Plan, rng: np.random.Generator, size: int) -> np.ndarray:
    total = np.zeros((size, 3))
    for blk in plan.blocks:
        x1, x2, y = _sequences(blk, rng, size)
        total += blk.vals[x1, x2, y].sum(axis=1)
    return total


def density_sums(plan: _Plan, rng: np.random.Generator, size: int, sampler: Sampler = "counts") -> np.ndarray:
    """``size`` draws of ``i^n``, shape ``(size, 3)``."""
    if sampler == "counts":
        return _counts_chunk(plan, rng, size)
    if sampler == "sequence":
        return _sequence_chunk(plan, rng, size)
    raise ValueError(f"unknown sampler {sampler!r}")


# --------------------------------------------------------------------------
# Moments


def empirical_in_moments(
    ch: Channel, inp: InputSpec, cfg: SimConfig, sampler: Sampler = "counts"
) -> MomentEstimate:
    """Sample mean and covariance of ``i^n`` with entrywise standard errors.

    Samples are shifted by the exact mean before accumulation; covariance
    standard errors use the spread of the centred products.
    """
    if cfg.trials < 2:
        raise ValueError("need at least two trials for a covariance")
    plan = make_plan(ch, inp, cfg)
    shift = plan.typed.block_sizes @ _block_means(plan)

    def work(rng, size):
        x = density_sums(plan, rng, size, sampler) - shift
        prod = x[:, :, None] * x[:, None, :]
        return x.sum(0), (x * x).sum(0), prod.sum(0), (prod * prod).sum(0)

    parts = _run_chunks(cfg, work)
    s1, s1sq, s2, s2sq = (np.sum([p[k] for p in parts], axis=0) for k in range(4))
    t = cfg.trials
    mean = s1 / t
    cov = (s2 - t * np.outer(mean, mean)) / (t - 1)
    mean_se = np.sqrt(np.maximum(s1sq / t - mean**2, 0.0) / t)
    prod_var = np.maximum(s2sq / t - (s2 / t) ** 2, 0.0)
    return MomentEstimate(mean + shift, 0.5 * (cov + cov.T), mean_se, np.sqrt(prod_var / t), t)


def _block_means(plan: _Plan) -> np.ndarray:
    cw = plan.law.cond_weights
    return np.einsum("uaby,uabyk->uk", cw, plan.density.masked)


def exact_moments(ch: Channel, inp: InputSpec, n: int):
    """``finite_n_cov`` for the types used by the simulator at blocklength ``n``."""
    typed = typed_inputs(inp, n)
    law = joint_law(ch, typed.inputs)
    return finite_n_cov(law, info_density(law), n)


# --------------------------------------------------------------------------
# Threshold bound


def polynomial_degree(ch: Channel) -> int:
    return ch.x1_size + ch.x2_size - 2


def type_polynomial(ch: Channel, n: int) -> float:
    """``p0(n) = (n+1)^(|X1|+|X2|-2)``."""
    return float((n + 1) ** polynomial_degree(ch))


def thresholds(ch: Channel, n: int, log_m: np.ndarray) -> np.ndarray:
    """``gamma_nu = log M_nu + (d + 1/2) log n`` with ``d`` the degree of ``p0``."""
    return np.asarray(log_m, dtype=float) + (polynomial_degree(ch) + 0.5) * math.log(n)


def excess_prob(
    ch: Channel, inp: InputSpec, cfg: SimConfig, which: Literal[1, 2, 12], gamma: float
) -> TailEstimate:
    """``P[i_nu^n > gamma]`` with the codewords not decoded by ``nu`` replaced by independent copies.

    ``nu = 1`` uses ``(Xbar1, X2, Y)``, ``nu = 2`` uses ``(X1, Xbar2, Y)`` and
    ``nu = 12`` uses ``(Xbar1, Xbar2, Y)``; ``Y`` is always the output for
    ``(X1, X2)``.
    """
    if which not in (1, 2, 12):
        raise ValueError("which must be 1, 2 or 12")
    plan = make_plan(ch, inp, cfg)
    comp = {1: 0, 2: 1, 12: 2}[which]

    def work(rng, size):
        total = np.zeros(size)
        for blk in plan.blocks:
            x1, x2, y = _sequences(blk, rng, size)
            if which in (1, 12):
                x1 = sample_type_class(blk.comp1, rng, size)
            if which in (2, 12):
                x2 = sample_type_class(blk.comp2, rng, size)
            total += blk.raw[x1, x2, y, comp].sum(axis=1)
        return int(np.count_nonzero(total > gamma))

    return TailEstimate.from_count(sum(_run_chunks(cfg, work)), cfg.trials)


@dataclass(frozen=True)
class BoundReport:
    bound: float  # clamped to [0, 1]
    raw_bound: float
    success: TailEstimate  # P[i^n > gamma] componentwise
    gaussian_success: float
    gamma: np.ndarray
    polynomial_term: float  # p0(n) * sum_nu M_nu exp(-gamma_nu)
    n: int

    @property
    def clamped(self) -> bool:
        return self.raw_bound > 1.0

    @property
    def bound_stderr(self) -> float:
        return self.success.stderr

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "bound": self.bound,
            "raw_bound": self.raw_bound,
            "clamped": self.clamped,
            "success_estimate": self.success.estimate,
            "success_stderr": self.success.stderr,
            "trials": self.success.trials,
            "gaussian_success": self.gaussian_success,
            "gamma": self.gamma.tolist(),
            "polynomial_term": self.polynomial_term,
        }


def pe_upper_bound(
    ch: Channel, inp: InputSpec, cfg: SimConfig, r1: float, r2: float, sampler: Sampler = "counts"
) -> BoundReport:
    """Threshold bound ``1 - P[i^n > gamma] + p0(n) sum_nu M_nu e^{-gamma_nu}``.

    ``M_nu = exp(n R_nu)`` and ``M_12 = M_1 M_2``.  The success probability is
    estimated by simulation and also by its Gaussian approximation with the
    exact finite-``n`` covariance.
    """
    if r1 < 0 or r2 < 0:
        raise ValueError("rates must be nonnegative")
    n = cfg.n
    log_m = n * np.array([r1, r2, r1 + r2])
    gamma = thresholds(ch, n, log_m)
    poly = type_polynomial(ch, n) * float(np.sum(np.exp(log_m - gamma)))
    plan = make_plan(ch, inp, cfg)

    def work(rng, size):
        s = density_sums(plan, rng, size, sampler)
        return int(np.count_nonzero(np.all(s > gamma, axis=1)))

    success = TailEstimate.from_count(sum(_run_chunks(cfg, work)), cfg.trials)
    raw = 1.0 - success.estimate + poly

    gauss = float("nan")
    if n >= 2:
        rep = finite_n_cov(plan.law, plan.density, n)
        sigma = decompose(rep.exact_cov / n)
        c = (gamma - rep.mean) / math.sqrt(n)
        gauss = lower_orthant(sigma, -c)
    return BoundReport(min(max(raw, 0.0), 1.0), raw, success, gauss, gamma, poly, n)


# --------------------------------------------------------------------------
# Empirical CLT distance


@dataclass(frozen=True)
class CltResult:
    distance: float
    rank: int
    trials: int
    n: int
    beta_n: float | None = None


def clt_statistic(ch: Channel, inp: InputSpec, cfg: SimConfig, sampler: Sampler = "counts"):
    """Whitened statistic on the support of ``Sigma_n``: returns ``(plan, basis, scale, mean)``."""
    if cfg.n < 2:
        raise ModelError("clt_distance needs n >= 2")
    plan = make_plan(ch, inp, cfg)
    rep = finite_n_cov(plan.law, plan.density, cfg.n)
    spec = decompose(rep.exact_cov / cfg.n)
    basis = spec.basis[:, : spec.rank]
    scale = 1.0 / np.sqrt(spec.eigenvalues[: spec.rank])
    return plan, basis, scale, rep.mean


def clt_distance_result(
    ch: Channel, inp: InputSpec, cfg: SimConfig, sampler: Sampler = "counts", grid: np.ndarray = CLT_GRID
) -> CltResult:
    plan, basis, scale, mean = clt_statistic(ch, inp, cfg, sampler)
    r = basis.shape[1]
    if r == 0:
        return CltResult(0.0, 0, cfg.trials, cfg.n)
    g = grid.size
    root_n = math.sqrt(cfg.n)

    def work(rng, size):
        s = ((density_sums(plan, rng, size, sampler) - mean) / root_n) @ basis * scale
        # bin index k means s <= grid[j] exactly for j >= k
        idx = np.stack([np.searchsorted(grid, s[:, k], side="left") for k in range(r)], axis=1)
        flat = np.ravel_multi_index(tuple(idx.T), (g + 1,) * r)
        return np.bincount(flat, minlength=(g + 1) ** r)

    hist = np.sum(_run_chunks(cfg, work), axis=0).reshape((g + 1,) * r)
    cdf = hist
    for k in range(r):
        cdf = np.cumsum(cdf, axis=k)
    emp = cdf[(slice(0, g),) * r] / cfg.trials
    phi = ndtr(grid)
    normal = phi
    for _ in range(r - 1):
        normal = np.multiply.outer(normal, phi)
    return CltResult(float(np.max(np.abs(emp - normal))), r, cfg.trials, cfg.n)


def clt_distance(ch: Channel, inp: InputSpec, cfg: SimConfig, sampler: Sampler = "counts") -> float:
    """Max over the ``11^r`` grid corners of ``|P[S_n <= z] - P[N(0, I_r) <= z]|``.

    ``S_n`` is ``Sigma_n^{-1/2} (i^n - E i^n) / sqrt(n)`` restricted to the
    ``r``-dimensional support of ``Sigma_n``; ``r = 0`` gives distance 0.
    """
    return clt_distance_result(ch, inp, cfg, sampler).distance


def sigma_n_matrix(ch: Channel, inp: InputSpec, n: int) -> DispersionMatrix:
    return exact_moments(ch, inp, n).sigma_n
