import itertools
import math

import numpy as np
import pytest
from scipy import stats
from scipy.optimize import brentq

from macdisp.dispersion import pairwise_law
from macdisp.model import Channel, Composition, InputSpec, random_channel, random_inputs, typed_inputs
from macdisp.montecarlo import (
    SimConfig,
    TailEstimate,
    _sequences,
    chunk_rng,
    clt_distance,
    clt_distance_result,
    empirical_in_moments,
    excess_prob,
    exact_moments,
    make_plan,
    pe_upper_bound,
    polynomial_degree,
    sample_type_class,
    thresholds,
    type_polynomial,
)
from macdisp.region import collision_channel, collision_inputs

CONFUSION = np.array(
    [[0.85, 0.05, 0.06, 0.04], [0.07, 0.8, 0.05, 0.08], [0.05, 0.09, 0.78, 0.08], [0.03, 0.06, 0.1, 0.81]]
)
NOISY = Channel(CONFUSION.reshape(2, 2, 4))
UNIFORM2 = InputSpec.product([0.5, 0.5], [0.5, 0.5])


# --------------------------------------------------------------------------
# Config


def test_sim_config_validation():
    for bad in (dict(n=0, trials=1), dict(n=2, trials=0), dict(n=2, trials=1, workers=0), dict(n=2, trials=1, seed=-1)):
        with pytest.raises(ValueError):
            SimConfig(**bad)
    t = typed_inputs(UNIFORM2, 4)
    with pytest.raises(ValueError):
        SimConfig(n=6, trials=1, compositions=t)


def test_tail_estimate_stderr():
    t = TailEstimate.from_count(25, 100)
    assert t.estimate == 0.25 and t.stderr == pytest.approx(math.sqrt(0.25 * 0.75 / 100))


# --------------------------------------------------------------------------
# Type-class sampling


def test_singleton_class(rng):
    draws = sample_type_class(Composition((2, 0)), rng, 1000)
    assert np.all(draws == 0)


def test_two_arrangements_equally_likely(rng):
    draws = sample_type_class(Composition((1, 1)), rng, 100_000)
    freq = np.mean(draws[:, 0] == 0)
    assert abs(freq - 0.5) < 3 * math.sqrt(0.25 / 100_000)


@pytest.mark.parametrize("counts", [(2, 2, 2), (3, 1, 2), (1, 1, 1, 1, 1), (4, 2)])
def test_type_class_uniform_chi_square(counts):
    comp = Composition(counts)
    members = sorted(set(itertools.permutations(comp.base_sequence().tolist())))
    index = {m: k for k, m in enumerate(members)}
    draws = sample_type_class(comp, chunk_rng(11, sum(counts)), 200 * len(members))
    hist = np.bincount([index[tuple(r)] for r in draws.tolist()], minlength=len(members))
    assert hist.sum() == draws.shape[0]
    assert stats.chisquare(hist).pvalue > 1e-3


def test_pairwise_positions_match_law(rng):
    comp = Composition((3, 2, 1))
    draws = sample_type_class(comp, rng, 300_000)
    law = pairwise_law(comp.distribution, comp.n)
    for x in range(3):
        rows = draws[draws[:, 0] == x, 1]
        for xp in range(3):
            p = law[x, xp]
            freq = np.mean(rows == xp)
            assert abs(freq - p) <= 3 * math.sqrt(p * (1 - p) / rows.size) + 1e-12


# --------------------------------------------------------------------------
# Moments


def test_collision_moments_within_four_stderr():
    ch, inp = collision_channel(), collision_inputs(0.2, 0.2)
    est = empirical_in_moments(ch, inp, SimConfig(n=20, trials=100_000, seed=3))
    rep = exact_moments(ch, inp, 20)
    assert np.all(np.abs(est.mean - rep.mean) <= 4 * est.mean_stderr + 1e-12)
    assert np.max(est.z_scores(rep.exact_cov)) < 4


def test_time_sharing_moments_within_four_stderr():
    rng = np.random.default_rng(8)
    ch = random_channel(rng, 2, 3, 3, sparsity=0.2)
    inp = random_inputs(rng, 2, 3, u=2)
    est = empirical_in_moments(ch, inp, SimConfig(n=15, trials=100_000, seed=4))
    rep = exact_moments(ch, inp, 15)
    assert np.all(np.abs(est.mean - rep.mean) <= 4 * est.mean_stderr + 1e-12)
    assert np.max(est.z_scores(rep.exact_cov)) < 4


def test_samplers_agree():
    rng = np.random.default_rng(2)
    ch = random_channel(rng, 3, 2, 3)
    inp = random_inputs(rng, 3, 2)
    a = empirical_in_moments(ch, inp, SimConfig(n=12, trials=100_000, seed=1), "counts")
    b = empirical_in_moments(ch, inp, SimConfig(n=12, trials=100_000, seed=2), "sequence")
    assert np.all(np.abs(a.mean - b.mean) <= 4 * np.hypot(a.mean_stderr, b.mean_stderr))
    assert np.all(np.abs(a.cov - b.cov) <= 4 * np.hypot(a.cov_stderr, b.cov_stderr))


def test_determinism_across_workers():
    ch, inp = collision_channel(), collision_inputs(0.2, 0.2)
    cfg = dict(n=20, trials=50_000, seed=9, chunk_size=4096)
    runs = [empirical_in_moments(ch, inp, SimConfig(workers=w, **cfg)) for w in (1, 1, 4)]
    for other in runs[1:]:
        np.testing.assert_array_equal(runs[0].cov, other.cov)
        np.testing.assert_array_equal(runs[0].mean, other.mean)
    changed = empirical_in_moments(ch, inp, SimConfig(n=20, trials=50_000, seed=10, chunk_size=4096))
    assert not np.array_equal(changed.cov, runs[0].cov)


def test_cross_position_covariance():
    rng = np.random.default_rng(6)
    ch = random_channel(rng, 2, 3, 3)
    inp = InputSpec.product([0.5, 0.5], [1 / 3, 1 / 3, 1 / 3])
    n = 6
    plan = make_plan(ch, inp, SimConfig(n=n, trials=1))
    blk = plan.blocks[0]
    x1, x2, y = _sequences(blk, chunk_rng(5, 0), 1_000_000)
    a = blk.vals[x1[:, 0], x2[:, 0], y[:, 0]]
    b = blk.vals[x1[:, 1], x2[:, 1], y[:, 1]]
    a = a - a.mean(0)
    b = b - b.mean(0)
    prod = a[:, :, None] * b[:, None, :]
    emp = prod.mean(0)
    se = prod.std(0) / math.sqrt(prod.shape[0])
    rep = exact_moments(ch, inp, n)
    want = rep.m1 + rep.m2 + rep.m3 + rep.m4
    np.testing.assert_allclose(rep.m1, 0, atol=1e-14)
    assert np.all(np.abs(emp - want) <= 4 * se)


# --------------------------------------------------------------------------
# Threshold bound


def test_excess_prob_trivial_threshold():
    est = excess_prob(NOISY, UNIFORM2, SimConfig(n=10, trials=2_000), 12, -1e300)
    assert est.estimate == 1.0 and est.stderr == 0.0
    with pytest.raises(ValueError):
        excess_prob(NOISY, UNIFORM2, SimConfig(n=10, trials=10), 3, 0.0)


def test_threshold_term_equals_power_of_n():
    for n in (10, 57):
        log_m = np.array([2.0, 3.0, 5.0])
        gamma = thresholds(NOISY, n, log_m)
        d = polynomial_degree(NOISY)
        np.testing.assert_allclose(np.exp(log_m - gamma), n ** -(d + 0.5), rtol=1e-12)
    assert type_polynomial(collision_channel(), 4) == 5.0**4


@pytest.mark.parametrize("which", [1, 2, 12])
def test_excess_prob_below_change_of_measure_bound(which):
    n = 20
    p0 = type_polynomial(NOISY, n)
    for gamma in (math.log(p0), math.log(p0) + 2.0, 3.0):
        est = excess_prob(NOISY, UNIFORM2, SimConfig(n=n, trials=20_000, seed=which), which, gamma)
        assert est.estimate <= p0 * math.exp(-gamma)


def test_pe_bound_vacuous_when_rates_too_high():
    rep = pe_upper_bound(NOISY, UNIFORM2, SimConfig(n=50, trials=2_000), 1.0, 1.0)
    assert rep.clamped and rep.bound == 1.0 and rep.raw_bound > 1.0


def test_pe_bound_zero_rates_structure():
    n = 400
    rep = pe_upper_bound(NOISY, UNIFORM2, SimConfig(n=n, trials=20_000, seed=2), 0.0, 0.0)
    d = polynomial_degree(NOISY)
    assert rep.polynomial_term == pytest.approx(3 * (n + 1) ** d * n ** -(d + 0.5), rel=1e-12)
    assert rep.raw_bound == pytest.approx(1 - rep.success.estimate + rep.polynomial_term, abs=1e-15)
    assert rep.bound < 0.2
    assert set(rep.to_json()) >= {"bound", "success_estimate", "success_stderr", "gaussian_success", "gamma"}


def test_pe_bound_gaussian_gap_scales_like_root_n():
    scaled = []
    for n in (25, 100, 400):
        r = brentq(lambda r: pe_upper_bound(NOISY, UNIFORM2, SimConfig(n, 1), r, r).gaussian_success - 0.3, 0.0, 0.6, xtol=1e-10)
        rep = pe_upper_bound(NOISY, UNIFORM2, SimConfig(n, 400_000, seed=1), r, r)
        scaled.append(abs(rep.success.estimate - rep.gaussian_success) * math.sqrt(n))
    assert max(scaled) / min(scaled) < 2.0


# --------------------------------------------------------------------------
# CLT distance


def test_clt_distance_decreases():
    ch, inp = collision_channel(), collision_inputs(0.2, 0.2)
    small = clt_distance_result(ch, inp, SimConfig(n=25, trials=100_000, seed=1))
    big = clt_distance_result(ch, inp, SimConfig(n=400, trials=100_000, seed=1))
    se = 0.5 / math.sqrt(100_000)
    assert big.distance + 4 * se < small.distance
    assert small.rank == 1


def test_clt_full_rank_channel():
    res = clt_distance_result(NOISY, UNIFORM2, SimConfig(n=100, trials=50_000, seed=1))
    assert res.rank == 3 and 0 < res.distance < 0.2


def test_clt_input_independent_channel():
    ch = Channel(np.broadcast_to([0.2, 0.3, 0.5], (2, 2, 3)).copy())
    assert clt_distance(ch, UNIFORM2, SimConfig(n=20, trials=1_000)) == 0.0
