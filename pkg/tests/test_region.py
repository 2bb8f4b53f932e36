import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from macdisp.dispersion import RateVector, all_dispersions, mean_vector
from macdisp.export import LN2, boundaries_csv, boundaries_svg, boundary_provenance, dumps
from macdisp.model import info_density, joint_law, random_channel, random_inputs
from macdisp.region import (
    RegionBoundary,
    RegionConfig,
    capacity_union,
    collision_channel,
    collision_inputs,
    collision_rates,
    conditional_mean_variances,
    first_order_region,
    optimality_roots,
    ray_angles,
    rectangle_deviation,
    second_order_member,
    sum_rate_variance_root,
    trace_boundary,
)
from oracles import fit_slope

I_DEMO = RateVector(0.5, 0.4, 0.7)
V_DEMO = np.array([[0.3, 0.05, 0.2], [0.05, 0.25, 0.15], [0.2, 0.15, 0.45]])


def collision_dispersions(p=0.2):
    j = joint_law(collision_channel(), collision_inputs(p, p))
    d = info_density(j)
    return mean_vector(j, d), all_dispersions(j, d)


def random_case(seed):
    rng = np.random.default_rng(seed)
    ch = random_channel(rng, 2, 3, 3)
    j = joint_law(ch, random_inputs(rng, 2, 3))
    d = info_density(j)
    return mean_vector(j, d), all_dispersions(j, d)


def outward(b: RegionBoundary, k):
    return b.radii[k] * np.array([math.cos(b.angles[k]), math.sin(b.angles[k])])


# --------------------------------------------------------------------------
# Config and first-order regions


def test_config_validation():
    for bad in (dict(n=0, eps=0.1), dict(n=5, eps=0.0), dict(n=5, eps=1.0), dict(n=5, eps=0.1, resolution=8)):
        with pytest.raises(ValueError):
            RegionConfig(**bad)
    with pytest.raises(ValueError):
        RegionConfig(n=5, eps=0.1, ignore_third_order=False)


def test_zero_information_single_point():
    b = first_order_region(RateVector(0, 0, 0))
    assert b.points.tolist() == [[0.0, 0.0]]


def test_inactive_sum_constraint_gives_rectangle():
    b = first_order_region(RateVector(0.3, 0.2, 0.6), resolution=65)
    assert rectangle_deviation(b) < 1e-15
    assert b.points[:, 0].max() == pytest.approx(0.3) and b.points[:, 1].max() == pytest.approx(0.2)


def test_pentagon_vertices_on_boundary():
    b = first_order_region(I_DEMO, resolution=257)
    assert np.all(b.points[:, 0] <= 0.5 + 1e-15) and np.all(b.points[:, 1] <= 0.4 + 1e-15)
    assert np.all(b.points.sum(1) <= 0.7 + 1e-12)
    # every boundary point touches at least one face
    slack = np.min(np.stack([0.5 - b.points[:, 0], 0.4 - b.points[:, 1], 0.7 - b.points.sum(1)]), axis=0)
    assert np.max(np.abs(slack)) < 1e-12


def test_negative_information_rejected():
    with pytest.raises(ValueError):
        first_order_region(RateVector(-0.1, 0.2, 0.3))


@given(st.floats(0, 2), st.floats(0, 2), st.floats(0, 3))
def test_first_order_staircase(a, b, c):
    pts = first_order_region(RateVector(a, b, c), resolution=33).points
    assert np.all(np.diff(pts[:, 0]) >= -1e-12)
    assert np.all(np.diff(pts[:, 1]) <= 1e-12)


# --------------------------------------------------------------------------
# Membership


def test_origin_member_for_positive_information():
    cfg = RegionConfig(n=10_000, eps=0.3)
    assert second_order_member(I_DEMO, V_DEMO, cfg, 0.0, 0.0)


@given(st.floats(0, 0.8), st.floats(0, 0.8))
def test_zero_dispersion_is_first_order(r1, r2):
    cfg = RegionConfig(n=50, eps=0.1)
    want = r1 <= 0.5 and r2 <= 0.4 and r1 + r2 <= 0.7
    assert second_order_member(I_DEMO, np.zeros((3, 3)), cfg, r1, r2) == want


@given(st.floats(0, 0.6), st.floats(0, 0.6), st.floats(0, 1), st.floats(0, 1))
def test_membership_monotone(r1, r2, s1, s2):
    cfg = RegionConfig(n=100, eps=0.05)
    if second_order_member(I_DEMO, V_DEMO, cfg, r1, r2):
        assert second_order_member(I_DEMO, V_DEMO, cfg, r1 * s1, r2 * s2)


# --------------------------------------------------------------------------
# Tracing


def test_trace_invariants():
    cfg = RegionConfig(n=200, eps=0.05, resolution=24)
    b = trace_boundary(I_DEMO, V_DEMO, cfg)
    assert b.kind == "second_order" and not b.empty
    assert np.all(np.diff(b.points[:, 0]) >= -1e-12)
    assert np.all(np.diff(b.points[:, 1]) <= 1e-12)
    np.testing.assert_array_equal(b.angles, ray_angles(24))
    for k in range(len(b.angles)):
        inside = outward(b, k)
        assert second_order_member(I_DEMO, V_DEMO, cfg, *inside)
        assert not second_order_member(I_DEMO, V_DEMO, cfg, *(inside * (1 + 1e-6)))
    assert b.provenance["n"] == 200 and b.provenance["rank"] == 3


def test_trace_zero_dispersion_matches_pentagon():
    cfg = RegionConfig(n=50, eps=0.1, resolution=33)
    b = trace_boundary(I_DEMO, np.zeros((3, 3)), cfg)
    ref = first_order_region(I_DEMO, resolution=33)
    assert np.max(np.abs(b.radii - ref.radii) / np.maximum(ref.radii, 1e-300)) < 1e-6


def test_trace_converges_at_root_n():
    v = np.diag([0.3, 0.2, 0.5])
    ns = [1_000, 10_000, 100_000, 1_000_000]
    ref = first_order_region(I_DEMO, resolution=16).radii
    gaps = np.array([ref - trace_boundary(I_DEMO, v, RegionConfig(n, 0.1, 16)).radii for n in ns])
    for k in range(16):
        assert abs(fit_slope(ns, gaps[:, k]) + 0.5) < 0.1


def test_empty_region_reported():
    cfg = RegionConfig(n=1, eps=0.01, resolution=16)
    b = trace_boundary(RateVector(0.01, 0.01, 0.02), np.eye(3), cfg)
    assert b.empty and b.points.shape == (0, 2)
    assert b.provenance["eps"] == 0.01


@pytest.mark.parametrize("seed", range(4))
def test_second_order_nested_in_first(seed):
    i, vs = random_case(seed)
    cfg = RegionConfig(n=100, eps=0.1, resolution=16)
    ref = first_order_region(i, resolution=16).radii
    for v in vs.values():
        b = trace_boundary(i, v, cfg)
        if not b.empty:
            assert np.all(b.radii <= ref * (1 + 1e-6))


@pytest.mark.parametrize("seed", [0, 1, 3, 6])
def test_dispersion_dominance(seed):
    i, vs = random_case(seed)
    cfg = RegionConfig(n=200, eps=0.05, resolution=16)
    r = {k: trace_boundary(i, vs[k], cfg).radii for k in ("cc", "cc_iid_1", "cc_iid_2", "iid")}
    tol = 1 + 2e-6
    for k in ("cc_iid_1", "cc_iid_2"):
        assert np.all(r["cc"] * tol >= r[k])
        assert np.all(r[k] * tol >= r["iid"])


def test_dominance_of_emptiness():
    # this case has a nonempty region under the tightest matrix only
    i, vs = random_case(4)
    cfg = RegionConfig(n=200, eps=0.05, resolution=16)
    empty = {k: trace_boundary(i, v, cfg).empty for k, v in vs.items()}
    assert not empty["cc"] and empty["iid"]
    assert not (empty["cc"] and not empty["cc_iid_1"])


def test_larger_eps_larger_region():
    radii = [trace_boundary(I_DEMO, V_DEMO, RegionConfig(100, e, 16)).radii for e in (0.01, 0.05, 0.2, 0.45)]
    for small, big in zip(radii, radii[1:]):
        assert np.all(big * (1 + 2e-6) >= small)


# --------------------------------------------------------------------------
# Collision channel


def test_collision_zero_parameters():
    r = collision_rates(0.0, 0.0)
    assert r.r1 == pytest.approx(0, abs=1e-15) and r.r2 == pytest.approx(0, abs=1e-15)


def test_collision_inputs_range():
    for p in (-0.1, 0.5, 0.7):
        with pytest.raises(ValueError):
            collision_inputs(p, 0.1)


def test_collision_region_rectangular_and_dominant():
    i, vs = collision_dispersions(0.2)
    cfg = RegionConfig(n=50, eps=0.01, resolution=64)
    cc = trace_boundary(i, vs["cc"], cfg)
    iid = trace_boundary(i, vs["iid"], cfg)
    first = first_order_region(i, resolution=64)
    assert rectangle_deviation(cc) < 1e-3
    assert np.all(cc.radii > iid.radii)
    assert np.all(cc.radii < first.radii)
    assert cc.provenance["rank"] < 3


def test_optimality_roots():
    uniform, root = optimality_roots()
    assert uniform == 1 / 3
    assert abs(root - 0.2867) < 5e-4
    assert conditional_mean_variances(root, root)["1:1"] < 1e-20


def test_sum_rate_variance_root_on_diagonal():
    assert sum_rate_variance_root() == pytest.approx(0.25, abs=1e-12)


@pytest.mark.parametrize("p2", [0.05, 0.2, 0.35])
def test_sum_rate_variance_root_off_diagonal(p2):
    t = 2.0 ** (-4 * p2)
    assert sum_rate_variance_root(p2) == pytest.approx(t / (1 + 2 * t), abs=1e-10)


def test_variances_at_quarter():
    v = conditional_mean_variances(0.25, 0.25)
    assert v["1:1"] > 1e-3
    assert v["1:12"] < 1e-20


def test_collision_variances_symmetric():
    v = conditional_mean_variances(0.2, 0.2)
    assert v["1:1"] == pytest.approx(v["2:2"], abs=1e-15)
    assert v["1:12"] == pytest.approx(v["2:12"], abs=1e-15)


def test_capacity_union_small_grid():
    ps = np.arange(10) / 20
    rates = [collision_rates(a, b) for a in ps for b in ps]
    union = capacity_union(rates, resolution=33, description="10x10")
    assert union.kind == "capacity_union" and union.provenance["members"] == 100
    for r in rates:
        # each member pentagon is a rectangle inside the union
        assert r.r1 + r.r2 <= r.r12 + 1e-12
        member = first_order_region(r, resolution=33)
        assert np.all(member.radii <= union.radii + 1e-15)
    assert union.points[:, 0].max() == pytest.approx(max(r.r1 for r in rates))


# --------------------------------------------------------------------------
# Exports


def test_csv_svg_json_exports():
    i, vs = collision_dispersions(0.2)
    cfg = RegionConfig(n=50, eps=0.01, resolution=16)
    bs = [first_order_region(i, 16), trace_boundary(i, vs["cc"], cfg), trace_boundary(RateVector(0.01, 0.01, 0.02), np.eye(3), RegionConfig(1, 0.01, 16), "empty")]
    rows = list(csv.DictReader(io.StringIO(boundaries_csv(bs))))
    assert list(rows[0]) == ["r1_bits", "r2_bits", "r1_nats", "r2_nats", "kind"]
    assert {r["kind"] for r in rows} == {"first_order", "second_order:cc"}
    for r in rows:
        assert float(r["r1_bits"]) == pytest.approx(float(r["r1_nats"]) / LN2, rel=1e-15)
    svg = boundaries_svg(bs, "collision")
    assert svg.startswith("<svg") and "bits/use" in svg and "nats/use" in svg and "(empty)" in svg
    prov = json.loads(dumps(boundary_provenance(bs)))
    assert prov[1]["n"] == 50 and prov[1]["rank"] < 3 and "quadrature_tol" in prov[1]
