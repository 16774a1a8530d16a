import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fixed_bounds, linear_net, uniform_bounds
from rtkgloro.certify import (
    BIG,
    AffinityCollection,
    CertificationRefused,
    GuaranteeConfig,
    affinity_head,
    augmented_logits,
    certified_radius,
    certify_batch,
    certify_logits,
    certify_point,
    head_accepts,
    margin_affinity,
    margin_mk,
    margin_rtk,
    margin_standard,
    margins_mkj,
    rtk_head,
    standard_head,
)
from rtkgloro.lipschitz import LipschitzBounds

L = (3.0, 2.0, 0.5)
REJECT = (1.0, 0.9, 0.8, 0.7)


# ---------------------------------------------------------------- margins


def test_mkj_k1():
    assert margins_mkj(L, 1.0, 0.25, 1) == pytest.approx({0: 0.75})


def test_mkj_k2():
    assert margins_mkj(L, 1.0, 0.25, 2) == pytest.approx({0: 2.25, 1: 1.25})


def test_mkj_eps_zero():
    assert margins_mkj(L, 1.0, 0.0, 1) == pytest.approx({0: 1.0})


@pytest.mark.parametrize("k", [0, 3])
def test_mkj_k_range(k):
    with pytest.raises(ValueError):
        margins_mkj(L, 1.0, 0.25, k)


def test_mk_example():
    assert margin_mk(L, 1.0, 0.25, 2) == pytest.approx(1.25)


def test_top1_but_not_top2_instance():
    f = (4.0, 2.5, 2.2)
    assert margin_mk(f, 1.0, 0.5, 1) == pytest.approx(1.0)
    assert margin_mk(f, 1.0, 0.5, 2) == pytest.approx(-0.2)


def test_top1_and_top2_instance():
    f = (4.0, 3.5, 1.0)
    assert margin_mk(f, 1.0, 0.2, 1) == pytest.approx(0.3)
    assert margins_mkj(f, 1.0, 0.2, 2) == pytest.approx({0: 2.8, 1: 2.3})
    assert margin_mk(f, 1.0, 0.2, 2) > 0


def test_rtk_margin_examples():
    assert margin_rtk(L, 1.0, 0.25, 2) == pytest.approx(1.25)
    assert margin_rtk(REJECT, 1.0, 0.25, 1) == pytest.approx(-0.15)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6), st.floats(0, 1), st.integers(0, 2**31))
def test_rt1_is_standard_margin(f, eps, seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(0, 2, (len(f), len(f)))
    K = (A + A.T) * (1 - np.eye(len(f)))
    assert margin_rtk(f, K, eps, 1) == margin_standard(f, K, eps)


def test_affinity_margin_masks_k():
    aff = AffinityCollection.from_sets([[0, 1], [2, 3]], 4)
    assert margin_affinity((3, 2, 0.5, 0.4), 1.0, 0.25, aff) == pytest.approx(1.25)


def test_affinity_singletons_reject_like_standard():
    aff = AffinityCollection.singletons(4)
    assert margin_affinity(REJECT, 1.0, 0.25, aff) == pytest.approx(-0.15)
    assert not head_accepts(augmented_logits(REJECT, 1.0, 0.25, GuaranteeConfig.standard()))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6), st.floats(0, 1))
def test_affinity_full_set_is_rt_cminus1(f, eps):
    C = len(f)
    assert margin_affinity(f, 1.0, eps, AffinityCollection.full(C)) == margin_rtk(f, 1.0, eps, C - 1)


@pytest.mark.filterwarnings("ignore:classes")
def test_affinity_without_admissible_k_is_sentinel():
    aff = AffinityCollection.from_sets([[1, 2], [0]], 3)
    # top-1 is class 1, and {1} is inside {1, 2}; make top-2 {1, 0} the only candidate by removing k = 1
    assert margin_affinity((3.0, 1.0, 2.0), 1.0, 0.1, AffinityCollection.from_sets([[1, 2]], 3)) == -BIG
    assert margin_affinity((1.0, 3.0, 2.0), 1.0, 0.1, aff) > 0


def test_affinity_warns_on_uncovered_class():
    with pytest.warns(UserWarning):
        AffinityCollection.from_sets([[0, 1]], 3)


def test_affinity_bitmaps_and_kmax():
    aff = AffinityCollection.from_sets([[0, 1, 3], [2]], 4)
    np.testing.assert_array_equal(aff.bitmaps, [[1, 1, 0, 1], [0, 0, 1, 0]])
    assert aff.kmax == 3


def test_affinity_rejects_empty_or_out_of_range():
    with pytest.raises(ValueError):
        AffinityCollection.from_sets([[]], 3)
    with pytest.raises(ValueError):
        AffinityCollection.from_sets([[0, 5]], 3)


# ---------------------------------------------------------------- heads


def test_rtk_head_accepts():
    net = linear_net(np.eye(3))
    g = rtk_head(net, uniform_bounds(3), 0.25, 2, L)
    np.testing.assert_allclose(g, (3.0, 2.0, 0.5, 1.75))
    assert head_accepts(g)


def test_rtk_head_rejects():
    net = linear_net(np.eye(4))
    g = rtk_head(net, uniform_bounds(4), 0.25, 1, REJECT)
    assert g[-1] == pytest.approx(1.15) and not head_accepts(g)


def test_zero_margin_ties_to_bottom():
    # m = 0: f_0 - (f_1 + eps) = 0
    g = augmented_logits((2.0, 1.0), 1.0, 1.0, GuaranteeConfig.rtk(1))
    assert g[-1] == g[0] and not head_accepts(g)


def test_affinity_head_examples():
    net = linear_net(np.eye(4))
    aff = AffinityCollection.from_sets([[0, 1], [2, 3]], 4)
    g = affinity_head(net, uniform_bounds(4), 0.25, aff, (3, 2, 0.5, 0.4))
    assert g[-1] == pytest.approx(1.75) and head_accepts(g)
    g = affinity_head(net, uniform_bounds(4), 0.25, AffinityCollection.singletons(4), REJECT)
    assert not head_accepts(g)
    assert not head_accepts(standard_head(net, uniform_bounds(4), 0.25, REJECT))


@pytest.mark.filterwarnings("ignore:classes")
def test_sentinel_rejects_unconditionally():
    g = augmented_logits((1e6, 0.0, -1e6), 1.0, 0.0, GuaranteeConfig.with_affinity(AffinityCollection.from_sets([[1, 2]], 3)))
    assert g[-1] > 1e29 and not head_accepts(g)


# ---------------------------------------------------------------- certificates


def test_certify_point_rt2():
    r = certify_point(linear_net(np.eye(3)), uniform_bounds(3), 0.25, GuaranteeConfig.rtk(2), L)
    assert r.accepted and r.kstar == 2 and r.safe_set == {0, 1}
    assert r.smallest_safe_set == {0} and r.min_k == 1
    assert r.margin == pytest.approx(1.25)
    np.testing.assert_allclose(r.per_k_margins, [0.75, 1.25])


def test_certify_point_top1_but_not_top2():
    r = certify_point(linear_net(np.eye(3)), uniform_bounds(3), 0.5, GuaranteeConfig.rtk(2), (4.0, 2.5, 2.2))
    assert r.accepted and r.kstar == 1 and r.safe_set == {0}


def test_certify_point_reject():
    r = certify_point(linear_net(np.eye(4)), uniform_bounds(4), 0.25, GuaranteeConfig.rtk(1), REJECT)
    assert not r.accepted and r.safe_set is None and r.kstar is None


def test_certify_refuses_unconverged():
    b = LipschitzBounds(1.0, np.ones((3, 3)) - np.eye(3), converged=False)
    with pytest.raises(CertificationRefused):
        certify_point(linear_net(np.eye(3)), b, 0.1, GuaranteeConfig.standard(), L)


def test_clamped_k_warns_and_records(caplog):
    r = certify_logits(np.array([L]), uniform_bounds(3), 0.25, GuaranteeConfig.rtk(7))[0]
    assert r.clamped and r.kstar == 2
    assert "clamped" in caplog.text


def test_accepted_iff_margin_positive(rng):
    f = rng.standard_normal((500, 5))
    A = rng.uniform(0, 1, (5, 5))
    b = fixed_bounds((A + A.T) * (1 - np.eye(5)))
    for cfg in (GuaranteeConfig.standard(), GuaranteeConfig.rtk(3)):
        for r in certify_logits(f, b, 0.3, cfg):
            assert r.accepted == (r.margin > 0)


def test_batch_workers_agree(rng):
    net = linear_net(rng.standard_normal((4, 3)))
    X = rng.standard_normal((50, 3))
    b = fixed_bounds(np.ones((4, 4)) - np.eye(4))
    one = certify_batch(net, b, 0.2, GuaranteeConfig.rtk(2), X, workers=1, chunk=7)
    many = certify_batch(net, b, 0.2, GuaranteeConfig.rtk(2), X, workers=3, chunk=7)
    assert [(r.accepted, r.safe_set, r.margin) for r in one] == [(r.accepted, r.safe_set, r.margin) for r in many]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=6), st.floats(0, 1), st.floats(-100, 100))
def test_translation_invariance(f, eps, c):
    f = np.array(f)
    b = uniform_bounds(len(f), 0.7)
    for cfg in (GuaranteeConfig.standard(), GuaranteeConfig.rtk(2)):
        r0 = certify_logits(f[None], b, eps, cfg)[0]
        r1 = certify_logits((f + c)[None], b, eps, cfg)[0]
        if np.abs(r0.per_k_margins).min() > 1e-9 * (1 + abs(c)):  # shifting rounds; only near-zero margins may flip
            assert r0.accepted == r1.accepted and r0.safe_set == r1.safe_set
        assert r0.margin == pytest.approx(r1.margin, abs=1e-9 * (1 + abs(c)))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6), st.floats(0, 2))
def test_relaxation_chain(f, eps):
    f = np.array(f)
    C = len(f)
    b = uniform_bounds(C, 0.8)
    prev = False
    for K in range(1, C):
        acc = certify_logits(f[None], b, eps, GuaranteeConfig.rtk(K))[0].accepted
        assert acc or not prev
        prev = acc


# ---------------------------------------------------------------- radius


def test_radius_example():
    assert certified_radius(L, 1.0, 1) == pytest.approx(1.0)
    assert certified_radius(L, 1.0, 2) == pytest.approx(1.5)


def test_radius_tie_is_zero():
    assert certified_radius((2.0, 2.0, 0.0), 1.0, 1) == 0.0


def test_radius_zero_bound_is_infinite():
    K = 1.0 - np.eye(3)
    assert certified_radius((3.0, 1.0, 0.0), K, 1) == pytest.approx(2.0)
    K[0, 1] = K[1, 0] = 0.0
    assert certified_radius((3.0, 1.0, 0.0), K, 1) == pytest.approx(3.0)
    K[0, 2] = K[2, 0] = 0.0
    assert certified_radius((3.0, 1.0, 0.0), K, 1) == math.inf


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6), st.integers(1, 5), st.integers(0, 2**31))
def test_radius_consistency(f, Kparam, seed):
    rng = np.random.default_rng(seed)
    C = len(f)
    A = rng.uniform(0.1, 2, (C, C))
    K = (A + A.T) * (1 - np.eye(C))
    r = certified_radius(f, K, Kparam)
    if r <= 0 or not math.isfinite(r):
        return
    cfg = GuaranteeConfig.rtk(Kparam)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert head_accepts(augmented_logits(f, K, r * (1 - 1e-9), cfg))
        assert not head_accepts(augmented_logits(f, K, r * (1 + 1e-9), cfg))


def test_affinity_radius_respects_mask():
    aff = AffinityCollection.from_sets([[0, 2], [1]], 3)
    # top-2 is {0, 1}: inadmissible, so only the top-1 radius counts
    assert certified_radius(L, 1.0, 2, aff) == pytest.approx(1.0)
