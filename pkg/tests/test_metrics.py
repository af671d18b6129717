import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fargan.data import DatasetSpec, generate_real, mode_centers
from fargan.metrics import (
    D_LOSS_EQUILIBRIUM,
    G_LOSS_EQUILIBRIUM,
    ClosePairConfig,
    close_pairs,
    loss_deviation,
    min_pairwise_distance,
    mode_coverage,
)

RING = DatasetSpec(kind="ring-8")


def test_fakes_at_every_center():
    c = mode_centers(RING)
    rep = mode_coverage(c, c, RING.mode_std, min_count=1)
    assert rep.covered == 8 and rep.counts == [1] * 8 and rep.hq_ratio == 1.0


def test_all_fakes_on_one_center():
    c = mode_centers(RING)
    rep = mode_coverage(np.repeat(c[:1], 100, axis=0), c, RING.mode_std, min_count=1)
    assert rep.covered == 1 and rep.max_share == 1.0


def test_samples_from_true_mixture_cover_all_modes():
    rng = np.random.default_rng(0)
    c = mode_centers(RING)
    fakes = c[rng.integers(0, 8, 10_000)] + rng.normal(0, RING.mode_std, (10_000, 2))
    rep = mode_coverage(fakes, c, RING.mode_std, cover_radius_mult=3, min_count=10)
    assert rep.covered == 8
    assert rep.hq_ratio > 0.98


def test_far_fakes_are_not_high_quality():
    c = mode_centers(RING)
    rep = mode_coverage(np.zeros((50, 2)), c, RING.mode_std, min_count=1)
    assert rep.covered == 0 and rep.hq_ratio == 0.0
    with pytest.raises(ValueError):
        mode_coverage(np.zeros((1, 2)), np.zeros((0, 2)), 0.1)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(0, 300), extra=st.integers(0, 300))
def test_coverage_monotone_in_added_fakes(seed, n, extra):
    rng = np.random.default_rng(seed)
    c = mode_centers(RING)
    fakes = rng.normal(0, 1.5, (n, 2))
    more = np.concatenate([fakes, rng.normal(0, 1.5, (extra, 2))])
    a = mode_coverage(fakes, c, RING.mode_std, min_count=3)
    b = mode_coverage(more, c, RING.mode_std, min_count=3)
    assert b.covered >= a.covered
    assert 0.0 <= a.hq_ratio <= 1.0 and a.covered <= a.n_modes


def test_disjoint_sets_have_no_pairs():
    reals = np.array([[0.0, 0.0], [1.0, 0.0]])
    fakes = np.array([[10.0, 10.0], [-10.0, 5.0]])
    s = close_pairs(reals, fakes, np.zeros(2), np.zeros(2))
    assert (s.pairs, s.sources, s.max_fakes_per_source, s.surrogate_max) == (0, 0, 0, 0.0)


@pytest.mark.parametrize("min_count, sources", [(1, 1), (2, 0)])
def test_single_close_fake(min_count, sources):
    reals = np.array([[0.0, 0.0], [1.0, 0.0]])
    fakes = np.array([[0.025, 0.0]])
    s = close_pairs(reals, fakes, np.zeros(2), np.zeros(1), ClosePairConfig(0.05, min_count))
    assert s.pairs == 1 and s.sources == sources
    assert s.pair_index.tolist() == [[0, 0]]


def test_surrogate_ratio():
    s = close_pairs(np.array([[0.0, 0.0]]), np.array([[0.01, 0.0]]), np.array([1.0]), np.array([0.5]))
    assert s.surrogates[0] == pytest.approx(50.0, rel=1e-12)


def test_max_fakes_per_source():
    reals = np.array([[0.0, 0.0], [1.0, 0.0]])
    fakes = np.array([[0.01, 0], [0, 0.01], [-0.01, 0], [1.01, 0], [0.99, 0]])
    s = close_pairs(reals, fakes, np.zeros(2), np.zeros(5))
    assert s.pairs == 5 and s.sources == 2 and s.max_fakes_per_source == 3


def test_wide_delta_warns_and_bad_config_rejected():
    reals = np.array([[0.0, 0.0], [0.01, 0.0]])
    with pytest.warns(UserWarning, match="minimum real spacing"):
        close_pairs(reals, reals, np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        ClosePairConfig(delta=0.0)
    with pytest.raises(ValueError):
        close_pairs(reals, reals, np.zeros(3), np.zeros(2))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.sampled_from([0.25, 0.5, 2.0, 4.0, 8.0]))
def test_close_pairs_scale_symmetric(seed, scale):
    # power-of-two scales keep every distance comparison exact
    rng = np.random.default_rng(seed)
    reals = rng.uniform(-1, 1, (40, 2))
    fakes = reals[rng.integers(0, 40, 60)] + rng.normal(0, 0.05, (60, 2))
    d0r, d0f = rng.normal(size=40), rng.normal(size=60)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = close_pairs(reals, fakes, d0r, d0f, ClosePairConfig(0.05, 2))
        b = close_pairs(reals * scale, fakes * scale, d0r, d0f, ClosePairConfig(0.05 * scale, 2))
    assert a.pair_index.tolist() == b.pair_index.tolist()
    assert (a.sources, a.max_fakes_per_source) == (b.sources, b.max_fakes_per_source)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_surrogates_nonnegative_zero_iff_equal_outputs(seed):
    rng = np.random.default_rng(seed)
    reals = rng.uniform(-1, 1, (20, 2))
    fakes = reals[rng.integers(0, 20, 30)] + rng.normal(0, 0.02, (30, 2))
    d0r = rng.integers(0, 3, 20).astype(float)
    d0f = rng.integers(0, 3, 30).astype(float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s = close_pairs(reals, fakes, d0r, d0f)
    assert np.all(s.surrogates >= 0)
    equal = d0r[s.pair_index[:, 0]] == d0f[s.pair_index[:, 1]]
    assert np.array_equal(s.surrogates == 0, equal)


def test_coincident_pair_surrogate():
    p = np.array([[0.3, 0.3]])
    assert close_pairs(p, p, [1.0], [1.0]).surrogates.tolist() == [0.0]
    assert close_pairs(p, p, [1.0], [0.0]).surrogates.tolist() == [np.inf]


def test_min_pairwise_distance():
    assert min_pairwise_distance(np.array([[0, 0], [3, 4], [10, 0]])) == 5.0
    assert min_pairwise_distance(np.zeros((1, 2))) == np.inf
    ds = generate_real(DatasetSpec(kind="single-gaussian", n_real=64, seed=0))
    assert min_pairwise_distance(ds.points) > 0.05


def test_constant_equilibrium_trace():
    r = loss_deviation([1.3863] * 100, [0.6931] * 100)
    assert max(map(abs, r.d_window_dev + r.g_window_dev)) < 1e-4
    assert not r.collapse_flag and len(r.d_window_dev) == 10
    exact = loss_deviation([D_LOSS_EQUILIBRIUM] * 10, [G_LOSS_EQUILIBRIUM] * 10)
    assert exact.d_mad == [0.0] * 10 and exact.g_mad == [0.0] * 10


def test_drifting_trace_sets_flag():
    t = np.linspace(0, 1, 1000)
    d = D_LOSS_EQUILIBRIUM + (0.2 - D_LOSS_EQUILIBRIUM) * t
    g = G_LOSS_EQUILIBRIUM + (3.0 - G_LOSS_EQUILIBRIUM) * t
    assert loss_deviation(d, g).collapse_flag
    # only one player drifting is not the collapse signature
    assert not loss_deviation(d, np.full(1000, G_LOSS_EQUILIBRIUM)).collapse_flag


def test_window_larger_than_trace():
    r = loss_deviation([1.0, 2.0, 3.0], [0.0, 0.0, 0.0], window=10)
    assert len(r.d_window_dev) == 1
    assert r.d_window_dev[0] == pytest.approx(2.0 - D_LOSS_EQUILIBRIUM)
    with pytest.raises(ValueError):
        loss_deviation([], [])
