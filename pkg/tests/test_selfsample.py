"""Auxiliary-subset drawing: Bernoulli keeps, seeding, and family helpers."""

import collections

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sste.data import Provenance, generate_synthetic
from sste.errors import ValidationError
from sste.propensity import (
    SampleProbTable,
    estimate_popularity_propensity,
    sampling_probabilities,
    truncate,
)
from sste.selfsample import (
    SelfSampleConfig,
    build_auxiliary_family,
    draw_auxiliary,
    train_family,
    val_family,
)

from reference import make_dataset
from test_data import small_spec


def uniform_probs(n, value, epsilon=0.5):
    probs = np.full(n, value)
    return truncate(probs, epsilon) if value < epsilon else SampleProbTable(
        per_instance_prob=np.ones(n), epsilon=epsilon,
        truncated=np.ones(n, dtype=bool)
    )


def biased_dataset(n_items=12, rows=3000, seed=3):
    rng = np.random.default_rng(seed)
    weights = 1.0 / np.arange(1, n_items + 1)
    weights /= weights.sum()
    items = rng.choice(n_items, size=rows, p=weights)
    users = rng.integers(0, 20, size=rows)
    labels = rng.integers(0, 2, size=rows)
    return make_dataset(users, items, labels, 20, n_items)


class TestDrawAuxiliary:
    def test_all_ones_returns_the_input_verbatim(self):
        ds = make_dataset([0, 1, 2], [2, 0, 1], [1, 0, 1], 3, 3)
        out = draw_auxiliary(ds, uniform_probs(3, 1.0), seed=7)
        assert np.array_equal(out.users, ds.users)
        assert np.array_equal(out.items, ds.items)
        assert np.array_equal(out.labels, ds.labels)

    def test_result_records_provenance_seed_and_epsilon(self):
        ds = make_dataset([0, 1], [0, 1], [1, 1], 2, 2)
        out = draw_auxiliary(ds, truncate(np.array([0.4, 0.9]), 0.5), seed=11)
        assert out.provenance is Provenance.AUXILIARY_SUBSET
        assert out.rng_seed == 11
        assert out.epsilon == 0.5

    def test_same_seed_reproduces_the_draw(self):
        ds = biased_dataset()
        probs = truncate(np.full(len(ds), 0.3), 0.5)
        a = draw_auxiliary(ds, probs, seed=5)
        b = draw_auxiliary(ds, probs, seed=5)
        assert np.array_equal(a.users, b.users)
        assert np.array_equal(a.items, b.items)

    def test_different_seeds_differ(self):
        ds = biased_dataset()
        probs = truncate(np.full(len(ds), 0.3), 0.5)
        a = draw_auxiliary(ds, probs, seed=5)
        b = draw_auxiliary(ds, probs, seed=6)
        assert len(a) != len(b) or not np.array_equal(a.items, b.items)

    def test_misaligned_lengths_are_rejected(self):
        ds = make_dataset([0, 1], [0, 1], [1, 1], 2, 2)
        with pytest.raises(ValidationError):
            draw_auxiliary(ds, truncate(np.array([0.4]), 0.5), seed=1)

    def test_half_probability_size_is_binomial(self):
        ds = biased_dataset(rows=10000)
        probs = truncate(np.full(len(ds), 0.5), 0.9)
        out = draw_auxiliary(ds, probs, seed=123)
        # 3 sigma for Binomial(10000, 0.5) is 150.
        assert abs(len(out) - 5000) <= 150

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=30)
    def test_subset_rows_come_from_the_source(self, seed):
        ds = biased_dataset(rows=400, seed=1)
        probs = truncate(np.full(len(ds), 0.4), 0.9)
        out = draw_auxiliary(ds, probs, seed=seed)
        source = collections.Counter(
            zip(ds.users.tolist(), ds.items.tolist(), ds.labels.tolist())
        )
        drawn = collections.Counter(
            zip(out.users.tolist(), out.items.tolist(), out.labels.tolist())
        )
        assert all(drawn[key] <= source[key] for key in drawn)


class TestFamilies:
    def test_train_family_sizes_and_epsilons(self):
        ds = biased_dataset()
        pt = estimate_popularity_propensity(ds, gamma=1.0, floor=0.01)
        subsets = train_family(ds, pt, (0.3, 0.7), master_seed=9)
        assert len(subsets) == 2
        assert subsets[0].epsilon == 0.3
        assert subsets[1].epsilon == 0.7

    def test_zero_threshold_keeps_the_whole_source(self):
        ds = biased_dataset(rows=500)
        pt = estimate_popularity_propensity(ds, gamma=1.0, floor=0.01)
        (subset,) = train_family(ds, pt, (0.0,), master_seed=9)
        assert np.array_equal(subset.users, ds.users)
        assert np.array_equal(subset.items, ds.items)

    def test_epoch_changes_train_draws_but_not_val(self):
        ds = biased_dataset()
        pt = estimate_popularity_propensity(ds, gamma=1.0, floor=0.01)
        a = train_family(ds, pt, (0.5,), master_seed=9, epoch=1)
        b = train_family(ds, pt, (0.5,), master_seed=9, epoch=2)
        assert len(a[0]) != len(b[0]) or not np.array_equal(a[0].items, b[0].items)
        v1 = val_family(ds, pt, (0.5,), master_seed=9)
        v2 = val_family(ds, pt, (0.5,), master_seed=9)
        assert np.array_equal(v1[0].items, v2[0].items)

    def test_distinct_thresholds_use_distinct_seeds(self):
        ds = biased_dataset()
        pt = estimate_popularity_propensity(ds, gamma=1.0, floor=0.01)
        subsets = train_family(ds, pt, (0.5, 0.5), master_seed=9)
        assert not np.array_equal(subsets[0].items, subsets[1].items)

    def test_build_family_returns_both_sides(self):
        train = biased_dataset(seed=1)
        val = biased_dataset(seed=2, rows=700)
        pt = estimate_popularity_propensity(train, gamma=1.0, floor=0.01)
        cfg = SelfSampleConfig(epsilons_train=(0.5,), epsilons_val=(0.4, 0.6),
                               seed=21)
        a_tr, a_val = build_auxiliary_family(train, val, pt, cfg)
        assert len(a_tr) == 1 and len(a_val) == 2
        assert all(s.provenance is Provenance.AUXILIARY_SUBSET
                   for s in a_tr + a_val)

    def test_subset_is_much_smaller_on_skewed_data(self):
        ds = biased_dataset(rows=4000)
        pt = estimate_popularity_propensity(ds, gamma=1.0, floor=0.01)
        (subset,) = train_family(ds, pt, (0.9,), master_seed=3)
        assert len(subset) < 0.5 * len(ds)

    def test_subset_expected_size_matches_probability_mass(self):
        ds = biased_dataset(rows=6000)
        pt = estimate_popularity_propensity(ds, gamma=1.0, floor=0.01)
        probs = truncate(sampling_probabilities(ds, pt), 0.5)
        expected = probs.per_instance_prob.sum()
        sizes = [
            len(draw_auxiliary(ds, probs, seed=s)) for s in range(40, 60)
        ]
        assert abs(np.mean(sizes) - expected) < 4.0 * np.sqrt(expected)

    def test_subset_items_are_less_popularity_skewed(self):
        spec = small_spec(n_users=60, n_items=30, train_impressions=8000,
                          exposure_bias_strength=1.5)
        train, _, _, _ = generate_synthetic(spec)
        pt = estimate_popularity_propensity(train, gamma=1.0, floor=0.01)
        (subset,) = train_family(train, pt, (1.0,), master_seed=17)
        uniform = 1.0 / spec.n_items

        def tv_from_uniform(items):
            freq = np.bincount(items, minlength=spec.n_items) / len(items)
            return 0.5 * np.abs(freq - uniform).sum()

        assert tv_from_uniform(subset.items) < tv_from_uniform(train.items)


class TestConfig:
    def test_empty_threshold_lists_are_rejected(self):
        with pytest.raises(ValidationError):
            SelfSampleConfig(epsilons_train=(), epsilons_val=(0.5,))
        with pytest.raises(ValidationError):
            SelfSampleConfig(epsilons_train=(0.5,), epsilons_val=())

    def test_out_of_range_threshold_is_rejected(self):
        with pytest.raises(ValidationError):
            SelfSampleConfig(epsilons_train=(1.2,), epsilons_val=(0.5,))

    def test_lists_are_normalized_to_tuples(self):
        cfg = SelfSampleConfig(epsilons_train=[0.5], epsilons_val=[0.4])
        assert cfg.epsilons_train == (0.5,)
        assert cfg.epsilons_val == (0.4,)
