import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from conftest import make_dataset
from are.estimation import (
    ADDED, AreConfig, ClassLossTracker, SamplingPlan, assemble_batch, background_budget, batch_class_cv,
    plan_batch, query_distribution, retain_background, sampling_sizes, update_class_losses,
)
from are.planlog import PlanLog, read_plan_log, replay_plan_log
from core.exceptions import ConfigurationError, NumericError
from queryset.pools import QuerySetConfig, build_query_set
from synthworld.world import ConfounderConfig, SynthConfig


def tracker_with(losses):
    return ClassLossTracker(losses={k: float(v) for k, v in enumerate(losses)})


# Loss tracking

def test_update_takes_the_batch_mean_per_class():
    tracker = ClassLossTracker.fresh([1, 3], num_classes=5)
    update_class_losses(tracker, [(3, 1.0), (3, 3.0), (0, 9.0)])
    assert tracker.losses[3] == 2.0
    assert tracker.losses[1] == pytest.approx(math.log(5))
    assert tracker.observed == {1: False, 3: True}


def test_fresh_tracker_starts_at_uniform_loss():
    tracker = ClassLossTracker.fresh([0, 1, 2, 3], num_classes=10)
    assert all(v == pytest.approx(math.log(10)) for v in tracker.losses.values())


def test_nan_loss_is_a_numeric_error():
    with pytest.raises(NumericError):
        update_class_losses(ClassLossTracker.fresh([0], 2), [(0, float('nan'))])


# Query distribution

def test_equal_losses_or_zero_alpha_give_uniform():
    assert_allclose(query_distribution(tracker_with([1.5] * 4), 0.2), [0.25] * 4)
    assert_allclose(query_distribution(tracker_with([0.1, 2.0, 7.0]), 0.0), [1 / 3] * 3)


def test_softmax_on_two_losses():
    assert_allclose(query_distribution(tracker_with([0.0, math.log(2)]), 1.0), [2 / 3, 1 / 3])


def test_distribution_contract_on_random_losses():
    rng = np.random.default_rng(0)
    for _ in range(200):
        losses = rng.uniform(0, 5, size=int(rng.integers(1, 12)))
        alpha = float(rng.uniform(0.01, 2))
        probs = query_distribution(tracker_with(losses), alpha)
        assert abs(probs.sum() - 1.0) <= 1e-12
        assert (probs > 0).all() and (probs <= 1).all()
        assert_allclose(query_distribution(tracker_with(losses + 3.7), alpha), probs, rtol=1e-9)
        bumped = losses.copy()
        bumped[0] += 1.0
        if len(losses) > 1:
            assert query_distribution(tracker_with(bumped), alpha)[0] < probs[0]


def test_negative_alpha_is_rejected():
    with pytest.raises(ConfigurationError):
        query_distribution(tracker_with([1.0]), -0.1)


# Plan arithmetic

def test_sampling_sizes_exact_cases():
    assert_array_equal(sampling_sizes([0.5], 0.01, [200]), [1])
    assert_array_equal(sampling_sizes([0.9, 0.1], 0.01, [1000, 1000]), [9, 1])
    assert_array_equal(sampling_sizes([0.3, 0.7], 0.0, [500, 500]), [0, 0])
    with pytest.raises(ConfigurationError):
        sampling_sizes([1.0], -0.01, [10])


def test_background_budget_cases():
    assert background_budget([3, 2], 5, 3.0) == 30
    assert background_budget([3, 2], 5, 0.0) == 0
    assert background_budget([1], 3, 2.5) == 10
    assert background_budget([1], 3, math.inf) is None


def test_retain_background_cases(dataset_factory, hand_config):
    ds = dataset_factory(hand_config, {0: [(3, (0, 0))] * 100})
    bg = list(ds.instances)
    assert retain_background(bg[:20], 30, np.random.default_rng(0)) == bg[:20]
    assert retain_background(bg, 0, np.random.default_rng(0)) == []
    first = retain_background(bg, 25, np.random.default_rng(8))
    second = retain_background(bg, 25, np.random.default_rng(8))
    assert len(first) == 25
    assert [i.instance_id for i in first] == [i.instance_id for i in second]


# Batch assembly

def assembly_world():
    cfg = SynthConfig(num_relation_classes=3, num_object_classes=4, feature_dim=2,
                      confounder=ConfounderConfig(a1=0.0), seed=1)
    return make_dataset(cfg, {
        0: [(2, (1, 2))] * 3 + [(3, (0, 0))] * 50,
        1: [(0, (i, 1)) for i in range(4)] + [(2, (2, 2))] * 2,
    })


def query_set_for(ds):
    return build_query_set(ds, QuerySetConfig(k_prime=1, target_fraction=None, selection_mode='explicit_k'))


def test_identity_plan_leaves_the_batch_alone():
    ds = assembly_world()
    base = list(ds.scenes[0].instances)
    plan = SamplingPlan(add_counts={0: 0}, bg_budget=None, fg_in_batch=3)
    batch = assemble_batch(base, plan, query_set_for(ds), AreConfig(), np.random.default_rng(0))
    assert list(batch.instances) == base


def test_assembly_adds_foreground_and_trims_background():
    ds = assembly_world()
    base = list(ds.scenes[0].instances)
    plan = SamplingPlan(add_counts={0: 2}, bg_budget=background_budget([2], 3, 3.0), fg_in_batch=3)
    batch = assemble_batch(base, plan, query_set_for(ds), AreConfig(), np.random.default_rng(0))
    assert len(batch.foreground(3)) == 5
    assert len(batch.background(3)) == 15
    assert batch.count(ADDED) == 2
    assert batch.provenance[-2:] == (ADDED, ADDED)
    assert len(batch.background(3)) <= 3.0 * len(batch.foreground(3)) + 1


def test_assembly_is_deterministic():
    ds = assembly_world()
    base = list(ds.scenes[0].instances)
    plan = SamplingPlan(add_counts={0: 3}, bg_budget=12, fg_in_batch=3)
    ids = [
        [i.instance_id for i in assemble_batch(base, plan, query_set_for(ds), AreConfig(), np.random.default_rng(4)).instances]
        for _ in range(2)
    ]
    assert ids[0] == ids[1]


def test_component_switches_shape_the_plan():
    ds = assembly_world()
    qs = query_set_for(ds)
    tracker = ClassLossTracker.fresh(qs.classes, ds.num_classes)
    no_fg = plan_batch(tracker, qs, AreConfig(lam=1.0, intervene_foreground=False), fg_in_batch=3)
    assert no_fg.add_counts == {0: 0}
    assert no_fg.bg_budget == 9
    no_bg = plan_batch(tracker, qs, AreConfig(lam=1.0, intervene_background=False), fg_in_batch=3)
    assert no_bg.add_counts == {0: 4}
    assert no_bg.bg_budget is None


def test_disabled_intervention_consumes_no_randomness():
    ds = assembly_world()
    qs = query_set_for(ds)
    cfg = AreConfig(lam=0.0, pi=math.inf)
    tracker = ClassLossTracker.fresh(qs.classes, ds.num_classes)
    rng = np.random.default_rng(3)
    before = rng.bit_generator.state
    plan = plan_batch(tracker, qs, cfg, fg_in_batch=3)
    assemble_batch(list(ds.scenes[0].instances), plan, qs, cfg, rng)
    assert rng.bit_generator.state == before


def test_batch_class_cv():
    assert batch_class_cv([[2, 2, 2]]) == 0.0
    assert batch_class_cv([[1, 3], [0, 0]]) == pytest.approx(0.5)


# Plan log

def test_plan_log_replays_cleanly_and_flags_tampering(tmp_path):
    ds = assembly_world()
    qs = query_set_for(ds)
    cfg = AreConfig(lam=0.5)
    tracker = ClassLossTracker.fresh(qs.classes, ds.num_classes)
    with PlanLog(tmp_path / 'plans.jsonl') as log:
        for b, loss in enumerate([0.3, 2.0, 0.9]):
            log.record(0, b, plan_batch(tracker, qs, cfg, fg_in_batch=3 + b))
            update_class_losses(tracker, [(0, loss)])
    records = read_plan_log(tmp_path / 'plans.jsonl')
    assert len(records) == 3
    assert set(records[0]) == {'t', 'b', 'losses', 'probs', 'add_counts', 'bg_budget', 'fg_in_batch'}
    assert replay_plan_log(tmp_path / 'plans.jsonl', cfg, qs.pool_sizes, ds.num_classes).ok

    records[1]['add_counts']['0'] += 1
    report = replay_plan_log(records, cfg, qs.pool_sizes, ds.num_classes)
    assert report.mismatches == [(0, 1, 'add_counts')]


def test_config_reads_yaml_style_keys():
    cfg = AreConfig.from_dict({'alpha': 0.5, 'lambda': 0.02, 'pi': float('inf')})
    assert cfg.lam == 0.02 and math.isinf(cfg.pi)
    assert cfg.to_dict()['lambda'] == 0.02
    with pytest.raises(ConfigurationError):
        AreConfig.from_dict({'beta': 1})
