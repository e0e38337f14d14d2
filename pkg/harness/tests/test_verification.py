import json
from dataclasses import replace

import pytest
from django.conf import settings

from are.estimation import ClassLossTracker, plan_batch
from conftest import SMALL_OVERRIDES
from core.exceptions import ConfigurationError, VerificationFailure
from harness.config import load_experiment_config
from harness.verification import (
    CHECKS, HEADLINE_R_DROP, CheckResult, check_assumption1, check_assumption2, check_grad_align, check_mis_oracle,
    check_rho, check_sce_oe, check_theorem1, check_theorem2, check_theorem3, kernel_runs, paired_runs, run_checks,
    sign_test,
)
from mis.information import enumerate_oracle_pools
from queryset.pools import build_query_set
from synthworld.world import generate_world

VERDICT_KEYS = {'check', 'pass', 'statistic', 'threshold', 'comparison', 'n', 'details'}


def quick(cfg, **verify):
    return replace(cfg, verify=replace(cfg.verify, **verify))


def failing_check(cfg):
    return CheckResult('rho', False, 1.0, 0.05, '<=', 1)


def test_sign_test():
    assert sign_test(15, 5) < 0.05
    assert sign_test(10, 10) > 0.5
    assert sign_test(0, 0) == 1.0


def test_rho_matches_closed_form(small_experiment):
    result = check_rho(quick(small_experiment, rho_samples=20_000))
    assert result.passed
    assert result.details['small_sample'] == 200
    assert result.n == 20_000


def test_class_exclusion_moves_the_loss(small_experiment):
    result = check_assumption1(quick(small_experiment, witness_batches=200))
    assert result.passed
    assert result.n > 100


def test_batch_gradients_are_isolated(small_experiment):
    result = check_assumption2(quick(small_experiment, trials=20))
    assert result.passed
    assert result.statistic == 1.0
    # The other batches really did change the run
    assert result.details['diverged_trajectories'] == 20


def test_sce_and_oe_agree(small_experiment):
    result = check_sce_oe(quick(small_experiment, trials=10))
    assert result.passed
    assert result.n == 30
    assert result.details['hand_world_ok']
    assert result.details['hand_world_expected'] == pytest.approx(0.536)


def test_greedy_selection_beats_random_on_small_pools(small_experiment):
    result = check_mis_oracle(quick(small_experiment, oracle_max_types=3, oracle_max_count=3))
    assert result.passed
    assert result.details['identity_failures'] == 0
    assert result.statistic == 1.0
    assert result.details['mean_margin'] > 0.0


@pytest.mark.slow
def test_greedy_selection_beats_random_on_the_full_grid(small_experiment):
    result = check_mis_oracle(small_experiment)
    assert result.passed
    assert result.n == sum(len(pool) - 1 for pool in enumerate_oracle_pools(4, 3))


@pytest.mark.slow
def test_full_batch_training_agrees_with_bayes(small_experiment):
    result = check_theorem1(small_experiment)
    assert result.passed
    assert result.statistic >= 0.95


@pytest.mark.slow
def test_balanced_batches_agree_with_bayes(small_experiment):
    result = check_theorem2(quick(small_experiment, sign_test_seeds=10))
    assert result.statistic >= 0.95
    assert result.details['sign_test_wins'] + result.details['sign_test_losses'] <= 10


def test_grad_align_reports_paired_trials(small_experiment):
    result = check_grad_align(quick(small_experiment, trials=5))
    assert result.n <= 5
    assert result.details['wins'] + result.details['losses'] <= result.n
    assert set(result.to_dict()) == VERDICT_KEYS


def test_paired_runs_cover_both_samplers(small_experiment):
    frame = paired_runs(quick(small_experiment, seeds=1))
    assert list(frame['sampler']) == ['baseline', 'are']
    assert {'mR@20', 'bg_mR@20', 'batch_class_cv'} <= set(frame.columns)


def test_verdicts_are_written_per_check(small_experiment, tmp_path):
    results = run_checks(['assumption2', 'rho'], quick(small_experiment, trials=5, rho_samples=20_000), out_dir=tmp_path)
    assert [r.check for r in results] == ['assumption2', 'rho']
    verdict = json.loads((tmp_path / 'verdict_rho.json').read_text())
    assert set(verdict) == VERDICT_KEYS
    assert verdict['pass'] is True


def test_a_failed_check_raises_after_writing_its_verdict(small_experiment, tmp_path, monkeypatch):
    monkeypatch.setitem(CHECKS, 'rho', failing_check)
    with pytest.raises(VerificationFailure) as excinfo:
        run_checks(['rho'], small_experiment, out_dir=tmp_path)
    assert excinfo.value.exit_code == 3
    assert json.loads((tmp_path / 'verdict_rho.json').read_text())['pass'] is False


def test_unknown_check_is_a_configuration_error(small_experiment):
    with pytest.raises(ConfigurationError):
        run_checks(['theorem9'], small_experiment)


def headline_config():
    return load_experiment_config(settings.BASE_DIR / 'configs' / 'headline.yaml')


def test_headline_world_plans_additions_for_every_tail_class():
    cfg = headline_config()
    train_ds = generate_world(cfg.synth, 'train')
    query_set = build_query_set(train_ds, cfg.queryset)
    tracker = ClassLossTracker.fresh(query_set.classes, train_ds.num_classes, cfg.train.are.loss_init)
    plan = plan_batch(tracker, query_set, cfg.train.are, fg_in_batch=20)
    assert plan.add_counts
    assert min(plan.add_counts.values()) >= 1


@pytest.mark.slow
def test_are_lifts_mean_recall_on_the_headline_world():
    result = check_theorem3(headline_config())
    assert result.details['added_instances_are'] > 0
    assert result.details['mR_are'] > result.details['mR_baseline']
    assert result.details['R_relative_drop'] <= HEADLINE_R_DROP


@pytest.mark.slow
def test_kernel_comparison_writes_a_verdict():
    cfg = quick(headline_config(), seeds=2)
    check = CHECKS['kernels'](cfg)
    assert set(check.to_dict()) == VERDICT_KEYS
    assert check.n == 2
    assert {'mR_mis', 'mR_lcs', 'mR_mes', 'mR_ms'} <= set(check.details)
    assert check.details['mean_added_instances'] > 0


def test_kernel_runs_cover_every_kernel(small_experiment):
    frame = kernel_runs(quick(small_experiment, seeds=1))
    assert list(frame['kernel']) == ['mis', 'lcs', 'mes', 'ms']
    assert (frame['added_instances'] > 0).all()


def test_are_batches_are_more_balanced_across_seeds():
    cfg = load_experiment_config(None, SMALL_OVERRIDES + [
        'synth.num_scenes=40', 'synth.cooccurrence_strength=0.0', 'train.batch_size=32', 'train.epochs=1',
        'train.are.lambda=0.15',
    ])
    frame = paired_runs(quick(cfg, seeds=20)).pivot(index='seed', columns='sampler')
    assert (frame[('added_instances', 'are')] > 0).all()
    wins = int((frame[('batch_class_cv', 'are')] < frame[('batch_class_cv', 'baseline')]).sum())
    assert sign_test(wins, 20 - wins) < 0.05
