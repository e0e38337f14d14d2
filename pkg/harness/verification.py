"""
Verification checks.

Each check runs a small, self-contained experiment and returns a CheckResult
whose verdict JSON is {check, pass, statistic, threshold, comparison, n,
details}. Sample sizes come from the `verify` section of the experiment
config; world-level checks (theorem3, fore_back, kernels, grad_align, rho) use
the config's synth world, while theorem1/theorem2 build their own toy worlds.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd
from scipy.stats import binomtest

from are.estimation import batch_class_cv
from classifier.model import (
    SoftmaxModel, batch_arrays, cross_entropy, forward, gradient, gradient_from_probs, loss_excluding_class, sgd_step,
)
from classifier.training import TrainConfig, train
from core.exceptions import ConfigurationError, VerificationFailure
from core.seeding import rng_stream
from metrics.diagnostics import (
    OracleWorld, analytic_rho, constant_predictor, cosine, empirical_rho, oe_estimate, sce_estimate,
)
from metrics.evaluation import evaluate, write_json
from mis.information import (
    PairPool, conditional_entropy, enumerate_oracle_pools, expected_random_information, max_mi_sample,
    mutual_information, pair_entropy,
)
from synthworld.analyzers import BayesOracle
from synthworld.world import ConfounderConfig, Dataset, SynthConfig, build_dataset, generate_world
from .config import ExperimentConfig, apply_sweep_value
from .experiments import generate_splits, headline_metrics

logger = logging.getLogger(__name__)

AGREEMENT_THRESHOLD = 0.95
SIGN_TEST_LEVEL = 0.05
RHO_TOLERANCE = 0.05
HEADLINE_MR_GAIN = 0.20
HEADLINE_R_DROP = 0.15
FORE_BACK_DROP = 0.50
TOY_LEARNING_RATE = 0.1
TOY_BATCH_SIZE = 30
SIGN_TEST_EPOCHS = 20


@dataclass
class CheckResult:
    check: str
    passed: bool
    statistic: float
    threshold: float
    # How statistic is compared with threshold for the headline verdict
    comparison: str
    n: int
    details: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            'check': self.check,
            'pass': bool(self.passed),
            'statistic': float(self.statistic),
            'threshold': float(self.threshold),
            'comparison': self.comparison,
            'n': int(self.n),
            'details': self.details,
        }


def sign_test(wins: int, losses: int) -> float:
    """One-sided sign test p-value for wins > losses; ties are dropped by the caller."""
    if wins + losses == 0:
        return 1.0
    return float(binomtest(wins, wins + losses, 0.5, alternative='greater').pvalue)


# Toy Gaussian worlds for the Bayes-agreement checks

def toy_config(seed: int, class_weights=(1.0, 1.0, 1.0), separation: float = 4.0, test_scenes: int = 100) -> SynthConfig:
    """Three classes in eight dimensions, 3000 foreground instances, no background or confounding."""
    return SynthConfig(
        num_relation_classes=3,
        num_object_classes=3,
        feature_dim=8,
        class_weights=tuple(float(w) for w in class_weights),
        cooccurrence_strength=0.0,
        confounder=ConfounderConfig(a1=0.0),
        num_scenes=100,
        test_scenes=test_scenes,
        relations_per_scene=(30, 30),
        background_fraction=0.0,
        class_mean_separation=separation,
        cluster_width=1,
        pairs_per_class=1,
        seed=seed,
    )


def foreground_predictions(model: SoftmaxModel, ds: Dataset) -> np.ndarray:
    return np.argmax(forward(model, ds.features)[:, : ds.num_classes], axis=1)


def bayes_agreement(model: SoftmaxModel, ds: Dataset) -> float:
    mask = ds.labels < ds.num_classes
    oracle = BayesOracle.predict_many(ds.config, ds.features[mask])
    return float(np.mean(foreground_predictions(model, ds)[mask] == oracle))


def class_recall(model: SoftmaxModel, ds: Dataset, cls: int) -> float:
    mask = ds.labels == cls
    if not mask.any():
        return float('nan')
    return float(np.mean(foreground_predictions(model, ds)[mask] == cls))


def _toy_run(synth: SynthConfig, sampler: str, epochs: int):
    train_ds, test_ds = generate_world(synth, 'train'), generate_world(synth, 'test')
    cfg = TrainConfig(learning_rate=TOY_LEARNING_RATE, epochs=epochs, batch_size=TOY_BATCH_SIZE,
                      sampler=sampler, seed=synth.seed)
    model, _ = train(train_ds, cfg)
    return model, test_ds


def check_theorem1(cfg: ExperimentConfig) -> CheckResult:
    """Full-batch training on a class-balanced world lands on the Bayes-optimal decisions."""
    model, test_ds = _toy_run(toy_config(cfg.seed), 'full', cfg.verify.toy_epochs)
    agreement = bayes_agreement(model, test_ds)
    return CheckResult('theorem1', agreement >= AGREEMENT_THRESHOLD, agreement, AGREEMENT_THRESHOLD, '>=',
                       test_ds.foreground_count, {'epochs': cfg.verify.toy_epochs})


def check_theorem2(cfg: ExperimentConfig) -> CheckResult:
    """
    Exactly class-balanced mini-batches reach Bayes agreement on a balanced
    world; on a 100:10:1 world the plain sampler loses tail recall against them.
    """
    v = cfg.verify
    model, test_ds = _toy_run(toy_config(cfg.seed), 'balanced', v.toy_epochs)
    agreement = bayes_agreement(model, test_ds)

    epochs = min(v.toy_epochs, SIGN_TEST_EPOCHS)
    tail = 2
    wins = losses = 0
    recalls = {'baseline': [], 'balanced': []}
    for offset in range(v.sign_test_seeds):
        synth = toy_config(cfg.seed + offset, class_weights=(100.0, 10.0, 1.0), separation=2.0, test_scenes=200)
        for sampler in recalls:
            model, imbalanced_test = _toy_run(synth, sampler, epochs)
            recalls[sampler].append(class_recall(model, imbalanced_test, tail))
        balanced, baseline = recalls['balanced'][-1], recalls['baseline'][-1]
        wins += balanced > baseline
        losses += balanced < baseline
    p_value = sign_test(wins, losses)
    passed = agreement >= AGREEMENT_THRESHOLD and p_value < SIGN_TEST_LEVEL
    return CheckResult('theorem2', passed, agreement, AGREEMENT_THRESHOLD, '>=', test_ds.foreground_count, {
        'tail_recall_baseline': float(np.nanmean(recalls['baseline'])),
        'tail_recall_balanced': float(np.nanmean(recalls['balanced'])),
        'sign_test_wins': int(wins),
        'sign_test_losses': int(losses),
        'sign_test_p': p_value,
        'seeds': v.sign_test_seeds,
    })


# Baseline against ARE on the configured world

def paired_runs(cfg: ExperimentConfig) -> pd.DataFrame:
    """One baseline and one ARE run per seed, evaluated masked and background-included."""
    rows = []
    for offset in range(cfg.verify.seeds):
        seeded = cfg.with_seed(cfg.seed + offset)
        train_ds, test_ds = generate_splits(seeded)
        for sampler in ('baseline', 'are'):
            run_cfg = replace(seeded, train=replace(seeded.train, sampler=sampler))
            model, history = train(train_ds, run_cfg.train_config())
            reports = [evaluate(model, test_ds, cfg.eval_k_values, include_background=flag) for flag in (False, True)]
            rows.append({'seed': seeded.seed, 'sampler': sampler, **headline_metrics(reports),
                         'batch_class_cv': batch_class_cv(history.class_counts),
                         'added_instances': int(sum(history.added_counts))})
    return pd.DataFrame(rows)


def _relative_change(new: float, old: float) -> float:
    if old == 0:
        return math.inf if new > 0 else 0.0
    return (new - old) / old


def check_theorem3(cfg: ExperimentConfig) -> CheckResult:
    """
    ARE-composed, approximately balanced batches: mean recall rises by at
    least the headline margin while recall gives up no more than its margin.
    """
    k = min(cfg.eval_k_values)
    means = paired_runs(cfg).groupby('sampler').mean(numeric_only=True)
    gain = _relative_change(means.loc['are', f'mR@{k}'], means.loc['baseline', f'mR@{k}'])
    r_drop = -_relative_change(means.loc['are', f'R@{k}'], means.loc['baseline', f'R@{k}'])
    passed = gain >= HEADLINE_MR_GAIN and r_drop <= HEADLINE_R_DROP
    return CheckResult('theorem3', passed, gain, HEADLINE_MR_GAIN, '>=', cfg.verify.seeds, {
        'k': k,
        'mR_baseline': float(means.loc['baseline', f'mR@{k}']),
        'mR_are': float(means.loc['are', f'mR@{k}']),
        'R_baseline': float(means.loc['baseline', f'R@{k}']),
        'R_are': float(means.loc['are', f'R@{k}']),
        'R_relative_drop': float(r_drop),
        'R_drop_threshold': HEADLINE_R_DROP,
        'batch_class_cv_baseline': float(means.loc['baseline', 'batch_class_cv']),
        'batch_class_cv_are': float(means.loc['are', 'batch_class_cv']),
        'added_instances_are': float(means.loc['are', 'added_instances']),
    })


def check_fore_back(cfg: ExperimentConfig) -> CheckResult:
    """Letting background compete collapses the baseline's mean recall; ARE holds up better."""
    k = min(cfg.eval_k_values)
    means = paired_runs(cfg).groupby('sampler').mean(numeric_only=True)
    masked, unmasked = means.loc['baseline', f'mR@{k}'], means.loc['baseline', f'bg_mR@{k}']
    drop = -_relative_change(unmasked, masked)
    are_unmasked = means.loc['are', f'bg_mR@{k}']
    passed = drop >= FORE_BACK_DROP and are_unmasked > unmasked
    return CheckResult('fore_back', passed, drop, FORE_BACK_DROP, '>=', cfg.verify.seeds, {
        'k': k,
        'baseline_mR_masked': float(masked),
        'baseline_mR_unmasked': float(unmasked),
        'are_mR_masked': float(means.loc['are', f'mR@{k}']),
        'are_mR_unmasked': float(are_unmasked),
    })


# Sampling kernels on the configured world

KERNEL_RIVALS = ('lcs', 'mes', 'ms')


def kernel_runs(cfg: ExperimentConfig) -> pd.DataFrame:
    """One ARE run per seed and kernel (MIS plus each uncertainty kernel), evaluated masked."""
    rows = []
    for offset in range(cfg.verify.seeds):
        seeded = cfg.with_seed(cfg.seed + offset)
        train_ds, test_ds = generate_splits(seeded)
        for kernel in ('mis',) + KERNEL_RIVALS:
            run_cfg = apply_sweep_value(seeded, 'kernel', kernel)
            model, history = train(train_ds, run_cfg.train_config())
            report = evaluate(model, test_ds, cfg.eval_k_values, include_background=False)
            rows.append({'seed': seeded.seed, 'kernel': kernel, **headline_metrics([report]),
                         'added_instances': int(sum(history.added_counts))})
    return pd.DataFrame(rows)


def check_kernels(cfg: ExperimentConfig) -> CheckResult:
    """MIS draws give a mean recall at least as high as every uncertainty kernel's."""
    k = min(cfg.eval_k_values)
    frame = kernel_runs(cfg)
    means = frame.groupby('kernel').mean(numeric_only=True)
    margins = {rival: float(means.loc['mis', f'mR@{k}'] - means.loc[rival, f'mR@{k}']) for rival in KERNEL_RIVALS}
    worst = min(margins.values())
    return CheckResult('kernels', worst >= 0, worst, 0.0, '>=', cfg.verify.seeds, {
        'k': k,
        **{f'mR_{kernel}': float(means.loc[kernel, f'mR@{k}']) for kernel in means.index},
        **{f'margin_over_{rival}': margin for rival, margin in margins.items()},
        'mean_added_instances': float(frame['added_instances'].mean()),
    })



# Classifier witnesses

def _witness_config() -> SynthConfig:
    return SynthConfig(num_relation_classes=3, feature_dim=4, confounder=ConfounderConfig(a1=0.0))


def check_assumption1(cfg: ExperimentConfig) -> CheckResult:
    """Dropping a class from a batch moves the batch loss unless that class sat exactly at the mean."""
    rng = rng_stream(cfg.seed, 'diagnostics')
    synth = _witness_config()
    K, d = synth.num_relation_classes, synth.feature_dim
    checked = violations = 0
    for _ in range(cfg.verify.witness_batches):
        labels = rng.integers(0, K + 1, size=8)
        q = int(labels[0])
        if (labels == q).all():
            continue
        features = rng.normal(size=(8, d))
        batch = list(build_dataset(synth, [(0, 0, 0, int(y), x) for y, x in zip(labels, features)]).instances)
        model = SoftmaxModel(weights=rng.normal(size=(K + 1, d)), bias=rng.normal(size=K + 1))
        per_instance, full_mean = cross_entropy(forward(model, features), labels)
        if abs(per_instance[labels == q].mean() - full_mean) <= 1e-9:
            continue
        checked += 1
        violations += loss_excluding_class(model, batch, q) == full_mean
    return CheckResult('assumption1', violations == 0, violations, 0, '<=', checked)


ASSUMPTION2_STEPS = 4


def _sgd_trace(start: SoftmaxModel, batches, lr: float):
    """Plain SGD over `batches` from a copy of `start`; the model snapshot and gradient at every step."""
    model = start.copy()
    snapshots, grads = [], []
    for batch in batches:
        features, labels = batch_arrays(batch)
        snapshots.append(model.copy())
        grads.append(gradient_from_probs(features, labels, forward(model, features)))
        sgd_step(model, grads[-1], lr)
    return snapshots, grads


def check_assumption2(cfg: ExperimentConfig) -> CheckResult:
    """
    A batch's gradient at a model snapshot depends on that batch alone.

    Each trial runs two SGD passes from the same start that share batch j and
    differ in every other batch. After the second pass, batch j's gradient is
    recomputed at the first pass's snapshot and must be bit-identical to the
    one the first pass used.
    """
    train_ds = generate_world(cfg.synth, 'train')
    rng = rng_stream(cfg.seed, 'diagnostics')
    start = SoftmaxModel.random(train_ds.num_classes, cfg.synth.feature_dim, rng_stream(cfg.seed, 'init'))
    size = min(cfg.train.batch_size, len(train_ds))
    trials = cfg.verify.trials
    identical = diverged = 0
    for _ in range(trials):
        batches = [_draw(train_ds.instances, size, rng) for _ in range(ASSUMPTION2_STEPS)]
        j = int(rng.integers(ASSUMPTION2_STEPS))
        altered = [b if k == j else _draw(train_ds.instances, size, rng) for k, b in enumerate(batches)]
        snapshots, grads = _sgd_trace(start, batches, cfg.train.learning_rate)
        other_snapshots, _ = _sgd_trace(start, altered, cfg.train.learning_rate)
        features, labels = batch_arrays(batches[j])
        recomputed = gradient(snapshots[j], features, labels)
        identical += np.array_equal(recomputed.flat(), grads[j].flat())
        diverged += not np.array_equal(other_snapshots[-1].weights, snapshots[-1].weights)
    return CheckResult('assumption2', identical == trials, identical / trials, 1.0, '>=', trials, {
        'bit_identical_gradients': identical == trials,
        'diverged_trajectories': diverged,
        'steps_per_trial': ASSUMPTION2_STEPS,
    })


# Causal diagnostics

def check_rho(cfg: ExperimentConfig) -> CheckResult:
    """Empirical confounder correlation against its closed form, at two sample sizes."""
    confounder = cfg.synth.confounder
    target = analytic_rho(confounder)
    large = cfg.verify.rho_samples
    small = max(2, large // 100)
    errors = {}
    for n in (small, large):
        errors[n] = abs(empirical_rho(confounder, n, rng_stream(cfg.seed, 'diagnostics')) - target)
    return CheckResult('rho', errors[large] <= RHO_TOLERANCE, errors[large], RHO_TOLERANCE, '<=', large, {
        'rho_analytic': target,
        'error_small_sample': errors[small],
        'small_sample': small,
        'error_shrinks': errors[large] <= errors[small],
    })


def hand_oracle_world() -> OracleWorld:
    """Two scene types, two relationship features each, two classes."""
    return OracleWorld(
        scene_probs=np.array([0.6, 0.4]),
        relation_probs=np.array([[0.5, 0.5], [0.25, 0.75]]),
        label_probs=np.array([[[1.0, 0.0], [0.2, 0.8]], [[0.5, 0.5], [0.0, 1.0]]]),
        features=np.array([[[0.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [1.0, 1.0]]]),
    )


def random_oracle_world(rng: np.random.Generator, n_scenes=3, n_relations=4, n_classes=3, dim=3) -> OracleWorld:
    return OracleWorld(
        scene_probs=rng.dirichlet(np.ones(n_scenes)),
        relation_probs=rng.dirichlet(np.ones(n_relations), size=n_scenes),
        label_probs=rng.dirichlet(np.ones(n_classes), size=(n_scenes, n_relations)),
        features=rng.normal(size=(n_scenes, n_relations, dim)),
    )


def check_sce_oe(cfg: ExperimentConfig) -> CheckResult:
    """Spurious-correlation and overlapping errors agree within delta on finite oracle worlds."""
    rng = rng_stream(cfg.seed, 'diagnostics')
    hand = hand_oracle_world()
    hand_constant = constant_predictor([0.7, 0.3])
    hand_expected = 0.6 * (0.5 * 0.3 + 0.5 * 0.62) + 0.4 * (0.25 * 0.5 + 0.75 * 0.7)
    gaps = []
    for _ in range(cfg.verify.trials):
        world = random_oracle_world(rng)
        K, d = world.num_classes, world.features.shape[2]
        predictors = [
            world.bayes_predictor(),
            constant_predictor(np.full(K, 1.0 / K)),
            SoftmaxModel(weights=rng.normal(size=(K + 1, d)), bias=rng.normal(size=K + 1)),
        ]
        gaps.extend(abs(sce_estimate(p, world) - oe_estimate(p, world)) for p in predictors)
    worst = max(gaps)
    hand_sce = sce_estimate(hand_constant, hand)
    hand_ok = abs(hand_sce - hand_expected) <= 1e-9 and abs(oe_estimate(hand_constant, hand) - hand_expected) <= 1e-9
    return CheckResult('sce_oe', worst <= cfg.delta and hand_ok, worst, cfg.delta, '<=', len(gaps), {
        'hand_world_sce': hand_sce,
        'hand_world_expected': hand_expected,
        'hand_world_ok': hand_ok,
    })


def _draw(items, size, rng):
    return [items[i] for i in rng.choice(len(items), size=size, replace=len(items) < size)]


def check_grad_align(cfg: ExperimentConfig) -> CheckResult:
    """
    Class-balanced batches point closer to the full-data gradient than
    class-pure batches of the same size (paired trials, sign test).
    """
    train_ds = generate_world(cfg.synth, 'train')
    rng = rng_stream(cfg.seed, 'diagnostics')
    model = SoftmaxModel.zeros(train_ds.num_classes, cfg.synth.feature_dim)
    full = gradient(model, train_ds.features, train_ds.labels).flat()
    labels = sorted(set(train_ds.labels.tolist()))
    per_label = max(1, cfg.train.batch_size // len(labels))
    wins = losses = 0
    balanced_cos, pure_cos = [], []
    for _ in range(cfg.verify.trials):
        balanced = [i for k in labels for i in _draw(train_ds.instances_of_class(k), per_label, rng)]
        pure_label = labels[int(rng.integers(len(labels)))]
        pure = _draw(train_ds.instances_of_class(pure_label), per_label * len(labels), rng)
        values = []
        for batch in (balanced, pure):
            features = np.vstack([i.feature for i in batch])
            values.append(cosine(gradient(model, features, [i.relation_label for i in batch]).flat(), full))
        if any(math.isnan(v) for v in values):
            continue
        balanced_cos.append(values[0])
        pure_cos.append(values[1])
        wins += values[0] > values[1]
        losses += values[0] < values[1]
    p_value = sign_test(wins, losses)
    return CheckResult('grad_align', p_value < SIGN_TEST_LEVEL, p_value, SIGN_TEST_LEVEL, '<', len(balanced_cos), {
        'mean_cosine_balanced': float(np.mean(balanced_cos)) if balanced_cos else None,
        'mean_cosine_pure': float(np.mean(pure_cos)) if pure_cos else None,
        'wins': int(wins),
        'losses': int(losses),
    })


def check_mis_oracle(cfg: ExperimentConfig) -> CheckResult:
    """
    Greedy maximum-MI selection against the exact mean MI of a random
    selection, over every small pool and every sample size. Passes when the
    greedy value dominates in every case and the MI identity holds.
    """
    v = cfg.verify
    greedy_values, random_values = [], []
    dominated = identity_failures = 0
    for pool in enumerate_oracle_pools(v.oracle_max_types, v.oracle_max_count):
        for n in range(1, len(pool)):
            selected = max_mi_sample(pool, n)
            greedy = mutual_information(pool, selected)
            baseline = expected_random_information(pool, n)
            greedy_values.append(greedy)
            random_values.append(baseline)
            dominated += greedy >= baseline - 1e-12
            identity_failures += not _mi_identity_holds(pool, selected)
    margin = float(np.mean(greedy_values) - np.mean(random_values))
    cases = len(greedy_values)
    fraction = dominated / cases
    return CheckResult('mis_oracle', fraction == 1.0 and identity_failures == 0, fraction, 1.0, '>=', cases, {
        'mean_mi_greedy': float(np.mean(greedy_values)),
        'mean_mi_random': float(np.mean(random_values)),
        'mean_margin': margin,
        'identity_failures': identity_failures,
    })


def _mi_identity_holds(pool: PairPool, selected) -> bool:
    h = pair_entropy(pool)
    mi = mutual_information(pool, selected)
    return abs(mi - (h - conditional_entropy(pool, selected))) <= 1e-9 and -1e-9 <= mi <= h + 1e-9


CHECKS: Dict[str, Callable[[ExperimentConfig], CheckResult]] = {
    'theorem1': check_theorem1,
    'theorem2': check_theorem2,
    'theorem3': check_theorem3,
    'assumption1': check_assumption1,
    'assumption2': check_assumption2,
    'rho': check_rho,
    'sce_oe': check_sce_oe,
    'grad_align': check_grad_align,
    'fore_back': check_fore_back,
    'kernels': check_kernels,
    'mis_oracle': check_mis_oracle,
}


def run_checks(names: Iterable[str], cfg: ExperimentConfig,
               out_dir: Optional[Union[str, Path]] = None) -> List[CheckResult]:
    """
    Run the named checks (or 'all'), write one verdict JSON per check, and
    raise VerificationFailure if any check failed.
    """
    names = list(names)
    if 'all' in names:
        names = list(CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ConfigurationError(f"unknown verification checks {unknown}, expected {list(CHECKS)}")
    results = []
    for name in names:
        result = CHECKS[name](cfg)
        logger.info("verify %s: %s (statistic %.6g %s %.6g, n=%d)", name, 'PASS' if result.passed else 'FAIL',
                    result.statistic, result.comparison, result.threshold, result.n)
        if out_dir is not None:
            write_json(result.to_dict(), Path(out_dir) / f'verdict_{name}.json')
        results.append(result)
    failed = [r.check for r in results if not r.passed]
    if failed:
        raise VerificationFailure(f"verification failed: {', '.join(failed)}")
    return results
