"""
Experiment runners behind the management commands.

generate -> train.jsonl / test.jsonl (+ sidecars), histogram and co-occurrence CSVs
train    -> model.json checkpoint, metrics.csv, history.json, plan_log.jsonl, run.json
eval     -> eval_metrics.csv for an existing checkpoint
ablate   -> ablation_<sweep>.csv, one row per swept value with mean/std over seeds

Everything a runner writes is reproducible from (config, seed); run.json
carries the config hash that ties artifacts back to the config.
"""
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from are.estimation import batch_class_cv
from are.planlog import PlanLog, replay_plan_log
from classifier.model import SoftmaxModel, load_checkpoint, save_checkpoint
from classifier.training import History, scene_batches, train
from core.exceptions import ConfigurationError, DataError, NumericError
from core.seeding import rng_stream
from metrics.diagnostics import DiagnosticsReport, analytic_rho, empirical_rho, gradient_alignment
from metrics.evaluation import MetricsReport, evaluate, write_json, write_metrics_csv
from mis.kernels import resolve_kernel
from queryset.pools import build_query_set
from synthworld.storage import load_dataset, save_dataset
from synthworld.world import Dataset, cooccurrence_matrix, generate_world, relation_histogram
from .config import SWEEP_ORDER, ExperimentConfig, apply_sweep_value, config_hash, dump_experiment_config

logger = logging.getLogger(__name__)

RHO_DIAGNOSTIC_SAMPLES = 10_000

PathLike = Union[str, Path]


@dataclass
class RunReport:
    config_hash: str
    seed: int
    command: str
    metrics: List[Dict]
    diagnostics: Dict
    plan_log_path: Optional[str]
    output_dir: Optional[str]
    wall_time: float
    # Summary statistics of the training run
    summary: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class RunOutcome:
    model: SoftmaxModel
    history: History
    reports: List[MetricsReport]
    diagnostics: DiagnosticsReport
    wall_time: float


def generate_splits(cfg: ExperimentConfig) -> Tuple[Dataset, Dataset]:
    return generate_world(cfg.synth, 'train'), generate_world(cfg.synth, 'test')


def evaluation_reports(model: SoftmaxModel, test_ds: Dataset, cfg: ExperimentConfig) -> List[MetricsReport]:
    """
    Plain forward-path evaluation. With mask_background_in_eval unset both the
    masked and the background-included reports are produced.
    """
    mask = cfg.train.mask_background_in_eval
    include = [False, True] if mask is None else [not mask]
    return [
        evaluate(model, test_ds, cfg.eval_k_values, include_background=flag,
                 label='unmasked' if flag else 'masked')
        for flag in include
    ]


def run_diagnostics(model: SoftmaxModel, train_ds: Dataset, cfg: ExperimentConfig) -> DiagnosticsReport:
    report = DiagnosticsReport()
    rng = rng_stream(cfg.seed, 'diagnostics')
    confounder = cfg.synth.confounder
    try:
        report.rho_analytic = analytic_rho(confounder)
        report.rho_empirical = empirical_rho(confounder, RHO_DIAGNOSTIC_SAMPLES, rng)
    except NumericError as exc:
        logger.warning("confounder correlation skipped: %s", exc)
    batch = scene_batches(train_ds, cfg.train.batch_size, rng)[0]
    report.grad_cosine = gradient_alignment(model, batch, train_ds)
    return report


def train_and_evaluate(cfg: ExperimentConfig, train_ds: Dataset, test_ds: Dataset,
                       plan_log: Optional[PlanLog] = None) -> RunOutcome:
    started = time.perf_counter()
    model, history = train(train_ds, cfg.train_config(), plan_log=plan_log)
    reports = evaluation_reports(model, test_ds, cfg)
    diagnostics = run_diagnostics(model, train_ds, cfg)
    return RunOutcome(model=model, history=history, reports=reports, diagnostics=diagnostics,
                      wall_time=time.perf_counter() - started)


def headline_metrics(reports: Sequence[MetricsReport]) -> Dict[str, float]:
    """Flat R@K / mR@K / MR@K of every report; background-included keys get a 'bg_' prefix."""
    flat = {}
    for report in reports:
        prefix = 'bg_' if report.background_included else ''
        for k in sorted(report.recall_at):
            flat[f'{prefix}R@{k}'] = report.recall_at[k]
            flat[f'{prefix}mR@{k}'] = report.mean_recall_at[k]
            flat[f'{prefix}MR@{k}'] = report.mr_at[k]
    return flat


# generate

def cmd_generate(cfg: ExperimentConfig, out_dir: PathLike) -> Dict[str, Path]:
    out = Path(out_dir)
    train_ds, test_ds = generate_splits(cfg)
    paths = {
        'train': save_dataset(train_ds, out / 'train.jsonl'),
        'test': save_dataset(test_ds, out / 'test.jsonl'),
        'config': dump_experiment_config(cfg, out / 'config.yaml'),
    }
    K = cfg.synth.num_relation_classes
    histogram = pd.DataFrame({
        'label': list(range(K + 1)),
        'name': [f'rel_{k}' for k in range(K)] + ['background'],
        'train_count': relation_histogram(train_ds),
        'test_count': relation_histogram(test_ds),
    })
    paths['histogram'] = out / 'histogram.csv'
    histogram.to_csv(paths['histogram'], index=False)
    cooccurrence = pd.DataFrame(cooccurrence_matrix(train_ds),
                                index=[f'rel_{k}' for k in range(K)], columns=[f'rel_{k}' for k in range(K)])
    paths['cooccurrence'] = out / 'cooccurrence.csv'
    cooccurrence.to_csv(paths['cooccurrence'], index_label='label')
    logger.info("generate: wrote %s", ', '.join(str(p) for p in paths.values()))
    return paths


# train / eval

def load_splits(data_dir: PathLike) -> Tuple[Dataset, Dataset]:
    data_dir = Path(data_dir)
    if not (data_dir / 'train.jsonl').exists():
        raise DataError(f"no dataset in {data_dir}; run the generate command first")
    return load_dataset(data_dir / 'train.jsonl'), load_dataset(data_dir / 'test.jsonl')


def cmd_train(cfg: ExperimentConfig, out_dir: PathLike, data_dir: Optional[PathLike] = None) -> RunReport:
    out = Path(out_dir)
    train_ds, test_ds = load_splits(data_dir or out)
    if train_ds.config != cfg.synth:
        logger.warning("dataset in %s was generated from a different synth config", data_dir or out)
    digest = config_hash(cfg)

    plan_path = out / 'plan_log.jsonl' if cfg.train.sampler == 'are' else None
    with PlanLog(plan_path) as plan_log:
        outcome = train_and_evaluate(cfg, train_ds, test_ds, plan_log=plan_log)

    summary = {
        'final_loss': outcome.history.epoch_losses[-1],
        'final_train_accuracy': outcome.history.epoch_accuracy[-1],
        'batch_class_cv': batch_class_cv(outcome.history.class_counts),
        'added_instances': int(sum(outcome.history.added_counts)),
    }
    if plan_path is not None:
        pool_sizes = build_query_set(train_ds, cfg.queryset).pool_sizes
        replay = replay_plan_log(plan_path, cfg.train.are, pool_sizes, train_ds.num_classes)
        summary['plan_replay_ok'] = replay.ok

    save_checkpoint(outcome.model, out / 'model.json', config_hash=digest)
    write_metrics_csv(outcome.reports, out / 'metrics.csv')
    write_json(outcome.history.to_dict(), out / 'history.json')
    dump_experiment_config(cfg, out / 'config.yaml')
    report = RunReport(
        config_hash=digest,
        seed=cfg.seed,
        command='train',
        metrics=[r.to_dict() for r in outcome.reports],
        diagnostics=outcome.diagnostics.to_dict(),
        plan_log_path=str(plan_path) if plan_path else None,
        output_dir=str(out),
        wall_time=outcome.wall_time,
        summary=summary,
    )
    write_json(report.to_dict(), out / 'run.json')
    logger.info("train (%s, seed %d): %s in %.1fs", cfg.train.sampler, cfg.seed,
                ', '.join(f'{k}={v:.4f}' for k, v in headline_metrics(outcome.reports).items()), outcome.wall_time)
    return report


def cmd_eval(cfg: ExperimentConfig, run_dir: PathLike, data_dir: Optional[PathLike] = None) -> List[MetricsReport]:
    run_dir = Path(run_dir)
    checkpoint = run_dir / 'model.json'
    if not checkpoint.exists():
        raise DataError(f"no checkpoint at {checkpoint}")
    model, digest = load_checkpoint(checkpoint)
    if digest is not None and digest != config_hash(cfg):
        logger.warning("checkpoint %s was trained under config %s, evaluating under %s",
                       checkpoint, digest[:12], config_hash(cfg)[:12])
    _, test_ds = load_splits(data_dir or run_dir)
    reports = evaluation_reports(model, test_ds, cfg)
    write_metrics_csv(reports, run_dir / 'eval_metrics.csv')
    return reports


# ablate

def cell_settings(cfg: ExperimentConfig) -> Dict:
    """The parameters a table row is conditioned on."""
    are = cfg.train.are
    return {
        'sampler': cfg.train.sampler,
        'pi': are.pi,
        'alpha': are.alpha,
        'lambda': are.lam,
        'kernel': are.kernel,
        'k_prime': cfg.queryset.k_prime,
        'target_fraction': cfg.queryset.target_fraction,
        'intervene_foreground': are.intervene_foreground,
        'intervene_background': are.intervene_background,
    }


def run_cell(payload: Dict) -> Dict:
    """One sweep cell: generate -> train -> evaluate, entirely in memory."""
    cfg = ExperimentConfig.from_dict(payload['config'])
    train_ds, test_ds = generate_splits(cfg)
    outcome = train_and_evaluate(cfg, train_ds, test_ds)
    return {
        'cell_id': payload['cell_id'],
        'sweep': payload['sweep'],
        'value': payload['value'],
        'seed': cfg.seed,
        'settings': cell_settings(cfg),
        'metrics': headline_metrics(outcome.reports),
        'batch_class_cv': batch_class_cv(outcome.history.class_counts),
        'wall_time': outcome.wall_time,
    }


def sweep_values(cfg: ExperimentConfig, sweep: str) -> List:
    values = list(cfg.sweeps[sweep])
    if sweep == 'kernel' and 'rnd' not in [resolve_kernel(v) for v in values]:
        values.append('rnd')
    return values


def build_cells(cfg: ExperimentConfig, sweep: str, values: Sequence) -> List[Dict]:
    cells = []
    for value in values:
        cell_cfg = apply_sweep_value(cfg, sweep, value)
        for repeat in range(cfg.repeats):
            seeded = cell_cfg.with_seed(cfg.seed + repeat)
            cells.append({
                'cell_id': f'{sweep}={value}/seed={seeded.seed}',
                'sweep': sweep,
                'value': value,
                'seed': seeded.seed,
                'config': seeded.to_dict(),
            })
    return cells


def dispatch_cells(cells: Sequence[Dict]) -> List[Dict]:
    """Run cells through the Celery task; results come back keyed by cell id, in cell order."""
    from .tasks import run_ablation_cell
    pending = {cell['cell_id']: run_ablation_cell.delay(cell) for cell in cells}
    results = {cell_id: result.get() for cell_id, result in pending.items()}
    return [results[cell['cell_id']] for cell in cells]


def summarize_cells(results: Sequence[Dict]) -> pd.DataFrame:
    """Mean and population std over seeds for every (sweep, value)."""
    rows = [
        {'sweep': r['sweep'], 'value': r['value'], 'seed': r['seed'], **r['settings'],
         **r['metrics'], 'batch_class_cv': r['batch_class_cv']}
        for r in results
    ]
    frame = pd.DataFrame(rows)
    setting_columns = list(results[0]['settings'])
    metric_columns = list(results[0]['metrics']) + ['batch_class_cv']
    grouped = frame.groupby(['sweep', 'value'], sort=False)
    table = grouped[setting_columns].first()
    table.insert(0, 'n_seeds', grouped.size())
    means = grouped[metric_columns].mean()
    stds = grouped[metric_columns].std(ddof=0)
    for column in metric_columns:
        table[f'{column}_mean'] = means[column]
        table[f'{column}_std'] = stds[column]
    return table.reset_index()


def best_value(table: pd.DataFrame, metric: str):
    return table.loc[table[f'{metric}_mean'].idxmax(), 'value']


def cmd_ablate(cfg: ExperimentConfig, out_dir: PathLike) -> Dict[str, Path]:
    """
    One-by-one sweeps in SWEEP_ORDER. With carry_best the best value of each
    sweep (by mean mR at the smallest K) is fixed for the sweeps after it.
    """
    if not cfg.sweeps:
        raise ConfigurationError("ablate needs at least one sweep in the config")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_experiment_config(cfg, out / 'config.yaml')
    target = f'mR@{min(cfg.eval_k_values)}'
    current = cfg
    tables = {}
    for sweep in SWEEP_ORDER:
        if sweep not in cfg.sweeps:
            continue
        cells = build_cells(current, sweep, sweep_values(current, sweep))
        results = dispatch_cells(cells)
        table = summarize_cells(results)
        tables[sweep] = out / f'ablation_{sweep}.csv'
        table.to_csv(tables[sweep], index=False)
        record_cells(results, sweep_id=f'{config_hash(cfg)[:12]}:{sweep}')
        logger.info("ablate: %s sweep over %s done (%d cells)", sweep, list(table['value']), len(cells))
        if cfg.carry_best:
            chosen = best_value(table, target)
            current = apply_sweep_value(current, sweep, chosen)
            logger.info("ablate: fixing %s=%s for the following sweeps", sweep, chosen)
    return tables


# persistence

def record_run(report: RunReport):
    """Store a RunRecord row; a database problem never fails the run."""
    from .models import RunRecord
    try:
        return RunRecord.objects.create(
            config_hash=report.config_hash,
            seed=report.seed,
            command=report.command,
            metrics=_json_safe(report.metrics),
            diagnostics=_json_safe(report.diagnostics),
            plan_log_path=report.plan_log_path or '',
            output_dir=report.output_dir or '',
            wall_time=report.wall_time,
        )
    except Exception as exc:
        logger.warning("run record not persisted: %s", exc)
        return None


def record_cells(results: Sequence[Dict], sweep_id: str) -> int:
    from .models import AblationCell
    try:
        AblationCell.objects.bulk_create([
            AblationCell(
                sweep_id=sweep_id,
                sweep=r['sweep'],
                value=str(r['value']),
                seed=r['seed'],
                fixed_context=_json_safe(r['settings']),
                metrics=_json_safe(r['metrics']),
            )
            for r in results
        ])
        return len(results)
    except Exception as exc:
        logger.warning("ablation cells not persisted: %s", exc)
        return 0


def _json_safe(value):
    """Non-finite floats become strings so every database backend accepts the JSON."""
    if isinstance(value, float) and not np.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value
