"""
JSON Lines audit trail of batch plans, one record per training batch:
{"t": epoch, "b": batch, "losses": {...}, "probs": {...}, "add_counts": {...},
 "bg_budget": int or null, "fg_in_batch": int}
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from core.exceptions import DataError
from .estimation import AreConfig, ClassLossTracker, SamplingPlan, background_budget, query_distribution, sampling_sizes

logger = logging.getLogger(__name__)


def plan_record(t: int, b: int, plan: SamplingPlan) -> Dict:
    return {
        't': int(t),
        'b': int(b),
        'losses': {str(k): float(v) for k, v in sorted(plan.losses.items())},
        'probs': {str(k): float(v) for k, v in sorted(plan.probs.items())},
        'add_counts': {str(k): int(v) for k, v in sorted(plan.add_counts.items())},
        'bg_budget': plan.bg_budget,
        'fg_in_batch': int(plan.fg_in_batch),
    }


class PlanLog:
    """Collects plan records in memory and, when given a path, streams them to disk."""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path else None
        self.records: List[Dict] = []
        self._handle = None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = self.path.open('w')

    def record(self, t: int, b: int, plan: SamplingPlan) -> Dict:
        entry = plan_record(t, b, plan)
        self.records.append(entry)
        if self._handle:
            self._handle.write(json.dumps(entry) + '\n')
        return entry

    def close(self):
        if self._handle:
            self._handle.close()
            self._handle = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_plan_log(path: Union[str, Path]) -> List[Dict]:
    records = []
    with Path(path).open() as handle:
        for line_no, line in enumerate(handle, start=1):
            if line.strip():
                try:
                    records.append(json.loads(line))
                except ValueError as exc:
                    raise DataError(f"{path}:{line_no}: malformed plan record ({exc})") from exc
    return records


@dataclass
class ReplayReport:
    records: int
    mismatches: List[Tuple[int, int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches


def replay_plan_log(records: Union[str, Path, Iterable[Dict]], cfg: AreConfig,
                    pool_sizes: Dict[int, int], num_classes: int) -> ReplayReport:
    """
    Recompute every plan from the losses it was made from. The first plan of
    the run must come from the initial losses, so nothing from the batch it
    composes can have leaked into it.
    """
    if isinstance(records, (str, Path)):
        records = read_plan_log(records)
    records = list(records)
    report = ReplayReport(records=len(records))
    pi = cfg.pi if cfg.intervene_background else math.inf
    for index, entry in enumerate(records):
        where = (entry['t'], entry['b'])
        losses = {int(k): float(v) for k, v in entry['losses'].items()}
        tracker = ClassLossTracker(losses=losses)
        if index == 0:
            fresh = ClassLossTracker.fresh(losses, num_classes, cfg.loss_init)
            if fresh.losses != losses:
                report.mismatches.append((*where, 'first plan does not start from the initial losses'))
        probs = query_distribution(tracker, cfg.alpha)
        if not np.array_equal(probs, [entry['probs'][str(k)] for k in tracker.classes]):
            report.mismatches.append((*where, 'probs'))
        if cfg.intervene_foreground:
            counts = sampling_sizes(probs, cfg.lam, [pool_sizes[k] for k in tracker.classes])
        else:
            counts = np.zeros(len(tracker.classes), dtype=np.int64)
        if [int(c) for c in counts] != [entry['add_counts'][str(k)] for k in tracker.classes]:
            report.mismatches.append((*where, 'add_counts'))
        if background_budget(counts, entry['fg_in_batch'], pi) != entry['bg_budget']:
            report.mismatches.append((*where, 'bg_budget'))
    if report.mismatches:
        logger.warning("plan log replay found %d mismatches", len(report.mismatches))
    return report
