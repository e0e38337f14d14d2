"""
Scene-level recall metrics.

Within a scene every relationship is scored by its top class confidence and
ranked; a foreground relationship is recalled at K when it ranks in the top K
and its predicted class is its label. With the background column masked the
prediction is restricted to foreground classes.
"""
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

import numpy as np
import pandas as pd

from classifier.model import SoftmaxModel, forward
from core.exceptions import InputError
from synthworld.world import Dataset

logger = logging.getLogger(__name__)

DEFAULT_K_VALUES = (20, 50, 100)


@dataclass
class MetricsReport:
    recall_at: Dict[int, float]
    mean_recall_at: Dict[int, float]
    mr_at: Dict[int, float]
    # K value -> class -> recall
    per_class_recall: Dict[int, Dict[int, float]]
    background_included: bool
    n_scenes: int
    label: str = ''

    def rows(self) -> List[Dict]:
        """One flat row per K value."""
        return [
            {
                'label': self.label,
                'k': k,
                'background_included': self.background_included,
                'R': self.recall_at[k],
                'mR': self.mean_recall_at[k],
                'MR': self.mr_at[k],
                'n_scenes': self.n_scenes,
                **{f'recall_class_{c}': r for c, r in sorted(self.per_class_recall[k].items())},
            }
            for k in sorted(self.recall_at)
        ]

    def to_dict(self) -> Dict:
        payload = asdict(self)
        payload['per_class_recall'] = {
            str(k): {str(c): r for c, r in v.items()} for k, v in self.per_class_recall.items()
        }
        for name in ('recall_at', 'mean_recall_at', 'mr_at'):
            payload[name] = {str(k): v for k, v in payload[name].items()}
        return payload


def scene_ranks(confidence: np.ndarray, scene_index: np.ndarray, instance_ids: np.ndarray) -> np.ndarray:
    """0-based rank of every instance inside its scene: confidence descending, ties by id."""
    order = np.lexsort((instance_ids, -confidence, scene_index))
    ranks = np.empty(len(order), dtype=np.int64)
    sorted_scenes = scene_index[order]
    starts = np.r_[0, np.flatnonzero(np.diff(sorted_scenes)) + 1]
    positions = np.arange(len(order))
    scene_start = np.repeat(starts, np.diff(np.r_[starts, len(order)]))
    ranks[order] = positions - scene_start
    return ranks


def evaluate(model: SoftmaxModel, ds: Dataset, k_values: Sequence[int] = DEFAULT_K_VALUES,
             include_background: bool = False, label: str = '') -> MetricsReport:
    K = ds.num_classes
    labels = ds.labels
    foreground = labels < K
    if not len(ds) or not foreground.any():
        raise InputError("evaluation split holds no foreground relationships")
    probs = forward(model, ds.features)
    candidates = probs if include_background else probs[:, :K]
    predicted = np.argmax(candidates, axis=1)
    confidence = candidates.max(axis=1)
    ids = np.array([i.instance_id for i in ds.instances], dtype=np.int64)
    ranks = scene_ranks(confidence, ds.scene_index, ids)
    correct = foreground & (predicted == labels)
    present = [k for k in range(K) if np.any(labels == k)]

    recall_at, mean_recall_at, mr_at, per_class = {}, {}, {}, {}
    for k_value in sorted(int(k) for k in k_values):
        recalled = correct & (ranks < k_value)
        recall = float(recalled.sum() / foreground.sum())
        class_recall = {c: float(recalled[labels == c].sum() / np.sum(labels == c)) for c in present}
        mean_recall = float(np.mean(list(class_recall.values())))
        recall_at[k_value] = recall
        mean_recall_at[k_value] = mean_recall
        mr_at[k_value] = (recall + mean_recall) / 2
        per_class[k_value] = class_recall
    return MetricsReport(
        recall_at=recall_at,
        mean_recall_at=mean_recall_at,
        mr_at=mr_at,
        per_class_recall=per_class,
        background_included=include_background,
        n_scenes=len(ds.scenes),
        label=label,
    )


def mean_logits(model: SoftmaxModel, ds: Dataset) -> np.ndarray:
    """Average output logits per ground-truth foreground class; rows of absent classes are NaN."""
    K = ds.num_classes
    logits = model.logits(ds.features)
    table = np.full((K, model.num_outputs), np.nan)
    for k in range(K):
        mask = ds.labels == k
        if mask.any():
            table[k] = logits[mask].mean(axis=0)
    return table


def write_metrics_csv(reports: Iterable[MetricsReport], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([row for report in reports for row in report.rows()])
    frame.to_csv(path, index=False)
    return path


def write_json(payload, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, default=float))
    return path
