"""
JSON Lines persistence for generated worlds.

One line per relationship instance, in instance-id order:
{"scene_id": 3, "subj": 1, "obj": 4, "label": 2, "feature": [...]}
A sidecar JSON file carries the generating config and scene clusters so the
world's generative parameters can be rebuilt on load.
"""
import json
import logging
from pathlib import Path
from typing import Union

from core.exceptions import DataError
from .world import Dataset, SynthConfig, build_dataset

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.stem + '.meta.json')


def save_dataset(ds: Dataset, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w') as handle:
        for instance in ds.instances:
            handle.write(json.dumps({
                'scene_id': instance.scene_id,
                'subj': instance.subject_class,
                'obj': instance.object_class,
                'label': instance.relation_label,
                'feature': [float(v) for v in instance.feature],
            }) + '\n')
    meta = {
        'config': ds.config.to_dict(),
        'split': ds.split,
        'scene_clusters': {str(s.scene_id): s.cluster_id for s in ds.scenes},
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2))
    logger.info("wrote %d instances to %s", len(ds), path)
    return path


def load_dataset(path: PathLike) -> Dataset:
    path = Path(path)
    meta_path = sidecar_path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    if not meta_path.exists():
        raise DataError(f"dataset sidecar not found: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
        config = SynthConfig.from_dict(meta['config'])
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"unreadable dataset sidecar {meta_path}: {exc}") from exc

    rows = []
    with path.open() as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                rows.append((record['scene_id'], record['subj'], record['obj'], record['label'], record['feature']))
            except (ValueError, KeyError) as exc:
                raise DataError(f"{path}:{line_no}: malformed record ({exc})") from exc
    clusters = {int(k): int(v) for k, v in meta.get('scene_clusters', {}).items()}
    return build_dataset(config, rows, split=meta.get('split', 'train'), scene_clusters=clusters)
