"""
Experiment configuration.

An experiment is one YAML file (see configs/) with the sections synth,
queryset, train, eval_k_values, sweeps, repeats, output_dir, delta and verify.
Individual keys can be overridden from the command line with
--set train.are.pi=1.0; values are parsed with YAML scalar rules, so
`.inf`, `true` and `[1, 2]` all work.
"""
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

import yaml
from django.conf import settings

from classifier.training import TrainConfig
from core.exceptions import ConfigurationError
from metrics.evaluation import DEFAULT_K_VALUES
from mis.kernels import resolve_kernel
from queryset.pools import QuerySetConfig
from synthworld.world import SynthConfig

logger = logging.getLogger(__name__)

# One-by-one tuning order of the ablation sweeps
SWEEP_ORDER = ('pi', 'k_prime', 'alpha', 'kernel', 'components')

# Core-component ablation: which parts of the composition are switched on
COMPONENT_VARIANTS = {
    'baseline': None,
    'bg': dict(intervene_background=True, intervene_foreground=False),
    'bg+fg': dict(intervene_background=True, intervene_foreground=True, kernel='rnd'),
    'bg+fg+mis': dict(intervene_background=True, intervene_foreground=True, kernel='mis'),
}


@dataclass(frozen=True)
class VerifyConfig:
    """Sample sizes of the verification checks."""
    seeds: int = 10
    sign_test_seeds: int = 20
    rho_samples: int = 100_000
    trials: int = 100
    witness_batches: int = 1000
    oracle_max_types: int = 4
    oracle_max_count: int = 3
    toy_epochs: int = 100

    def validate(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ConfigurationError(f"verify.{f.name} must be positive")
        if self.rho_samples < 2:
            raise ConfigurationError("verify.rho_samples must be at least 2")


@dataclass(frozen=True)
class ExperimentConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    queryset: QuerySetConfig = field(default_factory=QuerySetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_k_values: Tuple[int, ...] = DEFAULT_K_VALUES
    # sweep name -> values, applied one by one in SWEEP_ORDER
    sweeps: Dict[str, Tuple] = field(default_factory=dict)
    repeats: int = 1
    # None resolves to settings.SIM_OUTPUT_DIR
    output_dir: Optional[str] = None
    delta: float = 0.1
    carry_best: bool = False
    verify: VerifyConfig = field(default_factory=VerifyConfig)

    def validate(self):
        self.synth.validate()
        self.train_config().validate()
        self.queryset.validate(self.synth.num_relation_classes)
        if self.repeats < 1:
            raise ConfigurationError(f"repeats must be at least 1, got {self.repeats}")
        if not self.eval_k_values or min(self.eval_k_values) < 1:
            raise ConfigurationError("eval_k_values must be positive integers")
        if not self.delta >= 0:
            raise ConfigurationError(f"delta must be nonnegative, got {self.delta}")
        self.verify.validate()
        for name, values in self.sweeps.items():
            if name not in SWEEP_ORDER:
                raise ConfigurationError(f"unknown sweep '{name}', expected one of {SWEEP_ORDER}")
            if not values:
                raise ConfigurationError(f"sweep '{name}' has no values")
            for value in values:
                apply_sweep_value(self, name, value).train_config().validate()
                if name == 'k_prime':
                    apply_sweep_value(self, name, value).queryset.validate(self.synth.num_relation_classes)

    def train_config(self) -> TrainConfig:
        """The training config with the experiment-level query set folded in."""
        return replace(self.train, queryset=self.queryset)

    def with_seed(self, seed: int) -> 'ExperimentConfig':
        return replace(self, synth=replace(self.synth, seed=int(seed)), train=replace(self.train, seed=int(seed)))

    @property
    def seed(self) -> int:
        return self.train.seed

    def to_dict(self) -> Dict:
        train = self.train.to_dict()
        train.pop('queryset')
        return {
            'synth': self.synth.to_dict(),
            'queryset': self.queryset.to_dict(),
            'train': train,
            'eval_k_values': list(self.eval_k_values),
            'sweeps': {name: list(values) for name, values in self.sweeps.items()},
            'repeats': self.repeats,
            'output_dir': self.output_dir,
            'delta': self.delta,
            'carry_best': self.carry_best,
            'verify': {f.name: getattr(self.verify, f.name) for f in fields(VerifyConfig)},
        }

    @classmethod
    def from_dict(cls, payload: Optional[Dict]) -> 'ExperimentConfig':
        payload = dict(payload or {})
        unknown = set(payload) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown experiment keys: {sorted(unknown)}")
        train = dict(payload.pop('train', None) or {})
        if 'queryset' in train:
            raise ConfigurationError("queryset is configured at the top level, not under train")
        queryset = QuerySetConfig.from_dict(payload.pop('queryset', None))
        verify = dict(payload.pop('verify', None) or {})
        unknown = set(verify) - {f.name for f in fields(VerifyConfig)}
        if unknown:
            raise ConfigurationError(f"unknown verify keys: {sorted(unknown)}")
        try:
            return cls(
                synth=SynthConfig.from_dict(payload.pop('synth', None)),
                queryset=queryset,
                train=TrainConfig.from_dict({**train, 'queryset': queryset.to_dict()}),
                eval_k_values=tuple(int(k) for k in payload.pop('eval_k_values', DEFAULT_K_VALUES)),
                sweeps={name: tuple(values or ()) for name, values in (payload.pop('sweeps', None) or {}).items()},
                verify=VerifyConfig(**verify),
                **payload,
            )
        except TypeError as exc:
            raise ConfigurationError(f"malformed experiment config: {exc}") from exc


def apply_sweep_value(cfg: ExperimentConfig, sweep: str, value: Any) -> ExperimentConfig:
    """Config of one sweep cell. Every sweep except components turns the 'are' sampler on."""
    train, are, queryset = cfg.train, cfg.train.are, cfg.queryset
    if sweep == 'pi':
        are = replace(are, pi=float(value))
    elif sweep == 'alpha':
        are = replace(are, alpha=float(value))
    elif sweep == 'k_prime':
        queryset = replace(queryset, k_prime=int(value), selection_mode='explicit_k')
    elif sweep == 'kernel':
        resolve_kernel(str(value))
        are = replace(are, kernel=str(value))
    elif sweep == 'components':
        if value not in COMPONENT_VARIANTS:
            raise ConfigurationError(f"unknown component variant '{value}', expected one of {list(COMPONENT_VARIANTS)}")
        switches = COMPONENT_VARIANTS[value]
        if switches is None:
            return replace(cfg, train=replace(train, sampler='baseline'))
        are = replace(are, **switches)
    else:
        raise ConfigurationError(f"unknown sweep '{sweep}'")
    return replace(cfg, train=replace(train, sampler='are', are=are), queryset=queryset)


def _set_path(payload: Dict, dotted: str, value: Any):
    keys = dotted.split('.')
    node = payload
    for key in keys[:-1]:
        child = node.get(key)
        if child is None:
            child = node[key] = {}
        elif not isinstance(child, dict):
            raise ConfigurationError(f"cannot set '{dotted}': '{key}' is not a section")
        node = child
    node[keys[-1]] = value


def apply_overrides(payload: Dict, overrides: Iterable[str]) -> Dict:
    """Apply key.path=value strings to a raw config mapping, in order."""
    for item in overrides or ():
        key, sep, raw = item.partition('=')
        if not sep or not key.strip():
            raise ConfigurationError(f"override '{item}' is not of the form key.path=value")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"override '{item}' has an unparsable value") from exc
        _set_path(payload, key.strip(), value)
    return payload


def load_experiment_config(path: Optional[Union[str, Path]] = None, overrides: Iterable[str] = (),
                           seed: Optional[int] = None) -> ExperimentConfig:
    """Read a YAML experiment file, apply overrides and an optional seed, validate."""
    payload: Dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            payload = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: invalid YAML ({exc})") from exc
        if not isinstance(payload, dict):
            raise ConfigurationError(f"{path}: top level must be a mapping")
    payload = apply_overrides(payload, overrides)
    payload.setdefault('delta', settings.SIM_ORACLE_DELTA)
    cfg = ExperimentConfig.from_dict(payload)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    cfg.validate()
    logger.info("loaded experiment config %s (hash %s)", path or '<defaults>', config_hash(cfg)[:12])
    return cfg


def _canonical(value):
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {str(k): _canonical(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    return value


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical (sorted-key) JSON of the resolved config."""
    text = json.dumps(_canonical(cfg.to_dict()), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def dump_experiment_config(cfg: ExperimentConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
    return path
