"""
Shared plumbing of the simulator management commands: --config / --seed /
--out / --set flags, config loading, and the mapping of simulator errors to
process exit codes (1 config error, 2 data error, 3 verification failure).
"""
import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from core.exceptions import SimulationError
from harness.config import ExperimentConfig, load_experiment_config

logger = logging.getLogger(__name__)


class ExperimentCommand(BaseCommand):

    def add_arguments(self, parser):
        parser.add_argument('--config', help="Experiment YAML (default: settings.SIM_DEFAULT_CONFIG)")
        parser.add_argument('--seed', type=int, help="Root seed; overrides synth.seed and train.seed")
        parser.add_argument('--out', help="Output directory (default: output_dir from the config, else SIM_OUTPUT_DIR)")
        parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                            help="Override one config key, e.g. --set train.are.pi=1.0 (repeatable)")

    def load_config(self, options) -> ExperimentConfig:
        path = options.get('config')
        if path is None and Path(settings.SIM_DEFAULT_CONFIG).exists():
            path = settings.SIM_DEFAULT_CONFIG
        return load_experiment_config(path, options.get('overrides') or [], seed=options.get('seed'))

    def output_dir(self, cfg: ExperimentConfig, options) -> Path:
        out = Path(options.get('out') or cfg.output_dir or settings.SIM_OUTPUT_DIR)
        out.mkdir(parents=True, exist_ok=True)
        return out

    def handle(self, *args, **options):
        try:
            cfg = self.load_config(options)
            forwarded = {key: value for key, value in options.items() if key != 'out'}
            self.run(cfg, self.output_dir(cfg, options), **forwarded)
        except SimulationError as exc:
            raise CommandError(str(exc), returncode=exc.exit_code) from exc

    def run(self, cfg: ExperimentConfig, out: Path, **options):
        raise NotImplementedError
