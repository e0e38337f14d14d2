from harness.experiments import cmd_ablate
from harness.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Run the configured one-by-one parameter sweeps and write mean/std tables"

    def run(self, cfg, out, **options):
        for sweep, path in cmd_ablate(cfg, out).items():
            self.stdout.write(f"{sweep}: {path}")
