from harness.experiments import cmd_generate
from harness.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Generate the train and test splits of the synthetic world plus label statistics"

    def run(self, cfg, out, **options):
        paths = cmd_generate(cfg, out)
        for name, path in paths.items():
            self.stdout.write(f"{name}: {path}")
