import json

from harness.management.base import ExperimentCommand
from harness.verification import CHECKS, run_checks


class Command(ExperimentCommand):
    help = "Run verification checks and write verdict JSON files; exits 3 when a check fails"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('checks', nargs='+', choices=[*CHECKS, 'all'])

    def run(self, cfg, out, **options):
        for result in run_checks(options['checks'], cfg, out_dir=out):
            self.stdout.write(json.dumps(result.to_dict()))
