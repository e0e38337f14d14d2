from harness.experiments import cmd_eval
from harness.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Evaluate a trained checkpoint on the test split, masked and background-included"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--run', help="Run directory with model.json (default: the output directory)")
        parser.add_argument('--data', help="Directory holding test.jsonl (default: the run directory)")

    def run(self, cfg, out, **options):
        reports = cmd_eval(cfg, options.get('run') or out, data_dir=options.get('data'))
        for report in reports:
            for row in report.rows():
                self.stdout.write(f"{report.label} K={row['k']}: R={row['R']:.4f} mR={row['mR']:.4f} MR={row['MR']:.4f}")
