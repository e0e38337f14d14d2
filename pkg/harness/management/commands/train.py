from harness.experiments import cmd_train, record_run
from harness.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Train a classifier on a generated world and evaluate it on the test split"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--data', help="Directory holding train.jsonl/test.jsonl (default: the output directory)")

    def run(self, cfg, out, **options):
        report = cmd_train(cfg, out, data_dir=options.get('data'))
        record_run(report)
        for metrics in report.metrics:
            label = 'background included' if metrics['background_included'] else 'masked'
            summary = ', '.join(
                f"R@{k}={metrics['recall_at'][k]:.4f} mR@{k}={metrics['mean_recall_at'][k]:.4f}"
                for k in metrics['recall_at']
            )
            self.stdout.write(f"{label}: {summary}")
        self.stdout.write(self.style.SUCCESS(f"run {report.config_hash[:12]} seed={report.seed} -> {out}"))
