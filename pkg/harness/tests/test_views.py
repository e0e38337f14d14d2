from django.test import TestCase

from harness.experiments import RunReport, record_cells, record_run
from harness.models import AblationCell, RunRecord


class RunViewsTestCase(TestCase):
    """JSON views over recorded runs."""

    def setUp(self):
        self.first = RunRecord.objects.create(config_hash='a' * 64, seed=0, metrics=[{'R': 0.5}], wall_time=1.5)
        self.second = RunRecord.objects.create(config_hash='b' * 64, seed=1, wall_time=2.0)

    def test_run_list(self):
        response = self.client.get('/runs/')
        self.assertEqual(response.status_code, 200)
        ids = {run['id'] for run in response.json()['runs']}
        self.assertEqual(ids, {self.first.id, self.second.id})
        self.assertNotIn('metrics', response.json()['runs'][0])

    def test_run_list_filters_by_hash(self):
        response = self.client.get('/runs/', {'config_hash': 'a' * 64})
        self.assertEqual([run['id'] for run in response.json()['runs']], [self.first.id])

    def test_run_detail(self):
        response = self.client.get(f'/runs/{self.first.id}/')
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.json()['metrics'], [{'R': 0.5}])

    def test_missing_run(self):
        self.assertEqual(self.client.get('/runs/999999/').status_code, 404)


class RecordingTestCase(TestCase):

    def test_non_finite_values_are_stored_as_strings(self):
        report = RunReport(config_hash='c' * 64, seed=3, command='train', metrics=[{'rho': float('nan')}],
                           diagnostics={'grad_cosine': float('inf')}, plan_log_path=None, output_dir=None,
                           wall_time=0.1)
        record = record_run(report)
        record.refresh_from_db()
        self.assertEqual(record.metrics, [{'rho': 'nan'}])
        self.assertEqual(record.diagnostics, {'grad_cosine': 'inf'})
        self.assertEqual(record.plan_log_path, '')

    def test_cells_are_grouped_by_sweep_id(self):
        results = [
            {'sweep': 'pi', 'value': float('inf'), 'seed': s, 'settings': {'pi': float('inf')}, 'metrics': {'mR@20': 0.1}}
            for s in (0, 1)
        ]
        self.assertEqual(record_cells(results, sweep_id='abc:pi'), 2)
        self.assertEqual(list(AblationCell.objects.filter(sweep_id='abc:pi').values_list('value', flat=True)),
                         ['inf', 'inf'])
        self.assertEqual(AblationCell.objects.first().fixed_context, {'pi': 'inf'})
