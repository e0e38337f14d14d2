from django.db import models


class RunRecord(models.Model):
    """
    One finished train run. The config hash plus the seed reproduce it.
    """
    config_hash = models.CharField(max_length=64, db_index=True)
    seed = models.IntegerField()
    command = models.CharField(max_length=20, default='train')

    metrics = models.JSONField(default=list, help_text="MetricsReport dicts (masked and/or background-included)")
    diagnostics = models.JSONField(default=dict, blank=True)

    plan_log_path = models.CharField(max_length=500, blank=True)
    output_dir = models.CharField(max_length=500, blank=True)
    wall_time = models.FloatField(help_text="Seconds spent training and evaluating")

    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['-created_at']
        indexes = [models.Index(fields=['config_hash', 'seed'], name='harness_run_hash_seed_idx')]

    def __str__(self):
        return f"{self.command} {self.config_hash[:12]} seed={self.seed}"


class AblationCell(models.Model):
    """
    One (sweep value, seed) cell of an ablation sweep.
    """
    sweep_id = models.CharField(max_length=100, db_index=True)
    sweep = models.CharField(max_length=20)
    value = models.CharField(max_length=50)
    seed = models.IntegerField()

    fixed_context = models.JSONField(default=dict, help_text="Every other parameter the cell ran with")
    metrics = models.JSONField(default=dict)

    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['sweep_id', 'sweep', 'value', 'seed']

    def __str__(self):
        return f"{self.sweep}={self.value} seed={self.seed}"
