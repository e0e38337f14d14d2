from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='AblationCell',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('sweep_id', models.CharField(db_index=True, max_length=100)),
                ('sweep', models.CharField(max_length=20)),
                ('value', models.CharField(max_length=50)),
                ('seed', models.IntegerField()),
                ('fixed_context', models.JSONField(default=dict, help_text='Every other parameter the cell ran with')),
                ('metrics', models.JSONField(default=dict)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['sweep_id', 'sweep', 'value', 'seed'],
            },
        ),
        migrations.CreateModel(
            name='RunRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('config_hash', models.CharField(db_index=True, max_length=64)),
                ('seed', models.IntegerField()),
                ('command', models.CharField(default='train', max_length=20)),
                ('metrics', models.JSONField(default=list, help_text='MetricsReport dicts (masked and/or background-included)')),
                ('diagnostics', models.JSONField(blank=True, default=dict)),
                ('plan_log_path', models.CharField(blank=True, max_length=500)),
                ('output_dir', models.CharField(blank=True, max_length=500)),
                ('wall_time', models.FloatField(help_text='Seconds spent training and evaluating')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['-created_at'],
                'indexes': [models.Index(fields=['config_hash', 'seed'], name='harness_run_hash_seed_idx')],
            },
        ),
    ]
