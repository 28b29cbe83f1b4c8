# Generated by Django 5.2.6 on 2025-10-20 09:30

import django.utils.timezone
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('created_at', models.DateTimeField(default=django.utils.timezone.now)),
                ('name', models.CharField(max_length=200)),
                ('config', models.JSONField(blank=True, default=dict)),
                ('output_dir', models.CharField(blank=True, max_length=500)),
                ('status', models.CharField(choices=[('passed', 'All verdicts passed'), ('verdict_failed', 'Verdict failed'), ('refused', 'Inadmissible or invalid input'), ('numeric_failure', 'Numeric failure'), ('dry_run', 'Dry run')], max_length=20)),
                ('exit_code', models.IntegerField(default=0)),
                ('y0', models.FloatField(blank=True, help_text='Nearest wave singularity height (physical units)', null=True)),
                ('omega', models.FloatField(blank=True, help_text='Measured spectral gap', null=True)),
                ('fitted_M', models.FloatField(blank=True, null=True)),
                ('fitted_Tstar', models.FloatField(blank=True, null=True)),
                ('t_star', models.FloatField(blank=True, help_text='Waiting time from the Picard trials', null=True)),
                ('sigma_hat', models.FloatField(blank=True, null=True)),
                ('message', models.TextField(blank=True)),
                ('duration_seconds', models.FloatField(default=0.0)),
                ('sweep_axis', models.CharField(blank=True, max_length=50)),
                ('sweep_value', models.FloatField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
    ]
