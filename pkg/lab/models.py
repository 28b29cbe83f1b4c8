# lab/models.py - LEDGER OF EXPERIMENT RUNS
from django.db import models
from django.utils import timezone


class ExperimentRun(models.Model):
    """One invocation of the run pipeline, standalone or inside a sweep"""
    STATUS_CHOICES = [
        ('passed', 'All verdicts passed'),
        ('verdict_failed', 'Verdict failed'),
        ('refused', 'Inadmissible or invalid input'),
        ('numeric_failure', 'Numeric failure'),
        ('dry_run', 'Dry run'),
    ]

    created_at = models.DateTimeField(default=timezone.now)
    name = models.CharField(max_length=200)
    config = models.JSONField(default=dict, blank=True)
    output_dir = models.CharField(max_length=500, blank=True)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES)
    exit_code = models.IntegerField(default=0)

    y0 = models.FloatField(null=True, blank=True, help_text="Nearest wave singularity height (physical units)")
    omega = models.FloatField(null=True, blank=True, help_text="Measured spectral gap")
    fitted_M = models.FloatField(null=True, blank=True)
    fitted_Tstar = models.FloatField(null=True, blank=True)
    t_star = models.FloatField(null=True, blank=True, help_text="Waiting time from the Picard trials")
    sigma_hat = models.FloatField(null=True, blank=True)

    message = models.TextField(blank=True)
    duration_seconds = models.FloatField(default=0.0)
    sweep_axis = models.CharField(max_length=50, blank=True)
    sweep_value = models.FloatField(null=True, blank=True)

    class Meta:
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.name} [{self.status}]"

    @property
    def passed(self):
        return self.status == 'passed'
