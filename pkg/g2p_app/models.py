from django.db import models


class ExperimentRun(models.Model):
    MODE_CHOICES = [
        ('baseline', 'Baseline Transformer'),
        ('nat', 'Robust (natural noise)'),
        ('syn', 'Robust (synthetic noise)'),
        ('adv', 'Robust (adversarial)'),
        ('robust', 'Robust (clean two-step)'),
    ]

    STATUS_CHOICES = [
        ('running', 'Running'),
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ]

    run_dir = models.CharField(
        max_length=500,
        unique=True,
        help_text="Run directory holding config, checkpoints and metrics"
    )
    mode = models.CharField(max_length=20, choices=MODE_CHOICES, default='robust')
    seed = models.BigIntegerField(default=0)
    config = models.JSONField(default=dict, help_text="Fully resolved run configuration")
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='running')
    error = models.TextField(blank=True)
    sweep = models.CharField(
        max_length=200,
        blank=True,
        help_text="Sweep name when the run is one grid point"
    )
    started_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-started_at']

    def __str__(self):
        return f"{self.mode} run {self.run_dir} ({self.status})"


class EpochMetric(models.Model):
    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name='epochs')
    stage = models.PositiveSmallIntegerField()
    epoch = models.PositiveIntegerField()
    split = models.CharField(max_length=20, default='train')
    loss = models.FloatField(null=True, blank=True)
    adversarial_loss = models.FloatField(null=True, blank=True)
    dev_per = models.FloatField(null=True, blank=True)
    dev_wer = models.FloatField(null=True, blank=True)
    steps = models.PositiveIntegerField(default=0)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['run', 'stage', 'epoch']
        unique_together = ['run', 'stage', 'epoch', 'split']

    def __str__(self):
        return f"{self.run_id} stage {self.stage} epoch {self.epoch}: {self.loss}"


class EvaluationRecord(models.Model):
    run = models.ForeignKey(
        ExperimentRun,
        on_delete=models.SET_NULL,
        null=True,
        blank=True,
        related_name='evaluations'
    )
    checkpoint = models.CharField(max_length=500)
    testset = models.CharField(max_length=500)
    report_path = models.CharField(max_length=500, blank=True)
    per = models.FloatField()
    wer = models.FloatField()
    total_words = models.PositiveIntegerField(default=0)
    counts = models.JSONField(default=dict, help_text="Failure category histogram")
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.testset}: PER {self.per:.2f} / WER {self.wer:.2f}"
