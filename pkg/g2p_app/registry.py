"""Experiment registry writes.

The run directory is the source of truth; registry failures are logged and never
abort a computation.
"""
import logging

from django.db import DatabaseError
from django.utils import timezone

from .models import EpochMetric, EvaluationRecord, ExperimentRun

logger = logging.getLogger(__name__)


def register_run(run_dir, mode, seed, config, sweep=''):
    try:
        run, _ = ExperimentRun.objects.update_or_create(
            run_dir=str(run_dir),
            defaults={
                'mode': mode,
                'seed': seed,
                'config': config,
                'status': 'running',
                'error': '',
                'sweep': sweep,
                'finished_at': None,
            },
        )
        return run
    except DatabaseError as e:
        logger.error(f"Registry unavailable, run {run_dir} not recorded: {str(e)}")
        return None


def record_epoch(run, record):
    if run is None:
        return None
    try:
        metric, _ = EpochMetric.objects.update_or_create(
            run=run,
            stage=record['stage'],
            epoch=record['epoch'],
            split=record.get('split', 'train'),
            defaults={
                'loss': record.get('loss'),
                'adversarial_loss': record.get('adversarial_loss'),
                'dev_per': record.get('dev_per'),
                'dev_wer': record.get('dev_wer'),
                'steps': record.get('steps', 0),
            },
        )
        return metric
    except DatabaseError as e:
        logger.error(f"Failed to record epoch metrics for {run.run_dir}: {str(e)}")
        return None


def finish_run(run, status='completed', error=''):
    if run is None:
        return
    try:
        run.status = status
        run.error = error
        run.finished_at = timezone.now()
        run.save(update_fields=['status', 'error', 'finished_at'])
    except DatabaseError as e:
        logger.error(f"Failed to close registry run {run.run_dir}: {str(e)}")


def find_run(run_dir):
    try:
        return ExperimentRun.objects.filter(run_dir=str(run_dir)).first()
    except DatabaseError as e:
        logger.error(f"Registry lookup failed for {run_dir}: {str(e)}")
        return None


def record_evaluation(checkpoint, testset, report, report_path='', run=None):
    try:
        return EvaluationRecord.objects.create(
            run=run,
            checkpoint=str(checkpoint),
            testset=str(testset),
            report_path=str(report_path),
            per=report.per,
            wer=report.wer,
            total_words=report.total_words,
            counts=report.counts,
        )
    except DatabaseError as e:
        logger.error(f"Failed to record evaluation of {checkpoint}: {str(e)}")
        return None
