import logging
from datetime import datetime
from pathlib import Path

from celery import shared_task

from .exceptions import ArgumentError, G2PError
from .pipeline import evaluate_run, sweep_point
from .runconfig import resolve_run_config

logger = logging.getLogger(__name__)

SWEEP_PARAMS = ('p', 'l')


def sweep_overrides(param, value, mode):
    """Config overrides for one grid value of a noise-ratio or context-length sweep."""
    if param == 'p':
        return {'mode': mode if mode == 'nat' else 'syn', 'noise': {'p': float(value)}}
    if param == 'l':
        return {'model': {'context_length': int(value)}}
    raise ArgumentError(f'unknown sweep parameter {param!r}; expected one of {SWEEP_PARAMS}')


@shared_task
def run_sweep_point(config_data, dataset_dir, run_dir, testset, param, value, sweep=''):
    """
    Train and evaluate one sweep grid value in its own run directory
    """
    try:
        overrides = sweep_overrides(param, value, config_data.get('mode'))
        config = resolve_run_config(config_data, overrides)
        row = sweep_point(config, dataset_dir, run_dir, testset, param, value, sweep=sweep)
        logger.info(f"Sweep point {param}={value} finished: WER {row['wer']:.4f}")
        return {'status': 'ok', **row}
    except G2PError as e:
        logger.error(f"Sweep point {param}={value} failed: {str(e)}")
        return {
            'status': 'error',
            'param': param,
            'value': value,
            'error': str(e),
            'exit_code': e.exit_code,
            'run_dir': str(run_dir),
            'timestamp': datetime.now().isoformat(),
        }


def evaluation_summary(report, report_path):
    return {
        'status': 'ok',
        'report': str(Path(report_path)),
        'wer': report.wer,
        'per': report.per,
        'total_words': report.total_words,
        'noisy_words': report.noisy_words,
        'counts': dict(report.counts),
    }


@shared_task
def evaluate_checkpoint(checkpoint, testset, report, event_log=None, use_context=True, stress_insensitive=False,
                        beam=None, predictions_path=None):
    """
    Score a checkpoint on a test set and write its report
    """
    try:
        result = evaluate_run(checkpoint, testset, report, event_log=event_log, use_context=use_context,
                              stress_insensitive=stress_insensitive, beam=beam, predictions_path=predictions_path)
        return evaluation_summary(result, report)
    except G2PError as e:
        logger.error(f"Evaluation of {checkpoint} failed: {str(e)}")
        return {
            'status': 'error',
            'error': str(e),
            'exit_code': e.exit_code,
            'timestamp': datetime.now().isoformat(),
        }
