"""
Management command that scores a checkpoint on a test split
usage: python manage.py evaluate --checkpoint runs/robust/model.npz --testset data/toy/d_s_test.jsonl --report report.json
"""
from g2p_app.evaluation import CATEGORIES
from g2p_app.pipeline import evaluate_run
from g2p_app.tasks import evaluate_checkpoint, evaluation_summary

from ._base import G2PCommand, TaskFailure


class Command(G2PCommand):
    help = 'Decode a test split and write an EvalReport (PER, WER, failure taxonomy)'
    banner = '📊 rg2p evaluation'

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', type=str, required=True, help='Model checkpoint (.npz)')
        parser.add_argument('--testset', type=str, required=True, help='JSONL test split')
        parser.add_argument('--report', type=str, required=True, help='Report JSON path')
        parser.add_argument('--events', type=str, default=None,
                            help='Noise event log of the test split, for per-category counts')
        parser.add_argument('--predictions', type=str, default=None, help='Write per-word predictions (JSONL)')
        parser.add_argument('--beam', type=int, default=None, help='Override the checkpoint beam width')
        parser.add_argument('--no-context', action='store_false', dest='use_context',
                            help='Decode without the context sublayers')
        parser.add_argument('--stress-insensitive', action='store_true', dest='stress_insensitive',
                            help='Ignore ARPAbet stress digits when scoring')
        parser.add_argument('--async', action='store_true', dest='in_background',
                            help='Dispatch the evaluation as a Celery task and wait for its result')

    def run(self, *args, **options):
        kwargs = dict(
            event_log=options['events'], use_context=options['use_context'],
            stress_insensitive=options['stress_insensitive'], beam=options['beam'],
            predictions_path=options['predictions'],
        )
        if options['in_background']:
            summary = evaluate_checkpoint.delay(
                options['checkpoint'], options['testset'], options['report'], **kwargs).get()
            if summary['status'] != 'ok':
                raise TaskFailure(summary['error'], summary['exit_code'])
        else:
            report = evaluate_run(options['checkpoint'], options['testset'], options['report'], **kwargs)
            summary = evaluation_summary(report, options['report'])

        self.stdout.write(f"   Words: {summary['total_words']}")
        self.stdout.write(f"   PER: {summary['per']:.4f}")
        self.stdout.write(f"   WER: {summary['wer']:.4f}")
        if summary['noisy_words']:
            self.stdout.write('\n🔎 Failure categories:')
            for category in CATEGORIES:
                self.stdout.write(f"   {category}: {summary['counts'].get(category, 0)}")
        self.ok(f"Report written to {options['report']}")
