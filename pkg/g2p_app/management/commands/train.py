"""
Management command that trains a model into a run directory
usage: python manage.py train --config run.json --mode robust --data data/toy --run-dir runs/robust
"""
from pathlib import Path

from g2p_app.exceptions import TrainingDivergedError
from g2p_app.pipeline import train_run
from g2p_app.runconfig import load_run_config
from g2p_app.serializers import MODES

from ._base import G2PCommand


class Command(G2PCommand):
    help = 'Train a baseline, noise-augmented, adversarial or robust (two-step) G2P model'
    banner = '🏋️ rg2p training'

    def add_arguments(self, parser):
        parser.add_argument('--config', type=str, default=None, help='Run config JSON file')
        parser.add_argument('--mode', choices=MODES, default=None, help='Training pipeline')
        parser.add_argument('--data', type=str, default=None, help='Prepared dataset directory')
        parser.add_argument('--run-dir', type=str, default=None, help='Run directory (default: <runs>/<mode>-s<seed>)')
        parser.add_argument('--seed', type=int, default=None, help='Override the config seed')
        parser.add_argument('--epochs', type=int, default=None, help='Override train.epochs')
        parser.add_argument('--context-epochs', type=int, default=None, help='Override train.context_epochs')
        parser.add_argument('--epsilon', type=float, default=None, help='Override train.epsilon')
        parser.add_argument('--p', type=float, default=None, help='Override noise.p')
        parser.add_argument('--context-length', type=int, default=None, help='Override model.context_length')
        parser.add_argument('--misspellings', type=str, default=None, help='Misspelling table for nat mode')
        parser.add_argument('--resume', action='store_true', dest='resume',
                            help='Continue from the latest per-epoch checkpoint')

    def run(self, *args, **options):
        overrides = {
            'seed': options['seed'],
            'mode': options['mode'],
            'model': {'context_length': options['context_length']},
            'noise': {'p': options['p']},
            'train': {
                'epochs': options['epochs'],
                'context_epochs': options['context_epochs'],
                'epsilon': options['epsilon'],
            },
            'paths': {'data_dir': options['data'], 'misspellings': options['misspellings']},
        }
        config = load_run_config(options['config'], overrides)
        run_dir = Path(options['run_dir'] or config.runs_dir / f'{config.mode}-s{config.seed}')

        try:
            summary = train_run(config, config.data_dir, run_dir, resume=options['resume'])
        except TrainingDivergedError as e:
            self.stdout.write(self.style.ERROR(
                f'❌ Non-finite loss at step {e.step} (stage {e.stage}), batch {e.batch_ids}'))
            raise

        self.stdout.write(f"   Epochs: {summary['epochs']} over stages {summary['stages']}")
        if summary['final_loss'] is not None:
            self.stdout.write(f"   Final loss: {summary['final_loss']:.4f}")
        self.ok(f"Model saved to {summary['checkpoint']}")
