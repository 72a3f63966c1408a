"""
Management command that builds a prepared dataset directory
usage: python manage.py prepare --lexicon cmudict.txt --sentences corpus.txt --out data/toy
"""
from pathlib import Path

from django.conf import settings

from g2p_app.datasets import DEFAULT_RATIOS, prepare_dataset
from g2p_app.exceptions import ArgumentError

from ._base import G2PCommand


def parse_ratios(text):
    try:
        parts = [float(x) for x in text.replace(',', '/').split('/')]
    except ValueError as exc:
        raise ArgumentError(f'--split expects three numbers like 90/5/5, got {text!r}') from exc
    total = sum(parts)
    if len(parts) != 3 or total <= 0:
        raise ArgumentError(f'--split expects three numbers like 90/5/5, got {text!r}')
    return tuple(p / total for p in parts)


class Command(G2PCommand):
    help = 'Parse a lexicon and sentence corpus into vocabularies and seeded train/dev/test splits'
    banner = '📚 rg2p dataset preparation'

    def add_arguments(self, parser):
        parser.add_argument('--lexicon', type=str, required=True,
                            help='Pronunciation dictionary in CMUdict 0.7b format')
        parser.add_argument('--sentences', type=str, default=None,
                            help='Sentence corpus, one sentence per line (builds D_s)')
        parser.add_argument('--out', type=str, default=None,
                            help='Output dataset directory (default: G2P_DATA_DIR)')
        parser.add_argument('--seed', type=int, default=0, help='Split seed (default: 0)')
        parser.add_argument('--split', type=str, default='90/5/5',
                            help='train/dev/test ratios (default: 90/5/5)')
        parser.add_argument('--noisy', type=str, default=None,
                            help='Noisy text aligned line-by-line with --corrected')
        parser.add_argument('--corrected', type=str, default=None,
                            help='Corrected text aligned line-by-line with --noisy')

    def run(self, *args, **options):
        if bool(options['noisy']) != bool(options['corrected']):
            raise ArgumentError('--noisy and --corrected must be given together')
        out = Path(options['out'] or settings.G2P_DATA_DIR)
        ratios = parse_ratios(options['split']) if options['split'] else DEFAULT_RATIOS
        manifest = prepare_dataset(
            options['lexicon'], options['sentences'], out, options['seed'], ratios,
            noisy_path=options['noisy'], corrected_path=options['corrected'],
        )

        self.stdout.write(f"   Lexicon entries: {manifest['lexicon_entries']} ({manifest['lexicon_words']} words)")
        self.stdout.write(f"   Sentence examples: {manifest['sentence_examples']}")
        for name, count in manifest['counts'].items():
            self.stdout.write(f'   {name}: {count}')
        self.ok(f'Dataset written to {out}')
