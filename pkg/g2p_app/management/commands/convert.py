"""
Management command that converts a word or sentence to phonemes
usage: python manage.py convert "the window was open" --checkpoint runs/robust/model.npz
"""
from g2p_app.pipeline import convert_text

from ._base import G2PCommand


class Command(G2PCommand):
    help = 'Print phonemes for a word, or for every word of a sentence using its context'

    def add_arguments(self, parser):
        parser.add_argument('text', type=str, help='A word or a sentence')
        parser.add_argument('--checkpoint', type=str, required=True, help='Model checkpoint (.npz)')
        parser.add_argument('--no-context', action='store_false', dest='use_context',
                            help='Ignore the sentence context')
        parser.add_argument('--export-attention', type=str, default=None, dest='export_attention',
                            help='Directory for per-word attention and gate matrices')

    def run(self, *args, **options):
        outputs = convert_text(options['checkpoint'], options['text'], use_context=options['use_context'],
                               export_dir=options['export_attention'])
        for word, phonemes, decoded in outputs:
            line = f"{word}\t{' '.join(phonemes)}"
            if decoded.truncated:
                line += '\t(truncated)'
            self.stdout.write(line)
        if options['export_attention']:
            self.ok(f"Attention exported to {options['export_attention']}")
