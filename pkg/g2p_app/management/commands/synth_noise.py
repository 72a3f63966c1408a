"""
Management command that corrupts a prepared split with nat or syn noise
usage: python manage.py synth_noise --method syn --p 0.2 --seed 7 --in d_s_test.jsonl --out d_s_test_syn.jsonl
"""
from pathlib import Path

from g2p_app.datasets import read_examples, write_examples
from g2p_app.exceptions import ConfigurationError
from g2p_app.noise import NoiseConfig, corrupt_corpus, parse_misspelling_table, write_event_log

from ._base import G2PCommand


class Command(G2PCommand):
    help = 'Apply natural (table) or synthetic (syllable-bounded) noise to the target words of a split'
    banner = '🧪 rg2p noise synthesis'

    def add_arguments(self, parser):
        parser.add_argument('--method', choices=['nat', 'syn'], required=True, help='Noise method')
        parser.add_argument('--p', type=float, default=0.2, help='Per-word corruption probability (default: 0.2)')
        parser.add_argument('--seed', type=int, default=0, help='Noise seed (default: 0)')
        parser.add_argument('--misspellings', type=str, default=None,
                            help='correct<TAB>misspelling table, required for nat')
        parser.add_argument('--in', dest='input', type=str, required=True, help='Input JSONL split')
        parser.add_argument('--out', type=str, required=True, help='Output JSONL split')
        parser.add_argument('--events', type=str, default=None,
                            help='Event log path (default: <out>.events.jsonl)')

    def run(self, *args, **options):
        method = options['method']
        if method == 'nat' and not options['misspellings']:
            raise ConfigurationError('--method nat needs --misspellings')
        table = parse_misspelling_table(options['misspellings']) if method == 'nat' else None
        cfg = NoiseConfig(p=options['p'], seed=options['seed'])

        examples = read_examples(options['input'])
        result = corrupt_corpus(examples, method, cfg, table)
        out = Path(options['out'])
        out.parent.mkdir(parents=True, exist_ok=True)
        write_examples(out, result.examples)
        events = Path(options['events'] or out.with_suffix('.events.jsonl'))
        write_event_log(events, result.events)

        self.stdout.write(f'   Words modified: {result.modified} of {len(examples)}')
        if result.infeasible:
            self.warn(f'{result.infeasible} words had no feasible edit and stayed clean')
        for kind, count in result.histogram().items():
            self.stdout.write(f'   {kind}: {count}')
        self.ok(f'Corrupted split written to {out}, events to {events}')
