"""
Management command that runs a noise-ratio or context-length study
usage: python manage.py sweep --config run.json --param p --values 0 0.1 0.2 0.3 --out runs/sweep_p
"""
import csv
import json
from pathlib import Path

from g2p_app.exceptions import ArgumentError, InputError
from g2p_app.runconfig import load_run_config
from g2p_app.tasks import SWEEP_PARAMS, run_sweep_point

from ._base import G2PCommand, TaskFailure

SWEEP_TABLE = 'sweep.tsv'
SWEEP_JSON = 'sweep.json'
COLUMNS = ('param', 'value', 'wer', 'per', 'train_seconds', 'eval_seconds', 'started_at', 'finished_at',
           'run_dir')


class Command(G2PCommand):
    help = 'Train and evaluate one run per grid value and write a plot-ready WER table'
    banner = '📈 rg2p sweep'

    def add_arguments(self, parser):
        parser.add_argument('--config', type=str, default=None, help='Base run config JSON file')
        parser.add_argument('--data', type=str, default=None, help='Prepared dataset directory')
        parser.add_argument('--param', choices=SWEEP_PARAMS, required=True,
                            help='p (noise ratio) or l (context length)')
        parser.add_argument('--values', nargs='+', required=True, help='Grid values')
        parser.add_argument('--testset', type=str, default=None,
                            help='Test split to score (default: <data>/d_s_test.jsonl)')
        parser.add_argument('--out', type=str, required=True, help='Sweep output directory')
        parser.add_argument('--seed', type=int, default=None, help='Override the config seed')

    def run(self, *args, **options):
        param = options['param']
        cast = int if param == 'l' else float
        try:
            values = [cast(v) for v in options['values']]
        except ValueError as exc:
            raise ArgumentError(f'--values for {param} must be {cast.__name__}s') from exc
        config = load_run_config(options['config'], {'seed': options['seed'], 'paths': {'data_dir': options['data']}})
        data_dir = config.data_dir
        testset = Path(options['testset'] or data_dir / 'd_s_test.jsonl')
        if not testset.is_file():
            raise InputError(f'test split not found: {testset}')
        out = Path(options['out'])
        out.mkdir(parents=True, exist_ok=True)

        pending = [
            run_sweep_point.delay(config.to_dict(), str(data_dir), str(out / f'{param}_{value}'), str(testset),
                                  param, value, sweep=str(out))
            for value in values
        ]
        rows = [result.get() for result in pending]
        failed = [row for row in rows if row.get('status') != 'ok']
        completed = [{k: row[k] for k in COLUMNS} for row in rows if row.get('status') == 'ok']

        with open(out / SWEEP_TABLE, 'w', encoding='utf-8', newline='') as fh:
            writer = csv.DictWriter(fh, fieldnames=COLUMNS, delimiter='\t', lineterminator='\n')
            writer.writeheader()
            writer.writerows(completed)
        (out / SWEEP_JSON).write_text(json.dumps({'param': param, 'rows': rows}, indent=2, sort_keys=True) + '\n',
                                      encoding='utf-8')

        for row in completed:
            self.stdout.write(f"   {param}={row['value']}: WER {row['wer']:.4f}  PER {row['per']:.4f}")
        if failed:
            worst = max(row.get('exit_code', 3) for row in failed)
            raise TaskFailure(
                f"{len(failed)} of {len(rows)} sweep points failed: {failed[0].get('error')}", worst)
        self.ok(f'Sweep table written to {out / SWEEP_TABLE}')
