#!/usr/bin/env python
import os
import sys
import django
from pathlib import Path

# Add the project directory to the sys.path
BASE_DIR = Path(__file__).resolve().parent
sys.path.append(str(BASE_DIR))

# Set the settings module
os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'rg2p.settings')

# Configure Django
django.setup()

from g2p_app.models import ExperimentRun


def list_runs(sweep=None):
    print("=== Experiment Runs ===")
    runs = ExperimentRun.objects.all()
    if sweep:
        runs = runs.filter(sweep=sweep)

    for run in runs:
        print(f"Run: {run.run_dir}")
        print(f"Mode: {run.mode} (seed {run.seed})")
        print(f"Status: {run.status}")
        print(f"Started: {run.started_at:%Y-%m-%d %H:%M:%S}")
        if run.error:
            print(f"Error: {run.error}")
        last = run.epochs.order_by('-stage', '-epoch').first()
        if last is not None:
            print(f"Last epoch: stage {last.stage} epoch {last.epoch} loss {last.loss}")
        for record in run.evaluations.all():
            print(f"Eval {record.testset}: WER {record.wer:.4f} PER {record.per:.4f}")
        print("-" * 30)


if __name__ == '__main__':
    list_runs(sys.argv[1] if len(sys.argv) > 1 else None)
