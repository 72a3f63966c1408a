#!/usr/bin/env python
import os
import sys
import argparse
import django
from pathlib import Path

# Add the project directory to the sys.path
BASE_DIR = Path(__file__).resolve().parent
sys.path.append(str(BASE_DIR))

# Set the settings module
os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'rg2p.settings')

# Configure Django
django.setup()

from django.conf import settings
from django.core.management import call_command

from g2p_app.toydata import build_toy_corpus


def setup_toy_data(out_dir, words, sentences, seed, prepare):
    print("Building synthetic corpus...")
    paths = build_toy_corpus(out_dir / 'raw', words=words, sentences=sentences, seed=seed)
    for name, path in paths.items():
        print(f"✅ {name}: {path}")

    if prepare:
        print("\nPreparing dataset...")
        call_command(
            'prepare',
            lexicon=str(paths['lexicon']),
            sentences=str(paths['sentences']),
            noisy=str(paths['noisy']),
            corrected=str(paths['corrected']),
            out=str(out_dir),
            seed=seed,
        )

    print("\n🎉 Toy data setup completed!")
    print(f"Train with: python manage.py train --data {out_dir} --mode robust")
    print(f"nat mode also needs: --misspellings {paths['misspellings']}")


if __name__ == '__main__':
    parser = argparse.ArgumentParser(description='Generate a synthetic lexicon and sentence corpus')
    parser.add_argument('--out', type=Path, default=Path(settings.G2P_DATA_DIR) / 'toy')
    parser.add_argument('--words', type=int, default=500)
    parser.add_argument('--sentences', type=int, default=2000)
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--no-prepare', action='store_false', dest='prepare')
    args = parser.parse_args()
    setup_toy_data(args.out, args.words, args.sentences, args.seed, args.prepare)
