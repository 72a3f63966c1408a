"""Prepared dataset directories, example encoding and batching.

A prepared directory holds ``vocab.json``, ``manifest.json`` and one JSONL file per
corpus split (``d_w_train.jsonl``, ``d_s_dev.jsonl``, ...). Records keep the raw
words so context windows of any length can be cut at training time.
"""
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ArgumentError, EmptyCorpusError, InputError
from .lexicon import (
    BOS_ID, EOS_ID, PAD_ID, Lexicon, SentenceExample, Vocab, build_vocab, context_window,
    load_sentences, pair_noisy_corrected, parse_lexicon,
)
from .seeding import rng_stream

logger = logging.getLogger(__name__)

SPLITS = ('train', 'dev', 'test')
DEFAULT_RATIOS = (0.90, 0.05, 0.05)
VOCAB_FILE = 'vocab.json'
MANIFEST_FILE = 'manifest.json'


@dataclass
class Vocabularies:
    grapheme: Vocab
    phoneme: Vocab
    word: Vocab

    def to_dict(self):
        return {'grapheme': self.grapheme.to_dict(), 'phoneme': self.phoneme.to_dict(), 'word': self.word.to_dict()}

    @classmethod
    def from_dict(cls, data):
        return cls(*(Vocab.from_dict(data[level]) for level in ('grapheme', 'phoneme', 'word')))

    def __eq__(self, other):
        return isinstance(other, Vocabularies) and self.to_dict() == other.to_dict()


@dataclass
class EncodedExample:
    index: int
    grapheme_ids: list
    phoneme_ids: list
    context_ids: list


@dataclass
class Batch:
    graphemes: np.ndarray
    decoder_input: np.ndarray
    targets: np.ndarray
    context: np.ndarray
    ids: list

    def __len__(self):
        return len(self.ids)


def lexicon_examples(lexicon):
    """D_w: one single-word example per word, labelled with its variant-0 pronunciation."""
    return [
        SentenceExample(words=(e.word,), target_index=0, phonemes=e.phonemes, sentence_id=-1,
                        accepted=tuple(lexicon.pronunciations(e.word)))
        for e in lexicon.primary_entries()
    ]


def example_to_dict(example):
    return {
        'words': list(example.words),
        'target_index': example.target_index,
        'phonemes': list(example.phonemes),
        'sentence_id': example.sentence_id,
        'clean_word': example.clean_word,
        'accepted': [list(p) for p in example.accepted],
    }


def example_from_dict(data):
    return SentenceExample(
        words=tuple(data['words']),
        target_index=data['target_index'],
        phonemes=tuple(data['phonemes']),
        sentence_id=data.get('sentence_id', 0),
        clean_word=data.get('clean_word', ''),
        accepted=tuple(tuple(p) for p in data.get('accepted', ())),
    )


def write_examples(path, examples):
    with open(path, 'w', encoding='utf-8') as fh:
        for example in examples:
            fh.write(json.dumps(example_to_dict(example), sort_keys=True) + '\n')


def read_examples(path):
    path = Path(path)
    with open(path, encoding='utf-8') as fh:
        return [example_from_dict(json.loads(line)) for line in fh if line.strip()]


def write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + '\n', encoding='utf-8')


def read_json(path):
    return json.loads(Path(path).read_text(encoding='utf-8'))


def split_indices(n, ratios, rng):
    """Seeded permutation cut into train/dev/test; counts always sum to ``n``."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-6:
        raise ArgumentError(f'split ratios must be three non-negative numbers summing to 1, got {ratios}')
    order = rng.permutation(n)
    n_dev = int(n * ratios[1])
    n_test = int(n * ratios[2])
    n_train = n - n_dev - n_test
    return {
        'train': sorted(order[:n_train].tolist()),
        'dev': sorted(order[n_train:n_train + n_dev].tolist()),
        'test': sorted(order[n_train + n_dev:].tolist()),
    }


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def prepare_dataset(lexicon_path, sentences_path, out_dir, seed, ratios=DEFAULT_RATIOS,
                    noisy_path=None, corrected_path=None):
    """Parse sources, build vocabularies and write seeded splits to ``out_dir``."""
    for path in (lexicon_path, sentences_path, noisy_path, corrected_path):
        if path is not None and not Path(path).is_file():
            raise InputError(f'input file not found: {path}')
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    lexicon = Lexicon(parse_lexicon(lexicon_path))
    d_w = lexicon_examples(lexicon)
    d_s = load_sentences(sentences_path, lexicon) if sentences_path else []

    vocabs = Vocabularies(
        grapheme=build_vocab(d_w + d_s, 'grapheme'),
        phoneme=build_vocab(lexicon.entries(), 'phoneme'),
        word=build_vocab(d_s or d_w, 'word'),
    )
    write_json(out_dir / VOCAB_FILE, vocabs.to_dict())

    counts = {}
    w_split = split_indices(len(d_w), ratios, rng_stream(seed, 'split', 'd_w'))
    sentence_ids = sorted({e.sentence_id for e in d_s})
    s_split = split_indices(len(sentence_ids), ratios, rng_stream(seed, 'split', 'd_s'))
    for split in SPLITS:
        chosen = [d_w[i] for i in w_split[split]]
        write_examples(out_dir / f'd_w_{split}.jsonl', chosen)
        counts[f'd_w_{split}'] = len(chosen)
        keep = {sentence_ids[i] for i in s_split[split]}
        chosen = [e for e in d_s if e.sentence_id in keep]
        write_examples(out_dir / f'd_s_{split}.jsonl', chosen)
        counts[f'd_s_{split}'] = len(chosen)

    sources = {'lexicon': str(lexicon_path), 'lexicon_sha256': _sha256(lexicon_path)}
    if sentences_path:
        sources.update(sentences=str(sentences_path), sentences_sha256=_sha256(sentences_path))
    if noisy_path and corrected_path:
        noisy_set = pair_noisy_corrected(noisy_path, corrected_path, lexicon)
        write_examples(out_dir / 'noisy_test.jsonl', noisy_set.examples)
        counts['noisy_test'] = len(noisy_set.examples)
        counts['noisy_skipped_lines'] = noisy_set.skipped_lines
        sources.update(noisy=str(noisy_path), corrected=str(corrected_path))

    manifest = {
        'seed': seed,
        'ratios': list(ratios),
        'lexicon_entries': len(lexicon.entries()),
        'lexicon_words': len(lexicon),
        'sentence_examples': len(d_s),
        'counts': counts,
        'splits': {'d_w': w_split, 'd_s': {k: [sentence_ids[i] for i in v] for k, v in s_split.items()}},
        'sources': sources,
    }
    write_json(out_dir / MANIFEST_FILE, manifest)
    logger.info(f'Prepared dataset in {out_dir}: {counts}')
    return manifest


class PreparedDataset:
    def __init__(self, root):
        self.root = Path(root)
        if not (self.root / VOCAB_FILE).is_file():
            raise InputError(f'{self.root} is not a prepared dataset (missing {VOCAB_FILE})')
        self.vocabs = Vocabularies.from_dict(read_json(self.root / VOCAB_FILE))
        manifest_path = self.root / MANIFEST_FILE
        self.manifest = read_json(manifest_path) if manifest_path.is_file() else {}

    def path(self, corpus, split):
        return self.root / f'{corpus}_{split}.jsonl'

    def load(self, corpus, split):
        path = self.path(corpus, split)
        return read_examples(path) if path.is_file() else []


def encode_example(example, vocabs, context_length, index=0):
    return EncodedExample(
        index=index,
        grapheme_ids=vocabs.grapheme.encode(example.target_word),
        phoneme_ids=vocabs.phoneme.encode(example.phonemes, bos=True, eos=True),
        context_ids=vocabs.word.encode(context_window(example.words, example.target_index, context_length)),
    )


def encode_examples(examples, vocabs, context_length, offset=0):
    return [encode_example(e, vocabs, context_length, offset + i) for i, e in enumerate(examples)]


def _pad(rows, width=None):
    width = width if width is not None else max((len(r) for r in rows), default=0)
    out = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    for i, row in enumerate(rows):
        out[i, :len(row)] = row
    return out


def make_batch(encoded):
    if not encoded:
        raise EmptyCorpusError('cannot build an empty batch')
    phonemes = _pad([e.phoneme_ids for e in encoded])
    if not np.all(phonemes[:, 0] == BOS_ID):
        raise ArgumentError('phoneme targets must start with BOS')
    return Batch(
        graphemes=_pad([e.grapheme_ids for e in encoded]),
        decoder_input=np.where(phonemes[:, :-1] == EOS_ID, PAD_ID, phonemes[:, :-1]),
        targets=phonemes[:, 1:],
        context=_pad([e.context_ids for e in encoded]),
        ids=[e.index for e in encoded],
    )


def iterate_batches(encoded, batch_size, rng=None):
    """Fixed-size batches in order, or in a permutation drawn from ``rng``."""
    if batch_size < 1:
        raise ArgumentError(f'batch size must be at least 1, got {batch_size}')
    order = np.arange(len(encoded)) if rng is None else rng.permutation(len(encoded))
    for start in range(0, len(order), batch_size):
        yield make_batch([encoded[i] for i in order[start:start + batch_size]])
