"""Versioned ``.npz`` checkpoints.

Layout: ``param/<name>`` arrays, optional ``adam_m/<name>`` and ``adam_v/<name>``
optimizer moments, and ``meta``: a UTF-8 JSON blob (format version, model config,
vocabularies, partition label per tensor, training position).
"""
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import Vocabularies
from .exceptions import CheckpointError
from .network import G2PTransformer, ModelConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
FORMAT_NAME = 'rg2p-checkpoint'


@dataclass
class Checkpoint:
    model: G2PTransformer
    vocabs: Vocabularies
    meta: dict
    optimizer_state: dict = field(default_factory=dict)


def save_checkpoint(path, model, vocabs, optimizer_state=None, **meta):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f'param/{name}': tensor.data for name, tensor in model.params.items()}
    if optimizer_state:
        for name, moment in optimizer_state.get('m', {}).items():
            arrays[f'adam_m/{name}'] = moment
        for name, moment in optimizer_state.get('v', {}).items():
            arrays[f'adam_v/{name}'] = moment
    blob = {
        'format': FORMAT_NAME,
        'version': FORMAT_VERSION,
        'model_config': model.config.to_dict(),
        'vocab_sizes': model.vocab_sizes,
        'vocabs': vocabs.to_dict(),
        'partition': {name: model.partition.label(name) for name in model.params},
        'dtype': str(next(iter(model.params.values())).dtype),
        'optimizer_step': (optimizer_state or {}).get('step', 0),
        **meta,
    }
    arrays['meta'] = np.frombuffer(json.dumps(blob, sort_keys=True).encode('utf-8'), dtype=np.uint8)
    tmp = path.with_name(path.name + '.tmp')
    with open(tmp, 'wb') as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)
    logger.debug(f'Saved checkpoint {path}')
    return path


def read_meta(archive):
    try:
        return json.loads(bytes(archive['meta']).decode('utf-8'))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f'checkpoint metadata is missing or unreadable: {exc}') from exc


def load_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f'checkpoint not found: {path}')
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f'cannot read checkpoint {path}: {exc}') from exc
    with archive:
        meta = read_meta(archive)
        if meta.get('format') != FORMAT_NAME or meta.get('version') != FORMAT_VERSION:
            raise CheckpointError(
                f'{path}: unsupported checkpoint format {meta.get("format")} v{meta.get("version")}')
        config = ModelConfig.from_dict(meta['model_config'])
        sizes = meta['vocab_sizes']
        model = G2PTransformer(config, sizes['grapheme'], sizes['phoneme'], sizes['word'])
        params, m, v = {}, {}, {}
        for key in archive.files:
            kind, _, name = key.partition('/')
            if kind == 'param':
                params[name] = archive[key]
            elif kind == 'adam_m':
                m[name] = archive[key]
            elif kind == 'adam_v':
                v[name] = archive[key]
    model.load_state_dict(params)
    recorded = meta.get('partition', {})
    for name, label in recorded.items():
        if model.partition.label(name) != label:
            raise CheckpointError(f'{path}: partition label of {name} is {label}, model says otherwise')
    optimizer_state = {'m': m, 'v': v, 'step': meta.get('optimizer_step', 0)} if m else {}
    return Checkpoint(model=model, vocabs=Vocabularies.from_dict(meta['vocabs']), meta=meta,
                      optimizer_state=optimizer_state)
