import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from g2p_app.checkpoints import FORMAT_NAME, load_checkpoint, save_checkpoint
from g2p_app.exceptions import CheckpointError
from g2p_app.network import THETA_S, THETA_W

from .factories import tiny_corpus, tiny_model


def _rewrite_meta(path, **changes):
    with np.load(path) as archive:
        arrays = {key: archive[key] for key in archive.files}
    meta = json.loads(bytes(arrays['meta']).decode('utf-8'))
    for key, value in changes.items():
        if isinstance(value, dict):
            meta[key].update(value)
        else:
            meta[key] = value
    arrays['meta'] = np.frombuffer(json.dumps(meta).encode('utf-8'), dtype=np.uint8)
    with open(path, 'wb') as fh:
        np.savez(fh, **arrays)


class CheckpointTests(SimpleTestCase):
    def setUp(self):
        _, _, _, self.vocabs = tiny_corpus()
        self.model = tiny_model(self.vocabs, seed=4)
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / 'ckpt' / 'model.npz'

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_with_optimizer_state(self):
        names = list(self.model.params)[:2]
        state = {
            'm': {name: np.full(self.model.params[name].shape, 0.5, dtype=np.float32) for name in names},
            'v': {name: np.full(self.model.params[name].shape, 0.25, dtype=np.float32) for name in names},
            'step': 17,
        }

        save_checkpoint(self.path, self.model, self.vocabs, optimizer_state=state, stage=2, epoch=1)
        checkpoint = load_checkpoint(self.path)

        self.assertEqual(checkpoint.model.digest(THETA_W), self.model.digest(THETA_W))
        self.assertEqual(checkpoint.model.digest(THETA_S), self.model.digest(THETA_S))
        self.assertEqual(checkpoint.model.config, self.model.config)
        self.assertEqual(checkpoint.vocabs, self.vocabs)
        self.assertEqual((checkpoint.meta['stage'], checkpoint.meta['epoch']), (2, 1))
        self.assertEqual(checkpoint.meta['format'], FORMAT_NAME)
        self.assertEqual(checkpoint.optimizer_state['step'], 17)
        np.testing.assert_array_equal(checkpoint.optimizer_state['v'][names[1]], state['v'][names[1]])
        self.assertFalse(self.path.with_name('model.npz.tmp').exists())

    def test_without_optimizer_state(self):
        save_checkpoint(self.path, self.model, self.vocabs)

        self.assertEqual(load_checkpoint(self.path).optimizer_state, {})

    def test_missing_file(self):
        with self.assertRaises(CheckpointError):
            load_checkpoint(Path(self.tmp.name) / 'absent.npz')

    def test_not_an_archive(self):
        self.path.parent.mkdir(parents=True)
        self.path.write_text('definitely not numpy', encoding='utf-8')

        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_unknown_format_version(self):
        save_checkpoint(self.path, self.model, self.vocabs)
        _rewrite_meta(self.path, version=99)

        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_partition_labels_must_agree(self):
        save_checkpoint(self.path, self.model, self.vocabs)
        _rewrite_meta(self.path, partition={'grapheme_embedding': THETA_S})

        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)
