"""Train / evaluate / convert flows shared by management commands and Celery tasks."""
import json
import logging
import shutil
import time
from datetime import datetime, timezone
from pathlib import Path

from .checkpoints import load_checkpoint, save_checkpoint
from .datasets import (
    MANIFEST_FILE, VOCAB_FILE, PreparedDataset, Vocabularies, encode_examples, read_examples, read_json,
)
from .evaluation import aggregate_report, dev_metrics, evaluate_model, export_attention, write_report
from .exceptions import ConfigurationError, EmptyCorpusError, G2PError, InputError, VocabularyMismatchError
from .lexicon import context_window, tokenize_sentence
from .network import G2PTransformer
from .noise import corrupt_corpus, parse_misspelling_table, read_event_log, write_event_log
from .registry import finish_run, find_run, record_epoch, record_evaluation, register_run
from .runconfig import run_lock, write_run_config
from .serializers import WordResultSerializer
from .training import CHECKPOINT_DIR, robust_train

logger = logging.getLogger(__name__)

MODEL_FILE = 'model.npz'
TRAIN_LOG = 'train.log'
NOISE_EVENTS_FILE = 'noise_events.jsonl'


def _attach_run_log(run_dir):
    handler = logging.FileHandler(Path(run_dir) / TRAIN_LOG, encoding='utf-8')
    handler.setLevel(logging.INFO)
    handler.setFormatter(logging.Formatter('{levelname} {asctime} {module} {message}', style='{'))
    logging.getLogger('g2p_app').addHandler(handler)
    return handler


def _detach_run_log(handler):
    logging.getLogger('g2p_app').removeHandler(handler)
    handler.close()


def train_config_for_mode(config):
    """Apply the mode switch (baseline / nat / syn / adv / robust) to the train section."""
    train = config.train
    if config.mode == 'baseline':
        train.schedule = 'baseline'
        train.adv_mode = 'off'
    elif config.mode == 'adv':
        train.adv_mode = 'on'
    return train


def noisy_training_corpus(config, examples, run_dir):
    if config.mode not in ('nat', 'syn'):
        return examples
    table = None
    if config.mode == 'nat':
        if not config.paths.get('misspellings'):
            raise ConfigurationError('nat mode needs paths.misspellings (a correct<TAB>misspelling table)')
        table = parse_misspelling_table(config.paths['misspellings'])
    result = corrupt_corpus(examples, config.mode, config.noise, table)
    write_event_log(Path(run_dir) / NOISE_EVENTS_FILE, result.events)
    return result.examples


def train_run(config, dataset_dir, run_dir, resume=False, sweep=''):
    """Train into ``run_dir`` and return a summary dict."""
    run_dir = Path(run_dir)
    dataset = PreparedDataset(dataset_dir)
    if not resume and any((run_dir / CHECKPOINT_DIR).glob('*.npz')):
        raise InputError(f'{run_dir} already holds checkpoints; pass --resume or choose a new run directory')
    with run_lock(run_dir):
        handler = _attach_run_log(run_dir)
        run = None
        try:
            write_run_config(run_dir, config)
            if (dataset.root / MANIFEST_FILE).is_file():
                shutil.copyfile(dataset.root / MANIFEST_FILE, run_dir / 'dataset_manifest.json')
            shutil.copyfile(dataset.root / VOCAB_FILE, run_dir / VOCAB_FILE)
            run = register_run(run_dir, config.mode, config.seed, config.to_dict(), sweep=sweep)
            logger.info(f'Training run {run_dir} (mode {config.mode}, seed {config.seed})')

            train_cfg = train_config_for_mode(config)
            d_w_raw = dataset.load('d_w', 'train')
            d_s_raw = noisy_training_corpus(config, dataset.load('d_s', 'train'), run_dir)
            if not d_w_raw and not d_s_raw:
                raise EmptyCorpusError(f'{dataset.root} has no training examples')
            vocabs = dataset.vocabs
            l = config.model.context_length
            d_w = encode_examples(d_w_raw, vocabs, l)
            d_s = encode_examples(d_s_raw, vocabs, l, offset=len(d_w))
            dev = dataset.load('d_s', 'dev') or dataset.load('d_w', 'dev')

            model = G2PTransformer(config.model, len(vocabs.grapheme), len(vocabs.phoneme),
                                   len(vocabs.word), seed=config.seed)
            result = robust_train(
                model, d_w, d_s, train_cfg, vocabs=vocabs, run_dir=run_dir,
                dev=dev if train_cfg.dev_eval else None,
                evaluate_fn=dev_metrics(model, vocabs), resume=resume,
            )
            for record in result.history:
                record_epoch(run, record)
            final = save_checkpoint(run_dir / MODEL_FILE, model, vocabs, stage=max(result.stages_run, default=0),
                                    epoch=-1, seed=config.seed, frozen_digest=result.frozen_digest,
                                    history=result.history, mode=config.mode)
            finish_run(run)
            last = result.history[-1] if result.history else {}
            return {
                'run_dir': str(run_dir),
                'checkpoint': str(final),
                'epochs': len(result.history),
                'stages': result.stages_run,
                'final_loss': last.get('loss'),
            }
        except G2PError as e:
            finish_run(run, status='failed', error=str(e))
            raise
        finally:
            _detach_run_log(handler)


def check_vocabularies(checkpoint_vocabs, testset_path):
    vocab_path = Path(testset_path).parent / VOCAB_FILE
    if not vocab_path.is_file():
        return
    if Vocabularies.from_dict(read_json(vocab_path)) != checkpoint_vocabs:
        raise VocabularyMismatchError(
            f'vocabularies of {vocab_path} do not match the checkpoint; re-prepare or use the matching run')


def evaluate_run(checkpoint_path, testset_path, report_path, event_log=None, use_context=True,
                 stress_insensitive=False, beam=None, predictions_path=None):
    """Score a checkpoint on a JSONL test set, writing the report (and per-word predictions)."""
    checkpoint = load_checkpoint(checkpoint_path)
    examples = read_examples(testset_path)
    if not examples:
        raise EmptyCorpusError(f'test set {testset_path} is empty')
    check_vocabularies(checkpoint.vocabs, testset_path)
    results, _ = evaluate_model(checkpoint.model, examples, checkpoint.vocabs, use_context=use_context, beam=beam)
    events = read_event_log(event_log) if event_log else None
    metadata = {
        'dataset': str(testset_path),
        'checkpoint': str(checkpoint_path),
        'noise_config': checkpoint.meta.get('mode', ''),
        'event_log': str(event_log or ''),
        'use_context': use_context,
        'stress_insensitive': stress_insensitive,
        'created_at': datetime.now(timezone.utc).isoformat(),
    }
    report = aggregate_report(results, events, metadata, stress_insensitive=stress_insensitive)
    write_report(report_path, report)
    if predictions_path:
        with open(predictions_path, 'w', encoding='utf-8') as fh:
            for result in results:
                fh.write(json.dumps(dict(WordResultSerializer(result).data), sort_keys=True) + '\n')
    record_evaluation(checkpoint_path, testset_path, report, report_path,
                      run=find_run(Path(checkpoint_path).parent))
    return report


def convert_text(checkpoint_path, text, use_context=True, export_dir=None):
    """Phonemes for every word of ``text``; a sentence supplies context to each word."""
    checkpoint = load_checkpoint(checkpoint_path)
    model, vocabs = checkpoint.model, checkpoint.vocabs
    words = tokenize_sentence(text)
    if not words:
        raise EmptyCorpusError('nothing to convert')
    l = model.config.context_length if use_context and len(words) > 1 else 0
    outputs = []
    for k, word in enumerate(words):
        grapheme_ids = vocabs.grapheme.encode(word)
        context_ids = vocabs.word.encode(context_window(words, k, l)) if l else None
        decoded = model.beam_search(grapheme_ids, context_ids, use_context=bool(l))
        phonemes = vocabs.phoneme.decode(decoded.tokens)
        outputs.append((word, phonemes, decoded))
        if export_dir:
            export_dir = Path(export_dir)
            export_dir.mkdir(parents=True, exist_ok=True)
            trace = model.trace_decode(grapheme_ids, decoded.tokens, context_ids, use_context=bool(l))
            export_attention(trace, export_dir / f'{k:03d}_{word}.txt', graphemes=list(word),
                             phonemes=phonemes + ['</s>'])
    return outputs


def sweep_point(config, dataset_dir, run_dir, testset, param, value, sweep=''):
    """Train and evaluate one grid value; bookkeeping fields are wall-clock timings."""
    started = datetime.now(timezone.utc)
    t0 = time.monotonic()
    summary = train_run(config, dataset_dir, run_dir, sweep=sweep)
    t1 = time.monotonic()
    report = evaluate_run(summary['checkpoint'], testset, Path(run_dir) / 'report.json')
    t2 = time.monotonic()
    return {
        'param': param,
        'value': value,
        'wer': report.wer,
        'per': report.per,
        'train_seconds': round(t1 - t0, 3),
        'eval_seconds': round(t2 - t1, 3),
        'started_at': started.isoformat(),
        'finished_at': datetime.now(timezone.utc).isoformat(),
        'run_dir': str(run_dir),
    }
