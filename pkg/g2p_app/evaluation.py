"""PER/WER scoring, failure taxonomy and attention export."""
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import encode_example
from .exceptions import AlignmentError, ArgumentError
from .noise import NAT_KIND, VOWELS, letter_class

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CATEGORIES = ('Base', 'V-V', 'V-_', '_-V', 'C-C', 'C-_', '_-C', 'Cross')
CATEGORY_GROUPS = {
    'vowel': ('V-V', 'V-_', '_-V'),
    'consonant': ('C-C', 'C-_', '_-C'),
    'cross': ('Cross',),
}
EVENT_CATEGORY = {
    'V_sub': 'V-V', 'V_del': 'V-_', 'V_ins': '_-V',
    'C_sub': 'C-C', 'C_del': 'C-_', 'C_ins': '_-C',
    'cross_sub': 'Cross',
}
_STRESS_RE = re.compile(r'[0-2]$')


def align(ref, hyp):
    """Levenshtein alignment as ``(op, ref_index, hyp_index)`` tuples.

    ``op`` is one of ``match``, ``sub``, ``del`` (ref item dropped) or ``ins``.
    """
    n, m = len(ref), len(hyp)
    table = np.zeros((n + 1, m + 1), dtype=np.int64)
    table[:, 0] = np.arange(n + 1)
    table[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            table[i, j] = min(table[i - 1, j - 1] + cost, table[i - 1, j] + 1, table[i, j - 1] + 1)
    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and table[i, j] == table[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            ops.append(('match' if ref[i - 1] == hyp[j - 1] else 'sub', i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and table[i, j] == table[i - 1, j] + 1:
            ops.append(('del', i - 1, j))
            i -= 1
        else:
            ops.append(('ins', i, j - 1))
            j -= 1
    ops.reverse()
    return ops


def edit_distance(ref, hyp):
    return sum(1 for op, _, _ in align(ref, hyp) if op != 'match')


def strip_stress(phonemes):
    return tuple(_STRESS_RE.sub('', p) for p in phonemes)


def phoneme_error_rate(ref, hyp):
    if not len(ref):
        raise ArgumentError('phoneme error rate needs a non-empty reference')
    return 100.0 * edit_distance(ref, hyp) / len(ref)


class PERAccumulator:
    """Corpus PER as ``100 * sum(distances) / sum(reference lengths)``."""

    def __init__(self):
        self.errors = 0
        self.length = 0

    def add(self, ref, hyp):
        if not len(ref):
            raise ArgumentError('phoneme error rate needs a non-empty reference')
        distance = edit_distance(ref, hyp)
        self.errors += distance
        self.length += len(ref)
        return distance

    @property
    def value(self):
        return 100.0 * self.errors / self.length if self.length else 0.0


def _variants(ref):
    """A reference is either one phoneme sequence or a list of accepted sequences."""
    if ref and isinstance(ref[0], (list, tuple)):
        return [tuple(r) for r in ref]
    return [tuple(ref)]


def is_correct(ref, hyp, stress_insensitive=False):
    hyp = tuple(hyp)
    if stress_insensitive:
        hyp = strip_stress(hyp)
    for variant in _variants(ref):
        if (strip_stress(variant) if stress_insensitive else variant) == hyp:
            return True
    return False


def word_error_rate(refs, hyps, stress_insensitive=False):
    """Percent of words whose hypothesis matches none of the accepted pronunciations."""
    if len(refs) != len(hyps):
        raise AlignmentError(f'{len(refs)} references but {len(hyps)} hypotheses')
    if not refs:
        return 0.0
    wrong = sum(1 for ref, hyp in zip(refs, hyps) if not is_correct(ref, hyp, stress_insensitive))
    return 100.0 * wrong / len(refs)


def closest_variant(ref, hyp):
    return min(_variants(ref), key=lambda v: (edit_distance(v, hyp), v))


@dataclass(frozen=True)
class FailureClass:
    category: str
    multi_edit: bool = False


def _plain_class(letter):
    return 'V' if letter.upper() in VOWELS else 'C'


def classify_failure(clean_word, noisy_word, is_conversion_wrong=True):
    """Taxonomy category of a wrong conversion, from the first spelling edit."""
    if not is_conversion_wrong:
        return None
    clean, noisy = clean_word.upper(), noisy_word.upper()
    if clean == noisy:
        return FailureClass('Base')
    edits = [op for op in align(clean, noisy) if op[0] != 'match']
    op, i, j = edits[0]
    if op == 'ins':
        category = f'_-{_plain_class(noisy[j])}'
    else:
        source = letter_class(clean, i) or 'C'
        if op == 'del':
            category = f'{source}-_'
        else:
            target = _plain_class(noisy[j])
            category = f'{source}-{target}' if source == target else 'Cross'
    return FailureClass(category, multi_edit=len(edits) > 1)


def category_for_event(kind):
    return EVENT_CATEGORY.get(kind)


@dataclass
class WordResult:
    index: int
    clean_word: str
    input_word: str
    reference: tuple
    accepted: tuple
    hypothesis: tuple
    correct: bool
    distance: int
    truncated: bool = False
    context: tuple = ()


@dataclass
class EvalReport:
    per: float
    wer: float
    counts: dict
    total_words: int
    failures: int
    multi_edit: int = 0
    noisy_words: int = 0
    phoneme_errors: int = 0
    reference_phonemes: int = 0
    group_wer: dict = field(default_factory=dict)
    group_shares: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)


def aggregate_report(results, event_log=None, metadata=None, stress_insensitive=False):
    """Corpus PER/WER and the failure histogram.

    With an ``event_log`` (records keyed by example index), logged syn edits decide
    the category; otherwise the category is inferred from the spelling alignment.
    """
    events = {record.example_index: record for record in (event_log or [])}
    counts = Counter({c: 0 for c in CATEGORIES})
    accumulator = PERAccumulator()
    failures = multi = noisy = 0
    for result in results:
        reference = closest_variant(result.accepted or result.reference, result.hypothesis)
        hyp = result.hypothesis
        if stress_insensitive:
            reference, hyp = strip_stress(reference), strip_stress(hyp)
        accumulator.add(reference, hyp)
        if result.clean_word.upper() != result.input_word.upper():
            noisy += 1
        if is_correct(result.accepted or result.reference, result.hypothesis, stress_insensitive):
            continue
        failures += 1
        record = events.get(result.index)
        category = category_for_event(record.kind) if record and record.kind != NAT_KIND else None
        if category is None:
            failure = classify_failure(result.clean_word, result.input_word)
            category = failure.category
            multi += int(failure.multi_edit)
        counts[category] += 1
    total = len(results)
    group_wer = {
        group: (100.0 * sum(counts[c] for c in cats) / total if total else 0.0)
        for group, cats in CATEGORY_GROUPS.items()
    }
    noise_failures = sum(counts[c] for c in CATEGORIES if c != 'Base')
    group_shares = {
        group: (sum(counts[c] for c in cats) / noise_failures if noise_failures else 0.0)
        for group, cats in CATEGORY_GROUPS.items()
    }
    return EvalReport(
        per=accumulator.value,
        wer=100.0 * failures / total if total else 0.0,
        counts=dict(counts),
        total_words=total,
        failures=failures,
        multi_edit=multi,
        noisy_words=noisy,
        phoneme_errors=accumulator.errors,
        reference_phonemes=accumulator.length,
        group_wer=group_wer,
        group_shares=group_shares,
        metadata=dict(metadata or {}),
    )


def write_report(path, report):
    from .serializers import EvalReportSerializer

    data = EvalReportSerializer(report).data
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    return data


def evaluate_model(model, examples, vocabs, use_context=True, beam=None, greedy=False,
                   collect_traces=False):
    """Decode every example; returns ``(results, traces)``."""
    results, traces = [], []
    context_length = model.config.context_length if use_context else 0
    for i, example in enumerate(examples):
        encoded = encode_example(example, vocabs, context_length, i)
        context_ids = encoded.context_ids if context_length else None
        if greedy:
            decoded = model.greedy_decode(encoded.grapheme_ids, context_ids, use_context=use_context)
        else:
            decoded = model.beam_search(encoded.grapheme_ids, context_ids, beam=beam, use_context=use_context)
        hypothesis = tuple(vocabs.phoneme.decode(decoded.tokens))
        reference = tuple(example.phonemes)
        results.append(WordResult(
            index=i,
            clean_word=example.clean_word,
            input_word=example.target_word,
            reference=reference,
            accepted=tuple(example.accepted),
            hypothesis=hypothesis,
            correct=is_correct(example.accepted, hypothesis),
            distance=edit_distance(closest_variant(example.accepted, hypothesis), hypothesis),
            truncated=decoded.truncated,
            context=tuple(example.words),
        ))
        if collect_traces:
            traces.append(model.trace_decode(encoded.grapheme_ids, decoded.tokens, context_ids, use_context))
    return results, traces


def dev_metrics(model, vocabs):
    """Greedy PER/WER callback used for per-epoch dev scoring during training."""
    def evaluate(current, examples, use_context):
        results, _ = evaluate_model(current, examples, vocabs, use_context=use_context, greedy=True)
        report = aggregate_report(results)
        return {'per': report.per, 'wer': report.wer}
    return evaluate


def _write_matrix(fh, matrix):
    for row in np.atleast_2d(matrix):
        fh.write(' '.join(f'{value:.9g}' for value in row) + '\n')


def export_attention(trace, path, graphemes=(), phonemes=()):
    """Write grapheme-phoneme attention per layer/head and the gate values to ``path``."""
    if trace is None or not trace.attention.get('cross'):
        raise ArgumentError('no decoding trace to export')
    path = Path(path)
    with open(path, 'w', encoding='utf-8') as fh:
        fh.write('# rg2p attention export v1\n')
        fh.write(f'# graphemes: {" ".join(graphemes)}\n')
        fh.write(f'# phonemes: {" ".join(phonemes)}\n')
        for layer in sorted(trace.attention['cross']):
            weights = trace.attention['cross'][layer][0]
            for head in range(weights.shape[0]):
                fh.write(f'# layer {layer} head {head} cross\n')
                _write_matrix(fh, weights[head])
        for layer, lam in enumerate(trace.gates):
            fh.write(f'# layer {layer} gate\n')
            _write_matrix(fh, lam[0])
    return path


_HEADER_RE = re.compile(r'^# layer (\d+) (?:head (\d+) )?(cross|gate)$')


def read_attention_export(path):
    """Parse an export back into ``{'attention': {(layer, head): array}, 'gates': {layer: array}}``."""
    out = {'attention': {}, 'gates': {}, 'graphemes': [], 'phonemes': []}
    key, rows = None, []

    def flush():
        if key is not None:
            kind, ident = key
            out[kind][ident] = np.array(rows, dtype=np.float64)

    for line in Path(path).read_text(encoding='utf-8').splitlines():
        if line.startswith('# graphemes:'):
            out['graphemes'] = line.split(':', 1)[1].split()
            continue
        if line.startswith('# phonemes:'):
            out['phonemes'] = line.split(':', 1)[1].split()
            continue
        match = _HEADER_RE.match(line)
        if match:
            flush()
            layer, head, kind = match.groups()
            key = ('attention', (int(layer), int(head))) if kind == 'cross' else ('gates', int(layer))
            rows = []
        elif line.strip() and not line.startswith('#'):
            rows.append([float(v) for v in line.split()])
    flush()
    return out
