"""Controlled spelling noise for sentence corpora.

``syn`` applies one insertion, deletion or substitution of a vowel or consonant
inside a single syllable of the target word. ``nat`` swaps the target for a real
misspelling from a table. Every modification is recorded as a ``NoiseEvent`` so
evaluation can attribute failures to the edit that caused them.
"""
import json
import logging
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ArgumentError, ConfigurationError
from .lexicon import normalize_word
from .seeding import rng_stream

logger = logging.getLogger(__name__)

VOWELS = 'AEIOU'
CONSONANTS = ''.join(c for c in 'ABCDEFGHIJKLMNOPQRSTUVWXYZ' if c not in VOWELS)

GROUPS = ('vowel', 'consonant', 'cross')
OPS = ('ins', 'del', 'sub')
SYN_KINDS = ('V_ins', 'V_del', 'V_sub', 'C_ins', 'C_del', 'C_sub', 'cross_sub')
NAT_KIND = 'nat'
MAX_RESAMPLES = 8

DEFAULT_GROUP_WEIGHTS = (0.380, 0.405, 0.215)
UNIFORM_OPS = (1 / 3, 1 / 3, 1 / 3)


def letter_class(word, i):
    """'V', 'C' or None (apostrophe) for ``word[i]``.

    Y is a vowel only when neither neighbour is one of AEIOU.
    """
    letter = word[i].upper()
    if letter in VOWELS:
        return 'V'
    if letter == 'Y':
        left = word[i - 1].upper() if i > 0 else ''
        right = word[i + 1].upper() if i + 1 < len(word) else ''
        return 'C' if (left and left in VOWELS) or (right and right in VOWELS) else 'V'
    if letter.isalpha():
        return 'C'
    return None


def _match_case(text, like):
    return text.lower() if like.islower() else text.upper()


@dataclass(frozen=True)
class Syllable:
    start: int
    end: int
    onset: tuple
    nucleus: tuple
    coda: tuple


@dataclass(frozen=True)
class SyllableSegmentation:
    word: str
    syllables: tuple

    @property
    def spans(self):
        return [(s.start, s.end) for s in self.syllables]

    def pieces(self):
        return [self.word[s.start:s.end] for s in self.syllables]

    def index_of(self, position):
        for i, s in enumerate(self.syllables):
            if s.start <= position < s.end:
                return i
        return len(self.syllables) - 1


def syllabify(word):
    """Split ``word`` at consonant clusters between vowel nuclei.

    A single consonant between nuclei opens the next syllable; longer clusters
    give one letter to the preceding coda and the rest to the next onset.
    """
    if not word:
        raise ArgumentError('cannot syllabify an empty word')
    n = len(word)
    classes = [letter_class(word, i) for i in range(n)]
    nuclei = []
    i = 0
    while i < n:
        if classes[i] == 'V':
            j = i
            while j < n and classes[j] == 'V':
                j += 1
            nuclei.append((i, j))
            i = j
        else:
            i += 1
    if not nuclei:
        return SyllableSegmentation(word, (Syllable(0, n, (0, n), (n, n), (n, n)),))
    boundaries = []
    for (_, prev_end), (next_start, _) in zip(nuclei, nuclei[1:]):
        cluster = next_start - prev_end
        boundaries.append(prev_end if cluster <= 1 else prev_end + 1)
    syllables = []
    for k, (nuc_start, nuc_end) in enumerate(nuclei):
        start = 0 if k == 0 else boundaries[k - 1]
        end = n if k == len(nuclei) - 1 else boundaries[k]
        syllables.append(Syllable(start, end, (start, nuc_start), (nuc_start, nuc_end), (nuc_end, end)))
    return SyllableSegmentation(word, tuple(syllables))


@dataclass(frozen=True)
class NoiseEvent:
    """One recorded edit. ``position`` indexes the clean word; insertions go before it."""

    kind: str
    position: int
    syllable_index: int
    replacement: str = None
    original: str = None

    @property
    def op(self):
        return NAT_KIND if self.kind == NAT_KIND else self.kind.split('_')[1]

    @property
    def group(self):
        if self.kind == 'cross_sub':
            return 'cross'
        if self.kind == NAT_KIND:
            return NAT_KIND
        return 'vowel' if self.kind.startswith('V') else 'consonant'

    def apply(self, word):
        if self.kind == NAT_KIND:
            raise ArgumentError('natural misspellings are not replayable letter edits')
        p = self.position
        if self.op == 'ins':
            return word[:p] + _match_case(self.replacement, word) + word[p:]
        if self.op == 'del':
            return word[:p] + word[p + 1:]
        return word[:p] + _match_case(self.replacement, word) + word[p + 1:]


@dataclass
class NoiseConfig:
    p: float = 0.2
    group_weights: tuple = DEFAULT_GROUP_WEIGHTS
    op_weights: dict = field(default_factory=lambda: {'vowel': UNIFORM_OPS, 'consonant': UNIFORM_OPS})
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ConfigurationError(f'noise ratio p must lie in [0, 1], got {self.p}')
        self.group_weights = tuple(float(w) for w in self.group_weights)
        self.op_weights = {g: tuple(float(w) for w in self.op_weights[g]) for g in ('vowel', 'consonant')}
        _check_distribution('group_weights', self.group_weights, 3)
        for group, weights in self.op_weights.items():
            _check_distribution(f'op_weights[{group}]', weights, 3)


def _check_distribution(name, weights, size):
    if len(weights) != size:
        raise ConfigurationError(f'{name} needs {size} weights, got {len(weights)}')
    if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
        raise ConfigurationError(f'{name} must be non-negative and sum to 1, got {weights}')


def _draw(weights, rng):
    index = int(np.searchsorted(np.cumsum(weights), rng.random(), side='right'))
    return min(index, len(weights) - 1)


def sample_noise_op(cfg, rng):
    group = GROUPS[_draw(cfg.group_weights, rng)]
    if group == 'cross':
        return 'cross_sub'
    op = OPS[_draw(cfg.op_weights[group], rng)]
    return f"{'V' if group == 'vowel' else 'C'}_{op}"


def _positions(word, syllable, cls):
    return [i for i in range(syllable.start, syllable.end) if letter_class(word, i) == cls]


def _cross_directions(word, syllable):
    return [cls for cls in ('V', 'C') if _positions(word, syllable, cls)]


def _is_feasible(word, syllable, kind):
    if kind == 'cross_sub':
        return bool(_cross_directions(word, syllable))
    cls, op = kind.split('_')
    return op == 'ins' or bool(_positions(word, syllable, cls))


def _pick(items, rng):
    return items[int(rng.integers(len(items)))]


def _realize(word, syllable, syllable_index, kind, rng, direction=None):
    """Concrete event for ``kind`` inside ``syllable``, or None when infeasible."""
    if kind == 'cross_sub':
        source = direction or ('V' if rng.random() < 0.5 else 'C')
        positions = _positions(word, syllable, source)
        if not positions:
            return None
        position = _pick(positions, rng)
        original = word[position].upper()
        alphabet = [c for c in (CONSONANTS if source == 'V' else VOWELS) if c != original]
        return NoiseEvent(kind, position, syllable_index, _pick(alphabet, rng), original)
    cls, op = kind.split('_')
    alphabet = VOWELS if cls == 'V' else CONSONANTS
    if op == 'ins':
        position = syllable.start + int(rng.integers(syllable.end - syllable.start + 1))
        return NoiseEvent(kind, position, syllable_index, _pick(alphabet, rng))
    positions = _positions(word, syllable, cls)
    if not positions:
        return None
    position = _pick(positions, rng)
    original = word[position].upper()
    if op == 'del':
        return NoiseEvent(kind, position, syllable_index, None, original)
    choices = [c for c in alphabet if c != original]
    return NoiseEvent(kind, position, syllable_index, _pick(choices, rng), original)


def apply_syn_noise(word, cfg, rng):
    """One syllable-bounded edit of ``word``; ``(word, None)`` when no edit is possible."""
    if len(word) < 2:
        return word, None
    segmentation = syllabify(word)
    syllable_index = int(rng.integers(len(segmentation.syllables)))
    syllable = segmentation.syllables[syllable_index]
    for _ in range(MAX_RESAMPLES):
        event = _realize(word, syllable, syllable_index, sample_noise_op(cfg, rng), rng)
        if event is not None:
            return event.apply(word), event
    feasible = [kind for kind in SYN_KINDS if _is_feasible(word, syllable, kind)]
    if not feasible:
        return word, None
    kind = _pick(feasible, rng)
    direction = _pick(_cross_directions(word, syllable), rng) if kind == 'cross_sub' else None
    event = _realize(word, syllable, syllable_index, kind, rng, direction)
    return event.apply(word), event


class MisspellingTable:
    """Correct word to its known misspellings; keys and variants are uppercased."""

    def __init__(self, pairs=()):
        self.map = {}
        for correct, misspelling in pairs:
            self.add(correct, misspelling)

    def add(self, correct, misspelling):
        correct, misspelling = normalize_word(correct), normalize_word(misspelling)
        if not correct or not misspelling or correct == misspelling:
            return
        variants = self.map.setdefault(correct, [])
        if misspelling not in variants:
            variants.append(misspelling)

    def __contains__(self, word):
        return normalize_word(word) in self.map

    def __len__(self):
        return len(self.map)

    def variants(self, word):
        return list(self.map.get(normalize_word(word), []))


def parse_misspelling_table(path):
    """Read ``correct<TAB>misspelling`` lines."""
    path = Path(path)
    table = MisspellingTable()
    skipped = 0
    for line in path.read_text(encoding='utf-8').splitlines():
        if not line.strip() or line.startswith('#'):
            continue
        parts = line.split('\t')
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            skipped += 1
            continue
        table.add(parts[0].strip(), parts[1].strip())
    if skipped:
        logger.warning(f'Skipped {skipped} malformed misspelling lines in {path}')
    logger.info(f'Loaded misspellings for {len(table)} words from {path}')
    return table


def apply_nat_noise(word, table, rng):
    variants = table.variants(word)
    if not variants:
        return word
    return _match_case(_pick(variants, rng), word)


def _nat_event(clean, noisy):
    position = len(os.path.commonprefix([clean.upper(), noisy.upper()]))
    position = min(position, len(clean) - 1)
    syllable_index = syllabify(clean).index_of(position)
    return NoiseEvent(NAT_KIND, position, syllable_index, noisy.upper(), None)


@dataclass(frozen=True)
class EventRecord:
    example_index: int
    sentence_id: int
    clean_word: str
    noisy_word: str
    kind: str
    position: int
    syllable_index: int
    replacement: str
    original: str
    seed: int

    @property
    def event(self):
        return NoiseEvent(self.kind, self.position, self.syllable_index, self.replacement, self.original)

    def to_dict(self):
        return asdict(self)


@dataclass
class CorruptionResult:
    examples: list
    events: list
    infeasible: int = 0

    @property
    def modified(self):
        return len(self.events)

    def histogram(self):
        return kind_histogram(self.events)


def corrupt_corpus(examples, method, cfg, table=None):
    """Corrupt each target word with probability ``cfg.p``; context words are untouched.

    Example ``i`` draws from its own stream ``(seed, 'corrupt', i)`` so any split of
    the corpus across workers reproduces the serial result.
    """
    if method not in ('nat', 'syn'):
        raise ConfigurationError(f'unknown noise method {method!r}; expected nat or syn')
    if method == 'nat' and table is None:
        raise ConfigurationError('nat noise needs a misspelling table')
    corrupted = []
    events = []
    infeasible = 0
    for i, example in enumerate(examples):
        if cfg.p <= 0.0:
            corrupted.append(example)
            continue
        rng = rng_stream(cfg.seed, 'corrupt', i)
        if rng.random() >= cfg.p:
            corrupted.append(example)
            continue
        clean = example.target_word
        if method == 'syn':
            noisy, event = apply_syn_noise(clean, cfg, rng)
            if event is None:
                infeasible += 1
        else:
            noisy = apply_nat_noise(clean, table, rng)
            event = _nat_event(clean, noisy) if noisy != clean else None
        if event is None:
            corrupted.append(example)
            continue
        corrupted.append(example.with_target(noisy))
        events.append(EventRecord(
            example_index=i,
            sentence_id=example.sentence_id,
            clean_word=clean,
            noisy_word=noisy,
            kind=event.kind,
            position=event.position,
            syllable_index=event.syllable_index,
            replacement=event.replacement,
            original=event.original,
            seed=cfg.seed,
        ))
    if infeasible:
        logger.warning(f'{infeasible} target words admitted no syllable-bounded edit and were kept clean')
    logger.info(f'{method} noise modified {len(events)} of {len(examples)} target words (p={cfg.p})')
    return CorruptionResult(examples=corrupted, events=events, infeasible=infeasible)


def kind_histogram(events):
    counts = Counter(e.kind for e in events)
    return {kind: counts[kind] for kind in sorted(counts)}


def write_event_log(path, events):
    with open(path, 'w', encoding='utf-8') as fh:
        for record in events:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + '\n')


def read_event_log(path):
    with open(path, encoding='utf-8') as fh:
        return [EventRecord(**json.loads(line)) for line in fh if line.strip()]
