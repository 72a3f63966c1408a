"""Pronunciation dictionaries, sentence corpora and vocabularies.

The lexicon format is CMUdict 0.7b: ``WORD  PH1 PH2 ...`` per line, an optional
``(n)`` variant suffix on the word and ``;;;`` comment lines.
"""
import logging
import re
import string
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import AlignmentError, ArgumentError, EmptyCorpusError, EmptyLexiconError

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = '<pad>', '<s>', '</s>', '<unk>'
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
RESERVED = (PAD, BOS, EOS, UNK)

LEVELS = ('grapheme', 'phoneme', 'word')

_ENTRY_RE = re.compile(r'^(?P<word>[^\s(]+)(?:\((?P<variant>\d+)\))?\s+(?P<phonemes>\S.*)$')
_PHONEME_RE = re.compile(r'^[A-Z]+[0-2]?$')
_NON_WORD_RE = re.compile(r"[^A-Z']")
_EDGE_PUNCTUATION = string.punctuation.replace("'", '') + '“”‘’'


def normalize_word(token):
    """Uppercase and keep only letters and apostrophes."""
    return _NON_WORD_RE.sub('', token.upper())


def tokenize_sentence(line):
    tokens = []
    for raw in line.split():
        word = normalize_word(raw.strip(_EDGE_PUNCTUATION))
        if word.strip("'"):
            tokens.append(word)
    return tokens


@dataclass(frozen=True)
class LexiconEntry:
    word: str
    variant: int
    phonemes: tuple

    def __post_init__(self):
        if not self.word:
            raise ArgumentError('lexicon entry has an empty word')
        if not self.phonemes:
            raise ArgumentError(f'lexicon entry {self.word} has no phonemes')
        if self.variant < 0:
            raise ArgumentError(f'lexicon entry {self.word} has negative variant {self.variant}')


@dataclass(frozen=True)
class SentenceExample:
    """One target word ``words[target_index]`` with its sentence as context.

    ``clean_word`` is the uncorrupted spelling the phonemes belong to; it equals the
    target word unless noise or a real-world misspelling replaced it. ``accepted``
    lists every pronunciation scored as correct (all lexicon variants).
    """

    words: tuple
    target_index: int
    phonemes: tuple
    sentence_id: int = 0
    clean_word: str = ''
    accepted: tuple = field(default=())

    def __post_init__(self):
        if not 0 <= self.target_index < len(self.words):
            raise ArgumentError(
                f'target index {self.target_index} outside sentence of {len(self.words)} words'
            )
        if not self.clean_word:
            object.__setattr__(self, 'clean_word', self.words[self.target_index])
        if not self.accepted:
            object.__setattr__(self, 'accepted', (tuple(self.phonemes),))

    @property
    def target_word(self):
        return self.words[self.target_index]

    def with_target(self, word):
        words = list(self.words)
        words[self.target_index] = word
        return SentenceExample(
            words=tuple(words),
            target_index=self.target_index,
            phonemes=self.phonemes,
            sentence_id=self.sentence_id,
            clean_word=self.clean_word,
            accepted=self.accepted,
        )


class Lexicon:
    """Words mapped to their pronunciation variants, lowest variant first."""

    def __init__(self, entries):
        self._variants = {}
        for entry in entries:
            self._variants.setdefault(entry.word, []).append(entry)
        for word, variants in self._variants.items():
            variants.sort(key=lambda e: e.variant)

    def __contains__(self, word):
        return normalize_word(word) in self._variants

    def __len__(self):
        return len(self._variants)

    def __iter__(self):
        return iter(self._variants)

    def pronunciations(self, word):
        return [e.phonemes for e in self._variants.get(normalize_word(word), [])]

    def primary(self, word):
        variants = self._variants.get(normalize_word(word))
        if not variants:
            raise KeyError(word)
        return variants[0].phonemes

    def primary_entries(self):
        """Variant-0 entries, one per word, in first-appearance order."""
        return [variants[0] for variants in self._variants.values()]

    def entries(self):
        return [e for variants in self._variants.values() for e in variants]


class Vocab:
    """Sorted symbol inventory with ids 0..3 reserved for PAD, BOS, EOS and UNK."""

    def __init__(self, symbols, level):
        if level not in LEVELS:
            raise ArgumentError(f'unknown vocabulary level {level!r}')
        self.level = level
        self.symbols = list(RESERVED) + sorted(set(symbols) - set(RESERVED))
        self.lookup = {symbol: i for i, symbol in enumerate(self.symbols)}

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, symbol):
        return symbol in self.lookup

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.level == other.level and self.symbols == other.symbols

    def __repr__(self):
        return f'Vocab({self.level}, size={len(self)})'

    def encode(self, sequence, bos=False, eos=False):
        ids = [self.lookup.get(symbol, UNK_ID) for symbol in sequence]
        if bos:
            ids.insert(0, BOS_ID)
        if eos:
            ids.append(EOS_ID)
        return ids

    def decode(self, ids):
        """Symbols for ``ids``, dropping PAD/BOS and stopping at the first EOS."""
        out = []
        for i in ids:
            i = int(i)
            if i == EOS_ID:
                break
            if i in (PAD_ID, BOS_ID):
                continue
            out.append(self.symbols[i] if 0 <= i < len(self.symbols) else UNK)
        return out

    def decode_text(self, ids):
        joiner = '' if self.level == 'grapheme' else ' '
        return joiner.join(self.decode(ids))

    def to_dict(self):
        return {'level': self.level, 'symbols': self.symbols[len(RESERVED):]}

    @classmethod
    def from_dict(cls, data):
        return cls(data['symbols'], data['level'])


def parse_lexicon_lines(lines, source='<lines>'):
    entries = []
    skipped = 0
    for line in lines:
        line = line.strip()
        if not line or line.startswith(';;;'):
            continue
        match = _ENTRY_RE.match(line)
        if match is None:
            skipped += 1
            continue
        word = normalize_word(match.group('word'))
        phonemes = tuple(match.group('phonemes').split())
        if not word.strip("'") or not all(_PHONEME_RE.match(p) for p in phonemes):
            skipped += 1
            continue
        variant = int(match.group('variant') or 0)
        entries.append(LexiconEntry(word=word, variant=variant, phonemes=phonemes))
    if skipped:
        logger.warning(f'Skipped {skipped} malformed lexicon lines in {source}')
    if not entries:
        raise EmptyLexiconError(f'no valid lexicon entries in {source}')
    return entries


def parse_lexicon(path):
    path = Path(path)
    text = path.read_text(encoding='latin-1')
    entries = parse_lexicon_lines(text.splitlines(), source=str(path))
    logger.info(f'Parsed {len(entries)} lexicon entries from {path}')
    return entries


def sentence_examples(words, lexicon, sentence_id=0):
    words = tuple(words)
    return [
        SentenceExample(
            words=words,
            target_index=k,
            phonemes=lexicon.primary(word),
            sentence_id=sentence_id,
            accepted=tuple(lexicon.pronunciations(word)),
        )
        for k, word in enumerate(words)
        if word in lexicon
    ]


def load_sentences(path, lexicon):
    """One example per in-lexicon word of every sentence line."""
    path = Path(path)
    lines = [line for line in path.read_text(encoding='utf-8').splitlines() if line.strip()]
    if not lines:
        raise EmptyCorpusError(f'sentence corpus {path} is empty')
    examples = []
    for sentence_id, line in enumerate(lines):
        examples.extend(sentence_examples(tokenize_sentence(line), lexicon, sentence_id))
    logger.info(f'Loaded {len(examples)} sentence examples from {len(lines)} lines of {path}')
    return examples


@dataclass
class NoisyTestSet:
    examples: list
    skipped_lines: int = 0


def pair_noisy_corrected(noisy_path, corrected_path, lexicon):
    """Test examples whose input is the noisy spelling and target the corrected word's phonemes."""
    noisy_lines = Path(noisy_path).read_text(encoding='utf-8').splitlines()
    corrected_lines = Path(corrected_path).read_text(encoding='utf-8').splitlines()
    if len(noisy_lines) != len(corrected_lines):
        raise AlignmentError(
            f'{noisy_path} has {len(noisy_lines)} lines but {corrected_path} has {len(corrected_lines)}'
        )
    examples = []
    skipped = 0
    for sentence_id, (noisy_line, corrected_line) in enumerate(zip(noisy_lines, corrected_lines)):
        noisy = tuple(tokenize_sentence(noisy_line))
        corrected = tokenize_sentence(corrected_line)
        if len(noisy) != len(corrected):
            skipped += 1
            continue
        for k, word in enumerate(corrected):
            if word not in lexicon:
                continue
            examples.append(SentenceExample(
                words=noisy,
                target_index=k,
                phonemes=lexicon.primary(word),
                sentence_id=sentence_id,
                clean_word=word,
                accepted=tuple(lexicon.pronunciations(word)),
            ))
    if skipped:
        logger.warning(f'Skipped {skipped} noisy/corrected lines with mismatched word counts')
    return NoisyTestSet(examples=examples, skipped_lines=skipped)


def build_vocab(source, level):
    """Vocabulary over ``source`` (lexicon entries and/or sentence examples)."""
    if level not in LEVELS:
        raise ArgumentError(f'unknown vocabulary level {level!r}')
    symbols = set()
    for item in source:
        if isinstance(item, LexiconEntry):
            words, phonemes = (item.word,), item.phonemes
        elif isinstance(item, SentenceExample):
            words, phonemes = item.words, item.phonemes
        else:
            words, phonemes = (str(item),), ()
        if level == 'grapheme':
            for word in words:
                symbols.update(word)
        elif level == 'phoneme':
            symbols.update(phonemes)
        else:
            symbols.update(words)
    if not symbols:
        raise ArgumentError(f'cannot build a {level} vocabulary from empty input')
    return Vocab(symbols, level)


def context_window(words, k, length):
    """The ``length`` words on each side of ``words[k]``, PAD-filled at sentence edges."""
    if length <= 0:
        return ()
    left = list(words[max(0, k - length):k])
    right = list(words[k + 1:k + 1 + length])
    left = [PAD] * (length - len(left)) + left
    right = right + [PAD] * (length - len(right))
    return tuple(left + right)
