"""Deterministic synthetic corpora for desk-scale runs.

Pronunciations come from a small letter-to-ARPAbet rule set, so a model can learn the
mapping exactly from a few hundred words. Misspellings in the generated table keep the
rule-based pronunciation unchanged (apart from a couple of classic real-world ones).
"""
import logging
from pathlib import Path

from .seeding import rng_stream

logger = logging.getLogger(__name__)

DIGRAPHS = {
    'CH': ('CH',), 'SH': ('SH',), 'TH': ('TH',), 'PH': ('F',), 'NG': ('NG',), 'CK': ('K',),
    'QU': ('K', 'W'), 'EE': ('IY',), 'EA': ('IY',), 'OO': ('UW',), 'AI': ('EY',), 'OA': ('OW',),
    'OU': ('AW',),
}
LETTERS = {
    'A': ('AE',), 'B': ('B',), 'C': ('K',), 'D': ('D',), 'E': ('EH',), 'F': ('F',), 'G': ('G',),
    'H': ('HH',), 'I': ('IH',), 'J': ('JH',), 'K': ('K',), 'L': ('L',), 'M': ('M',), 'N': ('N',),
    'O': ('AA',), 'P': ('P',), 'Q': ('K',), 'R': ('R',), 'S': ('S',), 'T': ('T',), 'U': ('AH',),
    'V': ('V',), 'W': ('W',), 'X': ('K', 'S'), 'Z': ('Z',),
}
VOWEL_PHONEMES = frozenset({'AE', 'EH', 'IH', 'AA', 'AH', 'IY', 'UW', 'EY', 'OW', 'AW'})

ONSETS = ('B', 'D', 'F', 'G', 'K', 'L', 'M', 'N', 'P', 'R', 'S', 'T', 'V', 'Z', 'CH', 'SH', 'TH',
          'BR', 'TR', 'ST', 'PL', 'GR', 'C', 'W', 'J')
NUCLEI = ('A', 'E', 'I', 'O', 'U', 'EE', 'OO', 'AI', 'OA')
CODAS = ('', '', '', 'N', 'T', 'L', 'M', 'S', 'ND', 'NG', 'CK', 'LL', 'SS', 'R', 'X', 'C')
FILLERS = ('THE', 'OF', 'AND', 'TO', 'IN', 'WAS', 'IS', 'ON', 'WITH', 'FOR')
CLASSIC_MISSPELLINGS = (('OCCURRED', 'OCCURED'), ('PRONUNCIATION', 'PRONOUNCIATION'))


def pronounce(word):
    """Rule-based ARPAbet: digraphs first, doubled letters collapse, first vowel stressed."""
    word = word.upper().replace("'", '')
    phonemes = []
    i = 0
    while i < len(word):
        if i + 1 < len(word) and word[i] == word[i + 1] and word[i] not in 'EO':
            i += 1
            continue
        pair = word[i:i + 2]
        if pair in DIGRAPHS:
            phonemes.extend(DIGRAPHS[pair])
            i += 2
            continue
        letter = word[i]
        if letter == 'Y':
            phonemes.append('Y' if i == 0 else 'IY')
        else:
            phonemes.extend(LETTERS[letter])
        i += 1
    stressed = []
    seen_vowel = False
    for p in phonemes:
        if p in VOWEL_PHONEMES:
            stressed.append(p + ('0' if seen_vowel else '1'))
            seen_vowel = True
        else:
            stressed.append(p)
    return tuple(stressed)


def generate_words(count, seed):
    rng = rng_stream(seed, 'toy', 'words')
    words = []
    seen = set(FILLERS) | {w for w, _ in CLASSIC_MISSPELLINGS}
    while len(words) < count:
        syllables = int(rng.integers(1, 4))
        word = ''.join(
            ONSETS[rng.integers(len(ONSETS))] + NUCLEI[rng.integers(len(NUCLEI))] + CODAS[rng.integers(len(CODAS))]
            for _ in range(syllables)
        )
        if word not in seen and len(word) <= 14:
            seen.add(word)
            words.append(word)
    return words


def reduced_variant(phonemes):
    """Second pronunciation with the last unstressed vowel reduced to AH0."""
    out = list(phonemes)
    for i in range(len(out) - 1, -1, -1):
        if out[i].endswith('0') and out[i] != 'AH0':
            out[i] = 'AH0'
            return tuple(out)
    return None


def misspellings_for(word):
    """Spelling variants with the same rule-based pronunciation (C/K swaps, doubled letters)."""
    target = pronounce(word)
    candidates = set()
    for i, letter in enumerate(word):
        if letter == 'C':
            candidates.add(word[:i] + 'K' + word[i + 1:])
        elif letter == 'K':
            candidates.add(word[:i] + 'C' + word[i + 1:])
        if i + 1 < len(word) and word[i + 1] == letter:
            candidates.add(word[:i] + word[i + 1:])
        elif letter not in 'AEIOUHWYXQ':
            candidates.add(word[:i] + letter + word[i:])
    return sorted(c for c in candidates if c != word and pronounce(c) == target)


def lexicon_lines(words):
    lines = [';;; rg2p synthetic lexicon (rule-based pronunciations)']
    for n, word in enumerate(words):
        phonemes = pronounce(word)
        lines.append(f"{word}  {' '.join(phonemes)}")
        variant = reduced_variant(phonemes) if n % 10 == 9 else None
        if variant:
            lines.append(f"{word}(1)  {' '.join(variant)}")
    return lines


def sentence_lines(words, count, rng):
    lines = []
    for _ in range(count):
        length = int(rng.integers(4, 10))
        tokens = [
            FILLERS[rng.integers(len(FILLERS))] if rng.random() < 0.3 else words[rng.integers(len(words))]
            for _ in range(length)
        ]
        text = ' '.join(t.lower() for t in tokens)
        lines.append(text[0].upper() + text[1:] + '.')
    return lines


def build_toy_corpus(out_dir, words=500, sentences=2000, seed=0, noisy_sentences=200):
    """Write lexicon, sentences, misspelling table and a noisy/corrected pair to ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocabulary = [w for w, _ in CLASSIC_MISSPELLINGS] + generate_words(max(words - len(CLASSIC_MISSPELLINGS), 0), seed)
    vocabulary = vocabulary[:words]

    table = {}
    for word in vocabulary:
        variants = misspellings_for(word)
        if variants:
            table[word] = variants[:3]
    for correct, wrong in CLASSIC_MISSPELLINGS:
        variants = table.setdefault(correct, []) if correct in vocabulary else None
        if variants is not None and wrong not in variants:
            variants.insert(0, wrong)

    rng = rng_stream(seed, 'toy', 'sentences')
    corrected = sentence_lines(vocabulary, sentences, rng)
    noisy_rng = rng_stream(seed, 'toy', 'noisy')
    noisy_pairs = []
    for line in corrected:
        if len(noisy_pairs) >= noisy_sentences:
            break
        tokens = line.rstrip('.').split()
        hits = [k for k, t in enumerate(tokens) if t.upper() in table]
        if not hits:
            continue
        k = hits[int(noisy_rng.integers(len(hits)))]
        variants = table[tokens[k].upper()]
        wrong = variants[int(noisy_rng.integers(len(variants)))]
        tokens[k] = wrong.capitalize() if tokens[k][0].isupper() else wrong.lower()
        noisy_pairs.append((' '.join(tokens) + '.', line))

    paths = {
        'lexicon': out_dir / 'lexicon.txt',
        'sentences': out_dir / 'sentences.txt',
        'misspellings': out_dir / 'misspellings.tsv',
        'noisy': out_dir / 'noisy.txt',
        'corrected': out_dir / 'corrected.txt',
    }
    paths['lexicon'].write_text('\n'.join(lexicon_lines(vocabulary)) + '\n', encoding='latin-1')
    paths['sentences'].write_text('\n'.join(corrected) + '\n', encoding='utf-8')
    paths['misspellings'].write_text(
        ''.join(f'{word}\t{wrong}\n' for word in sorted(table) for wrong in table[word]), encoding='utf-8')
    paths['noisy'].write_text(''.join(n + '\n' for n, _ in noisy_pairs), encoding='utf-8')
    paths['corrected'].write_text(''.join(c + '\n' for _, c in noisy_pairs), encoding='utf-8')
    logger.info(f'Toy corpus in {out_dir}: {len(vocabulary)} words, {len(corrected)} sentences, '
                f'{len(table)} misspelled words, {len(noisy_pairs)} noisy lines')
    return paths
