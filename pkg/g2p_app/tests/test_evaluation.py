import itertools
import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from g2p_app.evaluation import (
    CATEGORIES, PERAccumulator, WordResult, aggregate_report, align, category_for_event, classify_failure,
    closest_variant, edit_distance, evaluate_model, export_attention, is_correct, phoneme_error_rate,
    read_attention_export, strip_stress, word_error_rate, write_report,
)
from g2p_app.exceptions import AlignmentError, ArgumentError
from g2p_app.lexicon import SentenceExample
from g2p_app.noise import EventRecord, NoiseConfig, corrupt_corpus

from .factories import tiny_corpus, tiny_model


def _result(index, clean, noisy, reference, hypothesis, accepted=None):
    accepted = accepted or (reference,)
    return WordResult(index=index, clean_word=clean, input_word=noisy, reference=reference, accepted=accepted,
                      hypothesis=hypothesis, correct=is_correct(accepted, hypothesis),
                      distance=edit_distance(reference, hypothesis))


def _cheapest_edit_path(ref, hyp):
    """Walks every edit path between the two sequences without memoization."""
    if not ref or not hyp:
        return len(ref) + len(hyp)
    return min(
        _cheapest_edit_path(ref[1:], hyp[1:]) + (ref[0] != hyp[0]),
        _cheapest_edit_path(ref[1:], hyp) + 1,
        _cheapest_edit_path(ref, hyp[1:]) + 1,
    )


def _replay(ref, hyp, ops):
    out, consumed = [], []
    for op, i, j in ops:
        if op in ('match', 'sub'):
            assert (ref[i] == hyp[j]) == (op == 'match')
            out.append(hyp[j])
            consumed.append(i)
        elif op == 'ins':
            out.append(hyp[j])
        else:
            consumed.append(i)
    assert consumed == list(range(len(ref)))
    return tuple(out)


class ScoringTests(SimpleTestCase):
    def test_alignment_ops(self):
        ops = align(('K', 'AE1', 'T'), ('K', 'AA1', 'T', 'S'))

        self.assertEqual([op for op, _, _ in ops], ['match', 'sub', 'match', 'ins'])
        self.assertEqual(edit_distance('KITTEN', 'SITTING'), 3)
        self.assertEqual(edit_distance((), ('A',)), 1)

    def test_phoneme_error_rate(self):
        self.assertAlmostEqual(phoneme_error_rate(('DH', 'AE1', 'N'), ('DH', 'EH1', 'N')), 100.0 / 3)
        self.assertEqual(phoneme_error_rate(('A',), ('B', 'C', 'D')), 300.0)
        with self.assertRaises(ArgumentError):
            phoneme_error_rate((), ('A',))

    def test_corpus_per_is_pooled(self):
        accumulator = PERAccumulator()
        accumulator.add(('A', 'B'), ('A', 'C'))
        accumulator.add(('A', 'B', 'C', 'D', 'E', 'F'), ('A', 'B', 'C', 'D', 'E', 'F'))

        self.assertAlmostEqual(accumulator.value, 12.5)

    def test_word_error_rate_accepts_any_variant(self):
        refs = [[('R', 'IY1', 'D'), ('R', 'EH1', 'D')], ('K', 'AE1', 'T')]

        self.assertEqual(word_error_rate(refs, [('R', 'EH1', 'D'), ('K', 'AE1', 'T')]), 0.0)
        self.assertEqual(word_error_rate(refs, [('R', 'EH1', 'D'), ('K', 'AE0', 'T')]), 50.0)
        self.assertEqual(word_error_rate(refs, [('R', 'EH1', 'D'), ('K', 'AE0', 'T')], stress_insensitive=True), 0.0)
        with self.assertRaises(AlignmentError):
            word_error_rate(refs, [])

    def test_stress_and_closest_variant(self):
        self.assertEqual(strip_stress(('AH0', 'B', 'AW1')), ('AH', 'B', 'AW'))
        self.assertEqual(closest_variant([('R', 'IY1', 'D'), ('R', 'EH1', 'D')], ('R', 'EH1', 'T')), ('R', 'EH1', 'D'))

    def test_matches_exhaustive_edit_paths_on_short_sequences(self):
        sequences = [s for k in range(5) for s in itertools.product('abc', repeat=k)]
        accumulator = PERAccumulator()
        errors = length = 0

        for ref, hyp in itertools.product(sequences, repeat=2):
            cheapest = _cheapest_edit_path(ref, hyp)
            self.assertEqual(edit_distance(ref, hyp), cheapest, (ref, hyp))
            self.assertEqual(_replay(ref, hyp, align(ref, hyp)), hyp)
            if ref:
                self.assertAlmostEqual(phoneme_error_rate(ref, hyp), 100.0 * cheapest / len(ref))
                accumulator.add(ref, hyp)
                errors += cheapest
                length += len(ref)

        self.assertEqual(len(sequences), 121)
        self.assertAlmostEqual(accumulator.value, 100.0 * errors / length)

    def test_edit_distance_is_a_metric(self):
        rng = np.random.default_rng(17)

        def sample():
            return tuple(rng.choice(list('abcd'), size=int(rng.integers(7))))

        for _ in range(300):
            a, b, c = sample(), sample(), sample()
            self.assertEqual(edit_distance(a, b), edit_distance(b, a))
            self.assertEqual(edit_distance(a, b) == 0, a == b)
            self.assertLessEqual(edit_distance(a, c), edit_distance(a, b) + edit_distance(b, c))
            self.assertEqual(edit_distance(a, b), _cheapest_edit_path(a, b))


class FailureTaxonomyTests(SimpleTestCase):
    def test_classic_categories(self):
        self.assertEqual(classify_failure('than', 'then').category, 'V-V')
        self.assertEqual(classify_failure('neighbour', 'neighbor').category, 'V-_')
        self.assertEqual(classify_failure('lose', 'loose').category, '_-V')
        self.assertEqual(classify_failure('cat', 'cat').category, 'Base')
        self.assertEqual(classify_failure('cat', 'kat').category, 'C-C')
        self.assertEqual(classify_failure('cat', 'at').category, 'C-_')
        self.assertEqual(classify_failure('cat', 'cast').category, '_-C')
        self.assertEqual(classify_failure('cat', 'cet').category, 'V-V')
        self.assertEqual(classify_failure('cat', 'cit').category, 'V-V')
        self.assertEqual(classify_failure('cat', 'czt').category, 'Cross')
        self.assertIsNone(classify_failure('cat', 'kat', is_conversion_wrong=False))

    def test_multiple_edits_flagged(self):
        failure = classify_failure('pronunciation', 'pronounciashun')

        self.assertTrue(failure.multi_edit)
        self.assertIn(failure.category, CATEGORIES)

    def test_inferred_categories_agree_with_logged_events(self):
        words = ['WINDOW', 'PRONUNCIATION', 'THAN', 'NEIGHBOUR', 'STRENGTHS', 'YELLOW', 'CAT', 'MATTER',
                 'BOOKKEEPER', 'SENTENCE', 'CONTEXT', 'LETTER', 'GYM', 'MYTH', 'RHYTHM', 'SYZYGY', 'CRY']
        examples = [SentenceExample(words=(w,), target_index=0, phonemes=('X',), sentence_id=i)
                    for i, w in enumerate(words * 100)]

        result = corrupt_corpus(examples, 'syn', NoiseConfig(p=1.0, seed=21))
        disagreements = [
            (record.clean_word, record.noisy_word, record.kind)
            for record in result.events
            if classify_failure(record.clean_word, record.noisy_word).category != category_for_event(record.kind)
        ]

        self.assertEqual(len(result.events), len(examples))
        self.assertEqual([r for r in result.events if edit_distance(r.clean_word, r.noisy_word) != 1], [])
        self.assertEqual(disagreements, [])


class ReportTests(SimpleTestCase):
    def setUp(self):
        self.results = [
            _result(0, 'CAT', 'CAT', ('K', 'AE1', 'T'), ('K', 'AE1', 'T')),
            _result(1, 'THAN', 'THEN', ('DH', 'AE1', 'N'), ('DH', 'EH1', 'N')),
            _result(2, 'DOG', 'DOG', ('D', 'AO1', 'G'), ('D', 'AO1')),
            _result(3, 'LOSE', 'LOOSE', ('L', 'UW1', 'Z'), ('L', 'UW1', 'S')),
        ]

    def test_aggregate_counts_and_rates(self):
        report = aggregate_report(self.results)

        self.assertEqual(report.total_words, 4)
        self.assertEqual(report.failures, 3)
        self.assertEqual(report.wer, 75.0)
        self.assertAlmostEqual(report.per, 100.0 * 3 / 12)
        self.assertEqual(report.counts['Base'], 1)
        self.assertEqual(report.counts['V-V'], 1)
        self.assertEqual(report.counts['_-V'], 1)
        self.assertEqual(sum(report.counts.values()), report.failures)
        self.assertEqual(report.noisy_words, 2)
        self.assertAlmostEqual(report.group_wer['vowel'], 50.0)
        self.assertAlmostEqual(report.group_shares['vowel'], 1.0)

    def test_logged_events_override_inference(self):
        event = EventRecord(example_index=1, sentence_id=0, clean_word='THAN', noisy_word='THEN', kind='cross_sub',
                            position=2, syllable_index=0, replacement='E', original='A', seed=0)

        report = aggregate_report(self.results, event_log=[event])

        self.assertEqual(report.counts['Cross'], 1)
        self.assertEqual(report.counts['V-V'], 0)

    def test_order_of_results_and_events_does_not_matter(self):
        events = [
            EventRecord(example_index=1, sentence_id=0, clean_word='THAN', noisy_word='THEN', kind='V_sub',
                        position=2, syllable_index=0, replacement='E', original='A', seed=0),
            EventRecord(example_index=3, sentence_id=2, clean_word='LOSE', noisy_word='LOOSE', kind='V_ins',
                        position=2, syllable_index=0, replacement='O', original=None, seed=0),
        ]
        expected = aggregate_report(self.results, event_log=events)
        rng = np.random.default_rng(4)

        for _ in range(10):
            order = rng.permutation(len(self.results))
            shuffled = [self.results[i] for i in order]

            self.assertEqual(aggregate_report(shuffled, event_log=events[::-1]), expected)

    def test_empty_results(self):
        report = aggregate_report([])

        self.assertEqual((report.wer, report.per, report.total_words), (0.0, 0.0, 0))

    def test_write_report_schema(self):
        report = aggregate_report(self.results, metadata={'dataset': 'toy'})
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'report.json'
            write_report(path, report)
            data = json.loads(path.read_text(encoding='utf-8'))

        self.assertEqual(data['schema_version'], 1)
        self.assertEqual(data['metadata'], {'dataset': 'toy'})
        self.assertEqual(data['metrics']['wer'], 75.0)
        self.assertEqual(set(data['metrics']['counts']), set(CATEGORIES))


class ModelEvaluationTests(SimpleTestCase):
    def setUp(self):
        _, _, self.d_s, self.vocabs = tiny_corpus()
        self.model = tiny_model(self.vocabs, max_decode_len=5)

    def test_evaluate_model_produces_one_result_per_word(self):
        results, traces = evaluate_model(self.model, self.d_s[:4], self.vocabs, beam=2, collect_traces=True)

        self.assertEqual(len(results), 4)
        self.assertEqual(len(traces), 4)
        self.assertEqual(results[1].input_word, self.d_s[1].target_word)
        for result in results:
            self.assertLessEqual(len(result.hypothesis), 5)
            self.assertEqual(result.correct, is_correct(result.accepted, result.hypothesis))

    def test_greedy_and_context_free_decoding(self):
        greedy, _ = evaluate_model(self.model, self.d_s[:3], self.vocabs, use_context=False, greedy=True)
        beam_one, _ = evaluate_model(self.model, self.d_s[:3], self.vocabs, use_context=False, beam=1)

        self.assertEqual([r.hypothesis for r in greedy], [r.hypothesis for r in beam_one])

    def test_attention_export_round_trip(self):
        _, traces = evaluate_model(self.model, self.d_s[:1], self.vocabs, collect_traces=True)
        trace = traces[0]
        with tempfile.TemporaryDirectory() as tmp:
            path = export_attention(trace, Path(tmp) / 'attn.txt', graphemes=list('THE'), phonemes=['DH', 'AH0'])
            parsed = read_attention_export(path)

        self.assertEqual(parsed['graphemes'], ['T', 'H', 'E'])
        self.assertEqual(set(parsed['attention']), {(0, 0), (0, 1)})
        np.testing.assert_allclose(parsed['attention'][(0, 1)], trace.attention['cross'][0][0, 1], rtol=1e-6)
        np.testing.assert_allclose(parsed['attention'][(0, 0)].sum(axis=-1), 1.0, rtol=1e-5)
        self.assertEqual(list(parsed['gates']), [0])

    def test_export_without_trace(self):
        with self.assertRaises(ArgumentError):
            export_attention(None, 'unused.txt')
