import itertools
import math

import numpy as np
from django.test import SimpleTestCase

from g2p_app.exceptions import ConfigurationError, ContextDisabledError, LengthError
from g2p_app.lexicon import BOS_ID, EOS_ID
from g2p_app.network import (
    THETA_S, THETA_W, BaselineTransformer, G2PTransformer, ModelConfig, beam_search_steps, gate,
    greedy_decode_steps,
)
from g2p_app.tensorcore import Tensor, cross_entropy, gradient_check, precision

from .factories import tiny_config

A, B = 4, 5
VOCAB = 6
# per-position (EOS, A, B) probabilities for prefixes without a special case
POSITION_TABLE = [(0.1, 0.6, 0.3), (0.2, 0.3, 0.5), (0.7, 0.2, 0.1), (0.5, 0.3, 0.2), (0.9, 0.06, 0.04)]


def _probabilities(generated):
    if len(generated) == 1 and generated[0] == A:
        return 0.4, 0.3, 0.3
    if len(generated) == 1 and generated[0] == B:
        return 0.9, 0.05, 0.05
    return POSITION_TABLE[len(generated)]


def scripted_step(prefixes):
    rows = []
    for prefix in prefixes:
        row = np.full(VOCAB, math.log(1e-3))
        row[[EOS_ID, A, B]] = np.log(_probabilities(prefix[1:]))
        rows.append(row)
    return np.array(rows)


def exhaustive_best(max_len, alpha):
    best = None
    for k in range(max_len):
        for body in itertools.product((A, B), repeat=k):
            seq = body + (EOS_ID,)
            log_prob = sum(
                math.log(_probabilities(seq[:t])[(EOS_ID, A, B).index(seq[t])]) for t in range(len(seq)))
            key = (-log_prob / len(seq) ** alpha, seq)
            best = key if best is None or key < best else best
    return best[1]


class DecodingTests(SimpleTestCase):
    def test_beam_of_four_matches_exhaustive_search(self):
        for alpha in (0.0, 0.7, 1.0):
            with self.subTest(length_penalty=alpha):
                result = beam_search_steps(scripted_step, beam=4, max_len=5, length_penalty=alpha)

                self.assertEqual(result.tokens, exhaustive_best(5, alpha))
                self.assertFalse(result.truncated)
        self.assertEqual(exhaustive_best(5, 0.7), (B, EOS_ID))

    def test_beam_of_one_is_greedy(self):
        beam = beam_search_steps(scripted_step, beam=1, max_len=5)
        greedy = greedy_decode_steps(scripted_step, max_len=5)

        self.assertEqual(beam.tokens, greedy.tokens)
        self.assertEqual(greedy.tokens, (A, EOS_ID))
        self.assertAlmostEqual(beam.log_prob, greedy.log_prob)

    def test_beam_of_one_is_greedy_on_random_models(self):
        for seed in range(100):
            model = G2PTransformer(tiny_config(), 9, 8, 7, seed=seed)
            graphemes = np.random.default_rng(seed).integers(4, 9, size=3)
            with self.subTest(seed=seed):
                beam = model.beam_search(graphemes, [4, 5], beam=1, max_len=6)
                greedy = model.greedy_decode(graphemes, [4, 5], max_len=6)

                self.assertEqual(beam.tokens, greedy.tokens)
                self.assertEqual(beam.truncated, greedy.truncated)
                self.assertAlmostEqual(beam.log_prob, greedy.log_prob, places=5)

    def test_banned_tokens_never_emitted(self):
        def prefers_banned(prefixes):
            row = np.log([0.5, 0.2, 0.05, 0.2, 0.04, 0.01])
            return np.tile(row, (len(prefixes), 1))

        result = beam_search_steps(prefers_banned, beam=3, max_len=4)

        self.assertTrue(set(result.tokens) <= {EOS_ID, A, B})

    def test_max_len_truncates(self):
        def never_stops(prefixes):
            row = np.log([1e-3, 1e-3, 1e-6, 1e-3, 0.6, 0.4])
            return np.tile(row, (len(prefixes), 1))

        result = beam_search_steps(never_stops, beam=2, max_len=3)
        greedy = greedy_decode_steps(never_stops, max_len=3)

        self.assertTrue(result.truncated)
        self.assertEqual(len(result.tokens), 3)
        self.assertNotIn(EOS_ID, result.tokens)
        self.assertTrue(greedy.truncated)
        self.assertEqual(greedy.tokens, (A, A, A))


class GateTests(SimpleTestCase):
    def test_output_is_convex_mix(self):
        c_bar = Tensor(np.full((1, 1, 2), 3.0))
        n = Tensor(np.full((1, 2, 2), -1.0))
        w = Tensor(np.zeros((2, 2)))

        out, lam = gate(c_bar, n, w, w, Tensor(np.zeros(2)))

        np.testing.assert_allclose(lam.data, 0.5)
        np.testing.assert_allclose(out.data, 1.0)

    def test_gate_stays_in_unit_interval(self):
        rng = np.random.default_rng(0)
        c_bar = Tensor(rng.normal(size=(2, 1, 4)) * 10)
        n = Tensor(rng.normal(size=(2, 3, 4)) * 10)
        w = Tensor(rng.normal(size=(4, 4)))

        _, lam = gate(c_bar, n, w, w, Tensor(np.zeros(4)))

        self.assertTrue(np.all((lam.data >= 0.0) & (lam.data <= 1.0)))

    def test_output_lies_between_context_and_state(self):
        rng = np.random.default_rng(3)
        d = 8
        c_bar = Tensor(rng.normal(scale=10.0, size=(10000, 1, d)).astype(np.float32))
        n = Tensor(rng.normal(scale=10.0, size=(10000, 1, d)).astype(np.float32))
        w_i = Tensor(rng.normal(scale=3.0, size=(d, d)).astype(np.float32))
        w_s = Tensor(rng.normal(scale=3.0, size=(d, d)).astype(np.float32))

        out, lam = gate(c_bar, n, w_i, w_s, Tensor(np.zeros(d, dtype=np.float32)))

        self.assertEqual(out.dtype, np.float32)
        self.assertTrue(np.any(lam.data == 0.0) or np.any(lam.data == 1.0))
        self.assertTrue(np.all(out.data >= np.minimum(c_bar.data, n.data)))
        self.assertTrue(np.all(out.data <= np.maximum(c_bar.data, n.data)))


class ModelConfigTests(SimpleTestCase):
    def test_rejects_invalid_settings(self):
        for overrides in ({'d_model': 10, 'heads': 4}, {'context_length': -1}, {'beam': 0},
                          {'conv_width': 2}, {'decoder_context_layers': 'middle'}, {'layers': 0}):
            with self.subTest(overrides=overrides), self.assertRaises(ConfigurationError):
                ModelConfig(**overrides)

    def test_round_trips_through_dict(self):
        config = tiny_config(context_length=3)

        self.assertEqual(ModelConfig.from_dict({**config.to_dict(), 'unknown': 1}), config)


class G2PTransformerTests(SimpleTestCase):
    grapheme_ids = np.array([[4, 5, 6], [7, 4, 0]])
    decoder_input = np.array([[1, 4, 5], [1, 6, 0]])
    context_ids = np.array([[4, 5], [0, 6]])

    def setUp(self):
        self.model = G2PTransformer(tiny_config(), 9, 8, 7, seed=1)

    def _activate_context(self, model, seed=5):
        """Randomize the zero-initialized context outputs so the context path matters."""
        rng = np.random.default_rng(seed)
        for name in model.partition.theta_s:
            tensor = model.params[name]
            if name.endswith('gate.w_out') or name.endswith('ctx_attn.w_o'):
                tensor.data = rng.normal(scale=0.5, size=tensor.shape).astype(tensor.dtype)

    def test_partition_covers_every_parameter_once(self):
        partition = self.model.partition

        self.assertEqual(set(partition.all), set(self.model.params))
        self.assertFalse(set(partition.theta_w) & set(partition.theta_s))
        self.assertEqual(partition.label('grapheme_embedding'), THETA_W)
        self.assertEqual(partition.label('output.w_o'), THETA_W)
        self.assertEqual(partition.label('context.word_embedding'), THETA_S)
        self.assertEqual(partition.label('decoder.0.gate.w_out'), THETA_S)
        self.assertEqual(partition.label('encoder.0.ctx_attn.w_q'), THETA_S)

    def test_top_only_decoder_context(self):
        model = G2PTransformer(tiny_config(layers=2, decoder_context_layers='top'), 9, 8, 7)

        self.assertNotIn('decoder.0.gate.w_i', model.params)
        self.assertIn('decoder.1.gate.w_i', model.params)

    def test_forward_shapes(self):
        logits = self.model.forward(self.grapheme_ids, self.decoder_input, self.context_ids)

        self.assertEqual(logits.shape, (2, 3, 8))

    def test_context_path_is_silent_at_initialization(self):
        with_context = self.model.forward(self.grapheme_ids, self.decoder_input, self.context_ids)
        without = self.model.forward(self.grapheme_ids, self.decoder_input, use_context=False)

        np.testing.assert_allclose(with_context.data, without.data, atol=1e-6)

    def test_trained_context_changes_output(self):
        self._activate_context(self.model)

        with_context = self.model.forward(self.grapheme_ids, self.decoder_input, self.context_ids)
        without = self.model.forward(self.grapheme_ids, self.decoder_input, use_context=False)

        self.assertGreater(np.abs(with_context.data - without.data).max(), 1e-4)

    def test_context_off_equals_baseline_transformer(self):
        self._activate_context(self.model)

        gated = self.model.forward(self.grapheme_ids, self.decoder_input, self.context_ids, use_context=False)
        plain = BaselineTransformer(self.model).forward(self.grapheme_ids, self.decoder_input)

        np.testing.assert_array_equal(gated.data, plain.data)

    def test_zero_context_length_bypasses_context(self):
        model = G2PTransformer(tiny_config(context_length=0), 9, 8, 7, seed=1)
        baseline = BaselineTransformer(model).forward(self.grapheme_ids, self.decoder_input)

        logits = model.forward(self.grapheme_ids, self.decoder_input, context_ids=np.zeros((2, 0), dtype=int))

        np.testing.assert_array_equal(logits.data, baseline.data)
        with self.assertRaises(ContextDisabledError):
            model.encode_context(np.zeros((1, 2), dtype=int))

    def test_context_encoding_shape(self):
        context = self.model.encode_context(self.context_ids)

        self.assertEqual(context.shape, (2, 2, 8))
        self.assertTrue(np.all(context.data >= 0.0))

    def test_inputs_longer_than_positions_are_rejected(self):
        model = G2PTransformer(tiny_config(max_positions=4), 9, 8, 7)

        with self.assertRaises(LengthError):
            model.forward([[4] * 5], [[1, 4]], use_context=False)

    def test_digest_tracks_only_its_group(self):
        before = self.model.digest(THETA_W)
        self.model.params['context.conv.bias'].data = self.model.params['context.conv.bias'].data + 1.0

        self.assertEqual(self.model.digest(THETA_W), before)

        self.model.params['output.w_o'].data = self.model.params['output.w_o'].data * 2.0
        self.assertNotEqual(self.model.digest(THETA_W), before)

    def test_same_seed_same_parameters(self):
        other = G2PTransformer(tiny_config(), 9, 8, 7, seed=1)

        self.assertEqual(other.digest(THETA_W), self.model.digest(THETA_W))
        self.assertEqual(other.digest(THETA_S), self.model.digest(THETA_S))

    def test_state_dict_round_trip_and_mismatch(self):
        other = G2PTransformer(tiny_config(), 9, 8, 7, seed=2)
        other.load_state_dict(self.model.state_dict())

        self.assertEqual(other.digest(THETA_W), self.model.digest(THETA_W))
        with self.assertRaises(ConfigurationError):
            other.load_state_dict({'grapheme_embedding': np.zeros((9, 8))})

    def test_beam_search_respects_limits(self):
        result = self.model.beam_search([4, 5, 6], [4, 5], beam=3, max_len=6)

        self.assertLessEqual(len(result.tokens), 6)
        self.assertTrue(all(3 < t < 8 or t == EOS_ID for t in result.tokens))
        self.assertEqual(result.truncated, EOS_ID not in result.tokens)

    def test_beam_width_must_be_positive(self):
        for beam in (0, -1):
            with self.subTest(beam=beam), self.assertRaises(ConfigurationError):
                self.model.beam_search([4, 5, 6], [4, 5], beam=beam)

    def test_default_beam_comes_from_the_config(self):
        default = self.model.beam_search([4, 5, 6], [4, 5])
        explicit = self.model.beam_search([4, 5, 6], [4, 5], beam=self.model.config.beam)

        self.assertEqual(default, explicit)

    def test_encoder_forward_matches_encode(self):
        self._activate_context(self.model)
        memory, _, context = self.model.encode(self.grapheme_ids, self.context_ids)

        states = self.model.encoder_forward(self.grapheme_ids, context)

        np.testing.assert_array_equal(states.data, memory.data)

    def test_decoder_forward_matches_forward(self):
        self._activate_context(self.model)
        memory, memory_mask, context = self.model.encode(self.grapheme_ids, self.context_ids)

        logits = self.model.decoder_forward(self.decoder_input, memory, context, memory_mask)
        expected = self.model.forward(self.grapheme_ids, self.decoder_input, self.context_ids)

        np.testing.assert_array_equal(logits.data, expected.data)

    def test_trace_records_gates_and_attention(self):
        self._activate_context(self.model)

        trace = self.model.trace_decode([4, 5, 6], (4, 5, EOS_ID), [4, 5])

        self.assertEqual(len(trace.gates), 1)
        self.assertEqual(trace.gates[0].shape, (1, 3, 8))
        self.assertTrue(np.all((trace.gates[0] > 0) & (trace.gates[0] < 1)))
        self.assertEqual(trace.attention['cross'][0].shape, (1, 2, 3, 3))


class ModelGradientTests(SimpleTestCase):
    def test_full_model_gradients(self):
        with precision(np.float64):
            model = G2PTransformer(
                ModelConfig(layers=1, heads=2, d_model=4, d_ff=4, d_word=4, context_length=1), 6, 7, 5, seed=3)
            rng = np.random.default_rng(11)
            for name in model.partition.theta_s:
                tensor = model.params[name]
                if not np.any(tensor.data):
                    tensor.data = rng.normal(scale=0.5, size=tensor.shape)
            graphemes = np.array([[4, 5]])
            decoder_input = np.array([[BOS_ID, 4, 5]])
            targets = np.array([[4, 5, EOS_ID]])
            context = np.array([[4, 3]])
            params = [model.params[name] for name in model.partition.all]

            def loss():
                return cross_entropy(model.forward(graphemes, decoder_input, context), targets)

            result = gradient_check(loss, params, h=1e-5, samples=100, rng=np.random.default_rng(0), floor=1e-5)

        self.assertEqual(result.checked, 100)
        self.assertLess(result.max_relative_error, 1e-4)
