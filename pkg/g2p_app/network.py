"""Context-gated Transformer for grapheme-to-phoneme conversion.

Encoder and decoder are pre-layer-norm residual stacks. When a context window is
supplied, each encoder layer gains a context-attention sublayer over the
convolutional context matrix ``C``, and each decoder layer gains a context
attention whose output is mixed with the mean-pooled context through a sigmoid gate.
Without context those sublayers are skipped and the model is a plain Transformer
over its baseline parameters.
"""
import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ArgumentError, ConfigurationError, ContextDisabledError, LengthError
from .lexicon import BOS_ID, EOS_ID, PAD_ID, UNK_ID
from .seeding import rng_stream
from .tensorcore import (
    AttentionWeights, Tensor, causal_mask, clamp_between, conv1d, embedding_lookup, layer_norm, log_softmax,
    mean, multi_head_attention, no_grad, relu, sigmoid,
)

logger = logging.getLogger(__name__)

THETA_W = 'theta_w'
THETA_S = 'theta_s'
BANNED_TOKENS = (PAD_ID, BOS_ID, UNK_ID)


@dataclass
class ModelConfig:
    layers: int = 4
    heads: int = 4
    d_model: int = 128
    d_ff: int = 512
    d_word: int = 512
    context_length: int = 2
    beam: int = 4
    max_decode_len: int = 32
    max_positions: int = 64
    conv_width: int = 3
    gate_bias_init: float = -2.0
    decoder_context_layers: str = 'all'
    length_penalty: float = 0.7

    def __post_init__(self):
        if self.layers < 1 or self.heads < 1:
            raise ConfigurationError('layers and heads must be at least 1')
        if self.d_model % self.heads:
            raise ConfigurationError(f'd_model {self.d_model} is not divisible by {self.heads} heads')
        if self.context_length < 0:
            raise ConfigurationError(f'context_length must be >= 0, got {self.context_length}')
        if self.beam < 1:
            raise ConfigurationError(f'beam must be >= 1, got {self.beam}')
        if self.conv_width % 2 == 0:
            raise ConfigurationError(f'conv_width must be odd, got {self.conv_width}')
        if self.decoder_context_layers not in ('all', 'top'):
            raise ConfigurationError("decoder_context_layers must be 'all' or 'top'")
        if self.max_decode_len < 1 or self.max_positions < 2:
            raise ConfigurationError('max_decode_len and max_positions must be positive')

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})

    def decoder_uses_context(self, layer):
        return self.decoder_context_layers == 'all' or layer == self.layers - 1


@dataclass(frozen=True)
class ParamPartition:
    theta_w: tuple
    theta_s: tuple

    def __post_init__(self):
        overlap = set(self.theta_w) & set(self.theta_s)
        if overlap:
            raise ConfigurationError(f'parameters in both partitions: {sorted(overlap)}')

    @property
    def all(self):
        return self.theta_w + self.theta_s

    def label(self, name):
        return THETA_W if name in self.theta_w else THETA_S

    def names(self, group):
        return self.theta_w if group == THETA_W else self.theta_s


@dataclass
class ForwardTrace:
    """Intermediate values captured by a traced forward pass (arrays, first axis batch)."""

    grapheme_embeddings: Tensor = None
    encoder_self: list = field(default_factory=list)
    encoder_context: list = field(default_factory=list)
    decoder_self: list = field(default_factory=list)
    decoder_context: list = field(default_factory=list)
    gates: list = field(default_factory=list)
    final_states: np.ndarray = None
    attention: dict = field(default_factory=dict)

    def record_attention(self, kind, layer, weights):
        self.attention.setdefault(kind, {})[layer] = weights


@dataclass
class DecodeResult:
    tokens: tuple
    score: float
    log_prob: float
    truncated: bool = False


def sinusoidal_positions(length, d_model):
    positions = np.arange(length)[:, None]
    rates = np.power(10000.0, -np.arange(0, d_model, 2) / d_model)
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates[:d_model // 2])
    return table


def _glorot(rng, fan_in, fan_out, shape):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def gate(c_bar, n, w_i, w_s, bias):
    """Convex mix ``lambda * c_bar + (1 - lambda) * n`` with a learned sigmoid gate.

    Returns ``(output, lambda)``.
    """
    lam = sigmoid(c_bar @ w_i + n @ w_s + bias)
    return clamp_between(n + lam * (c_bar - n), c_bar, n), lam


def _attn(params, prefix):
    return AttentionWeights(*(params[f'{prefix}.{k}'] for k in ('w_q', 'w_k', 'w_v', 'w_o')))


def _ln(params, prefix, x):
    return layer_norm(x, params[f'{prefix}.gamma'], params[f'{prefix}.beta'])


def _ffn(params, prefix, x):
    hidden = relu(x @ params[f'{prefix}.w1'] + params[f'{prefix}.b1'])
    return hidden @ params[f'{prefix}.w2'] + params[f'{prefix}.b2']


def _as_batch(ids):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None]
    if ids.ndim != 2 or ids.shape[1] == 0:
        raise ArgumentError(f'expected a non-empty [batch, length] id array, got shape {list(ids.shape)}')
    return ids


def run_encoder(params, config, grapheme_ids, context=None, perturbation=None, trace=None):
    """Encoder states ``[B, L, d]`` and the key mask used by cross attention."""
    ids = _as_batch(grapheme_ids)
    length = ids.shape[1]
    if length > config.max_positions:
        raise LengthError(f'input of {length} graphemes exceeds max_positions {config.max_positions}')
    x = embedding_lookup(params['grapheme_embedding'], ids) * math.sqrt(config.d_model)
    if trace is not None:
        trace.grapheme_embeddings = x
    if perturbation is not None:
        x = x + Tensor(perturbation, dtype=x.dtype)
    positions = sinusoidal_positions(length, config.d_model).astype(x.dtype)
    h = x + Tensor(positions, dtype=x.dtype)
    key_mask = (ids != PAD_ID)[:, None, None, :]
    for i in range(config.layers):
        p = f'encoder.{i}'
        normed = _ln(params, f'{p}.ln_self', h)
        attended, weights = multi_head_attention(
            normed, normed, normed, _attn(params, f'{p}.self_attn'), config.heads, key_mask)
        h = h + attended
        if trace is not None:
            trace.encoder_self.append(h.data)
            trace.record_attention('encoder_self', i, weights)
        if context is not None:
            query = _ln(params, f'{p}.ln_ctx', h)
            attended, weights = multi_head_attention(
                query, context, context, _attn(params, f'{p}.ctx_attn'), config.heads)
            h = h + attended
            if trace is not None:
                trace.encoder_context.append(h.data)
                trace.record_attention('encoder_context', i, weights)
        h = h + _ffn(params, f'{p}.ffn', _ln(params, f'{p}.ln_ffn', h))
    return _ln(params, 'encoder.final_ln', h), key_mask


def run_decoder(params, config, prefix_ids, memory, memory_mask, context=None, trace=None):
    """Logits ``[B, T, |V_y|]`` for every prefix position."""
    ids = _as_batch(prefix_ids)
    if not np.all(ids[:, 0] == BOS_ID):
        raise ArgumentError('decoder prefixes must start with BOS')
    length = ids.shape[1]
    if length > config.max_positions:
        raise LengthError(f'prefix of {length} phonemes exceeds max_positions {config.max_positions}')
    y = embedding_lookup(params['phoneme_embedding'], ids) * math.sqrt(config.d_model)
    h = y + Tensor(sinusoidal_positions(length, config.d_model), dtype=y.dtype)
    self_mask = causal_mask(length)[None, None] & (ids != PAD_ID)[:, None, None, :]
    c_bar = mean(context, axis=1, keepdims=True) if context is not None else None
    for i in range(config.layers):
        p = f'decoder.{i}'
        normed = _ln(params, f'{p}.ln_self', h)
        attended, weights = multi_head_attention(
            normed, normed, normed, _attn(params, f'{p}.self_attn'), config.heads, self_mask)
        h = h + attended
        if trace is not None:
            trace.decoder_self.append(h.data)
            trace.record_attention('decoder_self', i, weights)
        if context is not None and config.decoder_uses_context(i):
            query = _ln(params, f'{p}.ln_ctx', h)
            n, weights = multi_head_attention(
                query, context, context, _attn(params, f'{p}.ctx_attn'), config.heads)
            mixed, lam = gate(c_bar, n, params[f'{p}.gate.w_i'], params[f'{p}.gate.w_s'],
                              params[f'{p}.gate.bias'])
            h = h + mixed @ params[f'{p}.gate.w_out']
            if trace is not None:
                trace.decoder_context.append(n.data)
                trace.gates.append(lam.data)
                trace.record_attention('decoder_context', i, weights)
        normed = _ln(params, f'{p}.ln_cross', h)
        attended, weights = multi_head_attention(
            normed, memory, memory, _attn(params, f'{p}.cross_attn'), config.heads, memory_mask)
        h = h + attended
        if trace is not None:
            trace.record_attention('cross', i, weights)
        h = h + _ffn(params, f'{p}.ffn', _ln(params, f'{p}.ln_ffn', h))
    states = _ln(params, 'decoder.final_ln', h)
    if trace is not None:
        trace.final_states = states.data
    return states @ params['output.w_o']


class G2PTransformer:
    def __init__(self, config, grapheme_vocab_size, phoneme_vocab_size, word_vocab_size, seed=0):
        self.config = config
        self.vocab_sizes = {
            'grapheme': grapheme_vocab_size,
            'phoneme': phoneme_vocab_size,
            'word': word_vocab_size,
        }
        self.params = {}
        self._labels = {}
        self._init_params(rng_stream(seed, 'init'))
        self.partition = ParamPartition(
            theta_w=tuple(n for n in self.params if self._labels[n] == THETA_W),
            theta_s=tuple(n for n in self.params if self._labels[n] == THETA_S),
        )

    def __repr__(self):
        return (f'G2PTransformer(layers={self.config.layers}, d_model={self.config.d_model}, '
                f'params={self.num_parameters()})')

    def _add(self, name, array, group):
        self.params[name] = Tensor(array, requires_grad=True, name=name)
        self._labels[name] = group

    def _add_ln(self, prefix, group):
        d = self.config.d_model
        self._add(f'{prefix}.gamma', np.ones(d), group)
        self._add(f'{prefix}.beta', np.zeros(d), group)

    def _add_attention(self, rng, prefix, group, zero_output=False):
        d = self.config.d_model
        for key in ('w_q', 'w_k', 'w_v'):
            self._add(f'{prefix}.{key}', _glorot(rng, d, d, (d, d)), group)
        w_o = np.zeros((d, d)) if zero_output else _glorot(rng, d, d, (d, d))
        self._add(f'{prefix}.w_o', w_o, group)

    def _add_ffn(self, rng, prefix, group):
        d, d_ff = self.config.d_model, self.config.d_ff
        self._add(f'{prefix}.w1', _glorot(rng, d, d_ff, (d, d_ff)), group)
        self._add(f'{prefix}.b1', np.zeros(d_ff), group)
        self._add(f'{prefix}.w2', _glorot(rng, d_ff, d, (d_ff, d)), group)
        self._add(f'{prefix}.b2', np.zeros(d), group)

    def _init_params(self, rng):
        cfg = self.config
        d = cfg.d_model
        self._add('grapheme_embedding', rng.normal(0.0, d ** -0.5, (self.vocab_sizes['grapheme'], d)), THETA_W)
        self._add('phoneme_embedding', rng.normal(0.0, d ** -0.5, (self.vocab_sizes['phoneme'], d)), THETA_W)
        for i in range(cfg.layers):
            p = f'encoder.{i}'
            self._add_ln(f'{p}.ln_self', THETA_W)
            self._add_attention(rng, f'{p}.self_attn', THETA_W)
            self._add_ln(f'{p}.ln_ctx', THETA_S)
            self._add_attention(rng, f'{p}.ctx_attn', THETA_S, zero_output=True)
            self._add_ln(f'{p}.ln_ffn', THETA_W)
            self._add_ffn(rng, f'{p}.ffn', THETA_W)
        self._add_ln('encoder.final_ln', THETA_W)
        for i in range(cfg.layers):
            p = f'decoder.{i}'
            self._add_ln(f'{p}.ln_self', THETA_W)
            self._add_attention(rng, f'{p}.self_attn', THETA_W)
            if cfg.decoder_uses_context(i):
                self._add_ln(f'{p}.ln_ctx', THETA_S)
                self._add_attention(rng, f'{p}.ctx_attn', THETA_S)
                self._add(f'{p}.gate.w_i', _glorot(rng, d, d, (d, d)), THETA_S)
                self._add(f'{p}.gate.w_s', _glorot(rng, d, d, (d, d)), THETA_S)
                self._add(f'{p}.gate.bias', np.full(d, cfg.gate_bias_init), THETA_S)
                self._add(f'{p}.gate.w_out', np.zeros((d, d)), THETA_S)
            self._add_ln(f'{p}.ln_cross', THETA_W)
            self._add_attention(rng, f'{p}.cross_attn', THETA_W)
            self._add_ln(f'{p}.ln_ffn', THETA_W)
            self._add_ffn(rng, f'{p}.ffn', THETA_W)
        self._add_ln('decoder.final_ln', THETA_W)
        self._add('output.w_o', _glorot(rng, d, self.vocab_sizes['phoneme'], (d, self.vocab_sizes['phoneme'])), THETA_W)
        word_table = rng.normal(0.0, cfg.d_word ** -0.5, (self.vocab_sizes['word'], cfg.d_word))
        word_table[PAD_ID] = 0.0
        self._add('context.word_embedding', word_table, THETA_S)
        width = cfg.conv_width
        self._add('context.conv.kernel',
                  _glorot(rng, width * cfg.d_word, d, (width, cfg.d_word, d)), THETA_S)
        self._add('context.conv.bias', np.zeros(d), THETA_S)

    def num_parameters(self, group=None):
        names = self.params if group is None else self.partition.names(group)
        return int(sum(self.params[n].size for n in names))

    def set_trainable(self, names):
        names = set(names)
        for name, tensor in self.params.items():
            tensor.requires_grad = name in names
            tensor.grad = None

    def zero_grad(self):
        for tensor in self.params.values():
            tensor.grad = None

    def digest(self, group=THETA_W):
        """SHA-256 over the names and raw bytes of one parameter group."""
        h = hashlib.sha256()
        for name in sorted(self.partition.names(group)):
            h.update(name.encode('utf-8'))
            h.update(np.ascontiguousarray(self.params[name].data).tobytes())
        return h.hexdigest()

    def context_enabled(self, context_ids, use_context=True):
        return use_context and self.config.context_length > 0 and context_ids is not None

    def encode_context(self, context_ids):
        """Context matrix ``C``: ``[2l, d_model]`` per window, batched when ids are 2-D."""
        if self.config.context_length == 0:
            raise ContextDisabledError('context_length is 0; bypass the context sublayers')
        ids = np.asarray(context_ids, dtype=np.int64)
        if ids.shape[-1] != 2 * self.config.context_length:
            raise ArgumentError(
                f'context window must hold {2 * self.config.context_length} ids, got {ids.shape[-1]}')
        embedded = embedding_lookup(self.params['context.word_embedding'], ids)
        return relu(conv1d(embedded, self.params['context.conv.kernel'], self.params['context.conv.bias']))

    def encode(self, grapheme_ids, context_ids=None, use_context=True, perturbation=None, trace=None):
        context = None
        if self.context_enabled(context_ids, use_context):
            context = self.encode_context(_as_batch(context_ids))
        memory, memory_mask = run_encoder(self.params, self.config, grapheme_ids, context, perturbation, trace)
        return memory, memory_mask, context

    def forward(self, grapheme_ids, decoder_input, context_ids=None, use_context=True,
                perturbation=None, trace=None):
        memory, memory_mask, context = self.encode(grapheme_ids, context_ids, use_context, perturbation, trace)
        return run_decoder(self.params, self.config, decoder_input, memory, memory_mask, context, trace)

    def encoder_forward(self, grapheme_ids, context=None, trace=None):
        return run_encoder(self.params, self.config, grapheme_ids, context, trace=trace)[0]

    def decoder_forward(self, prefix_ids, encoder_states, context=None, memory_mask=None, trace=None):
        return run_decoder(self.params, self.config, prefix_ids, encoder_states, memory_mask, context, trace)

    def _step_fn(self, grapheme_ids, context_ids, use_context):
        memory, memory_mask, context = self.encode(grapheme_ids, context_ids, use_context)

        def step(prefixes):
            n = len(prefixes)
            batch_memory = Tensor(np.repeat(memory.data, n, axis=0), dtype=memory.dtype)
            batch_mask = np.repeat(memory_mask, n, axis=0)
            batch_context = None
            if context is not None:
                batch_context = Tensor(np.repeat(context.data, n, axis=0), dtype=context.dtype)
            logits = run_decoder(self.params, self.config, np.array(prefixes), batch_memory,
                                 batch_mask, batch_context)
            return log_softmax(logits[:, -1, :]).data

        return step

    def beam_search(self, grapheme_ids, context_ids=None, beam=None, max_len=None, use_context=True):
        """Best phoneme id sequence for one word (EOS included unless truncated)."""
        if beam is None:
            beam = self.config.beam
        if beam < 1:
            raise ConfigurationError(f'beam must be >= 1, got {beam}')
        max_len = max_len or self.config.max_decode_len
        with no_grad():
            step = self._step_fn(grapheme_ids, context_ids, use_context)
            return beam_search_steps(step, beam, max_len, self.config.length_penalty)

    def greedy_decode(self, grapheme_ids, context_ids=None, max_len=None, use_context=True):
        max_len = max_len or self.config.max_decode_len
        with no_grad():
            step = self._step_fn(grapheme_ids, context_ids, use_context)
            return greedy_decode_steps(step, max_len, self.config.length_penalty)

    def trace_decode(self, grapheme_ids, tokens, context_ids=None, use_context=True):
        """Teacher-forced pass over a decoded sequence, capturing attention and gates."""
        trace = ForwardTrace()
        prefix = [BOS_ID] + [t for t in tokens if t != EOS_ID]
        with no_grad():
            self.forward(grapheme_ids, [prefix], context_ids, use_context, trace=trace)
        return trace

    def state_dict(self):
        return {name: tensor.data for name, tensor in self.params.items()}

    def load_state_dict(self, arrays):
        missing = set(self.params) - set(arrays)
        unexpected = set(arrays) - set(self.params)
        if missing or unexpected:
            raise ConfigurationError(
                f'parameter mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}')
        for name, tensor in self.params.items():
            array = np.asarray(arrays[name])
            if array.shape != tensor.shape:
                raise ConfigurationError(f'{name}: expected shape {list(tensor.shape)}, got {list(array.shape)}')
            tensor.data = array.copy()
            tensor.grad = None


class BaselineTransformer:
    """Plain encoder-decoder over the baseline parameters of a model."""

    def __init__(self, model):
        self.config = model.config
        self.params = {name: model.params[name] for name in model.partition.theta_w}

    def forward(self, grapheme_ids, decoder_input):
        memory, memory_mask = run_encoder(self.params, self.config, grapheme_ids)
        return run_decoder(self.params, self.config, decoder_input, memory, memory_mask)


def _normalized(log_prob, length, alpha):
    return log_prob / (max(length, 1) ** alpha)


def beam_search_steps(step_fn, beam, max_len, length_penalty=0.7, bos=BOS_ID, eos=EOS_ID,
                      banned=BANNED_TOKENS):
    """Beam search over any next-token scorer.

    ``step_fn(prefixes)`` gets equal-length id tuples starting with ``bos`` and returns
    a ``[len(prefixes), V]`` array of next-token log-probabilities. Expansion keeps the
    ``beam`` best candidates by cumulative log-probability; finished hypotheses are
    ranked by ``log_prob / length ** length_penalty`` with length counting generated
    tokens including EOS. Ties go to the lexicographically lower token sequence.
    """
    alive = [((bos,), 0.0)]
    finished = []
    stopped_early = False
    for _ in range(max_len):
        scores = np.array(step_fn([prefix for prefix, _ in alive]), dtype=np.float64)
        scores[:, list(banned)] = -np.inf
        candidates = []
        for (prefix, log_prob), row in zip(alive, scores):
            for token in np.flatnonzero(np.isfinite(row)):
                candidates.append((log_prob + row[token], prefix + (int(token),)))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        alive = []
        for log_prob, seq in candidates[:beam]:
            if seq[-1] == eos:
                finished.append((seq[1:], log_prob))
            else:
                alive.append((seq, log_prob))
        if not alive:
            break
        if finished:
            best = max(_normalized(lp, len(seq), length_penalty) for seq, lp in finished)
            bound = max(_normalized(lp, max_len, length_penalty) for _, lp in alive)
            if best >= bound:
                stopped_early = True
                break
    pool = [(seq, lp, False) for seq, lp in finished]
    if alive and not stopped_early:
        pool.extend((seq[1:], lp, True) for seq, lp in alive)
    seq, log_prob, truncated = min(
        pool, key=lambda h: (-_normalized(h[1], len(h[0]), length_penalty), h[0]))
    if truncated:
        logger.warning(f'decoding reached max_len {max_len} without EOS')
    return DecodeResult(tokens=seq, score=_normalized(log_prob, len(seq), length_penalty),
                        log_prob=log_prob, truncated=truncated)


def greedy_decode_steps(step_fn, max_len, length_penalty=0.7, bos=BOS_ID, eos=EOS_ID,
                        banned=BANNED_TOKENS):
    prefix = (bos,)
    log_prob = 0.0
    for _ in range(max_len):
        row = np.array(step_fn([prefix])[0], dtype=np.float64)
        row[list(banned)] = -np.inf
        token = int(np.argmax(row))
        log_prob += row[token]
        prefix = prefix + (token,)
        if token == eos:
            seq = prefix[1:]
            return DecodeResult(seq, _normalized(log_prob, len(seq), length_penalty), log_prob, False)
    seq = prefix[1:]
    logger.warning(f'decoding reached max_len {max_len} without EOS')
    return DecodeResult(seq, _normalized(log_prob, len(seq), length_penalty), log_prob, True)
