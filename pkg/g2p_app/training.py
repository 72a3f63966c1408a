"""Training: loss, adversarial input perturbation, Adam updates and the two-step schedule.

Two-step robust training first fits the baseline parameters on the word lexicon
plus the sentence corpus with context switched off, then freezes them and fits only
the context parameters on the sentence corpus with context on.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoints import load_checkpoint, save_checkpoint
from .datasets import iterate_batches
from .exceptions import ConfigurationError, G2PError, NumericError, TrainingDivergedError
from .lexicon import PAD_ID
from .network import THETA_S, THETA_W, ForwardTrace
from .seeding import rng_stream
from .tensorcore import cross_entropy

logger = logging.getLogger(__name__)

NORM_FLOOR = 1e-12
ADV_MODES = ('off', 'on')
NORM_SCOPES = ('sequence', 'token')
SCHEDULES = ('two_step', 'joint', 'baseline')
CHECKPOINT_DIR = 'checkpoints'
METRICS_FILE = 'metrics.jsonl'


@dataclass
class TrainConfig:
    epsilon: float = 1.0
    learning_rate: float = 1e-3
    warmup_steps: int = 100
    batch_size: int = 32
    epochs: int = 20
    context_epochs: int = 10
    seed: int = 0
    adv_mode: str = 'off'
    norm_scope: str = 'sequence'
    adv_weight: float = 0.5
    schedule: str = 'two_step'
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-9
    dev_eval: bool = True

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigurationError(f'epsilon must be >= 0, got {self.epsilon}')
        if self.warmup_steps < 1:
            raise ConfigurationError(f'warmup_steps must be >= 1, got {self.warmup_steps}')
        if self.batch_size < 1 or self.epochs < 0 or self.context_epochs < 0:
            raise ConfigurationError('batch_size must be >= 1 and epoch counts >= 0')
        if self.adv_mode not in ADV_MODES:
            raise ConfigurationError(f'adv_mode must be one of {ADV_MODES}')
        if self.norm_scope not in NORM_SCOPES:
            raise ConfigurationError(f'norm_scope must be one of {NORM_SCOPES}')
        if self.schedule not in SCHEDULES:
            raise ConfigurationError(f'schedule must be one of {SCHEDULES}')
        if not 0.0 <= self.adv_weight <= 1.0:
            raise ConfigurationError(f'adv_weight must lie in [0, 1], got {self.adv_weight}')

    def to_dict(self):
        return asdict(self)


def noam_rate(step, peak, warmup):
    """Linear warmup to ``peak`` at ``warmup`` steps, then inverse square-root decay."""
    step = max(step, 1)
    return peak * min(step / warmup, math.sqrt(warmup / step))


class Adam:
    def __init__(self, params, names, beta1=0.9, beta2=0.98, eps=1e-9):
        self.params = params
        self.names = tuple(names)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {n: np.zeros_like(params[n].data) for n in self.names}
        self.v = {n: np.zeros_like(params[n].data) for n in self.names}

    def zero_grad(self):
        for tensor in self.params.values():
            tensor.grad = None

    def update(self, lr):
        self.step += 1
        correction1 = 1.0 - self.beta1 ** self.step
        correction2 = 1.0 - self.beta2 ** self.step
        for name in self.names:
            tensor = self.params[name]
            if tensor.grad is None:
                continue
            grad = tensor.grad
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * grad * grad
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            update = (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(tensor.dtype)
            tensor.data = tensor.data - update

    def state(self):
        return {'m': self.m, 'v': self.v, 'step': self.step}

    def load_state(self, state):
        for name in self.names:
            self.m[name] = np.array(state['m'][name])
            self.v[name] = np.array(state['v'][name])
        self.step = int(state['step'])


def compute_loss(model, batch, use_context, perturbation=None, trace=None):
    """Mean cross-entropy over the non-PAD target positions of ``batch``."""
    logits = model.forward(batch.graphemes, batch.decoder_input, batch.context, use_context,
                           perturbation=perturbation, trace=trace)
    return cross_entropy(logits, batch.targets, ignore_index=PAD_ID)


def perturbation_from_gradient(g, epsilon, norm_scope='sequence'):
    """``-epsilon * g / ||g||`` per example sequence (``[B, L, d]``) or per token.

    ``g`` is the gradient of the log-likelihood; slices whose norm is below 1e-12
    get a zero perturbation.
    """
    g = np.asarray(g, dtype=np.float64)
    if epsilon == 0:
        return np.zeros_like(g)
    if norm_scope == 'token' or g.ndim == 1:
        axes = (-1,)
    elif norm_scope == 'sequence':
        axes = tuple(range(1, g.ndim))
    else:
        raise ConfigurationError(f'norm_scope must be one of {NORM_SCOPES}')
    norms = np.sqrt((g * g).sum(axis=axes, keepdims=True))
    safe = np.where(norms < NORM_FLOOR, 1.0, norms)
    return np.where(norms < NORM_FLOOR, 0.0, -epsilon * g / safe)


class _GradientProbe:
    """Keeps the grapheme embedding table differentiable while a frozen stage needs g_x."""

    def __init__(self, model):
        self.table = model.params['grapheme_embedding']

    def __enter__(self):
        self.restore = self.table.requires_grad
        self.table.requires_grad = True
        return self

    def __exit__(self, *exc):
        if not self.restore:
            self.table.requires_grad = False
            self.table.grad = None
        return False


def adversarial_perturb(model, batch, epsilon, norm_scope, use_context):
    """Clean pass and backward; returns ``(delta, clean_loss)``.

    Parameter gradients of the clean loss are left on the model.
    """
    trace = ForwardTrace()
    with _GradientProbe(model):
        loss = compute_loss(model, batch, use_context, trace=trace)
        loss.backward()
    embeddings = trace.grapheme_embeddings
    grad = embeddings.grad if embeddings.grad is not None else np.zeros_like(embeddings.data)
    # loss is the negative log-likelihood
    delta = perturbation_from_gradient(-grad, epsilon, norm_scope)
    return delta.astype(embeddings.dtype), float(loss.data)


@dataclass
class StepMetrics:
    loss: float
    adversarial_loss: float = None
    lr: float = 0.0


def train_step(model, optimizer, batch, cfg, lr, use_context, step=0, stage=None):
    """One update; with ``adv_mode='on'`` mixes clean and perturbed-input gradients."""
    optimizer.zero_grad()
    try:
        if cfg.adv_mode == 'off':
            loss = compute_loss(model, batch, use_context)
            loss.backward()
            metrics = StepMetrics(loss=float(loss.data), lr=lr)
        else:
            delta, clean_loss = adversarial_perturb(model, batch, cfg.epsilon, cfg.norm_scope, use_context)
            clean = {n: model.params[n].grad for n in optimizer.names}
            optimizer.zero_grad()
            adv_loss = compute_loss(model, batch, use_context, perturbation=delta)
            adv_loss.backward()
            w = cfg.adv_weight
            for name in optimizer.names:
                tensor = model.params[name]
                if clean[name] is None or tensor.grad is None:
                    tensor.grad = clean[name] if tensor.grad is None else tensor.grad
                    continue
                tensor.grad = (1.0 - w) * clean[name] + w * tensor.grad
            metrics = StepMetrics(loss=clean_loss, adversarial_loss=float(adv_loss.data), lr=lr)
    except NumericError as exc:
        raise TrainingDivergedError(step, batch.ids, float('nan'), stage) from exc
    if not math.isfinite(metrics.loss):
        raise TrainingDivergedError(step, batch.ids, metrics.loss, stage)
    optimizer.update(lr)
    return metrics


@dataclass
class Stage:
    number: int
    name: str
    trainable: str
    use_context: bool
    epochs: int
    data: list


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)
    frozen_digest: str = None
    stages_run: list = field(default_factory=list)


class Trainer:
    """Runs the configured schedule, checkpointing every epoch when ``run_dir`` is set."""

    def __init__(self, model, cfg, vocabs=None, run_dir=None, dev=None, evaluate_fn=None):
        self.model = model
        self.cfg = cfg
        self.vocabs = vocabs
        self.run_dir = Path(run_dir) if run_dir else None
        self.dev = dev
        self.evaluate_fn = evaluate_fn
        self.history = []

    def stages(self, d_w, d_s):
        cfg = self.cfg
        context_on = self.model.config.context_length > 0
        if cfg.schedule == 'joint':
            return [Stage(1, 'joint', 'all', context_on, cfg.epochs, d_w + d_s)]
        stages = [Stage(1, 'baseline', THETA_W, False, cfg.epochs, d_w + d_s)]
        if cfg.schedule == 'two_step':
            if not d_s:
                logger.warning('Sentence corpus is empty: skipping step 2, training degenerates to baseline')
            elif not context_on:
                logger.warning('context_length is 0: skipping step 2')
            else:
                stages.append(Stage(2, 'context', THETA_S, True, cfg.context_epochs, d_s))
        return stages

    def _names(self, stage):
        if stage.trainable == 'all':
            return self.model.partition.all
        return self.model.partition.names(stage.trainable)

    def _checkpoint_path(self, stage, epoch):
        return self.run_dir / CHECKPOINT_DIR / f'stage{stage}_epoch{epoch:03d}.npz'

    def latest_checkpoint(self):
        if self.run_dir is None:
            return None
        found = sorted((self.run_dir / CHECKPOINT_DIR).glob('stage*_epoch*.npz'))
        return found[-1] if found else None

    def _append_metrics(self, record):
        self.history.append(record)
        if self.run_dir is not None:
            with open(self.run_dir / METRICS_FILE, 'a', encoding='utf-8') as fh:
                fh.write(json.dumps(record, sort_keys=True) + '\n')

    def _restore(self, path):
        """Load weights and rewrite metrics.jsonl up to the checkpointed epoch."""
        checkpoint = load_checkpoint(path)
        self.model.load_state_dict(checkpoint.model.state_dict())
        meta = checkpoint.meta
        history = meta.get('history', [])
        metrics_path = self.run_dir / METRICS_FILE
        with open(metrics_path, 'w', encoding='utf-8') as fh:
            for record in history:
                fh.write(json.dumps(record, sort_keys=True) + '\n')
        self.history = list(history)
        logger.info(f'Resumed from {path} (stage {meta["stage"]}, epoch {meta["epoch"]})')
        return meta, checkpoint.optimizer_state

    def fit(self, d_w, d_s, resume=False):
        stages = self.stages(d_w, d_s)
        position = None
        optimizer_state = None
        frozen_digest = None
        if resume:
            latest = self.latest_checkpoint()
            if latest is not None:
                meta, optimizer_state = self._restore(latest)
                position = (meta['stage'], meta['epoch'])
                frozen_digest = meta.get('frozen_digest')
        result = TrainResult(model=self.model)
        for stage in stages:
            if position and stage.number < position[0]:
                continue
            start_epoch = 0
            optimizer = Adam(self.model.params, self._names(stage), self.cfg.beta1, self.cfg.beta2,
                             self.cfg.adam_eps)
            if position and stage.number == position[0]:
                start_epoch = position[1] + 1
                if optimizer_state:
                    optimizer.load_state(optimizer_state)
            if stage.number == 2 and frozen_digest is None:
                frozen_digest = self.model.digest(THETA_W)
            self._run_stage(stage, optimizer, start_epoch, frozen_digest)
            result.stages_run.append(stage.number)
            logger.info(f'step {stage.number} complete')
        self.model.set_trainable(self.model.params)
        result.history = self.history
        result.frozen_digest = frozen_digest
        return result

    def _run_stage(self, stage, optimizer, start_epoch, frozen_digest):
        cfg = self.cfg
        model = self.model
        model.set_trainable(self._names(stage))
        logger.info(
            f'Stage {stage.number} ({stage.name}): {len(stage.data)} examples, {stage.epochs} epochs, '
            f'{sum(model.params[n].size for n in optimizer.names)} trainable values, '
            f'context {"on" if stage.use_context else "off"}'
        )
        for epoch in range(start_epoch, stage.epochs):
            rng = rng_stream(cfg.seed, 'shuffle', stage.number, epoch)
            losses, adv_losses, weights = [], [], []
            for batch in iterate_batches(stage.data, cfg.batch_size, rng):
                lr = noam_rate(optimizer.step + 1, cfg.learning_rate, cfg.warmup_steps)
                metrics = train_step(model, optimizer, batch, cfg, lr, stage.use_context,
                                     step=optimizer.step + 1, stage=stage.number)
                losses.append(metrics.loss)
                weights.append(len(batch))
                if metrics.adversarial_loss is not None:
                    adv_losses.append(metrics.adversarial_loss)
            record = {
                'stage': stage.number,
                'epoch': epoch,
                'split': 'train',
                'loss': float(np.average(losses, weights=weights)) if losses else None,
                'steps': optimizer.step,
                'lr': noam_rate(max(optimizer.step, 1), cfg.learning_rate, cfg.warmup_steps),
            }
            if adv_losses:
                record['adversarial_loss'] = float(np.mean(adv_losses))
            if self.dev and self.evaluate_fn is not None:
                dev_metrics = self.evaluate_fn(model, self.dev, stage.use_context)
                record.update(dev_per=dev_metrics['per'], dev_wer=dev_metrics['wer'])
            if stage.number == 2:
                if model.digest(THETA_W) != frozen_digest:
                    raise G2PError(f'theta_w changed during step 2 (epoch {epoch})')
                logger.info(f'frozen theta_w verified (epoch {epoch})')
            logger.info(f'stage {stage.number} epoch {epoch}: loss {record["loss"]}')
            if self.run_dir is not None:
                save_checkpoint(
                    self._checkpoint_path(stage.number, epoch), model, self.vocabs,
                    optimizer_state=optimizer.state(), stage=stage.number, epoch=epoch,
                    seed=cfg.seed, frozen_digest=frozen_digest, history=self.history + [record],
                    train_config=cfg.to_dict(),
                )
            self._append_metrics(record)


def robust_train(model, d_w, d_s, cfg, vocabs=None, run_dir=None, dev=None, evaluate_fn=None,
                 resume=False):
    """Train ``model`` in place per ``cfg.schedule``; returns a ``TrainResult``."""
    trainer = Trainer(model, cfg, vocabs=vocabs, run_dir=run_dir, dev=dev, evaluate_fn=evaluate_fn)
    return trainer.fit(d_w, d_s, resume=resume)
