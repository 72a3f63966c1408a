"""Run configuration: JSON file, validated by DRF serializers, overridden by flags."""
import copy
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from django.conf import settings

from .exceptions import ConfigurationError, InputError
from .network import ModelConfig
from .noise import NoiseConfig
from .serializers import RunConfigSerializer
from .training import TrainConfig

logger = logging.getLogger(__name__)

CONFIG_FILE = 'config.json'
LOCK_FILE = '.lock'
SECTIONS = ('model', 'noise', 'train', 'paths')


@dataclass
class RunConfig:
    seed: int
    mode: str
    model: ModelConfig
    noise: NoiseConfig
    train: TrainConfig
    paths: dict = field(default_factory=dict)

    def to_dict(self):
        noise = {
            'p': self.noise.p,
            'group_weights': list(self.noise.group_weights),
            'op_weights': {k: list(v) for k, v in self.noise.op_weights.items()},
        }
        train = self.train.to_dict()
        train.pop('seed', None)
        return {
            'seed': self.seed,
            'mode': self.mode,
            'model': self.model.to_dict(),
            'noise': noise,
            'train': train,
            'paths': dict(self.paths),
        }

    @property
    def data_dir(self):
        return Path(self.paths.get('data_dir') or settings.G2P_DATA_DIR)

    @property
    def runs_dir(self):
        return Path(self.paths.get('runs_dir') or settings.G2P_RUNS_DIR)


def _merge(base, overrides):
    merged = copy.deepcopy(base)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if isinstance(value, dict):
            merged[key] = _merge(merged.get(key) or {}, value)
        else:
            merged[key] = value
    return merged


def resolve_run_config(data=None, overrides=None):
    """Serializer defaults, then ``data``, then ``overrides`` (None values ignored)."""
    merged = _merge(data or {}, overrides)
    for section in SECTIONS:
        merged.setdefault(section, {})
    serializer = RunConfigSerializer(data=merged)
    if not serializer.is_valid():
        raise ConfigurationError(f'invalid run config: {json.dumps(serializer.errors, default=str)}')
    values = serializer.validated_data
    seed = values['seed']
    noise = dict(values['noise'])
    op_weights = noise.pop('op_weights', None)
    if op_weights:
        noise['op_weights'] = {k: tuple(v) for k, v in op_weights.items()}
    return RunConfig(
        seed=seed,
        mode=values['mode'],
        model=ModelConfig(**values['model']),
        noise=NoiseConfig(seed=seed, **noise),
        train=TrainConfig(seed=seed, **values['train']),
        paths=dict(values['paths']),
    )


def load_run_config(path=None, overrides=None):
    data = {}
    if path:
        path = Path(path)
        if not path.is_file():
            raise InputError(f'config file not found: {path}')
        try:
            data = json.loads(path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f'{path} is not valid JSON: {exc}') from exc
    return resolve_run_config(data, overrides)


def write_run_config(run_dir, config):
    path = Path(run_dir) / CONFIG_FILE
    path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + '\n', encoding='utf-8')
    return path


def _clear_stale_lock(lock):
    """Remove a lock left behind by a process that no longer exists."""
    try:
        pid = int(lock.read_text(encoding='ascii').strip())
    except (OSError, ValueError):
        return
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        logger.warning(f'Removing stale lock {lock} (pid {pid} is gone)')
        lock.unlink(missing_ok=True)
    except PermissionError:
        pass


@contextmanager
def run_lock(run_dir):
    """Exclusive ``.lock`` file; a second holder gets an InputError."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / LOCK_FILE
    _clear_stale_lock(lock)
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise InputError(f'run directory {run_dir} is locked by another process ({lock})') from exc
    try:
        os.write(fd, str(os.getpid()).encode('ascii'))
        os.close(fd)
        yield run_dir
    finally:
        lock.unlink(missing_ok=True)
