"""Experiment configuration: TOML files mapped onto frozen dataclasses.

Every rejected value raises ``ConfigError`` with the dotted path of the offending field,
e.g. ``privacy.z: must be >= 0, got -1``.
"""
import logging
import pathlib
try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Any, Optional, Union

from constants import SweepAxis, ServerOptimizer, TargetCount
from constants import (BETA1, BETA2, CLIP_LR, CLIP_QUANTILE, CLIP_QUANTILE_NOISE, SERVER_LR, TAU_ADAPT)

LOGGER = logging.getLogger(__name__)

_REQUIRED = object()


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    n_clients: Optional[int] = None
    samples_per_client: Optional[int] = None
    dim: Optional[int] = None
    heterogeneity: float = 0.0
    test_fraction: float = 0.2
    seed: Optional[int] = None          # None: use the run seed
    csv_paths: tuple[str, ...] = ()
    label_column: str = 'label'

    @property
    def synthetic(self) -> bool:
        return not self.csv_paths

    @property
    def client_count(self) -> int:
        return self.n_clients if self.synthetic else len(self.csv_paths)


@dataclass(frozen=True)
class PrivacyConfig:
    z: float
    rounds: int
    delta: Optional[float] = None
    delta_rule: bool = False
    subsample_ratio: float = 1.0


@dataclass(frozen=True)
class MethodConfig:
    optimizer: ServerOptimizer = ServerOptimizer.FEDAVG
    adaptive_intermediary: bool = True
    fixed_v: int = 1
    target_count: TargetCount = TargetCount.CLIENTS
    clip_init: float = 0.0              # 0: median of the first-round raw norms
    clip_adaptive: bool = True
    clip_lr: float = CLIP_LR
    clip_quantile: float = CLIP_QUANTILE
    clip_quantile_noise: float = CLIP_QUANTILE_NOISE
    server_lr: float = SERVER_LR
    beta1: float = BETA1
    beta2: float = BETA2
    tau: float = TAU_ADAPT


@dataclass(frozen=True)
class TrainingConfig:
    eta: float = 0.5
    epochs: int = 1
    batch_size: int = 32
    dp_sgd_z: float = 0.0
    dp_sgd_c: float = 1.0
    aggregation_frequency: int = 1      # server aggregations per epochs-worth of local work


@dataclass(frozen=True)
class SweepConfig:
    axes: tuple[tuple[SweepAxis, tuple[float, ...]], ...] = ()
    window: tuple[int, int] = (5, 30)
    tolerance: float = 0.3

    def values_for(self, axis: SweepAxis) -> tuple[float, ...]:
        for name, values in self.axes:
            if name == axis:
                return values
        raise ConfigError(f"sweep.{axis.value}: no values listed for this axis")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    dataset: DatasetConfig
    privacy: PrivacyConfig
    method: MethodConfig = field(default_factory=MethodConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seeds: tuple[int, ...] = (0,)
    output_dir: str = 'experiments/results'

    @property
    def total_rounds(self) -> int:
        """Aggregations the run performs, and the T of the privacy budget."""
        return self.privacy.rounds * self.training.aggregation_frequency

    def with_seeds(self, seeds: tuple[int, ...]) -> 'ExperimentConfig':
        cfg = replace(self, seeds=tuple(seeds))
        validate(cfg)
        return cfg

    def with_axis_value(self, axis: SweepAxis, value: float) -> 'ExperimentConfig':
        """Copy of this config with one sweep axis pinned to ``value``."""
        if axis == SweepAxis.Z:
            cfg = replace(self, privacy=replace(self.privacy, z=float(value)))
        elif axis == SweepAxis.V:
            cfg = replace(self, method=replace(self.method, adaptive_intermediary=False, fixed_v=int(value)))
        elif axis == SweepAxis.N_CLIENTS:
            if not self.dataset.synthetic:
                raise ConfigError("sweep.n_clients: only synthetic datasets can vary the client count")
            cfg = replace(self, dataset=replace(self.dataset, n_clients=int(value)))
        elif axis == SweepAxis.ROUNDS:
            cfg = replace(self, privacy=replace(self.privacy, rounds=int(value)))
        elif axis == SweepAxis.SUBSAMPLE:
            cfg = replace(self, privacy=replace(self.privacy, subsample_ratio=float(value)))
        elif axis == SweepAxis.FREQUENCY:
            cfg = replace(self, training=replace(self.training, aggregation_frequency=int(value)))
        else:
            raise ConfigError(f"sweep: unknown axis {axis}")
        validate(cfg)
        return cfg


class _Table:
    """Typed, path-aware reader over one TOML table that tracks which keys were consumed."""

    def __init__(self, raw: Any, path: str):
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a table, got {type(raw).__name__}")
        self.raw = raw
        self.path = path
        self.seen = set()

    def _where(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def get(self, key: str, kind: type, default: Any = _REQUIRED) -> Any:
        self.seen.add(key)
        if key not in self.raw:
            if default is _REQUIRED:
                raise ConfigError(f"{self._where(key)}: missing required key")
            return default
        return _coerce(self.raw[key], kind, self._where(key))

    def get_list(self, key: str, kind: type, default: Any = _REQUIRED) -> Any:
        self.seen.add(key)
        if key not in self.raw:
            if default is _REQUIRED:
                raise ConfigError(f"{self._where(key)}: missing required key")
            return default
        value = self.raw[key]
        if not isinstance(value, list):
            raise ConfigError(f"{self._where(key)}: expected a list, got {value!r}")
        return tuple(_coerce(v, kind, f"{self._where(key)}[{i}]") for i, v in enumerate(value))

    def table(self, key: str) -> '_Table':
        self.seen.add(key)
        return _Table(self.raw.get(key, {}), self._where(key))

    def finish(self):
        unknown = sorted(set(self.raw) - self.seen)
        if unknown:
            raise ConfigError(f"{self._where(unknown[0])}: unknown key")


def _coerce(value: Any, kind: type, where: str) -> Any:
    if kind is bool:
        if isinstance(value, bool):
            return value
    elif kind is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif kind is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif kind is str:
        if isinstance(value, str):
            return value
    elif issubclass(kind, Enum):
        try:
            return kind(value)
        except ValueError:
            choices = ', '.join(m.value for m in kind)
            raise ConfigError(f"{where}: expected one of {choices}, got {value!r}")
    raise ConfigError(f"{where}: expected {kind.__name__}, got {value!r}")


def _parse_dataset(t: _Table) -> DatasetConfig:
    cfg = DatasetConfig(
        n_clients=t.get('n_clients', int, None),
        samples_per_client=t.get('samples_per_client', int, None),
        dim=t.get('dim', int, None),
        heterogeneity=t.get('heterogeneity', float, 0.0),
        test_fraction=t.get('test_fraction', float, 0.2),
        seed=t.get('seed', int, None),
        csv_paths=t.get_list('csv_paths', str, ()),
        label_column=t.get('label_column', str, 'label'),
    )
    t.finish()
    return cfg


def _parse_privacy(t: _Table) -> PrivacyConfig:
    cfg = PrivacyConfig(
        z=t.get('z', float),
        rounds=t.get('rounds', int),
        delta=t.get('delta', float, None),
        delta_rule=t.get('delta_rule', bool, False),
        subsample_ratio=t.get('subsample_ratio', float, 1.0),
    )
    t.finish()
    return cfg


def _parse_section(t: _Table, cls: type) -> Any:
    """Sections whose fields all have defaults and scalar types."""
    kwargs = {}
    for f in fields(cls):
        kind = f.type if isinstance(f.type, type) else type(f.default)
        kwargs[f.name] = t.get(f.name, kind, f.default)
    t.finish()
    return cls(**kwargs)


def _parse_sweep(t: _Table) -> SweepConfig:
    axes = []
    for axis in SweepAxis:
        kind = int if axis in (SweepAxis.V, SweepAxis.N_CLIENTS, SweepAxis.ROUNDS, SweepAxis.FREQUENCY) else float
        values = t.get_list(axis.value, kind, None)
        if values is not None:
            axes.append((axis, values))
    window = t.get_list('window', int, (5, 30))
    cfg = SweepConfig(axes=tuple(axes), window=window, tolerance=t.get('tolerance', float, 0.3))
    t.finish()
    return cfg


def parse_config(raw: dict, default_name: str = 'experiment') -> ExperimentConfig:
    root = _Table(raw, '')
    cfg = ExperimentConfig(
        name=root.get('name', str, default_name),
        seeds=root.get_list('seeds', int, (0,)),
        output_dir=root.get('output_dir', str, 'experiments/results'),
        dataset=_parse_dataset(root.table('dataset')),
        privacy=_parse_privacy(root.table('privacy')),
        method=_parse_section(root.table('method'), MethodConfig),
        training=_parse_section(root.table('training'), TrainingConfig),
        sweep=_parse_sweep(root.table('sweep')),
    )
    root.finish()
    validate(cfg)
    return cfg


def loads_config(text: str, default_name: str = 'experiment') -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML: {e}")
    return parse_config(raw, default_name)


def load_config(path: Union[str, pathlib.Path]) -> ExperimentConfig:
    path = pathlib.Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Config file '{path}' doesn't exist")
    cfg = loads_config(path.read_text(encoding='utf-8'), default_name=path.stem)
    LOGGER.debug(f"Loaded config '{cfg.name}' from {path}")
    return cfg


def _require(ok: bool, where: str, message: str):
    if not ok:
        raise ConfigError(f"{where}: {message}")


def validate(cfg: ExperimentConfig):
    """Cross-field checks; raises ConfigError on the first violation."""
    _require(len(cfg.seeds) > 0, 'seeds', "at least one seed is required")
    _require(len(set(cfg.seeds)) == len(cfg.seeds), 'seeds', f"seeds must be unique, got {list(cfg.seeds)}")
    _require(bool(cfg.name), 'name', "must not be empty")

    d = cfg.dataset
    sizes = (d.n_clients, d.samples_per_client, d.dim)
    if d.csv_paths:
        _require(all(s is None for s in sizes), 'dataset',
                 "give either synthetic sizes (n_clients, samples_per_client, dim) or csv_paths, not both")
    else:
        for key, value in zip(('n_clients', 'samples_per_client', 'dim'), sizes):
            _require(value is not None, f'dataset.{key}', "missing required key (or give csv_paths)")
        _require(d.n_clients >= 1, 'dataset.n_clients', f"must be >= 1, got {d.n_clients}")
        _require(d.samples_per_client >= 2, 'dataset.samples_per_client',
                 f"must be >= 2, got {d.samples_per_client}")
        _require(d.dim >= 1, 'dataset.dim', f"must be >= 1, got {d.dim}")
    _require(0.0 <= d.heterogeneity <= 1.0, 'dataset.heterogeneity', f"must be in [0, 1], got {d.heterogeneity}")
    _require(0.0 < d.test_fraction < 1.0, 'dataset.test_fraction', f"must be in (0, 1), got {d.test_fraction}")
    if d.synthetic:
        n_test = int(round(d.test_fraction * d.samples_per_client))
        _require(1 <= n_test <= d.samples_per_client - 1, 'dataset.test_fraction',
                 f"holds out {n_test} of {d.samples_per_client} samples per client, "
                 f"need 1 to {d.samples_per_client - 1}")

    p = cfg.privacy
    _require(p.z >= 0, 'privacy.z', f"must be >= 0, got {p.z}")
    _require(p.rounds >= 1, 'privacy.rounds', f"must be >= 1, got {p.rounds}")
    _require((p.delta is None) == p.delta_rule, 'privacy.delta',
             "give exactly one of delta or delta_rule = true")
    if p.delta_rule:
        _require(d.client_count >= 2, 'privacy.delta_rule', f"needs n_clients >= 2, got {d.client_count}")
    if p.delta is not None:
        _require(0.0 < p.delta < 1.0, 'privacy.delta', f"must be in (0, 1), got {p.delta}")
    _require(0.0 < p.subsample_ratio <= 1.0, 'privacy.subsample_ratio',
             f"must be in (0, 1], got {p.subsample_ratio}")

    m = cfg.method
    _require(m.fixed_v >= 1, 'method.fixed_v', f"must be >= 1, got {m.fixed_v}")
    _require(m.clip_init >= 0, 'method.clip_init', f"must be >= 0, got {m.clip_init}")
    _require(m.clip_lr > 0, 'method.clip_lr', f"must be > 0, got {m.clip_lr}")
    _require(0.0 < m.clip_quantile < 1.0, 'method.clip_quantile', f"must be in (0, 1), got {m.clip_quantile}")
    _require(m.clip_quantile_noise >= 0, 'method.clip_quantile_noise', f"must be >= 0, got {m.clip_quantile_noise}")
    if m.clip_adaptive and m.clip_quantile_noise > 0 and p.z > 0:
        _require(m.clip_quantile_noise > p.z / 2.0, 'method.clip_quantile_noise',
                 f"must exceed z/2 = {p.z / 2.0} so the update noise stays finite, got {m.clip_quantile_noise}")
    _require(m.server_lr > 0, 'method.server_lr', f"must be > 0, got {m.server_lr}")
    _require(0.0 <= m.beta1 < 1.0, 'method.beta1', f"must be in [0, 1), got {m.beta1}")
    _require(0.0 <= m.beta2 < 1.0, 'method.beta2', f"must be in [0, 1), got {m.beta2}")
    _require(m.tau > 0, 'method.tau', f"must be > 0, got {m.tau}")

    tr = cfg.training
    _require(tr.eta > 0, 'training.eta', f"must be > 0, got {tr.eta}")
    _require(tr.epochs >= 1, 'training.epochs', f"must be >= 1, got {tr.epochs}")
    _require(tr.batch_size >= 1, 'training.batch_size', f"must be >= 1, got {tr.batch_size}")
    _require(tr.dp_sgd_z >= 0, 'training.dp_sgd_z', f"must be >= 0, got {tr.dp_sgd_z}")
    _require(tr.dp_sgd_c > 0, 'training.dp_sgd_c', f"must be > 0, got {tr.dp_sgd_c}")
    _require(tr.aggregation_frequency >= 1, 'training.aggregation_frequency',
             f"must be >= 1, got {tr.aggregation_frequency}")
    if tr.dp_sgd_z > 0 and d.synthetic:
        # every shard must hold at least one DP-SGD batch
        n_train = d.samples_per_client - int(round(d.test_fraction * d.samples_per_client))
        _require(tr.batch_size <= n_train, 'training.batch_size',
                 f"DP-SGD batch {tr.batch_size} exceeds the {n_train} training samples per client")
        if not m.adaptive_intermediary:
            _require(n_train // m.fixed_v >= tr.batch_size, 'method.fixed_v',
                     f"v={m.fixed_v} leaves shards of {n_train // m.fixed_v} samples, "
                     f"below the DP-SGD batch {tr.batch_size}")

    s = cfg.sweep
    for axis, values in s.axes:
        where = f'sweep.{axis.value}'
        _require(len(values) > 0, where, "must list at least one value")
        if axis in (SweepAxis.V, SweepAxis.N_CLIENTS, SweepAxis.ROUNDS, SweepAxis.FREQUENCY):
            _require(min(values) >= 1, where, f"values must be >= 1, got {list(values)}")
        elif axis == SweepAxis.Z:
            _require(min(values) >= 0, where, f"values must be >= 0, got {list(values)}")
        else:
            _require(all(0.0 < r <= 1.0 for r in values), where, f"values must be in (0, 1], got {list(values)}")
    _require(len(s.window) == 2 and 1 <= s.window[0] <= s.window[1], 'sweep.window',
             f"must be [first, last] with 1 <= first <= last, got {list(s.window)}")
    _require(s.tolerance > 0, 'sweep.tolerance', f"must be > 0, got {s.tolerance}")
