"""Run configuration: a YAML document with one section per parameter group.

Every key has a default reproducing the reference setup, so an empty
document is a valid configuration. Units are part of the key names. Unknown
keys and ill-typed values are rejected with the offending line number.
"""

from __future__ import annotations

import json
import math
import re
import types
import typing
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from importlib import resources

import yaml

from .forks import ForkParams
from .queue import ModelOptions, QueueParams
from .sim import SimConfig
from .wlan import DEFAULT_MCS_TABLE, PhyMacParams, load_mcs_table


class ConfigError(ValueError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


@dataclass
class DeploymentSection:
    n_aps: int = 19
    cell_radius_m: float = 10.0
    n_users: int = 10
    seeds: list = field(default_factory=lambda: list(range(10)))


@dataclass
class PhySection:
    bandwidth_hz: float = 20e6
    carrier_freq_hz: float = 5e9
    spatial_streams: int = 1
    phy_header_s: float = 20e-6
    ofdm_symbol_s: float = 4e-6
    tx_power_dbm: float = 20.0
    pl0_db: float = 5.0
    alpha: float = 4.4
    sigma_db: float = 9.5
    gamma_db: float = 30.0
    mcs_table: typing.Optional[str] = None


@dataclass
class MacSection:
    cw_min: int = 32
    cw_max: int = 32
    data_len_bits: int = 12_000
    ack_len_bits: int = 32
    rts_len_bits: int = 160
    cts_len_bits: int = 112
    mac_header_bits: int = 320
    max_ampdu: int = 1
    max_ppdu_s: float = 5484e-6
    difs_s: float = 34e-6
    sifs_s: float = 16e-6
    empty_slot_s: float = 9e-6
    cca_dbm: float = -82.0
    basic_rate_bps: float = 6e6


@dataclass
class BcSection:
    mu_blocks_per_s: float = 15.0
    tx_length_bits: int = 3000
    queue_length_tx: int = 10


@dataclass
class QueueSection:
    lambda_tps: float = 7.5
    block_size_tx: typing.Optional[int] = None
    block_size_kbits: typing.Optional[float] = 6.0
    timer_tw_s: typing.Optional[float] = 0.5  # null: no timer
    model: str = "exact"  # or "literal"


@dataclass
class ForkSection:
    enabled: bool = True
    miners: int = 19
    tbp_s: typing.Optional[float] = None  # null: derived from the link model
    link_mode: str = "shared"  # or "dedicated"
    readd_all_on_fork: bool = True


@dataclass
class SimSection:
    departures: typing.Optional[int] = 20_000
    seconds: typing.Optional[float] = None
    warmup_fraction: float = 0.2
    replications: int = 10
    seed: int = 0
    empty_blocks: bool = True
    timer_anchor: str = "departure"


@dataclass
class SweepSection:
    grid: dict = field(default_factory=dict)
    split_by: list = field(default_factory=list)
    workers: int = 1


@dataclass
class CompareSection:
    tolerance_pct: float = 10.0
    abs_tolerance: float = 0.0
    metrics: list = field(default_factory=lambda: ["delay"])


@dataclass
class E2ESection:
    densities: list = field(default_factory=lambda: [5, 10, 15, 20, 25, 30])
    link_modes: list = field(default_factory=lambda: ["shared", "dedicated"])
    forks: list = field(default_factory=lambda: [False, True])


@dataclass
class OutputSection:
    dir: str = "out"


@dataclass
class RunConfig:
    deployment: DeploymentSection = field(default_factory=DeploymentSection)
    phy: PhySection = field(default_factory=PhySection)
    mac: MacSection = field(default_factory=MacSection)
    bc: BcSection = field(default_factory=BcSection)
    queue: QueueSection = field(default_factory=QueueSection)
    fork: ForkSection = field(default_factory=ForkSection)
    sim: SimSection = field(default_factory=SimSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    compare: CompareSection = field(default_factory=CompareSection)
    e2e: E2ESection = field(default_factory=E2ESection)
    output: OutputSection = field(default_factory=OutputSection)

    # -- derived parameters ---------------------------------------------------

    @property
    def block_size_tx(self) -> int:
        q = self.queue
        if q.block_size_tx is not None:
            return q.block_size_tx
        tx = q.block_size_kbits * 1000 / self.bc.tx_length_bits
        if abs(tx - round(tx)) > 1e-9:
            raise ConfigError(f"block_size_kbits {q.block_size_kbits} is not a whole number of "
                              f"{self.bc.tx_length_bits}-bit transactions")
        return int(round(tx))

    @property
    def block_size_kbits(self) -> float:
        return self.block_size_tx * self.bc.tx_length_bits / 1000

    @property
    def timer(self) -> float:
        return math.inf if self.queue.timer_tw_s is None else self.queue.timer_tw_s

    @property
    def model_options(self) -> ModelOptions:
        return ModelOptions.literal() if self.queue.model == "literal" else ModelOptions()

    def phy_params(self) -> PhyMacParams:
        p, m = self.phy, self.mac
        return PhyMacParams(
            bandwidth=p.bandwidth_hz, carrier_freq=p.carrier_freq_hz, spatial_streams=p.spatial_streams,
            phy_header_T=p.phy_header_s, ofdm_symbol_T=p.ofdm_symbol_s, tx_power=p.tx_power_dbm,
            cw_min=m.cw_min, cw_max=m.cw_max, data_len_LD=m.data_len_bits, ack_len=m.ack_len_bits,
            rts_len=m.rts_len_bits, cts_len=m.cts_len_bits, mac_header_len=m.mac_header_bits,
            max_ampdu=m.max_ampdu, max_ppdu_T=m.max_ppdu_s, difs_T=m.difs_s, sifs_T=m.sifs_s,
            empty_slot_T=m.empty_slot_s, cca_threshold=m.cca_dbm, pl0=p.pl0_db, alpha=p.alpha,
            sigma=p.sigma_db, gamma_obs=p.gamma_db, basic_rate=m.basic_rate_bps,
        )

    def mcs_table(self):
        return DEFAULT_MCS_TABLE if self.phy.mcs_table is None else load_mcs_table(self.phy.mcs_table)

    def fork_params(self, t_bp: float) -> ForkParams:
        f = self.fork
        return ForkParams(f.miners, t_bp, f.readd_all_on_fork, f.enabled)

    def queue_params(self, t_bp: float | None = None) -> QueueParams:
        """Queue parameters; ``t_bp`` is required when the config leaves it unset."""
        fp = None
        if self.fork.miners > 1:
            d = self.fork.tbp_s if self.fork.tbp_s is not None else t_bp
            if d is None:
                raise ConfigError("fork.tbp_s is null and no derived propagation delay was given")
            fp = self.fork_params(d)
        return QueueParams(self.queue.lambda_tps, self.bc.mu_blocks_per_s, self.bc.queue_length_tx,
                           self.block_size_tx, self.timer, fp)

    # -- serialisation --------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), sort_keys=True)


SECTIONS = {f.name: f.type for f in fields(RunConfig)}
_CHOICES = {
    ("queue", "model"): ("exact", "literal"),
    ("fork", "link_mode"): ("shared", "dedicated"),
    ("sim", "timer_anchor"): ("departure", "first_arrival"),
}


def _section_cls(name):
    return {f.name: f.default_factory for f in fields(RunConfig)}[name]


def _field_types(cls):
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def _coerce(value, tp, where, line):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        tp = next(a for a in args if a is not type(None))
    if value is None:
        raise ConfigError(f"{where} may not be null", line)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false, got {value!r}", line)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{where} must be an integer, got {value!r}", line)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}", line)
        if math.isnan(value):
            raise ConfigError(f"{where} may not be NaN", line)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}", line)
        return value
    if tp is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list", line)
        return value
    if tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{where} must be a mapping", line)
        return value
    return value


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads exponent floats without a dot (``9e-06``)."""


_FLOAT = re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$""", re.X)
_Loader.yaml_implicit_resolvers = {k: [r for r in v if r[0] != "tag:yaml.org,2002:float"]
                                   for k, v in yaml.SafeLoader.yaml_implicit_resolvers.items()}
_Loader.add_implicit_resolver("tag:yaml.org,2002:float", _FLOAT, list("-+0123456789."))


def _plain(node):
    """Python value of a composed YAML node."""
    return _Loader("").construct_document(node) if node is not None else None


def _compose(text: str):
    try:
        return yaml.compose(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None) from None


def _set_field(section_obj, sec, key, value, line):
    types_ = _field_types(type(section_obj))
    if key not in types_:
        raise ConfigError(f"unknown key {key!r} in section {sec!r}", line)
    value = _coerce(value, types_[key], f"{sec}.{key}", line)
    allowed = _CHOICES.get((sec, key))
    if allowed and value not in allowed:
        raise ConfigError(f"{sec}.{key} must be one of {allowed}, got {value!r}", line)
    if sec == "queue" and key == "timer_tw_s" and value == math.inf:
        value = None
    elif isinstance(value, float) and math.isinf(value):
        raise ConfigError(f"{sec}.{key} must be finite", line)
    setattr(section_obj, key, value)
    # the two block-size keys are alternatives
    if sec == "queue" and key == "block_size_tx" and value is not None:
        section_obj.block_size_kbits = None
    elif sec == "queue" and key == "block_size_kbits" and value is not None:
        section_obj.block_size_tx = None


def from_text(text: str) -> RunConfig:
    root = _compose(text)
    cfg = RunConfig()
    if root is None:
        return cfg
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError("top level must be a mapping of sections", root.start_mark.line + 1)
    seen = set()
    for knode, vnode in root.value:
        sec = knode.value
        line = knode.start_mark.line + 1
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section {sec!r}", line)
        if sec in seen:
            raise ConfigError(f"duplicate section {sec!r}", line)
        seen.add(sec)
        if isinstance(vnode, yaml.ScalarNode) and vnode.tag.endswith(":null"):
            continue
        if not isinstance(vnode, yaml.MappingNode):
            raise ConfigError(f"section {sec!r} must be a mapping", line)
        obj = getattr(cfg, sec)
        keys = set()
        for k, v in vnode.value:
            kline = k.start_mark.line + 1
            if k.value in keys:
                raise ConfigError(f"duplicate key {k.value!r} in section {sec!r}", kline)
            keys.add(k.value)
            _set_field(obj, sec, k.value, _plain(v), v.start_mark.line + 1)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.queue.block_size_tx is None and cfg.queue.block_size_kbits is None:
        raise ConfigError("set queue.block_size_tx or queue.block_size_kbits")
    _ = cfg.block_size_tx
    for path in cfg.sweep.grid:
        _split_path(path)
    try:
        cfg.phy_params()
        if cfg.fork.miners < 1:
            raise ValueError("fork.miners must be >= 1")
        if cfg.fork.miners > cfg.deployment.n_aps:
            raise ValueError("fork.miners cannot exceed deployment.n_aps")
        t = 0.0 if cfg.fork.tbp_s is None else cfg.fork.tbp_s
        q = QueueParams(cfg.queue.lambda_tps, cfg.bc.mu_blocks_per_s, cfg.bc.queue_length_tx,
                        cfg.block_size_tx, cfg.timer,
                        ForkParams(cfg.fork.miners, t) if cfg.fork.miners > 1 else None)
        s = cfg.sim
        SimConfig(q, s.departures, s.seconds, s.warmup_fraction, s.seed, s.replications,
                  s.empty_blocks, s.timer_anchor)
        if not cfg.compare.tolerance_pct > 0 or cfg.compare.abs_tolerance < 0:
            raise ValueError("compare tolerances must be positive")
        unknown = set(cfg.compare.metrics) - {"delay", "drop", "occupancy"}
        if unknown or not cfg.compare.metrics:
            raise ValueError("compare.metrics must be drawn from delay, drop, occupancy")
        if cfg.sweep.workers < 1:
            raise ValueError("sweep.workers must be >= 1")
        if cfg.deployment.n_users < 1 or cfg.deployment.n_aps < 1 or not cfg.deployment.cell_radius_m > 0:
            raise ValueError("deployment needs n_users >= 1, n_aps >= 1 and a positive radius")
        if not all(isinstance(x, int) and not isinstance(x, bool) for x in cfg.deployment.seeds):
            raise ValueError("deployment.seeds must be integers")
        if not all(isinstance(x, int) and x >= 1 for x in cfg.e2e.densities):
            raise ValueError("e2e.densities must be positive integers")
        if not set(cfg.e2e.link_modes) <= {"shared", "dedicated"}:
            raise ValueError("e2e.link_modes must be drawn from shared, dedicated")
        if not all(isinstance(x, bool) for x in cfg.e2e.forks):
            raise ValueError("e2e.forks must be booleans")
        for k in cfg.sweep.split_by:
            if k not in cfg.sweep.grid:
                raise ValueError(f"sweep.split_by key {k!r} is not a grid axis")
        for k, v in cfg.sweep.grid.items():
            if not isinstance(v, list) or not v:
                raise ValueError(f"sweep.grid axis {k!r} must be a non-empty list")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load(path) -> RunConfig:
    with open(path) as fh:
        return from_text(fh.read())


def load_recipe(name: str) -> RunConfig:
    try:
        text = resources.files("wirelessbc").joinpath(f"recipes/{name}.yaml").read_text()
    except FileNotFoundError:
        raise ConfigError(f"unknown recipe {name!r}") from None
    return from_text(text)


def recipe_names() -> list[str]:
    d = resources.files("wirelessbc").joinpath("recipes")
    return sorted(p.name[:-5] for p in d.iterdir() if p.name.endswith(".yaml"))


def _split_path(path: str):
    sec, _, key = path.partition(".")
    if sec not in SECTIONS or not key:
        raise ConfigError(f"grid key {path!r} must be 'section.key'")
    if key not in _field_types(_section_cls(sec)().__class__):
        raise ConfigError(f"grid key {path!r}: unknown key {key!r} in section {sec!r}")
    return sec, key


def with_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Copy of ``cfg`` with dotted ``section.key`` values replaced."""
    out = RunConfig(**{name: replace(getattr(cfg, name)) for name in SECTIONS})
    for path, value in overrides.items():
        sec, key = _split_path(path)
        _set_field(getattr(out, sec), sec, key, value, None)
    validate(out)
    return out
