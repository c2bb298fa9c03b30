"""Run configuration: dataclasses plus JSON (de)serialization.

A run file looks like

    {
      "schema_version": 1,
      "network": {"conv_channels": [8, 16], "fc_units": 128, ...},
      "train": {"mode": "ternary", "epochs": 5, ...},
      "data": {"dataset": "mnist", "train_limit": 10000, ...}
    }

Every field is optional and falls back to its default. Unknown keys and
out-of-range values raise ConfigError naming the offending field, so a
typo never silently trains the wrong model.
"""

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError

SCHEMA_VERSION = 1

MODES = ("fp", "ternary", "binary", "gumbel")
DATASETS = ("mnist", "cifar10")


@dataclass
class NetworkConfig:
    input_shape: tuple = (1, 28, 28)  # (channels, height, width)
    conv_channels: tuple = (32, 64)
    conv_kernel: int = 5
    fc_units: int = 512
    num_classes: int = 10
    dropout_rate: float = 0.5


@dataclass
class TrainConfig:
    mode: str = "ternary"
    seed: int = 0
    epochs: int = 190
    batch_size: int = 256
    lr: float = 0.01
    lr_drops: tuple = ((100, 10.0),)  # (epoch, divisor), applied cumulatively
    weight_decay: float = 1e-4  # L2 on the full-precision output layer only
    probability_decay: float = 1e-11  # pulls logits toward the origin
    beta_penalty: float = 1e-6  # binary mode: pushes probabilities off 1/2
    init_p_min: float = 0.05
    init_p_max: float = 0.95
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    gumbel_tau: float = 0.1
    var_floor: float = 1e-10
    log_every: int = 50  # steps between CSV rows


@dataclass
class DataConfig:
    dataset: str = "mnist"
    data_dir: str = ""  # empty: use LRNET_DATA_DIR or ./data
    train_limit: int = 0  # 0 keeps the full training set
    val_size: int = 0  # examples reserved after the training slice
    augment: bool = False
    standardize: bool = True  # per-image standardization (color datasets)


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)


def _check(cond, name, msg):
    if not cond:
        raise ConfigError(f"{name} {msg}")


def _positive_int(value, name, minimum=1):
    _check(isinstance(value, int) and not isinstance(value, bool), name, "must be an integer")
    _check(value >= minimum, name, f"must be >= {minimum}, got {value}")
    return value


def _nonneg_float(value, name):
    _check(isinstance(value, (int, float)) and not isinstance(value, bool), name, "must be a number")
    _check(value >= 0.0, name, f"must be >= 0, got {value}")
    return float(value)


def validate(cfg):
    """Check every field of a RunConfig; returns the config on success."""
    net, tr, da = cfg.network, cfg.train, cfg.data

    _check(len(net.input_shape) == 3, "network.input_shape", "must have 3 entries")
    for v in net.input_shape:
        _positive_int(v, "network.input_shape")
    _check(len(net.conv_channels) >= 1, "network.conv_channels", "must be non-empty")
    for v in net.conv_channels:
        _positive_int(v, "network.conv_channels")
    _positive_int(net.conv_kernel, "network.conv_kernel")
    _positive_int(net.fc_units, "network.fc_units")
    _positive_int(net.num_classes, "network.num_classes", minimum=2)
    _check(0.0 <= net.dropout_rate < 1.0, "network.dropout_rate", f"must be in [0, 1), got {net.dropout_rate}")

    _check(tr.mode in MODES, "train.mode", f"must be one of {MODES}, got {tr.mode!r}")
    _check(isinstance(tr.seed, int) and not isinstance(tr.seed, bool) and tr.seed >= 0,
           "train.seed", f"must be a non-negative integer, got {tr.seed}")
    _positive_int(tr.epochs, "train.epochs", minimum=0)
    _positive_int(tr.batch_size, "train.batch_size")
    _nonneg_float(tr.lr, "train.lr")
    last = 0
    for drop in tr.lr_drops:
        _check(len(drop) == 2, "train.lr_drops", "entries must be (epoch, divisor) pairs")
        epoch, divisor = drop
        _positive_int(epoch, "train.lr_drops", minimum=1)
        _check(epoch > last, "train.lr_drops", "epochs must be strictly increasing")
        _check(divisor > 0, "train.lr_drops", f"divisor must be > 0, got {divisor}")
        last = epoch
    _nonneg_float(tr.weight_decay, "train.weight_decay")
    _nonneg_float(tr.probability_decay, "train.probability_decay")
    _nonneg_float(tr.beta_penalty, "train.beta_penalty")
    _check(0.0 < tr.init_p_min < tr.init_p_max < 1.0, "train.init_p_min",
           f"and train.init_p_max must satisfy 0 < p_min < p_max < 1, got {tr.init_p_min}, {tr.init_p_max}")
    _check(0.0 < tr.adam_beta1 < 1.0, "train.adam_beta1", f"must be in (0, 1), got {tr.adam_beta1}")
    _check(0.0 < tr.adam_beta2 < 1.0, "train.adam_beta2", f"must be in (0, 1), got {tr.adam_beta2}")
    _check(tr.adam_eps > 0.0, "train.adam_eps", f"must be > 0, got {tr.adam_eps}")
    _check(tr.gumbel_tau > 0.0, "train.gumbel_tau", f"must be > 0, got {tr.gumbel_tau}")
    _nonneg_float(tr.var_floor, "train.var_floor")
    _positive_int(tr.log_every, "train.log_every")

    _check(da.dataset in DATASETS, "data.dataset", f"must be one of {DATASETS}, got {da.dataset!r}")
    _check(isinstance(da.data_dir, str), "data.data_dir", "must be a string")
    _positive_int(da.train_limit, "data.train_limit", minimum=0)
    _positive_int(da.val_size, "data.val_size", minimum=0)
    _check(isinstance(da.augment, bool), "data.augment", "must be a boolean")
    _check(
        not (da.augment and da.dataset == "mnist"),
        "data.augment",
        "crop/flip augmentation applies to color images only",
    )
    _check(isinstance(da.standardize, bool), "data.standardize", "must be a boolean")
    return cfg


_SECTIONS = {"network": NetworkConfig, "train": TrainConfig, "data": DataConfig}
_TUPLE_FIELDS = {"input_shape", "conv_channels", "lr_drops"}


def _section_from_dict(cls, payload, section):
    names = {f.name for f in dataclasses.fields(cls)}
    values = {}
    for key, value in payload.items():
        if key not in names:
            raise ConfigError(f"unknown key {section}.{key}")
        if key in _TUPLE_FIELDS:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{section}.{key} must be a list")
            value = tuple(tuple(v) if isinstance(v, (list, tuple)) else v for v in value)
        values[key] = value
    return cls(**values)


def config_from_dict(payload):
    """Build and validate a RunConfig from a parsed JSON object."""
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a JSON object")
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    sections = {}
    for key, value in payload.items():
        if key == "schema_version":
            continue
        if key not in _SECTIONS:
            raise ConfigError(f"unknown section {key!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"section {key!r} must be an object")
        sections[key] = _section_from_dict(_SECTIONS[key], value, key)
    cfg = RunConfig(**sections)
    return validate(cfg)


def config_to_dict(cfg):
    return {
        "schema_version": SCHEMA_VERSION,
        "network": dataclasses.asdict(cfg.network),
        "train": dataclasses.asdict(cfg.train),
        "data": dataclasses.asdict(cfg.data),
    }


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(payload)


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def apply_overrides(payload, overrides):
    """Apply dotted-path overrides ("train.lr", 0.1) onto a config dict."""
    for path, value in overrides:
        parts = path.split(".")
        if len(parts) != 2:
            raise ConfigError(f"override key must look like section.field, got {path!r}")
        section, key = parts
        payload.setdefault(section, {})
        if not isinstance(payload[section], dict):
            raise ConfigError(f"section {section!r} must be an object")
        payload[section][key] = value
    return payload
