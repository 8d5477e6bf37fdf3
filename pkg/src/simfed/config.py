"""Run configuration: YAML files, flag overrides, validation, building.

The config dialect is YAML (declared in the run manifest). Unknown keys are
rejected by name at every nesting level; every range violation names the
offending key. A parsed :class:`RunConfig` round-trips losslessly through
``to_dict``/``from_dict``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
import yaml

from .data import (FederatedDataset, gen_synthetic_classification, gen_toy_sine,
                   partition_by_label, partition_iid, split_pool, toy_sine_truth)
from .errors import ConfigError
from .models import InitSpec, MlpModel, RbfFeatureModel
from .seeds import stream

__all__ = [
    "DatasetSpec",
    "PartitionSpec",
    "ModelSpec",
    "LrDecay",
    "RunConfig",
    "parse_config",
    "config_from_dict",
    "build_dataset",
    "build_model",
]

CONFIG_DIALECT = "yaml"


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _typed(value, types, key: str):
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(f"{key} has the wrong type (got a boolean)")
    if not isinstance(value, types):
        raise ConfigError(f"{key} has the wrong type (got {type(value).__name__})")
    return value


def _check_keys(mapping: dict, allowed: set[str], context: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown {context} key(s): {', '.join(sorted(unknown))}")


@dataclass(frozen=True)
class LrDecay:
    factor: float = 0.99
    interval: int = 10

    def __post_init__(self):
        _require(0.0 < self.factor <= 1.0, "lr_decay.factor must be in (0, 1]")
        _require(self.interval >= 1, "lr_decay.interval must be >= 1")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "toy_sine"
    # toy_sine
    n_clients: int = 50
    pts_per_client: int = 2
    a_mean: float = 1.0
    a_std: float = 0.2
    noise_std: float = 0.2
    x_design: str = "uniform"
    # synthetic_classification
    n_classes: int = 10
    n_per_class: int = 150
    d_in: int = 10
    cluster_spread: float = 0.35
    test_fraction: float = 0.33

    def __post_init__(self):
        _require(self.kind in ("toy_sine", "synthetic_classification"),
                 f"dataset.kind must be toy_sine or synthetic_classification, "
                 f"got {self.kind!r}")
        _require(self.n_clients >= 1, "dataset.n_clients must be >= 1")
        _require(self.pts_per_client >= 1, "dataset.pts_per_client must be >= 1")
        _require(self.a_std >= 0, "dataset.a_std must be >= 0")
        _require(self.noise_std >= 0, "dataset.noise_std must be >= 0")
        _require(self.x_design in ("uniform", "equispaced"),
                 "dataset.x_design must be uniform or equispaced")
        _require(self.n_classes >= 2, "dataset.n_classes must be >= 2")
        _require(self.n_per_class >= 1, "dataset.n_per_class must be >= 1")
        _require(self.d_in >= 1, "dataset.d_in must be >= 1")
        _require(self.cluster_spread > 0, "dataset.cluster_spread must be > 0")
        _require(0.0 < self.test_fraction < 1.0, "dataset.test_fraction must be in (0, 1)")


@dataclass(frozen=True)
class PartitionSpec:
    """How to deal a classification pool to clients (toy_sine needs none)."""

    kind: str = "iid"
    n_clients: int = 20
    noc: int = 2

    def __post_init__(self):
        _require(self.kind in ("iid", "by_label"),
                 f"partition.kind must be iid or by_label, got {self.kind!r}")
        _require(self.n_clients >= 1, "partition.n_clients must be >= 1")
        _require(self.noc >= 1, "partition.noc must be >= 1")


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "rbf"
    n_centers: int = 100
    bandwidth: float = 0.08
    center_layout: str = "random"
    hidden: tuple[int, ...] = (32,)
    activation: str = "tanh"

    def __post_init__(self):
        _require(self.kind in ("rbf", "mlp"), f"model.kind must be rbf or mlp, got {self.kind!r}")
        _require(self.n_centers >= 1, "model.n_centers must be >= 1")
        _require(self.bandwidth > 0, "model.bandwidth must be > 0")
        _require(self.center_layout in ("random", "grid"),
                 "model.center_layout must be random or grid")
        hidden = tuple(int(h) for h in self.hidden)
        _require(all(h >= 1 for h in hidden), "model.hidden sizes must be >= 1")
        _require(self.activation in ("tanh", "relu"),
                 "model.activation must be tanh or relu")
        object.__setattr__(self, "hidden", hidden)


@dataclass(frozen=True)
class RunConfig:
    algo: str = "fed_ensemble"
    k: int = 5
    ages: int = 10
    strata: int = 5
    clients_per_stratum: int | None = None
    local_epochs: int = 5
    lr: float = 0.1
    lr_decay: LrDecay = field(default_factory=LrDecay)
    prox_mu: float = 0.01
    l2_prior: float = 0.0
    batch_size: int | None = None
    weighting: str = "size"
    init_scheme: str = "normal_scaled"
    init_sigma: float = 1.0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    partition: PartitionSpec | None = None
    model: ModelSpec | None = None
    seed: int = 0
    out: str | None = None

    def __post_init__(self):
        _require(self.algo in ("fed_ensemble", "fedavg", "fedprox"),
                 f"algo must be fed_ensemble, fedavg or fedprox, got {self.algo!r}")
        _require(self.k >= 1, "K must be ≥ 1")
        _require(self.ages >= 0, "ages must be >= 0")
        _require(self.strata >= 1, "strata must be >= 1")
        if self.clients_per_stratum is not None:
            _require(self.clients_per_stratum >= 1, "clients_per_stratum must be >= 1")
        _require(self.local_epochs >= 1, "local_epochs must be >= 1")
        _require(self.lr > 0, "lr must be > 0")
        _require(self.prox_mu >= 0, "prox_mu must be >= 0")
        _require(self.l2_prior >= 0, "l2_prior must be >= 0")
        if self.batch_size is not None:
            _require(self.batch_size >= 1, "batch_size must be >= 1")
        _require(self.weighting in ("size", "uniform"),
                 "weighting must be size or uniform")
        _require(self.init_scheme in ("normal_scaled", "he", "xavier"),
                 "init.scheme must be normal_scaled, he or xavier")
        _require(self.init_sigma > 0, "init.sigma must be > 0")
        if self.algo in ("fedavg", "fedprox") and self.k != 1:
            # the baselines are single-mode by definition
            object.__setattr__(self, "k", 1)
        if self.dataset.kind == "synthetic_classification" and self.partition is None:
            object.__setattr__(self, "partition", PartitionSpec())
        if self.dataset.kind == "toy_sine" and self.partition is not None:
            raise ConfigError("partition does not apply to toy_sine (clients are generated)")
        if self.model is None:
            kind = "rbf" if self.dataset.kind == "toy_sine" else "mlp"
            object.__setattr__(self, "model", ModelSpec(kind=kind))
        if self.dataset.kind == "toy_sine" and self.model.kind != "rbf":
            raise ConfigError("model.kind must be rbf for the toy_sine dataset")
        if self.dataset.kind == "synthetic_classification" and self.model.kind != "mlp":
            raise ConfigError("model.kind must be mlp for synthetic_classification")

    @property
    def init(self) -> InitSpec:
        return InitSpec(scheme=self.init_scheme, sigma=self.init_sigma)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"]["hidden"] = list(d["model"]["hidden"])
        # the file dialect nests the init fields under one block and keeps
        # only the dataset keys that belong to the dataset's kind
        d["init"] = {"scheme": d.pop("init_scheme"), "sigma": d.pop("init_sigma")}
        allowed = _DS_KEYS_TOY if self.dataset.kind == "toy_sine" else _DS_KEYS_CLS
        d["dataset"] = {k: v for k, v in d["dataset"].items() if k in allowed}
        return d


_TOP_KEYS = {"algo", "k", "ages", "strata", "clients_per_stratum", "local_epochs",
             "lr", "lr_decay", "prox_mu", "l2_prior", "batch_size", "weighting",
             "init", "dataset", "partition", "model", "seed", "out"}
_DS_KEYS_TOY = {"kind", "n_clients", "pts_per_client", "a_mean", "a_std",
                "noise_std", "x_design"}
_DS_KEYS_CLS = {"kind", "n_classes", "n_per_class", "d_in", "cluster_spread",
                "test_fraction"}
_MODEL_KEYS = {"kind", "n_centers", "bandwidth", "center_layout", "hidden", "activation"}


def config_from_dict(raw: dict) -> RunConfig:
    """Build a validated RunConfig from nested plain dictionaries."""
    _typed(raw, dict, "config")
    _check_keys(raw, _TOP_KEYS, "config")
    kw: dict = {}
    for key in ("algo", "weighting", "out"):
        if key in raw and raw[key] is not None:
            kw[key] = _typed(raw[key], str, key)
    for key in ("k", "ages", "strata", "local_epochs", "seed"):
        if key in raw and raw[key] is not None:
            kw[key] = _typed(raw[key], int, key)
    for key in ("clients_per_stratum", "batch_size"):
        if key in raw and raw[key] is not None:
            kw[key] = _typed(raw[key], int, key)
    for key in ("lr", "prox_mu", "l2_prior"):
        if key in raw and raw[key] is not None:
            kw[key] = float(_typed(raw[key], (int, float), key))
    if raw.get("lr_decay") is not None:
        sub = _typed(raw["lr_decay"], dict, "lr_decay")
        _check_keys(sub, {"factor", "interval"}, "lr_decay")
        kw["lr_decay"] = LrDecay(
            factor=float(_typed(sub.get("factor", 0.99), (int, float), "lr_decay.factor")),
            interval=_typed(sub.get("interval", 10), int, "lr_decay.interval"))
    if raw.get("init") is not None:
        sub = _typed(raw["init"], dict, "init")
        _check_keys(sub, {"scheme", "sigma"}, "init")
        if "scheme" in sub:
            kw["init_scheme"] = _typed(sub["scheme"], str, "init.scheme")
        if "sigma" in sub:
            kw["init_sigma"] = float(_typed(sub["sigma"], (int, float), "init.sigma"))
    if raw.get("dataset") is not None:
        sub = _typed(raw["dataset"], dict, "dataset")
        kind = sub.get("kind", "toy_sine")
        allowed = _DS_KEYS_TOY if kind == "toy_sine" else _DS_KEYS_CLS
        _check_keys(sub, allowed, f"dataset ({kind})")
        kw["dataset"] = DatasetSpec(**sub)
    if raw.get("partition") is not None:
        sub = _typed(raw["partition"], dict, "partition")
        _check_keys(sub, {"kind", "n_clients", "noc"}, "partition")
        kw["partition"] = PartitionSpec(**sub)
    if raw.get("model") is not None:
        sub = _typed(raw["model"], dict, "model")
        _check_keys(sub, _MODEL_KEYS, "model")
        if "hidden" in sub:
            sub = dict(sub)
            sub["hidden"] = tuple(_typed(sub["hidden"], list, "model.hidden"))
        kw["model"] = ModelSpec(**sub)
    try:
        return RunConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Load a YAML config file and apply flag overrides on top.

    ``overrides`` uses the same top-level keys as the file (e.g. ``k``,
    ``ages``, ``seed``, ``algo``, ``out``); a value of None means the flag
    was not given. An empty or absent mapping falls back to full defaults.
    """
    raw: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                loaded = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a mapping at top level")
        raw = loaded
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    return config_from_dict(raw)


def build_dataset(cfg: RunConfig) -> tuple[FederatedDataset, dict]:
    """Materialize the training clients plus task extras.

    Extras: ``test_x``/``noiseless`` grid for the toy task; held-out
    ``test_pool`` for classification. Data randomness comes from the
    ``data`` (and ``partition``) streams of the master seed, so sweeps over
    training hyperparameters reuse identical datasets.
    """
    rng = stream(cfg.seed, "data")
    if cfg.dataset.kind == "toy_sine":
        ds = cfg.dataset
        fed = gen_toy_sine(ds.n_clients, ds.pts_per_client, a_mean=ds.a_mean,
                           a_std=ds.a_std, noise_std=ds.noise_std,
                           x_design=ds.x_design, seed=rng)
        grid = np.linspace(-1.0, 1.0, 201)
        return fed, {"test_x": grid, "noiseless": toy_sine_truth(grid, ds.a_mean)}
    ds = cfg.dataset
    pool = gen_synthetic_classification(ds.n_classes, ds.n_per_class, ds.d_in,
                                        cluster_spread=ds.cluster_spread, seed=rng)
    train_pool, test_pool = split_pool(pool, ds.test_fraction, seed=stream(cfg.seed, "split"))
    part = cfg.partition
    prng = stream(cfg.seed, "partition")
    if part.kind == "iid":
        fed = partition_iid(train_pool, part.n_clients, seed=prng)
    else:
        fed = partition_by_label(train_pool, part.n_clients, part.noc, seed=prng)
    return fed, {"test_pool": test_pool, "train_pool": train_pool}


def build_model(cfg: RunConfig, fed: FederatedDataset):
    """Materialize the model matching the dataset's task."""
    spec = cfg.model
    if spec.kind == "rbf":
        if spec.center_layout == "grid":
            # cell midpoints of [-1, 1]; deterministic, so no model stream draw
            centers = -1.0 + 2.0 * (np.arange(spec.n_centers) + 0.5) / spec.n_centers
            return RbfFeatureModel(centers=centers, bandwidth=spec.bandwidth)
        return RbfFeatureModel.sample(spec.n_centers, spec.bandwidth,
                                      seed=stream(cfg.seed, "model"))
    n_out = fed.n_classes if fed.task == "classification" else 1
    return MlpModel(sizes=(fed.d_in, *spec.hidden, n_out), activation=spec.activation,
                    task=fed.task)
