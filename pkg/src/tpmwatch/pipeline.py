"""Run configuration and method dispatch shared by the command line and sweeps.

Every default lives in :data:`DEFAULTS`; a run configuration is that table
updated with a JSON config file and then with command-line overrides.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import (D2qModel, OrModel, WlrModel, d2q_predict, d2q_train, or_predict, or_train,
                        wlr_predict, wlr_train)
from .data import Dataset, load_csv
from .deconfound import DeconfoundedModel, conditional_distribution, predict_deconfounded, train_deconfounded
from .metrics import mae, xauc
from .net import MultiHeadNet, NetConfig, OptimizerConfig
from .ranks import build_scale, build_tree
from .tpm import LossWeights, TpmModel, TrainConfig, leaf_means, train

__all__ = [
    "DEFAULTS",
    "METHODS",
    "ConfigError",
    "RunConfig",
    "fit_method",
    "predict_dataset",
    "evaluate_model",
    "load_dataset",
]

METHODS = ("tpm", "tpm-deconfounded", "wlr", "d2q", "or")
SWEEP_AXES = ("num_leaves", "num_groups", "alpha2")

DEFAULTS = {
    "method": "tpm",
    "seed": 0,
    "num_leaves": 32,
    "num_groups": 32,
    "tree_kind": "balanced",
    # per-leaf watch time for plain TPM: "midpoint" or "empirical_mean"
    "leaf_value": "midpoint",
    "net": {"hidden_dims": [64, 32], "activation": "relu"},
    "train": {
        "epochs": 20,
        "batch_size": 256,
        "weights": {"alpha1": 1.0, "alpha2": 1.0, "alpha3": 1.0},
        "optimizer": {"name": "adam", "lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
    },
    "deconfound": {"conditioning": "shared", "scale_mode": "per_group", "eval_mode": "conditional"},
    "wlr": {"threshold_quantile": 0.25},
    "or": {"grouped": False},
    "data": {"train": None, "eval": None, "label": "watch_time", "duration": "duration",
             "features": None, "test_fraction": 0.2},
    "output": {"model": "model.json", "log": None},
    # free-form SyntheticSpec fields read by ``gen-synthetic``
    "synthetic": None,
}


class ConfigError(ValueError):
    """Carries every problem found, not just the first."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _merge(base: dict, extra: dict, path="") -> list[str]:
    problems = []
    for key, value in extra.items():
        where = f"{path}{key}"
        if key not in base:
            problems.append(f"unknown config key {where!r}")
        elif isinstance(base[key], dict):
            if not isinstance(value, dict):
                problems.append(f"{where!r} must be a mapping")
            else:
                problems += _merge(base[key], value, where + ".")
        else:
            base[key] = value
    return problems


@dataclass
class RunConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def from_dict(cls, d: dict | None = None, **overrides) -> RunConfig:
        cfg, problems = cls.collect(d, **overrides)
        if problems:
            raise ConfigError(problems)
        return cfg

    @classmethod
    def collect(cls, d: dict | None = None, **overrides) -> tuple[RunConfig, list[str]]:
        """Build a config without raising; returns it with the list of problems."""
        raw = copy.deepcopy(DEFAULTS)
        problems = _merge(raw, d or {})
        for dotted, value in overrides.items():
            if value is None:
                continue
            node = raw
            *parents, leaf = dotted.split(".")
            for p in parents:
                node = node[p]
            node[leaf] = value
        cfg = cls(raw)
        try:
            problems += cfg.problems()
        except TypeError as err:
            problems.append(f"malformed config value: {err}")
        return cfg, problems

    @classmethod
    def from_file(cls, path, **overrides) -> RunConfig:
        return cls.from_dict(read_config_file(path), **overrides)

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def method(self) -> str:
        return self.raw["method"]

    def needs_duration(self) -> bool:
        return self.method in ("d2q", "tpm-deconfounded") or (self.method == "or" and self.raw["or"]["grouped"])

    def problems(self) -> list[str]:
        r = self.raw
        out = []
        if r["method"] not in METHODS:
            out.append(f"method must be one of {list(METHODS)}, got {r['method']!r}")
        if not isinstance(r["num_leaves"], int) or r["num_leaves"] < 2:
            out.append("num_leaves must be an integer >= 2")
        if not isinstance(r["num_groups"], int) or r["num_groups"] < 1:
            out.append("num_groups must be an integer >= 1")
        if r["tree_kind"] not in ("balanced", "linear"):
            out.append("tree_kind must be 'balanced' or 'linear'")
        if r["leaf_value"] not in ("midpoint", "empirical_mean"):
            out.append("leaf_value must be 'midpoint' or 'empirical_mean'")
        elif r["leaf_value"] != "midpoint" and r["method"] != "tpm":
            out.append("leaf_value 'empirical_mean' is only supported for method 'tpm'")
        if not isinstance(r["seed"], int):
            out.append("seed must be an integer")
        try:
            self.net_config_for_input(1)
        except (TypeError, ValueError) as err:
            out.append(f"net: {err}")
        try:
            self.train_config()
        except (TypeError, ValueError) as err:
            out.append(f"train: {err}")
        dc = r["deconfound"]
        if dc["conditioning"] not in ("shared", "independent"):
            out.append("deconfound.conditioning must be 'shared' or 'independent'")
        if dc["scale_mode"] not in ("per_group", "global"):
            out.append("deconfound.scale_mode must be 'per_group' or 'global'")
        if dc["eval_mode"] not in ("conditional", "do"):
            out.append("deconfound.eval_mode must be 'conditional' or 'do'")
        if not 0 < r["wlr"]["threshold_quantile"] < 1:
            out.append("wlr.threshold_quantile must lie in (0, 1)")
        if not 0 < r["data"]["test_fraction"] < 1:
            out.append("data.test_fraction must lie in (0, 1)")
        if self.needs_duration() and not r["data"]["duration"]:
            out.append(f"method {r['method']!r} requires a duration column")
        return out

    def net_config_for_input(self, input_dim: int) -> NetConfig:
        n = self.raw["net"]
        return NetConfig(input_dim=input_dim, hidden_dims=tuple(n["hidden_dims"]), num_heads=1,
                         seed=self.raw["seed"], activation=n["activation"])

    def train_config(self) -> TrainConfig:
        t = self.raw["train"]
        return TrainConfig(weights=LossWeights(**t["weights"]), batch_size=t["batch_size"],
                           epochs=t["epochs"], optimizer=OptimizerConfig(**t["optimizer"]),
                           seed=self.raw["seed"])

    def check_dataset(self, ds: Dataset, role: str = "training") -> list[str]:
        out = []
        if self.needs_duration() and ds.duration is None:
            out.append(f"method {self.method!r} requires a duration column "
                       f"({self.raw['data']['duration']!r}) in the {role} data")
        return out


def read_config_file(path) -> dict:
    if not path:
        return {}
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError([f"cannot read config {path}: {err}"]) from None
    if not isinstance(d, dict):
        raise ConfigError([f"config {path} must hold a JSON object"])
    return d


def load_dataset(cfg: RunConfig, path) -> Dataset:
    d = cfg.raw["data"]
    return load_csv(path, label=d["label"], duration=d["duration"], features=d["features"])


def fit_method(cfg: RunConfig, ds: Dataset):
    """Train the configured method on ``ds``; returns ``(model, TrainLog)``."""
    problems = cfg.check_dataset(ds)
    if problems:
        raise ConfigError(problems)
    r = cfg.raw
    X, T = ds.features, ds.watch_time
    netcfg = cfg.net_config_for_input(ds.input_dim)
    tcfg = cfg.train_config()
    m = cfg.method
    if m in ("tpm", "tpm-deconfounded", "or"):
        scale = build_scale(T, r["num_leaves"])
        tree = build_tree(scale, r["tree_kind"])
    if m == "tpm":
        net = MultiHeadNet(replace(netcfg, num_heads=tree.num_heads))
        values = leaf_means(tree, T) if r["leaf_value"] == "empirical_mean" else None
        _, log = train(X, T, tree, net, tcfg, leaf_values=values)
        return TpmModel(tree, net, values), log
    if m == "tpm-deconfounded":
        dc = r["deconfound"]
        return train_deconfounded(X, T, ds.duration, tree, netcfg, tcfg, num_groups=r["num_groups"],
                                  conditioning=dc["conditioning"], scale_mode=dc["scale_mode"])
    if m == "wlr":
        return wlr_train(X, T, netcfg, tcfg, threshold_quantile=r["wlr"]["threshold_quantile"])
    if m == "d2q":
        return d2q_train(X, T, ds.duration, netcfg, tcfg, num_groups=r["num_groups"])
    if m == "or":
        grouped = r["or"]["grouped"]
        return or_train(X, T, scale, netcfg, tcfg, duration=ds.duration if grouped else None,
                        num_groups=r["num_groups"] if grouped else None)
    raise ConfigError([f"unknown method {m!r}"])


def predict_dataset(model, ds: Dataset, eval_mode: str = "conditional"):
    """Point predictions and (for the TPM family) predicted standard deviations.

    The std-dev is ``None`` for methods that do not produce a distribution.
    """
    X = ds.features
    if isinstance(model, TpmModel):
        dist = model.predict(X)
        return dist.expectation, np.sqrt(dist.variance)
    if isinstance(model, DeconfoundedModel):
        if eval_mode == "conditional" and ds.duration is None:
            raise ConfigError(["conditional-mode prediction needs a duration column"])
        if eval_mode == "do":
            return predict_deconfounded(model, X, "do"), None
        e, var = conditional_distribution(model, X, confounder=ds.duration)
        return e, np.sqrt(var)
    if isinstance(model, WlrModel):
        return wlr_predict(model, X), None
    if isinstance(model, D2qModel):
        if ds.duration is None:
            raise ConfigError(["D2Q prediction needs a duration column"])
        return d2q_predict(model, X, ds.duration), None
    if isinstance(model, OrModel):
        if model.partition is not None and ds.duration is None:
            raise ConfigError(["grouped OR prediction needs a duration column"])
        return or_predict(model, X, ds.duration if model.partition is not None else None), None
    raise TypeError(f"unsupported model {type(model).__name__}")


def evaluate_model(model, ds: Dataset, eval_mode: str = "conditional", method: str | None = None) -> dict:
    """Metrics record: MAE, XAUC and mean predicted std-dev (``None`` if not available)."""
    pred, std = predict_dataset(model, ds, eval_mode)
    return {
        "method": method,
        "n": len(ds),
        "mae": mae(pred, ds.watch_time),
        "xauc": xauc(pred, ds.watch_time),
        "mean_std": None if std is None else float(np.mean(std)),
    }
