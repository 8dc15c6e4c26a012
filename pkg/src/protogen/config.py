"""Run configuration: a sectioned INI file with a fixed set of keys.

Example::

    [run]
    seed = 7

    [data]
    n_classes = 40
    dim = 32
    samples_per_class = 200
    outlier_fraction = 0.3
    outlier_shift = 6
    mean_rank = 8
    split = 20,10,10

    [train]
    epochs = 50
    episodes_per_epoch = 100

    [paths]
    dataset = data/all.csv
    train = data/train.csv
    val = data/val.csv
    test = data/test.csv
    checkpoint = out/generator.ckpt

Relative paths are resolved against the directory holding the config file.
Unknown sections or keys are rejected.  Per-component seeds are derived
from ``run.seed`` so a single override reseeds the whole pipeline.
"""

import configparser
import os
from dataclasses import dataclass, field, replace

from .errors import ConfigError
from .evaluation import DEFAULT_EPISODES, STRATEGIES
from .embeddings import SyntheticSpec
from .generator import AttentionConfig
from .sampler import EpisodeSpec
from .training import TrainConfig

_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _int(s):
    return int(s)


def _opt_int(s):
    return None if s.strip().lower() in ("", "none") else int(s)


def _float(s):
    return float(s)


def _bool(s):
    try:
        return _BOOL[s.strip().lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {s!r}") from None


def _split(s):
    parts = [p.strip() for p in s.split(",") if p.strip()]
    return tuple(int(p) for p in parts)


def _strategy(s):
    s = s.strip()
    if s not in STRATEGIES:
        raise ValueError(f"expected one of {', '.join(STRATEGIES)}")
    return s


SCHEMA = {
    "run": {"seed": _int},
    "data": {
        "n_classes": _int,
        "dim": _int,
        "samples_per_class": _int,
        "mean_scale": _float,
        "within_std": _float,
        "outlier_fraction": _float,
        "outlier_shift": _float,
        "mean_rank": _opt_int,
        "split": _split,
    },
    "attention": {
        "n_heads": _int,
        "d_k": _opt_int,
        "d_v": _opt_int,
        "dropout_rate": _float,
        "layer_norm_eps": _float,
    },
    "train": {
        "epochs": _int,
        "episodes_per_epoch": _int,
        "n_way": _int,
        "k_shot": _int,
        "query_per_class": _int,
        "initial_lr": _float,
        "decay_factor": _float,
        "patience": _int,
        "momentum": _float,
        "val_episodes": _int,
        "squared_loss": _bool,
    },
    "eval": {
        "strategy": _strategy,
        "n_way": _int,
        "k_shot": _int,
        "query_per_class": _int,
        "episodes": _int,
    },
    "paths": {
        "dataset": str,
        "train": str,
        "val": str,
        "test": str,
        "checkpoint": str,
        "train_log": str,
        "report": str,
        "summary": str,
    },
}


@dataclass
class RunConfig:
    seed: int = 0
    data: dict = field(default_factory=dict)
    attention: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    # -- component views ---------------------------------------------------

    def synthetic_spec(self):
        d = self.data
        return SyntheticSpec(
            n_classes=d.get("n_classes", 40),
            dim=d.get("dim", 32),
            samples_per_class=d.get("samples_per_class", 200),
            mean_scale=d.get("mean_scale", 1.0),
            within_std=d.get("within_std", 1.5),
            outlier_fraction=d.get("outlier_fraction", 0.3),
            outlier_shift=d.get("outlier_shift", 6.0),
            seed=self.seed,
            mean_rank=d.get("mean_rank"),
        )

    def attention_config(self, d_model):
        a = self.attention
        heads = a.get("n_heads", 4)
        d_head = d_model // heads if d_model % heads == 0 else max(1, d_model // heads)
        return AttentionConfig(
            n_heads=heads,
            d_model=d_model,
            d_k=a.get("d_k") or d_head,
            d_v=a.get("d_v") or d_head,
            dropout_rate=a.get("dropout_rate", 0.1),
            layer_norm_eps=a.get("layer_norm_eps", 1e-5),
        )

    def train_config(self, d_model):
        t = self.train
        n, k, q = t.get("n_way", 5), t.get("k_shot", 5), t.get("query_per_class", 15)
        return TrainConfig(
            epochs=t.get("epochs", 200),
            episodes_per_epoch=t.get("episodes_per_epoch", 200),
            episode_spec=EpisodeSpec(n, k, q, seed=self.seed + 1),
            initial_lr=t.get("initial_lr", 0.01),
            decay_factor=t.get("decay_factor", 0.618),
            patience=t.get("patience", 7),
            momentum=t.get("momentum", 0.0),
            val_spec=EpisodeSpec(n, k, q, seed=self.seed + 2),
            val_episodes=t.get("val_episodes", 100),
            seed=self.seed,
            attention=self.attention_config(d_model),
            squared_loss=t.get("squared_loss", False),
        )

    def eval_spec(self):
        e = self.eval
        return EpisodeSpec(e.get("n_way", 5), e.get("k_shot", 5), e.get("query_per_class", 15), seed=self.seed + 3)

    @property
    def eval_episodes(self):
        return self.eval.get("episodes", DEFAULT_EPISODES)

    @property
    def strategy(self):
        return self.eval.get("strategy", "generator")

    def path(self, key):
        p = self.paths.get(key)
        if p is None:
            raise ConfigError(f"missing [paths] {key}")
        return p

    def with_overrides(self, seed=None, paths=None):
        new_paths = dict(self.paths)
        new_paths.update({k: v for k, v in (paths or {}).items() if v is not None})
        return replace(self, seed=self.seed if seed is None else seed, paths=new_paths)


def parse_config(text, base_dir="."):
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = RunConfig()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        keys = SCHEMA[section]
        values = {}
        for key, raw in parser.items(section):
            if key not in keys:
                raise ConfigError(f"unknown config key '{key}' in [{section}]")
            try:
                values[key] = keys[key](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for [{section}] {key}: {exc}") from None
        if section == "run":
            cfg.seed = values.get("seed", 0)
        elif section == "paths":
            cfg.paths = {k: os.path.normpath(os.path.join(base_dir, v)) for k, v in values.items()}
        else:
            setattr(cfg, section, values)
    # surface component-level validation at parse time
    try:
        if cfg.data:
            cfg.synthetic_spec()
        if cfg.eval:
            cfg.eval_spec()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, base_dir=os.path.dirname(os.path.abspath(path)))
