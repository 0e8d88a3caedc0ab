"""Training-run configuration files.

The format is INI-style sections of key/value pairs (parsed with
:mod:`configparser`, so malformed lines are rejected with line numbers).
Semantic validation collects every problem and reports them together,
named as ``section.key``.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass

import numpy as np

from .data import Checkerboard, GaussianMixture, TwoMoons, ring_mixture
from .errors import ConfigError
from .train import TrainConfig


@dataclass
class RunConfig:
    dataset: object
    model: dict
    train: TrainConfig
    conditional: bool
    raw: dict


def _read_ini(path):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as handle:
            parser.read_file(handle)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except configparser.Error as err:
        # configparser messages carry line numbers
        raise ConfigError([f"parse error: {err}"]) from None
    return {section: dict(parser.items(section)) for section in parser.sections()}


class _SectionReader:
    """Typed key access over one section, accumulating problems."""

    def __init__(self, name, values, problems):
        self.name = name
        self.values = dict(values)
        self.problems = problems

    def _fetch(self, key, cast, default, required, kind):
        if key not in self.values:
            if required:
                self.problems.append(f"{self.name}.{key}: missing required {kind}")
            return default
        raw = self.values.pop(key)
        try:
            return cast(raw)
        except (ValueError, json.JSONDecodeError):
            self.problems.append(f"{self.name}.{key}: expected {kind}, got {raw!r}")
            return default

    def string(self, key, default=None, required=False, choices=None):
        value = self._fetch(key, str, default, required, "string")
        if choices and value is not None and value not in choices:
            self.problems.append(f"{self.name}.{key}: must be one of {sorted(choices)}")
        return value

    def integer(self, key, default=None, required=False):
        return self._fetch(key, int, default, required, "integer")

    def floating(self, key, default=None, required=False):
        return self._fetch(key, float, default, required, "number")

    def boolean(self, key, default=None, required=False):
        def cast(raw):
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)

        return self._fetch(key, cast, default, required, "boolean")

    def json_value(self, key, default=None, required=False):
        return self._fetch(key, json.loads, default, required, "JSON value")

    def int_tuple(self, key, default=None, required=False):
        def cast(raw):
            return tuple(int(part) for part in raw.replace(",", " ").split())

        return self._fetch(key, cast, default, required, "comma-separated integers")

    def reject_unknown(self):
        for key in self.values:
            self.problems.append(f"{self.name}.{key}: unknown key")


def _build_dataset(reader: _SectionReader):
    kind = reader.string(
        "kind",
        required=True,
        choices={"ring_mixture", "gaussian_mixture", "two_moons", "checkerboard"},
    )
    dataset = None
    try:
        if kind == "ring_mixture":
            dataset = ring_mixture(
                n_modes=reader.integer("modes", default=8),
                radius=reader.floating("radius", default=4.0),
                sigma=reader.floating("sigma", default=0.3),
                labeled=reader.boolean("labeled", default=True),
            )
        elif kind == "gaussian_mixture":
            means = reader.json_value("means", required=True)
            sigmas = reader.json_value("sigmas", required=True)
            weights = reader.json_value("weights")
            labels = reader.json_value("labels")
            if means is not None and sigmas is not None:
                dataset = GaussianMixture(
                    means=np.asarray(means, dtype=np.float64),
                    sigmas=np.asarray(sigmas, dtype=np.float64),
                    weights=None if weights is None else np.asarray(weights, dtype=np.float64),
                    labels=None if labels is None else np.asarray(labels, dtype=np.int64),
                )
        elif kind == "two_moons":
            dataset = TwoMoons(noise=reader.floating("noise", default=0.1))
        elif kind == "checkerboard":
            dataset = Checkerboard(cells=reader.integer("cells", default=4))
    except (ValueError, TypeError) as err:
        reader.problems.append(f"dataset: {err}")
        dataset = None
    reader.reject_unknown()
    return dataset


def load_run_config(path):
    """Parse and validate a training config; raises ConfigError on problems."""
    raw = _read_ini(path)
    problems = []
    if "dataset" not in raw:
        problems.append("dataset: missing required section")
    if "train" not in raw:
        problems.append("train: missing required section")
    dataset = None
    if "dataset" in raw:
        dataset = _build_dataset(_SectionReader("dataset", raw["dataset"], problems))

    model_reader = _SectionReader("model", raw.get("model", {}), problems)
    model = {
        "hidden": model_reader.int_tuple("hidden", default=(64, 64, 64)),
        "activation": model_reader.string("activation", default="silu", choices={"silu", "tanh"}),
        "time_features": model_reader.integer("time_features", default=8),
        "cond_embed_dim": model_reader.integer("cond_embed_dim", default=8),
    }
    conditional = model_reader.boolean("conditional", default=True)
    model_reader.reject_unknown()

    train_reader = _SectionReader("train", raw.get("train", {}), problems)
    train_cfg = TrainConfig(
        steps=train_reader.integer("steps", required=True, default=0),
        batch_size=train_reader.integer("batch_size", default=64),
        learning_rate=train_reader.floating("learning_rate", default=1e-3),
        beta=train_reader.floating("beta", default=1.0),
        use_correction=train_reader.boolean("use_correction", default=True),
        label_dropout=train_reader.floating("label_dropout", default=0.1),
        ema_decay=train_reader.floating("ema_decay", default=0.999),
        pretrain_fraction=train_reader.floating("pretrain_fraction", default=0.7),
        seed=train_reader.integer("seed", default=0),
    )
    train_reader.reject_unknown()

    for section in raw:
        if section not in ("dataset", "model", "train"):
            problems.append(f"{section}: unknown section")
    if not problems:
        try:
            train_cfg.validate()
        except ValueError as err:
            problems.append(f"train: {err}")
        if train_cfg.steps < 1:
            problems.append("train.steps: must be >= 1")
        if conditional and dataset is not None and dataset.n_classes == 0:
            conditional = False  # unlabeled data cannot condition
    if problems:
        raise ConfigError(problems)
    return RunConfig(dataset=dataset, model=model, train=train_cfg, conditional=conditional, raw=raw)
