"""JSON experiment configuration: strict parsing and object assembly.

Unknown keys are rejected everywhere and every diagnostic names the offending
field, so a typo fails fast instead of silently running a default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .data import (
    ClientDataset,
    Dataset,
    load_csv,
    make_synthetic,
    partition_by_label,
    partition_iid,
    split_train_test,
)
from .models import Model, OneHiddenMlp, SoftmaxRegression
from .simulation import RoundConfig
from .tensorops import P_DATASET, P_PARTITION, rng_stream
from .wire import CompressionConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the field."""


class _Section:
    def __init__(self, mapping: dict, path: str):
        if not isinstance(mapping, dict):
            raise ConfigError(f"{path}: expected an object")
        self.mapping = dict(mapping)
        self.path = path

    def _label(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def take(self, key: str, kind, default=..., check=None, describe=""):
        if key in self.mapping:
            value = self.mapping.pop(key)
        elif default is not ...:
            return default
        else:
            raise ConfigError(f"{self._label(key)}: required field missing")
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
            raise ConfigError(f"{self._label(key)}: expected {kind.__name__}")
        if check is not None and not check(value):
            raise ConfigError(f"{self._label(key)}: {describe}")
        return value

    def section(self, key: str, default=...) -> "_Section":
        value = self.take(key, dict, default=default)
        return _Section(value, self._label(key))

    def done(self):
        if self.mapping:
            unknown = ", ".join(sorted(self.mapping))
            raise ConfigError(f"{self.path or 'config'}: unknown keys: {unknown}")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    rounds: int
    eval_interval: int
    output: str
    dataset: dict
    partition: dict
    model: dict
    round_cfg: RoundConfig
    compression: CompressionConfig


def parse_config(text: str) -> ExperimentConfig:
    try:
        root_map = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    root = _Section(root_map, "")

    seed = root.take("seed", int, check=lambda v: v >= 0, describe="must be >= 0")
    rounds = root.take("rounds", int, check=lambda v: v >= 0, describe="must be >= 0")
    eval_interval = root.take(
        "eval_interval", int, default=1, check=lambda v: v >= 1, describe="must be >= 1"
    )
    output = root.take("output", str)

    ds = root.section("dataset")
    kind = ds.take("kind", str, check=lambda v: v in ("synthetic", "csv"),
                   describe="must be 'synthetic' or 'csv'")
    positive = (lambda v: v > 0, "must be > 0")
    if kind == "synthetic":
        dataset = {
            "kind": kind,
            "classes": ds.take("classes", int, check=lambda v: v >= 2, describe="must be >= 2"),
            "dim": ds.take("dim", int, check=positive[0], describe=positive[1]),
            "train_examples": ds.take("train_examples", int, check=positive[0], describe=positive[1]),
            "test_examples": ds.take("test_examples", int, check=positive[0], describe=positive[1]),
            "class_spread": ds.take("class_spread", float, default=1.0, check=positive[0], describe=positive[1]),
            "noise": ds.take("noise", float, default=1.0, check=positive[0], describe=positive[1]),
        }
    else:
        dataset = {
            "kind": kind,
            "path": ds.take("path", str),
            "test_fraction": ds.take(
                "test_fraction", float, default=0.2,
                check=lambda v: 0 < v < 1, describe="must be in (0, 1)",
            ),
        }
    ds.done()

    part = root.section("partition")
    pkind = part.take("kind", str, check=lambda v: v in ("iid", "by_label"),
                      describe="must be 'iid' or 'by_label'")
    partition = {
        "kind": pkind,
        "clients": part.take("clients", int, check=positive[0], describe=positive[1]),
    }
    if pkind == "by_label":
        partition["labels_per_client"] = part.take(
            "labels_per_client", int, check=positive[0], describe=positive[1]
        )
    part.done()

    mdl = root.section("model")
    mkind = mdl.take("kind", str, check=lambda v: v in ("softmax", "mlp"),
                     describe="must be 'softmax' or 'mlp'")
    model = {"kind": mkind}
    if mkind == "mlp":
        model["hidden"] = mdl.take("hidden", int, default=128, check=positive[0], describe=positive[1])
    mdl.done()

    rnd = root.section("round")
    try:
        round_cfg = RoundConfig(
            clients_per_round=rnd.take("clients_per_round", int),
            local_epochs=rnd.take("local_epochs", int, default=1),
            local_lr=rnd.take("lr", float),
            server_lr=rnd.take("server_lr", float, default=1.0),
            batch_size=rnd.take("batch_size", int, default=32),
            weighted=rnd.take("weighted", bool, default=False),
        )
    except ValueError as exc:
        raise ConfigError(f"round: {exc}") from exc
    rnd.done()

    comp = root.section("compression", default={"scheme": "none"})
    bits = comp.mapping.pop("bits", None)  # JSON null and absent both mean unquantized
    if bits is not None and (not isinstance(bits, int) or isinstance(bits, bool)):
        raise ConfigError("compression.bits: expected int or null")
    try:
        compression = CompressionConfig(
            scheme=comp.take("scheme", str, default="none"),
            mode_fraction=comp.take("mode_fraction", float, default=1.0),
            bits=bits,
            rotate=comp.take("rotate", bool, default=False),
            exempt_below_fraction=comp.take("exempt_below_fraction", float, default=0.0001),
        )
    except ValueError as exc:
        raise ConfigError(f"compression: {exc}") from exc
    comp.done()

    root.done()
    if round_cfg.clients_per_round > partition["clients"]:
        raise ConfigError("round.clients_per_round: exceeds partition.clients")
    return ExperimentConfig(
        seed, rounds, eval_interval, output, dataset, partition, model, round_cfg, compression
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def build_problem(cfg: ExperimentConfig) -> tuple[Model, list[ClientDataset], Dataset]:
    """Materialize dataset, client partition, and model from a parsed config."""
    data_rng = rng_stream(cfg.seed, P_DATASET)
    if cfg.dataset["kind"] == "synthetic":
        train, test = make_synthetic(
            classes=cfg.dataset["classes"],
            dim=cfg.dataset["dim"],
            n_train=cfg.dataset["train_examples"],
            n_test=cfg.dataset["test_examples"],
            rng=data_rng,
            class_spread=cfg.dataset["class_spread"],
            noise=cfg.dataset["noise"],
        )
    else:
        full = load_csv(cfg.dataset["path"])
        train, test = split_train_test(full, cfg.dataset["test_fraction"], data_rng)

    part_rng = rng_stream(cfg.seed, P_PARTITION)
    if cfg.partition["kind"] == "iid":
        clients = partition_iid(train, cfg.partition["clients"], part_rng)
    else:
        clients = partition_by_label(
            train, cfg.partition["clients"], cfg.partition["labels_per_client"], part_rng
        )

    dim = train.x.shape[1]
    if cfg.model["kind"] == "softmax":
        model: Model = SoftmaxRegression(dim=dim, classes=train.classes)
    else:
        model = OneHiddenMlp(dim=dim, classes=train.classes, hidden=cfg.model["hidden"])
    return model, clients, test
