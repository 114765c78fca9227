"""Run configuration: a nested JSON document validated against a schema."""
from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Optional

import jsonschema

from .federation import FedAvg, Hessian, PerFedAvg, PersonalEval, PFedMe
from .models import DNN2, MLR

DEFAULT_MNIST_DIR = os.environ.get("MOREAU_FL_MNIST", str(Path.home() / "data" / "mnist"))

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_COUNT = {"type": "integer", "minimum": 1}

DATASET_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["mnist", "synthetic", "file"]},
        "path": {"type": ["string", "null"]},
        "N": _COUNT,
        "seed": {"type": "integer", "minimum": 0},
        "labels_per_client": _COUNT,
        "size_range": {"type": "array", "items": _COUNT, "minItems": 2, "maxItems": 2},
        "alpha_bar": _NONNEG,
        "beta_bar": _NONNEG,
        "size_min": _COUNT,
        "size_max": _COUNT,
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["algorithm", "model", "dataset"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "algorithm": {"enum": ["pfedme", "fedavg", "perfedavg"]},
        "model": {"enum": ["mlr", "dnn2"]},
        "dataset": DATASET_SCHEMA,
        "N": _COUNT, "S": _COUNT, "T": _COUNT, "R": _COUNT, "K": _COUNT,
        "batch_size": _COUNT, "eval_every": _COUNT, "hidden": _COUNT,
        "lambda": _POS, "eta": _POS, "beta": _NONNEG, "nu": _NONNEG,
        "inner_lr": _POS, "reg": _NONNEG, "alpha_hat": _NONNEG, "beta_hat": _POS,
        "hessian": {"enum": [h.value for h in Hessian]},
        "seed": {"type": "integer", "minimum": 0},
        "lazy_clients": {"type": "boolean"},
        "personal_eval": {"enum": [m.value for m in PersonalEval]},
    },
    "additionalProperties": False,
}


class ConfigError(ValueError):
    pass


@dataclass
class DatasetSpec:
    kind: str
    path: Optional[str] = None
    N: Optional[int] = None
    seed: int = 0
    labels_per_client: int = 2
    size_range: tuple[int, int] = (1165, 3834)
    alpha_bar: float = 0.5
    beta_bar: float = 0.5
    size_min: int = 250
    size_max: int = 25810

    def to_json(self) -> dict:
        base = {"kind": self.kind, "seed": self.seed, "N": self.N}
        if self.kind == "mnist":
            base.update(path=self.path, labels_per_client=self.labels_per_client,
                        size_range=list(self.size_range))
        elif self.kind == "synthetic":
            base.update(alpha_bar=self.alpha_bar, beta_bar=self.beta_bar,
                        size_min=self.size_min, size_max=self.size_max)
        else:
            base.update(path=self.path)
        return base


@dataclass
class FederationConfig:
    algorithm: str
    model: str
    dataset: DatasetSpec
    name: str = ""
    description: str = ""
    N: int = 20
    S: int = 5
    T: int = 800
    R: int = 20
    K: int = 5
    batch_size: int = 20
    lam: float = 15.0
    eta: float = 0.005
    beta: float = 1.0
    nu: float = 0.0
    inner_lr: float = 0.1
    reg: float = 1e-3
    hidden: int = 100
    alpha_hat: float = 0.03
    beta_hat: float = 0.003
    hessian: str = "first_order"
    eval_every: int = 1
    seed: int = 0
    lazy_clients: bool = False
    personal_eval: str = "local_pass"

    def __post_init__(self):
        if not 1 <= self.S <= self.N:
            raise ConfigError(f"S: need 1 <= S <= N, got S={self.S}, N={self.N}")
        if self.dataset.N is None:
            self.dataset.N = self.N
        elif self.dataset.N != self.N:
            raise ConfigError(f"dataset.N: {self.dataset.N} disagrees with N={self.N}")

    @property
    def label(self) -> str:
        return self.name or self.algorithm

    def algorithm_kind(self):
        if self.algorithm == "pfedme":
            return PFedMe(lam=self.lam, eta=self.eta, K=self.K, inner_lr=self.inner_lr, nu=self.nu)
        if self.algorithm == "fedavg":
            return FedAvg(eta=self.eta)
        return PerFedAvg(alpha_hat=self.alpha_hat, beta_hat=self.beta_hat, hessian=self.hessian)

    def model_spec(self, d: int, C: int):
        if self.model == "mlr":
            return MLR(d=d, C=C, reg=self.reg)
        return DNN2(d=d, H=self.hidden, C=C)

    def to_json(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            key = "lambda" if f.name == "lam" else f.name
            out[key] = value.to_json() if f.name == "dataset" else value
        return out

    def with_updates(self, **changes) -> "FederationConfig":
        doc = self.to_json()
        for key, value in changes.items():
            doc["lambda" if key == "lam" else key] = value
        return config_from_dict(doc)


def _format_error(err: jsonschema.ValidationError, prefix: str = "") -> str:
    where = ".".join([prefix] * bool(prefix) + [str(p) for p in err.absolute_path]) or "<root>"
    return f"{where}: {err.message}"


def _validate(doc, schema, prefix: str = "") -> None:
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(doc), key=str)
    if errors:
        raise ConfigError("; ".join(_format_error(e, prefix) for e in errors))


def _dataset_spec(ds: dict) -> DatasetSpec:
    if "size_range" in ds:
        ds["size_range"] = tuple(ds["size_range"])
    return DatasetSpec(**ds)


def dataset_spec_from_dict(doc: dict[str, Any]) -> DatasetSpec:
    doc = copy.deepcopy(doc)
    _validate(doc, DATASET_SCHEMA, "dataset")
    return _dataset_spec(doc)


def config_from_dict(doc: dict[str, Any]) -> FederationConfig:
    doc = copy.deepcopy(doc)
    _validate(doc, CONFIG_SCHEMA)
    ds = _dataset_spec(doc.pop("dataset"))
    if "lambda" in doc:
        doc["lam"] = doc.pop("lambda")
    return FederationConfig(dataset=ds, **doc)


def load_config(path) -> FederationConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    return config_from_dict(doc)


def preset_dir() -> Path:
    return Path(__file__).parent / "presets"


def load_preset(name: str) -> FederationConfig:
    path = preset_dir() / (name if name.endswith(".json") else name + ".json")
    return load_config(path)
