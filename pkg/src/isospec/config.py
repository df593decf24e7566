"""Strict JSON experiment configurations."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .symbols import Symbol

EXPERIMENTS = ("spectrum", "weyl", "trace", "morsebott", "mehler", "statphase", "shift")
MODEL_KINDS = ("oscillator", "sqrt", "hopf", "general")
TOP_KEYS = {"experiment", "name", "description", "model", "lambda", "window", "n",
            "output_dir", "seed", "packet", "samples", "expect"}
MODEL_KEYS = {
    "oscillator": {"kind", "d"},
    "sqrt": {"kind", "d", "a"},
    "hopf": {"kind", "c"},
    "general": {"kind", "symbol", "N_max"},
}
LAMBDA_KEYS = {"min", "max", "points", "spacing"}
WINDOW_KEYS = {"shape", "width", "center_t"}
PACKET_KEYS = {"xi0", "width"}
EXPECT_KEYS = {
    "spectrum": {"counting_at_max"},
    "weyl": {"exponent_max", "exponent_band", "coefficient_rtol", "gap_bounded", "gap_decaying"},
    "trace": {"exponent_band", "poisson_ratio_max"},
    "morsebott": {"k", "flat"},
    "mehler": {"max_error"},
    "statphase": {"exponent_tolerance", "exponent"},
    "shift": {"rel_tol", "linearity_tol"},
}


@dataclass
class ModelConfig:
    kind: str
    d: int
    a: float = 1.0
    c: list = field(default_factory=list)
    symbol: dict | None = None
    N_max: int = 0

    def parsed_symbol(self):
        return Symbol.from_json(json.dumps(self.symbol))


@dataclass
class LambdaConfig:
    min: float
    max: float
    points: int = 2
    spacing: str = "linear"

    def grid(self):
        if self.spacing == "log":
            return np.geomspace(self.min, self.max, self.points)
        return np.linspace(self.min, self.max, self.points)


@dataclass
class WindowConfig:
    shape: str = "gaussian"
    width: float = math.pi / 8
    center_t: float | None = None


@dataclass
class PacketConfig:
    xi0: list
    width: float = 1.0


@dataclass
class ExperimentConfig:
    experiment: str
    model: ModelConfig | None
    lambda_: LambdaConfig | None
    window: WindowConfig
    n: int = 1
    output_dir: str = "out"
    seed: int = 0
    name: str = ""
    description: str = ""
    packet: PacketConfig | None = None
    samples: int = 0
    expect: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lambda_")
        return d


def _type(value, types, key):
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(f"{key}: expected {types}, got a boolean", key)
    if not isinstance(value, types):
        raise ConfigError(f"{key}: expected {types}, got {type(value).__name__}", key)
    return value


def _path(key, name):
    return f"{key}.{name}" if key else name


def _number(doc, name, key, default=None, positive=False):
    where = _path(key, name)
    if name not in doc:
        if default is None:
            raise ConfigError(f"{where}: missing required key", where)
        return default
    v = float(_type(doc[name], (int, float), where))
    if not math.isfinite(v) or (positive and v <= 0):
        raise ConfigError(f"{where}: must be {'positive and ' if positive else ''}finite", where)
    return v


def _integer(doc, name, key, default=None, minimum=None):
    where = _path(key, name)
    if name not in doc:
        if default is None:
            raise ConfigError(f"{where}: missing required key", where)
        return default
    v = _type(doc[name], int, where)
    if minimum is not None and v < minimum:
        raise ConfigError(f"{where}: must be >= {minimum}", where)
    return v


def _strict(doc, allowed, key):
    _type(doc, dict, key or "config")
    for k in doc:
        if k not in allowed:
            where = f"{key}.{k}" if key else k
            raise ConfigError(f"unknown key {where!r}", where)


def _model(doc):
    _type(doc, dict, "model")
    kind = doc.get("kind")
    if kind not in MODEL_KINDS:
        raise ConfigError(f"model.kind: expected one of {MODEL_KINDS}, got {kind!r}", "model.kind")
    _strict(doc, MODEL_KEYS[kind], "model")
    if kind == "oscillator":
        return ModelConfig(kind, _integer(doc, "d", "model", minimum=1))
    if kind == "sqrt":
        return ModelConfig(kind, _integer(doc, "d", "model", minimum=1),
                           a=_number(doc, "a", "model", default=1.0))
    if kind == "hopf":
        c = _type(doc.get("c"), list, "model.c")
        if not c or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in c):
            raise ConfigError("model.c: expected a non-empty list of numbers", "model.c")
        if max(abs(float(v)) for v in c) >= 1.0:
            raise ConfigError("model.c: the diagonal model needs max |c_j| < 1", "model.c")
        return ModelConfig(kind, len(c), c=[float(v) for v in c])
    sym = _type(doc.get("symbol"), dict, "model.symbol")
    try:
        s = Symbol.from_json(json.dumps(sym))
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"model.symbol: {exc}", "model.symbol") from exc
    return ModelConfig(kind, s.d, symbol=sym, N_max=_integer(doc, "N_max", "model", minimum=1))


def parse_config(doc) -> ExperimentConfig:
    """Validate a decoded JSON document; raises ConfigError naming the offending key."""
    _strict(doc, TOP_KEYS, "")
    exp = doc.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment: expected one of {EXPERIMENTS}, got {exp!r}", "experiment")
    model = _model(doc["model"]) if "model" in doc else None
    if model is None and exp not in ("mehler",):
        raise ConfigError("model: missing required key", "model")
    lam = None
    if "lambda" in doc:
        ld = doc["lambda"]
        _strict(ld, LAMBDA_KEYS, "lambda")
        lo = _number(ld, "min", "lambda", positive=True)
        hi = _number(ld, "max", "lambda", positive=True)
        if not lo < hi:
            raise ConfigError("lambda.max: must exceed lambda.min", "lambda.max")
        spacing = ld.get("spacing", "linear")
        if spacing not in ("linear", "log"):
            raise ConfigError("lambda.spacing: expected 'linear' or 'log'", "lambda.spacing")
        lam = LambdaConfig(lo, hi, _integer(ld, "points", "lambda", default=2, minimum=2), spacing)
    elif exp in ("spectrum", "weyl", "trace", "statphase"):
        raise ConfigError("lambda: missing required key", "lambda")
    window = WindowConfig()
    if "window" in doc:
        wd = doc["window"]
        _strict(wd, WINDOW_KEYS, "window")
        shape = wd.get("shape", "gaussian")
        if shape not in ("gaussian", "hann_bump"):
            raise ConfigError("window.shape: expected 'gaussian' or 'hann_bump'", "window.shape")
        center = _number(wd, "center_t", "window") if "center_t" in wd else None
        window = WindowConfig(shape, _number(wd, "width", "window", default=math.pi / 8,
                                             positive=True), center)
    packet = None
    if "packet" in doc:
        pd = doc["packet"]
        _strict(pd, PACKET_KEYS, "packet")
        xi0 = _type(pd.get("xi0"), list, "packet.xi0")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in xi0):
            raise ConfigError("packet.xi0: expected a list of numbers", "packet.xi0")
        packet = PacketConfig([float(v) for v in xi0],
                              _number(pd, "width", "packet", default=1.0, positive=True))
        if model is not None and len(xi0) != model.d:
            raise ConfigError("packet.xi0: length must equal the model dimension", "packet.xi0")
    elif exp == "shift":
        raise ConfigError("packet: missing required key", "packet")
    expect = doc.get("expect", {})
    _strict(expect, EXPECT_KEYS[exp], "expect")
    for k in ("name", "description", "output_dir"):
        if k in doc:
            _type(doc[k], str, k)
    if exp == "shift" and (model is None or model.kind != "hopf"):
        raise ConfigError("model.kind: the shift experiment needs the hopf diagonal model",
                          "model.kind")
    if exp == "weyl" and model.kind == "general":
        raise ConfigError("model.kind: the weyl experiment needs an exact model", "model.kind")
    return ExperimentConfig(
        experiment=exp,
        model=model,
        lambda_=lam,
        window=window,
        n=_integer(doc, "n", "", default=1),
        output_dir=doc.get("output_dir", "out"),
        seed=_integer(doc, "seed", "", default=0, minimum=0),
        name=doc.get("name", ""),
        description=doc.get("description", ""),
        packet=packet,
        samples=_integer(doc, "samples", "", default=0, minimum=1) if "samples" in doc else 0,
        expect=dict(expect),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}", "path") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}", "json") from exc
    return parse_config(doc)
