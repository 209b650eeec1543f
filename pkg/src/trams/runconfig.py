"""Run configuration: JSON file plus flag overrides, validated up front.

A RunConfig carries everything a command needs: paths, seed, tokenizer
settings, model shape, and training hyperparameters. Keys set explicitly
(in the file or by a flag) are tracked so commands that operate on an
existing checkpoint can distinguish "user asked for M=64" from "leave the
checkpoint's value alone".
"""

import json
import typing
from dataclasses import dataclass, field, fields

from .errors import UsageError
from .model import ModelConfig, TrainParams


@dataclass
class RunConfig:
    corpus: typing.Optional[str] = None
    checkpoint: typing.Optional[str] = None
    out_dir: typing.Optional[str] = None
    seed: int = 0
    kind: str = "char"
    max_vocab: typing.Optional[int] = None

    num_layers: int = 4
    num_heads: int = 4
    d_model: int = 64
    d_ffn: int = 256
    segment_len: int = 32
    pool_capacity: int = 128
    selected_m: int = 32
    strategy: str = "trams"
    metric_direction: str = "descending"
    dropout: float = 0.0
    select_u_bias: bool = True

    lr: float = 2.5e-4
    steps: int = 600
    batch: int = 8
    cosine: bool = True

    explicit: frozenset = field(default_factory=frozenset, repr=False, compare=False)

    def given(self, name):
        """Value if the user set it explicitly, else None."""
        return getattr(self, name) if name in self.explicit else None

    def to_model_config(self, vocab_size):
        cfg = ModelConfig(
            vocab_size=vocab_size,
            num_layers=self.num_layers,
            num_heads=self.num_heads,
            d_model=self.d_model,
            d_ffn=self.d_ffn,
            segment_len=self.segment_len,
            pool_capacity=self.pool_capacity,
            selected_m=self.selected_m,
            strategy=self.strategy,
            metric_direction=self.metric_direction,
            dropout=self.dropout,
            select_u_bias=self.select_u_bias,
        )
        cfg.validate()
        return cfg

    def to_train_params(self):
        return TrainParams(lr=self.lr, steps=self.steps, batch=self.batch,
                           seed=self.seed, cosine=self.cosine)


_STR_FIELDS = {"corpus", "checkpoint", "out_dir", "kind", "strategy",
               "metric_direction"}
_OPTIONAL = {"corpus", "checkpoint", "out_dir", "max_vocab"}
_FLOAT_FIELDS = {"dropout", "lr"}
_BOOL_FIELDS = {"select_u_bias", "cosine"}


def _type_error(key, value):
    if key in _STR_FIELDS:
        return None if isinstance(value, str) else "string"
    if key in _BOOL_FIELDS:
        return None if isinstance(value, bool) else "boolean"
    if key in _FLOAT_FIELDS:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        return None if ok else "number"
    ok = isinstance(value, int) and not isinstance(value, bool)
    return None if ok else "integer"


def parse_config(path=None, overrides=None):
    """Merge defaults <- config file <- overrides; reject unknown keys."""
    known = {f.name for f in fields(RunConfig)} - {"explicit"}
    merged = {}
    problems = []
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError("config %s is not valid JSON: %s" % (path, exc))
        if not isinstance(raw, dict):
            raise UsageError("config %s must hold a JSON object" % path)
        unknown = sorted(set(raw) - known)
        if unknown:
            problems.append("unknown keys: %s" % ", ".join(unknown))
        for key in sorted(set(raw) & known):
            value = raw[key]
            if value is None and key in _OPTIONAL:
                merged[key] = None
                continue
            why = _type_error(key, value)
            if why:
                problems.append("%s expects %s, got %r" % (key, why, value))
            else:
                merged[key] = float(value) if key in _FLOAT_FIELDS else value
    if overrides:
        unknown = sorted(set(overrides) - known)
        if unknown:
            problems.append("unknown override keys: %s" % ", ".join(unknown))
        for key, value in overrides.items():
            if value is not None and key in known:
                merged[key] = value
    if problems:
        raise UsageError("invalid config: " + "; ".join(problems))
    cfg = RunConfig(**merged, explicit=frozenset(merged))
    _validate(cfg)
    return cfg


def _validate(cfg):
    problems = []
    if cfg.kind not in ("char", "word"):
        problems.append("kind must be char or word, got %r" % (cfg.kind,))
    if cfg.max_vocab is not None and cfg.max_vocab < 2:
        problems.append("max_vocab must be >= 2")
    if cfg.steps < 0:
        problems.append("steps must be >= 0")
    if cfg.batch < 1:
        problems.append("batch must be >= 1")
    if cfg.lr < 0:
        problems.append("lr must be >= 0")
    try:
        cfg.to_model_config(vocab_size=2)
    except UsageError as exc:
        problems.append(str(exc))
    if problems:
        raise UsageError("invalid config: " + "; ".join(problems))
