"""Flat, typed key = value configuration shared by every command.

Keys come from the corpus spec, the training config and a few decoding
options. ``seed`` is shared: it seeds corpus generation in ``gen-data`` and
initialisation and shuffling in ``train``.
"""
from __future__ import annotations

import typing
from dataclasses import MISSING, dataclass, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

from .errors import ConfigError, ParseError
from .synthgen import CorpusSpec
from .training import TrainConfig


@dataclass(frozen=True)
class Setting:
    name: str
    kind: str                  # int | float | bool | str | ints | floats | floats?
    default: Any
    help: str
    owner: str                 # corpus | train | decode


@dataclass
class DecodeOptions:
    beam: int = 4
    w1: float = 1.0
    w2: float = 0.3
    w3: float = 0.0
    lm: str = "none"
    length_penalty: float = 0.0
    batch_size: int = 50
    top_k: int = 5


HELP = {
    "n_accents": "number of accent classes",
    "n_fine": "fine (pronunciation) units, excluding blank and silence",
    "n_coarse": "coarse (transcript) units, excluding specials",
    "feat_dim": "acoustic feature dimension",
    "frames_per_unit": "min,max frames emitted per fine unit",
    "utt_len": "min,max coarse units per utterance",
    "accent_shift_scale": "norm of each accent offset",
    "accent_phoneme_fraction": "fraction of fine units each accent perturbs",
    "noise_std": "per-dimension Gaussian frame noise",
    "accent_weights": "comma-separated accent priors, empty for linear imbalance",
    "n_train": "training utterances",
    "n_dev": "development utterances",
    "n_test": "test utterances",
    "seed": "random seed (corpus generation or training)",
    "w_att": "attention loss weight",
    "w_ctc": "CTC loss weight",
    "w_ar": "accent loss weight",
    "smoothing": "label smoothing of the attention loss",
    "class_weights": "accent loss class weighting: inverse | none",
    "ar_masked_accents": "accents excluded from the accent loss",
    "scheme": "accent fusion: AF_i | AF_ie | AF_id | AF_ied",
    "emb_kind": "accent embedding: dnn | pp | sim",
    "ar_level": "accent loss level: frame | utterance",
    "units": "two-granularity | coarse-only",
    "triple_encoder": "separate CTC and attention encoders after the shared one",
    "detach": "gradient isolation between the accent branch and the ASR branches",
    "d_model": "model width",
    "d_ff": "feed-forward inner width",
    "n_heads": "attention heads",
    "n_shared": "shared encoder blocks",
    "n_ctc": "CTC encoder blocks",
    "n_att": "attention encoder blocks",
    "n_dec": "decoder layers",
    "kernel_size": "depthwise conv kernel (odd)",
    "subsample": "front-end frame subsampling factor",
    "block_kind": "encoder block: conv-augmented | self-attention | feedforward",
    "n_spaces": "accent mapping spaces N",
    "bimodal_width": "bimodal representation width C",
    "d_k": "per-space mapped width",
    "ar_blocks": "self-attention blocks in the accent classifier",
    "dropout": "dropout rate",
    "epochs": "training epochs",
    "batch_size": "training batch size",
    "lr": "peak learning rate",
    "warmup_steps": "linear warmup steps",
    "schedule": "learning-rate decay: cosine | inverse-sqrt | constant",
    "grad_clip": "gradient norm clip, 0 disables",
    "eval_batch_size": "batch size for evaluation",
    "beam": "beam width of the first pass",
    "w1": "rescoring weight of the attention score",
    "w2": "rescoring weight of the CTC score",
    "w3": "rescoring weight of the LM score",
    "lm": "language model for rescoring: none | uniform",
    "length_penalty": "per-token bonus added during rescoring",
    "top_k": "units listed per accent in the per-unit report",
}


def _kind(tp) -> str:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union and type(None) in args:
        inner = [a for a in args if a is not type(None)][0]
        return _kind(inner) + "?"
    if origin in (tuple, Tuple):
        return "floats" if args and args[0] is float else "ints"
    return {int: "int", float: "float", bool: "bool", str: "str"}[tp]


def _settings_for(cls, owner: str) -> List[Setting]:
    hints = typing.get_type_hints(cls)
    out = []
    for f in fields(cls):
        default = f.default if f.default is not MISSING else f.default_factory()
        out.append(Setting(f.name, _kind(hints[f.name]), default, HELP.get(f.name, ""), owner))
    return out


def _registry() -> Dict[str, Setting]:
    reg: Dict[str, Setting] = {}
    for cls, owner in ((CorpusSpec, "corpus"), (TrainConfig, "train"), (DecodeOptions, "decode")):
        for s in _settings_for(cls, owner):
            reg.setdefault(s.name, s)
    return reg


SETTINGS: Dict[str, Setting] = _registry()


def parse_value(setting: Setting, text: str):
    kind = setting.kind.rstrip("?")
    text = text.strip()
    if setting.kind.endswith("?") and text.lower() in ("", "none"):
        return None
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "ints":
            return tuple(int(x) for x in text.split(",") if x.strip())
        if kind == "floats":
            return tuple(float(x) for x in text.split(",") if x.strip())
        return text
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {setting.name} ({setting.kind})") from None


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def unknown_key(key: str) -> ConfigError:
    return ConfigError(f"unknown key {key!r}; valid keys: {', '.join(sorted(SETTINGS))}")


def read_config(path) -> Dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: Dict[str, Any] = {}
    text = Path(path).read_text(encoding="utf-8")
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep:
            raise ParseError(f"expected key = value, got {raw!r}", line=n)
        if key not in SETTINGS:
            raise unknown_key(key)
        if key in values:
            raise ParseError(f"duplicate key {key!r}", line=n)
        values[key] = parse_value(SETTINGS[key], val)
    return values


def write_config(path, values: Mapping[str, Any]):
    lines = [f"{k} = {format_value(values[k])}\n" for k in sorted(values)]
    Path(path).write_text("".join(lines), encoding="utf-8")


def effective(overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Every key with its default, then ``overrides`` on top."""
    for k in overrides:
        if k not in SETTINGS:
            raise unknown_key(k)
    vals = {k: s.default for k, s in SETTINGS.items()}
    vals.update(overrides)
    return vals


def _build(cls, values: Mapping[str, Any]):
    names = {f.name for f in fields(cls)}
    return cls(**{k: v for k, v in values.items() if k in names})


def corpus_spec(values: Mapping[str, Any]) -> CorpusSpec:
    return _build(CorpusSpec, values)


def train_config(values: Mapping[str, Any]) -> TrainConfig:
    return _build(TrainConfig, values)


def decode_options(values: Mapping[str, Any]) -> DecodeOptions:
    return _build(DecodeOptions, values)


def add_flags(parser, converter: Optional[Callable] = None):
    """One ``--key`` flag per setting; values are parsed later against the registry."""
    group = parser.add_argument_group("configuration keys (override the config file)")
    for name in sorted(SETTINGS):
        s = SETTINGS[name]
        flags = [f"--{name}"]
        if "_" in name:
            flags.append(f"--{name.replace('_', '-')}")
        group.add_argument(*flags, dest=f"key_{name}", default=None, metavar=s.kind.upper(),
                           help=f"{s.help} [{s.owner}; default {format_value(s.default)}]")


def collect(args, config_path=None) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    """(file values, flag values) for a parsed argparse namespace."""
    from_file = read_config(config_path) if config_path else {}
    flags = {}
    for name, s in SETTINGS.items():
        raw = getattr(args, f"key_{name}", None)
        if raw is not None:
            flags[name] = parse_value(s, raw)
    return from_file, flags
