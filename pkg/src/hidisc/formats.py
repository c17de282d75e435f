"""Checkpoint blobs and the flat ``key = value`` run-config format.

A checkpoint is an uncompressed ``.npz`` archive. Arrays hold the head
weights, prototypes and optimizer momentum buffers; a ``meta`` entry holds a
JSON document with everything else (format version, dims, curvature, radius,
geometry, class ids, training config, frozen margin, curvature momentum and the
bit-generator state). Floats go through JSON as ``repr`` strings, so a save/load
round trip is bitwise.

A config file has one ``key = value`` per line; ``#`` starts a comment. Keys are
the :class:`~hidisc.training.TrainConfig` fields plus :data:`RUN_KEYS`.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataFormatError
from .losses import OutlierMargin
from .model import SGD, Encoder, ProjectionHead
from .prototypes import PrototypeSet
from .training import TrainConfig, TrainResult

CHECKPOINT_VERSION = 1

# run-level keys accepted by config files on top of the TrainConfig fields
RUN_KEYS = {
    "train": "list",
    "known": "list",
    "k_max": "int",
    "output": "str",
}


@dataclass
class Checkpoint:
    encoder: Encoder
    prototypes: PrototypeSet
    optimizer: SGD
    rng: np.random.Generator
    config: TrainConfig
    margin: OutlierMargin | None = None

    @classmethod
    def from_result(cls, result: TrainResult, cfg: TrainConfig) -> "Checkpoint":
        return cls(result.encoder, result.prototypes, result.optimizer, result.rng, cfg, result.margin)


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _rng_from_state(state: dict) -> np.random.Generator:
    name = state.get("bit_generator")
    cls = getattr(np.random, str(name), None)
    if cls is None or not isinstance(cls, type) or not issubclass(cls, np.random.BitGenerator):
        raise DataFormatError(f"unknown bit generator {name!r}")
    bg = cls()
    bg.state = state
    return np.random.Generator(bg)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    enc, opt = ckpt.encoder, ckpt.optimizer
    arrays = {}
    for k, (W, b) in enumerate(zip(enc.head.weights, enc.head.biases)):
        arrays[f"W{k}"] = W
        arrays[f"b{k}"] = b
    arrays["prototypes"] = ckpt.prototypes.prototypes
    has_buffers = opt.buffers is not None
    if has_buffers:
        for k, buf in enumerate(opt.buffers):
            arrays[f"buf{k}"] = buf
    meta = {
        "format": "hidisc-checkpoint",
        "version": CHECKPOINT_VERSION,
        "dims": list(enc.head.dims),
        "c": enc.c,
        "radius": enc.radius,
        "geometry": enc.geometry,
        "class_ids": list(ckpt.prototypes.class_ids),
        "config": asdict(ckpt.config),
        "margin": None if ckpt.margin is None else asdict(ckpt.margin),
        "optimizer": {
            "lr0": opt.lr0,
            "momentum": opt.momentum,
            "weight_decay": opt.weight_decay,
            "total_epochs": opt.total_epochs,
            "learn_curvature": opt.learn_curvature,
            "c_buffer": opt.c_buffer,
            "has_buffers": has_buffers,
        },
        "rng": _rng_state(ckpt.rng),
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    return buf.getvalue()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(f"{path}: checkpoint not found")
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
        meta = json.loads(arrays.pop("meta").tobytes().decode("utf-8"))
    except (OSError, ValueError, KeyError) as exc:
        raise DataFormatError(f"{path}: not a checkpoint ({exc})") from None
    if meta.get("format") != "hidisc-checkpoint":
        raise DataFormatError(f"{path}: not a checkpoint")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
    try:
        head = ProjectionHead([arrays[f"W{k}"] for k in range(3)], [arrays[f"b{k}"] for k in range(3)])
        if list(head.dims) != meta["dims"]:
            raise DataFormatError(f"{path}: weight shapes disagree with recorded dims")
        encoder = Encoder(head, c=meta["c"], radius=meta["radius"], geometry=meta["geometry"])
        protos = PrototypeSet(arrays["prototypes"], tuple(meta["class_ids"]))
        o = meta["optimizer"]
        opt = SGD(
            o["lr0"], o["momentum"], o["weight_decay"], o["total_epochs"], o["learn_curvature"],
            [arrays[f"buf{k}"] for k in range(6)] if o["has_buffers"] else None,
            o["c_buffer"],
        )
        cfg = TrainConfig(**meta["config"])
        margin = None if meta["margin"] is None else OutlierMargin(**meta["margin"])
        rng = _rng_from_state(meta["rng"])
    except KeyError as exc:
        raise DataFormatError(f"{path}: checkpoint missing entry {exc}") from None
    return Checkpoint(encoder, protos, opt, rng, cfg, margin)


# --- config files ------------------------------------------------------------------


def _train_field_types() -> dict:
    out = {}
    for f in fields(TrainConfig):
        default = f.default
        out[f.name] = "bool" if isinstance(default, bool) else type(default).__name__
    return out


def config_keys() -> dict:
    """Every accepted config key mapped to its value type."""
    return {**_train_field_types(), **RUN_KEYS}


def coerce_value(key: str, kind: str, raw: str):
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "list":
            return [s.strip() for s in raw.split(",") if s.strip()]
        return raw
    except ValueError:
        raise ConfigurationError(f"config key {key!r}: cannot read {raw!r} as {kind}") from None


def parse_config(text: str, source: str = "<config>") -> dict:
    """Typed values from config text; unknown or repeated keys are errors."""
    kinds = config_keys()
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigurationError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in out:
            raise ConfigurationError(f"{source}:{lineno}: key {key!r} given twice")
        out[key] = coerce_value(key, kinds[key], value)
    return out


def read_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, str(path))


def format_config(values: dict) -> str:
    lines = []
    for key, v in values.items():
        if isinstance(v, (list, tuple)):
            v = ",".join(map(str, v))
        elif isinstance(v, bool):
            v = str(v).lower()
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def train_config_from(values: dict, **overrides) -> TrainConfig:
    """A validated TrainConfig from config values, with ``overrides`` taking priority."""
    names = set(TrainConfig.field_names())
    merged = {k: v for k, v in values.items() if k in names}
    merged.update({k: v for k, v in overrides.items() if v is not None})
    bad = set(merged) - names
    if bad:
        raise ConfigurationError(f"unknown training keys {sorted(bad)}")
    try:
        return TrainConfig(**merged)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None
