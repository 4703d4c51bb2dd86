"""Layered run configuration.

A config is a nested dict addressed by dotted keys (``cmd.order``). Layers are
applied in order: built-in defaults, backbone scale preset, dataset preset,
config file, explicit ``--set key=value`` overrides. The fully merged tree is
serialized into every run directory together with a content hash so a run can
be reproduced from its output directory alone.

Config files are plain UTF-8 text, one ``key.path = value`` per line, ``#``
comments allowed. Values are parsed as JSON where possible and kept as bare
strings otherwise.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

DATA_ROOT_ENV = "EMOFUSE_DATA_ROOT"

DEFAULTS: dict = {
    "seed": 7,
    "data": {"root": ""},
    "preprocess": {
        "frame_count": 12,            # frames sampled per video
        "segment_seconds": 2.0,       # audio segment length
        "sample_rate": 16000,         # waveforms resampled to this rate
        "mel_bins": 224,
        "window_ms": 64.0,
        "hop_ms": 32.0,
        "image_size": 224,
        "max_text_len": 77,
        "zero_as_negative": False,    # variant: count score-0 as negative instead of excluding
    },
    "backbone": {
        "scale": "tiny",
        # per-encoder dims; filled in by the scale preset, overridable per key
        "image": {"width": 0, "layers": 0, "heads": 0, "patch_size": 0, "embed_width": 0},
        "text": {"width": 0, "layers": 0, "heads": 0, "embed_width": 0, "vocab_size": 259},
    },
    "cmd": {
        "layers": 3,
        "hidden": 512,
        "heads": 8,
        "ff_mult": 4,
        "order": "LVA",
        "kv_granularity": "token",    # token | global
    },
    "head": {
        "threshold": 0.6,
        "prob_clamp": 1e-7,
        "std_floor": 1e-8,
    },
    "labels": {
        "prompt_length": 8,
        "emotion_labels": "emotion_words",
        "sentiment_labels": "sentiment_words",
        "query_word": "auto",         # auto -> Emotion/Sentiment by task; "(no word)" or "" -> prompt only
    },
    "model": {
        "use_cmd": True,
        "use_le": True,
    },
    "train": {
        "task": "emotion",
        "dataset": "synth",
        "batch_size": 16,
        "epochs": 20,
        "lr": 8e-6,
        "weight_decay": 0.001,
        "max_steps": 0,               # 0 = run full epochs
        "precision": "float32",       # float64 = fixed-precision (bitwise-reproducible) mode
        "selection": "best_val",      # best_val | last
        "eval_every_steps": 0,        # 0 = validate per epoch only
        "num_threads": 0,             # 0 = leave torch's default
        "log_every": 10,
    },
    "eval": {
        "tsne_perplexity": 30.0,
        "tsne_seed": 0,
    },
}

# backbone geometry per scale tag; "paper" mirrors the ViT-B/32-class image
# tower (width 768, final embed 512) and its 512-wide text tower
SCALE_PRESETS = {
    "tiny": {
        "backbone.image.width": 64, "backbone.image.layers": 2,
        "backbone.image.heads": 4, "backbone.image.patch_size": 56,
        "backbone.image.embed_width": 64,
        "backbone.text.width": 64, "backbone.text.layers": 2,
        "backbone.text.heads": 4, "backbone.text.embed_width": 64,
        "preprocess.max_text_len": 64,
    },
    "paper": {
        "backbone.image.width": 768, "backbone.image.layers": 12,
        "backbone.image.heads": 12, "backbone.image.patch_size": 32,
        "backbone.image.embed_width": 512,
        "backbone.text.width": 512, "backbone.text.layers": 12,
        "backbone.text.heads": 8, "backbone.text.embed_width": 512,
        "preprocess.max_text_len": 77,
    },
}

# dataset presets; mosi/mosei carry the published fine-tuning recipe, synth is
# the desk-scale recipe (paper-scale lr cannot move a random-init tiny model)
DATASET_PRESETS = {
    "mosei": {"train.batch_size": 16, "train.lr": 8e-6},
    "mosi": {"train.batch_size": 8, "train.lr": 2.2e-5},
    "synth": {
        "train.batch_size": 16, "train.lr": 1e-3,
        "preprocess.frame_count": 4,
    },
}


def get(cfg: dict, dotted: str):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            raise KeyError(f"unknown config key: {dotted}")
        node = node[part]
    return node


def put(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise KeyError(f"config key {dotted} descends through a scalar")
    node[parts[-1]] = value


def flatten(cfg: dict, prefix: str = "") -> dict:
    out = {}
    for key, val in cfg.items():
        dotted = f"{prefix}{key}"
        if isinstance(val, dict):
            out.update(flatten(val, dotted + "."))
        else:
            out[dotted] = val
    return out


def _parse_value(raw: str):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except (json.JSONDecodeError, ValueError):
        return raw


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines into dotted-key/value pairs."""
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        pairs[key.strip()] = _parse_value(raw)
    return pairs


def config_to_text(cfg: dict) -> str:
    lines = [f"{k} = {json.dumps(v)}" for k, v in sorted(flatten(cfg).items())]
    return "\n".join(lines) + "\n"


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(config_to_text(cfg).encode("utf-8")).hexdigest()[:16]


def load_config(path=None, sets=(), scale=None, dataset=None) -> dict:
    """Merge defaults, presets, an optional config file, and --set overrides."""
    cfg = copy.deepcopy(DEFAULTS)

    file_pairs = {}
    if path is not None:
        file_pairs = parse_config_text(Path(path).read_text(encoding="utf-8"))

    set_pairs = {}
    for item in sets:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        set_pairs[key.strip()] = _parse_value(raw)

    # scale/dataset may be chosen by any later layer; resolve before applying it
    eff_scale = scale or file_pairs.get("backbone.scale") or set_pairs.get("backbone.scale") \
        or cfg["backbone"]["scale"]
    if eff_scale not in SCALE_PRESETS:
        raise ValueError(f"unknown backbone scale {eff_scale!r}")
    put(cfg, "backbone.scale", eff_scale)
    for key, val in SCALE_PRESETS[eff_scale].items():
        put(cfg, key, val)

    eff_dataset = dataset or file_pairs.get("train.dataset") or set_pairs.get("train.dataset") \
        or cfg["train"]["dataset"]
    put(cfg, "train.dataset", eff_dataset)
    for key, val in DATASET_PRESETS.get(eff_dataset, {}).items():
        put(cfg, key, val)

    for key, val in file_pairs.items():
        put(cfg, key, val)
    for key, val in set_pairs.items():
        put(cfg, key, val)
    return cfg


def data_root(cfg: dict) -> Path:
    root = os.environ.get(DATA_ROOT_ENV, "") or cfg["data"]["root"] or "."
    return Path(root)


def write_run_config(out_dir, cfg: dict) -> Path:
    """Serialize the exact config (plus hash and code version) into a run directory."""
    from emofuse import __version__

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.txt"
    body = config_to_text(cfg)
    header = f"# emofuse {__version__}  config_hash={config_hash(cfg)}\n"
    path.write_text(header + body, encoding="utf-8")
    return path


def read_run_config(run_dir) -> dict:
    """Re-read the config a run was executed with (flags are not trusted)."""
    text = (Path(run_dir) / "config.txt").read_text(encoding="utf-8")
    cfg = copy.deepcopy(DEFAULTS)
    for key, val in parse_config_text(text).items():
        put(cfg, key, val)
    return cfg
