"""Fine-tuning loop: AdamW over every trainable parameter, label tower frozen.

The trainer owns batching, the optimizer, per-group gradient norms, validation
after every epoch, checkpointing, and a line-delimited JSON run report. Model
selection keeps the checkpoint with the best validation metric (micro-F1 for
emotion, ACC2 for sentiment); "last" selection is available for comparison.
A non-finite loss aborts the run naming the samples in the offending batch.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import torch

from .evalkit import binary_metrics, multilabel_metrics
from .config import config_hash, flatten
from .model import PRECISION_DTYPES, MultimodalClassifier, build_model


class NonFiniteLossError(RuntimeError):
    pass


# parameter-name prefix -> gradient-norm reporting group
_GRAD_GROUPS = (
    ("label_encoder.backbone", "label_encoder"),
    ("label_encoder.", "prompts"),
    ("vision.", "vision"),
    ("language.", "language"),
    ("audio.", "audio"),
    ("cmd.", "cmd"),
)


def _group_of(name: str) -> str:
    for prefix, group in _GRAD_GROUPS:
        if name.startswith(prefix):
            return group
    return "head"


def collate(samples: list[dict], device=None) -> dict:
    """Stack preprocessed samples; audio segments are padded with a mask."""
    if not samples:
        raise ValueError("empty batch")
    max_seg = max(s["spec_frames"].shape[0] for s in samples)
    spec_shape = samples[0]["spec_frames"].shape[1:]
    spec = np.zeros((len(samples), max_seg, *spec_shape), dtype=np.float32)
    mask = np.zeros((len(samples), max_seg), dtype=bool)
    for i, s in enumerate(samples):
        n = s["spec_frames"].shape[0]
        spec[i, :n] = s["spec_frames"]
        mask[i, :n] = True
    batch = {
        "sample_ids": [s["sample_id"] for s in samples],
        "frames": torch.from_numpy(np.stack([s["frames"] for s in samples])),
        "spec_frames": torch.from_numpy(spec),
        "spec_mask": torch.from_numpy(mask),
        "token_ids": torch.from_numpy(
            np.stack([s["token_ids"] for s in samples])).to(torch.int64),
        "eos_index": torch.tensor([int(s["eos_index"]) for s in samples], dtype=torch.int64),
        "emotion_target": torch.from_numpy(
            np.stack([s["emotion_target"] for s in samples])),
        "sentiment_class": torch.tensor(
            [int(s["sentiment_class"]) for s in samples], dtype=torch.int64),
        "excluded": torch.tensor([bool(s["excluded"]) for s in samples], dtype=torch.bool),
    }
    if device is not None:
        batch = {k: (v.to(device) if torch.is_tensor(v) else v) for k, v in batch.items()}
    return batch


def iter_batches(samples: list[dict], batch_size: int, rng: np.random.Generator | None = None):
    order = np.arange(len(samples))
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        chunk = [samples[i] for i in order[start:start + batch_size]]
        yield collate(chunk)


@torch.no_grad()
def collect_predictions(model: MultimodalClassifier, samples: list[dict],
                        batch_size: int = 16) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Binary predictions, binary targets, and the excluded mask for a split."""
    if not samples:
        raise ValueError("empty split")
    model.eval()
    preds, targets, excluded = [], [], []
    for batch in iter_batches(samples, batch_size):
        out = model.predict(batch)
        preds.append(out["binary"].numpy())
        if model.task == "emotion":
            targets.append(batch["emotion_target"].numpy().astype(np.int64))
        else:
            targets.append(
                torch.nn.functional.one_hot(batch["sentiment_class"], 2).numpy())
        excluded.append(batch["excluded"].numpy())
    return np.concatenate(preds), np.concatenate(targets), np.concatenate(excluded)


def evaluate_model(model: MultimodalClassifier, samples: list[dict],
                   batch_size: int = 16) -> dict:
    """Task metrics over a sample list (no shuffling, no gradient)."""
    pred, target, mask = collect_predictions(model, samples, batch_size)
    if model.task == "emotion":
        acc, prec, rec, f1 = multilabel_metrics(pred, target)
        return {"accuracy": acc, "precision": prec, "recall": rec,
                "micro_f1": f1, "n_samples": len(samples), "n_excluded": 0}
    acc2, f1 = binary_metrics(pred, target, mask)
    return {"acc2": acc2, "f1": f1, "n_samples": len(samples),
            "n_excluded": int(mask.sum())}


SELECTION_METRIC = {"emotion": "micro_f1", "sentiment": "acc2"}


class Trainer:

    def __init__(self, model: MultimodalClassifier, cfg: dict, out_dir=None):
        self.model = model
        self.cfg = cfg
        tcfg = cfg["train"]
        if tcfg["num_threads"]:
            torch.set_num_threads(int(tcfg["num_threads"]))
        if model.use_le:
            # belt and braces: freezing happens at construction, re-assert here
            model.label_encoder.backbone.requires_grad_(False)
        trainable = [p for p in model.parameters() if p.requires_grad]
        self.optimizer = torch.optim.AdamW(
            trainable, lr=tcfg["lr"], weight_decay=tcfg["weight_decay"],
            betas=(0.9, 0.999), eps=1e-8)
        self.rng = np.random.default_rng(cfg["seed"])
        self.step = 0
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self._report_fh = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self._report_fh = (self.out_dir / "report.jsonl").open("w", encoding="utf-8")
        inventory = model.parameter_inventory()
        self._log({
            "kind": "header", "config_hash": config_hash(cfg),
            "task": model.task, "dataset": tcfg["dataset"],
            "batch_size": tcfg["batch_size"], "lr": tcfg["lr"],
            "weight_decay": tcfg["weight_decay"], "epochs": tcfg["epochs"],
            "precision": tcfg["precision"], "selection": tcfg["selection"],
            "n_trainable": sum(v == "trainable" for v in inventory.values()),
            "n_frozen": sum(v == "frozen" for v in inventory.values()),
            "frozen_digest": model.frozen_digest(),
        })

    def _log(self, record: dict) -> None:
        if self._report_fh is not None:
            self._report_fh.write(json.dumps(record) + "\n")
            self._report_fh.flush()

    def gradient_norms(self) -> dict:
        """L2 norm of the current gradients per reporting group.

        Groups with no gradient-carrying parameters (the frozen label tower in
        particular) report exactly 0.0.
        """
        sq_sums: dict[str, float] = {}
        for name, p in self.model.named_parameters():
            group = _group_of(name)
            sq_sums.setdefault(group, 0.0)
            if p.grad is not None:
                sq_sums[group] += float(p.grad.pow(2).sum())
        return {group: math.sqrt(s) for group, s in sq_sums.items()}

    def train_step(self, batch: dict) -> dict:
        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        output = self.model(batch)
        loss = self.model.compute_loss(output, batch)
        if not bool(torch.isfinite(loss)):
            ids = ", ".join(batch["sample_ids"])
            raise NonFiniteLossError(
                f"non-finite loss at step {self.step} on batch [{ids}]")
        loss.backward()
        norms = self.gradient_norms()
        self.optimizer.step()
        self.step += 1
        return {"step": self.step, "loss": float(loss.detach()), "grad_norms": norms}

    def fit(self, train_samples: list[dict], val_samples: list[dict] | None = None) -> dict:
        tcfg = self.cfg["train"]
        if not train_samples:
            raise ValueError("empty split: train")
        metric_key = SELECTION_METRIC[self.model.task]
        best = {"metric": -1.0, "epoch": 0, "step": 0}
        max_steps = int(tcfg["max_steps"])
        log_every = max(1, int(tcfg["log_every"]))
        eval_every = int(tcfg["eval_every_steps"])
        history = []
        done = False
        for epoch in range(1, int(tcfg["epochs"]) + 1):
            for batch in iter_batches(train_samples, tcfg["batch_size"], self.rng):
                stats = self.train_step(batch)
                history.append(stats["loss"])
                if self.step % log_every == 0:
                    self._log({"kind": "step", "epoch": epoch, **stats})
                if eval_every and val_samples and self.step % eval_every == 0:
                    best = self._validate(val_samples, epoch, metric_key, best, tcfg)
                if max_steps and self.step >= max_steps:
                    done = True
                    break
            if val_samples and not (eval_every and done):
                best = self._validate(val_samples, epoch, metric_key, best, tcfg)
            if done:
                break
        if self.out_dir is not None:
            self.save_checkpoint(self.out_dir / "last.pt", epoch=epoch,
                                 val_metric=best["metric"])
        summary = {
            "kind": "summary", "steps": self.step, "epochs": epoch,
            "final_loss": history[-1] if history else None,
            "best_val": best, "selection": tcfg["selection"],
            "frozen_digest": self.model.frozen_digest(),
        }
        self._log(summary)
        if self._report_fh is not None:
            self._report_fh.close()
            self._report_fh = None
        return summary

    def _validate(self, val_samples, epoch, metric_key, best, tcfg) -> dict:
        metrics = evaluate_model(self.model, val_samples, tcfg["batch_size"])
        improved = metrics[metric_key] > best["metric"]
        if improved:
            best = {"metric": metrics[metric_key], "epoch": epoch, "step": self.step}
            if self.out_dir is not None:
                self.save_checkpoint(self.out_dir / "best.pt", epoch=epoch,
                                     val_metric=best["metric"])
        self._log({"kind": "val", "epoch": epoch, "step": self.step,
                   "metrics": metrics, "improved": improved})
        return best

    def save_checkpoint(self, path, epoch: int, val_metric: float | None = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save({
            "model_state": self.model.state_dict(),
            "optimizer_state": self.optimizer.state_dict(),
            "epoch": epoch,
            "step": self.step,
            "val_metric": val_metric,
            "config": flatten(self.cfg),
            "digest": self.model.digest(),
            "frozen_digest": self.model.frozen_digest(),
        }, path)
        return path

    def load_checkpoint(self, path) -> dict:
        payload = torch.load(Path(path), weights_only=False)
        self.model.load_state_dict(payload["model_state"])
        self.optimizer.load_state_dict(payload["optimizer_state"])
        self.step = payload["step"]
        return payload


def load_checkpoint_model(path) -> tuple[MultimodalClassifier, dict]:
    """Rebuild a model from a checkpoint's own config snapshot."""
    from .config import DEFAULTS, put
    import copy as _copy

    payload = torch.load(Path(path), weights_only=False)
    cfg = _copy.deepcopy(DEFAULTS)
    for key, val in payload["config"].items():
        put(cfg, key, val)
    model = build_model(cfg, PRECISION_DTYPES[cfg["train"]["precision"]])
    model.load_state_dict(payload["model_state"])
    return model, payload
