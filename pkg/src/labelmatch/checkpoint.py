"""Checkpoint directories: manifest, embeddings, baseline weights, labels."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .baseline import CombinedModel, Mode, load_baseline, save_baseline
from .corpus import load_label_vocabulary, save_label_vocabulary
from .embeddings import OovPolicy, load_embeddings, save_embeddings

MANIFEST = "manifest.txt"
EMBEDDINGS = "embeddings.txt"
BASELINE = "baseline.txt"
LABELS = "labels.tsv"
TRAIN_LOG = "train_log.jsonl"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: CombinedModel
    threshold: float
    manifest: dict[str, str]


def write_manifest(path: Path, entries: dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(entries):
            fh.write(f"{key}={entries[key]}\n")


def read_manifest(path: Path) -> dict[str, str]:
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CheckpointError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            entries[key.strip()] = value.strip()
    return entries


def save_checkpoint(out_dir: str | Path, model: CombinedModel, threshold: float,
                    extra: dict[str, str] | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_embeddings(model.table, out / EMBEDDINGS)
    save_baseline(model.weights, model.vocab, out / BASELINE)
    save_label_vocabulary(model.vocab, out / LABELS)
    entries = dict(extra or {})
    entries.update({
        "threshold": repr(float(threshold)),
        "mode": model.mode.value,
        "policy": model.policy.value,
        "dim": str(model.table.dim),
        "n_labels": str(len(model.vocab)),
        "embeddings": EMBEDDINGS,
        "baseline": BASELINE,
        "labels": LABELS,
    })
    write_manifest(out / MANIFEST, entries)
    return out


def load_checkpoint(ckpt_dir: str | Path) -> Checkpoint:
    root = Path(ckpt_dir)
    if not (root / MANIFEST).is_file():
        raise CheckpointError(f"{root}: no {MANIFEST}; not a checkpoint directory")
    manifest = read_manifest(root / MANIFEST)
    try:
        vocab = load_label_vocabulary(root / manifest.get("labels", LABELS))
        table = load_embeddings(root / manifest.get("embeddings", EMBEDDINGS))
        weights = load_baseline(root / manifest.get("baseline", BASELINE), vocab)
        model = CombinedModel(table, weights, vocab, OovPolicy(manifest.get("policy", "binary")),
                              Mode(manifest.get("mode", "max")))
        threshold = float(manifest["threshold"])
    except (KeyError, ValueError, OSError) as exc:
        raise CheckpointError(f"{root}: {exc}") from exc
    return Checkpoint(model, threshold, manifest)
