"""Accuracy, confusion matrices and embedding export."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

FORMAT_VERSION = 1


@dataclass
class ExperimentReport:
    variant: str
    task: str
    seed: int
    accuracies: list[tuple[int, float]] = field(default_factory=list)  # (epoch, acc)
    final_accuracy: float = float("nan")
    best_accuracy: float = float("nan")
    best_epoch: int = -1
    confusion: list[list[int]] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0
    source_accuracy: float = float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["format_version"] = FORMAT_VERSION
        return d


def accuracy(predictions, labels) -> float:
    """Fraction of exact matches (the multiclass form of (TP+TN)/total)."""
    p, y = np.asarray(predictions), np.asarray(labels)
    if p.shape != y.shape:
        raise ValueError("predictions and labels differ in length")
    if y.size == 0:
        raise ValueError("accuracy of an empty set")
    return float(np.mean(p == y))


def confusion_matrix(predictions, labels, num_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    p, y = np.asarray(predictions, dtype=np.int64), np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape:
        raise ValueError("predictions and labels differ in length")
    for arr in (p, y):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"class index outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y, p), 1)
    return cm


@torch.no_grad()
def predict(model, samples, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Predicted classes and pooled features for (N, L) samples."""
    model.eval()
    dtype = next(model.parameters()).dtype
    x = torch.tensor(np.array(samples), dtype=dtype).unsqueeze(1)
    preds, feats = [], []
    for i in range(0, len(x), batch_size):
        f = model.features(x[i:i + batch_size])
        preds.append(model.LC(f).argmax(dim=1))
        feats.append(f)
    if not preds:
        return np.zeros(0, dtype=np.int64), np.zeros((0, model.extractor_config.out_channels))
    return torch.cat(preds).numpy(), torch.cat(feats).double().numpy()


def export_embeddings(features, labels, domain_tags, path) -> None:
    """Write ``domain,label,f0..f{D-1}`` rows in input order."""
    features = np.asarray(features, dtype=np.float64)
    labels, domain_tags = list(labels), list(domain_tags)
    if features.ndim != 2:
        features = features.reshape(len(labels), -1)
    if not (len(features) == len(labels) == len(domain_tags)):
        raise ValueError("features, labels and domain tags must align")
    path = Path(path)
    if path.parent and not path.parent.is_dir():
        raise OSError(f"cannot write embeddings: directory {path.parent} does not exist")
    dim = features.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["domain", "label"] + [f"f{i}" for i in range(dim)])
        for tag, lab, row in zip(domain_tags, labels, features):
            w.writerow([tag, int(lab)] + [repr(float(v)) for v in row])


def read_embeddings(path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    dim = len(header) - 2
    feats = np.array([[float(v) for v in r[2:]] for r in body]).reshape(len(body), dim)
    labels = np.array([int(r[1]) for r in body], dtype=np.int64)
    return feats, labels, [r[0] for r in body]


def write_confusion(cm, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + [str(j) for j in range(len(cm))])
        for i, row in enumerate(cm):
            w.writerow([str(i)] + [str(int(v)) for v in row])


# ------------------------------------------------------------ summaries
#
# Summaries are plain ``key: value`` text so they diff cleanly and can be
# grepped; the first line always carries the format version.

def summarize(reports) -> dict:
    """Mean/std of final and best target accuracy over repeated runs."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to summarize")
    final = np.array([r.final_accuracy for r in reports])
    best = np.array([r.best_accuracy for r in reports])
    return {
        "variant": reports[0].variant,
        "task": reports[0].task,
        "runs": len(reports),
        "seeds": " ".join(str(r.seed) for r in reports),
        "mean_final_accuracy": float(final.mean()),
        "std_final_accuracy": float(final.std()),
        "mean_best_accuracy": float(best.mean()),
        "final_accuracies": " ".join(repr(float(a)) for a in final),
    }


def write_summary(summary: dict, path) -> None:
    lines = [f"format_version: {FORMAT_VERSION}"]
    for key, value in summary.items():
        lines.append(f"{key}: {value!r}" if isinstance(value, float) else f"{key}: {value}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_summary(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        key, sep, value = line.partition(":")
        if sep:
            out[key.strip()] = value.strip()
    return out


def load_report(path) -> ExperimentReport:
    data = json.loads(Path(path).read_text())
    data.pop("format_version", None)
    data["accuracies"] = [tuple(a) for a in data["accuracies"]]
    return ExperimentReport(**data)
