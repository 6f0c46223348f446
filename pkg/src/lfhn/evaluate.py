"""Rank-1 identification rates sliced per pose bin (and per light)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import graph
from .data import default_pose_roster
from .train import center_crop
from .tensor import DTYPE


@dataclass
class PoseBin:
    pose_id: int
    yaw_deg: float
    n_samples: int
    correct: int

    @property
    def rank1_pct(self) -> float:
        return 100.0 * self.correct / self.n_samples


@dataclass
class RankTable:
    """Per-pose rank-1 rates ordered by ascending yaw, plus the bin mean."""

    bins: list
    by_pose_light: dict = field(default_factory=dict)  # (pose_id, light_id) -> (correct, total)

    @property
    def mean_pct(self) -> float:
        if not self.bins:
            raise ValueError("empty table has no mean")
        return sum(b.rank1_pct for b in self.bins) / len(self.bins)


def default_yaws():
    """pose_id -> yaw mapping for the default 13-bin roster."""
    return {i: p.yaw_deg for i, p in enumerate(default_pose_roster())}


def rank_table_from_predictions(predictions, samples, yaws=None) -> RankTable:
    """Count rank-1 hits per pose bin from precomputed identity predictions.

    yaws maps pose ids to yaw labels; ids missing from the mapping fall back
    to the id itself. When a mapped pose has no samples it is reported as
    absent (excluded from the mean) with a warning. The mean is the
    unweighted average over the present bins.
    """
    predictions = np.asarray(predictions)
    if len(predictions) != len(samples):
        raise ValueError("one prediction per sample required")
    if yaws is None:
        yaws = default_yaws()
    per_pose = {}
    by_pose_light = {}
    for pred, sample in zip(predictions, samples):
        hit = int(pred) == sample.identity
        correct, total = per_pose.get(sample.pose_id, (0, 0))
        per_pose[sample.pose_id] = (correct + hit, total + 1)
        key = (sample.pose_id, sample.light_id)
        correct, total = by_pose_light.get(key, (0, 0))
        by_pose_light[key] = (correct + hit, total + 1)
    for pose_id in sorted(set(yaws) - set(per_pose)):
        warnings.warn(f"pose bin {pose_id} has no samples; excluded from the mean")
    bins = [
        PoseBin(pose_id, float(yaws.get(pose_id, pose_id)), total, correct)
        for pose_id, (correct, total) in per_pose.items()
    ]
    bins.sort(key=lambda b: (b.yaw_deg, b.pose_id))
    return RankTable(bins, by_pose_light)


def predict(net, images, batch_size=64) -> np.ndarray:
    """Identity decisions: argmax over the class logits, ties to lowest index."""
    predictions = []
    for start in range(0, len(images), batch_size):
        logits, _ = graph.forward(net, images[start:start + batch_size])
        predictions.append(np.argmax(logits, axis=1))
    return np.concatenate(predictions)


def evaluate(net, samples, yaws=None, batch_size=64) -> RankTable:
    """Rank-1 table for a trained network on labeled samples.

    Images larger than the network input are center-cropped (the
    deterministic evaluation path); evaluation never mutates the network.
    """
    if not samples:
        raise ValueError("no samples to evaluate")
    k = net.config.num_classes
    worst = max(s.identity for s in samples)
    if worst >= k:
        raise ValueError(f"label {worst} out of range for {k} classes")
    target = (net.config.input_height, net.config.input_width)
    images = []
    for s in samples:
        image = s.image
        if image.shape[:2] != target:
            image = center_crop(image, *target)
        images.append(image)
    images = np.stack(images).astype(DTYPE)
    return rank_table_from_predictions(predict(net, images, batch_size), samples, yaws)


def _fmt_yaw(yaw: float) -> str:
    return str(int(yaw)) if float(yaw).is_integer() else f"{yaw:g}"


def format_table(table: RankTable, style: str = "csv") -> str:
    """Render a RankTable as machine CSV or an aligned text table."""
    if style == "csv":
        lines = ["pose_id,yaw_deg,n_samples,rank1_pct"]
        for b in table.bins:
            lines.append(f"{b.pose_id},{_fmt_yaw(b.yaw_deg)},{b.n_samples},{b.rank1_pct!r}")
        if table.bins:
            lines.append(f"mean,,,{table.mean_pct!r}")
        return "\n".join(lines)
    if style == "paper":
        headers = ["Yaw"] + [_fmt_yaw(b.yaw_deg) for b in table.bins] + ["Mean"]
        values = ["Rank-1"] + [f"{b.rank1_pct:.2f}" for b in table.bins]
        values.append(f"{table.mean_pct:.2f}" if table.bins else "")
        widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
        top = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
        bottom = "  ".join(v.rjust(w) for v, w in zip(values, widths))
        return top + "\n" + bottom
    raise ValueError(f"unknown table style {style!r}")
