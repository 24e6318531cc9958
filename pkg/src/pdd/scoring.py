"""Anomaly maps, image scores and image-level metrics."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.stats import rankdata

from .config import validate_document
from .data import batch_tensor, safe_name
from .errors import ArgumentError, StateError, UndefinedMetricError
from .numerics import Tensor, bilinear_resize, cosine_similarity, no_grad
from .pgm import write_pgm, write_raw_map

SCORE_PAIRS = ("fused", "raw", "student_student")


# -- maps ---------------------------------------------------------------------

def discrepancy(target, student):
    """Per-pixel ``1 - cos`` over channels: ``[N, C, h, w]`` -> ``[N, h, w]``.

    Identical channel vectors score exactly 0; the rounded cosine would
    otherwise leave residue of order 1e-7 in float32.
    """
    d = 1.0 - cosine_similarity(target, student, axis=1).data.astype(np.float64)
    d[np.all(target.data == student.data, axis=1)] = 0.0
    return d


def smooth(maps, sigma):
    """Gaussian blur of ``[N, H, W]``; kernel truncated at 4 sigma, normalized."""
    if sigma <= 0:
        return maps
    return gaussian_filter(maps, sigma=(0, sigma, sigma), mode="reflect", truncate=4.0)


def aggregate_maps(pairs, size, sigma=4.0):
    """Sum of upsampled ``1 - cos`` maps over every (target, student) stage pair.

    ``pairs`` is a list of ``(target_pyramid, student_pyramid)``.
    """
    H, W = size
    total = None
    for targets, students in pairs:
        for t, s in zip(targets, students):
            d = discrepancy(t, s)
            up = bilinear_resize(Tensor(d[:, None], dtype=np.float64), H, W).data[:, 0]
            total = up if total is None else total + up
    return np.clip(smooth(total, sigma), 0.0, None)


def score_pairs_for(out, mode):
    if mode not in SCORE_PAIRS:
        raise ArgumentError(f"unknown score_pairs {mode!r}; choose from {SCORE_PAIRS}")
    students = [s for s in (out.f_eu, out.f_ep) if s is not None]
    if mode == "fused":
        return [(out.f_b, s) for s in students]
    if mode == "raw":
        t2 = out.f_c if out.f_m is None else [
            bilinear_resize(m, c.shape[2], c.shape[3]) for m, c in zip(out.f_m, out.f_c)]
        return list(zip([out.f_c, t2], students))
    if out.f_ep is None:
        raise ArgumentError("student_student scoring needs two students")
    return [(out.f_eu, out.f_ep)]


def anomaly_map(x, model, score_pairs=None, sigma=None, student_fn=None):
    """Anomaly maps ``[N, H, W]`` for a normalized batch ``x``.

    ``student_fn(forward) -> forward`` lets tests substitute student outputs.
    """
    if not getattr(model, "ready", False):
        raise StateError("model has not been trained or loaded")
    sc = model.config.scoring
    score_pairs = score_pairs or sc.score_pairs
    sigma = sc.sigma if sigma is None else sigma
    model.eval()
    with no_grad():
        out = model(x)
    if student_fn is not None:
        out = student_fn(out)
    return aggregate_maps(score_pairs_for(out, score_pairs), x.shape[2:], sigma)


def image_score(amap, reduction="max"):
    if reduction == "max":
        return float(np.max(amap))
    if reduction == "mean":
        return float(np.mean(amap))
    raise ArgumentError(f"unknown reduction {reduction!r}")


# -- metrics ------------------------------------------------------------------

def _prep(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ArgumentError("scores and labels differ in length")
    if not np.all(np.isin(y, (0, 1))):
        raise ArgumentError("labels must be 0 or 1")
    return s, y.astype(np.int64)


def auroc(scores, labels):
    """Mann-Whitney AUROC; ties count one half."""
    s, y = _prep(scores, labels)
    n_pos, n_neg = int(y.sum()), int((1 - y).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both normal and abnormal samples")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _threshold_counts(s, y):
    """TP and FP when predicting ``score >= theta`` for each distinct theta, high to low."""
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    return tp[last], fp[last]


def average_precision(scores, labels):
    """Step-wise area under the PR curve, tied scores grouped into one threshold."""
    s, y = _prep(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AP needs at least one abnormal sample")
    tp, fp = _threshold_counts(s, y)
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def f1_max(scores, labels):
    s, y = _prep(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("F1 needs at least one abnormal sample")
    tp, fp = _threshold_counts(s, y)
    fn = n_pos - tp
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    return float(f1.max())


def metrics(scores, labels):
    return {"auroc": auroc(scores, labels),
            "ap": average_precision(scores, labels),
            "f1_max": f1_max(scores, labels)}


# -- dataset evaluation ----------------------------------------------------------

@dataclass
class EvalReport:
    config_digest: str
    samples: list
    metrics: dict | None
    map_scale: float
    status: str = "ok"
    manifest_digest: str | None = None
    config: dict | None = field(default=None, repr=False)

    def to_dict(self):
        d = {"config_digest": self.config_digest, "samples": self.samples,
             "metrics": self.metrics, "map_scale": self.map_scale, "status": self.status}
        if self.manifest_digest is not None:
            d["manifest_digest"] = self.manifest_digest
        if self.config is not None:
            d["config"] = self.config
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        validate_document(d, "report.schema.json")
        return cls(**d)

    def raise_for_status(self):
        if self.status != "ok":
            raise UndefinedMetricError(self.status)


def score_samples(model, samples, batch=32, student_fn=None):
    """Maps and scores for a list of samples, in input order."""
    sc = model.config.scoring
    size = model.config.encoder.input_size
    maps, scores = [], []
    for k in range(0, len(samples), batch):
        chunk = samples[k:k + batch]
        x = batch_tensor(chunk, size)
        x = Tensor._wrap(x.data.astype(next(iter(model.named_parameters().values())).dtype))
        m = anomaly_map(x, model, student_fn=student_fn)
        maps.extend(m)
        scores.extend(image_score(a, sc.reduction) for a in m)
    return maps, scores


def eval_dataset(model, samples, out_dir=None, config_digest=None, manifest_digest=None,
                 student_fn=None):
    """Score every test sample, compute metrics and optionally write artifacts.

    Written under ``out_dir``: ``report.json`` and ``maps/<id>.pgm`` (plus
    ``maps/<id>.raw`` when raw maps are enabled). PGM maps share one linear
    scale, the dataset-wide maximum, recorded as ``map_scale``.
    """
    samples = sorted(samples, key=lambda s: s.id)
    config_digest = config_digest or model.config.digest()
    maps, scores = score_samples(model, samples, student_fn=student_fn)
    labels = [s.label for s in samples]
    status, mets = "ok", None
    try:
        # a scorer that cannot rank anything (e.g. all-zero maps) is not scored at 0.5
        if len(scores) > 1 and min(scores) == max(scores):
            raise UndefinedMetricError("all image scores are identical")
        mets = metrics(scores, labels)
    except UndefinedMetricError as exc:
        status = f"undefined_metric: {exc}"
    scale = float(max((m.max() for m in maps), default=0.0))
    report = EvalReport(
        config_digest=config_digest,
        samples=[{"id": s.id, "label": int(s.label), "score": float(v)} for s, v in zip(samples, scores)],
        metrics=mets,
        map_scale=scale,
        status=status,
        manifest_digest=manifest_digest,
        config=model.config.to_dict(),
    )
    if out_dir is not None:
        out = Path(out_dir)
        (out / "maps").mkdir(parents=True, exist_ok=True)
        for s, m in zip(samples, maps):
            norm = m / scale if scale > 0 else np.zeros_like(m)
            write_pgm(out / "maps" / f"{safe_name(s.id)}.pgm", norm,
                      comments=(f"config_digest={config_digest}", f"map_scale={scale!r}"))
            if model.config.scoring.raw_maps:
                write_raw_map(out / "maps" / f"{safe_name(s.id)}.raw", m)
        (out / "report.json").write_text(report.to_json())
    return report
