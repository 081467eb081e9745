"""Scoring and the anti-spoofing metric suite.

Convention: the positive class is "live" and a sample's score is the mean of
its predicted depth map, so higher scores mean more live. A sample is
predicted live when score >= threshold. APCER = FP/(FP+TN) is the fraction
of attacks accepted, BPCER = FN/(FN+TP) the fraction of bona fides rejected,
ACER their mean. The EER search sweeps the midpoints between adjacent
distinct scores (plus sentinels beyond both ends), picks the threshold
minimizing |APCER - BPCER| (ties broken toward the lower threshold), and
reports (APCER + BPCER) / 2 there.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .data import LABEL_LIVE, LABEL_SPOOF, SampleRecord
from .errors import ValidationError
from .training import DepthSample
from .uncertainty import DepthUncertaintyModel, infer_depth


class DegenerateMetricWarning(UserWarning):
    """A metric denominator was zero; the metric was reported as 0."""


@dataclass
class ScoredSample:
    score: float
    label: str
    spoof_type: str | None = None
    ref: str = ""


@dataclass
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass
class EvalReport:
    threshold: float
    tp: int
    tn: int
    fp: int
    fn: int
    apcer: float
    bpcer: float
    acer: float
    eer: float | None = None
    hter: float | None = None
    n_samples: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


# ---------------------------------------------------------------------------
# scoring


def score_depth_map(mu) -> float:
    """Liveness score of one predicted depth map: its mean."""
    if isinstance(mu, torch.Tensor):
        return float(mu.mean())
    return float(np.asarray(mu).mean())


def score_image(model: DepthUncertaintyModel, image) -> float:
    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(np.asarray(image)).float() if not isinstance(image, torch.Tensor) else image
        return score_depth_map(infer_depth(model(x)))


def score_samples(
    model: DepthUncertaintyModel, samples: list[DepthSample], batch_size: int = 32
) -> list[ScoredSample]:
    model.eval()
    out: list[ScoredSample] = []
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start : start + batch_size]
            images = torch.from_numpy(np.stack([s.image for s in chunk])).float()
            mu = infer_depth(model(images))
            for s, m in zip(chunk, mu):
                out.append(ScoredSample(float(m.mean()), s.label, s.spoof_type_name, s.ref))
    return out


# ---------------------------------------------------------------------------
# counts and rates


def confusion(scores: list[ScoredSample], threshold: float) -> ConfusionCounts:
    """Count outcomes with score >= threshold meaning predicted live."""
    counts = ConfusionCounts()
    for s in scores:
        predicted_live = s.score >= threshold
        if s.label == LABEL_LIVE:
            if predicted_live:
                counts.tp += 1
            else:
                counts.fn += 1
        elif s.label == LABEL_SPOOF:
            if predicted_live:
                counts.fp += 1
            else:
                counts.tn += 1
        else:
            raise ValidationError(f"unknown label {s.label!r}")
    return counts


def _safe_rate(num: int, denom: int, name: str) -> float:
    if denom == 0:
        warnings.warn(f"{name} denominator is zero; reporting 0", DegenerateMetricWarning)
        return 0.0
    return num / denom


def error_rates(counts: ConfusionCounts) -> tuple[float, float, float]:
    """(APCER, BPCER, ACER) from confusion counts."""
    apcer = _safe_rate(counts.fp, counts.fp + counts.tn, "APCER")
    bpcer = _safe_rate(counts.fn, counts.fn + counts.tp, "BPCER")
    return apcer, bpcer, (apcer + bpcer) / 2.0


def candidate_thresholds(values: np.ndarray) -> np.ndarray:
    """Midpoints between adjacent distinct scores, plus sentinels beyond both ends."""
    distinct = np.unique(values)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    return np.concatenate([[distinct[0] - 1.0], mids, [distinct[-1] + 1.0]])


def eer(scores: list[ScoredSample]) -> tuple[float, float]:
    """Equal error rate and its threshold.

    Evaluates APCER/BPCER at every candidate threshold and returns
    (APCER + BPCER) / 2 where |APCER - BPCER| is smallest, preferring the
    lowest such threshold.
    """
    live = np.sort([s.score for s in scores if s.label == LABEL_LIVE])
    spoof = np.sort([s.score for s in scores if s.label == LABEL_SPOOF])
    if live.size == 0 or spoof.size == 0:
        raise ValidationError("EER needs both live and spoof samples")
    thresholds = candidate_thresholds(np.concatenate([live, spoof]))
    # predicted live <=> score >= t
    apcer = (spoof.size - np.searchsorted(spoof, thresholds, side="left")) / spoof.size
    bpcer = np.searchsorted(live, thresholds, side="left") / live.size
    best = int(np.argmin(np.abs(apcer - bpcer)))
    return (apcer[best] + bpcer[best]) / 2.0, float(thresholds[best])


def hter(dev_scores: list[ScoredSample], test_scores: list[ScoredSample]) -> tuple[float, float]:
    """Half total error rate on the test set at the dev-set EER threshold."""
    _, threshold = eer(dev_scores)
    apcer, bpcer, _ = error_rates(confusion(test_scores, threshold))
    return (apcer + bpcer) / 2.0, threshold


def evaluate(
    scores: list[ScoredSample],
    threshold: float | None = None,
    hter_value: float | None = None,
) -> EvalReport:
    """Full report at the given threshold (default: the EER threshold)."""
    eer_value: float | None
    try:
        eer_value, eer_threshold = eer(scores)
    except ValidationError:
        if threshold is None:
            raise
        eer_value = None
        eer_threshold = threshold
    if threshold is None:
        threshold = eer_threshold
    counts = confusion(scores, threshold)
    apcer, bpcer, acer = error_rates(counts)
    return EvalReport(
        threshold=float(threshold),
        tp=counts.tp,
        tn=counts.tn,
        fp=counts.fp,
        fn=counts.fn,
        apcer=apcer,
        bpcer=bpcer,
        acer=acer,
        eer=eer_value,
        hter=hter_value,
        n_samples=counts.total,
    )


# ---------------------------------------------------------------------------
# protocols


@dataclass
class ProtocolFold:
    name: str
    report: EvalReport
    train_records: list[SampleRecord] | None = None


@dataclass
class ProtocolResult:
    protocol: str
    folds: list[ProtocolFold]
    aggregate: dict[str, tuple[float, float]]

    def to_json(self) -> str:
        return json.dumps(
            {
                "protocol": self.protocol,
                "folds": {f.name: asdict(f.report) for f in self.folds},
                "aggregate": {k: {"mean": m, "std": s} for k, (m, s) in self.aggregate.items()},
            },
            indent=2,
        )


def _aggregate(folds: list[ProtocolFold]) -> dict[str, tuple[float, float]]:
    agg: dict[str, tuple[float, float]] = {}
    for metric in ("apcer", "bpcer", "acer", "eer", "hter"):
        vals = [getattr(f.report, metric) for f in folds]
        if any(v is None for v in vals):
            continue
        agg[metric] = (float(np.mean(vals)), float(np.std(vals)))
    return agg


def run_protocol(
    protocol: str,
    scores: list[ScoredSample],
    dev_scores: list[ScoredSample] | None = None,
    records: list[SampleRecord] | None = None,
) -> ProtocolResult:
    """Evaluate under one of the three protocols.

    intra: one fold over all scores at the EER threshold.
    cross_type_loo: one fold per spoof type (that type's attacks vs. all
    lives); when manifest records are supplied, each fold also lists the
    training records with the held-out type removed.
    cross_dataset: dev_scores fix the threshold (dev EER point); the report
    carries the test-set HTER.
    """
    if protocol == "intra":
        folds = [ProtocolFold("intra", evaluate(scores))]
    elif protocol == "cross_type_loo":
        types = sorted({s.spoof_type for s in scores if s.label == LABEL_SPOOF and s.spoof_type})
        if not types:
            raise ValidationError("cross_type_loo needs scored spoof samples with spoof types")
        folds = []
        for t in types:
            fold_scores = [
                s for s in scores if s.label == LABEL_LIVE or s.spoof_type == t
            ]
            if not any(s.label == LABEL_SPOOF for s in fold_scores):
                raise ValidationError(f"empty fold for spoof type {t!r}")
            train = None
            if records is not None:
                train = [r for r in records if r.spoof_type != t]
            folds.append(ProtocolFold(t, evaluate(fold_scores), train))
    elif protocol == "cross_dataset":
        if dev_scores is None:
            raise ValidationError("cross_dataset needs dev_scores")
        hter_value, threshold = hter(dev_scores, scores)
        folds = [ProtocolFold("cross_dataset", evaluate(scores, threshold, hter_value))]
    else:
        raise ValidationError(f"unknown protocol {protocol!r}")
    return ProtocolResult(protocol, folds, _aggregate(folds))


# ---------------------------------------------------------------------------
# score files


def write_scores(scores: list[ScoredSample], path: Path | str) -> None:
    """One line per sample: ref<TAB>label<TAB>score."""
    lines = [f"{s.ref}\t{s.label}\t{s.score!r}" for s in scores]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_scores(path: Path | str) -> list[ScoredSample]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"score file not found: {path}")
    out = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ValidationError(f"{path}:{lineno}: expected 3 tab-separated fields")
        ref, label, score = fields
        if label not in (LABEL_LIVE, LABEL_SPOOF):
            raise ValidationError(f"{path}:{lineno}: unknown label {label!r}")
        out.append(ScoredSample(float(score), label, None, ref))
    return out


def attach_spoof_types(scores: list[ScoredSample], records: list[SampleRecord]) -> list[ScoredSample]:
    """Fill spoof_type on scored samples by joining refs against manifest paths."""
    by_path: dict[str, str | None] = {}
    for rec in records:
        by_path[str(rec.image_path)] = rec.spoof_type
        by_path[rec.image_path.name] = rec.spoof_type
    out = []
    for s in scores:
        t = by_path.get(s.ref, by_path.get(Path(s.ref).name)) if s.ref else None
        out.append(ScoredSample(s.score, s.label, t if s.label == LABEL_SPOOF else None, s.ref))
    return out
