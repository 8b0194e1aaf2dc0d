"""Evaluation instruments: top-k accuracy, ROC/PR curves, density histograms.

Curves sweep the distinct scores in descending order with ties grouped.
ROC area uses the trapezoidal rule, which equals the normalized
pairwise-ordering statistic with ties counted half. PR area uses the
average-precision step sum, not trapezoids, which would be optimistic.
Histograms are area-normalized: sum(density * width) == 1.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, UndefinedCurveError
from .fsio import atomic_write_text
from .uncertainty import PredictiveDistribution, UncertaintyReport, report


@dataclass(frozen=True)
class ScoredBinary:
    scores: np.ndarray
    labels: np.ndarray  # True = positive

    def __post_init__(self):
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=bool))
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise DataError(
                f"scores {self.scores.shape} and labels {self.labels.shape}"
                " must be equal-length vectors"
            )

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return int((~self.labels).sum())


@dataclass(frozen=True)
class Curve:
    thresholds: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    auc: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("threshold,x,y\n")
        for t, x, y in zip(self.thresholds, self.xs, self.ys):
            buf.write(f"{float(t)!r},{float(x)!r},{float(y)!r}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class DensityHistogram:
    bin_edges: np.ndarray
    densities: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bin_edges", np.asarray(self.bin_edges, dtype=np.float64))
        object.__setattr__(self, "densities", np.asarray(self.densities, dtype=np.float64))
        if self.bin_edges.ndim != 1 or self.bin_edges.size != self.densities.size + 1:
            raise DataError("need B+1 edges for B densities")
        if not (np.diff(self.bin_edges) > 0).all():
            raise DataError("bin edges must be strictly increasing")
        if (self.densities < 0).any():
            raise DataError("densities must be nonnegative")
        area = float((self.densities * np.diff(self.bin_edges)).sum())
        if abs(area - 1.0) > 1e-9:
            raise DataError(f"histogram area {area!r} is not 1 within 1e-9")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("bin_lo,bin_hi,density\n")
        for lo, hi, d in zip(self.bin_edges[:-1], self.bin_edges[1:], self.densities):
            buf.write(f"{float(lo)!r},{float(hi)!r},{float(d)!r}\n")
        return buf.getvalue()


def top_k_accuracy(mean_probs: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Fraction of rows whose label ranks in the top k probabilities.

    Ties rank the lower class index first.
    """
    mean_probs = np.asarray(mean_probs, dtype=np.float64)
    labels = np.asarray(labels)
    n, num_classes = mean_probs.shape
    if k > num_classes:
        raise ConfigError(f"k={k} exceeds the {num_classes} classes")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    order = np.argsort(-mean_probs, axis=1, kind="stable")
    hits = (order[:, :k] == labels[:, None]).any(axis=1)
    return float(hits.mean())


def _sweep(sb: ScoredBinary):
    """Cumulative TP/FP after each distinct descending score."""
    order = np.argsort(-sb.scores, kind="stable")
    scores = sb.scores[order]
    labels = sb.labels[order]
    distinct = np.where(np.diff(scores))[0]
    last = np.concatenate([distinct, [scores.size - 1]])
    tp = np.cumsum(labels)[last].astype(np.float64)
    fp = np.cumsum(~labels)[last].astype(np.float64)
    return scores[last], tp, fp


def roc_curve_auc(sb: ScoredBinary) -> Curve:
    """ROC curve from (0,0) to (1,1); trapezoidal area."""
    if sb.n_pos == 0 or sb.n_neg == 0:
        raise UndefinedCurveError(
            f"ROC needs both classes, got {sb.n_pos} positives and {sb.n_neg} negatives"
        )
    thresholds, tp, fp = _sweep(sb)
    tpr = np.concatenate([[0.0], tp / sb.n_pos])
    fpr = np.concatenate([[0.0], fp / sb.n_neg])
    thresholds = np.concatenate([[np.inf], thresholds])
    auc = float((np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0).sum())
    return Curve(thresholds, fpr, tpr, auc)


def pr_curve_auc(sb: ScoredBinary) -> Curve:
    """Precision-recall curve; area by the step-interpolated AP sum."""
    if sb.n_pos == 0:
        raise UndefinedCurveError("PR needs at least one positive example")
    thresholds, tp, fp = _sweep(sb)
    precision = tp / (tp + fp)
    recall = tp / sb.n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    auc = float(((recall - prev_recall) * precision).sum())
    return Curve(thresholds, recall, precision, auc)


def density_histogram(values, bins: int, lo: float, hi: float) -> DensityHistogram:
    """Equal-width area-one histogram; out-of-range values clip to edge bins."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise DataError("cannot build a histogram from no values")
    if bins < 1:
        raise ConfigError(f"bins must be >= 1, got {bins}")
    if not hi > lo:
        raise ConfigError(f"need hi > lo, got [{lo}, {hi}]")
    clipped = np.clip(values, lo, hi)
    counts, edges = np.histogram(clipped, bins=bins, range=(lo, hi))
    width = (hi - lo) / bins
    densities = counts / (values.size * width)
    return DensityHistogram(edges, densities)


# ---- the full protocol -------------------------------------------------------

SUMMARY_KEYS = (
    "top1",
    "top5",
    "roc_auc_micro",
    "pr_auc_micro",
    "roc_auc_correctness",
    "pr_auc_correctness",
    "ood_auroc_entropy",
    "ood_auroc_bald",
)


@dataclass
class EvalBundle:
    summary: dict
    curves: dict[str, Curve] = field(default_factory=dict)
    histograms: dict[str, DensityHistogram] = field(default_factory=dict)
    notices: list[str] = field(default_factory=list)
    reports: list[UncertaintyReport] = field(default_factory=list)

    def summary_json(self) -> str:
        return json.dumps(self.summary, indent=1, sort_keys=True) + "\n"


def _try_hist(bundle, name, values, bins, lo, hi):
    if len(values) == 0:
        bundle.notices.append(f"skipped histogram {name}: no examples in group")
        return
    bundle.histograms[name] = density_histogram(values, bins, lo, hi)


def evaluation_suite(
    pds: list[PredictiveDistribution],
    labels: np.ndarray,
    ood_flags: np.ndarray,
    bins: int = 50,
) -> EvalBundle:
    """All comparison artifacts for one model on one evaluation set.

    `pds` covers in-distribution and OOD examples together; OOD rows are
    marked by `ood_flags` and excluded from accuracy, the micro
    one-vs-rest curves and the correctness split.
    """
    labels = np.asarray(labels)
    ood_flags = np.asarray(ood_flags, dtype=bool)
    if not (len(pds) == labels.size == ood_flags.size):
        raise DataError(
            f"length mismatch: {len(pds)} distributions, {labels.size} labels,"
            f" {ood_flags.size} flags"
        )
    if len(pds) == 0:
        raise DataError("nothing to evaluate")

    k = pds[0].k
    mean_probs = np.stack([pd.mean_probs for pd in pds])
    reps = [report(pd) for pd in pds]
    predicted = np.array([r.predicted_class for r in reps])
    confidence = np.array([r.confidence for r in reps])
    pred_entropy = np.array([r.predictive_entropy for r in reps])
    bald_scores = np.array([r.bald for r in reps])

    in_dist = ~ood_flags
    bundle = EvalBundle(summary={key: None for key in SUMMARY_KEYS}, reports=reps)
    if not in_dist.any():
        raise DataError("evaluation needs at least one in-distribution example")

    # (a) accuracies on in-distribution data
    bundle.summary["top1"] = top_k_accuracy(mean_probs[in_dist], labels[in_dist], 1)
    bundle.summary["top5"] = top_k_accuracy(
        mean_probs[in_dist], labels[in_dist], min(5, k)
    )

    # (b) micro one-vs-rest curves over (example, class) pairs
    onehot = np.zeros((int(in_dist.sum()), k), dtype=bool)
    onehot[np.arange(onehot.shape[0]), labels[in_dist]] = True
    micro = ScoredBinary(mean_probs[in_dist].reshape(-1), onehot.reshape(-1))
    roc_micro = roc_curve_auc(micro)
    pr_micro = pr_curve_auc(micro)
    bundle.curves["roc_micro"] = roc_micro
    bundle.curves["pr_micro"] = pr_micro
    bundle.summary["roc_auc_micro"] = roc_micro.auc
    bundle.summary["pr_auc_micro"] = pr_micro.auc

    # (c) correctness detection: does confidence rank correct predictions first
    correct = predicted[in_dist] == labels[in_dist]
    try:
        roc_corr = roc_curve_auc(ScoredBinary(confidence[in_dist], correct))
        pr_corr = pr_curve_auc(ScoredBinary(confidence[in_dist], correct))
        bundle.curves["roc_correctness"] = roc_corr
        bundle.curves["pr_correctness"] = pr_corr
        bundle.summary["roc_auc_correctness"] = roc_corr.auc
        bundle.summary["pr_auc_correctness"] = pr_corr.auc
    except UndefinedCurveError as exc:
        bundle.notices.append(f"correctness curves undefined: {exc}")

    # (d, e) density histograms
    ln_k = float(np.log(k))
    _try_hist(bundle, "confidence_true", confidence[in_dist][correct], bins, 0.0, 1.0)
    _try_hist(bundle, "confidence_false", confidence[in_dist][~correct], bins, 0.0, 1.0)
    _try_hist(bundle, "entropy_true", pred_entropy[in_dist][correct], bins, 0.0, ln_k)
    _try_hist(bundle, "entropy_false", pred_entropy[in_dist][~correct], bins, 0.0, ln_k)
    _try_hist(bundle, "bald_true", bald_scores[in_dist][correct], bins, 0.0, ln_k)
    _try_hist(bundle, "bald_false", bald_scores[in_dist][~correct], bins, 0.0, ln_k)

    if ood_flags.any():
        _try_hist(bundle, "confidence_in", confidence[in_dist], bins, 0.0, 1.0)
        _try_hist(bundle, "confidence_out", confidence[ood_flags], bins, 0.0, 1.0)
        _try_hist(bundle, "entropy_in", pred_entropy[in_dist], bins, 0.0, ln_k)
        _try_hist(bundle, "entropy_out", pred_entropy[ood_flags], bins, 0.0, ln_k)
        _try_hist(bundle, "bald_in", bald_scores[in_dist], bins, 0.0, ln_k)
        _try_hist(bundle, "bald_out", bald_scores[ood_flags], bins, 0.0, ln_k)

        # (f) OOD detection: uncertainty as the score, OOD as the positive
        roc_e = roc_curve_auc(ScoredBinary(pred_entropy, ood_flags))
        roc_b = roc_curve_auc(ScoredBinary(bald_scores, ood_flags))
        bundle.curves["roc_ood_entropy"] = roc_e
        bundle.curves["roc_ood_bald"] = roc_b
        bundle.summary["ood_auroc_entropy"] = roc_e.auc
        bundle.summary["ood_auroc_bald"] = roc_b.auc
    else:
        bundle.notices.append(
            "no OOD examples: skipped in/out histograms and OOD AUROC"
        )
    return bundle


def write_bundle(bundle: EvalBundle, out_dir) -> list[str]:
    """Write summary JSON plus one CSV per curve and histogram."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    atomic_write_text(out / "summary.json", bundle.summary_json())
    written.append("summary.json")
    for name, curve in bundle.curves.items():
        fname = f"curve_{name}.csv"
        atomic_write_text(out / fname, curve.to_csv())
        written.append(fname)
    for name, hist in bundle.histograms.items():
        fname = f"hist_{name}.csv"
        atomic_write_text(out / fname, hist.to_csv())
        written.append(fname)
    if bundle.notices:
        atomic_write_text(out / "notices.txt", "\n".join(bundle.notices) + "\n")
        written.append("notices.txt")
    return written
