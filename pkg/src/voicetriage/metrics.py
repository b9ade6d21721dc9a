"""Evaluation metrics: confusion matrices, precision/recall/F1 with macro,
micro, and weighted averaging, rank-based ROC-AUC, step-interpolated PR-AUC,
and the per-stage evaluation report."""

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (K, K) int64, entry (i, j) = true i predicted j
    classes: tuple

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(y_true, y_pred, classes) -> ConfusionMatrix:
    classes = tuple(classes)
    index = {c: i for i, c in enumerate(classes)}
    y_true = list(y_true)
    y_pred = list(y_pred)
    if len(y_true) != len(y_pred):
        raise DataError("label sequences differ in length")
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        if t not in index or p not in index:
            raise DataError(f"label outside class list: {t!r} / {p!r}")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(counts=counts, classes=classes)


@dataclass
class PrfResult:
    precision: float
    recall: float
    f1: float
    accuracy: float
    undefined: bool  # some 0/0 ratio was coerced to 0


def _per_class_counts(cm: ConfusionMatrix):
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    tn = c.sum() - tp - fp - fn
    return tp, fp, fn, tn


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    undef = den == 0
    out = np.where(undef, 0.0, np.divide(num, np.where(undef, 1.0, den)))
    return out, undef


def prf_per_class(cm: ConfusionMatrix):
    """Per-class precision/recall/F1 plus support; 0/0 ratios are 0, flagged."""
    tp, fp, fn, _ = _per_class_counts(cm)
    precision, u1 = _safe_div(tp, tp + fp)
    recall, u2 = _safe_div(tp, tp + fn)
    f1, u3 = _safe_div(2 * precision * recall, precision + recall)
    support = cm.counts.sum(axis=1)
    undefined = u1 | u2 | u3
    return precision, recall, f1, support, undefined


def prf(cm: ConfusionMatrix, averaging: str = "macro") -> PrfResult:
    """Precision/recall/F1 under macro, micro, or weighted averaging, plus
    overall accuracy (correct / total)."""
    if cm.total == 0:
        raise DataError("empty confusion matrix")
    tp, fp, fn, _ = _per_class_counts(cm)
    accuracy = float(np.diag(cm.counts).sum() / cm.total)
    precision_c, recall_c, f1_c, support, undef_c = prf_per_class(cm)
    if averaging == "macro":
        return PrfResult(
            float(precision_c.mean()), float(recall_c.mean()), float(f1_c.mean()),
            accuracy, bool(undef_c.any()),
        )
    if averaging == "micro":
        p, u1 = _safe_div(tp.sum(), tp.sum() + fp.sum())
        r, u2 = _safe_div(tp.sum(), tp.sum() + fn.sum())
        f, u3 = _safe_div(2 * p * r, p + r)
        return PrfResult(float(p), float(r), float(f), accuracy, bool(u1 | u2 | u3))
    if averaging == "weighted":
        w = support / support.sum()
        return PrfResult(
            float((precision_c * w).sum()), float((recall_c * w).sum()),
            float((f1_c * w).sum()), accuracy, bool(undef_c.any()),
        )
    raise DataError(f"unknown averaging {averaging!r}")


def roc_auc(scores, relevance):
    """Mann-Whitney ROC-AUC with 0.5 per tied pair, plus the ROC curve.

    Returns (auc, [(threshold, fpr, tpr), ...]); raises if only one relevance
    value is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    rel = np.asarray(relevance, dtype=bool)
    n_pos = int(rel.sum())
    n_neg = rel.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC-AUC needs both positive and negative samples")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.shape[0], dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < sorted_scores.shape[0]:
        j = i
        while j + 1 < sorted_scores.shape[0] and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    auc = (ranks[rel].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    desc = np.argsort(-scores, kind="stable")
    curve = [(np.inf, 0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < desc.shape[0]:
        thr = scores[desc[i]]
        while i < desc.shape[0] and scores[desc[i]] == thr:
            if rel[desc[i]]:
                tp += 1
            else:
                fp += 1
            i += 1
        curve.append((float(thr), fp / n_neg, tp / n_pos))
    return float(auc), curve


def pr_auc(scores, relevance):
    """Average precision (step interpolation) plus the PR curve.

    Items are ranked by descending score with stable input order inside tie
    groups; curve points sit at distinct thresholds.
    """
    scores = np.asarray(scores, dtype=np.float64)
    rel = np.asarray(relevance, dtype=bool)
    n_pos = int(rel.sum())
    if n_pos == 0:
        raise DataError("PR-AUC needs at least one positive sample")
    desc = np.argsort(-scores, kind="stable")
    ap = 0.0
    tp = 0
    curve = [(np.inf, 1.0, 0.0)]
    i = 0
    while i < desc.shape[0]:
        thr = scores[desc[i]]
        j = i
        while j < desc.shape[0] and scores[desc[j]] == thr:
            if rel[desc[j]]:
                tp += 1
                ap += tp / (j + 1)
            j += 1
        curve.append((float(thr), tp / j, tp / n_pos))
        i = j
    return float(ap / n_pos), curve


def one_vs_rest_aucs(y_true_idx, scores, n_classes):
    """Per-class ROC/PR AUCs (None where undefined) and their curves."""
    y_true_idx = np.asarray(y_true_idx)
    roc, pr, roc_curves, pr_curves = [], [], [], []
    for c in range(n_classes):
        rel = y_true_idx == c
        try:
            a, curve = roc_auc(scores[:, c], rel)
            roc.append(a)
            roc_curves.append(curve)
        except DataError:
            roc.append(None)
            roc_curves.append(None)
        try:
            a, curve = pr_auc(scores[:, c], rel)
            pr.append(a)
            pr_curves.append(curve)
        except DataError:
            pr.append(None)
            pr_curves.append(None)
    return roc, pr, roc_curves, pr_curves


def _mean_defined(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def stage_report(y_true, y_pred, scores, classes, group_of=None):
    """Metric block for one stage: confusion matrix, per-class and aggregated
    P/R/F1, accuracy, per-class and macro ROC/PR AUCs, and (when a group map is
    given) per-group AUC means plus the disorders-only macro variant."""
    classes = tuple(classes)
    names = [getattr(c, "value", str(c)) for c in classes]
    cm = confusion(y_true, y_pred, classes)
    index = {c: i for i, c in enumerate(classes)}
    y_idx = np.array([index[t] for t in y_true])
    precision_c, recall_c, f1_c, support, undef_c = prf_per_class(cm)
    roc_c, pr_c, roc_curves, pr_curves = one_vs_rest_aucs(y_idx, scores, len(classes))
    block = {
        "classes": names,
        "confusion": cm.counts.tolist(),
        "accuracy": prf(cm, "macro").accuracy,
        "per_class": {
            names[i]: {
                "precision": float(precision_c[i]),
                "recall": float(recall_c[i]),
                "f1": float(f1_c[i]),
                "support": int(support[i]),
                "roc_auc": roc_c[i],
                "pr_auc": pr_c[i],
                "undefined": bool(undef_c[i]),
            }
            for i in range(len(classes))
        },
    }
    for avg in ("macro", "micro", "weighted"):
        r = prf(cm, avg)
        block[avg] = {
            "precision": r.precision,
            "recall": r.recall,
            "f1": r.f1,
            "undefined": r.undefined,
        }
    block["roc_auc_macro"] = _mean_defined(roc_c)
    block["pr_auc_macro"] = _mean_defined(pr_c)
    if group_of is not None:
        groups = {}
        for i, c in enumerate(classes):
            g = group_of(c)
            if g is None:
                continue
            groups.setdefault(getattr(g, "value", str(g)), []).append(i)
        block["group_means"] = {
            g: {
                "roc_auc": _mean_defined([roc_c[i] for i in idxs]),
                "pr_auc": _mean_defined([pr_c[i] for i in idxs]),
            }
            for g, idxs in sorted(groups.items())
        }
        disorder_idx = [i for g, idxs in groups.items() for i in idxs]
        block["roc_auc_macro_disorders"] = _mean_defined([roc_c[i] for i in disorder_idx])
        block["pr_auc_macro_disorders"] = _mean_defined([pr_c[i] for i in disorder_idx])
    curves = {
        names[i]: {"roc": roc_curves[i], "pr": pr_curves[i]} for i in range(len(classes))
    }
    return block, curves


def report(stage_inputs, provenance=None):
    """Full evaluation document plus per-class curves.

    stage_inputs maps a stage name to a dict with y_true, y_pred, scores,
    classes, and an optional group_of callable (class -> group or None) that
    switches on the per-group AUC means and the disorders-only macro variant.
    Returns (report_dict, {stage: {class: {"roc": pts, "pr": pts}}}).
    """
    doc = {"format_version": 1}
    if provenance:
        doc.update(provenance)
    doc["stages"] = {}
    curves = {}
    for name, si in stage_inputs.items():
        if len(si["y_true"]) == 0:
            raise DataError(f"stage {name!r}: empty evaluation set")
        block, stage_curves = stage_report(
            si["y_true"], si["y_pred"], si["scores"], si["classes"], si.get("group_of")
        )
        doc["stages"][name] = block
        curves[name] = stage_curves
    return doc, curves


def curve_csv(points, kind: str) -> str:
    """CSV export for one curve: `threshold,fpr,tpr` or `threshold,precision,recall`."""
    header = "threshold,fpr,tpr" if kind == "roc" else "threshold,precision,recall"
    lines = [header]
    for thr, a, b in points:
        t = "inf" if np.isinf(thr) else repr(float(thr))
        lines.append(f"{t},{a!r},{b!r}")
    return "\n".join(lines) + "\n"
