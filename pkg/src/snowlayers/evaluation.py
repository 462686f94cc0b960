"""Boundary F-scores (ODS/OIS), average precision, layer extraction and depth MAE.

F-score per threshold is ``TP / (TP + (FP + FN) / 2)``. Predicted and
ground-truth pixels correspond one-to-one within a Euclidean tolerance. The
default takes a maximum-cardinality matching, so TP is unchanged by flips of
both grids and swapping prediction and ground truth swaps FP and FN. A greedy
nearest-first matching is available for comparison.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching
from scipy.spatial import cKDTree

from .data import DEFAULT_METERS_PER_ROW, LayerSet, rasterize
from .postproc import binarize

DEFAULT_THRESHOLDS = 99
DEFAULT_MIN_PIXELS = 8


@dataclass(frozen=True)
class PrPoint:
    threshold: float
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f(self) -> float:
        return f_score(self.tp, self.fp, self.fn)

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "tp": self.tp, "fp": self.fp, "fn": self.fn,
                "precision": self.precision, "recall": self.recall, "f": self.f}


def f_score(tp: int, fp: int, fn: int) -> float:
    return tp / (tp + 0.5 * (fp + fn)) if tp else 0.0


def default_tolerance(rows: int, cols: int) -> float:
    return float(max(1, round(0.0075 * np.hypot(rows, cols))))


def threshold_grid(n: int = DEFAULT_THRESHOLDS) -> np.ndarray:
    """``n`` evenly spaced thresholds strictly inside (0, 1)."""
    if n < 1:
        raise ValueError(f"need at least one threshold, got {n}")
    return np.arange(1, n + 1) / (n + 1)


def _as_mask(x, name):
    x = np.asarray(x)
    if x.ndim == 4:
        x = x[0, 0]
    elif x.ndim == 3:
        x = x[0]
    if x.ndim != 2:
        raise ValueError(f"{name} must be a 2D grid, got shape {x.shape}")
    return x


MATCHINGS = ("optimal", "greedy")


def correspond(pred, gt, tol: float, matching: str = "optimal") -> tuple[int, int, int]:
    """One-to-one matching of positives within Euclidean distance ``tol``; returns ``(TP, FP, FN)``.

    ``optimal`` takes a maximum-cardinality matching, whose size is unique and
    therefore unchanged by flips or by swapping ``pred`` and ``gt``.
    ``greedy`` visits candidate pairs nearest first (ties by row-major
    indices) and matches any pair whose ends are both still free.
    """
    if matching not in MATCHINGS:
        raise ValueError(f"unknown matching {matching!r}; expected one of {MATCHINGS}")
    pred, gt = _as_mask(pred, "pred"), _as_mask(gt, "gt")
    if pred.shape != gt.shape:
        raise ValueError(f"pred shape {pred.shape} does not match gt shape {gt.shape}")
    if tol < 0:
        raise ValueError(f"tolerance must be >= 0, got {tol}")
    p_pts = np.argwhere(pred > 0)
    g_pts = np.argwhere(gt > 0)
    if len(p_pts) == 0 or len(g_pts) == 0:
        return 0, len(p_pts), len(g_pts)
    near = cKDTree(p_pts).query_ball_tree(cKDTree(g_pts), r=tol + 1e-9)
    pi = np.repeat(np.arange(len(p_pts)), [len(n) for n in near])
    gi = np.fromiter((g for n in near for g in n), dtype=np.int64, count=len(pi))
    d2 = ((p_pts[pi] - g_pts[gi]) ** 2).sum(axis=1)
    keep = d2 <= tol * tol
    pi, gi, d2 = pi[keep], gi[keep], d2[keep]
    if len(pi) == 0:
        return 0, len(p_pts), len(g_pts)
    if matching == "optimal":
        graph = csr_matrix((np.ones(len(pi), dtype=np.int8), (pi, gi)), shape=(len(p_pts), len(g_pts)))
        tp = int(np.count_nonzero(maximum_bipartite_matching(graph, perm_type="column") >= 0))
    else:
        tp = _greedy(p_pts, g_pts, pi, gi, d2, pred.shape[1])
    return tp, len(p_pts) - tp, len(g_pts) - tp


def _greedy(p_pts, g_pts, pi, gi, d2, cols) -> int:
    p_idx = p_pts[:, 0] * cols + p_pts[:, 1]
    g_idx = g_pts[:, 0] * cols + g_pts[:, 1]
    # the key depends only on the unordered pair, so swapping pred and gt swaps FP and FN
    lo = np.minimum(p_idx[pi], g_idx[gi])
    hi = np.maximum(p_idx[pi], g_idx[gi])
    order = np.lexsort((hi, lo, d2))
    p_used = np.zeros(len(p_pts), dtype=bool)
    g_used = np.zeros(len(g_pts), dtype=bool)
    tp = 0
    for k in order:
        a, b = pi[k], gi[k]
        if not p_used[a] and not g_used[b]:
            p_used[a] = g_used[b] = True
            tp += 1
    return tp


def pr_curve(pred_gray, gt, thresholds=DEFAULT_THRESHOLDS, tol=None, matching="optimal") -> list[PrPoint]:
    pred_gray, gt = _as_mask(pred_gray, "pred"), _as_mask(gt, "gt")
    if tol is None:
        tol = default_tolerance(*gt.shape)
    grid = threshold_grid(thresholds) if np.isscalar(thresholds) else np.asarray(thresholds)
    points, cache = [], {}
    for t in grid:
        mask = binarize(pred_gray, float(t))
        # thresholded sets are nested, so the positive count identifies the set
        key = int(mask.sum())
        if key not in cache:
            cache[key] = correspond(mask, gt, tol, matching)
        points.append(PrPoint(float(t), *cache[key]))
    return points


def average_precision(curve) -> float:
    """Area under the interpolated precision envelope, trapezoidal in recall.

    The envelope is extended flat from the lowest recall down to 0, so a
    single point ``(r, p)`` has area ``p * r``.
    """
    pts = sorted(((p.recall, p.precision) for p in curve), key=lambda rp: rp[0])
    if not pts:
        raise ValueError("empty precision-recall curve")
    r = np.array([rp[0] for rp in pts])
    p = np.array([rp[1] for rp in pts])
    env = np.maximum.accumulate(p[::-1])[::-1]
    area = r[0] * env[0] + np.sum(np.diff(r) * (env[1:] + env[:-1]) / 2)
    return float(area)


def ods_ois(dataset, thresholds=DEFAULT_THRESHOLDS, tol=None, matching="optimal") -> dict:
    """ODS (best F of dataset-summed counts at one threshold), OIS (mean of per-image best F), AP, curves."""
    curves = [pr_curve(pred, gt, thresholds, tol, matching) for pred, gt in dataset]
    if not curves:
        raise ValueError("empty dataset")
    agg = []
    for i, t in enumerate(c.threshold for c in curves[0]):
        tp = sum(c[i].tp for c in curves)
        fp = sum(c[i].fp for c in curves)
        fn = sum(c[i].fn for c in curves)
        agg.append(PrPoint(t, tp, fp, fn))
    best = max(range(len(agg)), key=lambda i: (agg[i].f, -i))
    ois = float(np.mean([max(p.f for p in c) for c in curves]))
    return {
        "ods": {"threshold": agg[best].threshold, "f": agg[best].f},
        "ois": ois,
        "ap": average_precision(agg),
        "curve": agg,
        "per_image": curves,
    }


# ---------------------------------------------------------------- layers and MAE

_EIGHT = np.ones((3, 3), dtype=int)


def mask_to_layers(binary, min_pixels: int = DEFAULT_MIN_PIXELS, meters_per_row=DEFAULT_METERS_PER_ROW) -> LayerSet:
    """8-connected components of ``binary`` as layers; each column's row is the mean row of the component there."""
    mask = _as_mask(binary, "mask") > 0
    labels, n = ndimage.label(mask, structure=_EIGHT)
    layers = []
    for k in range(1, n + 1):
        rr, cc = np.nonzero(labels == k)
        if len(rr) < min_pixels:
            continue
        sums = np.bincount(cc, weights=rr)
        counts = np.bincount(cc)
        cols = np.nonzero(counts)[0]
        layers.append({int(c): float(sums[c] / counts[c]) for c in cols})
    return LayerSet(layers, meters_per_row)


@dataclass
class LayerMae:
    per_layer: list
    overall: float | None
    coverage: float


def layer_mae(pred: LayerSet, gt: LayerSet) -> LayerMae:
    """Depth MAE of the j-th predicted layer against the j-th ground-truth layer.

    Each layer's MAE averages only columns where both layers are defined;
    ``coverage`` is the fraction of (layer, column) cells, over the union of
    both sets, in which such a match existed.
    """
    n_pair = min(len(pred), len(gt))
    per_layer, matched, total = [], 0, 0
    for j in range(max(len(pred), len(gt))):
        p = pred.layers[j] if j < len(pred) else {}
        g = gt.layers[j] if j < len(gt) else {}
        total += len(p.keys() | g.keys())
        if j >= n_pair:
            continue
        common = sorted(p.keys() & g.keys())
        matched += len(common)
        per_layer.append(float(np.mean([abs(g[c] - p[c]) for c in common])) if common else None)
    defined = [m for m in per_layer if m is not None]
    overall = float(np.mean(defined)) if defined else None
    return LayerMae(per_layer, overall, matched / total if total else 0.0)


def dataset_mae(results) -> float | None:
    vals = [r.overall for r in results if r.overall is not None]
    return float(np.mean(vals)) if vals else None


# ---------------------------------------------------------------- report

@dataclass
class EvalReport:
    pr_curve: list
    ods: dict
    ois: float
    ap: float
    mae_overall: float | None = None
    per_layer_mae: list = field(default_factory=list)
    per_image_mae: list = field(default_factory=list)
    coverage: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pr_curve"] = [p.to_dict() for p in self.pr_curve]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["pr_curve"] = [PrPoint(p["threshold"], p["tp"], p["fp"], p["fn"]) for p in d["pr_curve"]]
        return cls(**d)

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "tp", "fp", "fn", "precision", "recall", "f"])
        for p in self.pr_curve:
            w.writerow([p.threshold, p.tp, p.fp, p.fn, p.precision, p.recall, p.f])
        return buf.getvalue()


def evaluate(predictions, gt_layers, thresholds=DEFAULT_THRESHOLDS, tol=None, min_pixels=DEFAULT_MIN_PIXELS,
             matching="optimal") -> EvalReport:
    """Full evaluation of NMS-thinned grayscale predictions against ground-truth LayerSets.

    The ODS threshold binarizes every prediction before layers are extracted
    for the depth MAE.
    """
    preds = [_as_mask(p, "prediction") for p in predictions]
    gts = [rasterize(g, *p.shape) for p, g in zip(preds, gt_layers)]
    scores = ods_ois(list(zip(preds, gts)), thresholds, tol, matching)
    report = EvalReport(scores["curve"], scores["ods"], scores["ois"], scores["ap"])
    add_depth_metrics(report, preds, gt_layers, min_pixels)
    return report


def add_depth_metrics(report: EvalReport, predictions, gt_layers, min_pixels=DEFAULT_MIN_PIXELS) -> EvalReport:
    """Fill the MAE fields of ``report`` using its ODS threshold."""
    t = report.ods["threshold"]
    results = []
    for pred, gt in zip(predictions, gt_layers):
        layers = mask_to_layers(binarize(_as_mask(pred, "prediction"), t), min_pixels, gt.meters_per_row)
        results.append(layer_mae(layers, gt))
    report.mae_overall = dataset_mae(results)
    report.per_image_mae = [r.overall for r in results]
    report.per_layer_mae = [r.per_layer for r in results]
    report.coverage = float(np.mean([r.coverage for r in results])) if results else None
    return report
