"""Segmentation quality metrics and their brute-force reference versions.

Region metrics (pri, voi, gce) run on label maps via contingency counts;
for binary saliency they are applied to the two-segment partition obtained
by thresholding. Each fast implementation has an independent oracle built
from the raw definition (all pixel pairs, explicit set operations, all-pairs
boundary distances) used by the verification suite on small masks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt

DEFAULT_BETA_SQ = 0.3
DEFAULT_THRESHOLD = 0.5


def binarize(pred: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    return (np.asarray(pred) >= threshold).astype(np.int64)


def _check_pair(pred, truth):
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"extent mismatch: {pred.shape} vs {truth.shape}")
    return pred, truth


# ---------------------------------------------------------------------------
# pixel-wise scores


def precision_recall(pred_bin: np.ndarray, truth: np.ndarray):
    """(precision, recall) with the empty-side conventions: an empty
    prediction has precision 1, an empty truth has recall 1."""
    pred_bin, truth = _check_pair(pred_bin, truth)
    tp = int(np.sum((pred_bin == 1) & (truth == 1)))
    fp = int(np.sum((pred_bin == 1) & (truth == 0)))
    fn = int(np.sum((pred_bin == 0) & (truth == 1)))
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    return precision, recall


def f_measure(pred: np.ndarray, truth: np.ndarray,
              threshold: float = DEFAULT_THRESHOLD,
              beta_sq: float = DEFAULT_BETA_SQ) -> float:
    """Weighted harmonic mean of precision and recall after thresholding.

    Both sides empty scores 1; exactly one side empty scores 0.
    """
    pred, truth = _check_pair(pred, truth)
    pb = binarize(pred, threshold)
    pred_empty, truth_empty = not pb.any(), not np.asarray(truth).any()
    if pred_empty and truth_empty:
        return 1.0
    if pred_empty or truth_empty:
        return 0.0
    p, r = precision_recall(pb, truth)
    denom = beta_sq * p + r
    return (1.0 + beta_sq) * p * r / denom if denom else 0.0


def mae(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = _check_pair(pred, truth)
    return float(np.mean(np.abs(pred.astype(np.float64) - truth)))


def iou(pred: np.ndarray, truth: np.ndarray,
        threshold: float = DEFAULT_THRESHOLD) -> float:
    pred, truth = _check_pair(pred, truth)
    pb = binarize(pred, threshold).astype(bool)
    tb = np.asarray(truth).astype(bool)
    union = np.sum(pb | tb)
    return float(np.sum(pb & tb) / union) if union else 1.0


def pr_curve(pred: np.ndarray, truth: np.ndarray, thresholds) -> list:
    """(precision, recall) per threshold; recall is non-increasing."""
    thresholds = list(thresholds)
    if any(t2 <= t1 for t1, t2 in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be strictly increasing")
    if thresholds and not (0.0 < thresholds[0] and thresholds[-1] < 1.0):
        raise ValueError("thresholds must lie in (0, 1)")
    return [precision_recall(binarize(pred, t), truth) for t in thresholds]


# ---------------------------------------------------------------------------
# region metrics on label maps


def _contingency(a: np.ndarray, b: np.ndarray):
    a, b = _check_pair(a, b)
    _, ai = np.unique(a.reshape(-1), return_inverse=True)
    _, bi = np.unique(b.reshape(-1), return_inverse=True)
    na, nb = ai.max() + 1, bi.max() + 1
    table = np.bincount(ai * nb + bi, minlength=na * nb).reshape(na, nb)
    return table, ai, bi


def pri(a: np.ndarray, b: np.ndarray) -> float:
    """Rand index: the fraction of unordered pixel pairs whose same-segment
    relation agrees between the two label maps. Runs on co-occurrence counts
    rather than pixel pairs."""
    table, _, _ = _contingency(a, b)
    n = int(table.sum())
    pairs = n * (n - 1) // 2
    if pairs == 0:
        return 1.0
    same_both = int((table * (table - 1) // 2).sum())
    rows = table.sum(axis=1)
    cols = table.sum(axis=0)
    same_a = int((rows * (rows - 1) // 2).sum())
    same_b = int((cols * (cols - 1) // 2).sum())
    agree = pairs + 2 * same_both - same_a - same_b
    return agree / pairs


def voi(a: np.ndarray, b: np.ndarray) -> float:
    """Variation of information H(a) + H(b) - 2 I(a;b), in nats."""
    table, _, _ = _contingency(a, b)
    n = table.sum()
    p = table / n
    pa = p.sum(axis=1)
    pb = p.sum(axis=0)

    def entropy(q):
        q = q[q > 0]
        return float(-(q * np.log(q)).sum())

    h_ab = entropy(p.reshape(-1))
    mutual = entropy(pa) + entropy(pb) - h_ab
    return entropy(pa) + entropy(pb) - 2.0 * mutual


def gce(a: np.ndarray, b: np.ndarray) -> float:
    """Global consistency error: per-pixel local refinement error
    |R_a(x) \\ R_b(x)| / |R_a(x)|, summed in the cheaper direction."""
    table, ai, bi = _contingency(a, b)
    n = ai.size
    rows = table.sum(axis=1).astype(np.float64)
    cols = table.sum(axis=0).astype(np.float64)
    joint = table[ai, bi].astype(np.float64)
    e_ab = (rows[ai] - joint) / rows[ai]
    e_ba = (cols[bi] - joint) / cols[bi]
    return float(min(e_ab.sum(), e_ba.sum()) / n)


# ---------------------------------------------------------------------------
# boundary metric


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Coordinates of mask pixels with a 4-neighbor of the opposite value
    (inner boundary; pixels at the image border count only via in-bounds
    neighbors)."""
    m = np.asarray(mask).astype(bool)
    edge = np.zeros_like(m)
    edge[1:, :] |= m[1:, :] & ~m[:-1, :]
    edge[:-1, :] |= m[:-1, :] & ~m[1:, :]
    edge[:, 1:] |= m[:, 1:] & ~m[:, :-1]
    edge[:, :-1] |= m[:, :-1] & ~m[:, 1:]
    return np.argwhere(edge)


def bde(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean nearest-boundary Euclidean distance, fast path via a
    distance transform."""
    a, b = _check_pair(a, b)
    pa, pb = boundary_pixels(a), boundary_pixels(b)
    if pa.size == 0 or pb.size == 0:
        raise ValueError("mask has no boundary (all zeros or all ones)")

    def mean_dist(points_from, points_to):
        grid = np.ones(a.shape, dtype=bool)
        grid[points_to[:, 0], points_to[:, 1]] = False
        dist = distance_transform_edt(grid)
        return float(dist[points_from[:, 0], points_from[:, 1]].mean())

    return 0.5 * (mean_dist(pa, pb) + mean_dist(pb, pa))


# ---------------------------------------------------------------------------
# brute-force oracles (small masks only)


def pri_pairwise(a: np.ndarray, b: np.ndarray) -> float:
    """Rand index straight from the definition: loop over all pixel pairs."""
    a, b = _check_pair(a, b)
    fa, fb = a.reshape(-1), b.reshape(-1)
    n = fa.size
    if n < 2:
        return 1.0
    agree = total = 0
    for i in range(n):
        for j in range(i + 1, n):
            total += 1
            if (fa[i] == fa[j]) == (fb[i] == fb[j]):
                agree += 1
    return agree / total


def voi_tablewise(a: np.ndarray, b: np.ndarray) -> float:
    """Variation of information from per-label dictionaries and math.log."""
    a, b = _check_pair(a, b)
    fa, fb = a.reshape(-1), b.reshape(-1)
    n = fa.size
    ca, cb, cab = {}, {}, {}
    for x, y in zip(fa.tolist(), fb.tolist()):
        ca[x] = ca.get(x, 0) + 1
        cb[y] = cb.get(y, 0) + 1
        cab[(x, y)] = cab.get((x, y), 0) + 1

    def entropy(counts):
        return -sum(c / n * math.log(c / n) for c in counts)

    h_a, h_b = entropy(ca.values()), entropy(cb.values())
    h_ab = entropy(cab.values())
    mutual = h_a + h_b - h_ab
    return h_a + h_b - 2.0 * mutual


def gce_setwise(a: np.ndarray, b: np.ndarray) -> float:
    """Global consistency error via explicit per-pixel region sets."""
    a, b = _check_pair(a, b)
    fa, fb = a.reshape(-1), b.reshape(-1)
    n = fa.size
    regions_a = {lab: set(np.flatnonzero(fa == lab).tolist()) for lab in set(fa.tolist())}
    regions_b = {lab: set(np.flatnonzero(fb == lab).tolist()) for lab in set(fb.tolist())}
    e_ab = e_ba = 0.0
    for x in range(n):
        ra, rb = regions_a[fa[x]], regions_b[fb[x]]
        e_ab += len(ra - rb) / len(ra)
        e_ba += len(rb - ra) / len(rb)
    return min(e_ab, e_ba) / n


def bde_allpairs(a: np.ndarray, b: np.ndarray) -> float:
    """Boundary displacement via explicit nearest-neighbor search."""
    pa, pb = boundary_pixels(a), boundary_pixels(b)
    if pa.size == 0 or pb.size == 0:
        raise ValueError("mask has no boundary (all zeros or all ones)")

    def mean_min(src, dst):
        total = 0.0
        for (i, j) in src:
            best = min(math.hypot(float(i - p), float(j - q)) for (p, q) in dst)
            total += best
        return total / len(src)

    return 0.5 * (mean_min(pa, pb) + mean_min(pb, pa))


# ---------------------------------------------------------------------------
# per-image reports


@dataclass
class MetricsReport:
    """Per-image metric rows plus aggregate means and a PR curve."""

    ids: list = field(default_factory=list)
    rows: list = field(default_factory=list)  # (f, mae, pri, voi, gce, bde)
    pr_points: list = field(default_factory=list)  # (threshold, precision, recall)

    def add(self, image_id: str, row):
        self.ids.append(image_id)
        self.rows.append(tuple(float(v) for v in row))

    @property
    def aggregate(self):
        if not self.rows:
            return (float("nan"),) * 6
        arr = np.asarray(self.rows)
        return tuple(arr.mean(axis=0))


def score_pair(pred: np.ndarray, truth: np.ndarray,
               threshold: float = DEFAULT_THRESHOLD,
               beta_sq: float = DEFAULT_BETA_SQ):
    """One report row for a saliency map against a binary mask. Region
    metrics see the two-segment thresholded partitions.

    When a side is degenerate (all-0 or all-1, hence no boundary), the row's
    bde falls back to 0 for identical maps and to the image diagonal
    otherwise, so reports over weak checkpoints stay total.
    """
    seg_pred = binarize(pred, threshold)
    seg_truth = np.asarray(truth).astype(np.int64)
    degenerate = (seg_pred.min() == seg_pred.max()) or (seg_truth.min() == seg_truth.max())
    if degenerate:
        bde_value = 0.0 if np.array_equal(seg_pred, seg_truth) else float(np.hypot(*pred.shape))
    else:
        bde_value = bde(seg_pred, seg_truth)
    return (
        f_measure(pred, truth, threshold, beta_sq),
        mae(pred, truth),
        pri(seg_pred, seg_truth),
        voi(seg_pred, seg_truth),
        gce(seg_pred, seg_truth),
        bde_value,
    )


def write_report(report: MetricsReport, path):
    lines = []
    for image_id, row in zip(report.ids, report.rows):
        lines.append(image_id + " " + " ".join(f"{v:.6f}" for v in row))
    lines.append("AGGREGATE " + " ".join(f"{v:.6f}" for v in report.aggregate))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_pr_csv(points, path):
    with open(path, "w") as fh:
        fh.write("threshold,precision,recall\n")
        for t, p, r in points:
            fh.write(f"{t:.6f},{p:.6f},{r:.6f}\n")
