"""Clustering and region-detection evaluation.

Cluster labels are matched to ground-truth classes with the Hungarian
algorithm before scoring, so every metric here is invariant to relabeling of
the predicted clusters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .raster import connected_components
from .validation import check_binary_mask, check_same_shape


class NonFiniteCostError(ValueError):
    pass


@dataclass
class ClusteringReport:
    nmi: float
    ari: float
    f1: float
    mapping: dict
    confusion: np.ndarray
    cluster_ids: list
    class_ids: list


@dataclass
class DetectionReport:
    fpr: float
    fnr: float
    matches: list = field(default_factory=list)


def hungarian_match(cost) -> np.ndarray:
    """Minimum-total-cost perfect assignment of a square cost matrix.

    Returns the assigned column for each row.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1] or cost.shape[0] == 0:
        raise ValueError(f"cost must be a non-empty square matrix, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise NonFiniteCostError("cost matrix contains non-finite entries")
    rows, cols = linear_sum_assignment(cost)
    assignment = np.empty(cost.shape[0], dtype=np.int64)
    assignment[rows] = cols
    return assignment


def _contingency(labels_true, labels_pred):
    labels_true = np.asarray(labels_true)
    labels_pred = np.asarray(labels_pred)
    if labels_true.shape != labels_pred.shape or labels_true.ndim != 1:
        raise ValueError("labelings must be equal-length 1-D sequences")
    classes, t_idx = np.unique(labels_true, return_inverse=True)
    clusters, p_idx = np.unique(labels_pred, return_inverse=True)
    table = np.zeros((len(classes), len(clusters)), dtype=np.int64)
    np.add.at(table, (t_idx, p_idx), 1)
    return table, classes, clusters


def nmi(labels_true, labels_pred) -> float:
    """Mutual information normalized by the arithmetic mean of entropies.

    Returns 0 when either partition is constant (zero entropy), including the
    case where both are.
    """
    table, _, _ = _contingency(labels_true, labels_pred)
    n = table.sum()
    if n < 1:
        raise ValueError("labelings must be non-empty")
    pt = table.sum(axis=1) / n
    pp = table.sum(axis=0) / n
    h_true = -np.sum(pt * np.log(pt, where=pt > 0, out=np.zeros_like(pt)))
    h_pred = -np.sum(pp * np.log(pp, where=pp > 0, out=np.zeros_like(pp)))
    if h_true <= 0.0 or h_pred <= 0.0:
        return 0.0
    joint = table / n
    outer = pt[:, None] * pp[None, :]
    nz = joint > 0
    mi = float(np.sum(joint[nz] * np.log(joint[nz] / outer[nz])))
    return mi / ((h_true + h_pred) / 2.0)


def ari(labels_true, labels_pred) -> float:
    """Pair-counting rand index adjusted for chance; 1 for identical partitions."""
    table, _, _ = _contingency(labels_true, labels_pred)
    n = int(table.sum())
    if n < 2:
        raise ValueError("ARI needs at least 2 samples")

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_cells = comb2(table.astype(np.float64)).sum()
    sum_rows = comb2(table.sum(axis=1).astype(np.float64)).sum()
    sum_cols = comb2(table.sum(axis=0).astype(np.float64)).sum()
    total = comb2(float(n))
    expected = sum_rows * sum_cols / total
    maximum = (sum_rows + sum_cols) / 2.0
    if maximum == expected:
        return 1.0
    return (sum_cells - expected) / (maximum - expected)


def matched_f1(labels_true, labels_pred, average: str = "macro"):
    """F1 after Hungarian-matching clusters to classes by overlap.

    "macro" (default) averages per-class F1 over the true classes, counting
    unmatched classes as 0. "micro" is post-matching accuracy.
    Returns (f1, mapping) with mapping from predicted cluster id to class id.
    """
    if average not in ("macro", "micro"):
        raise ValueError(f"average must be 'macro' or 'micro', got {average!r}")
    table, classes, clusters = _contingency(labels_true, labels_pred)
    n_classes, n_clusters = table.shape
    size = max(n_classes, n_clusters)
    overlap = np.zeros((size, size), dtype=np.float64)
    overlap[:n_classes, :n_clusters] = table
    # maximize total overlap; a sub-integer pairwise-F1 term resolves overlap
    # ties toward the higher F1 so the result is relabel-invariant
    sizes_sum = overlap.sum(axis=1, keepdims=True) + overlap.sum(axis=0, keepdims=True)
    pair_f1 = np.divide(2.0 * overlap, sizes_sum, out=np.zeros_like(overlap),
                        where=sizes_sum > 0)
    assignment = hungarian_match(-(overlap + pair_f1 * (0.5 / size)))
    cluster_for_class = {row: int(assignment[row]) for row in range(n_classes)
                         if assignment[row] < n_clusters}
    mapping = {clusters[col]: classes[row] for row, col in cluster_for_class.items()
               if table[row, col] > 0}

    n = table.sum()
    if average == "micro":
        hit = sum(table[row, col] for row, col in cluster_for_class.items())
        return float(hit / n), mapping

    class_sizes = table.sum(axis=1)
    cluster_sizes = table.sum(axis=0)
    scores = []
    for row in range(n_classes):
        col = cluster_for_class.get(row)
        if col is None or table[row, col] == 0:
            scores.append(0.0)
            continue
        hit = table[row, col]
        precision = hit / cluster_sizes[col]
        recall = hit / class_sizes[row]
        scores.append(2.0 * precision * recall / (precision + recall))
    return float(np.mean(scores)), mapping


def clustering_report(labels_true, labels_pred) -> ClusteringReport:
    """Bundle NMI, ARI, and matched F1 with the confusion table."""
    table, classes, clusters = _contingency(labels_true, labels_pred)
    f1, mapping = matched_f1(labels_true, labels_pred)
    return ClusteringReport(
        nmi=nmi(labels_true, labels_pred),
        ari=ari(labels_true, labels_pred),
        f1=f1,
        mapping=mapping,
        confusion=table,
        cluster_ids=list(clusters),
        class_ids=list(classes),
    )


def box_iou(a, b) -> float:
    """IoU of two (min_x, min_y, max_x, max_y) boxes with inclusive bounds."""
    ix = min(a[2], b[2]) - max(a[0], b[0]) + 1
    iy = min(a[3], b[3]) - max(a[1], b[1]) + 1
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    area_a = (a[2] - a[0] + 1) * (a[3] - a[1] + 1)
    area_b = (b[2] - b[0] + 1) * (b[3] - b[1] + 1)
    return inter / (area_a + area_b - inter)


def detection_rates(gt_masks, pred_masks, iou_threshold: float = 0.1,
                    connectivity: int = 8) -> DetectionReport:
    """Region-level detection rates under a strict box-IoU criterion.

    A ground-truth region counts as detected when some predicted region's
    bounding box exceeds the IoU threshold. Per-image FNR (over images that
    have ground-truth regions) and per-image FPR (0 when nothing was
    predicted) are averaged over the corpus.
    """
    gt_masks, pred_masks = list(gt_masks), list(pred_masks)
    if len(gt_masks) != len(pred_masks):
        raise ValueError("gt_masks and pred_masks must be paired sequences")
    fnr_terms, fpr_terms, matches = [], [], []
    for index, (gt, pred) in enumerate(zip(gt_masks, pred_masks)):
        gt = check_binary_mask(gt)
        pred = check_binary_mask(pred)
        check_same_shape(gt, pred)
        gt_boxes = connected_components(gt, connectivity).boxes
        pred_boxes = connected_components(pred, connectivity).boxes
        pred_hit = np.zeros(len(pred_boxes), dtype=bool)
        detected = 0
        for g_idx, g_box in enumerate(gt_boxes):
            best_iou, best_p = 0.0, -1
            for p_idx, p_box in enumerate(pred_boxes):
                iou = box_iou(g_box, p_box)
                if iou > best_iou:
                    best_iou, best_p = iou, p_idx
                if iou > iou_threshold:
                    pred_hit[p_idx] = True
            if best_iou > iou_threshold:
                detected += 1
                matches.append({"image": index, "gt_region": int(g_idx),
                                "pred_region": int(best_p), "iou": float(best_iou)})
        if len(gt_boxes):
            fnr_terms.append((len(gt_boxes) - detected) / len(gt_boxes))
        fpr_terms.append(float((~pred_hit).sum() / len(pred_boxes)) if len(pred_boxes) else 0.0)
    return DetectionReport(
        fpr=float(np.mean(fpr_terms)) if fpr_terms else 0.0,
        fnr=float(np.mean(fnr_terms)) if fnr_terms else 0.0,
        matches=matches,
    )
