"""Detection-level evaluation: Pd, Fa, IoU, centroid matching, ROC sweeps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .postprocess import TargetRegion, cluster8, threshold

DEFAULT_MATCH_RADIUS = 3.0  # centroid deviation limit, pixels


class MetricsError(ValueError):
    pass


@dataclass
class MatchResult:
    pairs: list  # (gt_region, pred_region, distance)
    unmatched_gt: list
    unmatched_pred: list


@dataclass
class DetectionReport:
    pd: float
    fa: float
    iou: float
    t_correct: int
    t_all: int
    p_false: int
    p_all: int
    inter: int
    union: int
    d_thresh: float

    def to_json_dict(self) -> dict:
        return {"pd": self.pd, "fa": self.fa, "iou": self.iou,
                "t_correct": self.t_correct, "t_all": self.t_all,
                "p_false": self.p_false, "p_all": self.p_all,
                "inter": self.inter, "union": self.union,
                "d_thresh": self.d_thresh}


@dataclass
class RocCurve:
    taus: list = field(default_factory=list)
    pd: list = field(default_factory=list)
    fa: list = field(default_factory=list)

    def rows(self):
        return list(zip(self.taus, self.pd, self.fa))

    def to_csv(self) -> str:
        lines = ["tau,pd,fa"]
        for t, p, f in self.rows():
            lines.append(f"{t:.9g},{p:.9g},{f:.9g}")
        return "\n".join(lines) + "\n"

    def projections(self) -> dict[str, str]:
        """The three 2-d projections as CSV texts."""
        def csv(header, cols):
            lines = [header]
            for vals in zip(*cols):
                lines.append(",".join(f"{v:.9g}" for v in vals))
            return "\n".join(lines) + "\n"
        return {"fa_pd": csv("fa,pd", (self.fa, self.pd)),
                "tau_pd": csv("tau,pd", (self.taus, self.pd)),
                "tau_fa": csv("tau,fa", (self.taus, self.fa))}


def match_centroids(gt: list[TargetRegion], pred: list[TargetRegion],
                    d_thresh: float = DEFAULT_MATCH_RADIUS) -> MatchResult:
    """Greedy one-to-one matching in ascending Euclidean centroid distance."""
    if d_thresh <= 0:
        raise MetricsError("d_thresh must be positive")
    cand = []
    for gi, g in enumerate(gt):
        for pi, p in enumerate(pred):
            d = float(np.hypot(g.centroid[0] - p.centroid[0],
                               g.centroid[1] - p.centroid[1]))
            if d <= d_thresh:
                cand.append((d, gi, pi))
    cand.sort()
    used_g: set[int] = set()
    used_p: set[int] = set()
    pairs = []
    for d, gi, pi in cand:
        if gi in used_g or pi in used_p:
            continue
        used_g.add(gi)
        used_p.add(pi)
        pairs.append((gt[gi], pred[pi], d))
    return MatchResult(
        pairs=pairs,
        unmatched_gt=[g for i, g in enumerate(gt) if i not in used_g],
        unmatched_pred=[p for i, p in enumerate(pred) if i not in used_p])


def compute_report(gt_mask: np.ndarray, pred_mask: np.ndarray,
                   matches: MatchResult,
                   d_thresh: float = DEFAULT_MATCH_RADIUS) -> DetectionReport:
    """Pd over matched targets, Fa over unmatched-prediction pixels, mask IoU.

    Pixels of matched predictions that fall outside the truth shape count
    against IoU only, not Fa.
    """
    gt_mask = np.asarray(gt_mask, dtype=bool)
    pred_mask = np.asarray(pred_mask, dtype=bool)
    if gt_mask.shape != pred_mask.shape:
        raise MetricsError("mask shapes differ")
    t_all = len(matches.pairs) + len(matches.unmatched_gt)
    if t_all == 0:
        raise MetricsError("no ground-truth targets: Pd is undefined")
    t_correct = len(matches.pairs)
    p_false = sum(r.area for r in matches.unmatched_pred)
    p_all = gt_mask.size
    inter = int(np.logical_and(gt_mask, pred_mask).sum())
    union = int(np.logical_or(gt_mask, pred_mask).sum())
    return DetectionReport(
        pd=t_correct / t_all,
        fa=p_false / p_all,
        iou=inter / union if union else 1.0,
        t_correct=t_correct, t_all=t_all,
        p_false=p_false, p_all=p_all,
        inter=inter, union=union,
        d_thresh=d_thresh)


def evaluate_masks(gt_mask: np.ndarray, pred_mask: np.ndarray,
                   d_thresh: float = DEFAULT_MATCH_RADIUS) -> DetectionReport:
    gt_regions = cluster8(gt_mask)
    pred_regions = cluster8(pred_mask)
    matches = match_centroids(gt_regions, pred_regions, d_thresh)
    return compute_report(gt_mask, pred_mask, matches, d_thresh)


def default_tau_grid(n: int = 101) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def roc_sweep(prob: np.ndarray, gt_mask: np.ndarray,
              taus=None, d_thresh: float = DEFAULT_MATCH_RADIUS) -> RocCurve:
    """Threshold, cluster and match at each tau; Pd/Fa shrink as tau grows."""
    if taus is None:
        taus = default_tau_grid()
    taus = [float(t) for t in taus]
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise MetricsError("taus must be strictly increasing")
    if taus and (taus[0] < 0 or taus[-1] > 1):
        raise MetricsError("taus must lie in [0, 1]")
    curve = RocCurve()
    for tau in taus:
        rep = evaluate_masks(gt_mask, threshold(prob, tau), d_thresh)
        curve.taus.append(tau)
        curve.pd.append(rep.pd)
        curve.fa.append(rep.fa)
    return curve


def roc_sweep_multi(probs: list[np.ndarray], gt_masks: list[np.ndarray],
                    taus=None, d_thresh: float = DEFAULT_MATCH_RADIUS) -> RocCurve:
    """ROC over a set of images, pooling target and pixel counts per tau."""
    if taus is None:
        taus = default_tau_grid()
    taus = [float(t) for t in taus]
    curve = RocCurve()
    for tau in taus:
        t_correct = t_all = p_false = p_all = 0
        for prob, gt in zip(probs, gt_masks):
            rep = evaluate_masks(gt, threshold(prob, tau), d_thresh)
            t_correct += rep.t_correct
            t_all += rep.t_all
            p_false += rep.p_false
            p_all += rep.p_all
        curve.taus.append(tau)
        curve.pd.append(t_correct / t_all)
        curve.fa.append(p_false / p_all)
    return curve
