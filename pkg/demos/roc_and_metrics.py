"""Detection metrics and the ROC sweep on degraded probability maps.

Builds maps at several corruption levels from known ground truth, reports
Pd / Fa / IoU per level, and prints a pooled ROC table over the tau grid.

Run: python demos/roc_and_metrics.py
"""

import numpy as np

from tinyship.data import synth_scenes
from tinyship.metrics import (default_tau_grid, evaluate_masks,
                              roc_sweep_multi)
from tinyship.postprocess import adaptive_threshold, threshold


def degraded_map(mask, miss_rate, stray_count, rng):
    prob = mask.astype(float) * rng.uniform(0.6, 1.0)
    drop = rng.random(mask.shape) < miss_rate
    prob[mask & drop] = 0.0
    for _ in range(stray_count):
        r, c = rng.integers(0, mask.shape[0], 2)
        prob[r, c] = max(prob[r, c], rng.uniform(0.3, 0.7))
    return prob


def main():
    scenes = synth_scenes(8, 64, seed=3)
    rng = np.random.default_rng(0)

    print("=== fixed tau = 0.5 at increasing corruption ===")
    print(f"{'miss':>5} {'stray':>6} {'Pd':>7} {'Fa':>10} {'IoU':>7}")
    for miss, stray in [(0.0, 0), (0.1, 2), (0.3, 5), (0.6, 10)]:
        probs = [degraded_map(sc.mask, miss, stray, rng) for sc in scenes]
        t_c = t_a = p_f = p_a = inter = union = 0
        for sc, prob in zip(scenes, probs):
            rep = evaluate_masks(sc.mask, threshold(prob, 0.5))
            t_c += rep.t_correct
            t_a += rep.t_all
            p_f += rep.p_false
            p_a += rep.p_all
            inter += rep.inter
            union += rep.union
        print(f"{miss:5.1f} {stray:6d} {t_c / t_a:7.3f} {p_f / p_a:10.2e} "
              f"{inter / union:7.3f}")

    print("\n=== pooled ROC over the tau grid (lightly degraded maps) ===")
    probs = [degraded_map(sc.mask, 0.15, 3, rng) for sc in scenes]
    gts = [sc.mask for sc in scenes]
    curve = roc_sweep_multi(probs, gts, default_tau_grid(11))
    print("tau     Pd      Fa")
    for tau, pd, fa in curve.rows():
        print(f"{tau:4.2f} {pd:7.3f} {fa:9.2e}")

    tau_star = adaptive_threshold(probs[0])
    driver = ("max-driven" if tau_star >= 0.7 * probs[0].max() - 1e-12
              else "statistics-driven")
    print(f"\nadaptive threshold for scene 0: {tau_star:.4f} ({driver})")


if __name__ == "__main__":
    main()
