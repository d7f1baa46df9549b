"""Walk through the three training losses on a toy two-target frame.

Shows how the soft-IoU factor damps the focal term when the global overlap
is already good, and prints analytic-vs-numeric gradient agreement.

Run: python demos/loss_landscape.py
"""

import numpy as np

from tinyship.losses import focal_iou_loss, focal_loss, soft_iou_loss


def main():
    rng = np.random.default_rng(0)
    y = np.zeros((8, 8))
    y[2:4, 2:4] = 1.0
    y[5:7, 5:6] = 1.0

    print("=== loss values as the prediction sharpens ===")
    print(f"{'blend':>6} {'focal':>10} {'softiou':>10} {'focaliou':>10} {'S':>8}")
    for alpha in np.linspace(0.0, 1.0, 11):
        # blend from a uniform 0.5 map toward the ground truth
        p = np.clip(0.5 * (1 - alpha) + y * alpha, 1e-6, 1 - 1e-6)
        fl = focal_loss(p, y).value
        si = soft_iou_loss(p, y).value
        fi = focal_iou_loss(p, y)
        print(f"{alpha:6.2f} {fl:10.5f} {si:10.5f} {fi.value:10.5f} "
              f"{fi.soft_iou:8.4f}")

    print()
    print("=== gradient sanity: analytic vs central differences ===")
    p = rng.uniform(0.2, 0.8, (8, 8))
    x = np.log(p / (1 - p))
    out = focal_iou_loss(p, y)
    eps = 1e-6
    worst = 0.0
    for idx in [(0, 0), (2, 2), (5, 5), (7, 7)]:
        xp = x.copy()
        xp[idx] += eps
        xm = x.copy()
        xm[idx] -= eps
        s = out.soft_iou  # frozen, matching the default gradient mode
        e = (1 + s) / 2

        def val(xv):
            pv = 1 / (1 + np.exp(-xv))
            return 2 * (1 - s) * focal_loss(pv, y).value ** e

        num = (val(xp) - val(xm)) / (2 * eps)
        err = abs(out.grad_logits[idx] - num)
        worst = max(worst, err)
        print(f"  pixel {idx}: analytic {out.grad_logits[idx]:+.6f} "
              f"numeric {num:+.6f} |diff| {err:.2e}")
    print(f"worst abs diff: {worst:.2e}")


if __name__ == "__main__":
    main()
