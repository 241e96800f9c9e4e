"""Independent reference values, computed with plain Python arithmetic.

The printed numbers are frozen into the C++ tests. Nothing here imports the
library; every quantity is computed from its textbook definition.
"""
import math


def cosine(u, v):
    dot = sum(a * b for a, b in zip(u, v))
    return dot / max(math.sqrt(sum(a * a for a in u)) * math.sqrt(sum(b * b for b in v)), 1e-12)


def info_nce(z, video, tau):
    # Every frame is an anchor, every other frame of its video is a positive,
    # every other frame of the batch is in the denominator.
    terms = []
    n = len(z)
    for a in range(n):
        denom = sum(math.exp(cosine(z[a], z[k]) / tau) for k in range(n) if k != a)
        for p in range(n):
            if p != a and video[p] == video[a]:
                terms.append(-math.log(math.exp(cosine(z[a], z[p]) / tau) / denom))
    return sum(terms) / len(terms)


def iou(a, b):
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    area = lambda r: (r[2] - r[0]) * (r[3] - r[1])
    return inter / (area(a) + area(b) - inter)


def ap_from_flags(flags, num_truths):
    # Enumerate PR points, take the right-to-left precision envelope, sum
    # precision times recall increments.
    points = []
    tp = 0
    for i, hit in enumerate(flags):
        tp += hit
        points.append((tp / num_truths, tp / (i + 1)))
    ap = 0.0
    prev_recall = 0.0
    for i, (r, _) in enumerate(points):
        envelope = max(p for _, p in points[i:])
        ap += (r - prev_recall) * envelope
        prev_recall = r
    return ap


def smooth_l1(d):
    return 0.5 * d * d if abs(d) < 1.0 else abs(d) - 0.5


def one_cell_detection_loss():
    # One 8x8 image, cell size 8, one truth [1,2,7,6] of class 0.
    logits = [0.5, 2.0, -1.0, 0.3]  # background, circle, rectangle, triangle
    label = 1
    ce = math.log(sum(math.exp(v) for v in logits)) - logits[label]
    box = (1.0, 2.0, 7.0, 6.0)
    cx, cy = (box[0] + box[2]) / 2, (box[1] + box[3]) / 2
    target = [(cx - 4.0) / 8.0, (cy - 4.0) / 8.0, math.log((box[2] - box[0]) / 8.0),
              math.log((box[3] - box[1]) / 8.0)]
    pred = [0.1, -0.2, 0.3, 0.0]
    reg = sum(smooth_l1(p - t) for p, t in zip(pred, target))
    return ce, reg


if __name__ == "__main__":
    z = [(1.0, 0.0), (1.0, 0.0), (0.0, 1.0), (0.0, 1.0)]
    print("info_nce_two_videos_tau_0.1 = %.17g" % info_nce(z, [0, 0, 1, 1], 0.1))
    print("cosine_(1,0)_(1,1) = %.17g" % cosine((1.0, 0.0), (1.0, 1.0)))
    print("iou_[0,0,2,2]_[1,1,3,3] = %.17g" % iou((0, 0, 2, 2), (1, 1, 3, 3)))
    print("ap_tp_fp_tp_two_truths = %.17g" % ap_from_flags([1, 0, 1], 2))
    print("total_loss_1_2_3_w0.005 = %.17g" % (1.0 + 2.0 + 0.005 * 3.0))
    ce, reg = one_cell_detection_loss()
    print("one_cell_classification = %.17g" % ce)
    print("one_cell_regression = %.17g" % reg)
