"""Independent oracles used by the tests.

Everything here is deliberately written as plain loops against the rule
definitions, not shared with (or imported from) the implementation under
test. Where bit-equality with the implementation is asserted, the atomic
float operations (divisions of integer counts, subtractions, ordered
sums) are performed in the same order the contract freezes.
"""

from __future__ import annotations

import numpy as np


def naive_matmul(a, b):
    """Triple-loop matrix product."""
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += float(a[i, t]) * float(b[t, j])
            out[i, j] = s
    return out


def naive_conv1d_same(x, kernels, bias):
    """Direct summation with explicit zero padding."""
    t_len, cin = x.shape
    k, cin2, cout = kernels.shape
    assert cin == cin2
    half = (k - 1) // 2
    out = np.zeros((t_len, cout), dtype=np.float64)
    for t in range(t_len):
        for o in range(cout):
            s = float(bias[o])
            for d in range(k):
                src = t + d - half
                if 0 <= src < t_len:
                    for i in range(cin):
                        s += float(x[src, i]) * float(kernels[d, i, o])
            out[t, o] = s
    return out


def column_max_scan(x):
    """Per-column maximum via an explicit scan."""
    t_len, c = x.shape
    out = np.empty(c, dtype=x.dtype)
    for j in range(c):
        best = x[0, j]
        for t in range(1, t_len):
            if x[t, j] > best:
                best = x[t, j]
        out[j] = best
    return out


def softmax_float64(logits):
    """Extended-precision softmax reference."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


# ---------------------------------------------------------------------------
# Exhaustive spotting-metric oracle.
# Predictions are (match_id, seconds, label, confidence) tuples.


def oracle_rank(preds):
    return sorted(preds, key=lambda p: (-p[3], p[0], p[1]))


def oracle_tp_flags(preds, gts, delta, label):
    """Re-derive the matching by scanning every ground truth for every
    prediction: highest-confidence first, closest unmatched spot within
    delta wins, each spot consumed once."""
    gt_list = [(g[0], g[1]) for g in gts if g[2] == label]
    order = sorted(range(len(gt_list)), key=lambda i: (gt_list[i][0], gt_list[i][1]))
    taken = set()
    flags = []
    for p in oracle_rank([p for p in preds if p[2] == label]):
        best_i, best_dist = None, None
        for i in order:
            if i in taken:
                continue
            gm, gs = gt_list[i]
            if gm != p[0]:
                continue
            dist = abs(p[1] - gs)
            if dist <= delta and (best_dist is None or dist < best_dist):
                best_i, best_dist = i, dist
        if best_i is None:
            flags.append(False)
        else:
            taken.add(best_i)
            flags.append(True)
    return flags, len(gt_list)


def oracle_ap(preds, gts, delta, label):
    """Exact area under the stepwise PR curve, envelope by explicit
    suffix-max scans."""
    flags, n_gt = oracle_tp_flags(preds, gts, delta, label)
    if n_gt == 0:
        return 0.0
    precisions = []
    tp = 0
    for i, f in enumerate(flags):
        if f:
            tp += 1
        precisions.append(tp / (i + 1))
    area = 0.0
    tp = 0
    prev_recall = 0.0
    for i, f in enumerate(flags):
        if not f:
            continue
        tp += 1
        recall = tp / n_gt
        best = precisions[i]
        for j in range(i + 1, len(precisions)):
            if precisions[j] > best:
                best = precisions[j]
        area += (recall - prev_recall) * best
        prev_recall = recall
    return area


def oracle_map(preds, gts, delta, num_classes):
    total = 0.0
    for label in range(num_classes):
        total += oracle_ap(preds, gts, delta, label)
    return total / num_classes


def oracle_average_map(preds, gts, deltas, num_classes):
    curve = [oracle_map(preds, gts, d, num_classes) for d in deltas]
    area = 0.0
    for i in range(len(deltas) - 1):
        area += (deltas[i + 1] - deltas[i]) * (curve[i] + curve[i + 1]) * 0.5
    return area / (deltas[-1] - deltas[0])


def ks_distance_to_offset_lattice(offsets, clip_len):
    """KS distance between empirical offsets and their construction
    distribution: the discrete uniform over {0, 1/L, ..., (L-1)/L}."""
    offsets = np.sort(np.asarray(offsets, dtype=np.float64))
    n = len(offsets)
    worst = 0.0
    for i in range(clip_len):
        x = i / clip_len
        emp = np.searchsorted(offsets, x, side="right") / n
        ideal = (i + 1) / clip_len
        worst = max(worst, abs(emp - ideal))
    return worst
