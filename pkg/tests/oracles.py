"""Independent brute-force oracles used to pin expected values.

Everything here is plain Python loops over lists plus the math module;
nothing is shared with the package implementations under test.
"""

import math


def oracle_info_nce_queue(q, k, queue, tau, include_positive=True):
    """q, k: B x d lists; queue: Q x d list. Mean of per-row -log softmax."""
    losses = []
    for qi, ki in zip(q, k):
        pos = sum(a * b for a, b in zip(qi, ki)) / tau
        negs = [sum(a * b for a, b in zip(qi, nj)) / tau for nj in queue]
        if include_positive:
            denom = math.exp(pos) + sum(math.exp(n) for n in negs)
        else:
            denom = sum(math.exp(n) for n in negs)
        losses.append(-math.log(math.exp(pos) / denom))
    return sum(losses) / len(losses)


def oracle_info_nce_batch(reps, pairing, tau, include_positive=True):
    """reps: 2B x d list; pairing[i] = index of i's positive."""
    n = len(reps)
    losses = []
    for i in range(n):
        pos = sum(a * b for a, b in zip(reps[i], reps[pairing[i]])) / tau
        denom = 0.0
        for j in range(n):
            if j == i:
                continue
            if not include_positive and j == pairing[i]:
                continue
            denom += math.exp(sum(a * b for a, b in zip(reps[i], reps[j])) / tau)
        losses.append(-(pos - math.log(denom)))
    return sum(losses) / n


def oracle_recon(x, x_hat):
    flat_x = _flatten(x)
    flat_h = _flatten(x_hat)
    return sum((a - b) ** 2 for a, b in zip(flat_x, flat_h)) / len(flat_x)


def _flatten(nested):
    if isinstance(nested, (int, float)):
        return [float(nested)]
    out = []
    for item in nested:
        out.extend(_flatten(item))
    return out


def oracle_min_max(vec):
    lo, hi = min(vec), max(vec)
    if hi == lo:
        return [0.0 for _ in vec]
    return [(v - lo) / (hi - lo) for v in vec]


def oracle_dispersion(matrix):
    """Per-column total squared deviation of the L2-normalized column."""
    rows, cols = len(matrix), len(matrix[0])
    out = []
    for j in range(cols):
        col = [matrix[i][j] for i in range(rows)]
        norm = math.sqrt(sum(v * v for v in col))
        if norm == 0:
            out.append(0.0)
            continue
        w = [v / norm for v in col]
        mean = sum(w) / rows
        out.append(sum((v - mean) ** 2 for v in w))
    return out


def oracle_momentum(key, query, m):
    return [m * a + (1 - m) * b for a, b in zip(key, query)]


def oracle_retrieval(feats, labels):
    """Leave-one-out cosine retrieval: (rank1, rank5, mAP) in percent."""
    n = len(feats)
    normed = []
    for f in feats:
        norm = math.sqrt(sum(v * v for v in f)) or 1.0
        normed.append([v / norm for v in f])
    r1, r5, aps = [], [], []
    for i in range(n):
        sims = []
        for j in range(n):
            if j == i:
                continue
            sims.append((sum(a * b for a, b in zip(normed[i], normed[j])), -j, j))
        sims.sort(reverse=True)
        ranked = [labels[j] == labels[i] for _, _, j in sims]
        if not any(ranked):
            continue
        r1.append(1.0 if any(ranked[:1]) else 0.0)
        r5.append(1.0 if any(ranked[:5]) else 0.0)
        hits, precisions = 0, []
        for pos, rel in enumerate(ranked, start=1):
            if rel:
                hits += 1
                precisions.append(hits / pos)
        aps.append(sum(precisions) / len(precisions))
    return (100 * sum(r1) / len(r1), 100 * sum(r5) / len(r5), 100 * sum(aps) / len(aps))
