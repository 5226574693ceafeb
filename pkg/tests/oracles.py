"""Scalar reference implementations used as independent oracles.

Plain Python floats and loops only; nothing here imports the package.
"""

import math


def dot(u, v):
    return sum(a * b for a, b in zip(u, v))


def hyperbolic_distance(u, v, c):
    """Ball distance through the arccosh form, not through Mobius addition."""
    diff = sum((a - b) ** 2 for a, b in zip(u, v))
    denom = (1 - c * dot(u, u)) * (1 - c * dot(v, v))
    return math.acosh(1 + 2 * c * diff / denom) / math.sqrt(c)


def euclidean_distance(u, v):
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(u, v)))


def softmin(ds, gamma):
    w = [math.exp(-d / gamma) for d in ds]
    return -sum(wi * d for wi, d in zip(w, ds)) / sum(w)


def margin_loss(sims, label, lam, delta):
    """``-log(f+ / (f+ + sum f-))`` term by term."""
    pos = math.exp(lam * (sims[label] - delta))
    neg = sum(math.exp(lam * s) for j, s in enumerate(sims) if j != label)
    return -math.log(pos / (pos + neg))


def hyphc(d_ab, d_ac, d_bc, gamma_hyp):
    ds = [d_ab, d_ac, d_bc]
    s = [math.exp(-d) for d in ds]
    w = [math.exp(d / gamma_hyp) for d in ds]
    return sum(s) - sum(si * wi for si, wi in zip(s, w)) / sum(w)


def nearest_order(dist_row, q):
    """Indices sorted by (distance, index), query removed."""
    return sorted((j for j in range(len(dist_row)) if j != q), key=lambda j: (dist_row[j], j))


def recall_at_k(dist, labels, ks):
    n = len(labels)
    out = {}
    for k in ks:
        hits = 0
        for q in range(n):
            order = nearest_order(dist[q], q)
            if any(labels[j] == labels[q] for j in order[:k]):
                hits += 1
        out[k] = hits / n
    return out


def map_at_r(dist, labels):
    n = len(labels)
    aps = []
    for q in range(n):
        R = sum(1 for j in range(n) if j != q and labels[j] == labels[q])
        if R == 0:
            continue
        order = nearest_order(dist[q], q)
        terms, found = [], 0
        for i in range(R):
            if labels[order[i]] == labels[q]:
                found += 1
                terms.append(found / (i + 1))
        aps.append(math.fsum(terms) / R)
    return math.fsum(aps) / len(aps)


def distance_table(points, space, c=None):
    n = len(points)
    f = (lambda u, v: euclidean_distance(u, v)) if space == "E" else (lambda u, v: hyperbolic_distance(u, v, c))
    return [[0.0 if i == j else f(points[i], points[j]) for j in range(n)] for i in range(n)]
