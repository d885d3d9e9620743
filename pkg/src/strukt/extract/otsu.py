"""Histogram thresholding by maximal between-class variance."""

from fractions import Fraction
import heapq

import numpy as np
from scipy import ndimage

from ..products import Partition, pixel_edge_pairs, relabel_canonical

_FOUR = ndimage.generate_binary_structure(2, 1)


def channel_histogram(values, bins):
    """Counts of ``values`` in ``bins`` equal-width bins over [0, 1].

    Returns ``(counts, bin_index)`` where ``bin_index`` has the shape of
    ``values``. Samples at exactly 1.0 fall into the last bin.
    """
    idx = np.floor(np.asarray(values, dtype=np.float64) * bins).astype(np.int64)
    np.clip(idx, 0, bins - 1, out=idx)
    counts = np.bincount(idx.ravel(), minlength=bins)
    return counts, idx


def best_threshold(counts):
    """Threshold index ``t`` in ``[1, bins-1]`` maximizing between-class variance.

    Classes are bins ``< t`` and ``>= t``; intensities are bin centres.
    Comparison is done in exact integer arithmetic so ties resolve to the
    smallest ``t`` regardless of summation order. Returns ``(t, variance)``
    with ``variance`` a :class:`~fractions.Fraction`; ``t`` is ``None`` when
    every threshold leaves one class empty or gives zero separation.
    """
    counts = [int(c) for c in counts]
    bins = len(counts)
    total = sum(counts)
    total_moment = sum(i * c for i, c in enumerate(counts))
    best_t, best_num, best_den = None, 0, 1
    n0 = s0 = 0
    for t in range(1, bins):
        n0 += counts[t - 1]
        s0 += (t - 1) * counts[t - 1]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        s1 = total_moment - s0
        num = (n1 * s0 - n0 * s1) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    if best_t is None:
        return None, Fraction(0)
    # (mu0 - mu1) in intensity units is the index difference divided by bins
    return best_t, Fraction(best_num, best_den * total * total * bins * bins)


def _components(mask):
    lab0, n0 = ndimage.label(~mask, structure=_FOUR)
    lab1, _ = ndimage.label(mask, structure=_FOUR)
    return np.where(mask, lab1 + n0, lab0) - 1


def absorb_small(labels, min_region):
    """Merge regions smaller than ``min_region`` into their neighbours.

    The smallest offending region (ties: smallest id) is absorbed by the
    neighbour sharing the longest boundary (ties: smallest id), repeatedly,
    until no region is below ``min_region`` or one region remains.
    """
    labels = relabel_canonical(Partition(labels)).labels.astype(np.int64)
    if min_region <= 1:
        return labels
    n = int(labels.max()) + 1
    sizes = np.bincount(labels.ravel(), minlength=n).tolist()
    a, b = pixel_edge_pairs(labels)
    cross = a != b
    lo, hi = np.minimum(a[cross], b[cross]), np.maximum(a[cross], b[cross])
    keys, lengths = np.unique(lo * n + hi, return_counts=True)
    adj = [dict() for _ in range(n)]
    for key, length in zip(keys.tolist(), lengths.tolist()):
        u, v = divmod(key, n)
        adj[u][v] = length
        adj[v][u] = length
    owner = list(range(n))
    alive = n
    heap = [(s, r) for r, s in enumerate(sizes) if s < min_region]
    heapq.heapify(heap)
    while heap and alive > 1:
        size, r = heapq.heappop(heap)
        if owner[r] != r or sizes[r] != size or size >= min_region:
            continue
        target = min(adj[r].items(), key=lambda kv: (-kv[1], kv[0]))[0]
        for c, length in adj[r].items():
            del adj[c][r]
            if c != target:
                adj[target][c] = adj[target].get(c, 0) + length
                adj[c][target] = adj[c].get(target, 0) + length
        adj[r] = {}
        owner[r] = target
        sizes[target] += sizes[r]
        sizes[r] = 0
        alive -= 1
        if sizes[target] < min_region:
            heapq.heappush(heap, (sizes[target], target))
    owner = np.asarray(owner)
    while True:
        nxt = owner[owner]
        if np.array_equal(nxt, owner):
            break
        owner = nxt
    return owner[labels]


def otsu_partition(values, bins, min_region=1):
    """Threshold ``values`` (2-D, in [0, 1]) and split the classes into 4-connected regions.

    Returns ``(partition, objective, threshold_index)``.
    """
    counts, idx = channel_histogram(values, bins)
    t, variance = best_threshold(counts)
    h, w = idx.shape
    if t is None:
        return Partition.one_cell(h, w), 0.0, None
    labels = absorb_small(_components(idx >= t), min_region)
    return relabel_canonical(Partition(labels)), float(variance), t
