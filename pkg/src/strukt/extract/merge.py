"""Greedy best-first region merging for a piecewise-constant energy.

The energy of a partition is the summed within-region squared error over all
channels plus ``lam`` times the number of boundary pixel edges. Starting from
singletons, the adjacent pair with the most negative energy change is merged
until no merge lowers the energy (or a level budget is reached).
"""

import math

import numpy as np

from ..products import Hierarchy, Partition, boundary_length, pixel_edge_pairs, relabel_canonical


def partition_energy(values, labels, lam):
    """Energy of ``labels`` on ``values`` (``(k, h, w)`` float64), from scratch."""
    flat = relabel_canonical(Partition(labels)).labels.ravel().astype(np.int64)
    n = int(flat.max()) + 1
    counts = np.bincount(flat, minlength=n)
    sse = []
    for v in values.reshape(values.shape[0], -1):
        means = np.bincount(flat, weights=v, minlength=n) / counts
        resid = v - means[flat]
        sse.append(math.fsum(resid * resid))
    return math.fsum(sse) + lam * boundary_length(Partition(labels))


def _is_dyadic(n):
    return n > 0 and n & (n - 1) == 0


def _resolve(parent):
    lab = parent
    while True:
        nxt = lab[lab]
        if np.array_equal(nxt, lab):
            return lab
        lab = nxt


def region_merge_hierarchy(values, lam, stop="local_min", n_levels=0):
    """Run the greedy merge on ``values`` of shape ``(k, h, w)``.

    Levels are snapshotted at every power-of-two region count plus the final
    state. Region ids in the merge log are each region's smallest raster
    index, which orders regions the same way as canonical labels do.

    Returns ``(hierarchy, final_energy)``.
    """
    if stop not in ("local_min", "n_levels"):
        raise ValueError(f"invalid stop mode {stop!r}")
    if stop == "n_levels" and n_levels < 1:
        raise ValueError("n_levels must be >= 1 when stop is n_levels")
    values = np.asarray(values, dtype=np.float64)
    k, h, w = values.shape
    npix = h * w
    count = np.ones(npix)
    sums = values.reshape(k, npix).copy()
    parent = np.arange(npix)

    # One slot per adjacent region pair; retired slots hold +inf.
    grid = np.arange(npix).reshape(h, w)
    lo, hi = pixel_edge_pairs(grid)
    lo, hi = lo.astype(np.int64), hi.astype(np.int64)
    blen = np.ones(lo.size)
    nbrs = [dict() for _ in range(npix)]
    for e, (a, b) in enumerate(zip(lo.tolist(), hi.tolist())):
        nbrs[a][b] = e
        nbrs[b][a] = e

    def deltas(idx):
        a, b = lo[idx], hi[idx]
        na, nb = count[a], count[b]
        dist = np.zeros(idx.size)
        for ch in range(k):
            diff = sums[ch, a] / na - sums[ch, b] / nb
            dist += diff * diff
        return na * nb / (na + nb) * dist - lam * blen[idx]

    de = deltas(np.arange(lo.size))
    levels = [Partition(grid)]
    log = []
    regions = npix
    done = stop == "n_levels" and n_levels <= 1
    while not done and regions > 1:
        e = int(np.argmin(de))
        d = float(de[e])
        if not d < 0.0:
            break
        ties = np.flatnonzero(de == d)
        if ties.size > 1:
            e = int(ties[np.argmin(lo[ties] * npix + hi[ties])])
        keep, gone = int(lo[e]), int(hi[e])  # keep is the smaller raster index
        log.append((len(levels), (keep, gone), d))
        count[keep] += count[gone]
        sums[:, keep] += sums[:, gone]
        parent[gone] = keep
        de[e] = np.inf
        nk = nbrs[keep]
        del nk[gone]
        for c, eg in nbrs[gone].items():
            if c == keep:
                continue
            nc = nbrs[c]
            del nc[gone]
            ek = nk.get(c)
            if ek is None:
                lo[eg], hi[eg] = (keep, c) if keep < c else (c, keep)
                nk[c] = eg
                nc[keep] = eg
            else:
                blen[ek] += blen[eg]
                de[eg] = np.inf
        nbrs[gone] = {}
        if nk:
            idx = np.fromiter(nk.values(), dtype=np.int64, count=len(nk))
            de[idx] = deltas(idx)
        regions -= 1
        if _is_dyadic(regions):
            parent = _resolve(parent)
            levels.append(Partition(parent.reshape(h, w)))
            if stop == "n_levels" and len(levels) >= n_levels:
                done = True
    parent = _resolve(parent)
    final = Partition(parent.reshape(h, w))
    if final.n_regions < levels[-1].n_regions:
        levels.append(final)
    hierarchy = Hierarchy(tuple(levels), tuple(log))
    energy = partition_energy(values, hierarchy.levels[-1].labels, lam)
    return hierarchy, energy
