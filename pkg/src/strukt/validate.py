"""Structural validation: partition distances, stability envelopes, scale
coherence, objective recomputation, and determinacy checks.
"""

from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass
import io
import math
import os

import numpy as np
from scipy import ndimage

from ._canon import canonical_json, load_json_bytes
from .criterion import CriterionSpec, criterion_hash
from .errors import CompatibilityError, NoObjectiveError, SpecError
from .extract import as_partition, extract
from .extract.merge import partition_energy
from .extract.otsu import channel_histogram
from .extract.spectral import degrees, grid_affinity
from .field import MeasurementField, resample_box
from .perturb import PerturbationSpec, apply_perturbation, perturbation_hash, replicate_seed
from .products import Hierarchy, Partition, product_hash, relabel_canonical

METRICS = ("vi_nats", "ari", "boundary_f")


def worker_count():
    """Worker cap from ``STRUKT_THREADS`` (default: CPU count)."""
    raw = os.environ.get("STRUKT_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def contingency(p: Partition, q: Partition) -> np.ndarray:
    if p.shape != q.shape:
        raise ValueError(f"dimension mismatch: {p.shape} vs {q.shape}")
    a = relabel_canonical(p).labels.ravel().astype(np.int64)
    b = relabel_canonical(q).labels.ravel().astype(np.int64)
    na, nb = int(a.max()) + 1, int(b.max()) + 1
    return np.bincount(a * nb + b, minlength=na * nb).reshape(na, nb)


def _entropy(counts, n):
    c = counts[counts > 0].astype(np.float64)
    return -math.fsum((c / n) * np.log(c / n))


def variation_of_information(p: Partition, q: Partition) -> float:
    """VI = H(p) + H(q) - 2 I(p; q), in nats."""
    table = contingency(p, q)
    n = table.sum()
    hp = _entropy(table.sum(axis=1), n)
    hq = _entropy(table.sum(axis=0), n)
    hpq = _entropy(table.ravel(), n)
    # I = H(p) + H(q) - H(p, q), so VI = 2 H(p, q) - H(p) - H(q)
    return max(0.0, 2.0 * hpq - hp - hq)


def _pairs(x):
    x = x.astype(np.float64)
    return x * (x - 1.0) / 2.0


def adjusted_rand(p: Partition, q: Partition) -> float:
    """Adjusted Rand index; 1 when the chance-corrected denominator vanishes.

    The denominator is zero only when both partitions are all singletons or
    both are one cell, i.e. when they group pixels identically.
    """
    table = contingency(p, q)
    n = float(table.sum())
    index = math.fsum(_pairs(table.ravel()))
    sum_a = math.fsum(_pairs(table.sum(axis=1)))
    sum_b = math.fsum(_pairs(table.sum(axis=0)))
    expected = sum_a * sum_b / (n * (n - 1.0) / 2.0) if n > 1 else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    denom = max_index - expected
    if denom == 0.0:
        return 1.0
    return (index - expected) / denom


def boundary_mask(p: Partition) -> np.ndarray:
    """Pixels with at least one 4-neighbour in another region."""
    lab = p.labels
    mask = np.zeros(lab.shape, dtype=bool)
    dh = lab[:, :-1] != lab[:, 1:]
    dv = lab[:-1, :] != lab[1:, :]
    mask[:, :-1] |= dh
    mask[:, 1:] |= dh
    mask[:-1, :] |= dv
    mask[1:, :] |= dv
    return mask


def boundary_f_measure(p: Partition, q: Partition, tol_px: int = 1) -> float:
    """F-measure of boundary pixels matched within Chebyshev distance ``tol_px``."""
    if p.shape != q.shape:
        raise ValueError(f"dimension mismatch: {p.shape} vs {q.shape}")
    bp, bq = boundary_mask(p), boundary_mask(q)
    np_, nq = int(bp.sum()), int(bq.sum())
    if np_ == 0 and nq == 0:
        return 1.0
    if np_ == 0 or nq == 0:
        return 0.0
    if tol_px > 0:
        square = np.ones((2 * tol_px + 1, 2 * tol_px + 1), dtype=bool)
        near_q = ndimage.binary_dilation(bq, structure=square)
        near_p = ndimage.binary_dilation(bp, structure=square)
    else:
        near_q, near_p = bq, bp
    precision = np.count_nonzero(bp & near_q) / np_
    recall = np.count_nonzero(bq & near_p) / nq
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def upsample_nearest(p: Partition, shape) -> Partition:
    h, w = shape
    fy, fx = h // p.height, w // p.width
    if fy * p.height != h or fx * p.width != w:
        raise ValueError(f"cannot project {p.shape} onto {shape}")
    return Partition(np.repeat(np.repeat(p.labels, fy, axis=0), fx, axis=1))


def summarize(values):
    """``{mean, min, max, std}`` (population std) with exactly rounded sums."""
    values = [float(v) for v in values]
    n = len(values)
    mean = math.fsum(values) / n
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / n)
    return {"mean": mean, "min": min(values), "max": max(values), "std": std}


@dataclass(frozen=True)
class StabilityEnvelope:
    perturbation_digest: str
    n_replicates: int
    per_replicate: tuple
    summary: dict
    criterion_digest: str = ""
    level: int | None = None

    def to_dict(self):
        return {
            "perturbation_digest": self.perturbation_digest,
            "criterion_digest": self.criterion_digest,
            "level": self.level,
            "n_replicates": self.n_replicates,
            "per_replicate": [dict(r) for r in self.per_replicate],
            "summary": {m: dict(s) for m, s in self.summary.items()},
        }

    def to_json(self) -> bytes:
        return canonical_json(self.to_dict())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["replicate", *METRICS])
        for i, row in enumerate(self.per_replicate):
            writer.writerow([i, *(repr(float(row[m])) for m in METRICS)])
        return buf.getvalue()

    @classmethod
    def from_dict(cls, doc):
        rows = tuple({m: float(r[m]) for m in METRICS} for r in doc["per_replicate"])
        return cls(doc["perturbation_digest"], int(doc["n_replicates"]), rows,
                   {m: dict(doc["summary"][m]) for m in METRICS},
                   doc.get("criterion_digest", ""), doc.get("level"))

    @classmethod
    def from_json(cls, data: bytes):
        return cls.from_dict(load_json_bytes(data))


def envelope_problems(doc) -> list:
    """Recompute envelope summary statistics; list every mismatch."""
    problems = []
    try:
        rows = doc["per_replicate"]
        if len(rows) != doc["n_replicates"]:
            problems.append(f"per_replicate has {len(rows)} rows, n_replicates is "
                            f"{doc['n_replicates']}")
        if not rows:
            return problems + ["envelope has no replicates"]
        for m in METRICS:
            expect = summarize(r[m] for r in rows)
            stored = doc["summary"][m]
            for stat, value in expect.items():
                if stored.get(stat) != value:
                    problems.append(f"summary {m}.{stat} is {stored.get(stat)!r}, "
                                    f"recomputed {value!r}")
    except (KeyError, TypeError) as exc:
        problems.append(f"malformed envelope: {exc}")
    return problems


def compare(reference: Partition, other: Partition, tol_px=1) -> dict:
    return {"vi_nats": variation_of_information(reference, other),
            "ari": adjusted_rand(reference, other),
            "boundary_f": boundary_f_measure(reference, other, tol_px)}


def _partition_of(result, level):
    return relabel_canonical(as_partition(result.product, level))


def stability_envelope(field: MeasurementField, cspec: CriterionSpec, pspec: PerturbationSpec,
                       n_replicates: int, level=None, tol_px=1) -> StabilityEnvelope:
    """Distances between the unperturbed product and products of perturbed fields.

    Seeded families draw replicate ``i`` with seed ``seed ^ i``; other families
    are deterministic, so one extraction is shared by all rows. Downsampled
    products are projected back by nearest-neighbour upsampling.
    """
    if n_replicates < 1:
        raise ValueError("n_replicates must be at least 1")
    pspec.resolved()
    reference = _partition_of(extract(field, cspec), level)

    def run(i):
        spec = pspec.with_seed(replicate_seed(pspec.seed, i)) if pspec.seeded else pspec
        perturbed = apply_perturbation(field, spec)
        part = _partition_of(extract(perturbed, cspec), level)
        if part.shape != reference.shape:
            part = upsample_nearest(part, reference.shape)
        return compare(reference, part, tol_px)

    if pspec.seeded and n_replicates > 1:
        with ThreadPoolExecutor(max_workers=min(worker_count(), n_replicates)) as pool:
            rows = list(pool.map(run, range(n_replicates)))
    else:
        row = run(0)
        rows = [dict(row) for _ in range(n_replicates)]
    summary = {m: summarize(r[m] for r in rows) for m in METRICS}
    return StabilityEnvelope(perturbation_hash(pspec), n_replicates, tuple(rows), summary,
                             criterion_hash(cspec), level)


def scale_coherence(field: MeasurementField, cspec: CriterionSpec, factors, level=None) -> list:
    """ARI between the full-resolution product and each box-resampled product."""
    reference = _partition_of(extract(field, cspec), level)
    out = []
    for f in factors:
        part = _partition_of(extract(resample_box(field, f), cspec), level)
        out.append(adjusted_rand(reference, upsample_nearest(part, reference.shape)))
    return out


def objective_value(field: MeasurementField, product, cspec: CriterionSpec) -> float:
    """Recompute the family's objective for ``product`` from first principles."""
    params = cspec.resolved()
    fam = cspec.family
    if fam == "scale_coherence":
        raise NoObjectiveError("scale_coherence criteria define no scalar objective")
    if fam == "threshold_separation":
        if not isinstance(product, Partition):
            raise CompatibilityError("threshold_separation objective needs a Partition")
        if product.shape != field.shape:
            raise ValueError("dimension mismatch between field and product")
        ch = params.get("channel")
        if ch is None:
            ch = 0
        counts, _ = channel_histogram(field.as_float64()[ch], params["bins"])
        return _otsu_scan(counts)
    if fam == "homogeneity_merge":
        if isinstance(product, Hierarchy):
            product = product.levels[-1]
        if not isinstance(product, Partition):
            raise CompatibilityError("homogeneity_merge objective needs a Partition or Hierarchy")
        return partition_energy(field.as_float64(), product.labels, params["lambda"])
    if fam == "global_cut":
        if not isinstance(product, Partition):
            raise CompatibilityError("global_cut objective needs a Partition")
        return _ncut(field, product, params["sigma_I"])
    raise SpecError(f"unknown family {fam!r}")


def _otsu_scan(counts):
    # direct per-threshold class statistics at bin centres
    bins = len(counts)
    centres = (np.arange(bins) + 0.5) / bins
    total = counts.sum()
    best = 0.0
    for t in range(1, bins):
        n0, n1 = counts[:t].sum(), counts[t:].sum()
        if n0 == 0 or n1 == 0:
            continue
        mu0 = math.fsum(counts[:t] * centres[:t]) / n0
        mu1 = math.fsum(counts[t:] * centres[t:]) / n1
        best = max(best, (n0 / total) * (n1 / total) * (mu0 - mu1) ** 2)
    return best


def _ncut(field, p, sigma_i):
    src, dst, weight = grid_affinity(field.as_float64(), sigma_i)
    deg = degrees(field.height * field.width, src, dst, weight)
    lab = p.labels.ravel()
    if p.n_regions != 2:
        raise CompatibilityError("Ncut is defined for two-block partitions")
    a_mask = lab == lab[0]
    cut = math.fsum(weight[a_mask[src] != a_mask[dst]])
    return cut / math.fsum(deg[a_mask]) + cut / math.fsum(deg[~a_mask])


@dataclass(frozen=True)
class DeterminacyReport:
    deterministic: bool
    first_digest: str
    second_digest: str


def determinacy_check(field: MeasurementField, cspec: CriterionSpec, extractor=None):
    """Run the extractor twice on freshly rebuilt inputs and compare product hashes."""
    extractor = extractor or extract
    digests = []
    for _ in range(2):
        fresh_field = MeasurementField(np.array(field.values, copy=True))
        fresh_spec = CriterionSpec(cspec.family, dict(cspec.params), cspec.schema_version)
        digests.append(product_hash(extractor(fresh_field, fresh_spec).product))
    return DeterminacyReport(digests[0] == digests[1], digests[0], digests[1])
