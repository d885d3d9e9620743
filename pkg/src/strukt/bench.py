"""Synthetic scenes, a semantics-first baseline, and the shift experiment.

The scene generator is versioned (``SCENE_VERSION``); reports record it so
results stay comparable when the generator changes.

Scenes have two channels. Channel 0 carries intensity (background 0.2,
blobs ``0.2 + contrast``). Channel 1 carries a per-blob tint so that blob
instances are distinguishable by appearance, which is what the baseline
keys on. Tints are spread evenly from 1 down to 0 so that neighbouring
instances sit ten texture sigmas apart at the default settings; a single
blob takes the intensity value as its tint. The background tint is 0.2.
"""

from dataclasses import asdict, dataclass
import csv
import io
import math
from pathlib import Path

import numpy as np

from ._build import implementation_id
from ._canon import canonical_json, sha256_file
from .criterion import CriterionSpec, criterion_hash
from .dobject import export_do
from .errors import CompatibilityError, StruktError
from .extract import extract
from .field import MeasurementField, save_field
from .perturb import PerturbationSpec, apply_perturbation, perturbation_hash
from .products import Partition, product_hash, relabel_canonical, save_product
from .rng import PCG32
from .semantics import (Crosswalk, Ontology, Rule, SemanticMapping, apply_crosswalk,
                        apply_mapping)
from .validate import stability_envelope

SCENE_VERSION = "2ch-discs/1"
BACKGROUND = 0.2
PLACEMENT_RETRIES = 1000


class SceneError(StruktError, ValueError):
    """Blobs could not be placed without overlap."""


@dataclass(frozen=True)
class SceneSpec:
    side: int = 128
    n_blobs: int = 3
    contrast: float = 0.5
    texture_sigma: float = 0.05
    seed: int = 42

    def __post_init__(self):
        if self.side < 16:
            raise ValueError("scene side must be at least 16")
        if self.n_blobs < 0:
            raise ValueError("n_blobs must be non-negative")
        if self.texture_sigma < 0:
            raise ValueError("texture_sigma must be non-negative")
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def _place_blobs(spec, rng):
    side = spec.side
    r_lo, r_hi = side / 10.0, side / 6.0
    blobs = []
    for _ in range(spec.n_blobs):
        for _ in range(PLACEMENT_RETRIES):
            r = r_lo + (r_hi - r_lo) * rng.uniform()
            cy = r + 1 + (side - 2 * r - 2) * rng.uniform()
            cx = r + 1 + (side - 2 * r - 2) * rng.uniform()
            if all(math.hypot(cy - y, cx - x) > r + q + 2.0 for y, x, q in blobs):
                blobs.append((cy, cx, r))
                break
        else:
            raise SceneError(f"could not place {spec.n_blobs} non-overlapping blobs on a "
                             f"{side}x{side} grid after {PLACEMENT_RETRIES} tries")
    return blobs


def _tint(j, n, contrast):
    if n == 1:
        return BACKGROUND + contrast
    return 1.0 - j / (n - 1)


def make_synthetic(spec: SceneSpec):
    """Build the seeded scene; returns ``(field, ground_truth_partition)``.

    The ground truth (background plus one region per blob) is for scoring the
    baseline only.
    """
    rng = PCG32(spec.seed)
    blobs = _place_blobs(spec, rng)
    side = spec.side
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    truth = np.zeros((side, side), dtype=np.int64)
    intensity = np.full((side, side), BACKGROUND)
    tint = np.full((side, side), BACKGROUND)
    n = len(blobs)
    for j, (cy, cx, r) in enumerate(blobs):
        inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        truth[inside] = j + 1
        intensity[inside] = BACKGROUND + spec.contrast
        tint[inside] = _tint(j, n, spec.contrast)
    values = np.stack([intensity, tint])
    if spec.texture_sigma > 0:
        values = values + spec.texture_sigma * rng.normals(values.size).reshape(values.shape)
    values = np.clip(values, 0.0, 1.0)
    field = MeasurementField(values, provenance_note=f"synthetic {SCENE_VERSION} seed={spec.seed}")
    return field, relabel_canonical(Partition(truth))


@dataclass(frozen=True)
class BaselineModel:
    """Nearest-centroid pixel labeller: one centroid per ground-truth label."""

    centroids: np.ndarray  # (n_labels, channels)

    @property
    def n_labels(self):
        return self.centroids.shape[0]


def baseline_fit(field: MeasurementField, truth: Partition) -> BaselineModel:
    if field.shape != truth.shape:
        raise ValueError(f"dimension mismatch: field {field.shape} vs truth {truth.shape}")
    labels = truth.labels.ravel().astype(np.int64)
    n = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=n)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise ValueError(f"ground-truth labels {missing} have no pixels")
    values = field.as_float64().reshape(field.channels, -1)
    cents = np.empty((n, field.channels))
    order = np.argsort(labels, kind="stable")
    groups = np.split(order, np.cumsum(counts)[:-1])
    for lab, idx in enumerate(groups):
        for c in range(field.channels):
            cents[lab, c] = math.fsum(values[c, idx]) / counts[lab]
    return BaselineModel(cents)


def baseline_predict(model: BaselineModel, field: MeasurementField) -> np.ndarray:
    """Label map of nearest centroids (Euclidean; ties go to the smallest label)."""
    if model.centroids.shape[1] != field.channels:
        raise CompatibilityError(f"model has {model.centroids.shape[1]} channels, field has "
                                 f"{field.channels}")
    x = field.as_float64().reshape(field.channels, -1).T
    d2 = ((x[:, None, :] - model.centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1).reshape(field.shape)


def majority_downsample(labels, factor):
    """Block-wise majority vote; ties go to the smallest label."""
    labels = np.asarray(labels, dtype=np.int64)
    h, w = labels.shape
    if h % factor or w % factor:
        raise ValueError(f"factor {factor} does not divide {h}x{w}")
    n = int(labels.max()) + 1
    blocks = labels.reshape(h // factor, factor, w // factor, factor).transpose(0, 2, 1, 3)
    blocks = blocks.reshape(h // factor, w // factor, factor * factor)
    votes = np.zeros((h // factor, w // factor, n), dtype=np.int64)
    for lab in range(n):
        votes[..., lab] = np.count_nonzero(blocks == lab, axis=2)
    return np.argmax(votes, axis=2)


def label_agreement(predicted, truth: Partition) -> float:
    """Fraction of pixels whose predicted label equals the ground truth.

    A coarser prediction is scored against the majority-downsampled truth.
    """
    predicted = np.asarray(predicted)
    ref = truth.labels.astype(np.int64)
    if predicted.shape != ref.shape:
        factor = ref.shape[0] // predicted.shape[0]
        if factor * predicted.shape[0] != ref.shape[0] or \
                factor * predicted.shape[1] != ref.shape[1]:
            raise ValueError(f"cannot compare {predicted.shape} against {ref.shape}")
        ref = majority_downsample(ref, factor)
    return float(np.count_nonzero(predicted == ref)) / predicted.size


def fig2_criterion() -> CriterionSpec:
    return CriterionSpec("threshold_separation", {"channel": 0, "bins": 256, "min_region": 16})


def fig2_perturbations():
    return [
        ("identity", PerturbationSpec("identity")),
        ("contrast", PerturbationSpec("gamma_contrast", {"gamma": 1.6, "gain": 1.0, "bias": 0.0})),
        ("covariate_shift", PerturbationSpec("covariate_shift",
                                             {"remap_strength": 0.9, "mix_angle_deg": -30.0})),
        ("downsample", PerturbationSpec("downsample", {"factor": 2})),
    ]


def _semantic_views():
    tone = Ontology("tone", "1", (("dark", "Dark"), ("bright", "Bright")))
    size = Ontology("size", "1", (("small", "Small"), ("large", "Large")))
    cover = Ontology("cover", "1", (("water", "Water"), ("land", "Land")))
    by_tone = SemanticMapping("tone-by-mean", tone.ref,
                              (Rule("dark", {0: (None, 0.45)}),), "bright")
    by_size = SemanticMapping("size-by-count", size.ref,
                              (Rule("small", count=(None, 2000)),), "large")
    tone_to_cover = Crosswalk("tone-to-cover", tone.ref, cover.ref,
                              {"dark": "water", "bright": "land"})
    return (by_tone, tone), (by_size, size), tone_to_cover


def semantics_audit(field, partition):
    """Apply two mappings and a crosswalk; report whether the product hash survived."""
    (m1, o1), (m2, o2), cw = _semantic_views()
    h = product_hash(partition)
    a = apply_mapping(field, partition, m1, o1)
    b = apply_mapping(field, partition, m2, o2)
    c = apply_crosswalk(a, cw)
    hashes = [a.product_hash, b.product_hash, c.product_hash]
    return {"product_hash": h, "immutable": all(x == h for x in hashes),
            "labels": {"tone": list(a.terms), "size": list(b.terms), "cover": list(c.terms)}}


@dataclass(frozen=True)
class Fig2Report:
    rows: tuple
    seed: int
    scene: dict
    criterion_digest: str
    implementation_id: str
    do_ids: dict

    def to_dict(self):
        return {"rows": [dict(r) for r in self.rows], "seed": self.seed, "scene": dict(self.scene),
                "scene_version": SCENE_VERSION, "criterion_digest": self.criterion_digest,
                "implementation_id": self.implementation_id, "do_ids": dict(self.do_ids)}

    def to_json(self) -> bytes:
        return canonical_json(self.to_dict())

    def row(self, name):
        for r in self.rows:
            if r["perturbation"] == name:
                return r
        raise KeyError(name)


def _svg_chart(rows):
    width, height, pad = 520, 260, 40
    group_w = (width - 2 * pad) / len(rows)
    bar_w = group_w / 3
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" '
             'stroke="black"/>']
    scale = height - 2 * pad
    for i, r in enumerate(rows):
        x0 = pad + i * group_w + bar_w / 2
        for j, (key, colour) in enumerate((("structural_ari", "#3b6ea5"),
                                          ("baseline_agreement", "#c8553d"))):
            v = max(0.0, r[key])
            hbar = v * scale
            parts.append(f'<rect x="{x0 + j * bar_w:.2f}" y="{height - pad - hbar:.2f}" '
                         f'width="{bar_w:.2f}" height="{hbar:.2f}" fill="{colour}">'
                         f'<title>{key}={v:.4f}</title></rect>')
        parts.append(f'<text x="{x0 + bar_w:.2f}" y="{height - pad + 16}" font-size="11" '
                     f'text-anchor="middle">{r["perturbation"]}</text>')
    parts.append(f'<text x="{pad}" y="{pad - 14}" font-size="12">structural ARI (blue) vs '
                 'baseline label agreement (red)</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _csv(rows, envelopes):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["perturbation", "perturbation_digest", "replicate", "vi_nats", "ari",
                     "boundary_f", "baseline_agreement"])
    for r, env in zip(rows, envelopes):
        for i, rep in enumerate(env.per_replicate):
            writer.writerow([r["perturbation"], r["perturbation_digest"], i,
                             repr(rep["vi_nats"]), repr(rep["ari"]), repr(rep["boundary_f"]),
                             repr(r["baseline_agreement"])])
    return buf.getvalue()


def run_fig2(seed: int = 42, out_dir=None, scene: SceneSpec | None = None,
             timestamp=None, command_line=()) -> Fig2Report:
    """Structural stability versus baseline label agreement under each shift.

    The structural side never sees the ground truth: it only compares the
    product of the perturbed field with the product of the original field
    under one fixed criterion.
    """
    spec = scene or SceneSpec(seed=seed)
    field, truth = make_synthetic(spec)
    cspec = fig2_criterion()
    model = baseline_fit(field, truth)
    reference = extract(field, cspec)
    out = Path(out_dir) if out_dir is not None else None
    do_dir = out / "dos" if out is not None else None
    if do_dir is not None:
        do_dir.mkdir(parents=True, exist_ok=True)

    perturbations = fig2_perturbations()
    ref_do = None
    if do_dir is not None:
        ref_do = export_do(reference, cspec, field, do_dir,
                           stability={"perturbations": [perturbation_hash(p)
                                                        for _, p in perturbations]},
                           command_line=command_line, timestamp=timestamp)
    rows, envelopes, do_ids = [], [], {"reference": ref_do}
    for name, pspec in perturbations:
        env = stability_envelope(field, cspec, pspec, 1)
        perturbed = apply_perturbation(field, pspec)
        agreement = label_agreement(baseline_predict(model, perturbed), truth)
        result = extract(perturbed, cspec)
        audit = semantics_audit(perturbed, result.product)
        row = {"perturbation": name,
               "perturbation_digest": perturbation_hash(pspec),
               "structural_ari": env.summary["ari"]["mean"],
               "structural_boundary_f": env.summary["boundary_f"]["mean"],
               "structural_vi_nats": env.summary["vi_nats"]["mean"],
               "baseline_agreement": agreement,
               "product_hash": result.product_hash,
               "semantics_immutable": audit["immutable"]}
        rows.append(row)
        envelopes.append(env)
        if do_dir is not None:
            do_ids[name] = export_do(result, cspec, perturbed, do_dir,
                                     stability={"perturbations": [row["perturbation_digest"]]},
                                     envelope=env, parents=[ref_do], version=2,
                                     command_line=command_line, timestamp=timestamp)
    report = Fig2Report(tuple(rows), spec.seed, asdict(spec), criterion_hash(cspec),
                        implementation_id(), do_ids if do_dir is not None else {})
    if out is not None:
        _write_outputs(out, report, rows, envelopes, field, truth)
    return report


def _write_outputs(out, report, rows, envelopes, field, truth):
    (out / "report.json").write_bytes(report.to_json())
    (out / "replicates.csv").write_text(_csv(rows, envelopes), encoding="utf-8")
    (out / "fig2.svg").write_text(_svg_chart(rows), encoding="utf-8")
    save_field(field, out / "scene.mfld")
    save_product(truth, out / "truth.sprt")
    files = {}
    for name in ("report.json", "replicates.csv", "fig2.svg", "scene.mfld", "truth.sprt"):
        files[name] = sha256_file(out / name)
    manifest = {"files": files, "digital_objects": dict(report.do_ids)}
    (out / "manifest.json").write_bytes(canonical_json(manifest))
