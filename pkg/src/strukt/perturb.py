"""Declared perturbation families used by the stability harness.

Families and parameters::

    identity
    gaussian_noise   sigma >= 0                      (seeded, PCG32)
    gamma_contrast   gamma > 0, gain, bias           v -> gain * v**gamma + bias
    covariate_shift  remap_strength in [0, 1],       v -> (1-s) v + s smoothstep(v),
                     mix_angle_deg                   then rotate channels 0 and 1
    downsample       factor >= 1                     box averaging

Every output is clamped to [0, 1]; the number of clamped samples is written
into the output field's provenance note.
"""

from dataclasses import dataclass, field
import math
from pathlib import Path
from types import MappingProxyType

import numpy as np

from ._canon import canonical_json, load_json_bytes, sha256_hex
from .criterion import Param
from .errors import SpecError
from .field import MeasurementField, resample_box
from .rng import PCG32

SCHEMA_VERSION = "1"
_U64 = (1 << 64) - 1

FAMILIES = MappingProxyType({
    "identity": {},
    "gaussian_noise": {"sigma": Param("real", lo=0.0)},
    "gamma_contrast": {
        "gamma": Param("real", lo=0.0, lo_open=True),
        "gain": Param("real", required=False, default=1.0),
        "bias": Param("real", required=False, default=0.0),
    },
    "covariate_shift": {
        "remap_strength": Param("real", lo=0.0, hi=1.0),
        "mix_angle_deg": Param("real", required=False, default=0.0),
    },
    "downsample": {"factor": Param("int", lo=1)},
})


@dataclass(frozen=True)
class PerturbationSpec:
    family: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    schema_version: str = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))

    def __hash__(self):
        return hash((self.family, tuple(sorted(self.params.items())), self.seed))

    def resolved(self) -> dict:
        out, problems = _resolve(self)
        if problems:
            raise SpecError(f"invalid {self.family} perturbation: " + "; ".join(problems),
                            problems)
        return out

    @property
    def seeded(self) -> bool:
        return self.family == "gaussian_noise"

    def with_seed(self, seed) -> "PerturbationSpec":
        return PerturbationSpec(self.family, dict(self.params), seed & _U64, self.schema_version)

    def to_dict(self) -> dict:
        return {"family": self.family, "params": self.resolved(), "seed": self.seed,
                "schema_version": self.schema_version}

    @classmethod
    def from_dict(cls, doc) -> "PerturbationSpec":
        if not isinstance(doc, dict) or not isinstance(doc.get("params", {}), dict):
            raise SpecError("perturbation document must be an object with object params",
                            ["malformed perturbation document"])
        extra = sorted(set(doc) - {"family", "params", "seed", "schema_version"})
        if extra:
            raise SpecError(f"unexpected perturbation fields: {extra}",
                            [f"unexpected field: {k}" for k in extra])
        return cls(doc.get("family"), doc.get("params", {}), doc.get("seed", 0),
                   doc.get("schema_version", SCHEMA_VERSION))


def _resolve(spec):
    if spec.family not in FAMILIES:
        return {}, [f"unknown family: {spec.family!r}; expected one of {sorted(FAMILIES)}"]
    problems = []
    if spec.schema_version != SCHEMA_VERSION:
        problems.append(f"unsupported schema_version {spec.schema_version!r}")
    seed = spec.seed
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= _U64:
        problems.append("out of range: seed must be an unsigned 64-bit integer")
    schema = FAMILIES[spec.family]
    out = {}
    for name in sorted(spec.params):
        if name not in schema:
            problems.append(f"unexpected parameter: {name}")
    for name, p in sorted(schema.items()):
        if name not in spec.params:
            if p.required:
                problems.append(f"missing parameter: {name}")
            else:
                out[name] = p.default
            continue
        value, problem = p.check(name, spec.params[name])
        if problem:
            problems.append(problem)
        out[name] = value
    return out, problems


def validate_perturbation(spec: PerturbationSpec) -> list:
    return _resolve(spec)[1]


def canonicalize(spec: PerturbationSpec) -> bytes:
    return canonical_json(spec.to_dict())


def perturbation_hash(spec: PerturbationSpec) -> str:
    return sha256_hex(canonicalize(spec))


def parse_perturbation(data: bytes) -> PerturbationSpec:
    try:
        doc = load_json_bytes(data)
    except (UnicodeDecodeError, ValueError) as exc:
        raise SpecError(f"perturbation is not valid JSON: {exc}", [str(exc)]) from None
    spec = PerturbationSpec.from_dict(doc)
    problems = validate_perturbation(spec)
    if problems:
        raise SpecError("invalid perturbation: " + "; ".join(problems), problems)
    return spec


def load_perturbation(path) -> PerturbationSpec:
    return parse_perturbation(Path(path).read_bytes())


def save_perturbation(spec: PerturbationSpec, path):
    Path(path).write_bytes(canonicalize(spec))


def smoothstep(v):
    return v * v * (3.0 - 2.0 * v)


def covariate_remap(v, strength):
    """Monotone intensity remap blending identity with smoothstep."""
    return (1.0 - strength) * v + strength * smoothstep(v)


def replicate_seed(seed: int, index: int) -> int:
    return (seed ^ index) & _U64


def _finish(values, f, spec):
    clamped = int(np.count_nonzero((values < 0.0) | (values > 1.0)))
    values = np.clip(values, 0.0, 1.0)
    note = f"perturbed {spec.family} {perturbation_hash(spec)[:16]} clamped={clamped}"
    return MeasurementField(values, provenance_note=note)


def apply_perturbation(f: MeasurementField, spec: PerturbationSpec) -> MeasurementField:
    params = spec.resolved()
    fam = spec.family
    if fam == "identity":
        return MeasurementField(f.values, provenance_note="perturbed identity clamped=0")
    if fam == "downsample":
        out = resample_box(f, params["factor"])
        return MeasurementField(out.values,
                                provenance_note=f"perturbed downsample x{params['factor']} clamped=0")
    v = f.as_float64()
    if fam == "gaussian_noise":
        if params["sigma"] == 0.0:
            return _finish(v, f, spec)
        rng = PCG32(spec.seed)
        noise = rng.normals(v.size).reshape(v.shape)
        return _finish(v + params["sigma"] * noise, f, spec)
    if fam == "gamma_contrast":
        return _finish(params["gain"] * np.power(v, params["gamma"]) + params["bias"], f, spec)
    if fam == "covariate_shift":
        out = covariate_remap(np.clip(v, 0.0, 1.0), params["remap_strength"])
        if f.channels >= 2 and params["mix_angle_deg"] != 0.0:
            theta = math.radians(params["mix_angle_deg"])
            c, s = math.cos(theta), math.sin(theta)
            a, b = out[0].copy(), out[1].copy()
            out[0] = c * a - s * b
            out[1] = s * a + c * b
        return _finish(out, f, spec)
    raise SpecError(f"unknown perturbation family {fam!r}", [f"unknown family: {fam}"])
