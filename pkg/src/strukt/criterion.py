"""Explicit, hashable extraction criteria.

A criterion is a family name plus numeric parameters. Parameters are checked
against a per-family schema; optional parameters are filled with their
defaults before canonicalization, so a spec that spells out a default and
one that omits it denote the same criterion and share a digest.
"""

from dataclasses import dataclass, field
import math
from pathlib import Path
from types import MappingProxyType

from ._canon import canonical_json, load_json_bytes, sha256_hex
from .errors import SpecError

SCHEMA_VERSION = "1"


@dataclass(frozen=True)
class Param:
    kind: str  # "int", "real" or "enum"
    required: bool = True
    default: object = None
    lo: float | None = None
    lo_open: bool = False
    hi: float | None = None
    choices: tuple = ()

    def check(self, name, value):
        """Return ``(coerced_value, problem_or_None)``."""
        if self.kind == "enum":
            if value not in self.choices:
                return value, f"out of range: {name}={value!r} must be one of {list(self.choices)}"
            return value, None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return value, f"wrong type: {name} must be numeric, got {type(value).__name__}"
        if not math.isfinite(value):
            return value, f"out of range: {name} must be finite"
        if self.kind == "int":
            if value != int(value):
                return value, f"wrong type: {name} must be an integer, got {value!r}"
            value = int(value)
        else:
            value = float(value)
        if self.lo is not None:
            if self.lo_open and not value > self.lo:
                return value, f"out of range: {name} must be > {self.lo}, got {value!r}"
            if not self.lo_open and not value >= self.lo:
                return value, f"out of range: {name} must be >= {self.lo}, got {value!r}"
        if self.hi is not None and value > self.hi:
            return value, f"out of range: {name} must be <= {self.hi}, got {value!r}"
        return value, None


FAMILIES = MappingProxyType({
    "threshold_separation": {
        # channel may be omitted for single-channel fields only
        "channel": Param("int", required=False, default=None, lo=0),
        "bins": Param("int", lo=2, hi=1 << 20),
        "min_region": Param("int", required=False, default=1, lo=1),
    },
    "homogeneity_merge": {
        "lambda": Param("real", lo=0.0, lo_open=True),
        "stop": Param("enum", required=False, default="local_min",
                      choices=("local_min", "n_levels")),
        "n_levels": Param("int", required=False, default=0, lo=0),
    },
    "global_cut": {
        "sigma_I": Param("real", lo=0.0, lo_open=True),
        "sweep": Param("int", required=False, default=64, lo=1),
        "max_iter": Param("int", required=False, default=5000, lo=1),
        "tol": Param("real", required=False, default=1e-8, lo=0.0, lo_open=True),
    },
    "scale_coherence": {
        "channel": Param("int", required=False, default=None, lo=0),
        "n_scales": Param("int", lo=2, hi=32),
        "base_sigma": Param("real", lo=0.0, lo_open=True),
    },
})


def _check_params(family, params):
    schema = FAMILIES[family]
    problems = []
    out = {}
    for name in sorted(params):
        if name not in schema:
            problems.append(f"unexpected parameter: {name}")
    for name, p in sorted(schema.items()):
        if name not in params or params[name] is None:
            if p.required:
                problems.append(f"missing parameter: {name}")
            elif p.default is not None:
                out[name] = p.default
            continue
        value, problem = p.check(name, params[name])
        if problem:
            problems.append(problem)
        out[name] = value
    if family == "homogeneity_merge" and out.get("stop") == "n_levels":
        if out.get("n_levels", 0) < 1:
            problems.append("out of range: n_levels must be >= 1 when stop is n_levels")
    return out, problems


@dataclass(frozen=True)
class CriterionSpec:
    family: str
    params: dict = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))

    def _key(self):
        try:
            return canonicalize(self)
        except SpecError:
            return (self.family, tuple(sorted(self.params.items())), self.schema_version)

    def __hash__(self):
        return hash(self._key())

    def __eq__(self, other):
        if not isinstance(other, CriterionSpec):
            return NotImplemented
        return self._key() == other._key()

    def resolved(self) -> dict:
        """Validated parameters with defaults filled in."""
        out, problems = _resolve(self)
        if problems:
            raise SpecError(f"invalid {self.family} criterion: " + "; ".join(problems),
                            problems)
        return out

    def to_dict(self) -> dict:
        return {"family": self.family, "params": self.resolved(),
                "schema_version": self.schema_version}

    @classmethod
    def from_dict(cls, doc) -> "CriterionSpec":
        if not isinstance(doc, dict):
            raise SpecError("criterion document must be a JSON object",
                            ["criterion document must be a JSON object"])
        extra = sorted(set(doc) - {"family", "params", "schema_version"})
        if extra:
            raise SpecError(f"unexpected criterion fields: {extra}",
                            [f"unexpected field: {k}" for k in extra])
        params = doc.get("params", {})
        if not isinstance(params, dict):
            raise SpecError("criterion params must be an object",
                            ["criterion params must be an object"])
        return cls(family=doc.get("family"), params=params,
                   schema_version=doc.get("schema_version", SCHEMA_VERSION))


def _resolve(spec):
    if spec.family not in FAMILIES:
        return {}, [f"unknown family: {spec.family!r}; expected one of {sorted(FAMILIES)}"]
    problems = []
    if spec.schema_version != SCHEMA_VERSION:
        problems.append(f"unsupported schema_version {spec.schema_version!r}")
    out, param_problems = _check_params(spec.family, dict(spec.params))
    return out, problems + param_problems


def validate_spec(spec: CriterionSpec) -> list:
    """List every missing, unexpected, or out-of-range parameter; empty means valid."""
    return _resolve(spec)[1]


def canonicalize(spec: CriterionSpec) -> bytes:
    return canonical_json(spec.to_dict())


def criterion_hash(spec: CriterionSpec) -> str:
    return sha256_hex(canonicalize(spec))


def parse_criterion(data: bytes) -> CriterionSpec:
    try:
        doc = load_json_bytes(data)
    except (UnicodeDecodeError, ValueError) as exc:
        raise SpecError(f"criterion is not valid JSON: {exc}", [f"invalid JSON: {exc}"]) from None
    spec = CriterionSpec.from_dict(doc)
    problems = validate_spec(spec)
    if problems:
        raise SpecError("invalid criterion: " + "; ".join(problems), problems)
    return spec


def save_criterion(spec: CriterionSpec, path):
    Path(path).write_bytes(canonicalize(spec))


def load_criterion(path) -> CriterionSpec:
    return parse_criterion(Path(path).read_bytes())
