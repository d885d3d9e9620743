"""Criterion-parameterized structure extraction.

:func:`extract` dispatches a :class:`~strukt.criterion.CriterionSpec` to the
operator for its family. All operators are seedless and deterministic.
"""

from dataclasses import dataclass, field

import numpy as np

from .._build import implementation_id
from ..criterion import CriterionSpec, criterion_hash
from ..errors import CompatibilityError
from ..products import Hierarchy, Partition, ScalarStructureField, product_hash
from . import merge, otsu, scalespace, spectral


@dataclass(frozen=True)
class ExtractionResult:
    product: object
    objective: float | None
    criterion_digest: str
    implementation_id: str
    family: str
    info: dict = field(default_factory=dict)

    @property
    def product_hash(self) -> str:
        return product_hash(self.product)


def _channel(field, params, family):
    ch = params.get("channel")
    if ch is None:
        if field.channels != 1:
            raise CompatibilityError(
                f"{family} needs a 'channel' parameter for a {field.channels}-channel field")
        return 0
    if ch >= field.channels:
        raise CompatibilityError(f"channel {ch} does not exist in a {field.channels}-channel field")
    return ch


def otsu_partition(field, params):
    ch = _channel(field, params, "threshold_separation")
    part, obj, t = otsu.otsu_partition(field.as_float64()[ch], params["bins"],
                                       params.get("min_region", 1))
    return part, obj, {"threshold_index": t, "channel": ch}


def region_merge_hierarchy(field, params):
    h, energy = merge.region_merge_hierarchy(field.as_float64(), params["lambda"],
                                             params.get("stop", "local_min"),
                                             params.get("n_levels", 0))
    return h, energy, {"n_levels": len(h.levels), "n_merges": len(h.merge_log)}


def spectral_bipartition(field, params):
    part, ncut, info = spectral.spectral_bipartition(
        field.as_float64(), params["sigma_I"], params.get("sweep", 64),
        params.get("max_iter", 5000), params.get("tol", 1e-8))
    return part, ncut, info


def scale_persistence_field(field, params):
    ch = _channel(field, params, "scale_coherence")
    values = scalespace.persistence(field.as_float64()[ch], params["n_scales"],
                                    params["base_sigma"])
    return ScalarStructureField(values), None, {"channel": ch}


OPERATORS = {
    "threshold_separation": otsu_partition,
    "homogeneity_merge": region_merge_hierarchy,
    "global_cut": spectral_bipartition,
    "scale_coherence": scale_persistence_field,
}


def extract(field, spec: CriterionSpec) -> ExtractionResult:
    """Apply the operator selected by ``spec`` to ``field``."""
    params = spec.resolved()
    product, objective, info = OPERATORS[spec.family](field, params)
    if objective is not None and not np.isfinite(objective):
        raise ArithmeticError(f"{spec.family} produced a non-finite objective")
    return ExtractionResult(product=product, objective=objective,
                            criterion_digest=criterion_hash(spec),
                            implementation_id=implementation_id(),
                            family=spec.family, info=info)


def as_partition(product, level=None) -> Partition:
    """Partition view of a product; hierarchies yield ``level`` (default: final)."""
    if isinstance(product, Partition):
        return product
    if isinstance(product, Hierarchy):
        idx = len(product.levels) - 1 if level is None else level
        if not 0 <= idx < len(product.levels):
            raise IndexError(f"level {level} out of range for {len(product.levels)} levels")
        return product.levels[idx]
    raise CompatibilityError(f"{type(product).__name__} is not a partition-valued product")


__all__ = ["ExtractionResult", "extract", "as_partition", "OPERATORS",
           "otsu_partition", "region_merge_hierarchy", "spectral_bipartition",
           "scale_persistence_field"]
