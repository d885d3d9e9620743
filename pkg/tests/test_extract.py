import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import half_half
from oracles import energy_bruteforce, ncut_exhaustive, otsu_exhaustive
from strukt.criterion import CriterionSpec, criterion_hash
from strukt.errors import CompatibilityError, DegenerateGraphError, SpecError
from strukt.extract import as_partition, extract
from strukt.extract.merge import partition_energy, region_merge_hierarchy
from strukt.extract.otsu import absorb_small, best_threshold, channel_histogram, otsu_partition
from strukt.extract.scalespace import gaussian_kernel, persistence
from strukt.extract.spectral import spectral_bipartition
from strukt.field import MeasurementField
from strukt.products import (Hierarchy, Partition, ScalarStructureField, is_refinement,
                             relabel_canonical)
from strukt.validate import objective_value

ALL_SPECS = [
    CriterionSpec("threshold_separation", {"channel": 0, "bins": 64}),
    CriterionSpec("homogeneity_merge", {"lambda": 0.05}),
    CriterionSpec("global_cut", {"sigma_I": 0.3}),
    CriterionSpec("scale_coherence", {"channel": 0, "n_scales": 3, "base_sigma": 1.0}),
]


@pytest.fixture
def field16(rng):
    v = np.clip(0.3 + 0.05 * rng.standard_normal((2, 16, 16)), 0, 1)
    v[:, 4:12, 4:12] += 0.4
    return MeasurementField(np.clip(v, 0, 1))


# -- dispatch ------------------------------------------------------------------

@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.family)
def test_extract_is_deterministic_and_tagged(field16, spec):
    a, b = extract(field16, spec), extract(field16, spec)
    assert a.product_hash == b.product_hash
    assert a.criterion_digest == criterion_hash(spec)
    assert a.implementation_id.startswith("strukt-")


def test_threshold_needs_channel_on_multichannel_field(rng):
    f = MeasurementField(rng.random((3, 4, 4)))
    with pytest.raises(CompatibilityError):
        extract(f, CriterionSpec("threshold_separation", {"bins": 16}))
    with pytest.raises(CompatibilityError):
        extract(f, CriterionSpec("threshold_separation", {"bins": 16, "channel": 3}))


def test_invalid_spec_is_rejected_before_work(field16):
    with pytest.raises(SpecError):
        extract(field16, CriterionSpec("global_cut", {"sigma_I": -1.0}))


def test_as_partition_views():
    h = Hierarchy((Partition.singletons(1, 2), Partition.one_cell(1, 2)))
    assert as_partition(h) == Partition.one_cell(1, 2)
    assert as_partition(h, 0) == Partition.singletons(1, 2)
    with pytest.raises(CompatibilityError):
        as_partition(ScalarStructureField(np.zeros((1, 2))))


# -- thresholding ----------------------------------------------------------------

def test_otsu_constant_field_is_one_cell():
    res = extract(MeasurementField(np.full((1, 5, 5), 0.4)),
                  CriterionSpec("threshold_separation", {"bins": 256}))
    assert res.product == Partition.one_cell(5, 5)
    assert res.objective == 0.0


def test_otsu_half_zero_half_one_matches_exhaustive_scan():
    f = half_half(8, 8)
    counts, _ = channel_histogram(f.as_float64()[0], 256)
    t, var = best_threshold(counts)
    assert (t, var) == otsu_exhaustive(counts.tolist())
    # every t in 1..255 separates the two spikes equally well: smallest wins
    assert t == 1
    res = extract(f, CriterionSpec("threshold_separation", {"bins": 256}))
    assert res.objective == float(var) == pytest.approx(0.25 * (255 / 256) ** 2)
    assert res.product.n_regions == 2


@given(st.lists(st.integers(0, 40), min_size=2, max_size=24))
def test_otsu_matches_exhaustive_search(counts):
    assert best_threshold(counts) == otsu_exhaustive(counts)


def test_otsu_on_random_256_bin_histograms():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        counts = rng.integers(0, 50, size=256) * (rng.random(256) < 0.3)
        assert best_threshold(counts) == otsu_exhaustive(counts.tolist())


def test_otsu_components_are_four_connected():
    v = np.zeros((1, 3, 3))
    v[0, 0, 0] = v[0, 1, 1] = v[0, 2, 2] = 1.0  # diagonal touches only
    p, _, _ = otsu_partition(v[0], 16)
    # three isolated bright pixels, and the diagonal also cuts the dark class in two
    assert p.n_regions == 5


def test_small_components_are_absorbed_by_longest_boundary():
    lab = np.array([[0, 0, 0, 1],
                    [0, 2, 1, 1],
                    [0, 0, 1, 1]])
    out = absorb_small(lab, 2)
    # region 2 touches 0 on three edges and 1 on one edge
    assert out[1, 1] == out[0, 0]
    assert len(np.unique(out)) == 2


def test_min_region_changes_result_and_digest():
    v = np.zeros((1, 6, 6))
    v[0, :, 3:] = 1.0
    v[0, 1, 1] = 1.0
    f = MeasurementField(v)
    a = extract(f, CriterionSpec("threshold_separation", {"bins": 8}))
    b = extract(f, CriterionSpec("threshold_separation", {"bins": 8, "min_region": 2}))
    assert a.product.n_regions == 3 and b.product.n_regions == 2
    assert a.criterion_digest != b.criterion_digest


# -- region merging --------------------------------------------------------------

def test_merge_constant_image_collapses():
    f = MeasurementField(np.full((1, 6, 5), 0.7))
    res = extract(f, CriterionSpec("homogeneity_merge", {"lambda": 0.1}))
    assert res.product.levels[-1].n_regions == 1
    assert res.objective == pytest.approx(0.0, abs=1e-20)


@pytest.mark.parametrize("lam,regions", [(1.0, 2), (1.99, 2), (2.01, 1), (3.0, 1)])
def test_merge_half_half_threshold_at_lambda_two(lam, regions):
    # merging the halves costs 32*32/64 * 1 = 16 and saves 8 boundary edges
    res = extract(half_half(8, 8), CriterionSpec("homogeneity_merge", {"lambda": lam}))
    final = res.product.levels[-1]
    assert final.n_regions == regions
    expected = 8 * lam if regions == 2 else 16.0
    assert res.objective == pytest.approx(expected, rel=1e-12)


def _replay(values, hierarchy, lam):
    """Apply the logged merges one by one and evaluate the energy from scratch."""
    k, h, w = values.shape
    labels = np.arange(h * w).reshape(h, w)
    vals = values.tolist()
    energy = energy_bruteforce(vals, labels.tolist(), lam)
    steps = []
    for _, (a, b), d in hierarchy.merge_log:
        assert (labels == a).any() and (labels == b).any()
        labels = np.where(labels == b, a, labels)
        after = energy_bruteforce(vals, labels.tolist(), lam)
        steps.append((after - energy, d))
        energy = after
    return labels, energy, steps


@pytest.mark.parametrize("seed", range(4))
def test_merge_log_replays_exactly(seed):
    rng = np.random.default_rng(seed)
    v = np.round(rng.random((2, 5, 6)) * 4) / 4
    lam = 0.2
    h, energy = region_merge_hierarchy(v, lam)
    labels, replayed, steps = _replay(v, h, lam)
    for actual, logged in steps:
        assert logged < 0
        assert actual == pytest.approx(logged, rel=1e-6, abs=1e-12)
    assert replayed == pytest.approx(energy, rel=1e-9)
    assert relabel_canonical(Partition(labels)) == h.levels[-1]


def test_merge_levels_are_dyadic_plus_final():
    rng = np.random.default_rng(3)
    h, _ = region_merge_hierarchy(rng.random((1, 8, 8)), 0.05)
    counts = [p.n_regions for p in h.levels]
    assert counts[0] == 64
    assert all(c & (c - 1) == 0 for c in counts[:-1])
    for a, b in zip(h.levels, h.levels[1:]):
        assert is_refinement(a, b)


def test_merge_n_levels_caps_recorded_levels():
    f = MeasurementField(np.full((1, 8, 8), 0.5))
    res = extract(f, CriterionSpec("homogeneity_merge",
                                   {"lambda": 1.0, "stop": "n_levels", "n_levels": 3}))
    assert len(res.product.levels) == 3
    assert [p.n_regions for p in res.product.levels] == [64, 32, 16]


def test_merge_ties_go_to_smallest_pair():
    f = MeasurementField(np.zeros((1, 1, 3)))
    h, _ = region_merge_hierarchy(f.as_float64(), 1.0)
    assert h.merge_log[0][1] == (0, 1)


def test_merge_objective_matches_recomputation(field16):
    spec = CriterionSpec("homogeneity_merge", {"lambda": 0.05})
    res = extract(field16, spec)
    assert objective_value(field16, res.product, spec) == pytest.approx(res.objective, rel=1e-9)
    assert partition_energy(field16.as_float64(), res.product.levels[-1].labels, 0.05) == \
        pytest.approx(res.objective, rel=1e-12)


# -- spectral cut ----------------------------------------------------------------

def test_spectral_separates_blocks_behind_zero_weight_seam():
    v = np.zeros((1, 4, 6))
    v[0, :, 3:] = 1.0
    part, ncut, _ = spectral_bipartition(v, 0.05)
    assert part == Partition(np.repeat([[0, 0, 0, 1, 1, 1]], 4, axis=0))
    assert ncut < 1e-100


def test_spectral_barbell_cuts_the_bridge():
    # two 2x2 patches joined through a 1-pixel bridge in a 2x5 grid
    v = np.array([[[0.0, 0.0, 0.5, 1.0, 1.0],
                   [0.0, 0.0, 0.5, 1.0, 1.0]]])
    part, ncut, _ = spectral_bipartition(v, 0.6)
    best = ncut_exhaustive(v.tolist(), 0.6)
    assert ncut == pytest.approx(best, rel=1e-12)
    lab = part.labels
    assert lab[0, 0] == lab[1, 1] and lab[0, 3] == lab[1, 4] and lab[0, 0] != lab[0, 4]


def test_spectral_never_beats_exhaustive_minimum():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        v = rng.random((1, 3, 3))
        _, ncut, _ = spectral_bipartition(v, 0.4)
        assert ncut >= ncut_exhaustive(v.tolist(), 0.4) * (1 - 1e-12)


def test_spectral_zero_degree_node_asks_for_larger_sigma():
    v = np.array([[[0.0, 1.0, 0.0]]])
    with pytest.raises(DegenerateGraphError, match="larger sigma_I"):
        spectral_bipartition(v, 1e-3)


def test_spectral_needs_two_pixels():
    with pytest.raises(CompatibilityError):
        spectral_bipartition(np.zeros((1, 1, 1)), 1.0)


def test_spectral_flat_regular_grid_still_splits():
    part, ncut, _ = spectral_bipartition(np.zeros((1, 4, 4)), 1.0)
    assert part.n_regions == 2 and math.isfinite(ncut)


def test_spectral_objective_matches_recomputation(field16):
    spec = CriterionSpec("global_cut", {"sigma_I": 0.3})
    res = extract(field16, spec)
    assert objective_value(field16, res.product, spec) == pytest.approx(res.objective, rel=1e-9)


# -- scale persistence -------------------------------------------------------------

def test_kernel_is_normalized_and_truncated():
    k = gaussian_kernel(2.0)
    assert k.size == 2 * 6 + 1
    assert k.sum() == pytest.approx(1.0)


def test_persistence_constant_field_is_zero():
    out = persistence(np.full((8, 8), 0.3), 4, 1.0)
    assert not out.any()


def test_persistence_disc_beats_background():
    yy, xx = np.mgrid[:32, :32]
    img = np.where((yy - 16) ** 2 + (xx - 16) ** 2 <= 25, 0.9, 0.1)
    out = persistence(img, 4, 1.0)
    inside = (yy - 16) ** 2 + (xx - 16) ** 2 <= 25
    background = out[:, :4].ravel()[: inside.sum()]
    assert out[inside].mean() > background.mean()


@given(st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_persistence_values_are_quantized(n_scales, seed):
    img = np.random.default_rng(seed).random((10, 10))
    out = persistence(img, n_scales, 0.7)
    assert out.min() >= 0 and out.max() <= 1
    assert np.allclose(out * n_scales, np.round(out * n_scales))


def test_persistence_needs_two_scales():
    with pytest.raises(ValueError):
        persistence(np.zeros((4, 4)), 1, 1.0)
