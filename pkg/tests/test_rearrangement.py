from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vortexcore.geometry import ScalarField
from vortexcore.rearrangement import (
    ParcelList,
    RadialProfile,
    bathtub_maximize,
    distribution,
    min_grid_for,
    place_radially,
    quantize_profile,
    same_rearrangement,
    symmetric_decreasing,
)

from _fields import disk_grid

GRID = disk_grid(32)
CELLS = GRID.cells_in_ball((0.0, 0.0), 0.5)
_PERMS = {m: np.array(list(permutations(range(m)))) for m in range(1, 9)}


def psi_on(cells, values):
    return ScalarField.from_cells(GRID, cells, values)


def brute_force_max(parcels, psi_vals):
    """Max of sum w psi over all placements of the parcels (zero-padded) on the cells."""
    m = psi_vals.size
    padded = np.zeros(m)
    padded[: parcels.size] = parcels
    return float(np.max(padded[_PERMS[m]] @ psi_vals))


def instance(draw_seed, m=None, sign=1):
    rng = np.random.default_rng(draw_seed)
    m = m or int(rng.integers(1, 9))
    k = int(rng.integers(1, m + 1))
    cells = np.sort(rng.choice(CELLS, size=m, replace=False))
    psi_vals = np.round(rng.normal(size=m), int(rng.integers(0, 3)))  # rounding creates ties
    parcels = np.sort(np.round(rng.random(k) * 5, 1))[::-1]
    return cells, psi_vals, ParcelList(parcels, GRID.cell_area, sign)


# -- profiles ------------------------------------------------------------------

def test_profile_validation():
    with pytest.raises(ValueError):
        RadialProfile(-0.1, 1.0)
    with pytest.raises(ValueError):
        RadialProfile(0.1, 1.0, "ring")
    with pytest.raises(ValueError):
        RadialProfile(0.1, 0.0)
    with pytest.raises(ValueError, match="nonincreasing"):
        RadialProfile(0.1, 1.0, "tabulated", (0.05, 0.1), (1.0, 2.0))
    with pytest.raises(ValueError, match="beyond"):
        RadialProfile(0.1, 1.0, "tabulated", (0.05, 0.2), (2.0, 1.0))


def test_profile_sup_and_bound():
    p = RadialProfile(0.1, 2.0)
    assert p.sup == pytest.approx(2.0 / (np.pi * 0.01))
    assert p.satisfies_bound(2.0 / np.pi)
    assert not p.satisfies_bound(0.5)
    cap = RadialProfile(0.1, -1.0, "cap")
    assert cap.sign == -1
    assert cap.density(0.0) == pytest.approx(cap.sup)
    assert cap.density(0.1) == 0.0


def test_tabulated_mass_recomputed_with_sign():
    p = RadialProfile(0.2, -1.0, "tabulated", (0.1, 0.2), (3.0, 1.0))
    assert p.mass == pytest.approx(-(3.0 * np.pi * 0.01 + 1.0 * np.pi * 0.03))


# -- quantization --------------------------------------------------------------

def test_quantize_patch_four_cells():
    dA = GRID.cell_area
    eps = np.sqrt(4 * dA / np.pi)
    pl = quantize_profile(RadialProfile(eps, 1.0), GRID, check_resolution=False)
    assert len(pl) == 4
    assert np.allclose(pl.values, 1.0 / (4 * dA))
    assert pl.mass == pytest.approx(1.0)


def test_quantize_rejects_under_resolved():
    with pytest.raises(ValueError, match=f"n={min_grid_for(0.05)}"):
        quantize_profile(RadialProfile(0.05, 1.0), GRID)


def test_quantize_cap_monotone_with_lattice_ties():
    g = disk_grid(128)
    pl = quantize_profile(RadialProfile(0.1, 1.0, "cap"), g)
    v = pl.values
    assert np.all(np.diff(v) <= 0) and np.all(v > 0)
    levels, counts = np.unique(v, return_counts=True)
    assert levels.size > len(v) / 8 - 1
    assert counts.max() <= 8


@pytest.mark.parametrize("shape", ["patch", "cap"])
def test_quantized_mass_within_one_parcel(shape):
    for n in (64, 128, 256):
        g = disk_grid(n)
        pl = quantize_profile(RadialProfile(0.1, 1.0, shape), g)
        assert abs(pl.mass - 1.0) <= pl.values[0] * g.cell_area


def test_quantized_cap_mass_converges():
    errs = [abs(quantize_profile(RadialProfile(0.1, 1.0, "cap"), disk_grid(n)).mass - 1.0) for n in (64, 128, 256)]
    assert errs[2] < errs[0]
    assert errs[2] < 1e-3


def test_parcel_list_invariants():
    with pytest.raises(ValueError):
        ParcelList(np.array([1.0, 2.0]), 0.1)
    pl = ParcelList(np.array([2.0, 1.0, 1.0]), 0.25, -1)
    assert pl.measure == pytest.approx(0.75)
    assert pl.mass == pytest.approx(-1.0)


# -- bathtub -----------------------------------------------------------------------

def test_bathtub_small_example():
    cells = CELLS[:4]
    psi = psi_on(cells, [3.0, 1.0, 2.0, 0.0])
    out = bathtub_maximize(ParcelList(np.array([5.0, 5.0]), GRID.cell_area), psi, cells)
    assert list(out.flat()[cells]) == [5.0, 0.0, 5.0, 0.0]


def test_bathtub_constant_psi_uses_cell_order():
    cells = CELLS[10:16]
    psi = psi_on(cells, np.full(6, 0.7))
    out = bathtub_maximize(ParcelList(np.array([3.0, 2.0, 1.0]), GRID.cell_area), psi, cells[::-1])
    assert list(out.flat()[cells]) == [3.0, 2.0, 1.0, 0.0, 0.0, 0.0]


def test_bathtub_negative_sign():
    cells = CELLS[:4]
    psi = psi_on(cells, [-3.0, 1.0, -2.0, 0.5])
    out = bathtub_maximize(ParcelList(np.array([4.0, 1.0]), GRID.cell_area, -1), psi, cells)
    assert list(out.flat()[cells]) == [-4.0, 0.0, -1.0, 0.0]


def test_bathtub_support_too_small():
    with pytest.raises(ValueError, match="support"):
        bathtub_maximize(ParcelList(np.ones(5), GRID.cell_area), psi_on(CELLS[:3], [1, 2, 3]), CELLS[:3])


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, -1]))
def test_bathtub_matches_exhaustive_permutations(seed, sign):
    cells, psi_vals, parcels = instance(seed, sign=sign)
    out = bathtub_maximize(parcels, psi_on(cells, psi_vals), cells)
    got = float(out.flat()[cells] @ psi_vals)
    assert got == pytest.approx(brute_force_max(parcels.signed(), psi_vals), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bathtub_output_is_rearrangement_and_monotone(seed):
    cells, psi_vals, parcels = instance(seed)
    out = bathtub_maximize(parcels, psi_on(cells, psi_vals), cells).flat()[cells]
    expect = np.zeros(cells.size)
    expect[: len(parcels)] = parcels.values
    assert np.array_equal(np.sort(out), np.sort(expect))
    # nothing placed off the support
    assert np.count_nonzero(bathtub_maximize(parcels, psi_on(cells, psi_vals), cells).values) <= cells.size
    # monotone coupling: larger psi never carries a smaller value
    for a in range(cells.size):
        for b in range(cells.size):
            if psi_vals[a] > psi_vals[b]:
                assert out[a] >= out[b]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bathtub_swap_optimal(seed):
    cells, psi_vals, parcels = instance(seed)
    out = bathtub_maximize(parcels, psi_on(cells, psi_vals), cells).flat()[cells]
    base = out @ psi_vals
    for a in range(cells.size):
        for b in range(a + 1, cells.size):
            sw = out.copy()
            sw[a], sw[b] = sw[b], sw[a]
            assert sw @ psi_vals <= base + 1e-12


# -- distributions -------------------------------------------------------------------

def test_same_rearrangement_under_permutation():
    rng = np.random.default_rng(4)
    vals = rng.random(CELLS.size)
    f = ScalarField.from_cells(GRID, CELLS, vals)
    g = ScalarField.from_cells(GRID, CELLS, rng.permutation(vals))
    assert same_rearrangement(f, g)
    assert not same_rearrangement(f, 2.0 * f)
    assert distribution(f, np.array([], dtype=int)).size == 0


def test_symmetric_decreasing_of_indicator():
    rng = np.random.default_rng(8)
    cells = rng.choice(CELLS, size=12, replace=False)
    w = ScalarField.from_cells(GRID, cells, np.ones(12))
    p = symmetric_decreasing(w)
    assert p.shape == "tabulated"
    assert np.allclose(p.values, 1.0)
    assert len(p.values) == 12
    assert p.eps == pytest.approx(np.sqrt(12 * GRID.cell_area / np.pi))
    assert p.mass == pytest.approx(w.integral())


def test_symmetric_decreasing_keeps_distribution_of_radial_input():
    g = disk_grid(64)
    w = ScalarField.from_function(g, lambda X, Y: np.clip(0.3 - np.hypot(X, Y), 0, None))
    p = symmetric_decreasing(w)
    pl = ParcelList(np.array(p.values), g.cell_area)
    back = place_radially(pl, g, (0.0, 0.0))
    assert same_rearrangement(w, back)


def test_symmetric_decreasing_rejects_negative():
    w = ScalarField.from_cells(GRID, CELLS[:2], [1.0, -1.0])
    with pytest.raises(ValueError):
        symmetric_decreasing(w)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_hardy_littlewood_pairing(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 60))
    cells = rng.choice(CELLS, size=k, replace=False)
    w = ScalarField.from_cells(GRID, cells, rng.random(k))
    p = symmetric_decreasing(w)
    w_star = place_radially(ParcelList(np.array(p.values), GRID.cell_area), GRID, (0.0, 0.0))
    # radial nonincreasing weight about the origin
    scale = rng.uniform(0.5, 5.0)
    g = ScalarField.from_function(GRID, lambda X, Y: np.exp(-scale * (X**2 + Y**2)))
    assert w.inner(g) <= w_star.inner(g) + 1e-12
