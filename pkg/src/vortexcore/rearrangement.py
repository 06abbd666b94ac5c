"""Radial profiles, quantized rearrangement classes and the bathtub maximizer.

A profile is quantized to one parcel per grid cell, so a rearrangement class
becomes the set of placements of a finite multiset of cell values.  The
maximizer of ``sum w psi`` over such placements is obtained by sorting.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Grid, ScalarField

SHAPES = ("patch", "cap", "tabulated")
SUBSAMPLES = 8


@dataclass(frozen=True)
class RadialProfile:
    """Radially symmetric nonincreasing vorticity profile supported in ``B_eps``.

    ``mass`` is the signed circulation.  For ``shape="tabulated"`` the profile
    is piecewise constant on shells: ``values[k]`` on ``radii[k-1] <= r < radii[k]``
    (magnitudes; the sign comes from ``mass``), and ``mass`` is recomputed.
    """

    eps: float
    mass: float
    shape: str = "patch"
    radii: tuple = ()
    values: tuple = ()

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("profile support radius must be positive")
        if self.shape not in SHAPES:
            raise ValueError(f"unknown profile shape {self.shape!r}")
        if self.shape == "tabulated":
            r = np.asarray(self.radii, dtype=float)
            v = np.asarray(self.values, dtype=float)
            if r.size == 0 or r.size != v.size:
                raise ValueError("tabulated profile needs matching radii and values")
            if np.any(np.diff(r) <= 0) or r[0] <= 0:
                raise ValueError("tabulated radii must be positive and increasing")
            if np.any(v < 0) or np.any(np.diff(v) > 0):
                raise ValueError("tabulated values must be nonnegative and nonincreasing")
            if r[-1] > self.eps * (1 + 1e-12):
                raise ValueError("tabulated profile extends beyond eps")
            sign = -1.0 if self.mass < 0 else 1.0
            shells = np.pi * np.diff(np.concatenate([[0.0], r**2]))
            object.__setattr__(self, "mass", sign * float(np.sum(v * shells)))
        elif self.mass == 0:
            raise ValueError("profile mass must be nonzero")

    @property
    def sign(self) -> int:
        return -1 if self.mass < 0 else 1

    @property
    def sup(self) -> float:
        k = abs(self.mass)
        if self.shape == "patch":
            return k / (np.pi * self.eps**2)
        if self.shape == "cap":
            return 2.0 * k / (np.pi * self.eps**2)
        return float(self.values[0])

    def density(self, r) -> np.ndarray:
        """Profile magnitude at radius ``r``."""
        r = np.asarray(r, dtype=float)
        if self.shape == "patch":
            return np.where(r <= self.eps, self.sup, 0.0)
        if self.shape == "cap":
            return self.sup * np.clip(1.0 - (r / self.eps) ** 2, 0.0, None)
        radii = np.asarray(self.radii)
        k = np.searchsorted(radii, r, side="right")
        vals = np.concatenate([np.asarray(self.values, dtype=float), [0.0]])
        return vals[k]

    def satisfies_bound(self, M: float) -> bool:
        return self.sup <= M / self.eps**2 * (1 + 1e-12)


@dataclass(frozen=True)
class ParcelList:
    """Parcel magnitudes sorted nonincreasing, one cell area each."""

    values: np.ndarray
    cell_area: float
    sign: int = 1

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(v < 0) or np.any(np.diff(v) > 0):
            raise ValueError("parcel values must be nonnegative and sorted nonincreasing")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    @property
    def mass(self) -> float:
        return self.sign * float(self.values.sum()) * self.cell_area

    @property
    def measure(self) -> float:
        return len(self) * self.cell_area

    def signed(self) -> np.ndarray:
        return self.sign * self.values


def min_grid_for(eps: float, domain_scale: float = 2.0) -> int:
    """Smallest disk grid size resolving ``eps`` by two cells."""
    return int(np.ceil(domain_scale / (eps / 2.0)))


def quantize_profile(p: RadialProfile, grid: Grid, check_resolution: bool = True) -> ParcelList:
    """Discretize a profile into one-cell parcels.

    Patches become ``round(pi eps^2 / dA)`` equal parcels at the patch height.
    Other shapes use cell averages over a reference patch centred on a cell,
    sorted by magnitude with ties kept in row-major cell order.
    """
    if check_resolution and p.eps < 2.0 * grid.h:
        raise ValueError(
            f"eps={p.eps} is under-resolved (needs eps >= 2h = {2 * grid.h:.4g}); "
            f"use a grid of at least n={min_grid_for(p.eps)}"
        )
    area = grid.cell_area
    if p.shape == "patch":
        n = max(1, int(round(np.pi * p.eps**2 / area)))
        return ParcelList(np.full(n, p.sup), area, p.sign)
    mx = int(np.ceil(p.eps / grid.hx)) + 1
    my = int(np.ceil(p.eps / grid.hy)) + 1
    off = (np.arange(SUBSAMPLES) + 0.5) / SUBSAMPLES - 0.5
    cy, cx = np.meshgrid(np.arange(-my, my + 1) * grid.hy, np.arange(-mx, mx + 1) * grid.hx, indexing="ij")
    acc = np.zeros(cx.shape)
    for ox in off:
        for oy in off:
            acc += p.density(np.hypot(cx + ox * grid.hx, cy + oy * grid.hy))
    avg = (acc / SUBSAMPLES**2).ravel()
    order = np.argsort(-avg, kind="stable")
    vals = avg[order]
    return ParcelList(vals[vals > 0], area, p.sign)


def _ranked(cells: np.ndarray, key: np.ndarray) -> np.ndarray:
    """Cells ordered by ``key`` descending, ties by ascending cell index."""
    return cells[np.lexsort((cells, -key))]


def bathtub_maximize(parcels: ParcelList, psi: ScalarField, support, sign: int | None = None) -> ScalarField:
    """Place the parcel multiset on ``support`` so that ``sum w psi dA`` is maximal.

    The largest parcels go to the cells with the largest ``sign * psi``.
    """
    sign = parcels.sign if sign is None else int(sign)
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    support = np.unique(np.asarray(support, dtype=np.int64))
    n = len(parcels)
    if support.size < n:
        raise ValueError(f"support has {support.size} cells but {n} parcels must be placed")
    order = _ranked(support, sign * psi.flat()[support])
    return ScalarField.from_cells(psi.grid, order[:n], sign * parcels.values)


def place_radially(parcels: ParcelList, grid: Grid, center, support=None) -> ScalarField:
    """Deposit parcels outward from ``center`` (largest values nearest)."""
    cells = grid.interior if support is None else np.unique(np.asarray(support))
    if cells.size < len(parcels):
        raise ValueError("not enough cells to place the parcels")
    pts = grid.points(cells)
    d2 = (pts[:, 0] - center[0]) ** 2 + (pts[:, 1] - center[1]) ** 2
    order = _ranked(cells, -d2)
    return ScalarField.from_cells(grid, order[: len(parcels)], parcels.signed())


def distribution(w: ScalarField, support=None) -> np.ndarray:
    """Cell values on ``support`` (default: all interior cells), sorted descending."""
    cells = w.grid.interior if support is None else np.asarray(support, dtype=np.int64)
    return np.sort(w.flat()[cells])[::-1]


def same_rearrangement(f: ScalarField, g: ScalarField, tol: float = 0.0, support=None) -> bool:
    a = distribution(f, support)
    b = distribution(g, support)
    return a.size == b.size and bool(np.all(np.abs(a - b) <= tol))


def symmetric_decreasing(w: ScalarField) -> RadialProfile:
    """Symmetric-decreasing rearrangement as a shell-tabulated radial profile.

    The nonzero cell values, sorted descending, fill shells of one cell area
    each outward from the origin.
    """
    if np.any(w.values < 0):
        raise ValueError("symmetric_decreasing needs a nonnegative field")
    vals = np.sort(w.flat()[w.flat() > 0])[::-1]
    if vals.size == 0:
        raise ValueError("field is identically zero")
    area = w.grid.cell_area
    radii = np.sqrt(np.arange(1, vals.size + 1) * area / np.pi)
    return RadialProfile(float(radii[-1]), 1.0, "tabulated", tuple(radii), tuple(vals))
