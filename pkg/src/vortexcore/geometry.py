"""Domains, grids, scalar/vector fields and the Dirichlet Green operator.

Two backends evaluate the stream function ``psi = G omega``:

* ``"fd"``: 5-point Dirichlet Poisson problem on the staircase mask, solved
  with a cached sparse LU factorization.
* ``"kernel"``: direct summation of the method-of-images Green function of
  the unit disk over the support of ``omega`` (disk only).

Conventions: ``G(x, y) = -(1/2pi) ln|x - y| - h(x, y)``, ``H(x) = h(x, x)``,
velocity ``v = (d psi/dy, -d psi/dx)``.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import splu

TWO_PI = 2.0 * np.pi
# mean of ln|y| over the unit square centred at 0
SQUARE_LOG_MEAN = np.pi / 4.0 - 1.5 - 0.5 * np.log(2.0)

MIN_CELLS = 16
FD_RESIDUAL_TOL = 1e-10
HYBRID_SOURCE_CUTOFF = 1e-10


class GreenSolveError(RuntimeError):
    """The Poisson solve did not reach the residual contract."""


# ---------------------------------------------------------------------------
# domains and grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainSpec:
    """Bounded simply connected domain: the unit disk or a centred rectangle."""

    kind: str = "disk"
    lx: float = 2.0
    ly: float = 2.0

    def __post_init__(self):
        if self.kind not in ("disk", "rectangle"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "rectangle" and not (self.lx > 0 and self.ly > 0):
            raise ValueError("rectangle sides must be positive")

    @classmethod
    def unit_disk(cls) -> "DomainSpec":
        return cls("disk", 2.0, 2.0)

    @classmethod
    def rectangle(cls, lx: float, ly: float) -> "DomainSpec":
        return cls("rectangle", float(lx), float(ly))

    @property
    def scale(self) -> float:
        return 1.0 if self.kind == "disk" else max(self.lx, self.ly)

    def boundary_distance(self, pts) -> np.ndarray:
        """Signed distance to the boundary, positive inside."""
        p = np.asarray(pts, dtype=float)
        if self.kind == "disk":
            return 1.0 - np.hypot(p[..., 0], p[..., 1])
        dx = 0.5 * self.lx - np.abs(p[..., 0])
        dy = 0.5 * self.ly - np.abs(p[..., 1])
        return np.minimum(dx, dy)

    def contains(self, pts) -> np.ndarray:
        return self.boundary_distance(pts) > 0.0


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform cell-centred grid over the bounding box of a domain.

    ``x0, y0`` is the lower-left corner of cell (0, 0); arrays are indexed
    ``[j, i]`` with ``j`` along y.  Hashing is by identity so that solver
    factorizations can be cached per grid.
    """

    domain: DomainSpec
    nx: int
    ny: int
    x0: float
    y0: float
    hx: float
    hy: float
    mask: np.ndarray = field(repr=False)

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @property
    def xc(self) -> np.ndarray:
        return self.x0 + (np.arange(self.nx) + 0.5) * self.hx

    @property
    def yc(self) -> np.ndarray:
        return self.y0 + (np.arange(self.ny) + 0.5) * self.hy

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xc, self.yc)

    @property
    def interior(self) -> np.ndarray:
        """Flat (row-major) indices of interior cells, ascending."""
        return _interior_index(self)

    def points(self, cells) -> np.ndarray:
        j, i = np.divmod(np.asarray(cells), self.nx)
        return np.stack([self.x0 + (i + 0.5) * self.hx, self.y0 + (j + 0.5) * self.hy], axis=-1)

    def cells_in_ball(self, center, radius) -> np.ndarray:
        """Interior cells whose centres lie in the closed ball."""
        pts = self.points(self.interior)
        d = np.hypot(pts[:, 0] - center[0], pts[:, 1] - center[1])
        return self.interior[d <= radius]


@lru_cache(maxsize=32)
def _interior_index(grid: Grid) -> np.ndarray:
    idx = np.flatnonzero(grid.mask.ravel())
    idx.setflags(write=False)
    return idx


def build_grid(domain: DomainSpec, n: int) -> Grid:
    """Uniform grid with ``n`` cells along the longer side of the domain.

    Disk: the box ``[-1, 1]^2`` is split into ``n x n`` cells and a cell is
    interior when its centre lies strictly inside the disk.  Rectangle: the
    outermost ring of cell centres sits exactly on the boundary (Dirichlet
    nodes); every other cell is interior.
    """
    if n < MIN_CELLS:
        raise ValueError(f"grid needs at least {MIN_CELLS} cells per side, got n={n}")
    if domain.kind == "disk":
        h = 2.0 / n
        x0 = y0 = -1.0
        xc = x0 + (np.arange(n) + 0.5) * h
        X, Y = np.meshgrid(xc, xc)
        mask = X**2 + Y**2 < 1.0
        grid = Grid(domain, n, n, x0, y0, h, h, mask)
    else:
        long_side = max(domain.lx, domain.ly)
        h0 = long_side / (n - 1)
        nx = max(MIN_CELLS, int(round(domain.lx / h0)) + 1)
        ny = max(MIN_CELLS, int(round(domain.ly / h0)) + 1)
        hx = domain.lx / (nx - 1)
        hy = domain.ly / (ny - 1)
        mask = np.zeros((ny, nx), dtype=bool)
        mask[1:-1, 1:-1] = True
        grid = Grid(domain, nx, ny, -0.5 * domain.lx - 0.5 * hx, -0.5 * domain.ly - 0.5 * hy, hx, hy, mask)
    grid.mask.setflags(write=False)
    _, ncomp = ndimage.label(grid.mask)
    if ncomp != 1:
        raise ValueError("interior mask is not connected")
    return grid


@lru_cache(maxsize=16)
def cached_grid(domain: DomainSpec, n: int) -> Grid:
    """``build_grid`` memoized on ``(domain, n)`` so solver caches are shared."""
    return build_grid(domain, n)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScalarField:
    """Cell values on a grid; exactly zero off the interior mask."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"field shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field has non-finite values")
        if np.any(v[~self.grid.mask] != 0.0):
            raise ValueError("field is nonzero outside the interior mask")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: Grid, f) -> "ScalarField":
        X, Y = grid.centers()
        return cls(grid, np.where(grid.mask, f(X, Y), 0.0))

    @classmethod
    def from_cells(cls, grid: Grid, cells, values) -> "ScalarField":
        v = np.zeros(grid.shape)
        v.ravel()[np.asarray(cells)] = values
        return cls(grid, v)

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def inner(self, other: "ScalarField") -> float:
        _same_grid(self, other)
        return float(np.sum(self.values * other.values) * self.grid.cell_area)

    def norm(self, p: float = 2.0) -> float:
        a = np.abs(self.values)
        if np.isinf(p):
            return float(a.max())
        return float((np.sum(a**p) * self.grid.cell_area) ** (1.0 / p))

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_area)

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.values.ravel())

    def __add__(self, other):
        _same_grid(self, other)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other):
        _same_grid(self, other)
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, c: float):
        return ScalarField(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: Grid
    vx: np.ndarray
    vy: np.ndarray

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.vx, self.vy)


def _same_grid(a, b):
    if a.grid is not b.grid:
        raise ValueError("fields live on different grids")


# ---------------------------------------------------------------------------
# Green functions (closed forms)
# ---------------------------------------------------------------------------

def _check_disk_points(*pts):
    for p in pts:
        if np.any(np.hypot(p[..., 0], p[..., 1]) >= 1.0):
            raise ValueError("point on or outside the unit circle")


def _green_disk_array(x, y):
    d2 = (x[..., 0] - y[..., 0]) ** 2 + (x[..., 1] - y[..., 1]) ** 2
    xx = x[..., 0] ** 2 + x[..., 1] ** 2
    yy = y[..., 0] ** 2 + y[..., 1] ** 2
    xy = x[..., 0] * y[..., 0] + x[..., 1] * y[..., 1]
    # |y| |x - y/|y|^2| = sqrt(|x|^2|y|^2 - 2 x.y + 1), regular at y = 0
    return (-np.log(d2) + np.log(xx * yy - 2.0 * xy + 1.0)) / (4.0 * np.pi)


def green_disk(x, y) -> float:
    """Dirichlet Green function of the unit disk (method of images)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_disk_points(x, y)
    if np.any(np.all(x == y, axis=-1)):
        raise ValueError("green_disk is singular at x == y")
    out = _green_disk_array(x, y)
    return float(out) if out.ndim == 0 else out


def grad_green_disk(x, y) -> np.ndarray:
    """Gradient of ``G(x, y)`` with respect to ``x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = x - y
    d2 = np.sum(r * r, axis=-1, keepdims=True)
    yy = np.sum(y * y, axis=-1, keepdims=True)
    xx = np.sum(x * x, axis=-1, keepdims=True)
    xy = np.sum(x * y, axis=-1, keepdims=True)
    q = xx * yy - 2.0 * xy + 1.0
    return (-r / d2 + (yy * x - y) / q) / TWO_PI


def robin_disk(x) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    _check_disk_points(x)
    out = -np.log(1.0 - np.sum(x * x, axis=-1)) / TWO_PI
    return float(out) if out.ndim == 0 else out


def grad_robin_disk(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x / (np.pi * (1.0 - np.sum(x * x, axis=-1, keepdims=True)))


# Rectangle [0,a]x[0,b]: odd image lattice with periods 2a, 2ib collapses to
# Jacobi theta_1 with nome exp(-pi b / a); the quadratic terms cancel.

def _theta1(u, q, nterms=40):
    n = np.arange(nterms)
    c = 2.0 * (-1.0) ** n * q ** ((n + 0.5) ** 2)
    u = np.asarray(u, dtype=complex)[..., None]
    return np.sum(c * np.sin((2 * n + 1) * u), axis=-1)


def _theta1_prime0(q, nterms=40):
    n = np.arange(nterms)
    return float(np.sum(2.0 * (-1.0) ** n * (2 * n + 1) * q ** ((n + 0.5) ** 2)))


def _rect_complex(domain, p):
    p = np.asarray(p, dtype=float)
    return (p[..., 0] + 0.5 * domain.lx) + 1j * (p[..., 1] + 0.5 * domain.ly)


def green_rectangle(domain: DomainSpec, x, y):
    """Dirichlet Green function of a centred rectangle via theta series."""
    a, b = domain.lx, domain.ly
    q = np.exp(-np.pi * b / a)
    z, w = _rect_complex(domain, x), _rect_complex(domain, y)
    k = np.pi / (2.0 * a)
    num = _theta1(k * (z - w), q) * _theta1(k * (z + w), q)
    den = _theta1(k * (z - np.conj(w)), q) * _theta1(k * (z + np.conj(w)), q)
    out = -np.log(np.abs(num / den)) / TWO_PI
    return float(out) if np.ndim(out) == 0 else out


def robin_rectangle(domain: DomainSpec, x):
    a, b = domain.lx, domain.ly
    q = np.exp(-np.pi * b / a)
    z = _rect_complex(domain, x)
    k = np.pi / (2.0 * a)
    num = _theta1_prime0(q) * k * _theta1(2.0 * k * z, q)
    den = _theta1(2.0 * k * 1j * z.imag, q) * _theta1(2.0 * k * z.real, q)
    out = np.log(np.abs(num / den)) / TWO_PI
    return float(out) if np.ndim(out) == 0 else out


def green(domain: DomainSpec, x, y):
    """``G(x, y)`` on either supported domain."""
    if domain.kind == "disk":
        return green_disk(x, y)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(~domain.contains(x)) or np.any(~domain.contains(y)):
        raise ValueError("point on or outside the rectangle")
    if np.any(np.all(x == y, axis=-1)):
        raise ValueError("Green function is singular at x == y")
    return green_rectangle(domain, x, y)


def regular_part(x, y, domain: DomainSpec | None = None):
    """``h(x, y) = -(1/2pi) ln|x - y| - G(x, y)``."""
    domain = domain or DomainSpec.unit_disk()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if domain.kind == "disk":
        _check_disk_points(x, y)
        xx = np.sum(x * x, axis=-1)
        yy = np.sum(y * y, axis=-1)
        out = -np.log(xx * yy - 2.0 * np.sum(x * y, axis=-1) + 1.0) / (4.0 * np.pi)
        return float(out) if np.ndim(out) == 0 else out
    if np.allclose(x, y, rtol=0, atol=1e-300):
        return robin(x, domain)
    return -np.log(np.linalg.norm(x - y, axis=-1)) / TWO_PI - green(domain, x, y)


def robin(x, domain: DomainSpec | None = None):
    """Robin function ``H(x) = h(x, x)`` in closed form."""
    domain = domain or DomainSpec.unit_disk()
    if domain.kind == "disk":
        return robin_disk(x)
    if np.any(~domain.contains(np.asarray(x, dtype=float))):
        raise ValueError("point on or outside the rectangle")
    return robin_rectangle(domain, x)


def grad_robin(x, domain: DomainSpec | None = None, step: float = 1e-5):
    domain = domain or DomainSpec.unit_disk()
    if domain.kind == "disk":
        return grad_robin_disk(x)
    x = np.asarray(x, dtype=float)
    s = step * domain.scale
    ex = np.array([s, 0.0])
    ey = np.array([0.0, s])
    gx = (robin(x + ex, domain) - robin(x - ex, domain)) / (2 * s)
    gy = (robin(x + ey, domain) - robin(x - ey, domain)) / (2 * s)
    return np.stack([gx, gy], axis=-1)


# ---------------------------------------------------------------------------
# Green operator backends
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _laplacian(grid: Grid):
    """Sparse ``-Delta_h`` on interior cells and its LU factorization."""
    idx = grid.interior
    n = idx.size
    pos = -np.ones(grid.nx * grid.ny, dtype=np.int64)
    pos[idx] = np.arange(n)
    j, i = np.divmod(idx, grid.nx)
    cx, cy = 1.0 / grid.hx**2, 1.0 / grid.hy**2
    rows = [np.arange(n)]
    cols = [np.arange(n)]
    vals = [np.full(n, 2 * cx + 2 * cy)]
    for dj, di, c in ((0, 1, cx), (0, -1, cx), (1, 0, cy), (-1, 0, cy)):
        jj, ii = j + dj, i + di
        ok = (jj >= 0) & (jj < grid.ny) & (ii >= 0) & (ii < grid.nx)
        nb = np.full(n, -1)
        nb[ok] = pos[jj[ok] * grid.nx + ii[ok]]
        sel = nb >= 0
        rows.append(np.flatnonzero(sel))
        cols.append(nb[sel])
        vals.append(np.full(sel.sum(), -c))
    A = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsc()
    return A, splu(A)


def _solve_fd(grid: Grid, rhs: np.ndarray) -> np.ndarray:
    """Solve ``-Delta_h u = rhs`` for interior-ordered right-hand side(s)."""
    A, lu = _laplacian(grid)
    u = lu.solve(rhs)
    r = A @ u - rhs
    scale = np.linalg.norm(rhs, axis=0)
    res = np.linalg.norm(r, axis=0) / np.where(scale > 0, scale, 1.0)
    if np.any(res > FD_RESIDUAL_TOL):
        # one step of iterative refinement before giving up
        u = u - lu.solve(r)
        res = np.linalg.norm(A @ u - rhs, axis=0) / np.where(scale > 0, scale, 1.0)
        if np.any(res > FD_RESIDUAL_TOL):
            raise GreenSolveError(f"fd Poisson solve stalled at relative residual {np.max(res):.3e}")
    return u


@lru_cache(maxsize=8)
def _ghosts(grid: Grid):
    """Exterior neighbours of interior cells.

    Returns the interior positions that touch a non-interior neighbour, the
    index of that neighbour in a table of unique ghost points, the stencil
    coefficient, and the ghost point coordinates.
    """
    idx = grid.interior
    j, i = np.divmod(idx, grid.nx)
    rows, keys, coef = [], [], []
    for dj, di, c in ((0, 1, 1 / grid.hx**2), (0, -1, 1 / grid.hx**2), (1, 0, 1 / grid.hy**2), (-1, 0, 1 / grid.hy**2)):
        jj, ii = j + dj, i + di
        inside = np.zeros(idx.size, dtype=bool)
        ok = (jj >= 0) & (jj < grid.ny) & (ii >= 0) & (ii < grid.nx)
        inside[ok] = grid.mask[jj[ok], ii[ok]]
        sel = np.flatnonzero(~inside)
        rows.append(sel)
        # ghost cells may lie outside the array; key them on shifted indices
        keys.append((jj[sel] + 1) * (grid.nx + 2) + (ii[sel] + 1))
        coef.append(np.full(sel.size, c))
    keys = np.concatenate(keys)
    uniq, inv = np.unique(keys, return_inverse=True)
    gj, gi = np.divmod(uniq, grid.nx + 2)
    pts = np.stack([grid.x0 + (gi - 0.5) * grid.hx, grid.y0 + (gj - 0.5) * grid.hy], axis=-1)
    return np.concatenate(rows), inv, np.concatenate(coef), pts


@numba.njit(parallel=True, cache=True)
def _kernel_sum(tx, ty, sx, sy, sw, self_free):
    nt = tx.size
    ns = sx.size
    out = np.zeros(nt)
    c = 1.0 / (4.0 * np.pi)
    for t in numba.prange(nt):
        xt = tx[t]
        yt = ty[t]
        xx = xt * xt + yt * yt
        acc = 0.0
        for s in range(ns):
            dx = xt - sx[s]
            dy = yt - sy[s]
            d2 = dx * dx + dy * dy
            yy = sx[s] * sx[s] + sy[s] * sy[s]
            q = xx * yy - 2.0 * (xt * sx[s] + yt * sy[s]) + 1.0
            if d2 == 0.0:
                acc += sw[s] * (self_free + c * np.log(q))
            else:
                acc += sw[s] * c * (np.log(q) - np.log(d2))
        out[t] = acc
    return out


def _kernel_apply(grid: Grid, w: np.ndarray, targets: np.ndarray) -> np.ndarray:
    src = np.flatnonzero(w)
    out = np.zeros(targets.size)
    if src.size == 0:
        return out
    sp = grid.points(src)
    tp = grid.points(targets)
    # cell average of -(1/2pi) ln|x - y| over the source's own cell
    self_free = -(np.log(grid.hx) + SQUARE_LOG_MEAN) / TWO_PI
    return _kernel_sum(tp[:, 0].copy(), tp[:, 1].copy(), sp[:, 0].copy(), sp[:, 1].copy(),
                       w[src] * grid.cell_area, self_free)


def _apply_hybrid(omega: ScalarField) -> ScalarField:
    """5-point solve whose exterior neighbours carry exact boundary data.

    The ghost values are the image-formula stream function continued just
    outside the disk, so the staircase no longer acts as the boundary.
    Sources below ``HYBRID_SOURCE_CUTOFF * max|omega|`` are left out of the
    ghost sums only.
    """
    grid = omega.grid
    idx = grid.interior
    w = omega.flat()
    rhs = w[idx].copy()
    if not np.any(rhs):
        return ScalarField.zeros(grid)
    rows, inv, coef, gpts = _ghosts(grid)
    wk = np.where(np.abs(w) > HYBRID_SOURCE_CUTOFF * np.abs(w).max(), w, 0.0)
    src = np.flatnonzero(wk)
    sp = grid.points(src)
    ghost = _kernel_sum(gpts[:, 0].copy(), gpts[:, 1].copy(), sp[:, 0].copy(), sp[:, 1].copy(),
                        wk[src] * grid.cell_area, 0.0)
    np.add.at(rhs, rows, coef * ghost[inv])
    return ScalarField.from_cells(grid, idx, _solve_fd(grid, rhs))


def apply_green(omega: ScalarField, backend: str = "fd", targets=None) -> ScalarField:
    """Stream function ``psi = G omega`` with ``psi = 0`` off the mask.

    ``targets`` (kernel backend only) restricts evaluation to a subset of
    interior cells; other cells are returned as zero.
    """
    grid = omega.grid
    if backend == "kernel":
        if grid.domain.kind != "disk":
            raise NotImplementedError("kernel backend is only available on the unit disk")
        cells = grid.interior if targets is None else np.asarray(targets)
        vals = _kernel_apply(grid, omega.flat(), cells)
        return ScalarField.from_cells(grid, cells, vals)
    if backend == "hybrid":
        if grid.domain.kind != "disk":
            raise NotImplementedError("hybrid backend is only available on the unit disk")
        if targets is not None:
            raise ValueError("targets is only supported by the kernel backend")
        return _apply_hybrid(omega)
    if backend != "fd":
        raise ValueError(f"unknown Green backend {backend!r}")
    if targets is not None:
        raise ValueError("targets is only supported by the kernel backend")
    idx = grid.interior
    rhs = omega.flat()[idx]
    if not np.any(rhs):
        return ScalarField.zeros(grid)
    return ScalarField.from_cells(grid, idx, _solve_fd(grid, rhs))


def robin_fd(grid: Grid, pts, ring_cells: float = 6.0, nring: int = 64) -> np.ndarray:
    """Robin function at ``pts`` extracted from discrete Green solves.

    For each point a unit source is placed in its cell; by the mean value
    property ``H(x)`` equals the average of ``-(1/2pi) ln r - G(x, y)`` over
    the circle ``|y - x| = r``, which is sampled by bilinear interpolation
    of the discrete solution at ``r`` a few cells out.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    dist = grid.domain.boundary_distance(pts)
    if np.any(dist <= 0):
        raise ValueError("robin_fd point outside the domain")
    if np.any(dist < grid.h):
        warnings.warn("Robin extraction within one cell of the boundary; accuracy degraded", stacklevel=2)
    i = np.floor((pts[:, 0] - grid.x0) / grid.hx).astype(int)
    j = np.floor((pts[:, 1] - grid.y0) / grid.hy).astype(int)
    cells = j * grid.nx + i
    idx = grid.interior
    pos = np.searchsorted(idx, cells)
    if np.any(pos >= idx.size) or np.any(idx[np.minimum(pos, idx.size - 1)] != cells):
        raise ValueError("robin_fd point lies in a non-interior cell")
    src_pts = grid.points(cells)
    theta = 2 * np.pi * (np.arange(nring) + 0.5) / nring
    out = np.empty(len(pts))
    batch = 256
    for b0 in range(0, len(pts), batch):
        sl = slice(b0, b0 + batch)
        rhs = np.zeros((idx.size, len(cells[sl])))
        rhs[pos[sl], np.arange(len(cells[sl]))] = 1.0 / grid.cell_area
        sol = _solve_fd(grid, rhs)
        full = np.zeros((len(cells[sl]), grid.nx * grid.ny))
        full[:, idx] = sol.T
        for k, c in enumerate(src_pts[sl]):
            r = min(ring_cells * grid.h, 0.5 * max(dist[b0 + k], 2.0 * grid.h))
            r = max(r, 2.0 * grid.h)
            ring = c + r * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
            g = bilinear(grid, full[k].reshape(grid.shape), ring)
            out[b0 + k] = -np.log(r) / TWO_PI - g.mean()
    return out


# ---------------------------------------------------------------------------
# derived quantities
# ---------------------------------------------------------------------------

def velocity(psi: ScalarField) -> VectorField:
    """``v = (d psi/dy, -d psi/dx)``; centred differences, one-sided at the mask edge."""
    grid = psi.grid
    m = grid.mask
    p = psi.values

    def deriv(axis, h):
        fwd = np.zeros_like(p)
        bwd = np.zeros_like(p)
        mf = np.zeros_like(m)
        mb = np.zeros_like(m)
        sl_hi = [slice(None)] * 2
        sl_lo = [slice(None)] * 2
        sl_hi[axis] = slice(1, None)
        sl_lo[axis] = slice(None, -1)
        fwd[tuple(sl_lo)] = p[tuple(sl_hi)]
        mf[tuple(sl_lo)] = m[tuple(sl_hi)]
        bwd[tuple(sl_hi)] = p[tuple(sl_lo)]
        mb[tuple(sl_hi)] = m[tuple(sl_lo)]
        d = np.zeros_like(p)
        both = mf & mb
        d[both] = (fwd[both] - bwd[both]) / (2 * h)
        only_f = mf & ~mb
        d[only_f] = (fwd[only_f] - p[only_f]) / h
        only_b = mb & ~mf
        d[only_b] = (p[only_b] - bwd[only_b]) / h
        d[~m] = 0.0
        return d

    return VectorField(grid, deriv(0, grid.hy), -deriv(1, grid.hx))


def kinetic_energy(omega: ScalarField, psi: ScalarField) -> float:
    """``E = 1/2 sum omega psi dA``."""
    _same_grid(omega, psi)
    return 0.5 * omega.inner(psi)


def bilinear(grid: Grid, values: np.ndarray, pts) -> np.ndarray:
    """Bilinear interpolation of cell-centred ``values`` at points (zero beyond the array)."""
    pts = np.asarray(pts, dtype=float)
    fx = (pts[..., 0] - grid.x0) / grid.hx - 0.5
    fy = (pts[..., 1] - grid.y0) / grid.hy - 0.5
    return ndimage.map_coordinates(values, [fy.ravel(), fx.ravel()], order=1, mode="constant",
                                   cval=0.0).reshape(fx.shape)


# ---------------------------------------------------------------------------
# snapshot file format
# ---------------------------------------------------------------------------

VXF_MAGIC = b"VXF1"
_VXF_HEADER = struct.Struct("<4sII4d")


@dataclass(frozen=True)
class Snapshot:
    nx: int
    ny: int
    x0: float
    y0: float
    hx: float
    hy: float
    values: np.ndarray


def write_vxf(path, f: ScalarField | np.ndarray, grid: Grid | None = None) -> None:
    """Write a field as ``VXF1``: magic, u32 nx, ny, f64 x0, y0, hx, hy, f64 values row-major."""
    if isinstance(f, ScalarField):
        grid, vals = f.grid, f.values
    else:
        vals = np.asarray(f, dtype=float)
    with open(path, "wb") as fh:
        fh.write(_VXF_HEADER.pack(VXF_MAGIC, grid.nx, grid.ny, grid.x0, grid.y0, grid.hx, grid.hy))
        fh.write(np.ascontiguousarray(vals, dtype="<f8").tobytes())


def read_vxf(path) -> Snapshot:
    with open(path, "rb") as fh:
        head = fh.read(_VXF_HEADER.size)
        magic, nx, ny, x0, y0, hx, hy = _VXF_HEADER.unpack(head)
        if magic != VXF_MAGIC:
            raise ValueError(f"{path}: not a VXF1 file")
        vals = np.frombuffer(fh.read(), dtype="<f8")
    if vals.size != nx * ny:
        raise ValueError(f"{path}: expected {nx * ny} values, found {vals.size}")
    return Snapshot(nx, ny, x0, y0, hx, hy, vals.reshape(ny, nx).astype(float))
