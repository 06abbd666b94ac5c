"""Semi-Lagrangian evolution of the vorticity equation and stability runs.

Per step: ``psi = G omega``, ``v = grad_perp psi``, characteristics traced
back with a midpoint rule using the extrapolated half-step velocity
``1.5 v^n - 0.5 v^{n-1}``, and ``omega`` interpolated at departure points.
Departure points that land outside the domain are moved to the nearest
interior cell centre.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import geometry as geo
from .geometry import Grid, ScalarField

log = logging.getLogger(__name__)

MAX_HALVINGS = 6


class CFLError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float
    T: float
    interp: str = "cubic"
    cfl: float = 0.8
    stride: int = 1
    backend: str = "fd"
    reverse: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.T < 0:
            raise ValueError("T must be nonnegative")
        if self.interp not in ("linear", "cubic"):
            raise ValueError(f"unknown interpolation {self.interp!r}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


@dataclass
class Evolution:
    times: np.ndarray
    fields: list
    steps: int = 0
    substeps: int = 0

    @property
    def final(self) -> ScalarField:
        return self.fields[-1]


def _nearest_interior(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    _, (jj, ii) = ndimage.distance_transform_edt(~grid.mask, return_indices=True)
    return jj, ii


def _interp(values: np.ndarray, fy: np.ndarray, fx: np.ndarray, order: int) -> np.ndarray:
    out = ndimage.map_coordinates(values, [fy, fx], order=order, mode="constant", cval=0.0)
    if order > 1:
        # clip to the 2x2 stencil range to keep the scheme bounded
        j0 = np.clip(np.floor(fy).astype(int), 0, values.shape[0] - 2)
        i0 = np.clip(np.floor(fx).astype(int), 0, values.shape[1] - 2)
        c = np.stack([values[j0, i0], values[j0 + 1, i0], values[j0, i0 + 1], values[j0 + 1, i0 + 1]])
        out = np.clip(out, c.min(axis=0), c.max(axis=0))
    return out


class _Stepper:
    def __init__(self, grid: Grid, cfg: EvolutionConfig):
        self.grid = grid
        self.cfg = cfg
        self.order = 3 if cfg.interp == "cubic" else 1
        self.near_j, self.near_i = _nearest_interior(grid)
        self.idx = grid.interior
        self.jc, self.ic = np.divmod(self.idx, grid.nx)
        self.pts = grid.points(self.idx)
        self.v_prev = None

    def velocity(self, omega: ScalarField) -> geo.VectorField:
        psi = geo.apply_green(omega, self.cfg.backend)
        v = geo.velocity(psi)
        if self.cfg.reverse:
            v = geo.VectorField(v.grid, -v.vx, -v.vy)
        return v

    def _sample_v(self, vx, vy, pts):
        g = self.grid
        return np.stack([geo.bilinear(g, vx, pts), geo.bilinear(g, vy, pts)], axis=-1)

    def step(self, omega: ScalarField, v: geo.VectorField, dt: float) -> ScalarField:
        g = self.grid
        if self.v_prev is None:
            vx, vy = v.vx, v.vy
        else:
            vx = 1.5 * v.vx - 0.5 * self.v_prev.vx
            vy = 1.5 * v.vy - 0.5 * self.v_prev.vy
        v_here = np.stack([vx.ravel()[self.idx], vy.ravel()[self.idx]], axis=-1)
        mid = self.pts - 0.5 * dt * v_here
        dep = self.pts - dt * self._sample_v(vx, vy, mid)
        fx = (dep[:, 0] - g.x0) / g.hx - 0.5
        fy = (dep[:, 1] - g.y0) / g.hy - 0.5
        ci = np.clip(np.rint(fx).astype(int), 0, g.nx - 1)
        cj = np.clip(np.rint(fy).astype(int), 0, g.ny - 1)
        out_dom = ~g.domain.contains(dep) | ~g.mask[cj, ci]
        if np.any(out_dom):
            fx = fx.copy()
            fy = fy.copy()
            fx[out_dom] = self.near_i[cj[out_dom], ci[out_dom]]
            fy[out_dom] = self.near_j[cj[out_dom], ci[out_dom]]
        vals = _interp(omega.values, fy, fx, self.order)
        self.v_prev = v
        return ScalarField.from_cells(g, self.idx, vals)


def evolve(omega0: ScalarField, cfg: EvolutionConfig, callback=None, store: bool = True) -> Evolution:
    """Advance ``omega0`` to ``cfg.T``; snapshots every ``cfg.stride`` steps.

    A step whose CFL number exceeds ``cfg.cfl`` is split into ``2^m``
    substeps (``m <= 6``); beyond that ``CFLError`` is raised.
    ``callback(t, omega)`` is called at every snapshot; with ``store=False``
    only the initial and final fields are kept.
    """
    grid = omega0.grid
    st = _Stepper(grid, cfg)
    nsteps = int(round(cfg.T / cfg.dt))
    omega = omega0
    times, fields = [0.0], [omega0]
    if callback:
        callback(0.0, omega0)
    nsub_total = 0
    h = min(grid.hx, grid.hy)
    for n in range(nsteps):
        if not np.any(omega.values):
            omega = ScalarField.zeros(grid)
        else:
            v = st.velocity(omega)
            vmax = float(v.magnitude().max())
            m = 0
            while cfg.dt / 2**m * vmax / h > cfg.cfl:
                m += 1
                if m > MAX_HALVINGS:
                    raise CFLError(f"CFL {cfg.dt * vmax / h:.3g} cannot be met even at dt/2^{MAX_HALVINGS}")
            if m:
                log.info("step %d: dt reduced by 2^%d (CFL %.3g)", n, m, cfg.dt * vmax / h)
            sub = cfg.dt / 2**m
            for k in range(2**m):
                if k:
                    v = st.velocity(omega)
                omega = st.step(omega, v, sub)
            nsub_total += 2**m
        t = (n + 1) * cfg.dt
        if (n + 1) % cfg.stride == 0 or n + 1 == nsteps:
            if store or n + 1 == nsteps:
                times.append(t)
                fields.append(omega)
            if callback:
                callback(t, omega)
    return Evolution(np.array(times), fields, nsteps, nsub_total)


# ---------------------------------------------------------------------------
# monitors
# ---------------------------------------------------------------------------

def distribution_distance(a: ScalarField, b: ScalarField) -> float:
    """L1 distance between sorted cell-value lists (``dA``-weighted)."""
    idx = a.grid.interior
    sa = np.sort(a.flat()[idx])
    sb = np.sort(b.flat()[idx])
    return float(np.abs(sa - sb).sum() * a.grid.cell_area)


@dataclass
class ConservationReport:
    times: np.ndarray
    energy: np.ndarray
    circulation: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    norms: dict
    dist_distance: np.ndarray
    drift: dict = field(default_factory=dict)


def _rel_drift(x: np.ndarray) -> float:
    ref = abs(x[0]) if x[0] != 0 else max(np.abs(x).max(), 1e-300)
    return float(np.max(np.abs(x - x[0])) / ref)


def conservation_report(ev: Evolution, p: float = 4.0, backend: str = "fd") -> ConservationReport:
    """Relative drifts of energy, circulations, L^1/L^2/L^p norms and the distribution."""
    if len(ev.fields) < 2:
        raise ValueError("need at least two snapshots")
    w0 = ev.fields[0]
    E, C, P, N, dd = [], [], [], [], []
    norms = {"L1": [], "L2": [], f"L{p:g}": []}
    for w in ev.fields:
        E.append(geo.kinetic_energy(w, geo.apply_green(w, backend)))
        C.append(w.integral())
        P.append(float(np.clip(w.values, 0, None).sum() * w.grid.cell_area))
        N.append(float(np.clip(w.values, None, 0).sum() * w.grid.cell_area))
        norms["L1"].append(w.norm(1))
        norms["L2"].append(w.norm(2))
        norms[f"L{p:g}"].append(w.norm(p))
        dd.append(distribution_distance(w, w0))
    E, C, P, N, dd = map(np.array, (E, C, P, N, dd))
    norms = {k: np.array(v) for k, v in norms.items()}
    l1 = max(norms["L1"][0], 1e-300)
    drift = {
        "energy": _rel_drift(E),
        # absolute change relative to the total vorticity mass
        "circulation": float(np.max(np.abs(C - C[0])) / l1),
        "positive": float(np.max(np.abs(P - P[0])) / l1),
        "negative": float(np.max(np.abs(N - N[0])) / l1),
        "distribution": float(dd.max() / l1),
    }
    for k, v in norms.items():
        drift[k] = _rel_drift(v)
    return ConservationReport(ev.times, E, C, P, N, norms, dd, drift)


# ---------------------------------------------------------------------------
# perturbations and stability
# ---------------------------------------------------------------------------

def _components(w: ScalarField):
    lab, n = ndimage.label(w.values != 0)
    return lab, n


def perturb(omega_bar: ScalarField, kind: str, amplitude: float, seed: int = 0, eps: float = 1.0) -> ScalarField:
    """Seeded perturbation of a vorticity field.

    ``shift``: translate by ``amplitude * eps`` in a random direction (linear
    re-deposit).  ``noise``: add smooth bumps of sup-norm
    ``amplitude * |omega_bar|_inf`` within ``2 eps`` of the vorticity support.
    """
    grid = omega_bar.grid
    if amplitude == 0:
        return omega_bar
    rng = np.random.default_rng(seed)
    X, Y = grid.centers()
    if kind == "shift":
        theta = rng.uniform(0.0, 2.0 * np.pi)
        s = amplitude * eps * np.array([np.cos(theta), np.sin(theta)])
        fx = (X - s[0] - grid.x0) / grid.hx - 0.5
        fy = (Y - s[1] - grid.y0) / grid.hy - 0.5
        vals = ndimage.map_coordinates(omega_bar.values, [fy, fx], order=1, mode="constant", cval=0.0)
        # support of the shifted field must stay on interior cells
        moved = ndimage.binary_dilation(omega_bar.values != 0, iterations=int(np.ceil(np.abs(s).max() / grid.h)) + 1)
        if np.any(moved & ~grid.mask):
            raise ValueError("shifted support would leave the domain")
        return ScalarField(grid, np.where(grid.mask, vals, 0.0))
    if kind == "noise":
        near = ndimage.binary_dilation(omega_bar.values != 0, iterations=max(1, int(np.ceil(2 * eps / grid.h))))
        if np.any(near & ~grid.mask):
            raise ValueError("noise region would leave the domain")
        cells = np.flatnonzero(near.ravel())
        pts = grid.points(cells)
        bump = np.zeros(grid.nx * grid.ny)
        for _ in range(8):
            c = pts[rng.integers(cells.size)]
            r = np.hypot(X - c[0], Y - c[1]).ravel() / eps
            bump += rng.choice([-1.0, 1.0]) * np.where(r < 1, np.exp(1 - 1 / np.maximum(1 - r**2, 1e-300)), 0.0)
        bump = bump.reshape(grid.shape) * near
        if np.abs(bump).max() > 0:
            bump *= amplitude * np.abs(omega_bar.values).max() / np.abs(bump).max()
        return ScalarField(grid, np.where(grid.mask, omega_bar.values + bump, 0.0))
    raise ValueError(f"unknown perturbation kind {kind!r}")


@dataclass
class StabilityRecord:
    t: np.ndarray
    d_p: np.ndarray
    energy: np.ndarray
    circulation: np.ndarray  # (nt, k)
    centroids: np.ndarray  # (nt, k, 2)
    dist_drift: np.ndarray
    p: float = 2.0
    note: str = "distance to computed steady states only; lower bound for distance to the maximizer set"

    def path_length(self) -> np.ndarray:
        """Cumulative distance travelled by each blob centroid."""
        steps = np.linalg.norm(np.diff(self.centroids, axis=0), axis=-1)
        return steps.sum(axis=0)

    def to_csv(self, path, header_lines=()):
        k = self.circulation.shape[1]
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write(f"# {self.note}\n")
            wr = csv.writer(fh)
            wr.writerow(["t", "d_p", "E"] + [f"circulation_{i + 1}" for i in range(k)]
                        + [f"centroid_x_{i + 1}" for i in range(k)] + [f"centroid_y_{i + 1}" for i in range(k)]
                        + ["dist_drift"])
            for n in range(self.t.size):
                row = [self.t[n], self.d_p[n], self.energy[n], *self.circulation[n],
                       *self.centroids[n, :, 0], *self.centroids[n, :, 1], self.dist_drift[n]]
                wr.writerow([repr(float(v)) for v in row])


def track_blobs(w: ScalarField, centers, radius: float, signs) -> tuple[np.ndarray, np.ndarray]:
    """Circulation and vorticity centroid of each blob within ``radius`` of its previous centroid."""
    grid = w.grid
    idx = grid.interior
    pts = grid.points(idx)
    vals = w.flat()[idx]
    circ = np.zeros(len(centers))
    cent = np.array(centers, dtype=float).copy()
    for i, (c, s) in enumerate(zip(centers, signs)):
        sel = (np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1]) <= radius) & (s * vals > 0)
        if not np.any(sel):
            continue
        wt = np.abs(vals[sel])
        circ[i] = float(vals[sel].sum() * grid.cell_area)
        cent[i] = (pts[sel] * wt[:, None]).sum(axis=0) / wt.sum()
    return circ, cent


def turnover_time(core_radius: float, kappa: float) -> float:
    return 4.0 * np.pi**2 * core_radius**2 / abs(kappa)


def stability_experiment(steady, cfg: EvolutionConfig, perturbation=("shift", 0.01, 0),
                         eps: float | None = None, p: float = 2.0, references=(), centers=None, signs=None,
                         track_radius: float | None = None) -> StabilityRecord:
    """Evolve a perturbed steady state and record ``min_ref |omega(t) - ref|_p``.

    ``steady`` is a converged ``SteadySolution`` or a bare vorticity field
    (then ``eps`` is required).  ``references`` adds further computed steady
    states (multi-start set) to the minimum; the base state is always included.
    """
    from .steady import SteadySolution, separation_check

    if not 1 < p < np.inf:
        raise ValueError("norm exponent must satisfy 1 < p < inf")
    if isinstance(steady, SteadySolution):
        if not steady.converged:
            raise ValueError("steady state did not converge")
        if not separation_check(steady).separated:
            raise ValueError("steady state is not separated")
        omega_bar = steady.omega
        eps = steady.spec.eps if eps is None else eps
        if signs is None:
            signs = steady.spec.signs
            centers = [b.core.centroid for b in steady.blobs] if centers is None else centers
    else:
        omega_bar = steady
        if eps is None:
            raise ValueError("eps is required when passing a bare field")
    references = [r.omega if isinstance(r, SteadySolution) else r for r in references]
    kind, amp, seed = perturbation
    w0 = perturb(omega_bar, kind, amp, seed, eps)
    refs = [omega_bar, *references]
    if centers is None:
        lab, n = _components(omega_bar)
        centers = ndimage.center_of_mass(np.abs(omega_bar.values), lab, range(1, n + 1))
        grid = omega_bar.grid
        centers = [(grid.x0 + (c[1] + 0.5) * grid.hx, grid.y0 + (c[0] + 0.5) * grid.hy) for c in centers]
        signs = [np.sign(omega_bar.values[lab == k].sum()) for k in range(1, n + 1)]
    signs = np.ones(len(centers)) if signs is None else np.asarray(signs)
    track_radius = 4.0 * eps if track_radius is None else track_radius
    grid = omega_bar.grid
    rows = {"t": [], "d": [], "E": [], "circ": [], "cent": [], "dd": []}
    state = {"cent": np.asarray(centers, dtype=float)}

    def record(t, w):
        d = min((w - r).norm(p) for r in refs)
        circ, cent = track_blobs(w, state["cent"], track_radius, signs)
        state["cent"] = cent
        rows["t"].append(t)
        rows["d"].append(d)
        rows["E"].append(geo.kinetic_energy(w, geo.apply_green(w, cfg.backend)))
        rows["circ"].append(circ)
        rows["cent"].append(cent.copy())
        rows["dd"].append(distribution_distance(w, w0))

    evolve(w0, cfg, callback=record, store=False)
    return StabilityRecord(np.array(rows["t"]), np.array(rows["d"]), np.array(rows["E"]),
                           np.array(rows["circ"]), np.array(rows["cent"]), np.array(rows["dd"]), p)
