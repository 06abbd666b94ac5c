"""Kirchhoff-Routh function, its critical points and point-vortex dynamics.

Normalization: ``W = -sum_{m<n} k_m k_n G(x_m, x_n) + 1/2 sum_n k_n^2 H(x_n)``,
with dynamics ``k_i dx_i/dt = -grad_perp_{x_i} W`` where
``grad_perp = (d/dy, -d/dx)``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .geometry import DomainSpec

log = logging.getLogger(__name__)

KR_NORMALIZATION = "pair_coeff=1,self_coeff=1/2"
FD_STEP = 1e-5
CLASSIFY_TOL = 1e-8


@dataclass(frozen=True)
class VortexConfiguration:
    positions: np.ndarray
    strengths: np.ndarray
    domain: DomainSpec = field(default_factory=DomainSpec.unit_disk)

    def __post_init__(self):
        x = np.array(self.positions, dtype=float).reshape(-1, 2)
        k = np.array(self.strengths, dtype=float).ravel()
        if x.shape[0] != k.size:
            raise ValueError("need one strength per vortex")
        if np.any(k == 0):
            raise ValueError("vortex strengths must be nonzero")
        x.setflags(write=False)
        k.setflags(write=False)
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "strengths", k)

    @property
    def k(self) -> int:
        return self.strengths.size

    def with_positions(self, x) -> "VortexConfiguration":
        return VortexConfiguration(np.asarray(x).reshape(-1, 2), self.strengths, self.domain)

    def check(self) -> None:
        """Raise ``ValueError`` unless the configuration lies in D^k."""
        if np.any(~self.domain.contains(self.positions)):
            raise ValueError("vortex on or outside the boundary")
        if self.k > 1:
            d = np.linalg.norm(self.positions[:, None] - self.positions[None], axis=-1)
            d[np.diag_indices(self.k)] = np.inf
            if np.any(d == 0):
                raise ValueError("coincident vortices")

    def min_separation(self) -> float:
        """Smallest of the pairwise distances and the distances to the boundary."""
        m = float(np.min(self.domain.boundary_distance(self.positions)))
        if self.k > 1:
            d = np.linalg.norm(self.positions[:, None] - self.positions[None], axis=-1)
            m = min(m, float(d[np.triu_indices(self.k, 1)].min()))
        return m


@dataclass
class KRReport:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    classification: str
    eigenvalues: np.ndarray
    minimizer: VortexConfiguration | None = None
    iterations: int = 0
    converged: bool = False
    message: str = ""


class KRDescentError(RuntimeError):
    def __init__(self, message, config=None):
        super().__init__(message)
        self.config = config


def kr_value(c: VortexConfiguration) -> float:
    c.check()
    x, k, dom = c.positions, c.strengths, c.domain
    w = 0.5 * float(np.sum(k**2 * geo.robin(x, dom)))
    for m in range(c.k):
        for n in range(m + 1, c.k):
            w -= k[m] * k[n] * geo.green(dom, x[m], x[n])
    return w


def _fd_gradient(c: VortexConfiguration, step: float) -> np.ndarray:
    s = step * c.domain.scale
    x0 = c.positions.ravel()
    g = np.empty_like(x0)
    for a in range(x0.size):
        e = np.zeros_like(x0)
        e[a] = s
        g[a] = (kr_value(c.with_positions(x0 + e)) - kr_value(c.with_positions(x0 - e))) / (2 * s)
    return g


def kr_gradient(c: VortexConfiguration, method: str = "auto") -> np.ndarray:
    """Gradient of ``W`` as ``(dW/dx_1, dW/dy_1, ..., dW/dy_k)``.

    ``method="auto"`` uses closed forms on the disk and central differences
    elsewhere; ``"fd"`` forces central differences.
    """
    c.check()
    if method == "fd" or (method == "auto" and c.domain.kind != "disk"):
        if c.min_separation() < 10 * FD_STEP * c.domain.scale:
            raise KRDescentError("finite-difference stencil too close to a singularity", c)
        return _fd_gradient(c, FD_STEP)
    if c.domain.kind != "disk":
        raise ValueError("closed-form gradient only on the disk")
    x, k = c.positions, c.strengths
    g = 0.5 * (k**2)[:, None] * geo.grad_robin_disk(x)
    for i in range(c.k):
        for j in range(c.k):
            if i != j:
                g[i] -= k[i] * k[j] * geo.grad_green_disk(x[i], x[j])
    return g.ravel()


def kr_hessian(c: VortexConfiguration) -> np.ndarray:
    """Central differences of the gradient, symmetrized."""
    s = FD_STEP * c.domain.scale
    x0 = c.positions.ravel()
    n = x0.size
    hess = np.empty((n, n))
    for a in range(n):
        e = np.zeros(n)
        e[a] = s
        hess[:, a] = (kr_gradient(c.with_positions(x0 + e)) - kr_gradient(c.with_positions(x0 - e))) / (2 * s)
    return 0.5 * (hess + hess.T)


def classify(hess: np.ndarray, tol: float = CLASSIFY_TOL) -> tuple[str, np.ndarray]:
    ev = np.linalg.eigvalsh(hess)
    scale = max(1.0, float(np.abs(ev).max()))
    if np.any(np.abs(ev) <= tol * scale):
        return "degenerate", ev
    if np.all(ev > 0):
        return "local min", ev
    if np.all(ev < 0):
        return "local max", ev
    return "saddle", ev


def kr_report(c: VortexConfiguration) -> KRReport:
    hess = kr_hessian(c)
    label, ev = classify(hess)
    return KRReport(kr_value(c), kr_gradient(c), hess, label, ev, minimizer=c)


def kr_local_min(start: VortexConfiguration, tol: float = 1e-8, max_iter: int = 20000,
                 step0: float = 0.1) -> KRReport:
    """Gradient descent with Armijo backtracking until ``|grad W| < tol``.

    Step lengths start from the Barzilai-Borwein estimate.  Raises
    ``KRDescentError`` if an iterate would leave D^k (collision or boundary)
    or if the line search stalls.
    """
    c = start
    c.check()
    x = c.positions.ravel().copy()
    w = kr_value(c)
    g = kr_gradient(c)
    t = step0
    x_prev = g_prev = None
    margin = 10 * FD_STEP * c.domain.scale
    leaving = 1e-3 * c.domain.scale
    for it in range(max_iter):
        gn = float(np.linalg.norm(g))
        if gn < tol:
            rep = kr_report(c)
            rep.iterations = it
            rep.converged = True
            return rep
        if x_prev is not None:
            s, y = x - x_prev, g - g_prev
            sy = float(s @ y)
            if sy > 0:
                t = float(s @ s) / sy
        for _ in range(60):
            trial = c.with_positions(x - t * g)
            try:
                trial.check()
                ok = trial.min_separation() > margin
            except ValueError:
                ok = False
            if ok:
                wt = kr_value(trial)
                if wt <= w - 1e-4 * t * gn**2:
                    break
            t *= 0.5
        else:
            if c.min_separation() < leaving:
                raise KRDescentError("descent is leaving D^k (collision or boundary)", c)
            raise KRDescentError(f"line search stalled at |grad W|={gn:.3e}", c)
        x_prev, g_prev = x, g
        x = x - t * g
        c = trial
        w = wt
        g = kr_gradient(c)
        if c.min_separation() < leaving and np.linalg.norm(g) > tol:
            raise KRDescentError("descent is leaving D^k (collision or boundary)", c)
    raise KRDescentError(f"no convergence in {max_iter} iterations (|grad W|={np.linalg.norm(g):.3e})", c)


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

def pv_velocity(c: VortexConfiguration) -> np.ndarray:
    """``dx_i/dt = -(1/k_i) grad_perp_{x_i} W``, shape (k, 2)."""
    g = kr_gradient(c).reshape(-1, 2)
    k = c.strengths[:, None]
    return -np.stack([g[:, 1], -g[:, 0]], axis=-1) / k


@dataclass
class Trajectory:
    t: np.ndarray
    positions: np.ndarray  # (nt, k, 2)
    W: np.ndarray
    aborted: bool = False
    reason: str = ""

    def to_csv(self, path, header_lines=()):
        k = self.positions.shape[1]
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            wr = csv.writer(fh)
            cols = ["t"] + [f"{a}{i + 1}" for i in range(k) for a in ("x", "y")] + ["W"]
            wr.writerow(cols)
            for n in range(self.t.size):
                row = [self.t[n], *self.positions[n].ravel(), self.W[n]]
                wr.writerow([repr(float(v)) for v in row])


def pv_integrate(c0: VortexConfiguration, dt: float, T: float) -> Trajectory:
    """Classical RK4 on the point-vortex system; samples every step.

    Aborts (partial trajectory, ``aborted=True``) when two vortices, or a
    vortex and the boundary, come within ``10 * FD_STEP * scale``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    c0.check()
    nsteps = int(round(T / dt))
    margin = 10 * FD_STEP * c0.domain.scale
    ts = [0.0]
    xs = [c0.positions.copy()]
    ws = [kr_value(c0)]
    c = c0
    reason = ""
    for n in range(nsteps):
        try:
            x = c.positions
            k1 = pv_velocity(c)
            k2 = pv_velocity(c.with_positions(x + 0.5 * dt * k1))
            k3 = pv_velocity(c.with_positions(x + 0.5 * dt * k2))
            k4 = pv_velocity(c.with_positions(x + dt * k3))
            c = c.with_positions(x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))
            c.check()
        except (ValueError, KRDescentError) as exc:
            reason = f"left D^k: {exc}"
            break
        if c.min_separation() < margin:
            reason = "near collision or boundary"
            break
        ts.append((n + 1) * dt)
        xs.append(c.positions.copy())
        ws.append(kr_value(c))
    if reason:
        log.warning("pv_integrate aborted at t=%.6g: %s", ts[-1], reason)
    return Trajectory(np.array(ts), np.array(xs), np.array(ws), bool(reason), reason)


def single_vortex_angular_velocity(r: float, kappa: float) -> float:
    """Precession rate of one point vortex at radius ``r`` in the unit disk."""
    return kappa / (2.0 * np.pi * (1.0 - r * r))


def dipole_separation_disk() -> float:
    """Half-separation of the symmetric (+1, -1) minimizer in the unit disk.

    Along the symmetric family ``dW/dd = 0`` reduces to ``d^4 + 4 d^2 - 1 = 0``.
    """
    return float(np.sqrt(np.sqrt(5.0) - 2.0))
