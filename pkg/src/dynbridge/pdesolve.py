"""Finite-volume Crank-Nicolson solver for w_u = w_zz / 2 - (b w)_z, and
residual checks for the backward, joint-density and pricing equations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import _core
from .errors import GridTooSmall, StabilityFailure

DIFF = 0.5
EDGE_CELLS = 10


def _bernoulli(x):
    # x / (e^x - 1), with the removable singularity at 0
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-6
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = x / np.expm1(np.where(small, 1.0, x))
    return np.where(small, 1.0 - x / 2.0, out)


def _face_coeffs(bf, dz, flux):
    """Face flux F = alpha * w_left - beta * w_right for drift ``bf``."""
    if flux == "sg":
        pe = bf * dz / DIFF
        alpha = DIFF / dz * _bernoulli(-pe)
        beta = DIFF / dz * _bernoulli(pe)
    elif flux == "upwind":
        alpha = np.maximum(bf, 0.0) + DIFF / dz
        beta = np.maximum(-bf, 0.0) + DIFF / dz
    elif flux == "central":
        alpha = bf / 2.0 + DIFF / dz
        beta = -bf / 2.0 + DIFF / dz
    else:
        raise ValueError(f"unknown flux {flux!r}")
    return alpha, beta


def _operator(b, u, faces, dz, flux):
    alpha, beta = _face_coeffs(np.asarray(b(u, faces), dtype=float) + 0.0 * faces, dz, flux)
    lower = alpha[1:-1] / dz
    upper = beta[1:-1] / dz
    diag = -(alpha[1:] + beta[:-1]) / dz
    return lower, diag, upper


def _apply(lower, diag, upper, w):
    out = diag * w
    out[1:] += lower * w[:-1]
    out[:-1] += upper * w[1:]
    return out


@dataclass(frozen=True, eq=False)
class DensitySurface:
    """Solution of the forward equation started from a point mass at (t0, x0)."""

    t0: float
    x0: float
    u_grid: np.ndarray
    z_grid: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def dz(self):
        return float(self.z_grid[1] - self.z_grid[0])

    def mass(self):
        return self.values.sum(axis=1) * self.dz

    def row(self, u):
        i = int(np.argmin(np.abs(self.u_grid - u)))
        if abs(self.u_grid[i] - u) > 1e-12:
            raise ValueError(f"time {u} is not an output time of this surface")
        return self.values[i]

    def at(self, u, z):
        """Density at output time ``u``, cubic interpolation in z, 0 outside."""
        z = np.asarray(z, dtype=float)
        spl = CubicSpline(self.z_grid, self.row(u))
        inside = (z >= self.z_grid[0]) & (z <= self.z_grid[-1])
        out = np.where(inside, spl(np.clip(z, self.z_grid[0], self.z_grid[-1])), 0.0)
        return out if out.ndim else float(out)

    def l1_error(self, density):
        """int |w(u, z) - density(u, z)| dz at each output time."""
        return np.array([float(np.sum(np.abs(row - density(u, self.z_grid))) * self.dz)
                         for u, row in zip(self.u_grid, self.values)])

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("u," + ",".join(f"{z:.17g}" for z in self.z_grid) + "\n")
            for u, row in zip(self.u_grid, self.values):
                fh.write(f"{u:.17g}," + ",".join(f"{v:.17g}" for v in row) + "\n")
        return path


def _time_grid(t_start, outputs, du_min, du_max, growth=1.1):
    nodes = [t_start]
    t, du = t_start, du_min
    for target in outputs:
        while t < target - 1e-15:
            step = min(du, target - t)
            if target - (t + step) < 0.25 * du_min:
                step = target - t
            t = target if step == target - t else t + step
            nodes.append(t)
            du = min(du * growth, du_max)
    return np.array(nodes)


def solve_forward(b, t0, x0, horizon, dz=1.0 / 400, delta=None, du_max=None,
                  flux="sg", u_out=None, sup_b=None, rannacher=4):
    """Approximate Gamma(t0, x0; u, .) on a uniform z-grid.

    ``b(u, z)`` is the drift (vectorized in z). The point mass is replaced by
    a Gaussian of width ``delta`` (default 2 dz), treated as the exact
    solution at time t0 + delta^2 and shifted by the drift over that time.
    Crank-Nicolson steps follow ``rannacher`` implicit Euler start-up steps;
    step sizes grow geometrically from delta^2 / 4 up to ``du_max``.
    """
    t0, x0, horizon = float(t0), float(x0), float(horizon)
    delta = 2.0 * dz if delta is None else float(delta)
    du_max = 0.4 * dz if du_max is None else float(du_max)
    t_start = t0 + delta * delta
    if horizon <= t_start:
        raise ValueError("horizon must exceed t0 + delta^2")
    outs = np.array(sorted({float(u) for u in ([horizon] if u_out is None else u_out)}))
    if outs[0] <= t_start or outs[-1] > horizon + 1e-15:
        raise ValueError("output times must lie in (t0 + delta^2, horizon]")
    h = horizon - t0
    if sup_b is None:
        zz = x0 + np.linspace(-10, 10, 201) * math.sqrt(h)
        uu = np.linspace(t0, horizon, 9)
        sup_b = max(float(np.max(np.abs(np.asarray(b(u, zz), dtype=float) + 0 * zz))) for u in uu)
    half = 10.0 * math.sqrt(h) + sup_b * h
    n_half = int(math.ceil(half / dz))
    z = x0 + dz * np.arange(-n_half, n_half + 1)
    faces = x0 + dz * (np.arange(-n_half, n_half + 2) - 0.5)
    if flux == "central":
        bf = np.asarray(b(t0, faces), dtype=float) + 0 * faces
        pe = float(np.max(np.abs(bf))) * dz / DIFF
        if pe > 2.0:
            raise StabilityFailure(f"cell Peclet number {pe:.3g} exceeds 2 for the central flux")

    shift = float(np.asarray(b(t0, np.array([x0])), dtype=float).ravel()[0]) * delta * delta
    w = np.exp(-0.5 * ((z - x0 - shift) / delta) ** 2)
    w /= w.sum() * dz
    grid = _time_grid(t_start, outs, delta * delta / 4.0, du_max)
    values = []
    edge = 0.0
    mass_drift = 0.0
    L_old = _operator(b, grid[0], faces, dz, flux)
    out_i = 0
    for k in range(1, grid.size):
        du = grid[k] - grid[k - 1]
        L_new = _operator(b, grid[k], faces, dz, flux)
        theta = 1.0 if k <= rannacher else 0.5
        rhs = w + (1.0 - theta) * du * _apply(*L_old, w) if theta < 1 else w.copy()
        lower, diag, upper = L_new
        m0 = w.sum()
        w = _core.thomas(-theta * du * lower, 1.0 - theta * du * diag, -theta * du * upper, rhs)
        mass_drift = max(mass_drift, abs(w.sum() - m0) * dz)
        L_old = L_new
        if out_i < outs.size and abs(grid[k] - outs[out_i]) < 1e-15:
            values.append(w.copy())
            edge = max(edge, float((w[:EDGE_CELLS].sum() + w[-EDGE_CELLS:].sum()) * dz))
            out_i += 1
    if edge > 1e-8:
        raise GridTooSmall(f"boundary mass {edge:.3g} exceeds 1e-8")
    meta = {"dz": dz, "delta": delta, "du_max": du_max, "flux": flux,
            "n_steps": int(grid.size - 1), "rannacher": rannacher,
            "boundary_mass": edge, "max_mass_drift": mass_drift}
    return DensitySurface(t0, x0, outs, z, np.array(values), meta)


# --------------------------------------------------------------- residuals

@dataclass
class ResidualReport:
    name: str
    max_residual: float
    floor: float
    points: int
    worst: tuple = ()

    @property
    def passed(self):
        return bool(self.max_residual < self.floor)


def adjoint_residual(kernel, points, floor=None):
    """max |v_t + b v_x + v_xx / 2| for v(t, x) = Gamma(t, x; u, z).

    ``points`` is an iterable of (t, x, u, z) in transformed coordinates.
    """
    worst, arg = 0.0, ()
    for t, x, u, z in points:
        d = kernel.gamma_derivs(t, x, u, z)
        r = d["t"] + kernel.b(t, x) * d["x"] + 0.5 * d["xx"]
        if abs(r) > worst:
            worst, arg = abs(r), (t, x, u, z)
    fl = kernel.residual_floor("adjoint") if floor is None else floor
    return ResidualReport("adjoint", float(worst), fl, len(points), arg)


def joint_density_residual(kernel, model, points, floor=None):
    """Residual of the joint (t, x, z) equation for p(t, x, z) = Gamma(t, x; V(t), z).

    p_t + b(t,x) p_x + p_xx / 2 + sigma^2 (b(V,z) p)_z - sigma^2 p_zz / 2.
    """
    prof = model.profile
    worst, arg = 0.0, ()
    for t, x, z in points:
        V = float(prof.V(t))
        s2 = float(prof.sigma2(t))
        d = kernel.gamma_derivs(t, x, V, z)
        bz, bz_z = kernel.b_and_bz(V, z)
        p_t = d["t"] + s2 * d["u"]
        r = (p_t + kernel.b(t, x) * d["x"] + 0.5 * d["xx"]
             + s2 * (bz_z * d["g"] + bz * d["z"]) - 0.5 * s2 * d["zz"])
        if abs(r) > worst:
            worst, arg = abs(r), (t, x, z)
    fl = kernel.residual_floor("joint") if floor is None else floor
    return ResidualReport("joint_density", float(worst), fl, len(points), arg)


def _fd2(fn, x, h):
    return (fn(x + h) - 2.0 * fn(x) + fn(x - h)) / (h * h)


def _fd1(fn, x, h):
    return (fn(x + h) - fn(x - h)) / (2.0 * h)


# Residual floors for the pricing equations. w uses the coefficient's own
# derivatives; H and F are differentiated numerically with step 1e-3, so
# their floor is the O(h^2) truncation plus quadrature noise / h^2.
PRICING_FLOORS = {"w": 1e-8, "H": 1e-5, "F": 1e-5}


def pricing_pde_residual(pricing, model, points_tx, points_tz=None, h=1e-3):
    """Residuals of the w-, H- and F-equations over the given points.

    Derivatives of H and F are centered differences of the quadrature
    values with step ``h``; the w-residual uses the coefficient's own
    derivatives.
    """
    from .model import pde_residual

    co, prof = model.coeff, model.profile
    points_tz = points_tx if points_tz is None else points_tz
    rw = max(abs(float(pde_residual(co, t, x))) for t, x in points_tx)
    rh = 0.0
    for t, x in points_tx:
        Ht = _fd1(lambda s: pricing.H(s, x), t, h)
        Hxx = _fd2(lambda y: pricing.H(t, y), x, h)
        rh = max(rh, abs(Ht + 0.5 * float(co.a(t, x)) ** 2 * Hxx))
    rf = 0.0
    for t, z in points_tz:
        Ft = _fd1(lambda s: pricing.F(s, z), t, h)
        Fzz = _fd2(lambda y: pricing.F(t, y), z, h)
        V = float(prof.V(t))
        rf = max(rf, abs(Ft + 0.5 * float(prof.sigma2(t)) * float(co.a(V, z)) ** 2 * Fzz))
    return {"w": rw, "H": rh, "F": rf}


def phi_function(model, t, x, z, ell=None):
    """Supermartingale function of the Gaussian bridge.

    phi = (2 (Lambda + ell))^{-1/2} exp((x - z)^2 / (2 lambda^2 (Lambda + ell))).
    """
    ell = model.ell if ell is None else ell
    lam, Lam = model.lam(t), model.Lam(t)
    s = Lam + ell
    with np.errstate(over="ignore"):
        return np.exp((np.asarray(x) - np.asarray(z)) ** 2 / (2 * lam * lam * s)) / np.sqrt(2 * s)


def phi_pde_residual(model, points, ell=None):
    """Residual of phi_t + (z-x)/(V-t) phi_x + phi_xx/2 + sigma^2 phi_zz/2.

    Derivatives are analytic: with D = x - z, s = Lambda + ell, K = lam^2 s,
    phi_x = phi D/K, phi_xx = phi_zz = phi (1/K + D^2/K^2),
    phi_t = phi [-(Lambda')/(2 s) - D^2 K'/(2 K^2)].
    """
    ell = model.ell if ell is None else ell
    prof = model.profile
    worst = 0.0
    for t, x, z in points:
        lam, Lam = float(prof.lam(t)), float(prof.Lam(t))
        s2 = float(prof.sigma2(t))
        g = float(prof.gap(t))
        s = Lam + ell
        K = lam * lam * s
        dLam = (1 + s2) / (lam * lam)
        dK = -2.0 / g * K + lam * lam * dLam
        D = x - z
        phi = float(phi_function(model, t, x, z, ell))
        phi_t = phi * (-dLam / (2 * s) - D * D * dK / (2 * K * K))
        phi_x = phi * D / K
        phi_xx = phi * (1 / K + D * D / (K * K))
        r = phi_t + (z - x) / g * phi_x + 0.5 * phi_xx + 0.5 * s2 * phi_xx
        worst = max(worst, abs(r) / max(1.0, phi))
    return worst
