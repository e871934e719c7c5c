"""Transition kernels Gamma, G, rho, p and the pricing functions F, H.

Backends:
  closed_time_only  Gamma = q(u - t, x + B(t, u), z) for a time-only drift
  closed_ou         Gamma = q((1 - e^{-2k(u-t)}) / 2k, x e^{-k(u-t)}, z)
  numeric           Gamma from the finite-volume solver, cached per source
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import ndtr, roots_hermitenorm, roots_legendre

from .errors import BackendMismatch, DomainError, TailBoundExceeded
from .pdesolve import solve_forward
from .transform import SpaceTransform

MIN_GAP = 1e-6
SQRT2PI = math.sqrt(2.0 * math.pi)


def gaussian_q(t, x, y):
    """Brownian transition density (2 pi t)^{-1/2} exp(-(x - y)^2 / 2t)."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("q requires t > 0")
    out = np.exp(-((np.asarray(x) - np.asarray(y)) ** 2) / (2 * t)) / np.sqrt(2 * np.pi * t)
    return out if np.ndim(out) else float(out)


def gamma_closed(transform, t, xt, u, zt):
    """Gamma(t, x~; u, z~) for a time-only drift."""
    if not transform.b_is_time_only:
        raise BackendMismatch("closed Gamma needs a time-only drift")
    return gaussian_q(np.asarray(u) - np.asarray(t), np.asarray(xt) + transform.B_int(t, u), zt)


def _check_gap(t, u):
    if np.any(np.asarray(u) - np.asarray(t) < MIN_GAP):
        raise DomainError("kernel evaluation requires u - t >= 1e-6")


class TransitionKernel:
    """Evaluable densities in transformed (``gamma``) and original (``G``) coordinates."""

    def __init__(self, model, transform=None, backend="auto", solver_opts=None):
        self.model = model
        self.tr = SpaceTransform(model) if transform is None else transform
        if backend == "auto":
            if model.ou_k is not None:
                backend = "closed_ou"
            elif self.tr.b_is_time_only:
                backend = "closed_time_only"
            else:
                backend = "numeric"
        if backend == "closed_time_only" and not self.tr.b_is_time_only:
            raise BackendMismatch("closed_time_only requires a time-only drift")
        if backend == "closed_ou" and model.ou_k is None:
            raise BackendMismatch("closed_ou requires the OU signal mode")
        self.backend = backend
        self.k = model.ou_k
        self.solver_opts = dict(dz=1.0 / 200) if solver_opts is None else dict(solver_opts)
        self._solve = lru_cache(maxsize=256)(self._solve_uncached)

    # -- drift in transformed coordinates
    def b(self, t, x):
        return self.tr.b(t, x)

    def b_and_bz(self, t, z, h=1e-5):
        if self.k is not None:
            return -self.k * z, -self.k
        if self.tr.b_is_time_only:
            return float(self.tr.b_time(t)), 0.0
        bz = (float(self.tr.b(t, z + h)) - float(self.tr.b(t, z - h))) / (2 * h)
        return float(self.tr.b(t, z)), bz

    # -- Gaussian backends: mean and variance of Gamma(t, x; u, .)
    def gaussian_params(self, t, xt, u):
        if self.backend == "closed_time_only":
            return np.asarray(xt) + self.tr.B_int(t, u), np.asarray(u) - np.asarray(t)
        if self.backend == "closed_ou":
            d = np.asarray(u) - np.asarray(t)
            return np.asarray(xt) * np.exp(-self.k * d), -np.expm1(-2 * self.k * d) / (2 * self.k)
        raise BackendMismatch("numeric kernels are not Gaussian")

    # -- numeric backend
    def _solve_uncached(self, t, xt, u):
        return solve_forward(lambda s, z: self.tr.b(s, z), t, xt, u, **self.solver_opts)

    def _numeric(self, t, xt, u, zt):
        surf = self._solve(float(t), float(xt), float(u))
        return surf.at(u, zt)

    # -- Gamma and friends
    def gamma(self, t, xt, u, zt):
        _check_gap(t, u)
        if self.backend == "numeric":
            if np.ndim(t) or np.ndim(xt) or np.ndim(u):
                return np.vectorize(self._numeric)(t, xt, u, zt)
            return self._numeric(t, xt, u, zt)
        m, v = self.gaussian_params(t, xt, u)
        return gaussian_q(v, m, zt)

    def dlog_gamma_dx(self, t, xt, u, zt, h=0.02):
        """d/dx~ log Gamma(t, x~; u, z~)."""
        _check_gap(t, u)
        if self.backend == "closed_time_only":
            m, v = self.gaussian_params(t, xt, u)
            return (np.asarray(zt) - m) / v
        if self.backend == "closed_ou":
            m, v = self.gaussian_params(t, xt, u)
            return (np.asarray(zt) - m) * np.exp(-self.k * (np.asarray(u) - np.asarray(t))) / v
        gp = self.gamma(t, xt + h, u, zt)
        gm = self.gamma(t, xt - h, u, zt)
        # zero where the density underflows; callers weight this by Gamma
        ok = (gp > 0) & (gm > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (np.log(gp) - np.log(gm)) / (2 * h)
        return np.where(ok, out, 0.0) if np.ndim(out) else (float(out) if ok else 0.0)

    def gamma_derivs(self, t, x, u, z, h=None):
        """Gamma and its partials in t, x, xx, u, z, zz at one point."""
        _check_gap(t, u)
        if self.backend == "numeric":
            return self._numeric_derivs(t, x, u, z, h)
        g = float(self.gamma(t, x, u, z))
        if self.backend == "closed_time_only":
            tau = u - t
            d = z - (x + float(self.tr.B_int(t, u)))
            Q = d * d / (2 * tau * tau) - 1 / (2 * tau)
            return {"g": g, "x": g * d / tau, "xx": g * (d * d / tau**2 - 1 / tau),
                    "z": -g * d / tau, "zz": g * (d * d / tau**2 - 1 / tau),
                    "t": -g * Q - float(self.tr.b_time(t)) * g * d / tau,
                    "u": g * Q + float(self.tr.b_time(u)) * g * d / tau}
        k = self.k
        D = u - t
        e1 = math.exp(-k * D)
        v = -math.expm1(-2 * k * D) / (2 * k)
        m = x * e1
        d = z - m
        Qv = d * d / (2 * v * v) - 1 / (2 * v)
        gD = g * (Qv * e1 * e1 - k * m * d / v)
        return {"g": g, "x": g * d * e1 / v, "xx": g * e1 * e1 * (d * d / v**2 - 1 / v),
                "z": -g * d / v, "zz": g * (d * d / v**2 - 1 / v), "t": -gD, "u": gD}

    def _numeric_derivs(self, t, x, u, z, h=None):
        hx = 0.05 if h is None else h
        ht = 0.01 if h is None else h
        G = lambda tt, xx, uu, zz: float(self._numeric(tt, xx, uu, zz))
        g = G(t, x, u, z)
        surf = self._solve(float(t), float(x), float(u))
        dz = surf.dz
        return {
            "g": g,
            "x": (G(t, x + hx, u, z) - G(t, x - hx, u, z)) / (2 * hx),
            "xx": (G(t, x + hx, u, z) - 2 * g + G(t, x - hx, u, z)) / hx**2,
            "t": (G(t + ht, x, u, z) - G(t - ht, x, u, z)) / (2 * ht),
            "u": (G(t, x, u + ht, z) - G(t, x, u - ht, z)) / (2 * ht),
            "z": (G(t, x, u, z + 2 * dz) - G(t, x, u, z - 2 * dz)) / (4 * dz),
            "zz": (G(t, x, u, z + 2 * dz) - 2 * g + G(t, x, u, z - 2 * dz)) / (4 * dz * dz),
        }

    def residual_floor(self, which):
        if self.backend == "numeric":
            return {"adjoint": 1e-2, "joint": 5e-2}[which]
        return {"adjoint": 1e-7, "joint": 1e-6}[which]

    # -- original coordinates
    def G(self, t, x, u, z):
        tr, co = self.tr, self.model.coeff
        return self.gamma(t, tr.A(t, x), u, tr.A(u, z)) / co.a(u, z)

    def G_x(self, t, x, u, z):
        """d/dx G(t, x; u, z) (chain rule through A)."""
        tr, co = self.tr, self.model.coeff
        xt, zt = tr.A(t, x), tr.A(u, z)
        g = self.gamma(t, xt, u, zt)
        return g * self.dlog_gamma_dx(t, xt, u, zt) / co.a(t, x) / co.a(u, z)

    def rho(self, t, x, z):
        return self.G(t, x, self.model.V(t), z)

    def p(self, t, xt, zt):
        return self.gamma(t, xt, self.model.V(t), zt)

    def log_dx_p(self, t, xt, zt):
        return self.dlog_gamma_dx(t, xt, self.model.V(t), zt)

    def log_dx_rho(self, t, x, z):
        """d/dx log rho(t, x, z) = (1 / a(t, x)) d/dx~ log Gamma at transformed points."""
        tr, co = self.tr, self.model.coeff
        V = self.model.V(t)
        return self.dlog_gamma_dx(t, tr.A(t, x), V, tr.A(V, z)) / co.a(t, x)

    def integrate_z(self, fn, t, x, u, width=12.0, panels=32):
        """int fn(z) dz over the support of G(t, x; u, .).

        Substitutes z = A^{-1}(u, y) and integrates over the transformed
        kernel's mean +- ``width`` standard deviations, so heavy tails in
        original coordinates are covered.
        """
        tr, co = self.tr, self.model.coeff
        xt = float(tr.A(t, x))
        if self.backend == "numeric":
            surf = self._solve(float(t), xt, float(u))
            row, zg = surf.row(u), surf.z_grid
            mass = row.sum() * surf.dz
            m = float((zg * row).sum() * surf.dz / mass)
            s = math.sqrt(float(((zg - m) ** 2 * row).sum() * surf.dz / mass))
        else:
            m, v = self.gaussian_params(t, xt, u)
            m, s = float(m), math.sqrt(float(v))

        def g(y):
            z = tr.A_inv(u, y)
            return fn(z) * co.a(u, z)

        return _gauss_legendre(g, m - width * s, m + width * s, panels)


def build_G(model, transform=None, backend="auto", **kw):
    return TransitionKernel(model, transform, backend, **kw)


# ------------------------------------------------------------ diagnostics

@dataclass
class HRatioReport:
    sup: float
    bound: float
    finite: bool
    closed_max_error: float = float("nan")

    @property
    def passed(self):
        return self.finite and self.sup <= self.bound


def h_ratio_diagnostic(kernel, grid, margin=0.1):
    """sup |h_x / h| for h = Gamma / q over ``grid`` = [(t, x, u, z), ...]."""
    vals, errs = [], []
    for t, x, u, z in grid:
        r = float(kernel.dlog_gamma_dx(t, x, u, z)) - (z - x) / (u - t)
        vals.append(r)
        if kernel.backend == "closed_time_only":
            errs.append(abs(r + float(kernel.tr.B_int(t, u)) / (u - t)))
    vals = np.array(vals)
    ts = np.array([g[0] for g in grid] + [g[2] for g in grid])
    if kernel.k is not None:
        sup_b = float("inf")
    else:
        sup_b = float(np.max(np.abs(kernel.tr.b(ts, 0.0 * ts))))
    return HRatioReport(float(np.max(np.abs(vals))), sup_b + margin,
                        bool(np.all(np.isfinite(vals))),
                        float(max(errs)) if errs else float("nan"))


@dataclass
class AronsonReport:
    found: bool
    M1: float
    alpha1: float
    M2: float
    alpha2: float
    violation: tuple = ()


ALPHA_LOWER = (1.0, 0.9, 0.8, 2 / 3, 0.5, 0.25)
ALPHA_UPPER = (1.0, 1.25, 1.5, 2.0, 3.0, 4.0)


def aronson_check(kernel, grid, m_floor=0.5, m_ceil=2.0):
    """Search M1 q(alpha1 tau) <= Gamma <= M2 q(alpha2 tau) on the grid.

    For each lattice alpha the tightest M is the min/max of the ratio over
    the grid; the first alpha (closest to 1) with M1 >= ``m_floor`` resp.
    M2 <= ``m_ceil`` is reported.
    """
    g = np.array([float(kernel.gamma(t, x, u, z)) for t, x, u, z in grid])
    tau = np.array([u - t for t, x, u, z in grid])
    dx = np.array([z - x for t, x, u, z in grid])
    lower = upper = None
    for a1 in ALPHA_LOWER:
        M1 = float(np.min(g / gaussian_q(a1 * tau, 0.0, dx)))
        if M1 >= m_floor:
            lower = (M1, a1)
            break
    for a2 in ALPHA_UPPER:
        M2 = float(np.max(g / gaussian_q(a2 * tau, 0.0, dx)))
        if M2 <= m_ceil:
            upper = (M2, a2)
            break
    if lower is None or upper is None:
        worst = tuple(grid[int(np.argmin(g / gaussian_q(tau, 0.0, dx)))])
        return AronsonReport(False, float("nan"), float("nan"), float("nan"), float("nan"), worst)
    return AronsonReport(True, lower[0], lower[1], upper[0], upper[1])


# ----------------------------------------------------------------- pricing

_GL_NODES, _GL_WEIGHTS = roots_legendre(16)
_GH_NODES, _GH_WEIGHTS = roots_hermitenorm(64)
_GH_WEIGHTS = _GH_WEIGHTS / _GH_WEIGHTS.sum()


def _gauss_legendre(fn, lo, hi, panels):
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    x = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return float(np.dot(w, fn(x)))


@dataclass(frozen=True, eq=False)
class PricingFunctions:
    F: Callable
    H: Callable
    w: Callable
    H_vec: Callable
    affine: bool
    panels: int


def build_pricing(model, kernel, panels=64, method="window"):
    """Insider value F, pricing rule H and weight w = a.

    H(t, x) = int f(y) G(t, x; 1, y) dy is evaluated in transformed
    coordinates, where the kernel is Gaussian with known mean and variance:
    composite Gauss-Legendre over mean +- W with
    W = max(8 sqrt(1 - V(t)), 8 sqrt(1 - t)) + k2 (1 - t).
    ``method="hermite"`` uses 64-point Gauss-Hermite instead (fast path
    for simulation); an affine f o A^{-1}(1, .) is integrated exactly.
    """
    if model.payoff is None:
        raise ValueError("pricing needs a payoff")
    if kernel.backend == "numeric":
        raise BackendMismatch("pricing requires a Gaussian kernel backend")
    tr, co, pay, prof = kernel.tr, model.coeff, model.payoff, model.profile
    affine = co.family == "constant" and pay.kind in ("identity", "affine", "constant")
    if affine:
        slope = {"identity": 1.0, "affine": float(pay.params.get("slope", 1.0)), "constant": 0.0}[pay.kind]
        icpt = {"identity": 0.0, "affine": float(pay.params.get("intercept", 0.0)),
                "constant": float(pay.params.get("value", 1.0))}[pay.kind]
        a0 = float(co.params.get("a0", 1.0))

    def payoff_tilde(y):
        return pay.f(tr.A_inv(1.0, y))

    def expect(t_src, xt, t_half):
        """E f(A^{-1}(1, N)) where N ~ Gamma(t_src, xt; 1, .)."""
        if 1.0 - t_src <= 0.0:
            return float(payoff_tilde(xt))
        m, v = kernel.gaussian_params(t_src, xt, 1.0)
        m, v = float(m), float(v)
        if v <= 0.0:
            return float(payoff_tilde(m))
        s = math.sqrt(v)
        if affine:
            return slope * a0 * m + icpt
        if method == "hermite":
            return float(np.dot(_GH_WEIGHTS, payoff_tilde(m + s * _GH_NODES)))
        W = max(8 * math.sqrt(max(1.0 - float(prof.V(t_half)), 0.0)), 8 * math.sqrt(1.0 - t_half)) + pay.k2 * (1.0 - t_half)
        W = max(W, 8 * s)
        tail = 2.0 * math.exp(0.5 * (pay.k2 * s) ** 2) * float(ndtr(-(W / s - pay.k2 * s)))
        if tail > 1e-8:
            raise TailBoundExceeded(f"window +-{W:.3g} leaves tail bound {tail:.3g}")

        def integrand(y):
            return payoff_tilde(y) * np.exp(-0.5 * ((y - m) / s) ** 2) / (s * SQRT2PI)

        return _gauss_legendre(integrand, m - W, m + W, panels)

    def H(t, x):
        t = float(t)
        if t >= 1.0:
            return float(pay.f(x))
        return expect(t, float(tr.A(t, x)), t)

    def F(t, z):
        t = float(t)
        V = float(prof.V(t))
        if V >= 1.0:
            return float(pay.f(z))
        return expect(V, float(tr.A(V, z)), t)

    def H_vec(t, x):
        """Vectorized H over x at a single time t (Gauss-Hermite)."""
        x = np.asarray(x, dtype=float)
        if t >= 1.0:
            return pay.f(x)
        m, v = kernel.gaussian_params(t, tr.A(t, x), 1.0)
        if affine:
            return slope * a0 * m + icpt
        y = np.asarray(m)[..., None] + math.sqrt(float(v)) * _GH_NODES
        return payoff_tilde(y) @ _GH_WEIGHTS

    return PricingFunctions(F=F, H=H, w=co.a, H_vec=H_vec, affine=affine, panels=panels)
