"""Filters for the signal given the market's observation.

``kalman_bucy`` integrates the Gaussian-case filter along observed X
paths; ``particle_filter`` is a bootstrap filter for U given an R path;
``ks_consistency`` checks the deterministic identities behind the
Kushner-Stratonovich equation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import _core, rng
from .errors import BackendMismatch, DegenerateWeights
from .pdesolve import joint_density_residual
from .simulate import _affine_tables

CHECKPOINTS = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass(eq=False)
class FilterState:
    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    innovations: np.ndarray = None
    particles: dict = field(default_factory=dict)
    ess: np.ndarray = None
    se_mean: np.ndarray = None
    se_variance: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def to_csv(self, path):
        body = np.column_stack([self.times, np.atleast_2d(self.mean).T,
                                np.atleast_2d(self.variance).T])
        np.savetxt(path, body, fmt="%.17g", delimiter=",", header="t,mean...,variance...",
                   comments="")
        return path


def riccati_variance(model, times, rtol=1e-12, atol=1e-15):
    """gamma' = sigma^2 - gamma^2 / (V - t)^2, gamma(0) = c, on ``times``."""
    prof = model.profile

    def rhs(t, g):
        tau = float(prof.gap(t))
        return [float(prof.sigma2(t)) - g[0] * g[0] / (tau * tau)]

    def jac(t, g):
        tau = float(prof.gap(t))
        return [[-2.0 * g[0] / (tau * tau)]]

    sol = solve_ivp(rhs, (0.0, float(times[-1])), [model.c], method="Radau", jac=jac,
                    t_eval=times, rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"variance equation failed: {sol.message}")
    return sol.y[0]


def kalman_bucy(x_paths, grid, model):
    """Conditional mean and variance of Z_t given the X path (a = 1).

    Observation dX = dB + (Z - X) / (V - t) dt, signal dZ = sigma dbeta;
    the gain is gamma / (V - t). Returns per-path means (paths x nodes),
    the deterministic variance, and the innovation increments
    dI = dX - (Zhat - X) / (V - t) dt.
    """
    if not model.is_gaussian:
        raise BackendMismatch("the Kalman-Bucy filter needs a = 1 and no signal drift")
    t = grid.nodes
    X = np.atleast_2d(np.asarray(x_paths, dtype=float))
    gamma = riccati_variance(model, t)
    tau = model.profile.gap(t)
    h = 1.0 / tau
    gain = gamma * h
    dt = np.diff(t)
    Zh = np.zeros_like(X)
    dI = np.empty((X.shape[0], t.size - 1))
    for i in range(t.size - 1):
        dX = X[:, i + 1] - X[:, i]
        dI[:, i] = dX - h[i] * (Zh[:, i] - X[:, i]) * dt[i]
        Zh[:, i + 1] = Zh[:, i] + gain[i] * dI[:, i]
    return FilterState(t, Zh, gamma, dI, meta={"filter": "kalman_bucy"})


def _kappa_tables(model, tr, t):
    r0, ru, rr, _ = _affine_tables(model, tr, t, "optimal", 1.0)
    return r0, ru, rr


def particle_filter(r_path, grid, model, transform, n_particles, seed, path_index=0,
                    checkpoints=CHECKPOINTS, ess_frac=0.5, min_ess_frac=0.01,
                    keep_particles=False):
    """Bootstrap filter for U_t given the observed R path on ``grid``.

    Particles start from Gamma(0, 0; c, .) and move with the exact U
    dynamics; weights follow exp(kappa dR - kappa^2 dt / 2) with kappa the
    R-drift evaluated at the particle; systematic resampling when the
    effective sample size drops below ``ess_frac * n``.
    """
    tr = transform
    t = grid.nodes
    R = np.asarray(r_path, dtype=float)
    r0, ru, rr = _kappa_tables(model, tr, t)
    V = model.V(t)
    n = int(n_particles)
    ids = np.arange(n, dtype=np.int64)
    s = rng.derive_seed(seed, path_index, 0xF11)
    xi0 = rng.normals(s, ids, [0], rng.TAG_PRIOR)[:, 0]
    k = model.ou_k
    if k is not None:
        u = math.sqrt(-math.expm1(-2 * k * model.c) / (2 * k)) * xi0
        decay = np.exp(-k * np.diff(V))
        sd = np.sqrt(-np.expm1(-2 * k * np.diff(V)) / (2 * k))
        shift = np.zeros(t.size - 1)
    else:
        if not tr.b_is_time_only:
            raise BackendMismatch("the particle filter needs a time-only or linear drift")
        u = float(tr.B_int(0.0, model.c)) + math.sqrt(model.c) * xi0
        decay = np.ones(t.size - 1)
        sd = np.sqrt(np.diff(V))
        shift = np.asarray(tr.B_int(V[:-1], V[1:]), dtype=float)
    cps = sorted({grid.index(c) for c in checkpoints} | {0})
    logw = np.zeros(n)
    out_t, out_m, out_v, out_ess, snaps = [], [], [], [], {}
    n_resample = 0

    eve = np.arange(n)
    out_se_m, out_se_v = [], []

    def genealogy_se(w, phi):
        # variance estimate grouping particles by their time-0 ancestor
        sums = np.bincount(eve, weights=w * phi, minlength=n)
        return math.sqrt(float(np.dot(sums, sums)))

    def record(i, w):
        m = float(np.dot(w, u))
        var = float(np.dot(w, (u - m) ** 2))
        out_t.append(t[i])
        out_m.append(m)
        out_v.append(var)
        out_ess.append(1.0 / float(np.dot(w, w)))
        out_se_m.append(genealogy_se(w, u - m))
        out_se_v.append(genealogy_se(w, (u - m) ** 2 - var))
        if keep_particles:
            snaps[float(t[i])] = (u.copy(), w.copy())

    w = np.full(n, 1.0 / n)
    last = cps[-1]
    for i in range(last + 1):
        if i in cps:
            record(i, w)
        if i == last:
            break
        dt = t[i + 1] - t[i]
        kappa = r0[i] + ru[i] * u + rr[i] * R[i]
        logw += kappa * (R[i + 1] - R[i]) - 0.5 * kappa * kappa * dt
        logw -= logw.max()
        w = np.exp(logw)
        w /= w.sum()
        ess = 1.0 / float(np.dot(w, w))
        if ess < min_ess_frac * n:
            raise DegenerateWeights(f"ESS {ess:.1f} < {min_ess_frac} n at t = {t[i + 1]:.4g}")
        # propagate to the next node
        xi = rng.normals(s, ids, [i], rng.TAG_PARTICLE)[:, 0]
        u = u * decay[i] + shift[i] + sd[i] * xi
        if ess < ess_frac * n:
            u0 = float(rng.uniforms(s, [0], [i], rng.TAG_RESAMPLE)[0, 0])
            idx = _core.systematic_resample(w, u0)
            u = u[idx]
            eve = eve[idx]
            logw = np.zeros(n)
            w = np.full(n, 1.0 / n)
            n_resample += 1
    return FilterState(np.array(out_t), np.array(out_m), np.array(out_v),
                       particles=snaps, ess=np.array(out_ess), se_mean=np.array(out_se_m),
                       se_variance=np.array(out_se_v),
                       meta={"filter": "particle", "n": n, "resamples": n_resample,
                             "seed": int(seed), "path_index": int(path_index)})


def closed_posterior(model, transform, t, r):
    """Mean and variance of p(t, r, .): N(r + B_int(t, V(t)), V(t) - t)."""
    V = float(model.V(t))
    if model.ou_k is not None:
        d = V - t
        return r * math.exp(-model.ou_k * d), -math.expm1(-2 * model.ou_k * d) / (2 * model.ou_k)
    return r + float(transform.B_int(t, V)), float(model.profile.gap(t))


@dataclass(frozen=True)
class KSReport:
    joint_residual: float
    joint_floor: float
    nodrift_max: float
    kappa_max: float
    tol_nodrift: float
    tol_kappa: float

    @property
    def passed(self):
        return (self.joint_residual <= self.joint_floor and self.nodrift_max <= self.tol_nodrift
                and self.kappa_max <= self.tol_kappa)


def ks_consistency(kernel, model, points=None, tol_nodrift=1e-8, tol_kappa=1e-7):
    """Deterministic identities behind the filtering equation.

    * the joint density p(t, x, z) solves its forward equation;
    * int d/dx rho(t, x, z) dz = 0 (no drift survives averaging);
    * int (p_x / p + b) p dz = b for the observation drift.
    """
    if points is None:
        points = [(t, x, z) for t in (0.2, 0.5, 0.8) for x in (-0.5, 0.0, 0.7)
                  for z in (-0.4, 0.3)]
    if kernel.backend == "numeric":
        tol_nodrift = max(tol_nodrift, 1e-3)
        tol_kappa = max(tol_kappa, 1e-3)
    lo = max(model.coeff.domain[0], 0.0)
    pts = [(max(t, lo + 0.05), x, z) for t, x, z in points]
    joint = joint_density_residual(kernel, model, pts)
    tr = kernel.tr
    nod, kap = 0.0, 0.0
    for t, x, _ in pts:
        V = float(model.V(t))
        # a non-finite integral must fail the check (max() would drop a nan)
        d = abs(kernel.integrate_z(lambda z: kernel.G_x(t, x, V, z), t, x, V))
        nod = max(nod, float(d) if np.isfinite(d) else np.inf)
        xt = float(tr.A(t, x))
        b_here = float(tr.b(t, xt))

        def kp(z, t=t, xt=xt, V=V, b_here=b_here):
            zt = tr.A(V, z)
            return (kernel.dlog_gamma_dx(t, xt, V, zt) + b_here) * kernel.gamma(t, xt, V, zt) \
                / model.coeff.a(V, z)

        d = abs(kernel.integrate_z(kp, t, x, V) - b_here)
        kap = max(kap, float(d) if np.isfinite(d) else np.inf)
    return KSReport(joint.max_residual, joint.floor, nod, kap, tol_nodrift, tol_kappa)


__all__ = ["FilterState", "kalman_bucy", "riccati_variance", "particle_filter",
           "closed_posterior", "ks_consistency", "KSReport", "CHECKPOINTS"]
