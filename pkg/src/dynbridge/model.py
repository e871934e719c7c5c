"""Coefficients of the signal/bridge system and their standing assumptions.

A scenario is a :class:`ModelSpec`: a volatility profile (sigma, c, V), a
diffusion coefficient ``a(t, z)`` and optionally a terminal payoff ``f``.
Everything here is immutable once built.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import yaml
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.special import erfi

from .errors import AssumptionViolation, ScenarioError

V_TOL = 1e-9
FD_STEP = 1e-5
DYADIC_LEVELS = 40


# ---------------------------------------------------------------- profile

def _sigma2_callable(spec, c):
    kind = spec.get("kind")
    if kind == "zero":
        return lambda t: np.zeros_like(np.asarray(t, dtype=float))
    if kind == "constant":
        value = spec.get("value")
        s2 = (1.0 - c) if value is None else float(value) ** 2
        return lambda t: np.full_like(np.asarray(t, dtype=float), s2)
    if kind == "sine":
        amp = float(spec.get("amp", 0.5))
        freq = int(spec.get("freq", 1))
        if not 0 <= amp <= 1:
            raise ValueError("sine amplitude must lie in [0, 1]")
        return lambda t: (1.0 - c) * (1.0 + amp * np.sin(2 * np.pi * freq * np.asarray(t, dtype=float)))
    if kind == "callable":
        fn = spec["fn"]
        return lambda t: np.asarray(fn(np.asarray(t, dtype=float)), dtype=float) ** 2
    raise ValueError(f"unknown sigma kind {kind!r}")


def _mesh(panels, level_panels):
    # Uniform Simpson panels on [0, 1/2], then dyadic shells toward t = 1,
    # each at least as fine as the uniform part.
    h = 0.5 / (2 * panels)
    parts = [np.linspace(0.0, 0.5, 2 * panels + 1)]
    for n in range(1, DYADIC_LEVELS + 1):
        lo, hi = 1.0 - 2.0**-n, 1.0 - 2.0 ** -(n + 1)
        m = max(2 * level_panels, int(math.ceil((hi - lo) / h)))
        parts.append(np.linspace(lo, hi, m + 1)[1:])
    return np.concatenate(parts)


@dataclass(frozen=True, eq=False)
class VolatilityProfile:
    """sigma, c and the derived clocks V, lambda, Lambda.

    All three integrals use composite Simpson on one graded mesh (uniform
    panels on [0, 1/2], then dyadic shells toward 1); between mesh nodes
    they are evaluated by cubic Hermite interpolation with the exact
    derivatives.
    """

    sigma_spec: dict
    c: float
    panels: int
    level_panels: int
    mesh: np.ndarray = field(repr=False)
    _sigma2: Callable = field(repr=False)
    _gap: CubicHermiteSpline = field(repr=False)
    _loglam: Optional[CubicHermiteSpline] = field(repr=False)
    _Lam: Optional[CubicHermiteSpline] = field(repr=False)
    V1: float = 1.0
    # Lambda exceeds the double range beyond this time (small c)
    Lam_t_max: float = 1.0

    @property
    def t_max(self):
        return float(self.mesh[-1])

    def sigma2(self, t):
        return self._sigma2(t)

    def sigma(self, t):
        return np.sqrt(self._sigma2(t))

    def gap(self, t):
        """V(t) - t, accurate to full relative precision near t = 1."""
        t = np.asarray(t, dtype=float)
        tc = np.minimum(t, self.t_max)
        out = np.where(t >= self.t_max, (self.V1 - 1.0) + (1.0 - t) * (1.0 - self.sigma2(tc)),
                       self._gap(tc))
        return out if out.ndim else float(out)

    def V(self, t):
        t = np.asarray(t, dtype=float)
        out = t + self.gap(t)
        return out if out.ndim else float(out)

    def lam(self, t):
        if self._loglam is None:
            raise AssumptionViolation("lambda is undefined when V(t) <= t")
        t = np.asarray(t, dtype=float)
        out = np.exp(self._loglam(np.clip(t, 0.0, self.t_max)))
        return out if out.ndim else float(out)

    def Lam(self, t):
        if self._Lam is None:
            raise AssumptionViolation("Lambda is undefined when V(t) <= t")
        t = np.asarray(t, dtype=float)
        top = min(self.t_max, self.Lam_t_max)
        out = np.where(t > top, np.inf, self._Lam(np.clip(t, 0.0, top)))
        return out if out.ndim else float(out)

    def tail_sequence(self, n_max=20):
        tn = 1.0 - 2.0 ** -np.arange(1, n_max + 1, dtype=float)
        lam, Lam = self.lam(tn), self.Lam(tn)
        return tn, lam**2 * Lam * np.log(Lam)

    def to_dict(self):
        spec = {k: v for k, v in self.sigma_spec.items() if k != "fn"}
        if spec.get("kind") == "callable":
            raise ScenarioError("callable sigma profiles are not serializable")
        return spec


def _simpson_cumulative(f_nodes, f_mid, x):
    """Running composite Simpson integral, one panel per mesh interval."""
    h = np.diff(x)
    pieces = h / 6.0 * (f_nodes[:-1] + 4.0 * f_mid + f_nodes[1:])
    return np.concatenate([[0.0], np.cumsum(pieces)]), pieces


def build_profile(sigma_spec, c, panels=1024, level_panels=64, strict=True):
    """Build V(t) = c + int_0^t sigma^2 and the clocks lambda, Lambda.

    ``strict`` raises :class:`AssumptionViolation` when V(1) != 1 or V(t) <= t
    somewhere on the mesh; with ``strict=False`` such profiles are returned
    so that :func:`validate` can report the failure. The gap V(t) - t is
    accumulated backward from t = 1 so that it keeps full relative
    precision where it vanishes.
    """
    if callable(sigma_spec):
        sigma_spec = {"kind": "callable", "fn": sigma_spec}
    sigma_spec = dict(sigma_spec)
    c = float(c)
    if not 0.0 <= c <= 1.0:
        raise ValueError("c must lie in (0, 1]")
    if panels < 1024:
        raise ValueError("at least 1024 Simpson panels are required")
    sigma2 = _sigma2_callable(sigma_spec, c)
    mesh = _mesh(panels, level_panels)
    mid = 0.5 * (mesh[:-1] + mesh[1:])
    s2, s2m = sigma2(mesh), sigma2(mid)
    _, pieces = _simpson_cumulative(s2, s2m, mesh)
    tail = float(s2[-1]) * (1.0 - mesh[-1])
    V1 = c + float(np.sum(pieces)) + tail
    # gap(t) = V(1) - 1 + int_t^1 (1 - sigma^2); a V(1) within tolerance of
    # 1 is taken as exactly 1 so the gap cannot change sign by round-off.
    if abs(V1 - 1.0) <= V_TOL:
        V1 = 1.0
    back = np.diff(mesh) - pieces
    rev = np.concatenate([np.cumsum(back[::-1])[::-1], [0.0]])
    gap = (V1 - 1.0) + (1.0 - mesh[-1]) * (1.0 - float(s2[-1])) + rev
    if strict:
        if abs(V1 - 1.0) > V_TOL:
            raise AssumptionViolation(f"V(1) = {float(V1)!r} differs from 1")
        bad = np.flatnonzero(gap <= 0)
        if bad.size:
            raise AssumptionViolation(f"V(t) <= t at t = {float(mesh[bad[0]]):.6g}")
    gap_spl = CubicHermiteSpline(mesh, gap, s2 - 1.0)
    pos = gap > 0

    def inv(g):
        with np.errstate(divide="ignore"):
            return np.where(g > 0, 1.0 / np.where(g > 0, g, 1.0), np.inf)

    inv_gap = inv(gap)
    loglam, _ = _simpson_cumulative(-inv_gap, -inv(gap_spl(mid)), mesh)
    if not pos.all():
        loglam[np.argmin(pos):] = -np.inf
    lam_spl = CubicHermiteSpline(mesh, loglam, -inv_gap) if pos.all() else None
    lam2 = np.exp(2 * loglam)
    lam2m = np.exp(2 * lam_spl(mid)) if lam_spl is not None else np.full(mid.shape, np.nan)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        dLam = (1.0 + s2) / lam2
        Lam, _ = _simpson_cumulative(dLam, (1.0 + s2m) / lam2m, mesh)
    ok = (np.abs(Lam) < 1e250) & (np.abs(dLam) < 1e250)
    n_ok = int(np.argmin(ok)) if not ok.all() else mesh.size
    Lam_spl = None
    if lam_spl is not None and n_ok >= 2:
        Lam_spl = CubicHermiteSpline(mesh[:n_ok], Lam[:n_ok], dLam[:n_ok])
    return VolatilityProfile(
        sigma_spec=sigma_spec, c=c, panels=panels, level_panels=level_panels,
        mesh=mesh, _sigma2=sigma2,
        _gap=gap_spl,
        _loglam=lam_spl,
        _Lam=Lam_spl,
        V1=V1,
        Lam_t_max=float(mesh[n_ok - 1]) if n_ok < mesh.size else 1.0,
    )


# ------------------------------------------------------ diffusion families

def _erfi_inv(y):
    """Inverse of erfi by Newton iteration started to the right of the root."""
    y = np.asarray(y, dtype=float)
    s = np.sign(y)
    ay = np.abs(y)
    big = ay > 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        w_big = np.sqrt(np.log(np.where(big, ay, 3.0) * math.sqrt(math.pi))) + 1.0
    w = np.where(big, w_big, ay * math.sqrt(math.pi) / 2)
    for _ in range(200):
        step = (erfi(w) - ay) * (math.sqrt(math.pi) / 2) * np.exp(-w * w)
        w = w - step
        if np.all(np.abs(step) <= 1e-15 * np.maximum(1.0, w)):
            break
    return s * w


class _ODEProfile:
    """Dense solution of a second-order ODE y'' = rhs(x, y, y') on [-L, L].

    The state is augmented with Phi(x) = int_0^x dy / y(y) so that the
    space transform of the self-similar families is tabulated as well.
    """

    def __init__(self, rhs, y0, yp0, half_width):
        def f(x, s):
            return [s[1], rhs(x, s[0], s[1]), 1.0 / s[0]]

        kw = dict(method="DOP853", rtol=1e-13, atol=1e-14, dense_output=True)
        self.rhs = rhs
        self.L = float(half_width)
        self.right = solve_ivp(f, (0.0, self.L), [y0, yp0, 0.0], **kw)
        self.left = solve_ivp(f, (0.0, -self.L), [y0, yp0, 0.0], **kw)
        if not (self.right.success and self.left.success):
            raise AssumptionViolation("profile ODE failed to integrate")

    def state(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(np.abs(x) > self.L * (1 + 1e-12)):
            raise AssumptionViolation("profile evaluated outside its window")
        flat = x.ravel()
        out = np.empty((3, flat.size))
        pos = flat >= 0
        if pos.any():
            out[:, pos] = self.right.sol(flat[pos])
        if (~pos).any():
            out[:, ~pos] = self.left.sol(flat[~pos])
        return [o.reshape(x.shape) for o in out]

    def derivs(self, x):
        y, yp, phi = self.state(x)
        return y, yp, self.rhs(x, y, yp), phi

    def phi_inv(self, u):
        """Inverse of Phi: table interpolation polished by Newton (Phi' = 1/y)."""
        if not hasattr(self, "_table"):
            xs = np.linspace(-self.L, self.L, 20001)
            object.__setattr__(self, "_table", (self.state(xs)[2], xs))
        phis, xs = self._table
        u = np.asarray(u, dtype=float)
        if np.any(u < phis[0]) or np.any(u > phis[-1]):
            raise AssumptionViolation("profile evaluated outside its window")
        x = np.interp(u, phis, xs)
        for _ in range(3):
            y, _, phi = self.state(np.clip(x, -self.L, self.L))
            x = np.clip(x - (phi - u) * y, -self.L, self.L)
        return x


@dataclass(frozen=True, eq=False)
class DiffusionCoefficient:
    """a(t, z) with partial derivatives and a verified lower bound.

    ``closed`` optionally carries exact transforms: ``A(t, x)``,
    ``A_inv(t, u)``, ``b(t)`` and ``B_int(t, u)`` (time-only drift).
    """

    family: str
    params: dict
    a: Callable
    a_z: Callable
    a_zz: Callable
    a_t: Callable
    epsilon: float
    equilibrium_ready: bool
    analytic: bool = True
    domain: tuple = (0.0, 1.0, -10.0, 10.0)
    closed: dict = field(default_factory=dict)

    def with_fd_derivatives(self):
        """Same coefficient with central-difference derivatives."""
        a = self.a

        def hz(z):
            return FD_STEP * np.maximum(1.0, np.abs(z))

        def a_z(t, z):
            h = hz(z)
            return (a(t, z + h) - a(t, z - h)) / (2 * h)

        def a_zz(t, z):
            # larger step than FD_STEP: the second difference loses
            # precision as 1/h^2
            h = 1e-4 * np.maximum(1.0, np.abs(z))
            return (a(t, z + h) - 2 * a(t, z) + a(t, z - h)) / (h * h)

        def a_t(t, z):
            t = np.asarray(t, dtype=float)
            h = FD_STEP
            lo = np.maximum(t - h, 0.0)
            hi = lo + 2 * h
            return (a(hi, z) - a(lo, z)) / (hi - lo)

        return DiffusionCoefficient(
            self.family, self.params, a, a_z, a_zz, a_t, self.epsilon,
            self.equilibrium_ready, False, self.domain, self.closed)

    def to_dict(self):
        return {"family": self.family, **self.params}


def _family_constant(a0=1.0):
    a0 = float(a0)
    one = lambda t, z: np.broadcast_to(np.float64(a0), np.broadcast(np.asarray(t), np.asarray(z)).shape) * 1.0
    zero = lambda t, z: one(t, z) * 0.0
    closed = {
        "A": lambda t, x: np.asarray(x, dtype=float) / a0 + 0.0 * np.asarray(t, dtype=float),
        "A_inv": lambda t, u: np.asarray(u, dtype=float) * a0 + 0.0 * np.asarray(t, dtype=float),
        "b": lambda t: 0.0 * np.asarray(t, dtype=float),
        "B_int": lambda t, u: 0.0 * (np.asarray(t, dtype=float) + np.asarray(u, dtype=float)),
    }
    return dict(a=one, a_z=zero, a_zz=zero, a_t=zero, epsilon=a0,
                equilibrium_ready=True, closed=closed)


def _family_sqrt_quadratic(k1=1.0, k2=1.0, k3=1.0):
    k1, k2, k3 = float(k1), float(k2), float(k3)
    if min(k1, k2, k3) <= 0:
        raise ValueError("k1, k2, k3 must be positive")
    rk1 = math.sqrt(k1)

    def s2(t):
        return k3 * np.exp(-k1 * np.asarray(t, dtype=float))

    def a(t, z):
        return np.sqrt(k1 * (np.asarray(z, dtype=float) + k2) ** 2 + s2(t))

    def a_z(t, z):
        return k1 * (np.asarray(z, dtype=float) + k2) / a(t, z)

    def a_zz(t, z):
        return k1 * s2(t) / a(t, z) ** 3

    def a_t(t, z):
        return -k1 * s2(t) / (2 * a(t, z))

    def A(t, x):
        s = np.sqrt(s2(t))
        return (np.arcsinh(rk1 * (np.asarray(x, dtype=float) + k2) / s)
                - np.arcsinh(rk1 * k2 / s)) / rk1

    def A_inv(t, u):
        s = np.sqrt(s2(t))
        return s / rk1 * np.sinh(rk1 * np.asarray(u, dtype=float) + np.arcsinh(rk1 * k2 / s)) - k2

    m = k1 * k2 * k2
    rm = math.sqrt(m)

    def b(t):
        return -0.5 * k1 * k2 / np.sqrt(m + s2(t))

    def F(s):
        v = np.sqrt(m + s2(s))
        return -np.log((v - rm) / (v + rm)) / (k1 * rm)

    def B_int(t, u):
        return -0.5 * k1 * k2 * (F(u) - F(t))

    return dict(a=a, a_z=a_z, a_zz=a_zz, a_t=a_t,
                epsilon=math.sqrt(k3 * math.exp(-k1)), equilibrium_ready=True,
                closed={"A": A, "A_inv": A_inv, "b": b, "B_int": B_int})


def _family_erfi(k1=1.0, k2=1.0):
    k1, k2 = float(k1), float(k2)
    if k1 <= 0 or k2 <= 0:
        raise ValueError("k1, k2 must be positive")
    scale = math.sqrt(2 * k1 / math.pi)

    def w_of(z):
        return _erfi_inv(np.asarray(z, dtype=float) * scale)

    def s(t):
        return np.sqrt(k1 * np.asarray(t, dtype=float) + k2)

    def g(z):
        return np.exp(w_of(z) ** 2)

    def a(t, z):
        return g(z) / s(t)

    def a_z(t, z):
        return math.sqrt(2 * k1) * w_of(z) / s(t)

    def a_zz(t, z):
        return k1 / (g(z) * s(t))

    def a_t(t, z):
        return -0.5 * k1 * g(z) / s(t) ** 3

    def A(t, x):
        return s(t) * math.sqrt(2 / k1) * w_of(x)

    def A_inv(t, u):
        return erfi(np.asarray(u, dtype=float) / (s(t) * math.sqrt(2 / k1))) / scale

    return dict(a=a, a_z=a_z, a_zz=a_zz, a_t=a_t,
                epsilon=1.0 / math.sqrt(k1 + k2), equilibrium_ready=True,
                domain=(0.0, 1.0, -6.0, 6.0),
                closed={"A": A, "A_inv": A_inv,
                        "b": lambda t: 0.0 * np.asarray(t, dtype=float),
                        "B_int": lambda t, u: 0.0 * (np.asarray(t, dtype=float) + np.asarray(u, dtype=float))})


def _family_self_similar(y0=1.0, yp0=0.05, t_min=0.1, z_max=0.5, half_width=2.0):
    y0, yp0, t_min, z_max = float(y0), float(yp0), float(t_min), float(z_max)
    if z_max / math.sqrt(t_min) > half_width:
        raise ValueError("window exceeds the profile's integration range")
    prof = _ODEProfile(lambda x, y, yp: x * yp / (y * y), y0, yp0, half_width)

    def parts(t, z):
        rt = np.sqrt(np.asarray(t, dtype=float))
        return rt, prof.derivs(np.asarray(z, dtype=float) / rt)

    def a(t, z):
        return parts(t, z)[1][0]

    def a_z(t, z):
        rt, (y, yp, ypp, _) = parts(t, z)
        return yp / rt

    def a_zz(t, z):
        rt, (y, yp, ypp, _) = parts(t, z)
        return ypp / rt**2

    def a_t(t, z):
        rt, (y, yp, ypp, _) = parts(t, z)
        x = np.asarray(z, dtype=float) / rt
        return -0.5 * x * yp / rt**2

    def A(t, x):
        rt = np.sqrt(np.asarray(t, dtype=float))
        return rt * prof.state(np.asarray(x, dtype=float) / rt)[2]

    def A_inv(t, u):
        rt = np.sqrt(np.asarray(t, dtype=float))
        return rt * prof.phi_inv(np.asarray(u, dtype=float) / rt)

    grid = np.linspace(-z_max / math.sqrt(t_min), z_max / math.sqrt(t_min), 2001)
    eps = float(prof.state(grid)[0].min())

    def b(t):
        return -0.5 * yp0 / np.sqrt(np.asarray(t, dtype=float))

    def B_int(t, u):
        return -yp0 * (np.sqrt(np.asarray(u, dtype=float)) - np.sqrt(np.asarray(t, dtype=float)))

    return dict(a=a, a_z=a_z, a_zz=a_zz, a_t=a_t, epsilon=eps,
                equilibrium_ready=True, domain=(t_min, 1.0, -z_max, z_max),
                closed={"A": A, "A_inv": A_inv, "b": b, "B_int": B_int})


def _family_gen_self_similar(k1=0.25, y0=1.0, half_width=80.0):
    k1, y0 = float(k1), float(y0)
    prof = _ODEProfile(lambda x, y, yp: -4 * k1 * (x * yp - y) / (y * y),
                       y0, 0.0, half_width)
    z_lim = half_width * math.exp(-2 * k1)

    def parts(t, z):
        e = np.exp(2 * k1 * np.asarray(t, dtype=float))
        return e, np.asarray(z, dtype=float) * e

    def a(t, z):
        e, x = parts(t, z)
        return prof.state(x)[0] / e

    def a_z(t, z):
        e, x = parts(t, z)
        return prof.state(x)[1]

    def a_zz(t, z):
        e, x = parts(t, z)
        return prof.derivs(x)[2] * e

    def a_t(t, z):
        e, x = parts(t, z)
        y, yp, _, _ = prof.derivs(x)
        return 2 * k1 * (x * yp - y) / e

    def A(t, x):
        e, xx = parts(t, x)
        return prof.state(xx)[2]

    def A_inv(t, u):
        return prof.phi_inv(u) * np.exp(-2 * k1 * np.asarray(t, dtype=float))

    zero_b = {"b": lambda t: 0.0 * np.asarray(t, dtype=float),
              "B_int": lambda t, u: 0.0 * (np.asarray(t, dtype=float) + np.asarray(u, dtype=float))}
    return dict(a=a, a_z=a_z, a_zz=a_zz, a_t=a_t, epsilon=y0 * math.exp(-2 * k1),
                equilibrium_ready=True,
                domain=(0.0, 1.0, -min(10.0, z_lim), min(10.0, z_lim)),
                closed={"A": A, "A_inv": A_inv, **zero_b})


def _family_quadratic(a0=1.0):
    # a = a0 + z^2: a smooth coefficient that is NOT a solution of the
    # equilibrium PDE; used for negative checks.
    a0 = float(a0)
    return dict(
        a=lambda t, z: a0 + np.asarray(z, dtype=float) ** 2 + 0.0 * np.asarray(t, dtype=float),
        a_z=lambda t, z: 2 * np.asarray(z, dtype=float) + 0.0 * np.asarray(t, dtype=float),
        a_zz=lambda t, z: 2.0 + 0.0 * (np.asarray(z, dtype=float) + np.asarray(t, dtype=float)),
        a_t=lambda t, z: 0.0 * (np.asarray(z, dtype=float) + np.asarray(t, dtype=float)),
        epsilon=a0, equilibrium_ready=False)


def _family_tanh(a0=1.0, amp=0.5):
    # a = a0 + amp*tanh(z)^2: bounded, bounded away from zero, space-dependent
    # drift b(t, x); exercises the numeric kernel backend.
    a0, amp = float(a0), float(amp)

    def th(z):
        return np.tanh(np.asarray(z, dtype=float))

    def a(t, z):
        return a0 + amp * th(z) ** 2 + 0.0 * np.asarray(t, dtype=float)

    def a_z(t, z):
        tz = th(z)
        return 2 * amp * tz * (1 - tz**2) + 0.0 * np.asarray(t, dtype=float)

    def a_zz(t, z):
        tz = th(z)
        s = 1 - tz**2
        return 2 * amp * (s * s - 2 * tz * tz * s) + 0.0 * np.asarray(t, dtype=float)

    return dict(a=a, a_z=a_z, a_zz=a_zz,
                a_t=lambda t, z: 0.0 * (np.asarray(z, dtype=float) + np.asarray(t, dtype=float)),
                epsilon=a0, equilibrium_ready=False)


FAMILIES = {
    "constant": _family_constant,
    "sqrt_quadratic": _family_sqrt_quadratic,
    "erfi": _family_erfi,
    "self_similar": _family_self_similar,
    "gen_self_similar": _family_gen_self_similar,
    "quadratic": _family_quadratic,
    "tanh": _family_tanh,
}


def build_coefficient(family, **params):
    if family not in FAMILIES:
        raise ValueError(f"unknown diffusion family {family!r}")
    parts = FAMILIES[family](**params)
    return DiffusionCoefficient(family=family, params=dict(params), **parts)


def pde_residual(coeff, t, z):
    """a_t + (a^2 / 2) a_zz at (t, z)."""
    a = coeff.a(t, z)
    return coeff.a_t(t, z) + 0.5 * a * a * coeff.a_zz(t, z)


# ------------------------------------------------------------------ payoff

@dataclass(frozen=True, eq=False)
class PayoffSpec:
    kind: str
    params: dict
    f: Callable
    f_prime: Callable
    k1: float
    k2: float

    def to_dict(self):
        return {"kind": self.kind, **self.params, "k1": self.k1, "k2": self.k2}


def build_payoff(kind="identity", k1=1.0, k2=1.0, **params):
    if kind == "identity":
        f = lambda z: np.asarray(z, dtype=float) * 1.0
        fp = lambda z: np.ones_like(np.asarray(z, dtype=float))
    elif kind == "affine":
        s, c0 = float(params.get("slope", 1.0)), float(params.get("intercept", 0.0))
        f = lambda z: s * np.asarray(z, dtype=float) + c0
        fp = lambda z: np.full_like(np.asarray(z, dtype=float), s)
    elif kind == "constant":
        kap = float(params.get("value", 1.0))
        f = lambda z: np.full_like(np.asarray(z, dtype=float), kap)
        fp = lambda z: np.zeros_like(np.asarray(z, dtype=float))
    elif kind == "tanh":
        f = lambda z: np.tanh(np.asarray(z, dtype=float))
        fp = lambda z: 1.0 / np.cosh(np.asarray(z, dtype=float)) ** 2
    elif kind == "exp":
        r = float(params.get("rate", 0.5))
        f = lambda z: np.exp(r * np.asarray(z, dtype=float))
        fp = lambda z: r * np.exp(r * np.asarray(z, dtype=float))
    else:
        raise ValueError(f"unknown payoff kind {kind!r}")
    return PayoffSpec(kind, dict(params), f, fp, float(k1), float(k2))


# ------------------------------------------------------------- model spec

@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Immutable scenario: profile, diffusion coefficient, optional payoff.

    ``ou_k`` switches the signal to the linear-drift (Ornstein-Uhlenbeck)
    mode with a = 1 and transformed drift b(t, x) = -k x.
    """

    profile: VolatilityProfile
    coeff: DiffusionCoefficient
    payoff: Optional[PayoffSpec] = None
    ou_k: Optional[float] = None
    name: str = "scenario"
    ell: float = 1.0

    def V(self, t):
        return self.profile.V(t)

    def lam(self, t):
        return self.profile.lam(t)

    def Lam(self, t):
        return self.profile.Lam(t)

    @property
    def c(self):
        return self.profile.c

    @property
    def is_gaussian(self):
        return (self.coeff.family == "constant" and self.ou_k is None
                and float(self.coeff.params.get("a0", 1.0)) == 1.0)

    def to_dict(self):
        out = {
            "name": self.name,
            "c": self.profile.c,
            "sigma": self.profile.to_dict(),
            "a": self.coeff.to_dict(),
            "quadrature": {"rule": "simpson", "panels": self.profile.panels,
                           "level_panels": self.profile.level_panels},
            "ell": self.ell,
        }
        if self.payoff is not None:
            out["payoff"] = self.payoff.to_dict()
        if self.ou_k is not None:
            out["signal"] = {"drift": "ou", "k": self.ou_k}
        return out


def make_model(sigma, c, a=None, payoff=None, ou_k=None, name="scenario",
               panels=1024, level_panels=64, ell=1.0, strict=True):
    """Convenience constructor from plain dictionaries."""
    a = {"family": "constant", "a0": 1.0} if a is None else dict(a)
    profile = build_profile(sigma, c, panels=panels, level_panels=level_panels, strict=strict)
    coeff = build_coefficient(a.pop("family"), **a)
    if ou_k is not None and coeff.family != "constant":
        raise ValueError("the OU signal mode requires a constant diffusion coefficient")
    pay = None if payoff is None else build_payoff(**dict(payoff))
    return ModelSpec(profile, coeff, pay, None if ou_k is None else float(ou_k),
                     name, float(ell))


# ------------------------------------------------------------- validation

@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""
    witness: Optional[tuple] = None


@dataclass
class ValidationReport:
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def lines(self):
        out = []
        for c in self.checks:
            tag = "pass" if c.passed else "FAIL"
            w = "" if c.witness is None else f" at {c.witness}"
            out.append(f"{tag:4s}  {c.name}: {c.detail}{w}")
        return out


def _tail_decreasing(seq, start=10):
    tail = seq[start - 1:]
    return bool(np.all(np.diff(tail) < 0) and tail[-1] <= 0.01 * np.max(np.abs(seq)))


def validate(model, n_t=41, n_z=81):
    """Check the standing assumptions on a grid; never raises."""
    from . import transform

    prof, co = model.profile, model.coeff
    checks = []
    checks.append(Check("V(0)=c", abs(prof.V(0.0) - prof.c) < 1e-14, f"V(0)={prof.V(0.0):.12g}"))
    checks.append(Check("V(1)=1", abs(prof.V1 - 1.0) <= V_TOL, f"V(1)={prof.V1:.12g}"))
    tt = prof.mesh[prof.mesh < 1.0]
    gap = prof.gap(tt)
    bad = np.flatnonzero(gap <= 0)
    checks.append(Check("V(t)>t", bad.size == 0, f"min V(t)-t = {gap.min():.3g}",
                        None if bad.size == 0 else (float(tt[bad[0]]),)))
    s2 = prof.sigma2(prof.mesh)
    checks.append(Check("sigma^2 bounded", bool(np.all(np.isfinite(s2))), f"max sigma^2 = {s2.max():.6g}"))
    if bad.size == 0:
        _, seq = prof.tail_sequence()
        ok = bool(np.all(np.isfinite(seq))) and _tail_decreasing(seq)
        checks.append(Check("tail proxy lambda^2 Lambda log Lambda", ok,
                            f"last terms {seq[-3:].tolist()}"))
    else:
        checks.append(Check("tail proxy lambda^2 Lambda log Lambda", False, "skipped: V(t)<=t"))

    t0, t1, z0, z1 = co.domain
    tg = np.linspace(t0, t1, n_t)
    zg = np.linspace(z0, z1, n_z)
    T, Zg = np.meshgrid(tg, zg, indexing="ij")
    av = co.a(T, Zg)
    i = np.unravel_index(np.argmin(av), av.shape)
    checks.append(Check("a >= epsilon", bool(av.min() >= co.epsilon * (1 - 1e-9)),
                        f"grid min {av.min():.6g}, epsilon {co.epsilon:.6g}",
                        (float(T[i]), float(Zg[i]))))
    if co.equilibrium_ready:
        res = np.abs(pde_residual(co, T, Zg))
        j = np.unravel_index(np.argmax(res), res.shape)
        checks.append(Check("a solves the equilibrium PDE", bool(res.max() < 1e-8),
                            f"max residual {res.max():.3g}", (float(T[j]), float(Zg[j]))))
    try:
        st = transform.SpaceTransform(model)
        xs = np.linspace(-3, 3, 13) if co.domain[3] >= 3 else np.linspace(co.domain[2], co.domain[3], 13)
        tb = np.linspace(max(t0, 0.02), min(t1, 0.98), 9)
        B = np.array([[st.b(t, x) for x in xs] for t in tb])
        h = 1e-4
        Bx = np.array([[(st.b(t, x + h) - st.b(t, x - h)) / (2 * h) for x in xs] for t in tb])
        Bt = np.array([[(st.b(t + h, x) - st.b(t - h, x)) / (2 * h) for x in xs] for t in tb])
        for nm, arr in (("b bounded", B), ("b_x bounded", Bx), ("b_t bounded", Bt)):
            checks.append(Check(nm, bool(np.all(np.isfinite(arr))), f"sup {np.abs(arr).max():.4g}"))
    except Exception as exc:  # report, never raise
        checks.append(Check("b bounded", False, f"transform failed: {exc}"))
    if model.payoff is not None:
        zp = np.linspace(max(z0, -6.0), min(z1, 6.0), 201)
        fv = model.payoff.f(zp)
        checks.append(Check("payoff strictly increasing", bool(np.all(np.diff(fv) > 0)), model.payoff.kind))
        try:
            A1 = transform.SpaceTransform(model).A(1.0, zp)
            bound = model.payoff.k1 * np.exp(model.payoff.k2 * np.abs(A1))
            checks.append(Check("payoff growth |f| <= k1 exp(k2 |A(1,z)|)",
                                bool(np.all(np.abs(fv) <= bound)), f"k1={model.payoff.k1}, k2={model.payoff.k2}"))
        except Exception as exc:
            checks.append(Check("payoff growth |f| <= k1 exp(k2 |A(1,z)|)", False, str(exc)))
    return ValidationReport(checks)


# ----------------------------------------------------------- scenario I/O

_TOP_KEYS = {"name", "c", "sigma", "a", "payoff", "signal", "quadrature", "ell"}


def _line_index(text):
    """Map key paths to 1-based line numbers using the YAML node tree."""
    idx = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (k.value,)
                idx[p] = k.start_mark.line + 1
                walk(v, p)

    try:
        walk(yaml.compose(text), ())
    except yaml.YAMLError:
        pass
    return idx


def model_from_dict(tree, text=None):
    lines = _line_index(text) if text else {}

    def where(*path):
        ln = lines.get(tuple(path))
        loc = ".".join(path)
        return loc if ln is None else f"{loc} (line {ln})"

    if not isinstance(tree, dict):
        raise ScenarioError("scenario must be a mapping", "<root>")
    unknown = set(tree) - _TOP_KEYS
    if unknown:
        k = sorted(unknown)[0]
        raise ScenarioError(f"unknown field {k!r}", where(k))
    for key in ("c", "sigma"):
        if key not in tree:
            raise ScenarioError("missing required field", key)
    try:
        c = float(tree["c"])
    except (TypeError, ValueError):
        raise ScenarioError(f"c must be a number, got {tree['c']!r}", where("c")) from None
    sigma = tree["sigma"]
    if not isinstance(sigma, dict) or "kind" not in sigma:
        raise ScenarioError("sigma needs a 'kind'", where("sigma"))
    a = tree.get("a", {"family": "constant", "a0": 1.0})
    if not isinstance(a, dict) or "family" not in a:
        raise ScenarioError("a needs a 'family'", where("a"))
    quad = tree.get("quadrature", {})
    sig = tree.get("signal")
    ou_k = None
    if sig is not None:
        if sig.get("drift") not in ("ou", "none"):
            raise ScenarioError(f"unknown signal drift {sig.get('drift')!r}", where("signal", "drift"))
        if sig.get("drift") == "ou":
            ou_k = sig.get("k")
    try:
        return make_model(sigma, c, a=a, payoff=tree.get("payoff"), ou_k=ou_k,
                          name=str(tree.get("name", "scenario")),
                          panels=int(quad.get("panels", 1024)),
                          level_panels=int(quad.get("level_panels", 64)),
                          ell=float(tree.get("ell", 1.0)))
    except AssumptionViolation:
        raise
    except (TypeError, ValueError) as exc:
        field_ = "a" if "famil" in str(exc) or "k1" in str(exc) else "sigma"
        if "payoff" in str(exc):
            field_ = "payoff"
        raise ScenarioError(str(exc), where(field_)) from None


def load_scenario(path):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f"{path}:{mark.line + 1}" if mark else str(path)
        raise ScenarioError(f"YAML syntax error: {getattr(exc, 'problem', exc)}", loc) from None
    return model_from_dict(tree, text)


def dump_scenario(model, path=None):
    text = yaml.safe_dump(model.to_dict(), sort_keys=False)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text
