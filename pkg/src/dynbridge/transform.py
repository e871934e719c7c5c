"""Space transform A(t, x) = int_0^x dy / a(t, y), its inverse, and drift b.

Under ``U = A(t, X)`` the diffusion coefficient becomes one and the drift
becomes ``b(t, x) = A_t(t, A^{-1}(t, x)) - a_z(t, A^{-1}(t, x)) / 2``.
"""
from __future__ import annotations

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .errors import BracketFailure, QuadratureFailure

QUAD_RTOL = 1e-10
BRACKET_LIMIT = 1e6
# cells of the A table for time-independent coefficients
STATIC_TABLE = 20000


def _quad(fn, lo, hi):
    if lo == hi:
        return 0.0
    val, err, info = quad(fn, lo, hi, epsabs=0.0, epsrel=QUAD_RTOL, limit=400,
                          full_output=True)[:3]
    if err > max(QUAD_RTOL * abs(val), 1e-14) * 10 or "message" in info:
        raise QuadratureFailure(f"quadrature tolerance not reached on [{lo}, {hi}]")
    return val


def _scalar_or_array(fn, *args):
    b = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in args])
    out = np.array([fn(*vals) for vals in zip(*[x.ravel() for x in b])], dtype=float)
    out = out.reshape(b[0].shape)
    return out if out.ndim else float(out)


def eval_A_quad(coeff, t, x):
    """A(t, x) by adaptive quadrature (relative tolerance 1e-10)."""
    def one(tt, xx):
        return _quad(lambda y: 1.0 / float(coeff.a(tt, y)), 0.0, xx)
    return _scalar_or_array(one, t, x)


def eval_A_t_quad(coeff, t, x):
    """A_t(t, x) = -int_0^x a_t / a^2 dy (differentiation under the integral)."""
    def one(tt, xx):
        return _quad(lambda y: -float(coeff.a_t(tt, y)) / float(coeff.a(tt, y)) ** 2, 0.0, xx)
    return _scalar_or_array(one, t, x)


def invert_monotone(fn, deriv, u, x_bound=BRACKET_LIMIT):
    """Solve fn(x) = u for increasing fn with fn(0) = 0.

    Exponential bracket expansion from 0, bisection to 1e-6, then at most
    five Newton steps using ``deriv``.
    """
    if u == 0.0:
        return 0.0
    sgn = 1.0 if u > 0 else -1.0
    lo, hi = 0.0, sgn
    while sgn * (fn(hi) - u) < 0:
        lo, hi = hi, 2.0 * hi
        if abs(hi) > x_bound:
            raise BracketFailure(f"no bracket for u={u!r} within |x| <= {x_bound:g}")
    a, b = min(lo, hi), max(lo, hi)
    while b - a > 1e-6:
        m = 0.5 * (a + b)
        if fn(m) < u:
            a = m
        else:
            b = m
    x = 0.5 * (a + b)
    for _ in range(5):
        r = fn(x) - u
        if r == 0.0:
            break
        x_new = x - r / deriv(x)
        if not a - 1e-6 <= x_new <= b + 1e-6:
            break
        x = x_new
        if abs(r) < 1e-14 * max(1.0, abs(u)):
            break
    return x


class SpaceTransform:
    """Transform attached to a model; immutable and reentrant.

    Closed-form hooks from the coefficient family are used when present;
    otherwise quadrature and root finding. ``b_is_time_only`` holds for
    every family solving the equilibrium PDE; the OU signal mode carries
    the linear drift -k x instead.
    """

    def __init__(self, model, force_numeric=False, n_table=2049):
        self.model = model
        self.coeff = model.coeff
        self.ou_k = model.ou_k
        closed = {} if force_numeric else dict(self.coeff.closed)
        self._closed = closed
        self.b_is_time_only = self.ou_k is None and (
            self.coeff.equilibrium_ready or self.coeff.family == "constant")
        self.b_is_linear = self.ou_k is not None
        self._b_spline = None
        self._B_spline = None
        if self.b_is_time_only and "B_int" not in closed:
            t0 = max(self.coeff.domain[0], 0.0)
            tg = np.linspace(t0, 1.0, n_table)
            bv = np.array([self.b_time_direct(t) for t in tg])
            self._b_spline = CubicSpline(tg, bv)
            self._B_spline = self._b_spline.antiderivative()
        self._static = None
        if not (self.b_is_time_only or self.b_is_linear or force_numeric):
            self._static = self._static_table()

    def _static_table(self):
        """Hermite tables of A and A^{-1} when a does not depend on t.

        The drift of a space-only coefficient is -a_z(A^{-1}(x)) / 2; the
        table avoids a root find per evaluation inside PDE sweeps.
        """
        co = self.coeff
        z = np.linspace(co.domain[2], co.domain[3], STATIC_TABLE + 1)
        if np.any(co.a_t(0.5, z) != 0.0) or np.any(co.a(0.0, z) != co.a(1.0, z)):
            return None
        inv_a = 1.0 / co.a(0.5, z)
        mid = 0.5 * (z[:-1] + z[1:])
        pieces = np.diff(z) / 6.0 * (inv_a[:-1] + 4.0 / co.a(0.5, mid) + inv_a[1:])
        A = np.concatenate([[0.0], np.cumsum(pieces)])
        j = int(np.argmin(np.abs(z)))
        A += float(eval_A_quad(co, 0.5, z[j])) - A[j]
        return CubicHermiteSpline(A, z, co.a(0.5, z)), (float(A[0]), float(A[-1]))

    # -- A and its inverse
    def A(self, t, x):
        if "A" in self._closed:
            out = self._closed["A"](t, x)
            return out if np.ndim(out) else float(out)
        return eval_A_quad(self.coeff, t, x)

    def A_inv(self, t, u):
        if self._static is not None:
            spl, (lo, hi) = self._static
            uu = np.asarray(u, dtype=float)
            if np.all((uu >= lo) & (uu <= hi)):
                out = spl(uu) + 0.0 * np.asarray(t, dtype=float)
                return out if np.ndim(out) else float(out)
        if "A_inv" in self._closed:
            out = self._closed["A_inv"](t, u)
            return out if np.ndim(out) else float(out)

        def one(tt, uu):
            return invert_monotone(lambda x: float(self.A(tt, x)),
                                   lambda x: 1.0 / float(self.coeff.a(tt, x)), uu)
        return _scalar_or_array(one, t, u)

    def A_t(self, t, x):
        if self._static is not None:
            out = 0.0 * (np.asarray(t, dtype=float) + np.asarray(x, dtype=float))
            return out if np.ndim(out) else float(out)
        return eval_A_t_quad(self.coeff, t, x)

    # -- drift
    def b_definition(self, t, x):
        """b(t, x) from the two-term definition (no shortcuts)."""
        if self.ou_k is not None:
            return -self.ou_k * np.asarray(x, dtype=float)
        y = self.A_inv(t, x)
        return self.A_t(t, y) - 0.5 * self.coeff.a_z(t, y)

    def b(self, t, x):
        if self.ou_k is not None:
            out = -self.ou_k * np.asarray(x, dtype=float) + 0.0 * np.asarray(t, dtype=float)
            return out if np.ndim(out) else float(out)
        if self.b_is_time_only:
            out = self.b_time(t) + 0.0 * np.asarray(x, dtype=float)
            return out if np.ndim(out) else float(out)
        return self.b_definition(t, x)

    def b_time_direct(self, t):
        # -a_z(t, 0) / 2: the drift of an equilibrium-ready coefficient
        return -0.5 * float(self.coeff.a_z(t, 0.0))

    def b_time(self, t):
        """Time-only drift b(t)."""
        if "b" in self._closed:
            out = self._closed["b"](t)
        elif self._b_spline is not None:
            out = self._b_spline(np.asarray(t, dtype=float))
        else:
            raise ValueError("drift is not time-only")
        return out if np.ndim(out) else float(out)

    def B_int(self, t, u):
        """int_t^u b(s) ds for time-only b."""
        if self.ou_k is not None:
            raise ValueError("B_int is undefined for the linear drift")
        if "B_int" in self._closed:
            out = self._closed["B_int"](t, u)
        elif self._B_spline is not None:
            out = self._B_spline(np.asarray(u, dtype=float)) - self._B_spline(np.asarray(t, dtype=float))
        else:
            raise ValueError("drift is not time-only")
        return out if np.ndim(out) else float(out)

    def sup_b(self, t_grid=None):
        """sup |b| over the time grid (time-only drift)."""
        tg = np.linspace(max(self.coeff.domain[0], 1e-3), 1.0, 401) if t_grid is None else t_grid
        return float(np.max(np.abs(self.b_time(tg))))


def eval_A(model, t, x):
    return SpaceTransform(model).A(t, x)


def eval_A_inv(model, t, u):
    return SpaceTransform(model).A_inv(t, u)


def eval_b(model, t, x):
    return SpaceTransform(model).b(t, x)


__all__ = ["SpaceTransform", "eval_A", "eval_A_inv", "eval_b", "eval_A_quad",
           "eval_A_t_quad", "invert_monotone"]

