"""Insider market: strategies, wealth accounting, the Psi certificate,
rational-pricing checks and Brownianity of total demand."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import roots_hermitenorm

from . import rng, stats
from .errors import RootFindFailure
from .simulate import DEFAULT_CHUNK, PathEnsemble, _run_chunks, bridge_block
from .transform import SpaceTransform


# -------------------------------------------------------------- strategies

@dataclass(frozen=True)
class Strategy:
    """Trading rate alpha(t, x, z), the drift of total demand Y.

    ``kind`` selects the drift family (optimal, zero, follmer) and
    ``scale`` multiplies it. The optimal rate is a d/dx log rho.
    """

    label: str
    kind: str = "optimal"
    scale: float = 1.0

    def alpha(self, model, t, x, z, transform=None):
        tr = SpaceTransform(model) if transform is None else transform
        co = model.coeff
        x, z = np.asarray(x, dtype=float), np.asarray(z, dtype=float)
        if self.kind == "zero":
            return 0.0 * x
        if self.kind == "follmer":
            return self.scale * (z - x) / ((1.0 - t) * co.a(t, x))
        V = float(model.V(t))
        tau = float(model.profile.gap(t))
        if model.ou_k is not None:
            k = model.ou_k
            return self.scale * (k * z / math.sinh(k * tau) - k / math.tanh(k * tau) * x)
        return self.scale * (tr.A(V, z) - tr.A(t, x) - float(tr.B_int(t, V))) / tau


OPTIMAL = Strategy("optimal")
ZERO = Strategy("zero", "zero", 0.0)
HALF = Strategy("half", "optimal", 0.5)
DOUBLE = Strategy("double", "optimal", 2.0)
NAIVE = Strategy("naive", "follmer", 1.0)
COMPARISON_SET = (ZERO, HALF, DOUBLE, NAIVE)


# ------------------------------------------------------------------ market

@dataclass(eq=False)
class MarketOutcome:
    label: str
    wealth: np.ndarray
    wealth_alt: np.ndarray
    ensemble: PathEnsemble = None
    admissibility: float = float("nan")
    meta: dict = field(default_factory=dict)

    def summary(self):
        w = self.wealth
        return {"label": self.label, "n": int(w.size), "mean": float(w.mean()),
                "se": float(w.std(ddof=1) / math.sqrt(w.size)) if w.size > 1 else 0.0,
                "decomposition_max_abs": float(np.max(np.abs(w - self.wealth_alt))),
                "admissibility": self.admissibility, **self.meta}


def _price_paths(pricing, t, X):
    S = np.empty_like(X)
    for i in range(t.size):
        S[:, i] = pricing.H_vec(float(t[i]), X[:, i])
    return S


def run_market(model, kernel, pricing, strategy, grid, n_paths, seed, workers=1,
               chunk=DEFAULT_CHUNK, keep=("X", "Z", "Y", "S"), scheme="auto"):
    """Simulate the market under ``strategy`` and account terminal wealth.

    W = sum_i (f(Z_end) - S_i) alpha_i dt_i with S = H(t, X) and Z_end the
    signal at the last node; W_alt = (f(Z_end) - S_end) theta_end
    + sum_i theta_i (S_{i+1} - S_i) is the same quantity before
    integration by parts.
    """
    tr = kernel.tr
    t = grid.nodes
    dt = np.diff(t)
    inner, scheme = bridge_block(model, tr, grid, seed, strategy.kind, strategy.scale,
                                 scheme=scheme)
    f = model.payoff.f

    def block(ids):
        out, counts = inner(ids)
        X, Z, alpha = out["X"], out["Z"], out["alpha"]
        S = _price_paths(pricing, t, X)
        fz = f(Z[:, -1])
        flow = alpha[:, :-1] * dt
        W = np.sum((fz[:, None] - S[:, :-1]) * flow, axis=1)
        theta = np.concatenate([np.zeros((ids.size, 1)), np.cumsum(flow, axis=1)], axis=1)
        W_alt = (fz - S[:, -1]) * theta[:, -1] + np.sum(theta[:, :-1] * np.diff(S, axis=1), axis=1)
        H2 = np.sum(S[:, :-1] ** 2 * dt, axis=1)
        res = {"W": W, "W_alt": W_alt, "H2": H2}
        all_series = {"X": X, "Z": Z, "Y": out["Y"], "S": S, "alpha": alpha}
        res.update({k: all_series[k] for k in keep})
        return res, counts

    series, counts = _run_chunks(block, n_paths, workers, chunk)
    ens = PathEnsemble(grid, {k: series[k] for k in keep}, seed,
                       {"strategy": strategy.label, "scheme": scheme, **counts}) if keep else None
    return MarketOutcome(strategy.label, series["W"], series["W_alt"], ens,
                         float(series["H2"].mean()),
                         {"seed": int(seed), "scheme": scheme, **counts})


def compare_strategies(outcomes, reference="optimal", threshold=0.01):
    """One-sided Welch tests: does the reference strategy earn more?

    Returns {label: (verdict, status)} with status 'beats' when the
    reference mean is significantly larger, 'tie' otherwise.
    """
    ref = outcomes[reference].wealth
    out = {}
    for label, o in outcomes.items():
        if label == reference:
            continue
        if np.all(o.wealth == o.wealth[0]) and np.all(ref == ref[0]):
            out[label] = (None, "tie")
            continue
        v = stats.welch_mean_compare(ref, o.wealth, threshold, alternative="greater",
                                     name=f"{reference}>{label}")
        out[label] = (v, "beats" if v.p_value < threshold else "tie")
    return out


# --------------------------------------------------------------------- Psi

def _H_x(pricing, t, x, h=1e-5):
    if pricing.affine:
        return (pricing.H(t, x + 1.0) - pricing.H(t, x - 1.0)) / 2.0
    s = h * max(1.0, abs(x))
    return (pricing.H(t, x + s) - pricing.H(t, x - s)) / (2 * s)


def xi_level(pricing, t, a_level, x_bound=1e9, saturate=False):
    """xi(t, a): the root of H(t, xi) = a (H increasing in x).

    With ``saturate`` a level outside the range of H maps to -inf / +inf
    instead of raising (bounded payoffs whose extreme values are hit in
    floating point).
    """
    fn = lambda x: pricing.H(t, x) - a_level
    lo, hi = -1.0, 1.0
    while fn(lo) > 0:
        lo *= 2.0
        if abs(lo) > x_bound:
            if saturate:
                return -math.inf
            raise RootFindFailure(f"level {a_level} below the range of H({t}, .)")
    while fn(hi) < 0:
        hi *= 2.0
        if hi > x_bound:
            if saturate:
                return math.inf
            raise RootFindFailure(f"level {a_level} above the range of H({t}, .)")
    return brentq(fn, lo, hi, xtol=1e-13, rtol=1e-14)


def psi(pricing, a_level, t, x, model=None):
    """Psi^a(t, x) = int_{xi(t,a)}^x (H(t,u) - a) / w(t,u) du
    + 1/2 int_t^1 H_x(s, xi(s,a)) w(s, xi(s,a)) ds.

    A level outside the range of H puts xi at -inf or +inf, where the
    second integrand vanishes.
    """
    t = float(t)
    xi = xi_level(pricing, t, a_level, saturate=True)
    first = quad(lambda u: (pricing.H(t, u) - a_level) / float(pricing.w(t, u)), xi, x,
                 epsabs=1e-11, epsrel=1e-9, limit=200)[0]
    if t >= 1.0:
        return first

    def g(s):
        z = xi_level(pricing, s, a_level, saturate=True)
        if not math.isfinite(z):
            return 0.0
        return _H_x(pricing, s, z) * float(pricing.w(s, z))

    second = quad(g, t, 1.0, epsabs=1e-11, epsrel=1e-9, limit=200)[0]
    return first + 0.5 * second


def expected_optimal_wealth(model, kernel, pricing, n_nodes=40):
    """E[Psi^{f(Z_1)}(0, 0)] with Z_1 = A^{-1}(1, U_1), U_1 ~ Gamma(0, 0; 1, .).

    Gauss-Hermite over the law of U_1; each node evaluates Psi by
    quadrature and root finding.
    """
    tr = kernel.tr
    x, w = roots_hermitenorm(n_nodes)
    w = w / w.sum()
    if model.ou_k is not None:
        m, v = 0.0, -math.expm1(-2 * model.ou_k) / (2 * model.ou_k)
    else:
        m, v = float(tr.B_int(0.0, 1.0)), 1.0
    vals = []
    for node in x:
        z1 = float(tr.A_inv(1.0, m + math.sqrt(v) * node))
        vals.append(psi(pricing, float(model.payoff.f(z1)), 0.0, 0.0, model))
    return float(np.dot(w, vals))


def psi_terminal_gap(pricing, model, outcome, eps_values=(1e-1, 1e-2, 1e-3), n_sub=200):
    """Mean Psi^{f(Z_end)}(1 - eps, X_{1-eps}) along the first ``n_sub``
    simulated equilibrium paths, for each eps."""
    ens = outcome.ensemble
    t = ens.grid.nodes
    X, Z = ens["X"], ens["Z"]
    f = model.payoff.f
    sub = np.arange(min(n_sub, X.shape[0]))
    out = []
    for eps in eps_values:
        j = ens.grid.index(1.0 - eps)
        vals = [psi(pricing, float(f(Z[p, -1])), float(t[j]), float(X[p, j])) for p in sub]
        out.append((float(t[j]), float(np.mean(vals))))
    return out


# --------------------------------------------------------- rational pricing

@dataclass(frozen=True)
class PricingReport:
    points: tuple
    mc_means: tuple
    mc_ses: tuple
    h_values: tuple
    tol: float
    martingale: tuple = ()

    @property
    def errors(self):
        return tuple(abs(m - h) for m, h in zip(self.mc_means, self.h_values))

    @property
    def passed(self):
        ok = all(abs(m - h) <= 3 * s + self.tol
                 for m, s, h in zip(self.mc_means, self.mc_ses, self.h_values))
        return ok and all(v.passed for v in self.martingale)


def verify_rational_pricing(model, kernel, pricing, points, n_inner, seed, eps_end=1e-3,
                            steps=256, tol=1e-6, outcome=None, checkpoints=(0.25, 0.5, 0.75)):
    """Nested Monte Carlo of E[f(X_{1-eps}) | X_t = x] under dX = a(s, X) dW.

    Each point gets its own sub-stream. When an equilibrium ``outcome``
    with S recorded is given, increments of S between checkpoints are
    tested for zero mean (Bonferroni over checkpoints).
    """
    co = model.coeff
    f = model.payoff.f
    means, ses, hs = [], [], []
    for j, (t0, x0) in enumerate(points):
        s = rng.derive_seed(seed, j, 0x9A1CE)
        ts = np.linspace(t0, 1.0 - eps_end, steps + 1)
        dts = np.diff(ts)
        xi = rng.normals(s, np.arange(n_inner), np.arange(steps), rng.TAG_INNER)
        x = np.full(n_inner, float(x0))
        for i in range(steps):
            x = x + co.a(ts[i], x) * math.sqrt(dts[i]) * xi[:, i]
        fx = f(x)
        means.append(float(fx.mean()))
        ses.append(float(fx.std(ddof=1) / math.sqrt(n_inner)))
        hs.append(float(pricing.H(t0, x0)))
    mart = []
    if outcome is not None and outcome.ensemble is not None and "S" in outcome.ensemble.series:
        S = outcome.ensemble["S"]
        g = outcome.ensemble.grid
        idx = [0] + [g.index(c) for c in checkpoints] + [S.shape[1] - 1]
        for a, b in zip(idx[:-1], idx[1:]):
            d = S[:, b] - S[:, a]
            v = stats.mean_within(d, 0.0, n_se=float(_bonf_z(len(idx) - 1)),
                                  name=f"dS[{g.nodes[a]:.3g},{g.nodes[b]:.3g}]")
            mart.append(v)
    return PricingReport(tuple(points), tuple(means), tuple(ses), tuple(hs), tol, tuple(mart))


def _bonf_z(m, level=0.01):
    from scipy.stats import norm
    return norm.isf(level / (2 * m))


def sample_points(outcome, n_points, seed, t_range=(0.05, 0.95)):
    """(t, x) pairs read off equilibrium paths at pseudo-random nodes."""
    ens = outcome.ensemble
    u = rng.uniforms(seed, np.arange(n_points), [0, 1], rng.TAG_INNER_START)
    pts = []
    for k in range(n_points):
        t = t_range[0] + (t_range[1] - t_range[0]) * u[k, 0]
        j = ens.grid.index(t)
        p = int(u[k, 1] * ens.n_paths) % ens.n_paths
        pts.append((float(ens.grid.nodes[j]), float(ens["X"][p, j])))
    return pts


# ---------------------------------------------------------- Brownianity

def regression_design(series, grid, t_check, frac=0.25):
    """Increment over [t, t + d] and the values at t, t - d, t - 2d, d = frac (1 - t)."""
    d = frac * (1.0 - t_check)
    j0, j1, j2, j3 = (grid.index(t_check - 2 * d), grid.index(t_check - d),
                      grid.index(t_check), grid.index(t_check + d))
    y = series[:, j3] - series[:, j2]
    X = np.column_stack([series[:, j2], series[:, j1], series[:, j0]])
    return y, X, j2


def own_past_regression(series, grid, checkpoints=(0.5, 0.9, 0.99), threshold=0.01,
                        name="own_past"):
    """Martingale regression at each checkpoint, Bonferroni across them."""
    verdicts = []
    for tc in checkpoints:
        y, X, _ = regression_design(series, grid, tc)
        verdicts.append(stats.martingale_regression(y, X, threshold, n_tests=len(checkpoints),
                                                    name=f"{name}@{tc}"))
    return verdicts


@dataclass(frozen=True)
class BrownianityReport:
    qv_ratio: float
    qv_fraction_within: float
    normality: tuple
    own_past: tuple
    z_dependence: tuple
    qv_tol: float = 0.02

    @property
    def qv_pass(self):
        return abs(self.qv_ratio - 1.0) <= self.qv_tol

    @property
    def normality_pass(self):
        return all(v.passed for v in self.normality)

    @property
    def own_past_pass(self):
        return all(v.passed for v in self.own_past)

    @property
    def z_visible(self):
        return any(not v.passed for v in self.z_dependence)

    @property
    def passed(self):
        return self.qv_pass and self.normality_pass and self.own_past_pass


def brownianity_tests(ensemble, checkpoints=(0.25, 0.5, 0.75, 0.9, 0.99), threshold=0.01,
                      regression_checkpoints=(0.5, 0.9, 0.99)):
    """(a) realized QV of Y against t (ensemble mean; fraction within 2%),
    (b) normality of standardized increments (Bonferroni), (c) own-past
    regression, (d) regression on (Y past, Z now): the Z slope."""
    Y, Z = ensemble["Y"], ensemble["Z"]
    g = ensemble.grid
    t = g.nodes
    qv = stats.realized_qv(Y)[:, -1]
    ratio = float(qv.mean() / t[-1])
    within = float(np.mean(np.abs(qv / t[-1] - 1.0) <= 0.02))
    norm = []
    m = len(checkpoints)
    for tc in checkpoints:
        j = g.index(tc)
        inc = (Y[:, j + 1] - Y[:, j]) / math.sqrt(t[j + 1] - t[j])
        v = stats.normality_test(inc, threshold / m, name=f"normality@{tc}")
        norm.append(v)
    own = own_past_regression(Y, g, regression_checkpoints, threshold, "Y_own_past")
    zdep = []
    for tc in regression_checkpoints:
        y, X, j = regression_design(Y, g, tc)
        Xz = np.column_stack([X, Z[:, j]])
        zdep.append(stats.martingale_regression(y, Xz, threshold,
                                                n_tests=len(regression_checkpoints),
                                                slopes=[3], name=f"Z_dependence@{tc}"))
    return BrownianityReport(ratio, within, tuple(norm), tuple(own), tuple(zdep))


__all__ = ["Strategy", "OPTIMAL", "ZERO", "HALF", "DOUBLE", "NAIVE", "COMPARISON_SET",
           "MarketOutcome", "run_market", "compare_strategies", "psi", "xi_level",
           "expected_optimal_wealth", "psi_terminal_gap", "verify_rational_pricing",
           "PricingReport", "sample_points", "brownianity_tests", "BrownianityReport",
           "own_past_regression", "regression_design"]
