"""Path simulation: signal Z, bridge (X, Z), transformed pair (U, R), OU bridge.

Every path draws its Gaussians from counter-based streams keyed by
(seed, path index, node, tag, slot), so ensembles are bit-identical under
any chunking or worker count. Integration stops at ``1 - eps_end``.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Optional

import numpy as np
from scipy.integrate import quad, solve_ivp

from . import _core, rng
from .errors import BackendMismatch, DomainError, DriftOverflow
from .pdesolve import phi_function
from .transform import SpaceTransform

CLIP_C = 5.0
MAX_DEPTH = 4
DEFAULT_CHUNK = 512
DRIFTS = ("optimal", "zero", "follmer")


# ------------------------------------------------------------------ grids

@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Increasing nodes on [0, 1 - eps_end].

    ``geometric`` grids are uniform up to ``switch`` and then satisfy
    (1 - t_{i+1}) = ratio (1 - t_i). With ``ratio=None`` the ratio is
    matched so the first geometric step equals the uniform step.
    """

    nodes: np.ndarray
    eps_end: float
    refinement: str
    ratio: Optional[float] = None
    switch: Optional[float] = None

    @property
    def dt(self):
        return np.diff(self.nodes)

    @property
    def n_steps(self):
        return self.nodes.size - 1

    @property
    def t_end(self):
        return float(self.nodes[-1])

    def index(self, t):
        """Index of the node closest to ``t``."""
        return int(np.argmin(np.abs(self.nodes - t)))

    @classmethod
    def uniform(cls, n_steps, eps_end=1e-3, t_end=None):
        t_end = 1.0 - eps_end if t_end is None else t_end
        return cls(np.linspace(0.0, t_end, n_steps + 1), float(1.0 - t_end), "uniform")

    @classmethod
    def geometric(cls, n_steps, eps_end=1e-3, switch=0.9, ratio=None):
        if not 0 < eps_end < 1 - switch:
            raise DomainError("need 0 < eps_end < 1 - switch")
        span = math.log(eps_end / (1.0 - switch))
        if ratio is None:
            best = None
            for n_u in range(1, n_steps):
                n_g = n_steps - n_u
                r = math.exp(span / n_g)
                err = abs(math.log((1.0 - switch) * (1.0 - r) / (switch / n_u)))
                if best is None or err < best[0]:
                    best = (err, n_u, r)
            _, n_u, r = best
        else:
            n_g = max(1, math.ceil(span / math.log(ratio)))
            n_u = n_steps - n_g
            if n_u < 1:
                raise DomainError("too few steps for the requested ratio")
            r = math.exp(span / n_g)
        n_g = n_steps - n_u
        uni = np.linspace(0.0, switch, n_u + 1)
        geo = 1.0 - (1.0 - switch) * r ** np.arange(1, n_g + 1)
        geo[-1] = 1.0 - eps_end
        return cls(np.concatenate([uni, geo]), float(eps_end), "geometric", r, switch)

    @classmethod
    def default(cls, n_steps=4096, eps_end=1e-3):
        return cls.geometric(n_steps, eps_end)

    def refine(self, level):
        return TimeGrid(rng.refine_times(self.nodes, level), self.eps_end,
                        self.refinement, self.ratio, self.switch)

    def to_dict(self):
        return {"refinement": self.refinement, "n_steps": self.n_steps,
                "eps_end": self.eps_end, "ratio": self.ratio, "switch": self.switch}


# --------------------------------------------------------------- ensembles

def config_digest(config):
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(eq=False)
class PathEnsemble:
    grid: TimeGrid
    series: Dict[str, np.ndarray]
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return next(iter(self.series.values())).shape[0]

    def __getitem__(self, name):
        return self.series[name]

    def at(self, name, t):
        return self.series[name][:, self.grid.index(t)]

    def node_stats(self, name, nodes=None):
        m = self.series[name]
        idx = np.arange(m.shape[1]) if nodes is None else np.asarray(nodes)
        sub = m[:, idx]
        return {"t": self.grid.nodes[idx].tolist(), "mean": sub.mean(0).tolist(),
                "sd": sub.std(0, ddof=1).tolist() if m.shape[0] > 1 else [0.0] * idx.size,
                "median": np.median(sub, 0).tolist()}

    def to_csv(self, directory, prefix="", nodes=None, max_paths=None):
        """One CSV per process: rows are nodes, columns t and the paths."""
        os.makedirs(directory, exist_ok=True)
        idx = np.arange(self.grid.nodes.size) if nodes is None else np.asarray(nodes)
        written = []
        for name, m in self.series.items():
            sub = m[:max_paths, idx] if max_paths else m[:, idx]
            body = np.column_stack([self.grid.nodes[idx], sub.T])
            header = ",".join(["t"] + [f"p{i}" for i in range(sub.shape[0])])
            path = os.path.join(directory, f"{prefix}{name}.csv")
            np.savetxt(path, body, fmt="%.17g", delimiter=",", header=header, comments="")
            written.append(path)
        return written

    def summary(self, config=None, nodes=None):
        cfg = {} if config is None else config
        return {"seed": self.seed, "config_digest": config_digest(cfg),
                "grid": self.grid.to_dict(), "n_paths": self.n_paths,
                "meta": {k: v for k, v in self.meta.items() if _jsonable(v)},
                "stats": {k: self.node_stats(k, nodes) for k in self.series}}

    def to_json(self, path, config=None, nodes=None):
        with open(path, "w") as fh:
            json.dump(self.summary(config, nodes), fh, indent=1, sort_keys=True)
        return path


def _jsonable(v):
    try:
        json.dumps(v)
        return True
    except TypeError:
        return False


def _run_chunks(fn, n_paths, workers=1, chunk=DEFAULT_CHUNK):
    """Apply ``fn(path_ids)`` over path chunks and stitch results by index."""
    ids = np.arange(n_paths, dtype=np.int64)
    pieces = [ids[i:i + chunk] for i in range(0, n_paths, chunk)]
    if workers > 1 and len(pieces) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(fn, pieces))
    else:
        results = [fn(p) for p in pieces]
    series = {k: np.concatenate([r[0][k] for r in results]) for k in results[0][0]}
    counts = {}
    for _, c in results:
        for k, v in c.items():
            counts[k] = counts.get(k, 0) + int(v)
    return series, counts


# ------------------------------------------------------------------ signal

def _ou_var(k, d):
    return -np.expm1(-2.0 * k * d) / (2.0 * k)


def _signal_block(model, tr, t, path_ids, seed, method):
    """Transformed signal U and original signal Z on the nodes ``t``."""
    V = model.V(t)
    n = path_ids.size
    xi0 = rng.normals(seed, path_ids, [0], rng.TAG_Z0)[:, 0]
    k = model.ou_k
    if k is not None:
        u0 = math.sqrt(_ou_var(k, model.c)) * xi0
    elif tr.b_is_time_only:
        u0 = float(tr.B_int(0.0, model.c)) + math.sqrt(model.c) * xi0
    else:
        raise BackendMismatch("the signal sampler needs a time-only or linear drift")
    xi = rng.normals(seed, path_ids, np.arange(t.size - 1), rng.TAG_BETA)
    U = np.empty((n, t.size))
    U[:, 0] = u0
    if method == "exact":
        dV = np.diff(V)
        if k is not None:
            decay, sd = np.exp(-k * dV), np.sqrt(_ou_var(k, dV))
            for i in range(t.size - 1):
                U[:, i + 1] = U[:, i] * decay[i] + sd[i] * xi[:, i]
        else:
            shift = np.asarray(tr.B_int(V[:-1], V[1:]), dtype=float)
            sd = np.sqrt(dV)
            U[:, 1:] = u0[:, None] + np.cumsum(shift[None, :] + sd[None, :] * xi, axis=1)
        Z = _to_original(model, tr, V, U)
        return U, Z
    if method != "euler":
        raise ValueError(f"unknown signal method {method!r}")
    co = model.coeff
    s = model.profile.sigma(t)
    s2 = model.profile.sigma2(t)
    dt = np.diff(t)
    Z = np.empty_like(U)
    Z[:, 0] = _to_original(model, tr, V[:1], U[:, :1])[:, 0]
    for i in range(t.size - 1):
        z = Z[:, i]
        drift = -k * s2[i] * z if k is not None else 0.0
        Z[:, i + 1] = z + drift * dt[i] + s[i] * co.a(V[i], z) * math.sqrt(dt[i]) * xi[:, i]
    U = _to_transformed(model, tr, V, Z)
    return U, Z


def _to_original(model, tr, times, M):
    if model.ou_k is not None:
        return M.copy()
    if model.coeff.family == "constant":
        return float(model.coeff.params.get("a0", 1.0)) * M
    out = np.empty_like(M)
    for j, s in enumerate(np.atleast_1d(times)):
        out[:, j] = tr.A_inv(float(s), M[:, j])
    return out


def _to_transformed(model, tr, times, M):
    if model.ou_k is not None:
        return M.copy()
    if model.coeff.family == "constant":
        return M / float(model.coeff.params.get("a0", 1.0))
    out = np.empty_like(M)
    for j, s in enumerate(np.atleast_1d(times)):
        out[:, j] = tr.A(float(s), M[:, j])
    return out


def simulate_signal(model, grid, n_paths, seed, method="exact", transform=None,
                    workers=1, chunk=DEFAULT_CHUNK):
    """Signal paths: Z_0 from Gamma(0, 0; c, .) mapped through A^{-1}, then
    exact Gaussian stepping of U = A(V(t), Z) or Euler on Z."""
    tr = SpaceTransform(model) if transform is None else transform
    t = grid.nodes

    def block(ids):
        U, Z = _signal_block(model, tr, t, ids, seed, method)
        return {"U": U, "Z": Z}, {}

    series, _ = _run_chunks(block, n_paths, workers, chunk)
    return PathEnsemble(grid, series, seed, {"method": method, "process": "signal"})


# --------------------------------------------------------- drift tables

def ou_drift_coeffs(k, tau):
    """(k / sinh(k tau), -k coth(k tau)), stable as k tau -> 0."""
    tau = np.asarray(tau, dtype=float)
    x = k * tau
    small = np.abs(x) < 1e-4
    xs = np.where(small, 1.0, x)
    ratio = np.where(small, 1.0 - x * x / 6.0, xs / np.sinh(xs))
    cothx = np.where(small, 1.0 + x * x / 3.0, xs / np.tanh(xs))
    return ratio / tau, -cothx / tau


def _affine_tables(model, tr, t, drift, scale):
    """Coefficients of the transformed drift r0 + ru U + rr R, plus the part
    of it that is not the trading rate (``base``)."""
    if drift not in DRIFTS:
        raise ValueError(f"unknown drift {drift!r}")
    s = float(scale)
    zeros = np.zeros_like(t)
    if drift == "follmer":
        if not (model.coeff.family == "constant" or model.ou_k is not None):
            raise BackendMismatch("the naive drift is affine only for constant a")
        inv = 1.0 / (1.0 - t)
        return zeros, s * inv, -s * inv, zeros
    if model.ou_k is not None:
        if drift == "zero":
            return zeros, zeros, zeros, zeros
        ru, rr = ou_drift_coeffs(model.ou_k, model.profile.gap(t))
        return zeros, s * ru, s * rr, zeros
    if not tr.b_is_time_only:
        raise BackendMismatch("affine drift tables need a time-only drift")
    bt = np.asarray(tr.b_time(t), dtype=float) * np.ones_like(t)
    if drift == "zero":
        return bt, zeros, zeros, bt
    tau = model.profile.gap(t)
    Bv = np.asarray(tr.B_int(t, model.V(t)), dtype=float)
    return bt - s * Bv / tau, s / tau, -s / tau, bt


def transformed_block(model, tr, grid, seed, drift="optimal", scale=1.0,
                      clip_c=CLIP_C, max_depth=MAX_DEPTH):
    """Block function ids -> ({U, R, Z, alpha}, counts) for the affine R scheme."""
    t = grid.nodes
    if grid.eps_end < 1e-6:
        raise DomainError("eps_end must be at least 1e-6")
    r0, ru, rr, base = _affine_tables(model, tr, t, drift, scale)
    dt = np.diff(t)

    def block(ids):
        U, Z = _signal_block(model, tr, t, ids, seed, "exact")
        dB = rng.normals(seed, ids, np.arange(t.size - 1), rng.TAG_B) * np.sqrt(dt)
        R, halv, caps = _core.bridge_affine(np.zeros(ids.size), U, t, r0, ru, rr, dB,
                                            seed, ids, rng.TAG_B, clip_c, max_depth)
        alpha = r0 - base + ru * U + rr * R
        return {"U": U, "R": R, "Z": Z, "alpha": alpha}, {"halvings": halv.sum(),
                                                          "caps": caps.sum()}
    return block


def simulate_transformed(model, transform, grid, n_paths, seed, drift="optimal",
                         scale=1.0, workers=1, chunk=DEFAULT_CHUNK, clip_c=CLIP_C,
                         max_depth=MAX_DEPTH, record=("U", "R", "alpha")):
    """The pair (U, R): exact U, Euler R with the closed affine drift.

    With a time-only b the optimal R-drift is
    (U - R - B_int(t, V(t))) / (V(t) - t) + b(t); in the OU mode it is
    k U / sinh(k tau) - k coth(k tau) R. ``alpha`` is the trading rate,
    the R-drift minus its non-strategic part.
    """
    tr = SpaceTransform(model) if transform is None else transform
    inner = transformed_block(model, tr, grid, seed, drift, scale, clip_c, max_depth)

    def block(ids):
        out, counts = inner(ids)
        if "X" in record:
            out["X"] = _to_original(model, tr, grid.nodes, out["R"])
        return {k: out[k] for k in record}, counts

    series, counts = _run_chunks(block, n_paths, workers, chunk)
    meta = {"process": "transformed", "drift": drift, "scale": scale, **counts}
    return PathEnsemble(grid, series, seed, meta)


# ------------------------------------------------------------------ bridge

def _generic_alpha(model, tr, drift, scale):
    """Trading rate alpha(t, x, z) in original coordinates (vectorized in x, z)."""
    co = model.coeff
    s = float(scale)

    def optimal(t, x, z):
        V = float(model.V(t))
        tau = float(model.profile.gap(t))
        return s * (tr.A(V, z) - tr.A(t, x) - float(tr.B_int(t, V))) / tau

    def follmer(t, x, z):
        return s * (z - x) / ((1.0 - t) * co.a(t, x))

    def zero(t, x, z):
        return 0.0 * x

    return {"optimal": optimal, "follmer": follmer, "zero": zero}[drift]


def _euler_substep(x, z, ts, h, w, alpha_fn, a_fn, seed, path, node, heap, depth,
                   max_depth, clip_c, counts):
    xi = rng.normals(seed, [path], [node], rng.TAG_B, heap)[0, 0]
    half = 0.5 * h
    w1 = 0.5 * w + math.sqrt(0.25 * h) * xi
    bound = clip_c * math.sqrt(half)
    for t0, ws, child in ((ts, w1, 2 * heap), (ts + half, w - w1, 2 * heap + 1)):
        a = float(a_fn(t0, x))
        move = a * float(alpha_fn(t0, np.array([x]), np.array([z]))[0]) * half
        if abs(move) <= bound:
            x = x + move + a * ws
        elif depth >= max_depth:
            counts[1] += 1
            x = x + math.copysign(bound, move) + a * ws
        else:
            counts[0] += 1
            x = _euler_substep(x, z, t0, half, ws, alpha_fn, a_fn, seed, path, node,
                               child, depth + 1, max_depth, clip_c, counts)
    return x


def _euler_original(model, tr, t, Z, dB, alpha_fn, seed, ids, clip_c, max_depth):
    co = model.coeff
    n, m = Z.shape
    X = np.zeros((n, m))
    alpha = np.zeros((n, m))
    x = np.zeros(n)
    counts = [0, 0]
    for i in range(m - 1):
        dt = t[i + 1] - t[i]
        al = alpha_fn(t[i], x, Z[:, i])
        a = co.a(t[i], x)
        move = a * al * dt
        x_new = x + move + a * dB[:, i]
        for p in np.flatnonzero(np.abs(move) > clip_c * math.sqrt(dt)):
            counts[0] += 1
            x_new[p] = _euler_substep(float(x[p]), float(Z[p, i]), t[i], dt, float(dB[p, i]),
                                      alpha_fn, co.a, seed, int(ids[p]), i, 1, 1,
                                      max_depth, clip_c, counts)
        alpha[:, i] = al
        x = x_new
        X[:, i + 1] = x
    alpha[:, -1] = alpha_fn(t[-1], x, Z[:, -1])
    return X, alpha, counts


def _affine_capable(model, tr):
    return model.ou_k is not None or model.coeff.family == "constant"


def bridge_block(model, tr, grid, seed, drift="optimal", scale=1.0, clip_c=CLIP_C,
                 max_depth=MAX_DEPTH, scheme="auto"):
    """Block function ids -> ({X, Z, alpha, Y}, counts) for the bridge.

    Y is the total demand, dX = a dY: for the affine scheme Y = R - int b,
    for the Euler scheme Y accumulates dB + alpha dt.
    """
    if scheme == "auto":
        scheme = "affine" if _affine_capable(model, tr) else "euler"
    t = grid.nodes
    if scheme == "affine":
        inner = transformed_block(model, tr, grid, seed, drift, scale, clip_c, max_depth)
        if model.ou_k is None:
            drift_int = np.asarray(tr.B_int(0.0, t), dtype=float) * np.ones_like(t)
        else:
            drift_int = np.zeros_like(t)

        def block(ids):
            out, counts = inner(ids)
            R = out["R"]
            out["X"] = _to_original(model, tr, t, R)
            out["Y"] = R - drift_int[None, :]
            return out, counts
        return block, scheme
    if grid.eps_end < 1e-6:
        raise DomainError("eps_end must be at least 1e-6")
    alpha_fn = _generic_alpha(model, tr, drift, scale)
    dt = np.diff(t)

    def block(ids):
        U, Z = _signal_block(model, tr, t, ids, seed, "exact")
        dB = rng.normals(seed, ids, np.arange(t.size - 1), rng.TAG_B) * np.sqrt(dt)
        X, alpha, counts = _euler_original(model, tr, t, Z, dB, alpha_fn, seed, ids,
                                           clip_c, max_depth)
        Y = np.zeros_like(X)
        Y[:, 1:] = np.cumsum(dB + alpha[:, :-1] * dt, axis=1)
        return {"X": X, "Z": Z, "alpha": alpha, "U": U, "Y": Y}, \
            {"halvings": counts[0], "caps": counts[1]}
    return block, scheme


def simulate_bridge(model, kernel, grid, n_paths, seed, drift="optimal", scale=1.0,
                    workers=1, chunk=DEFAULT_CHUNK, clip_c=CLIP_C, max_depth=MAX_DEPTH,
                    record=("X", "Z", "alpha"), scheme="auto", strict_clip=False):
    """Euler-Maruyama for dX = a dB + a^2 d/dx log rho dt with X_0 = 0.

    For constant a (and the OU mode) the scheme in original coordinates is
    affine and runs in the compiled core; otherwise a vectorized Euler loop
    in original coordinates. ``alpha`` is the trading rate (the drift of
    Y, i.e. a d/dx log rho for the optimal drift). Drift moves beyond
    ``clip_c * sqrt(dt)`` are halved locally; with ``strict_clip`` a capped
    step raises DriftOverflow instead of being counted.
    """
    tr = kernel.tr if kernel is not None else SpaceTransform(model)
    if kernel is not None and kernel.backend == "numeric":
        raise BackendMismatch("path simulation needs a closed-form kernel")
    inner, scheme = bridge_block(model, tr, grid, seed, drift, scale, clip_c, max_depth,
                                 scheme)

    def block(ids):
        out, counts = inner(ids)
        return {k: out[k] for k in record}, counts

    series, counts = _run_chunks(block, n_paths, workers, chunk)
    if strict_clip and counts.get("caps", 0):
        raise DriftOverflow(f"{counts['caps']} drift caps at depth {max_depth}")
    meta = {"process": "bridge", "scheme": scheme, "drift": drift, "scale": scale, **counts}
    return PathEnsemble(grid, series, seed, meta)


def gap_decay(ensemble, times=(0.9, 0.99, 0.999)):
    """Median |X_t - Z_t| at the nodes closest to ``times``."""
    X, Z = ensemble["X"], ensemble["Z"]
    rows = []
    for t in times:
        j = ensemble.grid.index(t)
        rows.append((float(ensemble.grid.nodes[j]), float(np.median(np.abs(X[:, j] - Z[:, j])))))
    return rows


# ------------------------------------------------------ exact R sampler

def exact_r_moments(model, transform, t):
    """Mean and variance of R_t from the closed-form solution of the R equation.

    With E(s, t) = lambda(t) / lambda(s),
      R_t = U_0 (1 - lambda(t)) + int_0^t sigma^2 b(V) ds
            - int_0^t E(s,t) [sigma^2 b(V(s)) - b(s) + B_int(s, V(s)) / (V(s) - s)] ds
            + int_0^t sigma (1 - E(s,t)) dbeta + int_0^t E(s,t) dB,
    a Gaussian variable. Integrals by adaptive quadrature.
    """
    tr = transform
    prof = model.profile
    if not tr.b_is_time_only:
        raise BackendMismatch("the exact R solution needs a time-only drift")
    lam_t = float(prof.lam(t))
    c = model.c

    def E(s):
        return lam_t / float(prof.lam(s))

    def bV(s):
        return float(prof.sigma2(s)) * float(tr.b_time(float(prof.V(s))))

    def kern(s):
        g = float(prof.gap(s))
        return E(s) * (bV(s) - float(tr.b_time(s)) + float(tr.B_int(s, float(prof.V(s)))) / g)

    opts = dict(epsabs=1e-13, epsrel=1e-11, limit=400)
    mean = ((1.0 - lam_t) * float(tr.B_int(0.0, c)) + quad(bV, 0.0, t, **opts)[0]
            - quad(kern, 0.0, t, **opts)[0])
    var = (c * (1.0 - lam_t) ** 2
           + quad(lambda s: float(prof.sigma2(s)) * (1.0 - E(s)) ** 2, 0.0, t, **opts)[0]
           + quad(lambda s: E(s) ** 2, 0.0, t, **opts)[0])
    return mean, var


def exact_r_sample(model, transform, t, n, seed):
    """Direct draws of R_t from its exact Gaussian law."""
    m, v = exact_r_moments(model, transform, t)
    xi = rng.normals(seed, np.arange(n), [0], rng.TAG_INNER, slot=1)[:, 0]
    return m + math.sqrt(v) * xi


# ------------------------------------------------------------- OU bridge

@dataclass(frozen=True, eq=False)
class ComparisonFunction:
    """Solution of b' + gamma b = theta with b(0) = 0 on [0, t_end]."""

    t_end: float
    sol: object
    k: float

    def __call__(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.t_end)
        out = self.sol.sol(t)[0] if np.ndim(t) else float(self.sol.sol(float(t))[0])
        return out

    @property
    def terminal(self):
        return float(self.sol.y[0, -1])


def ou_comparison_function(model, k, t_end=1.0 - 1e-10, rtol=1e-12, atol=1e-14):
    """b' + (k coth(k tau) - k sigma^2) b = k / sinh(k tau), tau = V(t) - t."""
    prof = model.profile

    def rhs(t, y):
        tau = float(prof.gap(t))
        ratio, mcoth = ou_drift_coeffs(k, tau)
        gamma = -float(mcoth) - k * float(prof.sigma2(t))
        return [float(ratio) - gamma * y[0]]

    def jac(t, y):
        tau = float(prof.gap(t))
        _, mcoth = ou_drift_coeffs(k, tau)
        return [[float(mcoth) + k * float(prof.sigma2(t))]]

    sol = solve_ivp(rhs, (0.0, t_end), [0.0], method="Radau", jac=jac, rtol=rtol,
                    atol=atol, dense_output=True)
    if not sol.success:
        raise RuntimeError(f"comparison ODE failed: {sol.message}")
    return ComparisonFunction(t_end, sol, float(k))


def simulate_ou_bridge(k, model, grid, n_paths, seed, workers=1, chunk=DEFAULT_CHUNK):
    """OU-signal bridge with drift 2k (Z - X e^{-k tau}) / (e^{k tau} - e^{-k tau}) - k X.

    Also records Y = X - b(t) Z with b the comparison function.
    """
    if k <= 0:
        raise DomainError("k must be positive")
    if model.coeff.family != "constant" or float(model.coeff.params.get("a0", 1.0)) != 1.0:
        raise BackendMismatch("the OU bridge needs a = 1")
    ou_model = replace(model, ou_k=float(k)) if model.ou_k != k else model
    ens = simulate_transformed(ou_model, None, grid, n_paths, seed, workers=workers,
                               chunk=chunk, record=("U", "R"))
    bfun = ou_comparison_function(ou_model, k)
    X, Z = ens.series.pop("R"), ens.series.pop("U")
    bt = bfun(grid.nodes)
    ens.series = {"X": X, "Z": Z, "Y": X - bt[None, :] * Z}
    ens.meta.update(process="ou_bridge", k=float(k), b_terminal=bfun.terminal)
    ens.meta["comparison"] = bfun
    return ens


# ------------------------------------------------------ supermartingale

@dataclass(frozen=True)
class SupermartingaleReport:
    times: np.ndarray
    means: np.ndarray
    ses: np.ndarray
    slack: float
    violations: tuple
    expected_mean: float

    @property
    def passed(self):
        return not self.violations


def supermartingale_diagnostic(ensemble, model, checkpoints=None, slack=2.0, ell=None):
    """Mean of phi(t, X_t, Z_t) per node; flags increases beyond ``slack``
    standard errors of the paired difference between consecutive checkpoints."""
    ell = model.ell if ell is None else ell
    t = ensemble.grid.nodes
    X, Z = ensemble["X"], ensemble["Z"]
    idx = np.arange(t.size) if checkpoints is None else np.array(
        [ensemble.grid.index(s) for s in checkpoints])
    vals = np.stack([phi_function(model, t[j], X[:, j], Z[:, j], ell) for j in idx], axis=1)
    n = vals.shape[0]
    means = vals.mean(0)
    ses = vals.std(0, ddof=1) / math.sqrt(n)
    bad = []
    for j in range(1, idx.size):
        d = vals[:, j] - vals[:, j - 1]
        se = d.std(ddof=1) / math.sqrt(n)
        if d.mean() > slack * se:
            bad.append(float(t[idx[j]]))
    expected = 1.0 / math.sqrt(2.0 * (ell - model.c)) if ell > model.c else float("inf")
    return SupermartingaleReport(t[idx], means, ses, slack, tuple(bad), expected)


# ------------------------------------------------------- strong order

@dataclass(frozen=True)
class StrongOrderReport:
    steps: tuple
    errors: tuple
    coupling: tuple
    order: float

    @property
    def passed(self):
        return self.order >= 0.5


def strong_order_study(model, n_paths, seed, T=0.5, base_steps=32, levels=4, ref_extra=4):
    """Euler error of X in original coordinates against A^{-1}(T, R_ref).

    R_ref solves the transformed equation on a grid 2^ref_extra times finer
    than the finest Euler grid, driven by the same Brownian path (bridge
    splits of the coarse increments). The signal is simulated once on the
    reference grid and subsampled.
    """
    tr = SpaceTransform(model)
    if not tr.b_is_time_only:
        raise BackendMismatch("the strong-order study needs a time-only drift")
    co = model.coeff
    top = levels - 1 + ref_extra
    coarse = TimeGrid.uniform(base_steps, t_end=T)
    fine_t = rng.refine_times(coarse.nodes, top)
    ids = np.arange(n_paths)
    dB_f = rng.increments(seed, ids, coarse.dt, rng.TAG_B, top)
    dW_f = rng.increments(seed, ids, coarse.dt, rng.TAG_BETA, top)
    V = model.V(fine_t)
    dt_f = np.diff(fine_t)
    xi0 = rng.normals(seed, ids, [0], rng.TAG_Z0)[:, 0]
    shift = np.asarray(tr.B_int(V[:-1], V[1:]), dtype=float)
    inc = shift[None, :] + np.sqrt(np.diff(V) / dt_f)[None, :] * dW_f
    U = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(inc, axis=1)], axis=1)
    U += float(tr.B_int(0.0, model.c)) + math.sqrt(model.c) * xi0[:, None]
    r0, ru, rr, _ = _affine_tables(model, tr, fine_t, "optimal", 1.0)
    R_ref, _, _ = _core.bridge_affine(np.zeros(n_paths), U, fine_t, r0, ru, rr, dB_f,
                                      seed, ids, rng.TAG_B, np.inf, 0)
    x_ref = tr.A_inv(T, R_ref[:, -1])
    alpha_fn = _generic_alpha(model, tr, "optimal", 1.0)
    steps, errors, coupling = [], [], []
    for lev in range(levels):
        stride = 2 ** (top - lev)
        idx = np.arange(0, fine_t.size, stride)
        t = fine_t[idx]
        dB = dB_f.reshape(n_paths, -1, stride).sum(axis=2)
        Zc = np.empty((n_paths, idx.size))
        for j, s in enumerate(idx):
            Zc[:, j] = tr.A_inv(float(V[s]), U[:, s])
        x = np.zeros(n_paths)
        for i in range(t.size - 1):
            a = co.a(t[i], x)
            x = x + a * alpha_fn(t[i], x, Zc[:, i]) * (t[i + 1] - t[i]) + a * dB[:, i]
        steps.append(t.size - 1)
        errors.append(float(np.mean(np.abs(x - x_ref))))
        coupling.append(float(np.mean(np.abs(tr.A(T, x) - R_ref[:, -1]))))
    h = T / np.array(steps, dtype=float)
    order = float(np.polyfit(np.log(h), np.log(errors), 1)[0])
    return StrongOrderReport(tuple(steps), tuple(errors), tuple(coupling), order)


__all__ = [
    "TimeGrid", "PathEnsemble", "simulate_signal", "simulate_bridge",
    "simulate_transformed", "simulate_ou_bridge", "supermartingale_diagnostic",
    "exact_r_moments", "exact_r_sample", "ou_comparison_function", "ou_drift_coeffs",
    "gap_decay", "strong_order_study", "bridge_block", "transformed_block", "config_digest", "SupermartingaleReport",
    "StrongOrderReport", "ComparisonFunction",
]
