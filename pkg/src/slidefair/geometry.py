"""Feasible-set geometry of surrogate constraints on linear models.

Also holds the 1-D hinge example and the convergence simulation.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt
from scipy.optimize import minimize
from scipy.spatial import cKDTree
from scipy.special import log_ndtr, ndtr

from .constraints import ConstraintSpec
from .data import Dataset, convergence_law, plain_schema, sampler_for
from .rng import substream
from .nn_core import ModelParams
from .surrogates import SurrogateSpec

GRID_CHUNK = 256


class EmptySetError(ValueError):
    pass


class InfeasibleError(ValueError):
    pass


# parameter grids -------------------------------------------------------

@dataclass
class ParamGrid:
    """Regular grid over 2-D linear coefficients with constraint values attached per node."""

    ranges: tuple = ((-2.0, 2.0), (-2.0, 2.0))
    resolution: tuple = (200, 200)
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.resolution, int):
            self.resolution = (self.resolution, self.resolution)
        self.ranges = tuple(tuple(map(float, r)) for r in self.ranges)
        self.resolution = tuple(int(r) for r in self.resolution)
        if len(self.ranges) != len(self.resolution):
            raise ValueError("one range per axis")
        if min(self.resolution) < 2:
            raise ValueError("resolution must be >= 2 per axis")
        for lo, hi in self.ranges:
            if not hi > lo:
                raise ValueError("each range needs low < high")

    @property
    def axes(self):
        return [np.linspace(lo, hi, r) for (lo, hi), r in zip(self.ranges, self.resolution)]

    @property
    def spacing(self):
        return tuple((hi - lo) / (r - 1) for (lo, hi), r in zip(self.ranges, self.resolution))

    @property
    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def size(self) -> int:
        return int(np.prod(self.resolution))

    def set_values(self, kind: str, vals) -> None:
        vals = np.asarray(vals, dtype=float).ravel()
        if vals.shape[0] != self.size:
            raise ValueError("one value per node expected")
        if np.any(~np.isfinite(vals)) or np.any(vals < 0):
            raise ValueError("constraint values must be finite and nonnegative")
        self.values[kind] = vals


def surrogate_key(s: SurrogateSpec) -> str:
    return s.kind if s.tau is None or s.kind in ("hinge", "indicator", "linear") else f"{s.kind}_{s.tau:g}"


def if_pairwise_grid(grid: ParamGrid, sampler, surrogates, gamma=0.3, n_mc=10_000, seed=0):
    """Population pairwise-IF values of ``f(x) = <beta, x>`` at every node, one shared MC sample.

    Draws exactly the pairs ``mc_population_constraint`` would draw for the
    same seed, so node values agree with it.
    """
    if n_mc < 1000:
        raise ValueError("n_mc must be at least 1000")
    rng = substream(seed, "mc")
    X, _, _ = sampler(n_mc, rng)
    Xp, _, _ = sampler(n_mc, rng)
    diff = X - Xp
    dist = np.linalg.norm(diff, axis=1)
    B = grid.nodes
    out = {surrogate_key(s): np.empty(grid.size) for s in surrogates}
    for i in range(0, grid.size, GRID_CHUNK):
        arg = np.abs(diff @ B[i:i + GRID_CHUNK].T) - dist[:, None] - gamma
        for s in surrogates:
            out[surrogate_key(s)][i:i + GRID_CHUNK] = s.value(arg).mean(axis=0)
    for k, v in out.items():
        grid.set_values(k, v)
    return out


def feasible_set(grid: ParamGrid, kind: str, alpha: float, valid=None) -> np.ndarray:
    """Boolean node mask of ``{phi <= alpha}``; may be empty."""
    if kind not in grid.values:
        raise KeyError(f"no values for {kind!r} on this grid")
    mask = grid.values[kind] <= alpha
    return mask if valid is None else mask & valid


# Hausdorff -------------------------------------------------------------

def hausdorff(A, B) -> float:
    """Exact Hausdorff distance between finite point sets (rows), L2 metric."""
    A, B = np.atleast_2d(np.asarray(A, float)), np.atleast_2d(np.asarray(B, float))
    if A.size == 0 or B.size == 0 or A.shape[0] == 0 or B.shape[0] == 0:
        raise EmptySetError("Hausdorff distance to an empty set is undefined")
    dab = cKDTree(B).query(A)[0].max()
    dba = cKDTree(A).query(B)[0].max()
    return float(max(dab, dba))


def grid_hausdorff(a: np.ndarray, b: np.ndarray, grid: ParamGrid) -> float:
    """Hausdorff distance between two node masks of ``grid`` via Euclidean distance transforms."""
    if not a.any() or not b.any():
        raise EmptySetError("Hausdorff distance to an empty set is undefined")
    a, b = a.reshape(grid.resolution), b.reshape(grid.resolution)
    to_a = distance_transform_edt(~a, sampling=grid.spacing)
    to_b = distance_transform_edt(~b, sampling=grid.spacing)
    return float(max(to_b[a].max(), to_a[b].max()))


# gap curves ------------------------------------------------------------

@dataclass
class GapCurve:
    alphas: np.ndarray
    gaps: dict
    argmins: dict

    def column(self, key):
        return np.asarray(self.gaps[key], dtype=float)

    def to_csv(self, path, names=None) -> None:
        keys = list(self.gaps)
        names = names or {k: f"d_{k}" for k in keys}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha"] + [names[k] for k in keys] + [f"{names[k]}_alpha_prime" for k in keys])
            for i, a in enumerate(self.alphas):
                row = [repr(float(a))]
                row += ["" if self.gaps[k][i] is None else repr(float(self.gaps[k][i])) for k in keys]
                row += ["" if self.argmins[k][i] is None else repr(float(self.argmins[k][i])) for k in keys]
                w.writerow(row)


def alpha_prime_grid(values: np.ndarray, max_points: int = 400) -> np.ndarray:
    """Candidate surrogate levels: every distinct node value, thinned to quantiles when too many.

    Distinct node values are the only levels at which the surrogate feasible
    set changes, so searching them is exhaustive.
    """
    u = np.unique(values)
    if u.size > max_points:
        u = np.unique(np.quantile(u, np.linspace(0.0, 1.0, max_points), method="nearest"))
    return u


def gap_at(grid, reference: str, surrogate: str, alpha: float, valid=None, max_points=400):
    """``min_{alpha'} D_H(reference set at alpha, surrogate set at alpha')`` and its minimiser."""
    A = feasible_set(grid, reference, alpha, valid)
    if not A.any():
        return None, None
    best, arg = math.inf, None
    vals = grid.values[surrogate] if valid is None else grid.values[surrogate][valid]
    for ap in alpha_prime_grid(vals, max_points):
        B = feasible_set(grid, surrogate, ap, valid)
        if not B.any():
            continue
        d = grid_hausdorff(A, B, grid)
        if d < best:
            best, arg = d, float(ap)
    return best, arg


def gap_curve(grid: ParamGrid, alphas, surrogates, reference="indicator", valid=None, max_points=400) -> GapCurve:
    """Surrogate feasible-set gaps over ``alphas``; an empty reference set leaves the entry as None."""
    alphas = np.asarray(alphas, dtype=float)
    gaps, args = {}, {}
    for key in surrogates:
        gaps[key], args[key] = [], []
        for a in alphas:
            d, ap = gap_at(grid, reference, key, a, valid, max_points)
            gaps[key].append(d)
            args[key].append(ap)
    return GapCurve(alphas, gaps, args)


TOY_LAWS = {"gaussian_mixture": "gaussian_mixture_2d", "two_moon": "two_moon"}


def toy_gap_curve(kind="gaussian_mixture", alphas=(0.1, 0.15, 0.2, 0.25, 0.3), taus=(0.01, 0.1),
                  resolution=50, n_mc=10_000, gamma=0.3, seed=0, max_points=400):
    """Pairwise-IF gap curve for a 2-D toy law with ``f(x) = <beta, x>`` on ``(-2, 2)^2``."""
    grid = ParamGrid(resolution=(resolution, resolution))
    surr = [SurrogateSpec("indicator"), SurrogateSpec("hinge")] + [SurrogateSpec("slide", t) for t in taus]
    if_pairwise_grid(grid, sampler_for(TOY_LAWS.get(kind, kind)), surr, gamma, n_mc, seed)
    keys = [surrogate_key(s) for s in surr[1:]]
    return gap_curve(grid, alphas, keys, max_points=max_points), grid


def toy_curve_names(taus=(0.01, 0.1)):
    names = {"hinge": "d_hinge"}
    for t in taus:
        names[f"slide_{t:g}"] = "d_slide_tau" + f"{t:g}".replace(".", "")
    return names


# analytic 1-D example --------------------------------------------------

def _mills(t):
    """``phi(t) / (1 - Phi(t))`` computed in log space."""
    return np.exp(-0.5 * t * t - 0.5 * np.log(2 * np.pi) - log_ndtr(-t))


def analytic_1d_gaussian(beta0, beta, exact=False):
    """``(DI, DI_hinge)`` for the score ``beta0 + beta * X`` with ``X | Z=z ~ N(z, 1)``, ``z = +-1``.

    DI uses the normal CDF directly.  The hinge value follows the
    truncated-normal closed form by default;
    ``exact=True`` instead returns ``|E(1 + f)_+ | z=-1 - E(1 + f)_+ | z=+1|``.
    """
    beta0, beta = np.broadcast_arrays(np.asarray(beta0, float), np.asarray(beta, float))
    if np.any(beta == 0):
        raise ValueError("beta must be nonzero")
    di = np.abs(ndtr(-beta0 / beta + 1) - ndtr(-beta0 / beta - 1))
    if exact:
        s = np.abs(beta)
        parts = []
        for z in (-1.0, 1.0):
            mu = beta0 + beta * z + 1
            parts.append(mu * ndtr(mu / s) + s * np.exp(-0.5 * (mu / s) ** 2) / np.sqrt(2 * np.pi))
        dih = np.abs(parts[0] - parts[1])
    else:
        dih = np.abs(-2 * beta + _mills(-(beta0 - beta + 1) / beta) - _mills(-(beta0 + beta + 1) / beta))
    if di.ndim == 0:
        return float(di), float(dih)
    return di, dih


def analytic_grid(resolution=100, beta_floor=0.05, exact=False):
    """Grid over ``(beta0, beta) in [-1, 1]^2`` with DI and hinge values; ``|beta| < beta_floor`` masked."""
    grid = ParamGrid(ranges=((-1, 1), (-1, 1)), resolution=(resolution, resolution))
    nodes = grid.nodes
    valid = np.abs(nodes[:, 1]) >= beta_floor
    b = np.where(valid, nodes[:, 1], 1.0)
    di, dih = analytic_1d_gaussian(nodes[:, 0], b, exact=exact)
    grid.set_values("indicator", np.where(valid, di, 0.0))
    grid.set_values("hinge", np.where(valid, dih, 0.0))
    return grid, valid


def analytic_gap_curve(alphas=None, resolution=100, beta_floor=0.05, exact=False, max_points=400):
    alphas = np.linspace(0.05, 0.6, 10) if alphas is None else np.asarray(alphas, float)
    grid, valid = analytic_grid(resolution, beta_floor, exact)
    return gap_curve(grid, alphas, ["hinge"], valid=valid, max_points=max_points), grid, valid


# convergence simulation ------------------------------------------------

_GH_X, _GH_W = np.polynomial.hermite_e.hermegauss(120)
_GH_W = _GH_W / _GH_W.sum()


def population_risk(b0, b, law_params=None) -> float:
    """Logistic risk of ``b0 + b x`` under the simulation law (Gauss-Hermite, 120 nodes per cell)."""
    mu, sd, probs = convergence_law(law_params)
    r = 0.0
    for s in (0, 1):
        for k, y in enumerate((-1.0, 1.0)):
            x = mu[s, k] + sd[s, k] * _GH_X
            r += probs[s, k] * np.sum(_GH_W * np.logaddexp(0.0, -y * (b0 + b * x)))
    return float(r)


def population_di(b0, b, law_params=None) -> float:
    """Closed-form ``|P(f > 0 | S=0) - P(f > 0 | S=1)|`` for ``f = b0 + b x`` under the simulation law."""
    mu, sd, probs = convergence_law(law_params)
    rates = []
    for s in (0, 1):
        ps = probs[s].sum()
        if b == 0:
            rate = float(b0 > 0)
        else:
            rate = sum(probs[s, k] * ndtr(np.sign(b) * (b0 + b * mu[s, k]) / (abs(b) * sd[s, k])) for k in (0, 1)) / ps
        rates.append(rate)
    return float(abs(rates[0] - rates[1]))


def constrained_optimum(alpha=0.2, law_params=None, b0_range=(-3, 3), b_range=(-4, 4), resolution=121):
    """Population-optimal linear ``(b0, b)`` subject to DI <= alpha: grid search then SLSQP polish."""
    g0 = np.linspace(*b0_range, resolution)
    g1 = np.linspace(*b_range, resolution)
    best = None
    for b0 in g0:
        for b in g1:
            if b == 0 or population_di(b0, b, law_params) > alpha:
                continue
            r = population_risk(b0, b, law_params)
            if best is None or r < best[0]:
                best = (r, b0, b)
    if best is None:
        raise InfeasibleError(f"no grid point satisfies DI <= {alpha}")
    res = minimize(lambda t: population_risk(t[0], t[1], law_params), [best[1], best[2]], method="SLSQP",
                   constraints=[{"type": "ineq", "fun": lambda t: alpha - population_di(t[0], t[1], law_params)}],
                   options={"ftol": 1e-14, "maxiter": 500})
    cand = res.x
    if population_di(*cand, law_params) <= alpha + 1e-9 and population_risk(*cand, law_params) <= best[0]:
        return np.array(cand, float), population_risk(*cand, law_params)
    return np.array([best[1], best[2]]), best[0]


def _fit_alpha(ds, alpha, tau, epochs, lr, bisect_steps, seed):
    """Smallest penalty (by bisection) whose SLIDE-penalised fit has empirical SLIDE DI <= alpha."""
    from .trainer import TrainConfig, train_penalized
    from .constraints import ScoredBatch, constraint_value

    spec = ConstraintSpec("di")
    slide = SurrogateSpec("slide", tau)

    def fit(lam, init=None):
        cfg = TrainConfig(epochs=epochs, lr=lr, lam=lam, surrogate=slide, constraint=spec, seed=seed,
                          architecture="linear", hidden_width=0)
        p = train_penalized(ds, cfg, init=init).params
        s = p.forward(ds.X)
        return p, constraint_value(ScoredBatch(s, ds.y, ds.z), spec, slide)

    p0, phi = fit(0.0)
    if phi <= alpha:
        return p0, 0.0
    # Penalised fits start from the zero model, which meets the empirical
    # constraint; starting from p0 leaves scores on the flat parts of the ramp.
    zero = ModelParams("linear", 1, {"w": np.zeros(1), "b": np.array(0.0)})
    lo, hi = 0.0, 1.0
    while True:
        p, phi = fit(hi, zero)
        if phi <= alpha:
            break
        lo, hi = hi, hi * 4
        if hi > 1e8:
            raise InfeasibleError("no penalty reaches the empirical constraint")
    best = p
    for _ in range(bisect_steps):
        mid = 0.5 * (lo + hi)
        p, phi = fit(mid, zero)
        if phi <= alpha:
            hi, best = mid, p
        else:
            lo = mid
    return best, hi


def simulate_convergence(n_values=(250, 1000, 4000, 16000), seeds=range(10), alpha=0.2, tau=0.1,
                         epochs=1000, lr=0.05, bisect_steps=12, law_params=None, seed=0):
    """Excess risk and fairness deviation of DI+SLIDE linear fits as the sample grows.

    Each fit uses the smallest penalty whose empirical SLIDE constraint is at
    most ``alpha``.  Population quantities are exact up to quadrature:
    risk by Gauss-Hermite, DI in closed form.
    """
    n_values = list(n_values)
    if n_values != sorted(n_values):
        raise ValueError("n_values must be ascending")
    fstar, rstar = constrained_optimum(alpha, law_params)
    phistar = population_di(*fstar, law_params)
    sampler = sampler_for("convergence_sim", law_params)
    rows = []
    for n in n_values:
        ex, dev, devstar, lams = [], [], [], []
        for s in seeds:
            X, y, z = sampler(n, substream(seed, "data", n, s))
            ds = Dataset(X, y, z, plain_schema(1), {"kind": "convergence_sim", "n": n, "seed": s})
            p, lam = _fit_alpha(ds, alpha, tau, epochs, lr, bisect_steps, seed + s)
            b0, b = float(p.weights["b"]), float(p.weights["w"][0])
            ex.append(abs(population_risk(b0, b, law_params) - rstar))
            phi = population_di(b0, b, law_params)
            dev.append(abs(phi - alpha))
            devstar.append(abs(phi - phistar))
            lams.append(lam)
        rows.append({"n": n, "excess_risk_median": float(np.median(ex)),
                     "fairness_dev_median": float(np.median(dev)),
                     "fairness_dev_from_optimum_median": float(np.median(devstar)),
                     "lambda_median": float(np.median(lams))})
    return {"rows": rows, "f_star": fstar.tolist(), "risk_star": rstar, "di_star": phistar}


def write_rows(rows, path, columns=None) -> None:
    columns = columns or list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
