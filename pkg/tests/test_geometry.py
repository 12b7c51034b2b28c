import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from slidefair.constraints import mc_population_constraint
from slidefair.data import Dataset, plain_schema, sampler_for
from slidefair.geometry import (EmptySetError, InfeasibleError, ParamGrid, _fit_alpha, alpha_prime_grid,
                                analytic_1d_gaussian, analytic_grid, constrained_optimum, feasible_set, gap_at,
                                grid_hausdorff, hausdorff, if_pairwise_grid, population_di, population_risk,
                                simulate_convergence, toy_gap_curve, toy_curve_names, write_rows)
from slidefair.nn_core import ModelParams
from slidefair.rng import substream
from slidefair.surrogates import SurrogateSpec

import oracles


# Hausdorff ------------------------------------------------------------------

def test_hausdorff_basics():
    A = np.array([[0.0, 0.0], [1.0, 1.0]])
    assert hausdorff(A, A) == 0.0
    assert hausdorff([[0.0, 0.0]], [[1.0, 0.0]]) == 1.0
    with pytest.raises(EmptySetError):
        hausdorff(np.empty((0, 2)), A)


def test_hausdorff_matches_double_loop(rng):
    for _ in range(50):
        A = rng.normal(size=(int(rng.integers(1, 50)), 2))
        B = rng.normal(size=(int(rng.integers(1, 50)), 2))
        assert hausdorff(A, B) == pytest.approx(oracles.hausdorff(A.tolist(), B.tolist()), abs=1e-12)


coords = st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), min_size=1, max_size=12)


@given(coords, coords, coords)
def test_hausdorff_metric_axioms(a, b, c):
    A, B, C = (np.array(p, float) for p in (a, b, c))
    dab = hausdorff(A, B)
    assert dab == hausdorff(B, A)
    assert dab <= hausdorff(A, C) + hausdorff(C, B) + 1e-12


def test_grid_edt_matches_kdtree(rng):
    grid = ParamGrid(ranges=((-1, 1), (0, 3)), resolution=(17, 23))
    nodes = grid.nodes
    for _ in range(50):
        a = rng.random(grid.size) < rng.uniform(0.02, 0.5)
        b = rng.random(grid.size) < rng.uniform(0.02, 0.5)
        if not a.any() or not b.any():
            continue
        assert grid_hausdorff(a, b, grid) == pytest.approx(hausdorff(nodes[a], nodes[b]), abs=1e-12)
    with pytest.raises(EmptySetError):
        grid_hausdorff(np.zeros(grid.size, bool), np.ones(grid.size, bool), grid)


# feasible sets ----------------------------------------------------------------

def _valued_grid(rng, res=12):
    grid = ParamGrid(resolution=res)
    v = rng.uniform(0, 1, grid.size)
    grid.set_values("indicator", v)
    grid.set_values("hinge", np.sqrt(v) + 0.1 * rng.uniform(size=grid.size))
    return grid, v


def test_feasible_set_threshold_and_monotone(rng):
    grid, v = _valued_grid(rng)
    prev = feasible_set(grid, "indicator", -1.0)
    assert not prev.any()
    for a in np.linspace(0, 1, 21):
        cur = feasible_set(grid, "indicator", a)
        assert np.array_equal(cur, np.array([x <= a for x in v]))
        assert np.all(cur[prev])
        prev = cur
    assert feasible_set(grid, "indicator", v.max()).all()
    with pytest.raises(KeyError):
        feasible_set(grid, "slide_0.1", 0.2)


def test_grid_rejects_bad_values():
    grid = ParamGrid(resolution=3)
    with pytest.raises(ValueError):
        grid.set_values("x", np.ones(4))
    with pytest.raises(ValueError):
        grid.set_values("x", -np.ones(9))
    with pytest.raises(ValueError):
        ParamGrid(resolution=1)


def test_self_match_gives_zero_gap(rng):
    grid, v = _valued_grid(rng)
    grid.set_values("copy", v.copy())
    for a in (0.1, 0.4, 0.9):
        d, ap = gap_at(grid, "indicator", "copy", a)
        assert d == 0.0
    assert gap_at(grid, "indicator", "copy", -0.5) == (None, None)


def test_alpha_prime_grid_keeps_extremes(rng):
    v = rng.uniform(size=5000)
    g = alpha_prime_grid(v, 400)
    assert len(g) <= 400 and g[0] == v.min() and g[-1] == v.max()
    assert np.array_equal(alpha_prime_grid(np.array([0.3, 0.1, 0.3])), [0.1, 0.3])


def test_node_value_equals_per_model_mc():
    grid = ParamGrid(resolution=5)
    sampler = sampler_for("gaussian_mixture_2d")
    slide = SurrogateSpec("slide", 0.1)
    vals = if_pairwise_grid(grid, sampler, [slide, SurrogateSpec("indicator")], gamma=0.3, n_mc=2000, seed=7)
    for i in (0, 7, 24):
        beta = grid.nodes[i]
        model = ModelParams("linear", 2, {"w": beta.copy(), "b": np.array(0.0)})
        for key, s in (("slide_0.1", slide), ("indicator", SurrogateSpec("indicator"))):
            mc, _ = mc_population_constraint(model, sampler, "if_pairwise", n_mc=2000, seed=7, surrogate=s, gamma=0.3)
            assert vals[key][i] == pytest.approx(mc, abs=1e-14)
    # beta = 0 gives |f(x) - f(x')| = 0, so the pair is never counted
    centre = ParamGrid(ranges=((-1, 1), (-1, 1)), resolution=3)
    v = if_pairwise_grid(centre, sampler, [SurrogateSpec("indicator")], n_mc=1000)
    assert v["indicator"][4] == 0.0


def test_toy_curve_small(tmp_path):
    curve, grid = toy_gap_curve("two_moon", alphas=(0.1, 0.2), resolution=12, n_mc=1000)
    assert set(curve.gaps) == {"hinge", "slide_0.01", "slide_0.1"}
    for k in curve.gaps:
        assert all(g is None or g >= 0 for g in curve.gaps[k])
    names = toy_curve_names()
    curve.to_csv(tmp_path / "g.csv", names)
    head = next(csv.reader(open(tmp_path / "g.csv")))
    assert head[:4] == ["alpha", "d_hinge", "d_slide_tau001", "d_slide_tau01"]


# analytic 1-D example ----------------------------------------------------------

def test_analytic_reference_value():
    di, _ = analytic_1d_gaussian(0.0, 1.0)
    assert di == pytest.approx(0.6826894921370859, abs=1e-12)
    with pytest.raises(ValueError):
        analytic_1d_gaussian(0.3, 0.0)
    di_far, _ = analytic_1d_gaussian(30.0, 1.0)
    assert di_far < 1e-12


def test_analytic_di_matches_mc():
    sampler = sampler_for("gaussian_1d_groups")
    for b0, b in ((0.0, 1.0), (0.4, -0.7), (-0.2, 0.3)):
        model = ModelParams("linear", 1, {"w": np.array([b]), "b": np.array(b0)})
        mc, se = mc_population_constraint(model, sampler, "di", n_mc=20_000, seed=3)
        assert abs(analytic_1d_gaussian(b0, b)[0] - mc) <= 3 * se + 1e-9


def test_exact_hinge_matches_mc():
    rng = substream(0, "mc")
    for b0, b in ((0.1, 0.5), (-0.3, -0.9)):
        vals = []
        for z in (-1.0, 1.0):
            x = z + rng.standard_normal(400_000)
            vals.append(np.maximum(1 + b0 + b * x, 0).mean())
        assert analytic_1d_gaussian(b0, b, exact=True)[1] == pytest.approx(abs(vals[0] - vals[1]), abs=5e-3)


def test_analytic_grid_masks_small_slopes():
    grid, valid = analytic_grid(resolution=21, beta_floor=0.15)
    assert np.all(np.abs(grid.nodes[valid, 1]) >= 0.15)
    assert not valid.all()
    assert grid.values["indicator"][valid].max() <= 0.6827


# convergence simulation -----------------------------------------------------------

def test_population_quantities_match_mc():
    sampler = sampler_for("convergence_sim")
    X, y, z = sampler(400_000, substream(1, "mc"))
    b0, b = -0.4, 0.8
    f = b0 + b * X[:, 0]
    assert population_risk(b0, b) == pytest.approx(np.logaddexp(0, -y * f).mean(), abs=5e-3)
    emp = abs((f[z == 0] > 0).mean() - (f[z == 1] > 0).mean())
    assert population_di(b0, b) == pytest.approx(emp, abs=5e-3)


def test_constrained_optimum_is_feasible():
    lp = {"cell_probs": ((0.4, 0.1), (0.1, 0.4))}
    free, r_free = constrained_optimum(1.0, lp)
    tight, r_tight = constrained_optimum(0.2, lp)
    assert population_di(*free, lp) > 0.2
    assert population_di(*tight, lp) <= 0.2 + 1e-9
    assert r_tight >= r_free
    with pytest.raises(InfeasibleError):
        constrained_optimum(-1.0, lp)


def test_true_optimum_has_zero_excess():
    fstar, rstar = constrained_optimum(0.2)
    assert population_risk(*fstar) - rstar == 0.0


def test_binding_fit_meets_empirical_constraint():
    lp = {"cell_probs": ((0.4, 0.1), (0.1, 0.4))}
    X, y, z = sampler_for("convergence_sim", lp)(300, substream(0, "data", 300, 0))
    ds = Dataset(X, y, z, plain_schema(1))
    p, lam = _fit_alpha(ds, 0.2, 0.1, epochs=300, lr=0.1, bisect_steps=6, seed=0)
    from slidefair.constraints import ConstraintSpec, ScoredBatch, constraint_value
    phi = constraint_value(ScoredBatch(p.forward(X), y, z), ConstraintSpec("di"), SurrogateSpec("slide", 0.1))
    assert lam > 0 and phi <= 0.2


def test_simulation_is_deterministic(tmp_path):
    kw = dict(n_values=(100, 200), seeds=range(2), epochs=100, bisect_steps=3)
    a = simulate_convergence(**kw)
    b = simulate_convergence(**kw)
    assert a == b
    write_rows(a["rows"], tmp_path / "c.csv")
    head = (tmp_path / "c.csv").read_text().splitlines()[0].split(",")
    assert head[:3] == ["n", "excess_risk_median", "fairness_dev_median"]
    with pytest.raises(ValueError):
        simulate_convergence(n_values=(200, 100))
