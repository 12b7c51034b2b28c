"""Empirical and Monte-Carlo fairness constraint functionals.

Every empirical functional is computed from a :class:`ScoredBatch` (scores
plus labels and sensitive attribute) and composed with a surrogate of the
indicator ``I(. > 0)``.  Positive classification is the strict rule
``f(x) > 0``; a score of exactly 0 counts as negative.  The score discrepancy
used by individual fairness is ``D(a, b) = |a - b|``.

The ``*_and_grad`` variants also return the derivative of the functional with
respect to the scores, which the trainer back-propagates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import substream
from .surrogates import SurrogateSpec

INDICATOR = SurrogateSpec("indicator")

CRITERIA = ("di", "eo", "eqopp", "uif", "di_boundary", "cov", "if_pairwise")
_ALIASES = {"DI": "di", "EO": "eo", "EqOpp": "eqopp", "UIF": "uif", "DI_boundary": "di_boundary",
            "covariance": "cov", "IF_pairwise": "if_pairwise"}
GROUP_CRITERIA = ("di", "eo", "eqopp")


class EmptyCellError(ValueError):
    pass


class ConstraintSpecError(ValueError):
    pass


def normalize_criterion(name: str) -> str:
    name = _ALIASES.get(name, name)
    name = name.strip().lower()
    if name not in CRITERIA:
        raise ConstraintSpecError(f"unknown criterion {name!r}; expected one of {CRITERIA}")
    return name


@dataclass(frozen=True)
class ConstraintSpec:
    criterion: str = "di"
    alpha: float | None = None
    gamma: float | None = None
    epsilon: float | None = None
    tau_boundary: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "criterion", normalize_criterion(self.criterion))
        c = self.criterion
        if c in ("uif", "if_pairwise"):
            if self.gamma is None:
                object.__setattr__(self, "gamma", 0.01 if c == "uif" else 0.3)
            if not self.gamma > 0:
                raise ConstraintSpecError("gamma must be positive")
        if c == "uif":
            if self.epsilon is None:
                object.__setattr__(self, "epsilon", 0.1)
            if not self.epsilon > 0:
                raise ConstraintSpecError("epsilon must be positive")
        if c == "di_boundary":
            if self.tau_boundary is None or not self.tau_boundary > 0:
                raise ConstraintSpecError("di_boundary requires tau_boundary > 0")
        if self.alpha is not None and c != "cov" and not 0 <= self.alpha <= 1:
            raise ConstraintSpecError("alpha must lie in [0, 1] for probability-valued criteria")


@dataclass
class ScoredBatch:
    scores: np.ndarray
    y: np.ndarray | None = None
    z: np.ndarray | None = None
    adv_scores: np.ndarray | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        n = self.scores.shape[0]
        for name in ("y", "z", "adv_scores"):
            val = getattr(self, name)
            if val is not None:
                val = np.asarray(val, dtype=float)
                if val.shape != (n,):
                    raise ValueError(f"{name} has shape {val.shape}, expected ({n},)")
                setattr(self, name, val)

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    def group_counts(self):
        return int(np.sum(self.z == 0)), int(np.sum(self.z == 1))


def _cell(batch: ScoredBatch, z: int, y=None) -> np.ndarray:
    if batch.z is None:
        raise EmptyCellError("sensitive attribute z missing from batch")
    mask = batch.z == z
    name = f"z={z}"
    if y is not None:
        if batch.y is None:
            raise EmptyCellError("labels y missing from batch")
        mask = mask & (batch.y == y)
        name += f", y={y:+d}"
    if not mask.any():
        raise EmptyCellError(f"empty cell ({name})")
    return mask


def _gap_and_grad(batch, surrogate, y=None, transform=None):
    """Signed gap of per-group surrogate averages and its score gradient."""
    m0, m1 = _cell(batch, 0, y), _cell(batch, 1, y)
    if transform is None:
        vals, ders = surrogate.value(batch.scores), surrogate.grad(batch.scores)
    else:
        vals, ders = transform(batch.scores)
    gap = vals[m0].mean() - vals[m1].mean()
    dgap = np.zeros(batch.n)
    dgap[m0] = ders[m0] / m0.sum()
    dgap[m1] = -ders[m1] / m1.sum()
    return float(gap), dgap


def empirical_group_constraint_and_grad(batch: ScoredBatch, criterion: str, surrogate: SurrogateSpec = INDICATOR):
    criterion = normalize_criterion(criterion)
    if criterion == "di":
        cells = [None]
    elif criterion == "eo":
        cells = [-1, 1]
    elif criterion == "eqopp":
        cells = [1]
    else:
        raise ConstraintSpecError(f"{criterion!r} is not a group criterion")
    best = None
    for y in cells:
        gap, dgap = _gap_and_grad(batch, surrogate, y)
        if best is None or abs(gap) > abs(best[0]):
            best = (gap, dgap)
    gap, dgap = best
    return abs(gap), np.sign(gap) * dgap


def empirical_group_constraint(batch: ScoredBatch, criterion: str, surrogate: SurrogateSpec = INDICATOR) -> float:
    """DI / EO / EqOpp gap with the indicator replaced by ``surrogate``.

    EO takes the larger of the gaps conditioned on ``y = -1`` and ``y = +1``;
    EqOpp uses ``y = +1`` only.
    """
    return empirical_group_constraint_and_grad(batch, criterion, surrogate)[0]


def group_terms(batch: ScoredBatch, surrogate: SurrogateSpec, criterion: str = "di", y=None):
    """Per-group surrogate averages ``(avg_{z=0}, avg_{z=1})``."""
    vals = surrogate.value(batch.scores)
    if criterion == "eqopp":
        y = 1
    return tuple(float(vals[_cell(batch, z, y)].mean()) for z in (0, 1))


def uif_discrepancy(batch: ScoredBatch) -> np.ndarray:
    if batch.adv_scores is None:
        raise ValueError("UIF needs adversarial scores f(v') in the batch")
    return np.abs(batch.scores - batch.adv_scores)


def empirical_uif_and_grad(batch: ScoredBatch, gamma: float, surrogate: SurrogateSpec = INDICATOR):
    """Value plus gradients with respect to ``f(x_i)`` and ``f(v_i')``."""
    disc = uif_discrepancy(batch)
    diff = batch.scores - batch.adv_scores
    arg = disc - gamma
    value = float(surrogate.value(arg).mean())
    gx = surrogate.grad(arg) * np.sign(diff) / batch.n
    return value, gx, -gx


def empirical_uif(batch: ScoredBatch, gamma: float, surrogate: SurrogateSpec = INDICATOR) -> float:
    return empirical_uif_and_grad(batch, gamma, surrogate)[0]


def _band(surrogate: SurrogateSpec, tau_boundary: float):
    def transform(f):
        vals = surrogate.value(f) - surrogate.value(f - tau_boundary)
        ders = surrogate.grad(f) - surrogate.grad(f - tau_boundary)
        return vals, ders
    return transform


def di_boundary_and_grad(batch: ScoredBatch, tau_boundary: float, surrogate: SurrogateSpec = INDICATOR):
    gap, dgap = _gap_and_grad(batch, surrogate, transform=_band(surrogate, tau_boundary))
    return abs(gap), np.sign(gap) * dgap


def di_boundary(batch: ScoredBatch, tau_boundary: float, surrogate: SurrogateSpec = INDICATOR) -> float:
    """Group gap of band membership ``0 < f <= tau_boundary`` (surrogate form ``s(f) - s(f - tau)``)."""
    return di_boundary_and_grad(batch, tau_boundary, surrogate)[0]


def covariance_constraint_and_grad(batch: ScoredBatch):
    if batch.n == 0:
        raise ValueError("empty batch")
    zc = batch.z - batch.z.mean()
    cov = float(np.mean(zc * batch.scores))
    return abs(cov), np.sign(cov) * zc / batch.n


def covariance_constraint(batch: ScoredBatch) -> float:
    """``|mean((z - mean z) f)|``."""
    return covariance_constraint_and_grad(batch)[0]


def constraint_value_and_grad(batch: ScoredBatch, spec: ConstraintSpec, surrogate: SurrogateSpec = INDICATOR):
    """Dispatch on the criterion.  Returns ``(value, d/dscores, d/dadv_scores or None)``."""
    c = spec.criterion
    if c in GROUP_CRITERIA:
        v, g = empirical_group_constraint_and_grad(batch, c, surrogate)
        return v, g, None
    if c == "uif":
        return empirical_uif_and_grad(batch, spec.gamma, surrogate)
    if c == "di_boundary":
        v, g = di_boundary_and_grad(batch, spec.tau_boundary, surrogate)
        return v, g, None
    if c == "cov":
        v, g = covariance_constraint_and_grad(batch)
        return v, g, None
    raise ConstraintSpecError(f"criterion {c!r} has no empirical batch form")


def constraint_value(batch: ScoredBatch, spec: ConstraintSpec, surrogate: SurrogateSpec = INDICATOR) -> float:
    return constraint_value_and_grad(batch, spec, surrogate)[0]


# population (Monte-Carlo) ------------------------------------------------

def _score_fn(model):
    if callable(model) and not hasattr(model, "forward"):
        return model
    return model.forward


def _draw_groups(sampler, n_mc, rng, max_rounds=64):
    Xs, ys, zs = [], [], []
    for _ in range(max_rounds):
        X, y, z = sampler(n_mc, rng)
        Xs.append(X), ys.append(y), zs.append(z)
        zz = np.concatenate(zs)
        if min(np.sum(zz == 0), np.sum(zz == 1)) >= 2 * n_mc:
            break
    return np.concatenate(Xs), np.concatenate(ys), np.concatenate(zs)


def mc_population_constraint(model, sampler, criterion, n_mc=10_000, seed=0,
                             surrogate: SurrogateSpec = INDICATOR, gamma=None, input_metric=None):
    """Monte-Carlo estimate ``(value, standard_error)`` of a population constraint.

    ``sampler(n, rng)`` must return ``(X, y, z)`` drawn i.i.d.  Group criteria
    draw until each group holds at least ``2 * n_mc`` rows, so the standard
    error of an indicator gap is at most ``sqrt(0.25 / n_mc)``.  ``if_pairwise``
    pairs ``n_mc`` draws with ``n_mc`` independent copies and uses the L2 input
    metric unless ``input_metric`` is given.
    """
    spec = criterion if isinstance(criterion, ConstraintSpec) else ConstraintSpec(criterion, gamma=gamma)
    if n_mc < 1000:
        raise ValueError("n_mc must be at least 1000")
    rng = substream(seed, "mc")
    f = _score_fn(model)
    if spec.criterion == "if_pairwise":
        X, _, _ = sampler(n_mc, rng)
        Xp, _, _ = sampler(n_mc, rng)
        d = (input_metric or (lambda a, b: np.linalg.norm(a - b, axis=1)))(X, Xp)
        vals = surrogate.value(np.abs(f(X) - f(Xp)) - d - spec.gamma)
        return float(vals.mean()), float(vals.std() / np.sqrt(n_mc))
    if spec.criterion in GROUP_CRITERIA:
        X, y, z = _draw_groups(sampler, n_mc, rng)
        vals = surrogate.value(f(X))
        cells = {"di": [None], "eo": [-1, 1], "eqopp": [1]}[spec.criterion]
        best = None
        for yy in cells:
            masks = [(z == g) & (True if yy is None else (y == yy)) for g in (0, 1)]
            if not all(m.any() for m in masks):
                raise EmptyCellError("sampler produced an empty cell")
            gap = vals[masks[0]].mean() - vals[masks[1]].mean()
            se = np.sqrt(sum(vals[m].var() / m.sum() for m in masks))
            if best is None or abs(gap) > abs(best[0]):
                best = (gap, se)
        return float(abs(best[0])), float(best[1])
    raise ConstraintSpecError(f"no Monte-Carlo form for {spec.criterion!r}")
