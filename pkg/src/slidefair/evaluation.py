"""Test-time metrics, the surrogate-gap diagnostic and Pareto sweeps."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .adversary import AdversaryConfig, adversarial_input
from .constraints import INDICATOR, ConstraintSpec, ScoredBatch, constraint_value, group_terms
from .nn_core import forward
from .rng import substream
from .surrogates import SurrogateSpec

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.10
ZERO_FLOOR = 1e-3


@dataclass
class FairnessReport:
    accuracy: float
    balanced_accuracy: float | None
    di: float | None
    consistency: float | None = None
    constraint: float | None = None
    criterion: str = "di"
    extra_consistency: dict = field(default_factory=dict)
    m_nf: float | None = None
    m_ratio: float | None = None
    diagnostic_verdict: str | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["m_ratio"] is not None and math.isinf(d["m_ratio"]):
            d["m_ratio"] = "inf"
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_jsonable)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _scores(model, X):
    if hasattr(model, "forward"):
        return model.forward(X)
    return model(X)


def predict_labels(model, X) -> np.ndarray:
    return np.where(_scores(model, X) > 0, 1.0, -1.0)


def accuracy(y, pred) -> float:
    return float(100.0 * np.mean(np.asarray(y) == np.asarray(pred)))


def balanced_accuracy(y, pred):
    """Mean of per-class accuracies in percent; None when a class is absent."""
    y, pred = np.asarray(y), np.asarray(pred)
    per = []
    for c in (-1.0, 1.0):
        m = y == c
        if not m.any():
            return None
        per.append(np.mean(pred[m] == c))
    return float(100.0 * np.mean(per))


# consistency -----------------------------------------------------------

def _levels(data, cols):
    """Encodings a source may take: unit vectors for multi-column one-hot, {0, 1} for a single column."""
    kinds = {data.schema[j].kind for j in cols}
    if kinds != {"onehot"}:
        names = [data.schema[j].name for j in cols]
        raise ValueError(f"flip columns must be binary or one-hot encoded, got {names}")
    if len(cols) == 1:
        return [np.array([0.0]), np.array([1.0])]
    return list(np.eye(len(cols)))


def consistency(model, data, flip_columns) -> float:
    """Share of rows whose predicted class is the same for every joint setting of the flipped sources."""
    if isinstance(flip_columns, str):
        flip_columns = [flip_columns]
    if not flip_columns:
        raise ValueError("at least one flip column is required")
    groups = [data.source_columns(c) for c in flip_columns]
    options = [_levels(data, cols) for cols in groups]
    agree = np.ones(data.n, dtype=bool)
    first = None
    for combo in itertools.product(*options):
        Xc = data.X.copy()
        for cols, enc in zip(groups, combo):
            Xc[:, cols] = enc
        p = _scores(model, Xc) > 0
        if first is None:
            first = p
        else:
            agree &= p == first
    return float(np.mean(agree))


# diagnostic ------------------------------------------------------------

def _adv_scores(model, data, spec, adversary, seed, adv_X):
    if adv_X is None:
        from .trainer import perturbable_mask
        cfg = replace(adversary or AdversaryConfig(), epsilon=spec.epsilon)
        adv_X = adversarial_input(model, data.X, cfg, mask=perturbable_mask(data), rng=substream(seed, "adversary"))
    return _scores(model, adv_X)


def mnf_value(batch: ScoredBatch, spec: ConstraintSpec, tau: float) -> float:
    """Empirical surrogate-gap bound ``M_nf`` for UIF or DI."""
    up, lo = SurrogateSpec("opposite_slide", tau), SurrogateSpec("slide", tau)
    if spec.criterion == "uif":
        return abs(constraint_value(batch, spec, up) - constraint_value(batch, spec, lo)) / tau
    if spec.criterion == "di":
        u, l_ = group_terms(batch, up), group_terms(batch, lo)
        per_group = sum(abs(a - b) for a, b in zip(u, l_))
        gap = abs(constraint_value(batch, spec, lo) - constraint_value(batch, spec, INDICATOR))
        return (per_group + gap) / tau
    raise ValueError("the diagnostic is defined for the uif and di criteria")


def verdict(m_nf: float, tau: float, phi: float, threshold=DEFAULT_THRESHOLD):
    """``(M_ratio, verdict)``; a zero indicator constraint gives an infinite ratio."""
    if phi == 0:
        return math.inf, ("keep" if m_nf * tau <= ZERO_FLOOR else "abort")
    ratio = m_nf * tau / phi
    return ratio, ("abort" if ratio > threshold else "keep")


def mnf_diagnostic(model, data, spec: ConstraintSpec, tau: float, threshold=DEFAULT_THRESHOLD,
                   adversary: AdversaryConfig | None = None, seed=0, adv_X=None):
    """``(M_nf, M_ratio, verdict)``.  The verdict is advisory only."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    s = _scores(model, data.X)
    sv = _adv_scores(model, data, spec, adversary, seed, adv_X) if spec.criterion == "uif" else None
    batch = ScoredBatch(s, data.y, data.z, sv)
    m = mnf_value(batch, spec, tau)
    phi = constraint_value(batch, spec, INDICATOR)
    ratio, v = verdict(m, tau, phi, threshold)
    return m, ratio, v


# report ----------------------------------------------------------------

def evaluate(model, test, spec: ConstraintSpec | None = None, flip_columns=None, extra_flips=None,
             tau=None, threshold=DEFAULT_THRESHOLD, adversary=None, seed=0, meta=None) -> FairnessReport:
    """Accuracy, balanced accuracy, indicator DI, consistency and (given ``tau``) the diagnostic."""
    spec = spec or ConstraintSpec("di")
    s = _scores(model, test.X)
    pred = np.where(s > 0, 1.0, -1.0)
    di = None
    if test.z is not None and np.any(test.z == 0) and np.any(test.z == 1):
        di = constraint_value(ScoredBatch(s, test.y, test.z), ConstraintSpec("di"), INDICATOR)
    if flip_columns is None:
        src = test.provenance.get("sensitive")
        flip_columns = [src] if src and any(c.source == src and c.kind == "onehot" for c in test.schema) else None
    con = consistency(model, test, flip_columns) if flip_columns else None
    extra = {name: consistency(model, test, cols) for name, cols in (extra_flips or {}).items()}
    constraint = None
    if spec.criterion == "uif":
        sv = _adv_scores(model, test, spec, adversary, seed, None)
        constraint = constraint_value(ScoredBatch(s, test.y, test.z, sv), spec, INDICATOR)
    elif spec.criterion != "if_pairwise" and test.z is not None:
        constraint = constraint_value(ScoredBatch(s, test.y, test.z), spec, INDICATOR)
    report = FairnessReport(accuracy(test.y, pred), balanced_accuracy(test.y, pred), di, con, constraint,
                            spec.criterion, extra, meta=dict(meta or {}))
    if tau is not None and spec.criterion in ("di", "uif"):
        report.m_nf, report.m_ratio, report.diagnostic_verdict = mnf_diagnostic(
            model, test, spec, tau, threshold, adversary, seed)
    return report


# Pareto ------------------------------------------------------------------

def dominated_mask(acc, fair) -> np.ndarray:
    """Point i is dominated if some j has accuracy >= and fairness value <=, one of them strict."""
    acc, fair = np.asarray(acc, float), np.asarray(fair, float)
    out = np.zeros(acc.shape[0], dtype=bool)
    order = np.lexsort((fair, -acc))  # best accuracy first, then lowest fairness value
    best_fair = math.inf
    i = 0
    while i < len(order):
        # points sharing one accuracy value are compared among themselves first
        j = i
        while j < len(order) and acc[order[j]] == acc[order[i]]:
            j += 1
        block = order[i:j]
        group_min = fair[block].min()
        for k in block:
            out[k] = fair[k] >= best_fair or fair[k] > group_min
        best_fair = min(best_fair, group_min)
        i = j
    return out


@dataclass
class ParetoPoint:
    lam: float
    acc_mean: float | None
    acc_se: float | None
    fairness_mean: float | None
    fairness_se: float | None
    dominated: bool | None = None
    error: str | None = None


def _mean_se(v):
    v = np.asarray(v, float)
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def pareto_sweep(train_data, test_data, lambda_grid, config, metric="di", jobs=1):
    """Average test accuracy and fairness per penalty weight over ``config.restarts`` runs."""
    from .trainer import TrainingDivergedError, train_restarts

    grid = sorted(float(l) for l in lambda_grid)
    if not grid:
        raise ValueError("lambda grid must be nonempty")
    spec = ConstraintSpec(metric) if isinstance(metric, str) else metric
    points = []
    for lam in grid:
        cfg = replace(config, lam=lam)
        try:
            runs = train_restarts(train_data, cfg, jobs=jobs)
        except (TrainingDivergedError, FloatingPointError, ValueError) as exc:
            log.warning("lambda=%g failed: %s", lam, exc)
            points.append(ParetoPoint(lam, None, None, None, None, None, str(exc)))
            continue
        accs, fairs = [], []
        for r in runs:
            s = forward(r.params, test_data.X)
            accs.append(accuracy(test_data.y, np.where(s > 0, 1.0, -1.0)))
            sv = None
            if spec.criterion == "uif":
                sv = _adv_scores(r.params, test_data, spec, config.adversary, cfg.seed, None)
            fairs.append(constraint_value(ScoredBatch(s, test_data.y, test_data.z, sv), spec, INDICATOR))
        points.append(ParetoPoint(lam, *_mean_se(accs), *_mean_se(fairs)))
    ok = [p for p in points if p.error is None]
    if ok:
        dom = dominated_mask([p.acc_mean for p in ok], [p.fairness_mean for p in ok])
        for p, d in zip(ok, dom):
            p.dominated = bool(d)
    return points


PARETO_COLUMNS = ("lambda", "acc_mean", "acc_se", "fairness_mean", "fairness_se", "dominated")


def pareto_to_csv(points, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PARETO_COLUMNS)
        for p in points:
            vals = [p.lam, p.acc_mean, p.acc_se, p.fairness_mean, p.fairness_se, p.dominated]
            w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else str(v).lower()) for v in vals])
