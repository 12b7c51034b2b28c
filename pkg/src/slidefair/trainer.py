"""Penalised fair training: minimise ``L_n(f) + lam * phi_n(f)`` with Adam.

Three modes share one objective:

* ``plain``   - Adam on the surrogate-penalised objective;
* ``hyslide`` - a hinge-penalised phase followed by a SLIDE phase that starts
  from the hinge solution (optimizer state carried over);
* ``cccp``    - convex-concave procedure on the SLIDE penalty: the concave part
  ``-(z - tau)_+ / tau`` is linearised in score space at the current model and
  the convex remainder is minimised by Adam (or exactly, for linear models).

Training is full batch; one Adam step per epoch.
"""
from __future__ import annotations

import csv
import logging
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .adversary import AdversaryConfig, adversarial_input
from .constraints import (INDICATOR, ConstraintSpec, ScoredBatch, constraint_value,
                          constraint_value_and_grad)
from .nn_core import AdamState, ModelParams, adam_step, add_grads, backward, forward, init_params, logistic_loss
from .rng import substream
from .surrogates import SurrogateSpec

log = logging.getLogger(__name__)

MODES = ("plain", "hyslide", "cccp")
TRAJECTORY_COLUMNS = ("epoch", "loss", "penalty", "constraint_indicator", "constraint_surrogate")


class TrainingDivergedError(FloatingPointError):
    def __init__(self, last_finite_epoch: int):
        super().__init__(f"objective became non-finite; last finite epoch {last_finite_epoch}")
        self.last_finite_epoch = last_finite_epoch


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 2000
    lr: float = 0.05
    lam: float = 1.0
    surrogate: SurrogateSpec = field(default_factory=lambda: SurrogateSpec("slide", 0.1))
    tau_range: tuple | None = None
    constraint: ConstraintSpec = field(default_factory=ConstraintSpec)
    restarts: int = 1
    mode: str = "plain"
    target_accuracy: float | None = None
    seed: int = 0
    architecture: str = "mlp"
    hidden_width: int = 100
    decay_every: int = 500
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    cccp_inner_epochs: int = 200
    cccp_max_outer: int = 10
    cccp_tol: float = 1e-6
    cccp_inner: str = "adam"
    accuracy_band: float = 1.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.surrogate.kind == "indicator":
            raise ConfigError("the indicator has zero gradient almost everywhere and cannot be "
                              "trained against; choose hinge, slide, opposite_slide, psi or linear")
        if self.tau_range is not None:
            lo, hi = self.tau_range
            if not 0 < lo <= hi:
                raise ConfigError("tau_range must satisfy 0 < low <= high")

    def tau_for_restart(self, restart: int) -> float:
        if self.tau_range is None:
            return self.surrogate.tau
        lo, hi = self.tau_range
        return float(substream(self.seed, "tau", restart).uniform(lo, hi))


@dataclass(eq=False)
class TrainResult:
    params: ModelParams
    trajectory: dict
    meta: dict
    wall_clock: float = 0.0

    def to_csv(self, path) -> None:
        cols = [c for c in TRAJECTORY_COLUMNS] + [c for c in self.trajectory if c not in TRAJECTORY_COLUMNS]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in zip(*(self.trajectory[c] for c in cols)):
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])

    @property
    def seed(self):
        return self.meta.get("seed", 0)


def _new_trajectory():
    return {c: [] for c in TRAJECTORY_COLUMNS}


# objective ---------------------------------------------------------------

def perturbable_mask(data) -> np.ndarray:
    if hasattr(data, "continuous_mask"):
        return data.continuous_mask
    return np.ones(np.asarray(data.X).shape[1], dtype=bool)


def penalized_objective(params: ModelParams, X, y, z, constraint: ConstraintSpec,
                        surrogate: SurrogateSpec, lam: float, adv_X=None, with_grad=True):
    """Value, parameter gradients and diagnostics of ``L_n(f) + lam * phi_n^surrogate(f)``.

    For UIF ``adv_X`` holds the adversarial inputs, treated as fixed.
    """
    s = forward(params, X)
    loss, dloss = logistic_loss(s, y)
    sv = forward(params, adv_X) if adv_X is not None else None
    batch = ScoredBatch(s, y, z, sv)
    phi, gs, gv = constraint_value_and_grad(batch, constraint, surrogate)
    value = loss + lam * phi
    info = {"loss": loss, "phi_surrogate": phi, "scores": s, "adv_scores": sv, "batch": batch}
    if not with_grad:
        return value, None, info
    grads = backward(params, X, dloss + lam * gs)
    if gv is not None and lam != 0:
        grads = add_grads(grads, backward(params, adv_X, lam * gv))
    return value, grads, info


def _adv_inputs(params, data, config: TrainConfig, restart: int, epoch: int):
    if config.constraint.criterion != "uif":
        return None
    adv = replace(config.adversary, epsilon=config.constraint.epsilon)
    rng = substream(config.seed, "adversary", restart, epoch)
    return adversarial_input(params, data.X, adv, mask=perturbable_mask(data), rng=rng)


def _check_groups(data, constraint: ConstraintSpec):
    if constraint.criterion in ("di", "eo", "eqopp", "di_boundary", "cov"):
        if data.z is None or not (np.any(data.z == 0) and np.any(data.z == 1)):
            raise ConfigError(f"criterion {constraint.criterion!r} needs both sensitive groups in the data")


def _record(traj, epoch, info, lam, constraint, extra=None):
    traj["epoch"].append(int(epoch))
    traj["loss"].append(float(info["loss"]))
    traj["penalty"].append(float(lam * info["phi_surrogate"]))
    traj["constraint_indicator"].append(float(constraint_value(info["batch"], constraint, INDICATOR)))
    traj["constraint_surrogate"].append(float(info["phi_surrogate"]))
    for k, v in (extra or {}).items():
        traj.setdefault(k, []).append(v)


# training loops ----------------------------------------------------------

def _initial(data, config: TrainConfig, restart: int) -> ModelParams:
    rng = substream(config.seed, "train", restart)
    return init_params(config.architecture, data.X.shape[1], config.hidden_width, rng)


def _adam_loop(params, data, config, surrogate, state, traj, restart, epoch0, epochs, extra=None):
    last_finite = epoch0 - 1
    for e in range(epoch0, epoch0 + epochs):
        V = _adv_inputs(params, data, config, restart, e)
        value, grads, info = penalized_objective(params, data.X, data.y, data.z, config.constraint,
                                                 surrogate, config.lam, V)
        if not np.isfinite(value):
            raise TrainingDivergedError(last_finite)
        last_finite = e
        _record(traj, e, info, config.lam, config.constraint, extra)
        params = adam_step(params, grads, state)
    return params


def train_penalized(train, config: TrainConfig, restart: int = 0, init: ModelParams | None = None,
                    state: AdamState | None = None, epoch0: int = 0, surrogate: SurrogateSpec | None = None):
    """One Adam run on the penalised objective; adversarial inputs refreshed every epoch for UIF."""
    _check_groups(train, config.constraint)
    t0 = time.perf_counter()
    tau = config.tau_for_restart(restart)
    surrogate = surrogate or config.surrogate.with_tau(tau)
    params = init.copy() if init is not None else _initial(train, config, restart)
    state = state if state is not None else AdamState(config.lr, decay_every=config.decay_every)
    traj = _new_trajectory()
    params = _adam_loop(params, train, config, surrogate, state, traj, restart, epoch0, config.epochs)
    meta = {"seed": config.seed, "restart": restart, "tau": tau, "mode": "plain",
            "surrogate": surrogate.kind, "lam": config.lam, "criterion": config.constraint.criterion,
            "adam_state": state}
    return TrainResult(params, traj, meta, time.perf_counter() - t0)


def train_hyslide(train, config: TrainConfig, restart: int = 0):
    """Hinge-penalised run, then a SLIDE-penalised run warm-started from it."""
    t0 = time.perf_counter()
    tau = config.tau_for_restart(restart)
    hinge = train_penalized(train, config, restart, surrogate=SurrogateSpec("hinge"))
    state = hinge.meta["adam_state"]
    slide = train_penalized(train, config, restart, init=hinge.params, state=state,
                            epoch0=config.epochs, surrogate=SurrogateSpec("slide", tau))
    traj = {k: hinge.trajectory[k] + slide.trajectory[k] for k in hinge.trajectory}
    traj["phase"] = ["hinge"] * config.epochs + ["slide"] * config.epochs
    meta = dict(slide.meta, mode="hyslide", tau=tau, surrogate="slide")
    return TrainResult(slide.params, traj, meta, time.perf_counter() - t0)


# CCCP --------------------------------------------------------------------

def _pos(x):
    return np.maximum(x, 0.0)


def cccp_parts(batch: ScoredBatch, constraint: ConstraintSpec, tau: float):
    """Convex part value/score-gradient and concave part value/score-gradient of the SLIDE penalty.

    Returns ``(conv, dconv_s, dconv_v, conc, dconc_s, dconc_v)`` with
    ``phi_slide = conv + conc``.  Gradients are with respect to ``f(x_i)`` and,
    for UIF, ``f(v_i)``.
    """
    s = batch.scores
    if constraint.criterion == "uif":
        a = s - batch.adv_scores
        arg = np.abs(a) - constraint.gamma
        n = s.shape[0]
        conv = _pos(arg).mean() / tau
        conc = -_pos(arg - tau).mean() / tau
        dconv = (arg > 0) * np.sign(a) / (n * tau)
        dconc = -1.0 * (arg > tau) * np.sign(a) / (n * tau)
        return conv, dconv, -dconv, conc, dconc, -dconc
    if constraint.criterion == "di":
        m0, m1 = batch.z == 0, batch.z == 1
        n0, n1 = m0.sum(), m1.sum()
        p, q = _pos(s) / tau, _pos(s - tau) / tau
        dp, dq = (s > 0) / tau, (s > tau) / tau
        P = p[m0].sum() / n0 + q[m1].sum() / n1
        Q = p[m1].sum() / n1 + q[m0].sum() / n0
        dP = np.where(m0, dp / n0, dq / n1)
        dQ = np.where(m1, dp / n1, dq / n0)
        # |P - Q| = 2 max(P, Q) - (P + Q)
        conv = 2 * max(P, Q)
        dconv = 2 * (dP if P >= Q else dQ)
        return conv, dconv, None, -(P + Q), -(dP + dQ), None
    raise ConfigError("CCCP supports the di and uif criteria")


def _cccp_inner_value(params, data, constraint, tau, lam, V, lin_s, lin_v, with_grad=True):
    s = forward(params, data.X)
    loss, dloss = logistic_loss(s, data.y)
    sv = forward(params, V) if V is not None else None
    batch = ScoredBatch(s, data.y, data.z, sv)
    conv, dconv_s, dconv_v, _, _, _ = cccp_parts(batch, constraint, tau)
    value = loss + lam * (conv + lin_s @ s + (lin_v @ sv if V is not None else 0.0))
    if not with_grad:
        return value, None
    grads = backward(params, data.X, dloss + lam * (dconv_s + lin_s))
    if V is not None:
        grads = add_grads(grads, backward(params, V, lam * (dconv_v + lin_v)))
    return value, grads


def _exact_inner_linear(params, data, constraint, tau, lam, V, lin_s, lin_v, tol=1e-10):
    """Solve the convex inner problem for a linear model with an interior-point solver."""
    import cvxpy as cp

    X, y, n = data.X, data.y, data.X.shape[0]
    w, b = cp.Variable(X.shape[1]), cp.Variable()
    s = X @ w + b
    obj = cp.sum(cp.logistic(-cp.multiply(y, s))) / n + lam * (lin_s @ s)
    if constraint.criterion == "uif":
        sv = V @ w + b
        obj += lam * (cp.sum(cp.pos(cp.abs(s - sv) - constraint.gamma)) / (n * tau) + lin_v @ sv)
    else:
        m0, m1 = data.z == 0, data.z == 1
        n0, n1 = m0.sum(), m1.sum()
        P = (cp.sum(cp.pos(s[m0])) / n0 + cp.sum(cp.pos(s[m1] - tau)) / n1) / tau
        Q = (cp.sum(cp.pos(s[m1])) / n1 + cp.sum(cp.pos(s[m0] - tau)) / n0) / tau
        obj += lam * 2 * cp.maximum(P, Q)
    prob = cp.Problem(cp.Minimize(obj))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # "may be inaccurate"; the caller re-checks descent
        try:
            prob.solve(solver="CLARABEL", tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol, max_iter=500)
        except cp.error.SolverError as exc:
            log.warning("inner solve failed: %s", exc)
            return params
    if prob.status not in ("optimal", "optimal_inaccurate") or w.value is None:
        log.warning("inner solve ended with status %s", prob.status)
        return params
    return params.with_flat(np.concatenate([w.value, [b.value]]))


def slide_objective(params, data, constraint, lam, tau, V=None):
    value, _, info = penalized_objective(params, data.X, data.y, data.z, constraint,
                                         SurrogateSpec("slide", tau), lam, V, with_grad=False)
    return value, info


def train_cccp(train, config: TrainConfig, restart: int = 0, init: ModelParams | None = None, adv_X=None):
    """Convex-concave procedure on the SLIDE-penalised objective.

    Adversarial inputs are held fixed inside an outer iteration and refreshed
    between iterations, unless ``adv_X`` is given (then they stay fixed
    throughout).  ``config.cccp_inner = "exact"`` solves each inner problem
    with an interior-point method (linear models only).
    """
    _check_groups(train, config.constraint)
    if config.constraint.criterion not in ("di", "uif"):
        raise ConfigError("CCCP supports the di and uif criteria")
    if config.cccp_inner == "exact" and config.architecture != "linear":
        raise ConfigError("exact inner solves need a linear model")
    t0 = time.perf_counter()
    tau = config.tau_for_restart(restart)
    params = init.copy() if init is not None else _initial(train, config, restart)
    state = AdamState(config.lr, decay_every=config.decay_every)
    traj = _new_trajectory()
    traj["objective"] = []
    lam, spec = config.lam, config.constraint
    uif = spec.criterion == "uif"

    V = adv_X if adv_X is not None else (_adv_inputs(params, train, config, restart, 0) if uif else None)
    F_prev, _ = slide_objective(params, train, spec, lam, tau, V)
    F_init = F_prev
    epoch = 0
    for k in range(config.cccp_max_outer):
        if uif and adv_X is None and k > 0:
            V = _adv_inputs(params, train, config, restart, k)
        s = forward(params, train.X)
        sv = forward(params, V) if V is not None else None
        _, _, _, _, lin_s, lin_v = cccp_parts(ScoredBatch(s, train.y, train.z, sv), spec, tau)
        if lin_v is None:
            lin_v = np.zeros(0)
        if config.cccp_inner == "exact":
            cand = _exact_inner_linear(params, train, spec, tau, lam, V, lin_s, lin_v)
            g_old, _ = _cccp_inner_value(params, train, spec, tau, lam, V, lin_s, lin_v, False)
            g_new, _ = _cccp_inner_value(cand, train, spec, tau, lam, V, lin_s, lin_v, False)
            # an inner solve must not worsen the surrogate it minimises
            if g_new <= g_old:
                params = cand
        else:
            for _ in range(config.cccp_inner_epochs):
                value, grads = _cccp_inner_value(params, train, spec, tau, lam, V, lin_s, lin_v)
                if not np.isfinite(value):
                    raise TrainingDivergedError(epoch - 1)
                params = adam_step(params, grads, state)
                epoch += 1
        F, info = slide_objective(params, train, spec, lam, tau, V)
        if not np.isfinite(F):
            raise TrainingDivergedError(epoch - 1)
        _record(traj, k, info, lam, spec, {"objective": float(F)})
        if lam == 0 or F_prev - F < config.cccp_tol * abs(F_prev):
            break
        F_prev = F
    meta = {"seed": config.seed, "restart": restart, "tau": tau, "mode": "cccp", "surrogate": "slide",
            "lam": lam, "criterion": spec.criterion, "outer_iterations": len(traj["epoch"]),
            "initial_objective": float(F_init)}
    return TrainResult(params, traj, meta, time.perf_counter() - t0)


def train(train_data, config: TrainConfig, restart: int = 0) -> TrainResult:
    if config.mode == "hyslide":
        return train_hyslide(train_data, config, restart)
    if config.mode == "cccp":
        return train_cccp(train_data, config, restart)
    return train_penalized(train_data, config, restart)


def _train_one(args):
    data, config, r = args
    return train(data, config, r)


def train_restarts(train_data, config: TrainConfig, jobs: int = 1) -> list:
    """``config.restarts`` independent runs, each with its own init and tau substream."""
    tasks = [(train_data, config, r) for r in range(config.restarts)]
    if jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_train_one, tasks))
    return [_train_one(t) for t in tasks]


# model selection ---------------------------------------------------------

def accuracy(params: ModelParams, data) -> float:
    pred = np.where(params.forward(data.X) > 0, 1.0, -1.0)
    return float(100.0 * np.mean(pred == data.y))


def indicator_constraint(params: ModelParams, data, constraint: ConstraintSpec,
                         adversary: AdversaryConfig | None = None, seed: int = 0) -> float:
    s = params.forward(data.X)
    sv = None
    if constraint.criterion == "uif":
        adv = replace(adversary or AdversaryConfig(), epsilon=constraint.epsilon)
        V = adversarial_input(params, data.X, adv, mask=perturbable_mask(data), rng=substream(seed, "adversary"))
        sv = params.forward(V)
    return constraint_value(ScoredBatch(s, data.y, data.z, sv), constraint, INDICATOR)


def select_model(candidates, validation, target_accuracy=None, constraint: ConstraintSpec | None = None,
                 band: float = 1.0, adversary: AdversaryConfig | None = None):
    """Pick the fairest candidate among those near a target validation accuracy.

    Candidates with validation accuracy within ``band`` percentage points of
    ``target_accuracy`` are kept (if none is, the closest one alone); among
    them the smallest indicator constraint value wins, ties going to higher
    accuracy and then the lower seed.  Without a target, the band is centred
    on the best validation accuracy.
    """
    if not candidates:
        raise ValueError("select_model needs at least one candidate")
    scored = []
    for c in candidates:
        spec = constraint or ConstraintSpec(c.meta.get("criterion", "di"))
        acc = accuracy(c.params, validation)
        fair = indicator_constraint(c.params, validation, spec, adversary, seed=c.seed)
        c.meta.update(val_accuracy=acc, val_constraint=fair)
        scored.append((c, acc, fair))
    target = max(a for _, a, _ in scored) if target_accuracy is None else target_accuracy
    pool = [t for t in scored if abs(t[1] - target) <= band]
    if not pool:
        pool = [min(scored, key=lambda t: (abs(t[1] - target), t[2], t[0].seed))]
    return min(pool, key=lambda t: (t[2], -t[1], t[0].seed, t[0].meta.get("restart", 0)))[0]
