"""INI run configuration: sections ``[train]``, ``[surrogate]``, ``[constraint]``, ``[uif]``, ``[data]``."""
from __future__ import annotations

import configparser
import json

from .adversary import AdversaryConfig
from .constraints import ConstraintSpec
from .surrogates import SurrogateSpec
from .trainer import TrainConfig


class ConfigFileError(ValueError):
    pass


DEFAULTS = {
    "train": {"epochs": "2000", "lr": "0.05", "lambda": "1.0", "restarts": "1", "mode": "plain",
              "architecture": "mlp", "hidden_width": "100", "decay_every": "500",
              "target_accuracy": "", "accuracy_band": "1.0", "cccp_inner_epochs": "200",
              "cccp_max_outer": "10", "cccp_inner": "adam"},
    "surrogate": {"kind": "slide", "tau": "0.1", "tau_low": "", "tau_high": ""},
    "constraint": {"criterion": "di", "gamma": "", "epsilon": "0.1", "tau_boundary": ""},
    "uif": {"power_iters": "1", "xi": ""},
    "data": {"synthetic": "", "n": "500", "path": "", "schema": "", "split": "0.6,0.2,0.2",
             "repetition": "0", "params": ""},
}


def _opt(v, cast=float):
    v = (v or "").strip()
    return None if v == "" else cast(v)


def read_config(path=None, overrides=None) -> configparser.ConfigParser:
    """Read ``path`` over the defaults; ``overrides`` maps ``"section.key"`` to a value."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_dict(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigFileError(f"cannot read config {path}: {exc}") from None
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, name = key.partition(".")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, name, str(value))
    return cp


def train_config(cp, seed=0) -> TrainConfig:
    t, s, c, u = cp["train"], cp["surrogate"], cp["constraint"], cp["uif"]
    lo, hi = _opt(s.get("tau_low")), _opt(s.get("tau_high"))
    eps = float(c.get("epsilon"))
    try:
        return TrainConfig(
            epochs=int(t["epochs"]), lr=float(t["lr"]), lam=float(t["lambda"]),
            surrogate=SurrogateSpec(s["kind"], float(s["tau"])),
            tau_range=None if lo is None else (lo, hi if hi is not None else lo),
            constraint=ConstraintSpec(c["criterion"], gamma=_opt(c.get("gamma")), epsilon=eps,
                                      tau_boundary=_opt(c.get("tau_boundary"))),
            restarts=int(t["restarts"]), mode=t["mode"], target_accuracy=_opt(t.get("target_accuracy")),
            seed=int(seed), architecture=t["architecture"], hidden_width=int(t["hidden_width"]),
            decay_every=int(t["decay_every"]),
            adversary=AdversaryConfig(epsilon=eps, xi=_opt(u.get("xi")), power_iters=int(u["power_iters"])),
            cccp_inner_epochs=int(t["cccp_inner_epochs"]), cccp_max_outer=int(t["cccp_max_outer"]),
            cccp_inner=t["cccp_inner"], accuracy_band=float(t["accuracy_band"]))
    except (KeyError, ValueError) as exc:
        raise ConfigFileError(f"invalid configuration: {exc}") from exc


def snapshot(cp) -> dict:
    return {sec: dict(cp[sec]) for sec in cp.sections()}


def data_params(cp) -> dict:
    raw = cp["data"].get("params", "").strip()
    return json.loads(raw) if raw else {}
