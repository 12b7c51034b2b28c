"""Tabular loading with leakage-safe standardisation; synthetic generators live here too."""
from __future__ import annotations

import configparser
import csv
import json
import os
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .rng import substream

SD_FLOOR = 1e-8
SCHEMA_DIR = Path(__file__).with_name("schemas")


class DataError(ValueError):
    pass


class MissingColumnError(DataError):
    pass


class UnmappedLabelError(DataError):
    pass


class EmptyDataError(DataError):
    pass


@dataclass(frozen=True)
class Column:
    name: str
    kind: str  # "continuous" or "onehot"
    source: str


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    z: np.ndarray | None
    schema: list
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2:
            raise DataError("X must be 2-D")
        n = self.X.shape[0]
        if self.y.shape != (n,):
            raise DataError(f"y has shape {self.y.shape}, expected ({n},)")
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise DataError("y must take values in {-1, +1}")
        if self.z is not None:
            self.z = np.asarray(self.z, dtype=float)
            if self.z.shape != (n,) or not np.all(np.isin(self.z, (0.0, 1.0))):
                raise DataError("z must be a {0, 1} vector with one entry per row")
        if not np.all(np.isfinite(self.X)):
            raise DataError("X contains NaN or Inf")
        if len(self.schema) != self.X.shape[1]:
            raise DataError("schema length does not match the column count")
        groups = {}
        for j, c in enumerate(self.schema):
            if c.kind == "onehot":
                groups.setdefault(c.source, []).append(j)
        for src, cols in groups.items():
            block = self.X[:, cols]
            if not np.all((block == 0) | (block == 1)):
                raise DataError(f"one-hot group {src!r} has entries other than 0/1")
            if len(cols) > 1 and not np.all(block.sum(axis=1) == 1):
                raise DataError(f"one-hot group {src!r} does not sum to 1 in every row")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def columns(self) -> list:
        return [c.name for c in self.schema]

    @property
    def continuous_mask(self) -> np.ndarray:
        return np.array([c.kind == "continuous" for c in self.schema], dtype=bool)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx], None if self.z is None else self.z[idx],
                       list(self.schema), dict(self.provenance))

    def source_columns(self, source: str) -> list:
        cols = [i for i, c in enumerate(self.schema) if c.source == source or c.name == source]
        if not cols:
            raise MissingColumnError(f"unknown column {source!r}")
        return cols


def plain_schema(d: int, prefix="x") -> list:
    return [Column(f"{prefix}{j}", "continuous", f"{prefix}{j}") for j in range(d)]


# schema configuration ----------------------------------------------------

@dataclass
class SchemaConfig:
    label: str
    positive: tuple
    negative: tuple
    sensitive: str
    sensitive_rule: str
    columns: list  # (name, kind) pairs in output order
    missing: tuple = ("?",)
    name: str = "csv"
    delimiter: str = ","
    require: tuple = ()  # extra columns whose missing values also drop the row

    @classmethod
    def from_file(cls, path) -> "SchemaConfig":
        path = Path(path)
        if not path.exists() and (SCHEMA_DIR / f"{path.name}.ini").exists():
            path = SCHEMA_DIR / f"{path.name}.ini"
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        if not cp.read(path):
            raise DataError(f"cannot read schema config {str(path)!r}")
        ds = cp["dataset"]

        def _list(key, default=""):
            return tuple(v.strip() for v in ds.get(key, default).split(",") if v.strip())

        cols = [(k, v.strip()) for k, v in cp["columns"].items()]
        return cls(label=ds["label"], positive=_list("positive"), negative=_list("negative"),
                   sensitive=ds["sensitive"], sensitive_rule=ds.get("sensitive_rule", "equals:1"),
                   columns=cols, missing=_list("missing", "?"), name=ds.get("name", path.stem),
                   delimiter=ds.get("delimiter", ",").strip() or ",", require=_list("require"))


def _sensitive_values(raw: list, rule: str) -> np.ndarray:
    kind, _, arg = rule.partition(":")
    if kind == "equals":
        return np.array([1.0 if v == arg else 0.0 for v in raw])
    if kind == "in":
        allowed = {a.strip() for a in arg.split("|")}
        return np.array([1.0 if v in allowed else 0.0 for v in raw])
    if kind in ("median", "ge"):
        vals = np.array([float(v) for v in raw])
        thr = np.median(vals) if kind == "median" else float(arg)
        return (vals >= thr).astype(float)
    raise DataError(f"unknown sensitive rule {rule!r}")


def load_csv(path, schema_config) -> Dataset:
    """Read an RFC-4180 CSV with a header row into an unstandardised :class:`Dataset`.

    Continuous columns are copied as floats, categorical columns are one-hot
    expanded (levels sorted) in schema order.  Rows with a missing marker in a
    used column are dropped.  Standardisation happens in :func:`split`, fitted on
    the training part only.
    """
    cfg = schema_config if isinstance(schema_config, SchemaConfig) else SchemaConfig.from_file(schema_config)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, skipinitialspace=True, delimiter=cfg.delimiter)
        header = reader.fieldnames
        if not header:
            raise EmptyDataError(f"{path}: empty file")
        needed = [cfg.label, cfg.sensitive] + [c for c, _ in cfg.columns] + list(cfg.require)
        missing = [c for c in needed if c not in header]
        if missing:
            raise MissingColumnError(f"{path}: missing columns {missing}")
        rows = [{k: (v or "").strip() for k, v in r.items() if k is not None} for r in reader]
    rows = [r for r in rows if not any(r[c] in cfg.missing or r[c] == "" for c in needed)]
    if not rows:
        raise EmptyDataError(f"{path}: no data rows")

    labels = [r[cfg.label] for r in rows]
    bad = sorted({v for v in labels if v not in cfg.positive and v not in cfg.negative})
    if bad:
        raise UnmappedLabelError(f"{path}: label values {bad[:5]} are neither positive nor negative")
    y = np.array([1.0 if v in cfg.positive else -1.0 for v in labels])
    z = _sensitive_values([r[cfg.sensitive] for r in rows], cfg.sensitive_rule)

    blocks, schema = [], []
    for name, kind in cfg.columns:
        raw = [r[name] for r in rows]
        if kind == "continuous":
            try:
                blocks.append(np.array(raw, dtype=float)[:, None])
            except ValueError as exc:
                raise DataError(f"column {name!r} is not numeric: {exc}") from None
            schema.append(Column(name, "continuous", name))
        elif kind == "categorical":
            levels = sorted(set(raw))
            blocks.append(np.array([[1.0 if v == lv else 0.0 for lv in levels] for v in raw]))
            schema.extend(Column(f"{name}={lv}", "onehot", name) for lv in levels)
        else:
            raise DataError(f"column {name!r}: unknown kind {kind!r}")
    X = np.hstack(blocks)
    return Dataset(X, y, z, schema, {"source": str(path), "schema": cfg.name, "scaler": None,
                                 "sensitive": cfg.sensitive})


# standardisation ---------------------------------------------------------

class ContinuousScaler(TransformerMixin, BaseEstimator):
    """Standardise the columns flagged in ``mask``; leave one-hot columns untouched."""

    def __init__(self, mask=None, sd_floor=SD_FLOOR):
        self.mask = mask
        self.sd_floor = sd_floor

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        mask = np.ones(X.shape[1], bool) if self.mask is None else np.asarray(self.mask, bool)
        self.mask_ = mask
        self.mean_ = X[:, mask].mean(axis=0)
        sd = X[:, mask].std(axis=0)
        if np.any(sd < self.sd_floor):
            warnings.warn(f"{int(np.sum(sd < self.sd_floor))} constant continuous column(s); "
                          f"sd floored at {self.sd_floor}", RuntimeWarning, stacklevel=2)
        self.scale_ = np.maximum(sd, self.sd_floor)
        return self

    def transform(self, X):
        X = np.array(X, dtype=float, copy=True)
        X[:, self.mask_] = (X[:, self.mask_] - self.mean_) / self.scale_
        return X


def standardize(train: Dataset, *others: Dataset):
    """Fit a :class:`ContinuousScaler` on ``train`` and apply it to every dataset given."""
    scaler = ContinuousScaler(train.continuous_mask).fit(train.X)
    info = {"fit_on": "train", "mean": scaler.mean_.tolist(), "scale": scaler.scale_.tolist()}
    out = []
    for ds in (train, *others):
        prov = dict(ds.provenance, scaler=info)
        out.append(Dataset(scaler.transform(ds.X), ds.y, ds.z, list(ds.schema), prov))
    return out


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple = (0.6, 0.2, 0.2)
    seed: int = 0
    repetition: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or abs(sum(self.ratios) - 1.0) > 1e-9 or min(self.ratios) < 0:
            raise ValueError("ratios must be three non-negative numbers summing to 1")


def split_indices(n: int, spec: SplitSpec):
    if n < 10:
        raise DataError("need at least 10 rows to split")
    perm = substream(spec.seed, "split", spec.repetition).permutation(n)
    n_val = int(np.floor(spec.ratios[1] * n))
    n_test = int(np.floor(spec.ratios[2] * n))
    n_train = n - n_val - n_test
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def split(dataset: Dataset, spec: SplitSpec = SplitSpec(), standardize_features=True):
    """Random train/val/test partition; the scaler is fitted on the train part only."""
    parts = [dataset.subset(i) for i in split_indices(dataset.n, spec)]
    for p, name in zip(parts, ("train", "val", "test")):
        p.provenance.update(split=name, split_seed=spec.seed, repetition=spec.repetition)
    if standardize_features and dataset.continuous_mask.any():
        parts = standardize(*parts)
    return tuple(parts)


# dumps -------------------------------------------------------------------

def dump_csv(dataset: Dataset, path) -> None:
    """Write X, y, z with a header; a ``.schema.json`` sidecar keeps column kinds."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(dataset.columns + ["y", "z"])
        z = dataset.z if dataset.z is not None else [""] * dataset.n
        for row, yy, zz in zip(dataset.X, dataset.y, z):
            w.writerow([repr(float(v)) for v in row] + [repr(float(yy)), "" if zz == "" else repr(float(zz))])
    side = {"schema": [vars(c) for c in dataset.schema], "provenance": dataset.provenance}
    path.with_name(path.name + ".schema.json").write_text(json.dumps(side, default=str))


def load_dump(path) -> Dataset:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise EmptyDataError(f"{path}: no data rows")
    header, body = rows[0], rows[1:]
    arr = [[float(v) for v in r[:-1]] for r in body]
    X = np.array([r[:-1] for r in arr]) if arr else np.zeros((0, len(header) - 2))
    y = np.array([r[-1] for r in arr])
    z = None if body[0][-1] == "" else np.array([float(r[-1]) for r in body])
    side = path.with_name(path.name + ".schema.json")
    if side.exists():
        meta = json.loads(side.read_text())
        schema = [Column(**c) for c in meta["schema"]]
        prov = meta.get("provenance", {})
    else:
        schema, prov = [Column(h, "continuous", h) for h in header[:-2]], {}
    return Dataset(X, y, z, schema, dict(prov, source=str(path)))


def data_dir() -> Path:
    return Path(os.environ.get("SLIDE_DATA_DIR", Path(__file__).resolve().parents[2] / "data"))


# synthetic datasets ------------------------------------------------------

CONVERGENCE_MEANS = ((-1.0, 1.5), (-0.5, 2.5))      # [s][y]
CONVERGENCE_SECOND = ((1.5, 0.5), (1.0, 1.5))       # variance by default


def convergence_law(params=None):
    """Cell means, standard deviations and probabilities for the convergence simulation."""
    params = params or {}
    second = np.array(CONVERGENCE_SECOND, dtype=float)
    sd = np.sqrt(second) if params.get("second_moment", "variance") == "variance" else second
    probs = np.array(params.get("cell_probs", ((0.25, 0.25), (0.25, 0.25))), dtype=float)
    if abs(probs.sum() - 1) > 1e-12:
        raise ValueError("cell_probs must sum to 1")
    return np.array(CONVERGENCE_MEANS, dtype=float), sd, probs


def _gaussian_mixture_2d(n, rng, params):
    lab = rng.integers(0, 2, n)
    mu = np.where(lab[:, None] == 0, [0.5, 4.5], [2.0, 0.5])
    X = mu + rng.standard_normal((n, 2)) * np.sqrt(params.get("variance", 2.0))
    return X, 2.0 * lab - 1, None, {"law": "X|Y=0~N([0.5,4.5],2I), X|Y=1~N([2.0,0.5],2I), P(Y=1)=1/2"}


def _two_moon(n, rng, params):
    from sklearn.datasets import make_moons
    noise = params.get("noise", 0.1)
    X, lab = make_moons(n, noise=noise, random_state=int(rng.integers(2**31 - 1)))
    return X, 2.0 * lab - 1, None, {"law": f"two moons, radius 1, offset 0.5, noise sd {noise}"}


def _gaussian_1d_groups(n, rng, params):
    z = rng.integers(0, 2, n).astype(float)
    x = (2 * z - 1) + rng.standard_normal(n)
    y = np.where(x + rng.standard_normal(n) > 0, 1.0, -1.0)
    return x[:, None], y, z, {"law": "X|Z=z~N(2z-1,1); y=sign(X+N(0,1))"}


def _convergence_sim(n, rng, params):
    mu, sd, probs = convergence_law(params)
    cell = rng.choice(4, size=n, p=probs.ravel())
    s, lab = cell // 2, cell % 2
    x = mu[s, lab] + sd[s, lab] * rng.standard_normal(n)
    return x[:, None], 2.0 * lab - 1, s.astype(float), {
        "law": "X|S,Y normal with means (-1,1.5,-0.5,2.5)",
        "second_moment": params.get("second_moment", "variance"), "cell_probs": probs.tolist()}


def _separable(n, rng, params):
    margin = params.get("margin", 0.5)
    X = rng.uniform(-2, 2, size=(n, 2))
    s = X[:, 0] + X[:, 1]
    X[:, 0] += np.where(s >= 0, margin, -margin)
    y = np.where(s >= 0, 1.0, -1.0)
    z = rng.integers(0, 2, n).astype(float)
    return X, y, z, {"law": f"uniform square split by x1+x2=0 with margin {margin}"}


def _biased(n, rng, params):
    """Label base rates differ by group; one feature is a noisy group proxy, one is the group itself."""
    p1 = params.get("p_pos", (0.35, 0.65))
    z = rng.integers(0, 2, n).astype(float)
    y = np.where(rng.random(n) < np.where(z == 1, p1[1], p1[0]), 1.0, -1.0)
    signal = params.get("signal", 2.5)
    x1 = signal * y / 2 + rng.standard_normal(n)
    x2 = (2 * z - 1) + rng.standard_normal(n)
    X = np.column_stack([x1, x2, z])
    return X, y, z, {"law": f"P(y=1|z)={tuple(p1)}, x1~N(signal*y/2,1), x2~N(2z-1,1), x3=z"}


_SYNTH = {
    "gaussian_mixture_2d": _gaussian_mixture_2d,
    "two_moon": _two_moon,
    "gaussian_1d_groups": _gaussian_1d_groups,
    "convergence_sim": _convergence_sim,
    "separable": _separable,
    "biased": _biased,
}
SYNTH_KINDS = tuple(_SYNTH)


def synth(kind: str, n: int, seed: int = 0, params: dict | None = None) -> Dataset:
    if kind not in _SYNTH:
        raise DataError(f"unknown synthetic kind {kind!r}; expected one of {SYNTH_KINDS}")
    if n < 1:
        raise DataError("n must be >= 1")
    params = dict(params or {})
    X, y, z, prov = _SYNTH[kind](n, substream(seed, "data"), params)
    schema = plain_schema(X.shape[1])
    if kind == "biased":
        schema[-1] = Column("group", "onehot", "group")
        prov["sensitive"] = "group"
    return Dataset(X, y, z, schema, dict(prov, kind=kind, seed=seed, n=n, params=params))


def sampler_for(kind: str, params: dict | None = None):
    """``sampler(n, rng) -> (X, y, z)`` drawing from a synthetic law, for Monte-Carlo use."""
    params = dict(params or {})
    fn = _SYNTH[kind]

    def sampler(n, rng):
        X, y, z, _ = fn(n, rng, params)
        return X, y, (np.zeros(n) if z is None else z)
    return sampler


def with_provenance(ds: Dataset, **kw) -> Dataset:
    return replace(ds, provenance=dict(ds.provenance, **kw))
