import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from slidefair import ContinuousScaler, FairClassifier
from slidefair.config import ConfigFileError, read_config, train_config
from slidefair.data import synth


def _xy(n=200, seed=0):
    ds = synth("biased", n, seed=seed)
    return ds.X, ds.y, ds.z


def test_fit_predict_label_mapping():
    X, y, z = _xy()
    labels = np.where(y > 0, "yes", "no")
    clf = FairClassifier(lam=0.0, epochs=200, architecture="linear", hidden_width=0).fit(X, labels, z)
    assert list(clf.classes_) == ["no", "yes"]
    pred = clf.predict(X)
    assert set(pred) <= {"no", "yes"}
    assert np.mean(pred == labels) > 0.7
    proba = clf.predict_proba(X)
    assert proba.shape == (len(X), 2) and np.allclose(proba.sum(axis=1), 1)
    assert np.array_equal(pred == "yes", clf.decision_function(X) > 0)


def test_params_and_clone():
    clf = FairClassifier(lam=2.0, tau=0.05)
    assert clf.get_params()["lam"] == 2.0
    c = clone(clf)
    assert c.get_params() == clf.get_params() and c is not clf
    c.set_params(epochs=10)
    assert c.epochs == 10 and clf.epochs == 2000


def test_errors():
    X, y, z = _xy(60)
    with pytest.raises(NotFittedError):
        FairClassifier().predict(X)
    with pytest.raises(ValueError):
        FairClassifier(epochs=5).fit(X, np.arange(60) % 3, z)
    clf = FairClassifier(epochs=5, architecture="linear", hidden_width=0).fit(X, y, z)
    with pytest.raises(ValueError):
        clf.predict(X[:, :2])


def test_penalty_lowers_gap():
    X, y, z = _xy(600, seed=3)
    gaps = []
    for lam in (0.0, 5.0):
        clf = FairClassifier(lam=lam, epochs=400, architecture="linear", hidden_width=0, random_state=1)
        p = clf.fit(X, y, z).decision_function(X) > 0
        gaps.append(abs(p[z == 0].mean() - p[z == 1].mean()))
    assert gaps[1] < gaps[0]


def test_scaler_leaves_onehot_alone(rng):
    X = np.column_stack([rng.normal(3, 2, 100), rng.integers(0, 2, 100)])
    sc = ContinuousScaler(mask=[True, False]).fit(X)
    T = sc.transform(X)
    assert np.allclose(T[:, 0].mean(), 0) and np.allclose(T[:, 0].std(), 1)
    assert np.array_equal(T[:, 1], X[:, 1])
    with pytest.warns(RuntimeWarning):
        ContinuousScaler().fit(np.ones((5, 1)))


def test_config_overrides_and_errors(tmp_path):
    cp = read_config(None, {"train.lambda": 3, "surrogate.tau_low": 0.01, "surrogate.tau_high": 0.2,
                            "train.epochs": None})
    cfg = train_config(cp, seed=9)
    assert cfg.lam == 3.0 and cfg.tau_range == (0.01, 0.2) and cfg.epochs == 2000 and cfg.seed == 9
    bad = tmp_path / "bad.cfg"
    bad.write_text("[train]\nepochs = many\n")
    with pytest.raises(ConfigFileError):
        train_config(read_config(bad))
    with pytest.raises(ConfigFileError):
        read_config(tmp_path / "nope.cfg")
