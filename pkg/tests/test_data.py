import warnings

import numpy as np
import pytest

from slidefair.data import (ContinuousScaler, DataError, Dataset, EmptyDataError, MissingColumnError, SchemaConfig,
                            SplitSpec, UnmappedLabelError, convergence_law, data_dir, dump_csv, load_csv, load_dump,
                            plain_schema, split, split_indices, synth)

SCHEMA = """[dataset]
label = y
positive = yes
negative = no
sensitive = g
sensitive_rule = equals:b

[columns]
x = continuous
g = categorical
"""


def _write(tmp_path, body, schema=SCHEMA):
    (tmp_path / "s.ini").write_text(schema)
    (tmp_path / "d.csv").write_text(body)
    return tmp_path / "d.csv", tmp_path / "s.ini"


def test_three_row_csv_exact(tmp_path):
    path, sch = _write(tmp_path, "x,g,y\n1.5,a,yes\n-2,b,no\n0,b,yes\n")
    ds = load_csv(path, sch)
    np.testing.assert_array_equal(ds.X, [[1.5, 1, 0], [-2, 0, 1], [0, 0, 1]])
    np.testing.assert_array_equal(ds.y, [1, -1, 1])
    np.testing.assert_array_equal(ds.z, [0, 1, 1])
    assert ds.columns == ["x", "g=a", "g=b"]
    assert ds.provenance["scaler"] is None


def test_distinct_errors(tmp_path):
    path, sch = _write(tmp_path, "x,y\n1,yes\n")
    with pytest.raises(MissingColumnError):
        load_csv(path, sch)
    path, sch = _write(tmp_path, "x,g,y\n1,a,maybe\n")
    with pytest.raises(UnmappedLabelError):
        load_csv(path, sch)
    path, sch = _write(tmp_path, "")
    with pytest.raises(EmptyDataError):
        load_csv(path, sch)
    path, sch = _write(tmp_path, "x,g,y\n?,a,yes\n")
    with pytest.raises(EmptyDataError):
        load_csv(path, sch)


def test_missing_rows_dropped(tmp_path):
    path, sch = _write(tmp_path, "x,g,y\n1,a,yes\n?,b,no\n2,b,no\n")
    assert load_csv(path, sch).n == 2


def test_constant_column_floor():
    X = np.column_stack([np.full(5, 3.0), np.arange(5.0)])
    with pytest.warns(RuntimeWarning):
        sc = ContinuousScaler().fit(X)
    out = sc.transform(X)
    np.testing.assert_array_equal(out[:, 0], 0.0)
    assert out[:, 1].std() == pytest.approx(1.0)


def test_split_sizes_and_partition():
    tr, va, te = split_indices(10, SplitSpec())
    assert (len(tr), len(va), len(te)) == (6, 2, 2)
    for seed in range(20):
        parts = split_indices(103, SplitSpec(seed=seed))
        allidx = np.concatenate(parts)
        assert sorted(allidx.tolist()) == list(range(103))
        assert [len(p) for p in parts] == [63, 20, 20]
    a = split_indices(50, SplitSpec(seed=3, repetition=1))
    b = split_indices(50, SplitSpec(seed=3, repetition=1))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    with pytest.raises(DataError):
        split_indices(9, SplitSpec())
    with pytest.raises(ValueError):
        SplitSpec(ratios=(0.5, 0.2, 0.2))


def test_no_leakage_scaler_from_train():
    ds = synth("gaussian_1d_groups", 200, seed=1)
    tr, va, te = split(ds, SplitSpec(seed=2))
    assert tr.provenance["scaler"]["fit_on"] == "train"
    assert va.provenance["scaler"] == tr.provenance["scaler"]
    assert tr.X.mean() == pytest.approx(0.0, abs=1e-12)
    assert abs(te.X.mean()) > 1e-6  # test part uses train statistics, so it is not re-centred


def test_onehot_left_alone():
    ds = synth("biased", 300, seed=0)
    tr, _, _ = split(ds)
    assert set(np.unique(tr.X[:, 2])) <= {0.0, 1.0}
    assert ds.provenance["sensitive"] == "group"


def test_dump_round_trip_bitwise(tmp_path):
    ds = synth("biased", 50, seed=5)
    ds.X[0, 0] = 0.1 + 0.2  # a float with a long repr
    dump_csv(ds, tmp_path / "b.csv")
    back = load_dump(tmp_path / "b.csv")
    assert back.X.tobytes() == ds.X.tobytes()
    assert np.array_equal(back.y, ds.y) and np.array_equal(back.z, ds.z)
    assert [c.kind for c in back.schema] == [c.kind for c in ds.schema]


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1)), np.array([1.0, 0.0]), None, plain_schema(1))
    with pytest.raises(DataError):
        Dataset(np.array([[np.nan]]), np.array([1.0]), None, plain_schema(1))
    from slidefair.data import Column
    sch = [Column("c=a", "onehot", "c"), Column("c=b", "onehot", "c")]
    with pytest.raises(DataError):
        Dataset(np.array([[1.0, 1.0]]), np.array([1.0]), None, sch)


def test_gaussian_mixture_means():
    ds = synth("gaussian_mixture_2d", 100_000, seed=0)
    np.testing.assert_allclose(ds.X[ds.y < 0].mean(0), [0.5, 4.5], atol=0.05)
    np.testing.assert_allclose(ds.X[ds.y > 0].mean(0), [2.0, 0.5], atol=0.05)
    assert ds.X[ds.y < 0].var(0) == pytest.approx([2.0, 2.0], rel=0.05)


def test_two_moon_envelope():
    ds = synth("two_moon", 1000, seed=0)
    X, lab = ds.X, ds.y > 0
    # upper arc: centre (0, 0); lower arc: centre (1, 0.5); radius 1
    r = np.where(lab, np.hypot(X[:, 0] - 1, X[:, 1] - 0.5), np.hypot(X[:, 0], X[:, 1]))
    dev = np.abs(r - 1.0)
    # distance from an isotropic N(0, .1^2 I) offset; the radial part is at most the full offset
    assert np.mean(dev <= 3 * 0.1 * np.sqrt(2)) >= 0.99
    assert dev.max() <= 4.5 * 0.1 * np.sqrt(2)


def test_convergence_cells():
    ds = synth("convergence_sim", 400_000, seed=0)
    x, s, lab = ds.X[:, 0], ds.z, ds.y > 0
    means = [[x[(s == a) & (lab == b)].mean() for b in (False, True)] for a in (0, 1)]
    np.testing.assert_allclose(means, [[-1, 1.5], [-0.5, 2.5]], atol=0.02)
    assert ds.provenance["second_moment"] == "variance"
    assert convergence_law({"second_moment": "sd"})[1][0, 0] == 1.5


def test_unknown_kind_and_determinism():
    with pytest.raises(DataError):
        synth("spiral", 10)
    a, b = synth("two_moon", 30, seed=4), synth("two_moon", 30, seed=4)
    assert np.array_equal(a.X, b.X)


def test_data_dir_env(monkeypatch, tmp_path):
    monkeypatch.setenv("SLIDE_DATA_DIR", str(tmp_path))
    assert data_dir() == tmp_path


def test_shipped_schemas_parse():
    for name in ("adult", "bank", "law"):
        cfg = SchemaConfig.from_file(name)
        assert cfg.columns and cfg.label
    assert SchemaConfig.from_file("bank").delimiter == ";"


def test_adult_dimension():
    path = data_dir() / "adult.csv"
    if not path.exists():
        pytest.skip("adult.csv not available")
    ds = load_csv(path, "adult")
    assert ds.d == 41 and ds.n == 45222
