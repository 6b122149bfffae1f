import numpy as np
import pytest

from meerkit.audio import DatasetManifest
from meerkit.features import (FeatureTable, FeatureTableError, export_csv, ingest_csv,
                              join, standardize_apply, standardize_fit)


def _table(rows, names=None, fsid="t"):
    names = names or [f"f{i}" for i in range(len(next(iter(rows.values()))))]
    return FeatureTable(fsid, names, {k: np.asarray(v, float) for k, v in rows.items()})


def test_ingest_basic(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("call_id,f0,f1\na,1.0,2.0\nb,3.5,-1.25\nc,0,0\n")
    table = ingest_csv(path)
    assert table.dimension == 2
    assert len(table) == 3
    assert np.array_equal(table.rows["b"], [3.5, -1.25])


def test_ingest_expected_dimension(tmp_path):
    path = tmp_path / "f.csv"
    header = "call_id," + ",".join(f"x{i}" for i in range(88))
    path.write_text(header + "\nrow0," + ",".join(["0.5"] * 88) + "\n")
    assert ingest_csv(path, expected_dimension=88).dimension == 88
    with pytest.raises(FeatureTableError, match="dimension"):
        ingest_csv(path, expected_dimension=6373)


def test_ingest_errors(tmp_path):
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("call_id,f0,f1\na,1.0\n")
    with pytest.raises(FeatureTableError, match="ragged"):
        ingest_csv(ragged)
    nonnum = tmp_path / "nonnum.csv"
    nonnum.write_text("call_id,f0\na,hello\n")
    with pytest.raises(FeatureTableError, match="non-numeric"):
        ingest_csv(nonnum)
    dup = tmp_path / "dup.csv"
    dup.write_text("call_id,f0\na,1\na,2\n")
    with pytest.raises(FeatureTableError, match="duplicate"):
        ingest_csv(dup)


def test_export_ingest_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(0)
    rows = {f"c{i}": rng.normal(size=7) * 10.0 ** rng.integers(-8, 8) for i in range(20)}
    table = _table(rows)
    path = tmp_path / "rt.csv"
    export_csv(table, path)
    again = ingest_csv(path)
    for cid in rows:
        assert np.array_equal(again.rows[cid], table.rows[cid])


def test_standardize_fit_two_points():
    table = _table({"a": [1.0], "b": [3.0], "c": [100.0]})
    params = standardize_fit(table, ["a", "b"])
    assert params.means[0] == pytest.approx(2.0)
    assert params.stds[0] == pytest.approx(np.sqrt(2.0))


def test_standardize_constant_dimension_clamped():
    table = _table({"a": [5.0, 1.0], "b": [5.0, 2.0], "c": [5.0, 3.0]})
    params = standardize_fit(table, ["a", "b", "c"])
    assert params.means[0] == 5.0
    assert params.stds[0] == 1.0


def test_standardize_train_rows_only():
    table = _table({"a": [1.0], "b": [3.0], "x": [1000.0]})
    params = standardize_fit(table, ["a", "b"])
    smaller = _table({"a": [1.0], "b": [3.0]})
    params2 = standardize_fit(smaller, ["a", "b"])
    assert np.array_equal(params.means, params2.means)
    assert np.array_equal(params.stds, params2.stds)


def test_standardize_apply_and_moments():
    rng = np.random.default_rng(1)
    rows = {f"r{i}": rng.normal(size=4) * 3 + 5 for i in range(10)}
    table = _table(rows)
    train = [f"r{i}" for i in range(10)]
    params = standardize_fit(table, train)
    z = standardize_apply(table, params)
    assert z.feature_set_id.endswith("+z")
    mat = z.matrix(train)
    assert np.abs(mat.mean(axis=0)).max() < 1e-12
    assert np.abs(mat.std(axis=0, ddof=1) - 1).max() < 1e-12
    # round-trip back through the inverse affine
    recovered = mat * params.stds + params.means
    assert np.abs(recovered - table.matrix(train)).max() < 1e-12


def test_standardize_identity_params():
    table = _table({"a": [1.0, 2.0], "b": [3.0, 4.0]})
    params = standardize_fit(table, ["a", "b"])
    params = type(params)(np.zeros(2), np.ones(2))
    z = standardize_apply(table, params)
    assert np.array_equal(z.rows["a"], table.rows["a"])


def test_join_order_and_indices():
    manifest = DatasetManifest(
        entries=[{"call_id": "b", "path": "x", "label": "cc"},
                 {"call_id": "a", "path": "y", "label": "al"}],
        label_set=["al", "cc"],
    )
    table = _table({"a": [1.0], "b": [2.0]})
    x, y, labels, ids = join(table, manifest)
    assert ids == ["b", "a"]
    assert labels == ["al", "cc"]
    assert y.tolist() == [1, 0]
    assert x[:, 0].tolist() == [2.0, 1.0]


def test_join_strict_missing():
    manifest = DatasetManifest(
        entries=[{"call_id": "zz", "path": "x", "label": "al"},
                 {"call_id": "a", "path": "y", "label": "al"}],
        label_set=["al"],
    )
    table = _table({"a": [1.0]})
    with pytest.raises(FeatureTableError, match="zz"):
        join(table, manifest)
    x, y, labels, ids = join(table, manifest, strict=False)
    assert ids == ["a"]


def test_join_nine_class_index_range():
    labels9 = ["agg", "al", "cc", "ch", "gr", "ld", "sen", "su", "sub"]
    entries = [{"call_id": f"c{i}", "path": "p", "label": labels9[i % 9]}
               for i in range(27)]
    manifest = DatasetManifest(entries=entries, label_set=sorted(labels9))
    table = _table({f"c{i}": [float(i)] for i in range(27)})
    _, y, _, _ = join(table, manifest)
    assert set(y.tolist()) == set(range(9))


def test_non_finite_rows_rejected():
    with pytest.raises(FeatureTableError, match="non-finite"):
        _table({"a": [1.0, np.inf]})
