import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddoec.datagen import (COLUMNS, Database, DatabaseFormatError, DatasetRow, cop_grid,
                           generate_paired_databases, load_database, meta_path, persist_database,
                           residualize)
from ddoec.netsim import Bounds, CopPoint, NetworkParams, PowerModelParams, RadioParams

SMALL_NET = NetworkParams(area_m2=1e5)


def small_dbs(r_er=15.0, bins=2, n_cycles=2, seed=1):
    grid = cop_grid(Bounds(), bins)
    return generate_paired_databases(grid, RadioParams(error_radius_m=r_er), PowerModelParams(),
                                     n_cycles, seed, SMALL_NET, Bounds(), bins)


def test_grid_default_box():
    g = cop_grid(Bounds(), 10)
    assert len(g) == 1000
    assert g[0] == CopPoint(0.0005, 10.0, 15.0)
    assert g[-1] == CopPoint(0.0125, 50.0, 30.0)
    assert len(set(g)) == 1000


def test_grid_corners():
    g = cop_grid(Bounds(), 2)
    assert set(g) == set(CopPoint(a, b, c) for a in (0.0005, 0.0125)
                         for b in (10.0, 50.0) for c in (15.0, 30.0))
    assert len(g) == 8


@given(st.integers(2, 7))
def test_grid_bijection(bins):
    b = Bounds()
    g = cop_grid(b, bins)
    axes = [np.linspace(lo, hi, bins) for lo, hi in zip(b.lower, b.upper)]
    for n, cop in enumerate(g):
        i, rem = divmod(n, bins * bins)
        j, k = divmod(rem, bins)
        assert cop == CopPoint(axes[0][i], axes[1][j], axes[2][k])
    X = np.array([c.as_array() for c in g])
    np.testing.assert_array_equal(X.min(axis=0), b.lower)
    np.testing.assert_array_equal(X.max(axis=0), b.upper)


@pytest.mark.parametrize("bins", [1, 0, 2.5])
def test_grid_rejects_bad_bins(bins):
    with pytest.raises(ValueError):
        cop_grid(Bounds(), bins)


def test_zero_error_databases_identical(tmp_path):
    ideal, err = small_dbs(r_er=0.0)
    assert [(r.ase, r.ee) for r in ideal.rows] == [(r.ase, r.ee) for r in err.rows]
    res = residualize(ideal, err)
    assert np.all(res.target("ase") == 0) and np.all(res.target("ee") == 0)


def test_deterministic_files(tmp_path):
    for name in ("a", "b"):
        ideal, _ = small_dbs()
        persist_database(ideal, tmp_path / f"{name}.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.meta").read_bytes() == (tmp_path / "b.meta").read_bytes()


def test_error_lowers_mean_ase():
    ideal, err = small_dbs(n_cycles=3)
    assert err.target("ase").mean() <= ideal.target("ase").mean()


def test_row_order_follows_grid():
    ideal, err = small_dbs()
    grid = cop_grid(Bounds(), 2)
    assert [r.cop for r in ideal.rows] == grid == [r.cop for r in err.rows]
    assert ideal.flavor == "ideal" and err.flavor == "erroneous"


def test_simulator_errors_name_the_cop():
    grid = [CopPoint(0.001, 10.0, 20.0), CopPoint(0.001, -5.0, 20.0)]
    with pytest.raises(RuntimeError, match="grid index 1"):
        generate_paired_databases(grid, RadioParams(), PowerModelParams(), 1, 0, SMALL_NET)


def _db(values, flavor):
    rows = [DatasetRow(CopPoint(0.001 * (i + 1), 10.0, 20.0), a, e, flavor, 1, i)
            for i, (a, e) in enumerate(values)]
    return Database(rows, meta={"flavor": flavor})


def test_residual_definition():
    r = residualize(_db([(0.003, 1.0)], "ideal"), _db([(0.002, 0.25)], "erroneous"))
    assert r.rows[0].ase == pytest.approx(0.001)
    assert r.rows[0].ee == 0.75
    assert r.flavor == "residual"


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=8),
       st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=8, max_size=8))
def test_residual_antisymmetric_and_self_zero(a, b):
    b = b[: len(a)]
    da, db = _db(a, "ideal"), _db(b, "erroneous")
    ab, ba = residualize(da, db), residualize(db, da)
    assert np.array_equal(ab.target("ase"), -ba.target("ase"))
    assert np.all(residualize(da, da).target("ee") == 0)


def test_residual_rejects_grid_mismatch():
    a = _db([(1, 1), (2, 2)], "ideal")
    b = Database([a.rows[1], a.rows[0]])
    with pytest.raises(ValueError, match="row 0"):
        residualize(a, b)
    with pytest.raises(ValueError, match="length"):
        residualize(a, a.subset([0]))


def test_round_trip_exact(tmp_path):
    ideal, err = small_dbs()
    for db in (ideal, err, residualize(ideal, err)):
        path = tmp_path / f"{db.flavor}.csv"
        persist_database(db, path)
        back = load_database(path)
        assert back.rows == db.rows
        assert back.bounds == db.bounds and back.bins == db.bins
        assert back.meta["flavor"] == db.flavor


def test_round_trip_awkward_floats(tmp_path):
    vals = [(0.1 + 0.2, 1 / 3), (5e-324, -0.0), (1.7976931348623157e308, 2.0 ** -40)]
    db = _db(vals, "ideal")
    persist_database(db, tmp_path / "x.csv")
    assert load_database(tmp_path / "x.csv").rows == db.rows


def test_missing_column_named(tmp_path):
    db = _db([(1.0, 2.0)], "ideal")
    path = tmp_path / "x.csv"
    persist_database(db, path)
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    drop = header.index("ee")
    path.write_text("\n".join(",".join(c for i, c in enumerate(l.split(",")) if i != drop)
                              for l in lines) + "\n")
    with pytest.raises(DatabaseFormatError, match="ee"):
        load_database(path)


def test_bad_value_names_line_and_column(tmp_path):
    path = tmp_path / "x.csv"
    persist_database(_db([(1.0, 2.0), (3.0, 4.0)], "ideal"), path)
    lines = path.read_text().splitlines()
    lines[2] = lines[2].replace("3", "three", 1)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatabaseFormatError, match=r"line 3.*'ase'"):
        load_database(path)


def test_empty_rows_keep_meta(tmp_path):
    db = Database([], Bounds(), 4, {"flavor": "ideal", "note": "x"})
    path = tmp_path / "e.csv"
    persist_database(db, path)
    back = load_database(path)
    assert len(back) == 0 and back.meta["note"] == "x" and back.bins == 4
    assert path.read_text().strip() == ",".join(COLUMNS)


def test_schema_version_checked(tmp_path):
    path = tmp_path / "x.csv"
    persist_database(_db([(1.0, 2.0)], "ideal"), path)
    meta = json.loads(meta_path(path).read_text())
    meta["schema_version"] = 99
    meta_path(path).write_text(json.dumps(meta))
    with pytest.raises(DatabaseFormatError, match="schema version"):
        load_database(path)


def test_missing_meta(tmp_path):
    path = tmp_path / "x.csv"
    persist_database(_db([(1.0, 2.0)], "ideal"), path)
    meta_path(path).unlink()
    with pytest.raises(DatabaseFormatError, match="metadata"):
        load_database(path)
