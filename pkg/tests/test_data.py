import numpy as np
import pytest

from fcox.data import (
    Dataset,
    InvalidDataError,
    ParseError,
    center,
    is_centered,
    load_csv,
    load_grid_csv,
    risk_set,
    write_csv,
)
from fcox.grid import make_uniform_grid

GRID = make_uniform_grid(5)


def tiny_dataset(times, events, z, x=None):
    n = len(times)
    if x is None:
        x = np.zeros((n, 5))
    z = np.asarray(z, dtype=float).reshape(n, -1)
    return Dataset(times, events, z, x, GRID)


def test_center_mean_subtraction():
    ds = center(tiny_dataset([1.0, 2.0], [True, True], [1.0, 3.0]))
    np.testing.assert_allclose(ds.z[:, 0], [-1.0, 1.0])


def test_center_uses_event_weighted_mean():
    ds = center(tiny_dataset([1.0, 2.0], [True, False], [2.0, 5.0]))
    np.testing.assert_allclose(ds.z[:, 0], [0.0, 3.0])


def test_center_idempotent_and_preserves_time_event():
    rng = np.random.default_rng(0)
    ds = tiny_dataset(
        [1.0, 2.0, 3.0, 4.0],
        [True, False, True, True],
        rng.standard_normal(4),
        rng.standard_normal((4, 5)),
    )
    once = center(ds)
    twice = center(once)
    np.testing.assert_allclose(once.z, twice.z, atol=1e-12)
    np.testing.assert_allclose(once.x, twice.x, atol=1e-12)
    np.testing.assert_array_equal(once.times, ds.times)
    np.testing.assert_array_equal(once.events, ds.events)
    assert once.centered and is_centered(once)
    mask = once.events
    assert np.abs(once.z[mask].mean(axis=0)).max() <= 1e-10
    assert np.abs(once.x[mask].mean(axis=0)).max() <= 1e-10


def test_risk_set_definition():
    ds = tiny_dataset([3.0, 1.0, 2.0], [True, True, True], [0.0, 0.0, 0.0])
    np.testing.assert_array_equal(risk_set(ds, 2), [0, 2])  # T=2: times 3 and 2
    np.testing.assert_array_equal(risk_set(ds, 1), [0, 1, 2])  # minimum: everyone
    np.testing.assert_array_equal(risk_set(ds, 0), [0])


def test_risk_set_ties_weak_inequality():
    ds = tiny_dataset([2.0, 2.0], [True, True], [0.0, 0.0])
    np.testing.assert_array_equal(risk_set(ds, 0), [0, 1])
    np.testing.assert_array_equal(risk_set(ds, 1), [0, 1])


def test_risk_set_sizes_non_increasing():
    rng = np.random.default_rng(1)
    times = np.round(rng.exponential(size=30), 2) + 0.01  # induce some ties
    ds = tiny_dataset(times, np.ones(30, dtype=bool), np.zeros(30))
    order = np.argsort(times)
    sizes = [len(risk_set(ds, i)) for i in order]
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))


def test_risk_set_index_bounds():
    ds = tiny_dataset([1.0], [True], [0.0])
    with pytest.raises(ValueError):
        risk_set(ds, 5)


def test_dataset_requires_an_event():
    with pytest.raises(InvalidDataError):
        tiny_dataset([1.0, 2.0], [False, False], [0.0, 1.0])


def test_dataset_rejects_bad_times_and_nonfinite():
    with pytest.raises(InvalidDataError):
        tiny_dataset([0.0, 1.0], [True, True], [0.0, 1.0])
    with pytest.raises(InvalidDataError):
        tiny_dataset([1.0, 2.0], [True, True], [np.nan, 1.0])


def test_record_view():
    ds = tiny_dataset([1.5, 2.0], [True, False], [3.0, 4.0])
    rec = ds.record(1)
    assert rec.time == 2.0 and rec.event is False
    np.testing.assert_allclose(rec.z, [4.0])


def _write_rows(path, header, rows):
    lines = [",".join(header)] + [",".join(map(str, r)) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_load_csv_valid(tmp_path):
    path = tmp_path / "d.csv"
    header = ["time", "event", "z1", "x1", "x2", "x3", "x4", "x5"]
    rows = [
        [1.5, 1, 0.3, 0, 0, 0, 0, 0],
        [2.5, 0, -0.3, 1, 1, 1, 1, 1],
        [0.5, 1, 0.1, 0, 1, 0, 1, 0],
    ]
    _write_rows(path, header, rows)
    ds = load_csv(path, GRID)
    assert ds.n == 3 and ds.p == 1 and not ds.centered
    np.testing.assert_allclose(ds.times, [1.5, 2.5, 0.5])
    np.testing.assert_array_equal(ds.events, [True, False, True])


def test_load_csv_rejects_bad_event(tmp_path):
    path = tmp_path / "d.csv"
    _write_rows(path, ["time", "event", "z1", "x1", "x2", "x3", "x4", "x5"],
                [[1.0, 2, 0.0, 0, 0, 0, 0, 0]])
    with pytest.raises(ParseError, match="row 2"):
        load_csv(path, GRID)


def test_load_csv_rejects_grid_mismatch(tmp_path):
    path = tmp_path / "d.csv"
    _write_rows(path, ["time", "event", "z1", "x1", "x2"], [[1.0, 1, 0.0, 0, 0]])
    with pytest.raises(ParseError, match="x-columns"):
        load_csv(path, GRID)


def test_load_csv_rejects_non_numeric_with_row(tmp_path):
    path = tmp_path / "d.csv"
    _write_rows(path, ["time", "event", "z1", "x1", "x2", "x3", "x4", "x5"],
                [[1.0, 1, 0.0, 0, 0, 0, 0, 0],
                 [2.0, 1, "oops", 0, 0, 0, 0, 0]])
    with pytest.raises(ParseError, match="row 3"):
        load_csv(path, GRID)


def test_load_csv_missing_header(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,b,c\n", encoding="utf-8")
    with pytest.raises(ParseError, match="row 1"):
        load_csv(path, GRID)


def test_round_trip_is_bit_identical(tmp_path):
    rng = np.random.default_rng(5)
    ds = tiny_dataset(
        rng.uniform(0.5, 4.0, size=6),
        rng.uniform(size=6) < 0.7,
        rng.standard_normal((6, 2)),
        rng.standard_normal((6, 5)),
    )
    p1 = tmp_path / "a.csv"
    p2 = tmp_path / "b.csv"
    write_csv(ds, p1)
    loaded = load_csv(p1, GRID)
    assert loaded.equals(ds)
    write_csv(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_grid_csv(tmp_path):
    path = tmp_path / "g.csv"
    path.write_text("s\n0.0\n0.25\n0.5\n0.75\n1.0\n", encoding="utf-8")
    grid = load_grid_csv(path)
    np.testing.assert_allclose(grid.points, [0, 0.25, 0.5, 0.75, 1.0])
    headerless = tmp_path / "g2.csv"
    headerless.write_text("0.0\n0.25\n0.5\n0.75\n1.0\n", encoding="utf-8")
    assert load_grid_csv(headerless) == grid
