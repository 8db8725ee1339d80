import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tcct.data import (ECL_FRACTIONS, IngestionError, SplitError, WindowError, WindowSpec, autocorrelation,
                       fit_normalization, load_csv, make_windows, split_by_months, split_by_time,
                       synth_series, time_marks, zscore)


def write_csv(path, n_rows, cols=("HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL", "OT"), bad_row=None):
    lines = ["date," + ",".join(cols)]
    for i in range(n_rows):
        vals = [str(i + j) for j in range(len(cols))]
        if bad_row == i + 1:
            vals[2] = "abc"
        lines.append(f"2016-07-01 {i:02d}:00:00," + ",".join(vals))
    path.write_text("\n".join(lines) + "\n")
    return path


def test_load_ett_schema(tmp_path):
    f = load_csv(write_csv(tmp_path / "ett.csv", 10))
    assert f.n_series == 7 and len(f) == 10 and f.target == "OT"
    assert f.values[3, 0] == 3.0


def test_single_row_and_errors(tmp_path):
    assert len(load_csv(write_csv(tmp_path / "one.csv", 1))) == 1
    with pytest.raises(IngestionError, match="row 5"):
        load_csv(write_csv(tmp_path / "bad.csv", 8, bad_row=5))
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(IngestionError):
        load_csv(tmp_path / "empty.csv")
    (tmp_path / "ragged.csv").write_text("date,a,b\n2016-07-01 00:00:00,1\n")
    with pytest.raises(IngestionError, match="row 1"):
        load_csv(tmp_path / "ragged.csv")
    (tmp_path / "back.csv").write_text("date,a\n2016-07-01 01:00:00,1\n2016-07-01 00:00:00,2\n")
    with pytest.raises(IngestionError, match="increasing"):
        load_csv(tmp_path / "back.csv")


def test_target_fallback(tmp_path):
    f = load_csv(write_csv(tmp_path / "x.csv", 3, cols=("a", "b")))
    assert f.target == "b"


def test_csv_round_trip(tmp_path):
    f = synth_series(length=30, n_series=3, seed=4)
    f.to_csv(tmp_path / "s.csv")
    g = load_csv(tmp_path / "s.csv")
    assert np.array_equal(f.values, g.values) and np.array_equal(f.timestamps, g.timestamps)


def test_zscore_hand_values():
    f = synth_series(length=3, n_series=1).with_values(np.array([[1.0], [2.0], [3.0]]))
    z, state = zscore(f)
    assert np.allclose(z.values[:, 0], [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)
    assert np.isclose(state.std[0], np.sqrt(2 / 3))
    z2, _ = zscore(z)
    assert np.allclose(z2.values, z.values, atol=1e-10)
    assert np.allclose(state.inverse(z.values), f.values, atol=1e-10)


def test_zero_variance_warns():
    with pytest.warns(RuntimeWarning):
        st_ = fit_normalization(np.ones((4, 1)))
    assert st_.std[0] == 1e-8


def test_normalization_uses_train_rows_only():
    f = synth_series(length=100, n_series=2, seed=1)
    train, val, test = split_by_time(f)
    _, s1 = zscore(train)
    g = f.with_values(np.where(np.arange(100)[:, None] >= 80, 99.0, f.values))
    _, s2 = zscore(split_by_time(g)[0])
    assert np.array_equal(s1.mean, s2.mean) and np.array_equal(s1.std, s2.std)


def test_splits():
    f = synth_series(length=20)
    assert [len(s) for s in split_by_time(f)] == [12, 4, 4]
    assert [len(s) for s in split_by_time(synth_series(length=35), ECL_FRACTIONS)] == [21, 7, 7]
    with pytest.raises(SplitError):
        split_by_time(f, (1, 0, 0))
    parts = split_by_time(synth_series(length=200))
    assert parts[0].timestamps[-1] < parts[1].timestamps[0] < parts[1].timestamps[-1] < parts[2].timestamps[0]


def test_month_split():
    f = synth_series(length=24 * 31 * 5)  # starts 2016-07-01
    train, val, test = split_by_months(f, (3, 1, 1))
    assert str(val.timestamps[0]).startswith("2016-10-01")
    assert str(test.timestamps[0]).startswith("2016-11-01")


@given(st.integers(6, 60), st.integers(1, 6), st.integers(1, 6), st.integers(1, 3))
def test_window_count(length, t0, T_, stride):
    f = synth_series(length=length, n_series=2)
    if length < t0 + T_:
        with pytest.raises(WindowError, match=str(t0 + T_)):
            make_windows(f, WindowSpec(t0, T_, stride))
        return
    ws = make_windows(f, WindowSpec(t0, T_, stride))
    assert len(ws) == (length - t0 - T_) // stride + 1


def test_windows_contents_and_modes():
    f = synth_series(length=10, n_series=3)
    ws = make_windows(f, WindowSpec(4, 2))
    assert len(ws) == 5
    assert len(make_windows(f.rows(0, 6), WindowSpec(4, 2))) == 1
    w = ws[2]
    assert np.array_equal(w.input, f.values[2:6]) and np.array_equal(w.target, f.values[6:8])
    x, y, _, _ = ws.arrays([2])
    assert np.array_equal(x[0], w.input) and np.array_equal(y[0], w.target)
    uni = make_windows(f, WindowSpec(4, 2, mode="univariate"))
    assert uni[0].input.shape == (4, 1)
    assert np.array_equal(uni[0].input[:, 0], f.values[:4, f.columns.index("OT")])


def test_time_marks_range():
    m = time_marks(synth_series(length=24 * 400).timestamps)
    assert m.shape[1] == 4 and m.min() >= -0.5 and m.max() <= 0.5
    assert np.isclose(m[:, 0].min(), -0.5) and np.isclose(m[:, 0].max(), 0.5)


def test_synth_determinism_and_structure():
    a, b = synth_series(length=500, n_series=3, seed=11), synth_series(length=500, n_series=3, seed=11)
    assert np.array_equal(a.values, b.values) and a.columns == ("s0", "s1", "OT")
    assert not np.array_equal(a.values, synth_series(length=500, n_series=3, seed=12).values)
    assert autocorrelation(synth_series(length=2000, seed=0).values[:, 0], 24) > 0.9
    with pytest.raises(ValueError):
        synth_series("bogus")


def test_noise_free_synth_is_exact_sine_sum():
    from tcct.data import SINE_PERIODS
    f = synth_series(length=400, n_series=2, seed=3, noise=0.0)
    t = np.arange(400.0)
    basis = np.column_stack([fn(2 * np.pi * t / p) for p in SINE_PERIODS for fn in (np.sin, np.cos)])
    for col in f.values.T:
        coef, *_ = np.linalg.lstsq(basis, col, rcond=None)
        assert np.abs(basis @ coef - col).max() < 1e-10
