import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pahmm.core import (
    ConfigError,
    ModelConfig,
    PatientSeries,
    SeriesError,
    build_design_matrix,
    compute_segment_starts,
    hour_dummy_row,
    quarter_grid,
    read_series_csv,
    validate_series,
    write_series_csv,
)


def _series(T=8, mask=None, start="2024-03-01T00:00"):
    ts = quarter_grid(start, T)
    y = np.column_stack([np.arange(T) + 900.0, np.arange(T) * 2.0])
    mask = np.zeros(T, bool) if mask is None else np.asarray(mask, bool)
    y[mask] = np.nan
    return PatientSeries(ts, y, mask)


class TestDesignMatrix:
    def test_baseline_row_is_zero(self):
        ts = np.array(["2024-01-01T05:15"], dtype="datetime64[m]")
        X = build_design_matrix(ts, baseline_hour=5).X
        assert X.shape == (1, 23)
        assert not X.any()

    @pytest.mark.parametrize("h", [0, 3, 12, 23])
    def test_other_hours_one_hot(self, h):
        base = 7
        ts = np.array([f"2024-01-01T{h:02d}:45"], dtype="datetime64[m]")
        row = build_design_matrix(ts, base).X[0]
        assert row.sum() == 1
        col = h if h < base else h - 1
        assert row[col] == 1

    def test_full_day_counts(self):
        # 96 slots: each non-baseline hour owns four rows
        ts = quarter_grid("2024-01-01T00:00", 96)
        X = build_design_matrix(ts, 10).X
        assert X.shape == (96, 23)
        assert set(np.unique(X.sum(axis=1))) <= {0.0, 1.0}
        np.testing.assert_array_equal(X.sum(axis=0), np.full(23, 4.0))
        assert (X.sum(axis=1) == 0).sum() == 4

    @given(st.integers(0, 23), st.integers(0, 23))
    def test_dummy_row_property(self, hour, base):
        row = hour_dummy_row(hour, base)
        if hour == base:
            assert not row.any()
        else:
            assert row.sum() == 1 and set(np.unique(row)) == {0.0, 1.0}

    def test_invalid_baseline(self):
        with pytest.raises(ConfigError):
            build_design_matrix(quarter_grid("2024-01-01", 4), 24)


class TestValidate:
    def test_well_formed_unchanged(self):
        s = _series(mask=[0, 1, 0, 0, 0, 0, 1, 0])
        assert validate_series(s) is s

    def test_length_mismatch(self):
        ts = quarter_grid("2024-01-01", 5)
        with pytest.raises(SeriesError):
            PatientSeries(ts, np.zeros((5, 2)), np.zeros(4, bool))

    def test_nan_in_observed_row(self):
        s = _series()
        y = np.array(s.y)
        y[3, 1] = np.nan
        bad = PatientSeries(s.timestamps, y, s.mask)
        out = validate_series(bad)
        assert isinstance(out, list) and len(out) == 1
        assert "3" in out[0]

    def test_empty_series_reported(self):
        s = PatientSeries(np.zeros(0, "datetime64[m]"), np.zeros((0, 2)), np.zeros(0, bool))
        assert isinstance(validate_series(s), list)


def test_segment_starts_after_gaps():
    ts = np.concatenate([quarter_grid("2024-01-01T00:00", 4),
                         quarter_grid("2024-01-01T03:00", 3)])
    np.testing.assert_array_equal(compute_segment_starts(ts), [0, 4])


def test_series_arrays_read_only():
    s = _series()
    with pytest.raises(ValueError):
        s.y[0, 0] = 1.0


class TestModelConfig:
    def test_rejects_k1(self):
        with pytest.raises(ConfigError, match="K"):
            ModelConfig(K=1)

    def test_digest_tracks_values(self):
        assert ModelConfig().digest() == ModelConfig().digest()
        assert ModelConfig().digest() != ModelConfig(aug_strength=1).digest()

    def test_niw_defaults_centred_on_data(self):
        y = np.array([[1.0, 10.0], [3.0, 30.0]])
        h = ModelConfig().niw(y)
        np.testing.assert_allclose(h.mu0, [2.0, 20.0])
        np.testing.assert_allclose(np.diag(h.lambda0), [1.0, 100.0])
        assert h.nu0 == 4.0


def test_csv_round_trip(tmp_path):
    s = _series(mask=[0, 0, 1, 0, 0, 1, 1, 0])
    path = tmp_path / "q.csv"
    write_series_csv(s, path)
    back = read_series_csv(path)
    np.testing.assert_array_equal(back.timestamps, s.timestamps)
    np.testing.assert_array_equal(back.mask, s.mask)
    np.testing.assert_allclose(back.y[~s.mask], s.y[~s.mask])
    assert np.isnan(back.y[s.mask]).all()
    lines = path.read_text().splitlines()
    assert lines[0] == "timestamp,hr,steps,missing"
    assert lines[3] == "2024-03-01T00:30:00,,,1"


@settings(max_examples=30, deadline=None)
@given(flags=st.lists(st.booleans(), min_size=1, max_size=40))
def test_csv_round_trip_property(flags, tmp_path_factory):
    s = _series(T=len(flags), mask=flags)
    path = tmp_path_factory.mktemp("csv") / "q.csv"
    write_series_csv(s, path)
    np.testing.assert_array_equal(read_series_csv(path).mask, s.mask)
