import numpy as np
import pytest

from mspllar.dataio import (
    SeriesBundle,
    atomic_write,
    fmt,
    ingest_csv,
    load_model_json,
    transform_covariate,
    write_model_json,
    write_series_csv,
)
from mspllar.errors import DataError


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestIngest:
    def test_three_row_file(self, tmp_path):
        path = write(tmp_path, "period,y,baa\n1990-01,3,0.5\n1990-02,0,0.6\n1990-03,12,0.7\n")
        bundle = ingest_csv(path)
        assert bundle.T == 3
        np.testing.assert_array_equal(bundle.y, [3, 0, 12])
        np.testing.assert_allclose(bundle.covariates["baa"], [0.5, 0.6, 0.7])
        assert bundle.time_index == ["1990-01", "1990-02", "1990-03"]

    def test_non_integer_count_names_row(self, tmp_path):
        path = write(tmp_path, "period,y\n1,1\n2,2.5\n")
        with pytest.raises(DataError, match="row 2.*2.5"):
            ingest_csv(path)

    def test_missing_value_names_row(self, tmp_path):
        path = write(tmp_path, "period,y,x\n1,1,0.5\n2,,0.6\n")
        with pytest.raises(DataError, match="row 2"):
            ingest_csv(path)

    def test_duplicate_period_rejected(self, tmp_path):
        path = write(tmp_path, "period,y\n1,1\n1,2\n")
        with pytest.raises(DataError, match="row 2"):
            ingest_csv(path)

    def test_out_of_order_period_rejected(self, tmp_path):
        path = write(tmp_path, "period,y\n2,1\n1,2\n")
        with pytest.raises(DataError, match="not after"):
            ingest_csv(path)

    def test_negative_count_rejected(self, tmp_path):
        path = write(tmp_path, "period,y\n1,-3\n")
        with pytest.raises(DataError, match="negative"):
            ingest_csv(path)

    def test_missing_required_column(self, tmp_path):
        path = write(tmp_path, "period,count\n1,1\n")
        with pytest.raises(DataError, match="missing required column"):
            ingest_csv(path)

    def test_unknown_covariate_selection(self, tmp_path):
        path = write(tmp_path, "period,y,x\n1,1,0.5\n")
        with pytest.raises(DataError, match="not in file"):
            ingest_csv(path, covariate_columns=["z"])

    def test_simulated_series_roundtrip(self, tmp_path):
        from mspllar import CASE1, simulate_ms_pllar

        sim = simulate_ms_pllar(CASE1, 100, seed=8)
        path = tmp_path / "sim.csv"
        write_series_csv(path, [str(t + 1) for t in range(100)], sim.y,
                         {"state": (sim.states + 1).astype(float)})
        bundle = ingest_csv(path)
        np.testing.assert_array_equal(bundle.y, sim.y)
        np.testing.assert_array_equal(bundle.covariates["state"], sim.states + 1)


class TestTransforms:
    def bundle(self, x, T=None):
        T = T or len(x)
        return SeriesBundle(
            time_index=[str(i + 1) for i in range(T)],
            y=np.arange(T, dtype=np.int64),
            covariates={"x": np.asarray(x, dtype=float),
                        "other": np.ones(T)},
        )

    def test_constant_column_diff_is_zero(self):
        out = transform_covariate(self.bundle(np.full(20, 7.0)), "x",
                                  "yearly_diff", 12)
        np.testing.assert_array_equal(out.covariates["x"], np.zeros(8))
        assert out.T == 8

    def test_growth_arithmetic(self):
        x = np.concatenate([np.full(12, 100.0), np.full(12, 110.0)])
        out = transform_covariate(self.bundle(x), "x", "yearly_growth", 12)
        np.testing.assert_allclose(out.covariates["x"], 0.10, atol=1e-15)

    def test_truncation_is_consistent(self):
        out = transform_covariate(self.bundle(np.arange(30.0)), "x",
                                  "yearly_diff", 12)
        assert out.T == 18
        assert len(out.time_index) == 18
        assert len(out.covariates["other"]) == 18
        np.testing.assert_array_equal(out.y, np.arange(12, 30))

    def test_zero_denominator_rejected(self):
        x = np.concatenate([[0.0], np.ones(19)])
        with pytest.raises(DataError, match="zero denominator"):
            transform_covariate(self.bundle(x), "x", "yearly_growth", 12)

    def test_period_too_long_rejected(self):
        with pytest.raises(DataError, match="period"):
            transform_covariate(self.bundle(np.ones(10)), "x", "yearly_diff", 10)

    def test_unknown_kind_rejected(self):
        with pytest.raises(DataError, match="kind"):
            transform_covariate(self.bundle(np.ones(20)), "x", "monthly", 2)


class TestNumericRoundTrip:
    def test_fmt_roundtrips_doubles(self):
        rng = np.random.default_rng(14)
        for _ in range(200):
            x = float(rng.normal() * 10.0 ** rng.integers(-8, 8))
            assert float(fmt(x)) == x

    def test_atomic_write_leaves_no_partial_file(self, tmp_path):
        target = tmp_path / "out.csv"
        with pytest.raises(RuntimeError):
            with atomic_write(target) as handle:
                handle.write("partial")
                raise RuntimeError("boom")
        assert not target.exists()
        assert list(tmp_path.iterdir()) == []


class TestModelJson:
    def test_roundtrip(self, tmp_path):
        import warnings

        from mspllar import CASE2, fit, simulate_ms_pllar

        sim = simulate_ms_pllar(CASE2, 200, seed=9)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = fit(sim.y, m=2, init=CASE2, compute_se=False)
        path = tmp_path / "model.json"
        write_model_json(path, result, [], 200)
        params, meta = load_model_json(path)
        np.testing.assert_array_equal(params.d, result.params.d)
        np.testing.assert_array_equal(params.gamma, result.params.gamma)
        assert meta["qll"] == result.qll
        assert meta["n_params"] == 8

    def test_invalid_model_file(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text('{"m": 2, "r": 0, "d": [1.0]}')
        with pytest.raises(DataError, match="invalid model file"):
            load_model_json(path)
