"""Benchmark harness: configuration, aggregation math, emitted series."""

from __future__ import annotations

import json
import statistics

import pytest

from mlabe.bench import (
    BenchConfig,
    ENCRYPT_COLUMNS,
    SIZE_COLUMNS,
    aggregate_encrypt,
    collect_encrypt_samples,
    run_encrypt_bench,
    run_size_bench,
    write_csv,
)
from mlabe.errors import ConfigError


class TestConfig:
    def test_defaults_match_experiment_design(self):
        config = BenchConfig()
        assert config.layer_counts == list(range(1, 16))
        assert config.attrs_per_layer == 3
        assert config.repetitions == 500
        assert config.payload_size == 163_840
        assert max(config.layer_counts) * config.attrs_per_layer == 45

    @pytest.mark.parametrize("kwargs", [
        {"repetitions": 0},
        {"layer_counts": []},
        {"layer_counts": [3, 2]},
        {"layer_counts": [0, 1]},
        {"attrs_per_layer": 0},
        {"payload_size": 0},
        {"do_profile": 0.0},
        {"warmup": -1},
    ])
    def test_invalid_configs(self, kwargs):
        with pytest.raises(ConfigError):
            BenchConfig(**kwargs)

    def test_from_json(self):
        config = BenchConfig.from_json('{"repetitions": 7, "layer_counts": [1, 2]}')
        assert config.repetitions == 7
        with pytest.raises(ConfigError):
            BenchConfig.from_json('{"nope": 1}')


class TestAggregation:
    SAMPLES = {
        3: {"do_only": [0.010, 0.012], "engine_only": [0.020, 0.020],
            "combined_do": [0.010, 0.010], "combined_engine": [0.000, 0.000]},
        6: {"do_only": [0.020, 0.022], "engine_only": [0.030, 0.030],
            "combined_do": [0.010, 0.010], "combined_engine": [0.015, 0.017]},
    }

    def test_row_shape_and_order(self):
        rows = aggregate_encrypt(self.SAMPLES)
        assert [r["total_attributes"] for r in rows] == [3, 3, 3, 6, 6, 6]
        assert [r["mode"] for r in rows][:3] == ["do_only", "engine_only", "combined"]

    def test_means_without_profiles(self):
        rows = {(r["total_attributes"], r["mode"]): r
                for r in aggregate_encrypt(self.SAMPLES)}
        assert rows[(3, "do_only")]["mean_ms"] == pytest.approx(11.0)
        assert rows[(6, "combined")]["mean_ms"] == pytest.approx(26.0)
        assert rows[(6, "combined")]["do_mean_ms"] == pytest.approx(10.0)
        assert rows[(6, "combined")]["engine_mean_ms"] == pytest.approx(16.0)

    def test_profiles_scale_each_side(self):
        rows = {(r["total_attributes"], r["mode"]): r
                for r in aggregate_encrypt(self.SAMPLES, do_profile=5.0,
                                           engine_profile=2.0)}
        assert rows[(3, "do_only")]["mean_ms"] == pytest.approx(55.0)
        assert rows[(3, "engine_only")]["mean_ms"] == pytest.approx(40.0)
        assert rows[(6, "combined")]["mean_ms"] == pytest.approx(50 + 32)
        assert rows[(6, "combined")]["do_mean_ms"] == pytest.approx(50.0)
        assert rows[(6, "combined")]["engine_mean_ms"] == pytest.approx(32.0)

    def test_single_repetition_has_zero_stddev(self):
        samples = {3: {k: v[:1] for k, v in self.SAMPLES[3].items()}}
        rows = aggregate_encrypt(samples)
        assert all(r["stddev_ms"] == 0.0 for r in rows)


class TestEncryptBench:
    def test_small_run_structure(self):
        config = BenchConfig(layer_counts=[1, 2, 3], repetitions=5, warmup=1)
        meta, rows = run_encrypt_bench(config)
        assert meta["bench"] == "encrypt"
        assert len(rows) == 9
        assert sorted({r["total_attributes"] for r in rows}) == [3, 6, 9]
        combined = [r for r in rows if r["mode"] == "combined"]
        # the producer's share stays the first-layer cost; the engine share
        # appears as soon as there is a second layer
        assert combined[0]["engine_mean_ms"] == 0.0
        assert combined[1]["engine_mean_ms"] > 0.0

    def test_sample_counts_respect_warmup(self):
        config = BenchConfig(layer_counts=[1], repetitions=4, warmup=2)
        samples = collect_encrypt_samples(config)
        assert all(len(v) == 4 for v in samples[3].values())

    def test_structure_deterministic_across_runs(self):
        config = BenchConfig(layer_counts=[1, 2], repetitions=2, warmup=0)
        _, rows_a = run_encrypt_bench(config)
        _, rows_b = run_encrypt_bench(config)
        key = lambda rows: [(r["total_attributes"], r["mode"]) for r in rows]
        assert key(rows_a) == key(rows_b)


class TestSizeBench:
    def test_series_shapes(self):
        config = BenchConfig(layer_counts=list(range(1, 16)), payload_size=163_840)
        meta, rows = run_size_bench(config)
        assert meta["bench"] == "size"
        assert [r["n_layers_total"] for r in rows] == list(range(1, 16))
        # payload cipher: body + tag, constant across layer counts
        assert {r["ct_aes_bytes"] for r in rows} == {163_840 + 16}
        sizes = [r["ct_abe_bytes"] for r in rows]
        assert sizes == sorted(sizes)
        assert sizes[-1] < 163_856

    def test_affine_growth(self):
        config = BenchConfig(layer_counts=list(range(1, 16)), payload_size=4096)
        _, rows = run_size_bench(config)
        xs = [r["n_layers_total"] for r in rows]
        ys = [r["ct_abe_bytes"] for r in rows]
        fit = statistics.linear_regression(xs, ys)
        residuals = [y - (fit.slope * x + fit.intercept) for x, y in zip(xs, ys)]
        assert max(abs(r) for r in residuals) < 64


class TestCsv:
    def test_metadata_line_and_columns(self, tmp_path):
        config = BenchConfig(layer_counts=[1], repetitions=1, warmup=0)
        meta, rows = run_encrypt_bench(config)
        text = write_csv(meta, rows, ENCRYPT_COLUMNS, tmp_path / "x.csv")
        lines = text.splitlines()
        assert json.loads(lines[0][2:])["bench"] == "encrypt"
        assert lines[1] == ",".join(ENCRYPT_COLUMNS)
        assert (tmp_path / "x.csv").read_text() == text

    def test_size_columns(self):
        meta, rows = run_size_bench(BenchConfig(layer_counts=[1], payload_size=64))
        text = write_csv(meta, rows, SIZE_COLUMNS, None)
        assert text.splitlines()[1] == "n_layers_total,ct_abe_bytes,ct_aes_bytes"
