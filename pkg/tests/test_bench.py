from __future__ import annotations

import itertools

import pytest
from threadpoolctl import threadpool_info

from cpt.bench import (
    THREAD_VARS,
    bench_configs,
    check_single_threaded,
    read_reports,
    reference_index,
    render_chart,
    single_threaded,
    throughput_bench,
    write_reports,
)
from cpt.exceptions import BenchError, ConfigError
from cpt.models.config import BenchWorkload, GenerationConfig, model_preset
from cpt.models.reports import ThroughputReport

WORKLOAD = BenchWorkload(src_len=4, new_tokens=3, repetitions=3, warmup=1, seed=2)
GEN = GenerationConfig(beam_size=2, batch_size=2)


def _ticking(step):
    clock = itertools.count()
    return lambda: next(clock) * step


@pytest.fixture
def single_thread(monkeypatch):
    for var in THREAD_VARS:
        monkeypatch.delenv(var, raising=False)


class TestSetup:
    def test_thread_variables(self):
        check_single_threaded({})
        check_single_threaded({"OMP_NUM_THREADS": "1"})
        with pytest.raises(BenchError):
            check_single_threaded({"MKL_NUM_THREADS": "4"})
        with pytest.raises(BenchError):
            check_single_threaded({"OPENBLAS_NUM_THREADS": "many"})

    def test_thread_pools_capped_inside_block(self, single_thread):
        with single_threaded():
            assert all(pool["num_threads"] == 1 for pool in threadpool_info())

    def test_cap_refuses_threaded_environment(self, monkeypatch):
        monkeypatch.setenv("OPENBLAS_NUM_THREADS", "4")
        with pytest.raises(BenchError):
            with single_threaded():
                pass

    def test_configs_share_total_depth(self, tiny_config):
        models = bench_configs([(2, 1), (1, 2)], tiny_config)
        assert [(m.layers_enc, m.layers_gdec, m.layers_udec) for m in models] == [(2, 1, 1), (1, 2, 2)]
        assert all(m.hidden == tiny_config.hidden for m in models)
        with pytest.raises(ConfigError):
            bench_configs([(2, 1), (2, 2)], tiny_config)
        with pytest.raises(ConfigError):
            bench_configs([], tiny_config)

    def test_reference_is_balanced_config(self):
        assert reference_index([(10, 2), (6, 6), (2, 10)]) == 1
        assert reference_index([(10, 2), (8, 4)]) == 1


class TestThroughput:
    def test_speedups_relative_to_reference(self, single_thread, tiny_config):
        reports = throughput_bench([(2, 1), (1, 2)], GEN, WORKLOAD, tiny_config, label="w/", timer=_ticking(1.0), resolution=1e-9)
        assert [r.label for r in reports] == ["w/2+1", "w/1+2"]
        for r in reports:
            assert r.tokens == WORKLOAD.new_tokens * GEN.batch_size
            assert r.samples == [1.0, 1.0, 1.0]
            assert r.speedup == pytest.approx(1.0)
        assert reports[1].tok_per_s == pytest.approx(6.0)

    def test_repetition_near_clock_resolution(self, single_thread, tiny_config):
        with pytest.raises(BenchError, match="clock resolution"):
            throughput_bench([(2, 1)], GEN, WORKLOAD, tiny_config, timer=_ticking(1e-9), resolution=1e-9)

    def test_workload_longer_than_positions(self, single_thread, tiny_config):
        with pytest.raises(ConfigError):
            throughput_bench([(2, 1)], GEN, BenchWorkload(src_len=65, new_tokens=3), tiny_config)

    def test_threaded_environment_refused(self, monkeypatch, tiny_config):
        monkeypatch.setenv("OMP_NUM_THREADS", "8")
        with pytest.raises(BenchError):
            throughput_bench([(2, 1)], GEN, WORKLOAD, tiny_config)


    def test_timed_region_runs_single_threaded(self, single_thread, tiny_config):
        widest = []
        clock = _ticking(1.0)

        def timer():
            widest.append(max((pool["num_threads"] for pool in threadpool_info()), default=1))
            return clock()

        throughput_bench([(2, 1)], GEN, WORKLOAD, tiny_config, timer=timer, resolution=1e-9)
        assert widest and max(widest) == 1


class TestReports:
    def _reports(self):
        return [
            ThroughputReport.measured("short/6+6", 6, 6, 4, 8, 256, 2.0, [2.0, 2.1, 1.9]),
            ThroughputReport.measured("short/10+2", 10, 2, 4, 8, 256, 0.8, [0.8, 0.8, 0.9], speedup=2.5),
            ThroughputReport.measured("long/6+6", 6, 6, 4, 8, 512, 4.0, [4.0, 4.0, 4.2]),
        ]

    def test_csv_round_trip(self, tmp_path):
        reports = self._reports()
        write_reports(tmp_path / "bench.csv", reports)
        assert read_reports(tmp_path / "bench.csv") == reports

    def test_rate_must_match(self):
        with pytest.raises(ValueError):
            ThroughputReport(
                label="x", enc_layers=1, dec_layers=1, beam=1, batch=1, tokens=10, seconds=2.0, tok_per_s=7.0, speedup=1.0
            )

    def test_chart(self, tmp_path):
        render_chart(self._reports(), tmp_path / "bench.svg")
        assert "<svg" in (tmp_path / "bench.svg").read_text()


@pytest.mark.slow
class TestSpeedup:
    BASE = model_preset("tiny", hidden=64, heads=4, max_positions=128)
    GEN = GenerationConfig(beam_size=4, batch_size=8)
    WORKLOAD = BenchWorkload(src_len=32, new_tokens=64, repetitions=5, warmup=1)

    def test_shallow_decoder_is_faster(self, single_thread):
        reports = throughput_bench([(6, 6), (10, 2)], self.GEN, self.WORKLOAD, self.BASE)
        assert reports[1].speedup >= 1.2

    def test_decode_time_falls_with_decoder_depth(self, single_thread):
        reports = throughput_bench([(6, 6), (8, 4), (10, 2), (11, 1)], self.GEN, self.WORKLOAD, self.BASE)
        seconds = [r.seconds for r in reports]
        assert all(a >= b for a, b in zip(seconds, seconds[1:]))

    def test_identical_configs(self, single_thread):
        reports = throughput_bench([(6, 6), (6, 6)], self.GEN, self.WORKLOAD, self.BASE)
        assert reports[1].speedup == pytest.approx(1.0, abs=0.05)
