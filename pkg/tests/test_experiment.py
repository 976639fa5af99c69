import math

import pytest

from memqkd import experiment as ex, report
from memqkd.core import Mode, SourceKind, SystemConfig, validate_config
from memqkd.engine import TallySummary


def cfg_with(**changes):
    return validate_config(SystemConfig().evolve(**changes))


def test_aggregate_by_hand():
    cfg = cfg_with(**{"protocol.mode": "async"})
    tally = TallySummary(n_trials=1000, n_loaded=40, n_success=10, n_error=1, sum_m=30, sum_m_sq=110,
                         sum_m_loaded=100, sum_m_sq_loaded=300)
    est = ex.aggregate(tally, cfg)
    assert est.q_gain == 0.01
    assert est.q_se == pytest.approx(math.sqrt(0.01 * 0.99 / 1000))
    assert est.qber == 0.1
    assert est.mean_m == 3.0 and est.std_m == pytest.approx(math.sqrt(11 - 9))
    assert est.mean_clock_time == pytest.approx(3 * cfg.t_unit)
    h = -0.1 * math.log2(0.1) - 0.9 * math.log2(0.9)
    assert est.r_total == pytest.approx((2.998e8 / 1e4) / 3 * 0.01 * (1 - h))
    loaded = ex.aggregate(tally, cfg.evolve(**{"simulation.m_average": "loaded"}))
    assert loaded.mean_m == 2.5


def test_aggregate_without_successes(defaults):
    est = ex.aggregate(TallySummary(n_trials=10), defaults)
    assert est.r_total == 0.0 and est.qber is None and "no_successes" in est.flags
    with pytest.raises(ValueError):
        ex.aggregate(TallySummary(), defaults)


def test_find_crossover():
    xs = [1.0, 2.0, 3.0, 4.0]
    a = (xs, [1.0, 1.0, 1.0, 1.0])
    b = (xs, [8.0, 4.0, 0.5, 0.25])
    assert ex.find_crossover(a, b) == pytest.approx(2 + 2 / 3)    # log2 gap goes 2 -> -1
    assert ex.find_crossover(b, a) == 1.0
    assert ex.find_crossover((xs, [0, 0, 0, 0]), (xs, [0, 0, 0, 0])) is None
    with pytest.raises(ValueError):
        ex.find_crossover(a, ([1.0, 2.0, 3.0, 5.0], b[1]))
    with pytest.raises(ValueError):
        ex.find_crossover(([1.0], [1.0]), ([1.0], [1.0]))


def test_qber_threshold_distance():
    xs = [10.0, 20.0, 30.0]
    assert ex.qber_threshold_distance((xs, [0.01, 0.1, 0.12])) == pytest.approx(25.0)
    assert ex.qber_threshold_distance((xs, [0.01, 0.02, 0.03])) == 30.0
    assert ex.qber_threshold_distance((xs, [0.2, 0.3, 0.4])) is None


def test_sweep_rows_and_order(defaults):
    grid = ex.SweepGrid((5.0, 10.0), (0.5,), (0.25,), (0.05, 0.7), (Mode.SYNC, Mode.ASYNC),
                        (SourceKind.SPS, SourceKind.WCP))
    rows = ex.sweep(grid, defaults, trials=0)
    bb84 = [r for r in rows if r.model == "bb84"]
    assert len(bb84) == 2 * 3                                  # per distance and source, once
    assert all(r.eta_mem is None and "memory_not_applicable" in r.flags for r in bb84)
    assert len([r for r in rows if r.model == "analytic"]) == 2 * 2 * 3
    assert len([r for r in rows if r.model == "guide"]) == 2 * 3
    assert [r.distance_km for r in rows] == sorted(r.distance_km for r in rows)
    assert all(r.mu is None for r in rows if r.source == "sps")


def test_sweep_isolates_failures(defaults):
    grid = ex.SweepGrid((-1.0, 5.0), (0.5,), (0.25,), (0.7,), (Mode.SYNC,), (SourceKind.SPS,))
    rows = ex.sweep(grid, defaults, trials=0, include_bb84=False)
    assert rows[0].flags.startswith("error:")
    assert rows[1].model == "analytic" and rows[1].q_gain > 0


def test_sweep_grid_rejects_empty():
    with pytest.raises(ValueError):
        ex.SweepGrid((), (0.5,), (0.25,), (0.7,), (Mode.SYNC,), (SourceKind.SPS,))


def test_mc_rows_and_flags(defaults):
    rows = ex.model_rows(defaults, trials=20_000)
    assert [r.model for r in rows] == ["mc", "analytic"]
    assert "low_statistics" in rows[0].flags
    assert rows[0].n_trials == 20_000


def test_csv_roundtrip_and_bytes(defaults):
    grid = ex.SweepGrid((2.0, 4.0), (0.9,), (0.25,), (0.7,), (Mode.SYNC, Mode.ASYNC), (SourceKind.WCP,))
    rows = ex.sweep(grid, defaults, trials=30_000)
    header = report.header_lines("0", defaults.digest(), 0)
    text = report.rows_to_csv(rows, header)
    assert report.rows_from_csv(text) == rows
    again = report.rows_to_csv(ex.sweep(grid, defaults, trials=30_000, workers=2), header)
    assert again == text
    assert text.startswith(f"# memqkd 0\n# config_sha256 {defaults.digest()}\n# seed 0\n")


def test_json_has_no_nan(defaults):
    grid = ex.SweepGrid((5.0,), (0.0,), (0.25,), (0.7,), (Mode.SYNC,), (SourceKind.SPS,))
    text = report.rows_to_json(ex.sweep(grid, defaults, trials=0), {"seed": 0})
    assert "NaN" not in text


def test_write_atomic(tmp_path):
    target = tmp_path / "sub" / "t.csv"
    report.write_atomic(target, "a\n")
    assert target.read_text() == "a\n"
    assert not list(tmp_path.glob("sub/*.tmp"))


def test_figure_curves(defaults):
    rows = ex.run_figure("mean-gc", defaults, trials=0)
    cs = ex.curves(rows, ex.FIGURES["mean-gc"].quantities)
    assert any(c["quantity"] == "std_clock_ms" for c in cs.values())
    with pytest.raises(KeyError):
        ex.run_figure("fig-x", defaults)
