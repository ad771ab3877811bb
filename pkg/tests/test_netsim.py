from dataclasses import replace

import numpy as np
import pytest

from netqos import dataset, netsim, rng
from netqos.analysis import pearson
from netqos.errors import ConfigInvalid
from netqos.telemetry import KPI_INDEX

MONDAY, TUESDAY, SATURDAY = 0, 1, 5
MINUTES = np.arange(1440)


def day_mean(region, dow):
    return float(np.mean(netsim.region_load_profile(region, np.full(1440, dow), MINUTES)))


def test_work_weekend_is_near_idle():
    assert day_mean("work", SATURDAY) <= 0.2 * day_mean("work", TUESDAY)


def test_leisure_weekend_is_more_than_double():
    assert day_mean("leisure", SATURDAY) >= 2.0 * day_mean("leisure", TUESDAY)


def test_residential_evening_peak():
    assert netsim.region_load_profile("residential", MONDAY, 180) < netsim.region_load_profile("residential", MONDAY, 1260)


def test_work_peaks_in_office_hours():
    prof = netsim.region_load_profile("work", TUESDAY, MINUTES)
    assert 540 <= int(np.argmax(prof)) <= 1080


@pytest.mark.parametrize("rho,expected", [(0.0, 20.0), (0.5, 40.0), (1.2, 2000.0)])
def test_cell_delay_examples(rho, expected):
    assert netsim.cell_delay(rho, netsim.SimConfig()) == pytest.approx(expected, rel=1e-12)


def test_cell_delay_is_increasing_then_flat():
    rho = np.linspace(0, 1.5, 301)
    d = netsim.cell_delay(rho, netsim.SimConfig())
    below = rho <= 0.99
    assert np.all(np.diff(d[below]) > 0)
    assert np.all(d[~below] == d[~below][0])


def test_generation_is_deterministic(small_sim, small_trace):
    trace, gt = netsim.generate_trace(small_sim)
    assert trace.equals(small_trace[0])
    assert gt.equals(small_trace[1])


def test_thread_count_does_not_change_output(small_sim, small_trace):
    trace, gt = netsim.generate_trace(small_sim, threads=3)
    assert trace.equals(small_trace[0]) and gt.equals(small_trace[1])


def test_seed_changes_output(small_sim, small_trace):
    trace, _ = netsim.generate_trace(replace(small_sim, seed=43))
    assert not trace.kpi.equals(small_trace[0].kpi)


def test_event_raises_utilization():
    base = netsim.SimConfig(n_cells=6, days=2, seed=3)
    ev = netsim.Event((2,), 1440 + 600, 1440 + 840, 3.0)
    _, gt = netsim.generate_trace(replace(base, events=(ev,)))
    row = int(np.searchsorted(gt.cell_ids, 2))
    now = (gt.timestamps >= ev.start_ts) & (gt.timestamps < ev.end_ts)
    before = (gt.timestamps >= ev.start_ts - 1440) & (gt.timestamps < ev.end_ts - 1440)
    assert gt.utilization[row, now].mean() > gt.utilization[row, before].mean()


def test_benchmark_frame_count(bench_trace):
    trace, gt = bench_trace
    assert len(trace.topology) == 77
    assert len(trace.kpi) == 77 * 480
    assert gt.utilization.shape == (77, 480)


def test_bad_configs():
    with pytest.raises(ConfigInvalid):
        netsim.SimConfig(step_minutes=7)
    with pytest.raises(ConfigInvalid):
        netsim.SimConfig(utilization_cap=1.0)
    with pytest.raises(ConfigInvalid):
        netsim.Event((1,), 100, 50, 2.0)
    with pytest.raises(ConfigInvalid):
        netsim.generate_trace(netsim.SimConfig(n_cells=3, days=1, events=(netsim.Event((9,), 0, 60, 2.0),)))


def test_sim_config_round_trip(tmp_path):
    cfg = netsim.benchmark_config(congested=True)
    p = tmp_path / "sim.cfg"
    p.write_text(netsim.format_sim_config(cfg))
    assert netsim.load_sim_config(p) == cfg


def test_ground_truth_csv_round_trip(tmp_path, small_trace):
    _, gt = small_trace
    netsim.write_ground_truth(gt, tmp_path / "gt.csv")
    assert netsim.read_ground_truth(tmp_path / "gt.csv").equals(gt)


@pytest.fixture(scope="module")
def quiet():
    cfg = netsim.SimConfig(n_cells=9, days=2).noise_free()
    return cfg, netsim.generate_trace(cfg)


def test_noise_free_monotonicity(quiet):
    cfg, (trace, gt) = quiet
    k = trace.kpi
    rising = ["prb_util_ul_rate", "prb_util_dl_rate", "pdcch_util_rate", "prach_util_rate"]
    falling = ["rrc_attconnestab_ue_rate", "ho_succoutintraenb_rate", "erab_estab_succ_rate"]
    for r, cid in enumerate(gt.cell_ids):
        order = np.argsort(gt.offered_load[r], kind="stable")
        util = gt.utilization[r, order]
        assert np.all(np.diff(util) >= 0)
        assert np.all(np.diff(netsim.cell_delay(util, cfg)) >= 0)
        vals = k.values[k.cell_id == cid][order]
        for name in rising:
            assert np.all(np.diff(vals[:, KPI_INDEX[name]]) >= 0), name
        for name in falling:
            assert np.all(np.diff(vals[:, KPI_INDEX[name]]) <= 0), name


def test_noise_free_dl_util_tracks_offered_load(quiet):
    cfg, (trace, gt) = quiet
    k = trace.kpi
    for r, cid in enumerate(gt.cell_ids):
        dl = k.values[k.cell_id == cid][:, KPI_INDEX["prb_util_dl_rate"]]
        below = gt.utilization[r] < cfg.utilization_cap
        assert abs(pearson(dl[below], gt.offered_load[r, below])) == pytest.approx(1.0, abs=1e-6)


def test_qos_samples_match_connections(small_sim, small_trace):
    trace, _ = small_trace
    q, t = trace.qos, trace.tdr
    step = small_sim.step_minutes
    q_keys, q_counts = np.unique(np.stack([q.cell_id, q.timestamp]), axis=1, return_counts=True)
    t_keys, t_counts = np.unique(np.stack([t.cell_id, t.start_ts // step * step]), axis=1, return_counts=True)
    assert np.array_equal(q_keys, t_keys)
    assert np.array_equal(q_counts, t_counts)
    assert np.all(t.end_ts > t.start_ts)


def test_oracle_is_perfect_without_noise(quiet):
    cfg, (trace, gt) = quiet
    dcfg = dataset.DatasetConfig()
    ex = dataset.build_examples(trace, dcfg)
    assert 0 < ex.class_balance < 1
    assert netsim.oracle_bayes_accuracy(gt, dcfg, ex, cfg) == 1.0


def test_oracle_on_shuffled_labels_is_chance(small_sim, small_trace):
    trace, gt = small_trace
    dcfg = dataset.DatasetConfig()
    ex = dataset.build_examples(trace, dcfg)
    perm = rng.permutation(1, len(ex))
    shuffled = dataset.ExampleSet(ex.cell_id, ex.t, ex.X, ex.y[perm], ex.mask)
    acc = netsim.oracle_bayes_accuracy(gt, dcfg, shuffled, small_sim)
    # scoring against all-ones labels gives the oracle's positive rate; chance is the agreement of
    # independent labelings with the observed marginals
    ones = dataset.ExampleSet(ex.cell_id, ex.t, ex.X, np.ones_like(ex.y), ex.mask)
    q = netsim.oracle_bayes_accuracy(gt, dcfg, ones, small_sim)
    b = ex.class_balance
    chance = q * b + (1 - q) * (1 - b)
    assert acc == pytest.approx(chance, abs=0.03)
    assert acc < netsim.oracle_bayes_accuracy(gt, dcfg, ex, small_sim)
    assert acc <= max(b, 1 - b) + 0.01
