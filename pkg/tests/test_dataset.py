import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netqos import dataset, rng
from netqos.dataset import (DETERIORATION, IMPROVEMENT, DatasetConfig, ExampleSet, build_examples, build_tensor,
                            label_rule, make_label)
from netqos.errors import EmptyInput, InsufficientHistory, NoQosSamples, TooFewExamples, UnknownCell
from netqos.telemetry import KPI_NAMES, CellInfo, KpiTable, QosTable, Topology, Trace

K = len(KPI_NAMES)


def kpi_value(cell, step, k):
    return (cell * 100 + step * 10 + k) / 1000.0


def hand_trace(n_cells=2, steps=6, delays=None):
    topo = Topology([CellInfo(i, 0.5 * i, 0.0, "work", 100.0) for i in range(n_cells)])
    cells = np.repeat(np.arange(n_cells), steps)
    st_ = np.tile(np.arange(steps), n_cells)
    vals = np.array([[kpi_value(c, s, k) for k in range(K)] for c, s in zip(cells, st_)])
    if delays is None:
        delays = np.arange(n_cells * steps, dtype=float) + 10.0
    qos = QosTable(st_ * 15, cells, cells * 10, np.asarray(delays, float), np.ones(len(cells)),
                   np.zeros(len(cells)))
    return Trace(topo, KpiTable(st_ * 15, cells, vals), qos, step_minutes=15)


def test_tensor_shape():
    tr = hand_trace(n_cells=6, steps=8)
    t = build_tensor(tr, 0, 7 * 15, DatasetConfig())
    assert t.values.shape == (8, 6, 5)


def test_single_cell_neighbors_are_zero():
    tr = hand_trace(n_cells=1, steps=6)
    t = build_tensor(tr, 0, 75, DatasetConfig())
    assert np.all(t.values[:, :, 1:] == 0)
    assert t.mask.tolist() == [True, False, False, False, False]


def test_tensor_entries_are_source_frames():
    tr = hand_trace()
    cfg = DatasetConfig(neighbors=1)
    t = build_tensor(tr, 1, 75, cfg).values
    # (k, w, c) holds KPI k of the c-th slot cell at step 5 - (W-1-w)
    for k, w, c in [(0, 0, 0), (7, 5, 0), (3, 2, 0), (0, 0, 1), (5, 4, 1), (7, 5, 1)]:
        cell = 1 if c == 0 else 0
        assert t[k, w, c] == kpi_value(cell, w, k)


def test_tensor_errors():
    tr = hand_trace()
    with pytest.raises(InsufficientHistory):
        build_tensor(tr, 0, 60, DatasetConfig())
    with pytest.raises(UnknownCell):
        build_tensor(tr, 5, 75, DatasetConfig())


@pytest.mark.parametrize("before,after,label", [(50, 80, DETERIORATION), (70, 70, IMPROVEMENT),
                                                (100, 109, IMPROVEMENT), (100, 110.5, DETERIORATION)])
def test_label_rule(before, after, label):
    assert label_rule(before, after, 0.10) == label


def test_make_label_and_missing_samples():
    tr = hand_trace(n_cells=1, steps=6, delays=[50, 50, 50, 80, 80, 80])
    cfg = DatasetConfig(horizon=2)
    assert make_label(tr, 0, 45, cfg) == DETERIORATION
    with pytest.raises(NoQosSamples):
        make_label(tr, 0, 15, cfg)


def test_labels_are_scale_free(small_trace):
    trace = small_trace[0]
    q = trace.qos
    scaled = Trace(trace.topology, trace.kpi,
                   QosTable(q.timestamp, q.cell_id, q.user_id, q.delay * 3.7, q.jitter, q.loss_rate),
                   trace.tdr, trace.mr, trace.start_dow, trace.step_minutes)
    a, b = build_examples(trace, DatasetConfig()), build_examples(scaled, DatasetConfig())
    assert np.array_equal(a.y, b.y)


def test_row_order_does_not_matter(small_trace):
    trace = small_trace[0]
    pk = rng.permutation(3, len(trace.kpi))
    pq = rng.permutation(4, len(trace.qos))
    shuffled = Trace(trace.topology, trace.kpi.take(pk), trace.qos.take(pq), trace.tdr, trace.mr,
                     trace.start_dow, trace.step_minutes)
    a, b = build_examples(trace, DatasetConfig()), build_examples(shuffled, DatasetConfig())
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)


def fake_examples(n):
    X = np.random.default_rng(n).normal(size=(n, 2, 3, 2)).astype(np.float32)
    return ExampleSet(np.arange(n), np.arange(n) * 15, X, (np.arange(n) % 2).astype(np.uint8), np.ones(2, bool))


@pytest.mark.parametrize("n,sizes", [(100, (70, 20, 10)), (10, (7, 2, 1))])
def test_split_sizes(n, sizes):
    ds = dataset.split(fake_examples(n), DatasetConfig())
    assert (len(ds.train), len(ds.test), len(ds.validation)) == sizes


@given(st.integers(10, 400), st.integers(0, 2**32))
@settings(max_examples=40, deadline=None)
def test_split_is_a_seeded_partition(n, seed):
    cfg = DatasetConfig(split_seed=seed)
    a, b = dataset.split(fake_examples(n), cfg), dataset.split(fake_examples(n), cfg)
    ids = [set(p.cell_id.tolist()) for p in (a.train, a.test, a.validation)]
    assert sum(len(s) for s in ids) == n and set().union(*ids) == set(range(n))
    for name in ("train", "test", "validation"):
        assert np.array_equal(a.part(name).cell_id, b.part(name).cell_id)


def test_split_needs_ten():
    with pytest.raises(TooFewExamples):
        dataset.split(fake_examples(9), DatasetConfig())


def test_standardize_fit_and_apply():
    ex = fake_examples(50)
    ex.X[:, 1] = 3.0
    z, stats = dataset.standardize(ex)
    assert stats.flagged == (False, True)
    assert abs(z.X[:, 0].mean()) < 1e-9 and abs(z.X[:, 0].std() - 1.0) < 1e-9
    assert np.all(z.X[:, 1] == 3.0)
    assert np.array_equal(z.y, ex.y)
    other = fake_examples(20)
    _, again = dataset.standardize(other, stats)
    assert again == stats


def test_standardize_needs_two():
    with pytest.raises(EmptyInput):
        dataset.fit_stats(fake_examples(10).take(np.arange(1)))


def test_stats_come_from_train_only(small_split):
    assert small_split.stats == dataset.fit_stats(small_split.train)


def test_benchmark_dataset_counts(bench_trace):
    ds = dataset.build_dataset(bench_trace[0], DatasetConfig())
    n = len(ds.train) + len(ds.test) + len(ds.validation)
    assert n <= 77 * 472
    assert 0.2 <= ds.train.class_balance <= 0.8


def test_empty_trace_is_too_few():
    with pytest.raises(TooFewExamples):
        dataset.build_dataset(Trace(Topology([])), DatasetConfig())


def test_dataset_round_trip(tmp_path, small_split):
    dataset.save_dataset(small_split, tmp_path)
    back = dataset.load_dataset(tmp_path)
    assert back.config == small_split.config and back.stats == small_split.stats
    for name in ("train", "test", "validation"):
        a, b = small_split.part(name), back.part(name)
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y) and np.array_equal(a.t, b.t)


def test_tdr_channels_extend_tensor(small_trace):
    ex = build_examples(small_trace[0], DatasetConfig(tdr_channels=True))
    assert ex.X.shape[1:] == (K + 2, 6, 5)
