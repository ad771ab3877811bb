import itertools
import re

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from netqos import analysis, netsim
from netqos.analysis import CorrMatrix, TrafficProfile, kmeans, kmeans_matrix, pearson
from netqos.errors import DegenerateSeries, EmptyTrace, KTooLarge, LengthMismatch, UnknownCell
from netqos.telemetry import KPI_INDEX, KPI_NAMES, CellInfo, KpiTable, Topology, Trace


def direct_pearson(x, y):
    """Scalar evaluation of cov / (sigma_x sigma_y) with population moments."""
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    vx = sum((a - mx) ** 2 for a in x) / n
    vy = sum((b - my) ** 2 for b in y) / n
    return cov / (vx ** 0.5 * vy ** 0.5)


@pytest.mark.parametrize("x,y,r", [([1, 2, 3], [1, 2, 3], 1.0), ([1, 2, 3], [3, 2, 1], -1.0),
                                   ([1, 2, 3, 4], [1, 3, 2, 4], 0.8)])
def test_pearson_examples(x, y, r):
    assert pearson(x, y) == pytest.approx(r, abs=1e-12)


def test_pearson_errors():
    with pytest.raises(LengthMismatch):
        pearson([1, 2, 3], [1, 2])
    with pytest.raises(LengthMismatch):
        pearson([1], [1])
    with pytest.raises(DegenerateSeries):
        pearson([1, 1, 1], [1, 2, 3])


series = arrays(np.float64, st.integers(3, 40), elements=st.floats(-1e3, 1e3, allow_nan=False))


@given(series, st.data())
@settings(max_examples=100, deadline=None)
def test_pearson_symmetric_and_affine(x, data):
    y = data.draw(arrays(np.float64, len(x), elements=st.floats(-1e3, 1e3, allow_nan=False)))
    a = data.draw(st.floats(0.1, 10.0))
    b = data.draw(st.floats(-100.0, 100.0))
    assume(np.std(x) > 1e-3 * (1 + np.abs(x).max()) and np.std(y) > 1e-3 * (1 + np.abs(y).max()))
    r = pearson(x, y)
    assert -1.0 <= r <= 1.0
    assert pearson(y, x) == pytest.approx(r, abs=1e-9)
    assert pearson(a * x + b, y) == pytest.approx(r, abs=1e-9)
    assert pearson(-a * x + b, y) == pytest.approx(-r, abs=1e-9)


def test_white_noise_is_uncorrelated():
    r = np.random.default_rng(3)
    assert abs(pearson(r.normal(size=480), r.normal(size=480))) < 0.2


def synthetic_trace(values):
    n = len(values)
    topo = Topology([CellInfo(0, 0.0, 0.0, "work", 1.0)])
    return Trace(topo, KpiTable(np.arange(n) * 15, np.zeros(n, np.int64), values), step_minutes=15)


def test_correlation_matrix_properties(small_trace):
    m = analysis.correlation_matrix(small_trace[0])
    assert m.labels == KPI_NAMES
    assert np.array_equal(m.entries, m.entries.T)
    assert np.all((m.entries >= 0) & (m.entries <= 1))
    assert np.all(np.diag(m.entries) == 1.0)


def test_noise_free_util_kpis_fully_correlated():
    trace, _ = netsim.generate_trace(netsim.SimConfig(n_cells=4, days=1).noise_free())
    m = analysis.correlation_matrix(trace)
    i, j = KPI_INDEX["prb_util_dl_rate"], KPI_INDEX["pdcch_util_rate"]
    assert m.entries[i, j] == pytest.approx(1.0, abs=1e-6)


def test_constant_kpi_is_flagged_and_white_noise_is_low():
    r = np.random.default_rng(0)
    v = r.uniform(0.1, 0.9, size=(480, len(KPI_NAMES)))
    v[:, 3] = 0.5
    m = analysis.correlation_matrix(synthetic_trace(v))
    assert m.flagged == (KPI_NAMES[3],)
    assert np.all(m.entries[3] == 0) and np.all(m.entries[:, 3] == 0)
    off = m.entries[~np.eye(len(KPI_NAMES), dtype=bool)]
    assert off.max() < 0.2


def test_correlation_matrix_matches_scalar_oracle(small_trace):
    trace = small_trace[0]
    m = analysis.correlation_matrix(trace, cell_scope=3)
    k = trace.kpi.values[trace.kpi.cell_id == 3]
    for u, v in [(0, 1), (1, 4), (2, 7), (5, 6)]:
        assert m.entries[u, v] == pytest.approx(abs(direct_pearson(k[:, u].tolist(), k[:, v].tolist())), abs=1e-12)


def test_correlation_matrix_errors(small_trace):
    with pytest.raises(UnknownCell):
        analysis.correlation_matrix(small_trace[0], cell_scope=999)
    with pytest.raises(EmptyTrace):
        analysis.correlation_matrix(synthetic_trace(np.zeros((1, len(KPI_NAMES)))))


def test_identity_heatmap_csv():
    m = CorrMatrix(("a", "b"), np.eye(2), ())
    assert analysis.heatmap_csv(m) == ",a,b\na,1.0,0.0\nb,0.0,1.0\n"


def test_heatmap_svg_deterministic_and_complete(tmp_path, small_trace):
    m = analysis.correlation_matrix(small_trace[0])
    analysis.export_heatmap(m, tmp_path / "a.svg")
    analysis.export_heatmap(m, tmp_path / "b.svg")
    text = (tmp_path / "a.svg").read_text()
    assert text == (tmp_path / "b.svg").read_text()
    assert len(re.findall(r'class="cell"', text)) == 64
    assert len(re.findall(r'class="label"', text)) == 16
    assert 'fill="rgb(0,0,0)"' in text  # the unit diagonal is black


def test_heatmap_rejects_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        analysis.export_heatmap(CorrMatrix(("a",), np.eye(1), ()), tmp_path / "x.png")


def test_traffic_profiles_shape(small_trace):
    profs = analysis.traffic_profiles(small_trace[0])
    assert len(profs) == 12
    assert all(p.values.shape == (48,) and np.all(p.values >= 0) for p in profs)


def profiles(X):
    return [TrafficProfile(i, np.asarray(row, float)) for i, row in enumerate(X)]


def test_kmeans_single_cluster_is_the_mean():
    X = np.random.default_rng(1).normal(size=(10, 4))
    cl = kmeans(profiles(X), 1, seed=5, zscore=False)
    assert np.allclose(cl.centroids[0], X.mean(axis=0))
    assert cl.inertia == pytest.approx(X.var(axis=0).sum() * len(X))


def test_kmeans_k_equals_n():
    X = np.random.default_rng(2).normal(size=(7, 3))
    cl = kmeans(profiles(X), 7, seed=5, zscore=False)
    assert cl.inertia == 0.0
    assert sorted(cl.assignments.tolist()) == list(range(7))


def test_kmeans_separates_blobs_like_brute_force():
    r = np.random.default_rng(4)
    X = np.vstack([r.normal(0, 0.1, size=(5, 3)), r.normal(10, 0.1, size=(6, 3))])
    cl = kmeans(profiles(X), 2, seed=9, zscore=False)
    best = None
    for mask in itertools.product([0, 1], repeat=len(X)):
        a = np.array(mask)
        if a.min() == a.max():
            continue
        cost = sum(((X[a == c] - X[a == c].mean(axis=0)) ** 2).sum() for c in (0, 1))
        if best is None or cost < best[0]:
            best = (cost, a)
    same = np.array_equal(cl.assignments, best[1]) or np.array_equal(cl.assignments, 1 - best[1])
    assert same
    assert cl.inertia == pytest.approx(best[0])


@given(st.integers(0, 10_000), st.integers(1, 6))
@settings(max_examples=30, deadline=None)
def test_kmeans_inertia_non_increasing_and_seeded(seed, k):
    X = np.random.default_rng(seed).normal(size=(15, 4))
    a1, c1, h1 = kmeans_matrix(X, k, seed)
    a2, c2, h2 = kmeans_matrix(X, k, seed)
    assert np.array_equal(a1, a2) and h1 == h2
    assert all(b <= a + 1e-9 for a, b in zip(h1, h1[1:]))


def test_kmeans_errors():
    with pytest.raises(KTooLarge):
        kmeans(profiles(np.zeros((3, 2))), 4, seed=1)
    with pytest.raises(EmptyTrace):
        kmeans([], 1, seed=1)


def test_purity():
    assert analysis.purity([0, 0, 1, 1], ["a", "a", "b", "b"]) == 1.0
    assert analysis.purity([0, 0, 0, 0], ["a", "a", "b", "b"]) == 0.5
