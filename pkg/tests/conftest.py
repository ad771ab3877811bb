import numpy as np
import pytest

from netqos import dataset, netsim


@pytest.fixture(scope="session")
def small_sim():
    return netsim.benchmark_config(n_cells=12, days=2)


@pytest.fixture(scope="session")
def small_trace(small_sim):
    return netsim.generate_trace(small_sim)


@pytest.fixture(scope="session")
def small_split(small_trace):
    trace, _ = small_trace
    return dataset.build_dataset(trace, dataset.DatasetConfig(), provenance="test")


@pytest.fixture(scope="session")
def bench_trace():
    return netsim.generate_trace(netsim.benchmark_config())


def random_split(n=120, shape=(8, 6, 5), seed=0, separable=False):
    """Synthetic SplitDataset; with ``separable`` the label is the sign of channel 0's mean."""
    r = np.random.default_rng(seed)
    X = r.normal(size=(n,) + shape).astype(np.float32)
    if separable:
        y = (X[:, 0].mean(axis=(1, 2)) > 0).astype(np.uint8)
        X[:, 0] += np.where(y == 1, 1.0, -1.0)[:, None, None].astype(np.float32)
    else:
        y = r.integers(0, 2, n).astype(np.uint8)
    ex = dataset.ExampleSet(np.arange(n, dtype=np.int64), np.arange(n, dtype=np.int64) * 15, X, y,
                            np.ones(shape[-1], bool))
    ds = dataset.split(ex, dataset.DatasetConfig())
    ds.stats = dataset.fit_stats(ds.train)
    return ds
