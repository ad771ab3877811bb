import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netqos import rng
from netqos.config import apply_flat, coerce, config_hash, parse_config
from netqos.dataset import DatasetConfig
from netqos.errors import ConfigInvalid


def test_uniform_is_keyed_and_in_range():
    a = rng.uniform(42, np.arange(1000), rng.CH_LOAD)
    b = rng.uniform(42, np.arange(1000), rng.CH_LOAD)
    assert np.array_equal(a, b)
    assert a.min() >= 0.0 and a.max() < 1.0
    assert not np.array_equal(a, rng.uniform(43, np.arange(1000), rng.CH_LOAD))
    assert not np.array_equal(a, rng.uniform(42, np.arange(1000), rng.CH_DELAY))


def test_uniform_moments():
    u = rng.uniform(7, np.arange(200_000))
    assert abs(u.mean() - 0.5) < 0.005
    assert abs(u.var() - 1.0 / 12.0) < 0.002


def test_normal_moments():
    z = rng.normal(7, np.arange(200_000))
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1.0) < 0.01


def test_draw_does_not_depend_on_batch_shape():
    full = rng.uniform(5, np.arange(10)[:, None], np.arange(20)[None, :], 3)
    assert full[4, 7] == rng.uniform(5, 4, 7, 3)


@given(st.integers(0, 2**63 - 1), st.integers(0, 500))
@settings(max_examples=50, deadline=None)
def test_permutation_is_a_permutation(seed, n):
    p = rng.permutation(seed, n)
    assert sorted(p.tolist()) == list(range(n))


def test_parse_config_sections_and_comments():
    cfg = parse_config("a = 1\n[s]\n# note\nb = x  # trailing\nevent = e1\nevent = e2\n")
    assert cfg[""] == {"a": "1"}
    assert cfg["s"] == {"b": "x", "event": ["e1", "e2"]}


@pytest.mark.parametrize("text", ["[s]\nnovalue\n", "a = 1\na = 2\n", " = 3\n"])
def test_parse_config_errors(text):
    with pytest.raises(ConfigInvalid):
        parse_config(text)


def test_coerce_follows_default_type():
    assert coerce("3", 1) == 3
    assert coerce("0.5", 1.0) == 0.5
    assert coerce("yes", False) is True
    assert coerce("0.7,0.2,0.1", (0.1,)) == (0.7, 0.2, 0.1)
    with pytest.raises(ConfigInvalid):
        coerce("abc", 1)


def test_apply_flat_rejects_unknown_keys():
    c = apply_flat(DatasetConfig, {"window": "4", "chronological": "true"})
    assert c.window == 4 and c.chronological
    with pytest.raises(ConfigInvalid):
        apply_flat(DatasetConfig, {"windw": "4"})


def test_config_hash_is_stable_and_sensitive():
    assert config_hash(DatasetConfig()) == config_hash(DatasetConfig())
    assert config_hash(DatasetConfig()) != config_hash(DatasetConfig(window=5))
    assert len(config_hash(DatasetConfig())) == 16
