import re
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netqos import netsim, policy, rng
from netqos.errors import ConfigInvalid, ConfigMismatch, ShapeMismatch
from netqos.learn import TrainConfig, fit
from netqos.policy import ADMIT, REJECT, PolicyConfig, decide
from netqos.telemetry import HIGH, LOW


@pytest.mark.parametrize("p,priority,action", [(0.9, LOW, REJECT), (0.9, HIGH, ADMIT), (0.2, LOW, ADMIT),
                                               (0.5, LOW, ADMIT)])
def test_decide_examples(p, priority, action):
    d = decide(p, priority, PolicyConfig(theta=0.5), request_id=7)
    assert d.action == action and d.request_id == 7 and d.theta == 0.5


def test_decide_errors():
    with pytest.raises(ValueError):
        decide(1.5, LOW)
    with pytest.raises(ConfigInvalid):
        PolicyConfig(theta=1.2)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.floats(0, 1), st.data())
@settings(max_examples=100, deadline=None)
def test_admit_mask_agrees_with_decide(p, theta, data):
    p = np.array(p)
    rows = np.array(data.draw(st.lists(st.integers(0, len(p) - 1), min_size=1, max_size=30)))
    pri = np.array(data.draw(st.lists(st.sampled_from([LOW, HIGH]), min_size=len(rows), max_size=len(rows))))
    cfg = PolicyConfig(theta)
    mask = policy.admit_mask(p, rows, pri, cfg)
    assert mask.tolist() == [decide(p[r], q, cfg).action == ADMIT for r, q in zip(rows, pri)]
    assert mask[pri == HIGH].all()


@pytest.fixture(scope="module")
def congested():
    return netsim.benchmark_config(congested=True, n_cells=12, days=2)


@pytest.fixture(scope="module")
def cnn_model(small_split):
    return fit("cnn", small_split, 42, train_config=TrainConfig(epochs=2))[0]


class FixedScorer:
    """Probabilities fixed in advance per (cell, step), independent of what the run does."""

    def __init__(self, n_cells, n_steps, seed=0):
        self.p = rng.uniform(seed, np.arange(n_cells)[:, None], np.arange(n_steps)[None, :])

    def __call__(self, step, state):
        return self.p[:, step]


def test_theta_one_is_neutral(congested, cnn_model):
    rep, base, pol = policy.replay(congested, cnn_model, PolicyConfig(1.0), return_runs=True)
    assert rep.variants["policy"] == rep.variants["baseline"]
    assert np.array_equal(base.admitted, pol.admitted)
    assert all(a.equals(b) for a, b in zip(base.trace_parts, pol.trace_parts))
    assert np.array_equal(rep.series["policy"], rep.series["baseline"], equal_nan=True)


def test_oracle_policy_cuts_delay(congested):
    _, gt = netsim.generate_trace(congested)
    rep = policy.replay(congested, policy.OracleScorer(gt), PolicyConfig(0.5))
    b, p = rep.variants["baseline"], rep.variants["policy"]
    assert p.mean_delay_ms < b.mean_delay_ms
    assert p.rejected_low > 0 and p.rejected_high == 0


def test_model_policy_never_rejects_high_priority(congested, cnn_model):
    for theta in (0.0, 0.3, 0.7):
        rep = policy.replay(congested, cnn_model, PolicyConfig(theta))
        assert rep.variants["policy"].rejected_high == 0
        assert all(s.rejected_high == 0 for s in rep.per_cell["policy"])


def test_rejections_fall_as_theta_rises(congested):
    scorer = FixedScorer(congested.n_cells, congested.n_steps)
    counts = [policy.replay(congested, scorer, PolicyConfig(t)).variants["policy"].rejected
              for t in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)]
    assert all(b <= a for a, b in zip(counts, counts[1:]))
    assert counts[0] > 0 and counts[-1] == 0


def test_requests_are_conserved(congested):
    scorer = FixedScorer(congested.n_cells, congested.n_steps, seed=3)
    rep, base, pol = policy.replay(congested, scorer, PolicyConfig(0.5), return_runs=True)
    n_cells, n_steps = congested.n_cells, congested.n_steps
    req = pol.requests
    flat = req.row * n_steps + req.step
    offered = np.bincount(flat, minlength=n_cells * n_steps)
    admitted = np.bincount(flat[pol.admitted], minlength=n_cells * n_steps)
    rejected = np.bincount(flat[~pol.admitted], minlength=n_cells * n_steps)
    assert np.array_equal(admitted + rejected, offered)
    # the realized trace carries exactly one QoS sample per admitted request
    qos = pol.trace_parts[1]
    q_flat = np.searchsorted(pol.cell_ids, qos.cell_id) * n_steps + qos.timestamp // congested.step_minutes
    assert np.array_equal(np.bincount(q_flat, minlength=n_cells * n_steps), admitted)
    v = rep.variants["policy"]
    assert v.admitted + v.rejected == rep.offered == len(base.requests.step)


def test_policy_run_sheds_load(congested):
    scorer = FixedScorer(congested.n_cells, congested.n_steps, seed=3)
    _, base, pol = policy.replay(congested, scorer, PolicyConfig(0.5), return_runs=True)
    assert np.all(pol.load <= base.load + 1e-9)
    assert np.array_equal(pol.offered, base.offered)


def test_scorer_checks_model(small_split, cnn_model, congested):
    topo = netsim.build_topology(congested)
    with pytest.raises(ConfigMismatch):
        policy.ModelScorer(replace(cnn_model, dataset_config=None), topo)
    wrong = replace(cnn_model, dataset_config=replace(small_split.config, window=4))
    with pytest.raises(ShapeMismatch):
        policy.ModelScorer(wrong, topo)


def test_report_csv_rows(congested):
    scorer = FixedScorer(congested.n_cells, congested.n_steps)
    rep = policy.replay(congested, scorer, PolicyConfig(0.5))
    lines = policy.report_csv(rep).splitlines()
    assert lines[0] == policy.REPORT_HEADER
    assert len(lines) == 1 + 2 * (1 + congested.n_cells)
    assert lines[1].startswith("baseline,all,") and any(ln.startswith("policy,all,") for ln in lines)


def test_comparison_outputs(tmp_path, congested, cnn_model):
    rep = policy.replay(congested, cnn_model, PolicyConfig(1.0))
    policy.emit_delay_comparison(rep, tmp_path / "c.csv")
    policy.emit_delay_comparison(rep, tmp_path / "c.svg")
    rows = (tmp_path / "c.csv").read_text().splitlines()
    assert rows[0] == "cell_id,x_km,y_km,baseline_mean_delay_ms,policy_mean_delay_ms"
    assert len(rows) - 1 == congested.n_cells
    svg = (tmp_path / "c.svg").read_text()
    panels = re.findall(r'<g class="panel" transform="[^"]*">(.*?)</g>', svg, flags=re.S)
    assert len(panels) == 2 and panels[0] == panels[1]
    assert svg.count('class="title"') == 2 and "ms</text>" in svg
    with pytest.raises(ValueError):
        policy.emit_delay_comparison(rep, tmp_path / "c.png")


def test_oracle_panel_is_cooler(congested):
    _, gt = netsim.generate_trace(congested)
    rep = policy.replay(congested, policy.OracleScorer(gt), PolicyConfig(0.5))
    svg = policy.comparison_svg(rep)
    panels = re.findall(r'<g class="panel" transform="[^"]*">(.*?)</g>', svg, flags=re.S)
    red = [sum(int(r) for r in re.findall(r'fill="rgb\((\d+),', p)) for p in panels]
    assert red[1] < red[0]
