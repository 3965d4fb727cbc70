import math

import numpy as np
import pytest

from drmdp.config import RunConfig
from drmdp.core import IntervalLaw
from drmdp.envs import ScriptedRewardEnv, wrap_delayed
from drmdp.hc import Actor
from drmdp.nn import load_params
from drmdp.train import (
    METRICS_HEADER,
    DivergenceError,
    MetricsRow,
    evaluate,
    ircr_baseline_train,
    layout_for,
    point_reach_config,
    rap,
    read_metrics,
    run,
    train,
    write_metrics,
)

SMALL = RunConfig(size=6.0, interval=3, step_limit=20, hidden=8, env_steps=300, start_steps=100, batch_size=16,
                  buffer_capacity=500, eval_every=100, probe_every=50)


def test_no_updates_leave_the_initial_policy():
    cfg = SMALL.with_(start_steps=1000)
    res = train(cfg, seed=0)
    env_cfg = point_reach_config(cfg)
    init = Actor.create(layout_for(env_cfg), np.random.default_rng(np.random.SeedSequence(0).spawn(3)[0]),
                        (cfg.hidden, cfg.hidden))
    np.testing.assert_array_equal(res.actor.net.params, init.net.params)
    expect = evaluate(env_cfg, init)
    assert [(r.ret, r.steps_to_target) for r in res.rows] == [expect] * 4
    assert all(math.isnan(r.td_loss) for r in res.rows)


def test_zero_gradient_steps_leave_the_initial_policy():
    res = train(SMALL.with_(gradient_steps=0), seed=1)
    first = res.rows[0]
    assert all((r.ret, r.steps_to_target) == (first.ret, first.steps_to_target) for r in res.rows)


def test_same_seed_gives_identical_csv(tmp_path):
    a = train(SMALL.with_(variance_probe=True), 3, tmp_path / "a")
    b = train(SMALL.with_(variance_probe=True), 3, tmp_path / "b")
    assert a.metrics_path.read_bytes() == b.metrics_path.read_bytes()
    assert a.snapshot_path.read_bytes() == b.snapshot_path.read_bytes()
    rows = read_metrics(a.metrics_path)
    assert [r.env_step for r in rows] == [0, 100, 200, 300]
    assert not math.isnan(rows[-1].var_hc) and not math.isnan(rows[-1].var_mono)
    assert set(a.variance) == {"hc_variance", "monolithic_variance"}


def test_metrics_csv_header_and_roundtrip(tmp_path):
    rows = [MetricsRow(0, -1.5, 20), MetricsRow(100, 2.0, 7, 0.25, 0.125, 1e-3, 2e-3)]
    path = tmp_path / "m.csv"
    write_metrics(rows, path)
    assert path.read_text().splitlines()[0] == ",".join(METRICS_HEADER)
    back = read_metrics(path)
    assert back[1] == rows[1] and math.isnan(back[0].td_loss)


def test_snapshot_holds_the_singleton_b(tmp_path):
    res = train(SMALL, 0, tmp_path)
    nets, meta = load_params(res.snapshot_path)
    assert {"actor", "c", "b"} <= set(nets)
    assert meta["size"] == 6.0 and meta["interval"] == 3
    np.testing.assert_array_equal(nets["b"].params, res.nets["b"].params)


def test_pairwise_run_completes():
    res = train(SMALL.with_(structure="pairwise", pairwise_k=1, env_steps=200), 0)
    assert {"c0", "c1"} <= set(res.nets)


def test_ircr_run_emits_the_same_columns(tmp_path):
    res = ircr_baseline_train(SMALL.with_(algorithm="ircr"), 0, tmp_path)
    rows = read_metrics(res.metrics_path)
    assert len(rows) == 4 and all(math.isnan(r.reg_loss) for r in rows)
    again = run(SMALL.with_(algorithm="ircr"), 0)
    assert [r.td_loss for r in again.rows[1:]] == [r.td_loss for r in rows[1:]]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    with pytest.raises(DivergenceError, match="diverged"):
        train(SMALL.with_(lr=1e200, env_steps=200), 0)


def test_ircr_guidance_is_n_times_the_step_reward():
    # Sum form with constant per-step reward r_hat: R = n * r_hat, copied to each step.
    r_hat, n = 0.5, 4
    env = wrap_delayed(ScriptedRewardEnv([r_hat] * 12), "sum", IntervalLaw.fixed(n), 0, seed=0)
    env.reset()
    rewards, ends = [], []
    for _ in range(12):
        out = env.step(0)
        rewards.append(out.reward)
        ends.append(out.interval_end)
    guidance, pending = [], 0
    for r, e in zip(rewards, ends):
        pending += 1
        if e:
            guidance += [r] * pending
            pending = 0
    assert guidance == [n * r_hat] * 12


def test_rap_examples():
    assert rap({"a": 3.0, "b": -2.0}, {"a": 3.0, "b": -2.0}) == 1.0
    assert rap({"a": 50.0, "b": 100.0}, {"a": 100.0, "b": 100.0}) == 0.75
    with pytest.raises(ZeroDivisionError):
        rap({"reach": -50.0}, {"reach": -50.0}, offset_tasks={"reach"})
    assert rap({"reach": -50.0}, {"reach": 0.0}, offset_tasks={"reach"}) == 0.0


@pytest.mark.parametrize("args", [
    ({"a": 1.0}, {"b": 1.0}, ()),
    ({}, {}, ()),
    ({"a": 1.0}, {"a": 1.0}, {"z"}),
])
def test_rap_rejects_bad_inputs(args):
    with pytest.raises(ValueError):
        rap(*args)
