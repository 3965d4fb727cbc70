"""Off-policy actor-critic training on delayed-reward Point Reach.

``train`` runs the HC agent: the critic is H(history) + C(current step),
fitted with the TD + interval regulariser loss, and the deterministic actor
follows dC/da. ``ircr_baseline_train`` runs the same loop with an ordinary
(s, a, phase) critic fitted to the interval reward copied onto every step of
the interval.

Both are deterministic per seed: the seed feeds one ``SeedSequence`` whose
children drive initialisation, exploration and batch sampling.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .envs import PointReachConfig, PointReachEnv
from .hc import (
    Actor,
    GradientVarianceProbe,
    HcCritic,
    MonolithicCritic,
    SegmentBatch,
    StepLayout,
    estimate_gradient_variance,
    hc_policy_gradient,
    hc_td_loss,
    monolithic_td_loss,
    soft_update,
    soft_update_targets,
)
from .nn import Adam, Approximator, save_params
from .replay import ReplayBuffer, ReplayRecord

METRICS_HEADER = ("env_step", "return", "steps_to_target", "td_loss", "reg_loss", "var_hc", "var_mono")


class DivergenceError(RuntimeError):
    """A loss became NaN or infinite."""


@dataclass
class MetricsRow:
    env_step: int
    ret: float
    steps_to_target: int
    td_loss: float = math.nan
    reg_loss: float = math.nan
    var_hc: float = math.nan
    var_mono: float = math.nan

    def as_list(self) -> list[str]:
        vals = [self.env_step, self.ret, self.steps_to_target, self.td_loss, self.reg_loss, self.var_hc,
                self.var_mono]
        return [str(v) if isinstance(v, int) else ("" if math.isnan(v) else repr(float(v))) for v in vals]


def write_metrics(rows: list[MetricsRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow(r.as_list())


def read_metrics(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != METRICS_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = []
        for rec in reader:
            f = [math.nan if v == "" else float(v) for v in rec]
            rows.append(MetricsRow(int(f[0]), f[1], int(f[2]), *f[3:]))
    return rows


@dataclass
class TrainResult:
    config: RunConfig
    seed: int
    rows: list[MetricsRow]
    actor: Actor
    nets: dict[str, Approximator]
    variance: dict[str, float] = field(default_factory=dict)
    metrics_path: Path | None = None
    snapshot_path: Path | None = None

    def final_steps(self, last: int = 5) -> float:
        """Median steps-to-target over the last ``last`` evaluations."""
        return float(np.median([r.steps_to_target for r in self.rows[-last:]]))


# ---------------------------------------------------------------------------
# evaluation


def point_reach_config(cfg: RunConfig) -> PointReachConfig:
    return PointReachConfig(size=cfg.size, interval=cfg.interval, step_limit=cfg.step_limit)


def layout_for(env_cfg: PointReachConfig) -> StepLayout:
    return StepLayout(state_dim=2, action_dim=2, max_n=env_cfg.interval, overlap_c=0)


def evaluate(env_cfg: PointReachConfig, actor: Actor) -> tuple[float, int]:
    """Deterministic rollout: (sum of R_t, steps to target or step_limit when missed)."""
    env = PointReachEnv(env_cfg)
    pos = env.reset()
    total = 0.0
    while True:
        a = actor.act(pos / env_cfg.size, env.phase)
        out = env.step(a)
        total += out.reward
        pos = np.array(out.state.pos)
        if out.done:
            return total, (out.state.t if out.terminated else env_cfg.step_limit)


# ---------------------------------------------------------------------------
# agents


class HcAgent:
    def __init__(self, cfg: RunConfig, layout: StepLayout, rng: np.random.Generator):
        hidden = (cfg.hidden, cfg.hidden)
        self.cfg = cfg
        self.actor = Actor.create(layout, rng, hidden)
        self.actor_opt = Adam(cfg.lr)
        self.critic = HcCritic.create(layout, rng, cfg.structure, cfg.pairwise_k, hidden, cfg.lam, cfg.lr)
        self.probe_hc = self.probe_mono = None
        if cfg.variance_probe:
            # A singleton run's own critic is the HC arm; otherwise train a separate one.
            self.probe_hc = (self.critic if cfg.structure == "singleton"
                             else HcCritic.create(layout, rng, "singleton", 0, hidden, cfg.lam, cfg.lr))
            self.probe_mono = MonolithicCritic.create(layout, rng, hidden, cfg.lr)

    def update(self, batch: SegmentBatch, policy_step: bool) -> tuple[float, float]:
        cfg = self.cfg
        rep = hc_td_loss(self.critic, batch, self.actor, cfg.gamma)
        self.critic.apply(rep.grads)
        if policy_step:
            g = hc_policy_gradient(self.critic, batch, self.actor)
            self.actor_opt.step(self.actor.net.params, -g)
        soft_update_targets(self.critic, cfg.tau_target)
        if self.probe_hc is not None:
            for critic, loss in ((self.probe_hc, hc_td_loss), (self.probe_mono, monolithic_td_loss)):
                if critic is self.critic:
                    continue
                r = loss(critic, batch, self.actor, cfg.gamma)
                critic.apply(r.grads)
                soft_update_targets(critic, cfg.tau_target)
        return rep.td, rep.reg

    def probe(self, batch: SegmentBatch) -> dict[str, float] | None:
        if self.probe_hc is None:
            return None
        return estimate_gradient_variance(GradientVarianceProbe(batch, self.probe_hc, self.probe_mono, self.actor))

    def nets(self) -> dict[str, Approximator]:
        out = {"actor": self.actor.net, "c": self.critic.c}
        names = ["b"] if self.cfg.structure == "singleton" else [f"c{k}" for k in range(len(self.critic.h.nets))]
        out.update(zip(names, self.critic.h.nets))
        return out


class IrcrAgent:
    """State-action critic trained on the interval reward copied to every step."""

    def __init__(self, cfg: RunConfig, layout: StepLayout, rng: np.random.Generator):
        hidden = (cfg.hidden, cfg.hidden)
        self.cfg = cfg
        self.layout = layout
        self.actor = Actor.create(layout, rng, hidden)
        self.actor_opt = Adam(cfg.lr)
        self.q = Approximator.create((layout.step_dim, *hidden, 1), rng)
        self.q_target = self.q.copy()
        self.q_opt = Adam(cfg.lr)

    def update(self, batch: SegmentBatch, policy_step: bool) -> tuple[float, float]:
        cfg, lay = self.cfg, self.layout
        a2 = self.actor.act(batch.next_state, batch.next_phase)
        boot = self.q_target.forward(lay.step(batch.next_state, a2, batch.next_phase))[:, 0]
        y = batch.guidance + cfg.gamma * np.where(batch.terminal, 0.0, boot)
        out, cache = self.q.forward_cache(batch.cur)
        delta = out[:, 0] - y
        g, _ = self.q.backward(cache, (2.0 * delta / len(delta))[:, None])
        self.q_opt.step(self.q.params, g)
        if policy_step:
            x = lay.actor_input(batch.state, batch.phase)
            a, a_cache = self.actor.net.forward_cache(x)
            _, qc = self.q.forward_cache(lay.step(batch.state, a, batch.phase))
            _, gx = self.q.backward(qc, np.full((len(a), 1), 1.0 / len(a)), need_input=True)
            ga, _ = self.actor.net.backward(a_cache, gx[:, lay.action_slice()])
            self.actor_opt.step(self.actor.net.params, -ga)
        soft_update(self.q_target, self.q, cfg.tau_target)
        return float(np.mean(delta * delta)), math.nan

    def probe(self, batch):
        return None

    def nets(self) -> dict[str, Approximator]:
        return {"actor": self.actor.net, "q": self.q}


# ---------------------------------------------------------------------------
# loop


def _run(cfg: RunConfig, seed: int, agent_cls, out_dir) -> TrainResult:
    env_cfg = point_reach_config(cfg)
    lay = layout_for(env_cfg)
    init_rng, explore_rng, sample_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    agent = agent_cls(cfg, lay, init_rng)
    ircr = isinstance(agent, IrcrAgent)
    buffer = ReplayBuffer(cfg.buffer_capacity, lay)
    env = PointReachEnv(env_cfg)
    L = env_cfg.size
    W = lay.width

    rows = [MetricsRow(0, *evaluate(env_cfg, agent.actor))]
    td_acc, reg_acc, probes = [], [], []
    all_probes = []
    behavior_id = 0
    episode = 0
    updates = 0
    pending: list[ReplayRecord] = []
    pos = env.reset()
    window = np.zeros((W, lay.step_dim))
    mask = np.zeros(W)

    for step in range(cfg.env_steps):
        phase = env.phase
        s = pos / L
        if step < cfg.start_steps:
            a = explore_rng.uniform(-1.0, 1.0, size=2)
        else:
            a = agent.actor.act(s, phase)
            a = np.clip(a + explore_rng.uniform(-cfg.exploration_noise, cfg.exploration_noise, size=2), -1.0, 1.0)
        out = env.step(a)
        nxt = np.array(out.state.pos)
        window[phase] = lay.step(s, a, phase)
        mask[phase] = 1.0
        rec = ReplayRecord(window.copy(), mask.copy(), phase, out.reward, s, nxt / L, out.state.phase,
                           out.interval_end, out.terminated, behavior_id, episode, out.state.t - 1)
        if ircr:
            pending.append(rec)
            if out.interval_end:
                for r in pending:
                    buffer.add(_with_guidance(r, out.reward))
                pending.clear()
        else:
            buffer.add(rec)
        if out.interval_end:
            window[:] = 0.0
            mask[:] = 0.0
        if out.done:
            episode += 1
            pos = env.reset()
        else:
            pos = nxt

        if step + 1 >= cfg.start_steps and len(buffer) >= cfg.batch_size:
            for _ in range(cfg.gradient_steps):
                batch = buffer.sample(sample_rng, cfg.batch_size)
                updates += 1
                policy_step = updates % cfg.policy_delay == 0
                td, reg = agent.update(batch, policy_step)
                if not (math.isfinite(td) and (math.isnan(reg) or math.isfinite(reg))):
                    raise DivergenceError(f"seed {seed}: loss diverged at env step {step + 1} (td={td}, reg={reg})")
                if policy_step:
                    behavior_id += 1
                    if not np.all(np.isfinite(agent.actor.net.params)):
                        raise DivergenceError(f"seed {seed}: actor parameters diverged at env step {step + 1}")
                td_acc.append(td)
                reg_acc.append(reg)
            if (step + 1) % cfg.probe_every == 0:
                v = agent.probe(buffer.sample(sample_rng, cfg.batch_size))
                if v is not None:
                    probes.append(v)
                    all_probes.append(v)

        if (step + 1) % cfg.eval_every == 0:
            ret, steps = evaluate(env_cfg, agent.actor)
            row = MetricsRow(step + 1, ret, steps)
            if td_acc:
                row.td_loss = float(np.mean(td_acc))
                row.reg_loss = float(np.nanmean(reg_acc)) if not all(math.isnan(r) for r in reg_acc) else math.nan
            if probes:
                row.var_hc = float(np.mean([p["hc_variance"] for p in probes]))
                row.var_mono = float(np.mean([p["monolithic_variance"] for p in probes]))
            rows.append(row)
            td_acc, reg_acc, probes = [], [], []

    variance = {}
    if all_probes:
        variance = {k: float(np.mean([p[k] for p in all_probes])) for k in ("hc_variance", "monolithic_variance")}
    result = TrainResult(cfg, seed, rows, agent.actor, agent.nets(), variance)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.metrics_path = out / f"metrics_seed{seed}.csv"
        write_metrics(rows, result.metrics_path)
        if cfg.snapshot:
            result.snapshot_path = out / f"snapshot_seed{seed}.params"
            meta = {"algorithm": cfg.algorithm, "seed": seed, "env_steps": cfg.env_steps, "size": cfg.size,
                    "interval": cfg.interval, "step_limit": cfg.step_limit, "structure": cfg.structure}
            save_params(result.snapshot_path, result.nets, meta)
    return result


def _with_guidance(rec: ReplayRecord, g: float) -> ReplayRecord:
    from dataclasses import replace

    return replace(rec, guidance=float(g))


def train(config: RunConfig, seed: int, out_dir=None) -> TrainResult:
    """HC actor-critic on Point Reach; writes metrics and a snapshot when ``out_dir`` is given."""
    return _run(config, seed, HcAgent, out_dir)


def ircr_baseline_train(config: RunConfig, seed: int, out_dir=None) -> TrainResult:
    return _run(config, seed, IrcrAgent, out_dir)


def run(config: RunConfig, seed: int, out_dir=None) -> TrainResult:
    """Dispatch on ``config.algorithm``."""
    fn = train if config.algorithm == "hc" else ircr_baseline_train
    return fn(config, seed, out_dir)


# ---------------------------------------------------------------------------
# relative average performance


def rap(returns: dict[str, float], oracle_returns: dict[str, float], offset_tasks=(), offset: float = 50.0) -> float:
    """Mean over tasks of (return + o) / (oracle + o), with o = ``offset`` on ``offset_tasks`` and 0 elsewhere."""
    if set(returns) != set(oracle_returns):
        raise ValueError("returns and oracle returns cover different tasks")
    if not returns:
        raise ValueError("no tasks")
    unknown = set(offset_tasks) - set(returns)
    if unknown:
        raise ValueError(f"offset tasks not in the task set: {sorted(unknown)}")
    ratios = []
    for task, r in returns.items():
        o = offset if task in offset_tasks else 0.0
        denom = oracle_returns[task] + o
        if denom == 0.0:
            raise ZeroDivisionError(f"oracle return plus offset is zero for task {task!r}")
        ratios.append((r + o) / denom)
    return float(np.mean(ratios))


__all__ = [
    "DivergenceError",
    "HcAgent",
    "IrcrAgent",
    "METRICS_HEADER",
    "MetricsRow",
    "TrainResult",
    "evaluate",
    "ircr_baseline_train",
    "layout_for",
    "point_reach_config",
    "rap",
    "read_metrics",
    "run",
    "train",
    "write_metrics",
]
