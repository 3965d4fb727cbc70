"""History/current decomposition of the trajectory critic.

The critic value of a key tau_{t_i-c:t} + (s_t, a_t) is H(history) + C(s_t, a_t,
phase). H never sees the current action, so the policy gradient only needs
dC/da.

Segments are stored in a fixed slot layout of width ``W = c + max_n``: slot j
holds window position j (the first ``c`` slots are the overlap prefix) and a
validity mask marks real steps. Each step feature vector ends with the
slot's relative phase ``(j - c) / max_n``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import Adam, Approximator


# ---------------------------------------------------------------------------
# batches


@dataclass
class SegmentBatch:
    """Minibatch of transitions in slot layout.

    Attributes:
        hist, hist_mask: history tau_{t_i-c:t} features (B, W, F) and mask (B, W).
        cur: current step features (B, F), including its action.
        window, window_mask: the full key tau_{t_i-c:t+1} (history plus current step).
        reward: R_t (B,).
        next_state: state features of s_{t+1} without action or phase (B, Ds).
        next_phase: phase of s_{t+1} (B,).
        next_hist, next_hist_mask: history that precedes s_{t+1}; either the
            key itself or, after an interval end, its last c steps.
        interval_end, terminal: flags (B,). ``terminal`` zeroes the bootstrap.
        state, phase: state features and phase of s_t.
    """

    hist: np.ndarray
    hist_mask: np.ndarray
    cur: np.ndarray
    window: np.ndarray
    window_mask: np.ndarray
    reward: np.ndarray
    state: np.ndarray
    phase: np.ndarray
    next_state: np.ndarray
    next_phase: np.ndarray
    next_hist: np.ndarray
    next_hist_mask: np.ndarray
    interval_end: np.ndarray
    terminal: np.ndarray
    guidance: np.ndarray | None = None

    def __len__(self):
        return len(self.reward)

    def subset(self, idx) -> "SegmentBatch":
        return SegmentBatch(**{k: (None if v is None else v[idx]) for k, v in self.__dict__.items()})


@dataclass(frozen=True)
class StepLayout:
    """Feature conventions shared by the critics and the actor.

    A step feature is (state features, action, relative phase / max_n).
    """

    state_dim: int
    action_dim: int
    max_n: int
    overlap_c: int = 0

    @property
    def width(self) -> int:
        return self.overlap_c + self.max_n

    @property
    def step_dim(self) -> int:
        return self.state_dim + self.action_dim + 1

    @property
    def actor_dim(self) -> int:
        return self.state_dim + 1

    def step(self, state, action, phase) -> np.ndarray:
        ph = np.asarray(phase, dtype=float)[..., None] / self.max_n
        return np.concatenate([np.asarray(state, float), np.asarray(action, float), ph], axis=-1)

    def actor_input(self, state, phase) -> np.ndarray:
        ph = np.asarray(phase, dtype=float)[..., None] / self.max_n
        return np.concatenate([np.asarray(state, float), ph], axis=-1)

    def action_slice(self) -> slice:
        return slice(self.state_dim, self.state_dim + self.action_dim)


# ---------------------------------------------------------------------------
# H structures


class HStructure:
    """Additive history model; subclasses define which sub-networks see which slots."""

    nets: list[Approximator]

    def terms(self, feats: np.ndarray, mask: np.ndarray):
        """Yield (net, inputs (B, J, d), weights (B, J)) for every additive term."""
        raise NotImplementedError

    def forward(self, feats: np.ndarray, mask: np.ndarray) -> np.ndarray:
        return self.forward_cache(feats, mask)[0]

    def forward_cache(self, feats: np.ndarray, mask: np.ndarray):
        """Values (B,) and a cache for :meth:`backward`."""
        B = len(mask)
        total = np.zeros(B)
        caches = []
        for net, x, m in self.terms(feats, mask):
            J = m.shape[1]
            flat = m.reshape(-1) > 0.0
            if not flat.any():
                caches.append(None)
                continue
            rows = np.repeat(np.arange(B), J)[flat]
            w = m.reshape(-1)[flat]
            y, cache = net.forward_cache(x.reshape(B * J, -1)[flat])
            total += np.bincount(rows, weights=w * y[:, 0], minlength=B)
            caches.append((rows, w, cache, flat, x.shape))
        return total, caches

    def backward(self, caches, grad_out: np.ndarray, need_input: bool = False):
        """Parameter gradients of sum(grad_out * H), one per net.

        With ``need_input`` also returns the gradient with respect to every
        term's input array, as a list aligned with :meth:`terms`.
        """
        grads, inputs = [], []
        for net, c in zip(self.nets, caches):
            if c is None:
                grads.append(np.zeros_like(net.params))
                inputs.append(None)
                continue
            rows, w, cache, flat, shape = c
            gp, gx = net.backward(cache, (w * grad_out[rows])[:, None], need_input=need_input)
            grads.append(gp)
            if need_input:
                full = np.zeros((shape[0] * shape[1], shape[2]))
                full[flat] = gx
                inputs.append(full.reshape(shape))
        return (grads, inputs) if need_input else grads

    def input_gradient(self, feats: np.ndarray, mask: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        """d sum(grad_out * H) / d feats, shape (B, W, F)."""
        _, caches = self.forward_cache(feats, mask)
        _, per_term = self.backward(caches, grad_out, need_input=True)
        return self._fold_inputs(per_term, feats.shape)

    def _fold_inputs(self, per_term, shape) -> np.ndarray:
        out = np.zeros(shape)
        for g in per_term:
            if g is not None:
                out += g
        return out

    def forward_backward(self, feats, mask, grad_out) -> tuple[np.ndarray, list[np.ndarray]]:
        v, caches = self.forward_cache(feats, mask)
        return v, self.backward(caches, grad_out)

    def copy(self) -> "HStructure":
        raise NotImplementedError


class SingletonH(HStructure):
    """H(tau) = sum over history steps of b(step)."""

    def __init__(self, b: Approximator):
        self.b = b
        self.nets = [b]

    @classmethod
    def create(cls, layout: StepLayout, rng, hidden=(64, 64)) -> "SingletonH":
        return cls(Approximator.create((layout.step_dim, *hidden, 1), rng))

    def terms(self, feats, mask):
        yield self.b, feats, mask

    def copy(self):
        return SingletonH(self.b.copy())


class PairwiseH(HStructure):
    """H(tau) = sum_{k=0..K} sum_j c^k(step_j, step_{j+k}); c^0 sees a single step."""

    def __init__(self, nets: list[Approximator]):
        if len(nets) < 1:
            raise ValueError("PairwiseH needs at least c^0")
        self.nets = list(nets)

    @property
    def K(self) -> int:
        return len(self.nets) - 1

    @classmethod
    def create(cls, layout: StepLayout, rng, K: int = 1, hidden=(64, 64)) -> "PairwiseH":
        F = layout.step_dim
        nets = [Approximator.create((F if k == 0 else 2 * F, *hidden, 1), rng) for k in range(K + 1)]
        return cls(nets)

    def terms(self, feats, mask):
        W = feats.shape[1]
        for k, net in enumerate(self.nets):
            if k == 0:
                yield net, feats, mask
            elif k >= W:
                yield net, feats[:, :0], mask[:, :0]
            else:
                x = np.concatenate([feats[:, : W - k], feats[:, k:]], axis=-1)
                yield net, x, mask[:, : W - k] * mask[:, k:]

    def _fold_inputs(self, per_term, shape) -> np.ndarray:
        out = np.zeros(shape)
        W, F = shape[1], shape[2]
        for k, g in enumerate(per_term):
            if g is None:
                continue
            if k == 0:
                out += g
            else:
                out[:, : W - k] += g[..., :F]
                out[:, k:] += g[..., F:]
        return out

    def copy(self):
        return PairwiseH([n.copy() for n in self.nets])


# ---------------------------------------------------------------------------
# actor


class Actor:
    """Deterministic policy a = tanh(MLP(state features, phase / max_n))."""

    def __init__(self, net: Approximator, layout: StepLayout):
        self.net = net
        self.layout = layout

    @classmethod
    def create(cls, layout: StepLayout, rng, hidden=(64, 64)) -> "Actor":
        net = Approximator.create((layout.actor_dim, *hidden, layout.action_dim), rng, output="tanh", final_scale=0.1)
        return cls(net, layout)

    def act(self, state, phase) -> np.ndarray:
        return self.net.forward(self.layout.actor_input(state, phase))

    def copy(self) -> "Actor":
        return Actor(self.net.copy(), self.layout)


# ---------------------------------------------------------------------------
# critics


def soft_update(target: Approximator, live: Approximator, tau: float) -> None:
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau_target must lie in (0, 1]")
    target.params *= 1.0 - tau
    target.params += tau * live.params


@dataclass
class HcCritic:
    h: HStructure
    c: Approximator
    lam: float = 0.05
    h_target: HStructure = None
    c_target: Approximator = None
    lr: float = 3e-4
    optimizers: list[Adam] = field(default_factory=list)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.h_target is None:
            self.h_target = self.h.copy()
        if self.c_target is None:
            self.c_target = self.c.copy()
        if not self.optimizers:
            self.optimizers = [Adam(self.lr) for _ in self.live_nets]

    @classmethod
    def create(cls, layout: StepLayout, rng, structure: str = "singleton", K: int = 1, hidden=(64, 64),
               lam: float = 0.05, lr: float = 3e-4) -> "HcCritic":
        if structure == "singleton":
            h = SingletonH.create(layout, rng, hidden)
        elif structure == "pairwise":
            h = PairwiseH.create(layout, rng, K, hidden)
        else:
            raise ValueError(f"unknown H structure {structure!r}")
        c = Approximator.create((layout.step_dim, *hidden, 1), rng)
        return cls(h, c, lam, lr=lr)

    @property
    def live_nets(self) -> list[Approximator]:
        return [*self.h.nets, self.c]

    @property
    def target_nets(self) -> list[Approximator]:
        return [*self.h_target.nets, self.c_target]

    def value(self, hist, hist_mask, cur) -> np.ndarray:
        return self.h.forward(hist, hist_mask) + self.c.forward(cur)[:, 0]

    def apply(self, grads: list[np.ndarray]) -> None:
        for net, opt, g in zip(self.live_nets, self.optimizers, grads):
            opt.step(net.params, g)


def soft_update_targets(critic, tau_target: float) -> None:
    """target <- tau * live + (1 - tau) * target for every sub-network."""
    for t, l in zip(critic.target_nets, critic.live_nets):
        soft_update(t, l, tau_target)


@dataclass
class LossReport:
    loss: float
    td: float
    reg: float
    grads: list[np.ndarray]


def _next_actions(batch: SegmentBatch, actor: Actor) -> np.ndarray:
    return actor.act(batch.next_state, batch.next_phase)


def hc_targets(critic: HcCritic, batch: SegmentBatch, actor: Actor, gamma: float) -> np.ndarray:
    """R_t + gamma * (H_target(next history) + C_target(s', a')), with 0 bootstrap at true terminals."""
    lay = actor.layout
    a2 = _next_actions(batch, actor)
    nxt = lay.step(batch.next_state, a2, batch.next_phase)
    boot = critic.h_target.forward(batch.next_hist, batch.next_hist_mask) + critic.c_target.forward(nxt)[:, 0]
    return batch.reward + gamma * np.where(batch.terminal, 0.0, boot)


def reg_loss(h: HStructure, windows: np.ndarray, masks: np.ndarray, rewards: np.ndarray):
    """Mean of (H(full interval) - interval reward)^2; returns (loss, grads per net)."""
    m = len(rewards)
    if m == 0:
        return 0.0, [np.zeros_like(n.params) for n in h.nets]
    v0, cache = h.forward_cache(windows, masks)
    err = v0 - rewards
    return float(np.mean(err * err)), h.backward(cache, 2.0 * err / m)


def hc_td_loss(critic: HcCritic, batch: SegmentBatch, actor: Actor, gamma: float, targets=None) -> LossReport:
    """Mean squared TD error of H + C plus lambda times the interval regulariser.

    The regulariser uses the batch records that close an interval (the key is
    then the whole interval window and R_t its reward). Both H terms share
    one batched pass over the live network.
    """
    B = len(batch)
    y = hc_targets(critic, batch, actor, gamma) if targets is None else targets
    c_out, c_cache = critic.c.forward_cache(batch.cur)
    ends = np.flatnonzero(batch.interval_end) if critic.lam > 0.0 else np.zeros(0, dtype=int)
    m = len(ends)
    feats = np.concatenate([batch.hist, batch.window[ends]]) if m else batch.hist
    masks = np.concatenate([batch.hist_mask, batch.window_mask[ends]]) if m else batch.hist_mask
    h_all, h_cache = critic.h.forward_cache(feats, masks)
    delta = h_all[:B] + c_out[:, 0] - y
    td = float(np.mean(delta * delta))
    g = np.empty(B + m)
    g[:B] = 2.0 * delta / B
    reg = 0.0
    if m:
        err = h_all[B:] - batch.reward[ends]
        reg = float(np.mean(err * err))
        g[B:] = critic.lam * 2.0 * err / m
    h_grads = critic.h.backward(h_cache, g)
    c_grad, _ = critic.c.backward(c_cache, g[:B, None])
    return LossReport(td + critic.lam * reg, td, reg, [*h_grads, c_grad])


def hc_policy_gradient(critic: HcCritic, batch: SegmentBatch, actor: Actor) -> np.ndarray:
    """Ascent direction d/dtheta mean_b C(s_b, pi(s_b, phase_b), phase_b)."""
    lay = actor.layout
    x = lay.actor_input(batch.state, batch.phase)
    a, a_cache = actor.net.forward_cache(x)
    cur = lay.step(batch.state, a, batch.phase)
    _, c_cache = critic.c.forward_cache(cur)
    _, gx = critic.c.backward(c_cache, np.full((len(a), 1), 1.0 / len(a)), need_input=True)
    grad, _ = actor.net.backward(a_cache, gx[:, lay.action_slice()])
    return grad


def hc_action_gradient(critic: HcCritic, hist, hist_mask, cur, layout: StepLayout) -> np.ndarray:
    """d(H + C)/da at each batch row; H has no action input, so this is dC/da."""
    _, cache = critic.c.forward_cache(cur)
    _, gx = critic.c.backward(cache, np.ones((len(cur), 1)), need_input=True)
    return gx[:, layout.action_slice()]


def full_critic_action_gradient(critic: HcCritic, window, window_mask, phase, layout: StepLayout) -> np.ndarray:
    """d(H + C)/da for the current action, backpropagated through every input of both parts.

    The key tau_{t_i-c:t+1} is split into the history (current slot masked)
    and the current step; the gradient with respect to the whole window is
    assembled from both parts and the current action slot is read out.
    """
    B = len(window)
    rows = np.arange(B)
    slot = layout.overlap_c + np.asarray(phase)
    hist_mask = window_mask.copy()
    hist_mask[rows, slot] = 0.0
    g_window = critic.h.input_gradient(window, hist_mask, np.ones(B))
    _, cache = critic.c.forward_cache(window[rows, slot])
    _, gc = critic.c.backward(cache, np.ones((B, 1)), need_input=True)
    g_window[rows, slot] += gc
    return g_window[rows, slot][:, layout.action_slice()]


# ---------------------------------------------------------------------------
# monolithic trajectory critic (comparison arm)


@dataclass
class MonolithicCritic:
    """One MLP over [current step, history slots, history masks]."""

    net: Approximator
    layout: StepLayout
    target: Approximator = None
    lr: float = 3e-4
    optimizer: Adam = None

    def __post_init__(self):
        if self.target is None:
            self.target = self.net.copy()
        if self.optimizer is None:
            self.optimizer = Adam(self.lr)

    @staticmethod
    def input_dim(layout: StepLayout) -> int:
        return layout.step_dim * (layout.width + 1) + layout.width

    @classmethod
    def create(cls, layout: StepLayout, rng, hidden=(64, 64), lr: float = 3e-4) -> "MonolithicCritic":
        return cls(Approximator.create((cls.input_dim(layout), *hidden, 1), rng), layout, lr=lr)

    @property
    def live_nets(self):
        return [self.net]

    @property
    def target_nets(self):
        return [self.target]

    def featurize(self, hist, hist_mask, cur) -> np.ndarray:
        if hist.shape[1] > self.layout.width:
            raise ValueError(f"segment of {hist.shape[1]} slots exceeds configured width {self.layout.width}")
        B = len(cur)
        h = (hist * hist_mask[..., None]).reshape(B, -1)
        return np.concatenate([cur, h, hist_mask], axis=1)

    def value(self, hist, hist_mask, cur, use_target: bool = False) -> np.ndarray:
        net = self.target if use_target else self.net
        return net.forward(self.featurize(hist, hist_mask, cur))[:, 0]

    def apply(self, grads):
        self.optimizer.step(self.net.params, grads[0])


def monolithic_td_loss(critic: MonolithicCritic, batch: SegmentBatch, actor: Actor, gamma: float) -> LossReport:
    lay = critic.layout
    a2 = _next_actions(batch, actor)
    nxt = lay.step(batch.next_state, a2, batch.next_phase)
    boot = critic.value(batch.next_hist, batch.next_hist_mask, nxt, use_target=True)
    y = batch.reward + gamma * np.where(batch.terminal, 0.0, boot)
    out, cache = critic.net.forward_cache(critic.featurize(batch.hist, batch.hist_mask, batch.cur))
    delta = out[:, 0] - y
    grad, _ = critic.net.backward(cache, (2.0 * delta / len(delta))[:, None])
    td = float(np.mean(delta * delta))
    return LossReport(td, td, 0.0, [grad])


def monolithic_trajectory_gradient(critic: MonolithicCritic, batch: SegmentBatch, actor: Actor) -> np.ndarray:
    """Ascent direction d/dtheta mean_b Q(history_b + (s_b, pi(s_b, phase_b)))."""
    lay = actor.layout
    x = lay.actor_input(batch.state, batch.phase)
    a, a_cache = actor.net.forward_cache(x)
    cur = lay.step(batch.state, a, batch.phase)
    _, cache = critic.net.forward_cache(critic.featurize(batch.hist, batch.hist_mask, cur))
    _, gx = critic.net.backward(cache, np.full((len(a), 1), 1.0 / len(a)), need_input=True)
    grad, _ = actor.net.backward(a_cache, gx[:, lay.action_slice()])
    return grad


# ---------------------------------------------------------------------------
# gradient variance


@dataclass
class GradientVarianceProbe:
    batch: SegmentBatch
    hc: HcCritic
    monolithic: MonolithicCritic
    actor: Actor


def per_sample_final_layer_grads(grad_fn, critic, batch: SegmentBatch, actor: Actor) -> np.ndarray:
    """(B, P_final) policy-gradient rows computed one sample at a time."""
    sl = actor.net.final_layer_slice
    return np.stack([grad_fn(critic, batch.subset(slice(i, i + 1)), actor)[sl] for i in range(len(batch))])


def summed_sample_variance(rows: np.ndarray) -> float:
    """Sum over parameters of the unbiased (divisor m - 1) sample variance."""
    if len(rows) < 2:
        raise ValueError("variance needs at least two samples")
    return float(np.var(rows, axis=0, ddof=1).sum())


def estimate_gradient_variance(probe: GradientVarianceProbe) -> dict[str, float]:
    if len(probe.batch) < 2:
        raise ValueError("batch too small for a sample variance")
    hc_rows = per_sample_final_layer_grads(hc_policy_gradient, probe.hc, probe.batch, probe.actor)
    mono_rows = per_sample_final_layer_grads(monolithic_trajectory_gradient, probe.monolithic, probe.batch, probe.actor)
    return {"hc_variance": summed_sample_variance(hc_rows), "monolithic_variance": summed_sample_variance(mono_rows)}


__all__ = [
    "Actor",
    "GradientVarianceProbe",
    "HStructure",
    "HcCritic",
    "LossReport",
    "MonolithicCritic",
    "PairwiseH",
    "SegmentBatch",
    "SingletonH",
    "StepLayout",
    "estimate_gradient_variance",
    "full_critic_action_gradient",
    "hc_action_gradient",
    "hc_policy_gradient",
    "hc_targets",
    "hc_td_loss",
    "monolithic_td_loss",
    "monolithic_trajectory_gradient",
    "per_sample_final_layer_grads",
    "reg_loss",
    "soft_update",
    "soft_update_targets",
    "summed_sample_variance",
]
