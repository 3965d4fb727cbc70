import numpy as np
import pytest

from drmdp.hc import (
    Actor,
    GradientVarianceProbe,
    HcCritic,
    MonolithicCritic,
    PairwiseH,
    SegmentBatch,
    SingletonH,
    StepLayout,
    estimate_gradient_variance,
    full_critic_action_gradient,
    hc_action_gradient,
    hc_policy_gradient,
    hc_targets,
    hc_td_loss,
    monolithic_td_loss,
    monolithic_trajectory_gradient,
    reg_loss,
    soft_update,
    soft_update_targets,
    summed_sample_variance,
)
from drmdp.nn import Approximator, Architecture, central_difference, relative_error

LAYOUT = StepLayout(state_dim=2, action_dim=2, max_n=4, overlap_c=0)


def random_batch(layout, B, rng, interval_end_rate=0.3):
    c, W, F = layout.overlap_c, layout.width, layout.step_dim
    phase = rng.integers(0, layout.max_n, size=B)
    slots = np.arange(W)[None, :]
    window_mask = ((slots >= c) & (slots <= c + phase[:, None])).astype(float)
    if c:
        window_mask[:, :c] = rng.integers(0, 2, size=(B, c))
    state_feats = rng.uniform(0, 1, size=(B, W, layout.state_dim))
    actions = rng.uniform(-1, 1, size=(B, W, layout.action_dim))
    window = layout.step(state_feats, actions, np.broadcast_to(slots - c, (B, W))) * window_mask[..., None]
    rows = np.arange(B)
    cur = window[rows, c + phase].copy()
    hist_mask = window_mask.copy()
    hist_mask[rows, c + phase] = 0.0
    hist = window * hist_mask[..., None]
    end = rng.random(B) < interval_end_rate
    end |= phase == layout.max_n - 1
    next_phase = np.where(end, 0, phase + 1)
    return SegmentBatch(
        hist=hist, hist_mask=hist_mask, cur=cur, window=window, window_mask=window_mask,
        reward=np.where(end, rng.normal(size=B), 0.0),
        state=state_feats[rows, c + phase], phase=phase,
        next_state=rng.uniform(0, 1, size=(B, layout.state_dim)), next_phase=next_phase,
        next_hist=np.where(end[:, None, None], 0.0, window), next_hist_mask=np.where(end[:, None], 0.0, window_mask),
        interval_end=end, terminal=np.zeros(B, dtype=bool),
    )


def linear(in_dim, w=None, bias=0.0):
    net = Approximator(Architecture((in_dim, 1)))
    if w is not None:
        net.weights[0][:, 0] = w
    net.biases[0][0] = bias
    return net


def critic_params(critic):
    return np.concatenate([n.params for n in critic.live_nets])


def set_critic_params(critic, flat):
    off = 0
    for n in critic.live_nets:
        n.params[:] = flat[off:off + n.params.size]
        off += n.params.size


# ---------------------------------------------------------------------------
# H structures


def test_singleton_is_a_masked_sum_of_b():
    rng = np.random.default_rng(0)
    h = SingletonH.create(LAYOUT, rng, hidden=(8,))
    b = random_batch(LAYOUT, 16, rng)
    want = np.array([sum(h.b.forward(b.hist[i, j])[0] for j in range(LAYOUT.width) if b.hist_mask[i, j])
                     for i in range(16)])
    np.testing.assert_allclose(h.forward(b.hist, b.hist_mask), want, atol=1e-12)


@pytest.mark.parametrize("make", [
    lambda rng: SingletonH.create(LAYOUT, rng, hidden=(8,)),
    lambda rng: PairwiseH.create(LAYOUT, rng, K=2, hidden=(8,)),
])
def test_empty_history_contributes_zero(make):
    h = make(np.random.default_rng(1))
    feats = np.random.default_rng(2).normal(size=(5, LAYOUT.width, LAYOUT.step_dim))
    assert np.all(h.forward(feats, np.zeros((5, LAYOUT.width))) == 0.0)


def test_pairwise_terms_cover_step_pairs():
    rng = np.random.default_rng(3)
    h = PairwiseH.create(LAYOUT, rng, K=2, hidden=(8,))
    b = random_batch(LAYOUT, 12, rng)
    W = LAYOUT.width
    want = []
    for i in range(12):
        x, m = b.window[i], b.window_mask[i]
        v = sum(h.nets[0].forward(x[j])[0] for j in range(W) if m[j])
        for k in (1, 2):
            v += sum(h.nets[k].forward(np.concatenate([x[j], x[j + k]]))[0]
                     for j in range(W - k) if m[j] and m[j + k])
        want.append(v)
    np.testing.assert_allclose(h.forward(b.window, b.window_mask), want, atol=1e-12)


def test_pairwise_lag_beyond_width_is_empty():
    lay = StepLayout(2, 2, max_n=2)
    h = PairwiseH.create(lay, np.random.default_rng(4), K=3, hidden=(4,))
    feats = np.ones((1, 2, lay.step_dim))
    v, caches = h.forward_cache(feats, np.ones((1, 2)))
    assert caches[2] is None and caches[3] is None
    with pytest.raises(ValueError):
        PairwiseH([])


def test_critic_value_is_h_plus_c():
    rng = np.random.default_rng(5)
    critic = HcCritic.create(LAYOUT, rng, hidden=(8,))
    b = random_batch(LAYOUT, 7, rng)
    np.testing.assert_allclose(critic.value(b.hist, b.hist_mask, b.cur),
                               critic.h.forward(b.hist, b.hist_mask) + critic.c.forward(b.cur)[:, 0])
    with pytest.raises(ValueError):
        HcCritic.create(LAYOUT, rng, structure="triple")
    with pytest.raises(ValueError):
        HcCritic.create(LAYOUT, rng, lam=-1.0)


# ---------------------------------------------------------------------------
# regulariser


def test_reg_loss_with_zero_h():
    h = SingletonH(linear(LAYOUT.step_dim))
    windows = np.ones((2, LAYOUT.width, LAYOUT.step_dim))
    loss, grads = reg_loss(h, windows, np.ones((2, LAYOUT.width)), np.array([1.0, 2.0]))
    assert loss == 2.5
    assert reg_loss(h, windows[:0], np.ones((0, LAYOUT.width)), np.zeros(0))[0] == 0.0


def test_reg_loss_vanishes_when_b_is_the_step_reward():
    # Per-step reward = x feature; the interval reward is their sum.
    lay = StepLayout(2, 2, max_n=4)
    b = random_batch(lay, 20, np.random.default_rng(6), interval_end_rate=1.0)
    h = SingletonH(linear(lay.step_dim, w=[1.0, 0, 0, 0, 0]))
    rewards = (b.window[..., 0] * b.window_mask).sum(axis=1)
    loss, _ = reg_loss(h, b.window, b.window_mask, rewards)
    assert loss == pytest.approx(0.0, abs=1e-24)


def test_reg_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    h = PairwiseH.create(LAYOUT, rng, K=1, hidden=(6,))
    b = random_batch(LAYOUT, 10, rng, interval_end_rate=1.0)
    r = rng.normal(size=10)
    _, grads = reg_loss(h, b.window, b.window_mask, r)
    for net, g in zip(h.nets, grads):
        def f(p, net=net):
            old = net.params.copy()
            net.params[:] = p
            out = reg_loss(h, b.window, b.window_mask, r)[0]
            net.params[:] = old
            return out
        assert relative_error(g, central_difference(f, net.params.copy()), floor=1e-4) < 1e-5


# ---------------------------------------------------------------------------
# TD loss


def test_td_gradient_for_a_linear_critic_by_hand():
    lay = StepLayout(1, 1, max_n=2)
    b = random_batch(lay, 1, np.random.default_rng(8))
    wc, wb = np.array([0.3, -0.2, 0.5]), np.array([0.7, 0.1, -0.4])
    critic = HcCritic(SingletonH(linear(3, wb, 0.2)), linear(3, wc, -0.1), lam=0.0)
    y = np.array([0.25])
    rep = hc_td_loss(critic, b, None, gamma=0.9, targets=y)
    hist_sum = (b.hist * b.hist_mask[..., None]).sum(axis=1)[0]
    q = wb @ hist_sum + 0.2 * b.hist_mask.sum() + wc @ b.cur[0] - 0.1
    delta = q - y[0]
    assert rep.td == pytest.approx(delta ** 2)
    np.testing.assert_allclose(rep.grads[0], np.r_[2 * delta * hist_sum, 2 * delta * b.hist_mask.sum()])
    np.testing.assert_allclose(rep.grads[1], np.r_[2 * delta * b.cur[0], 2 * delta])


def test_first_step_reduces_to_one_step_td_on_c():
    rng = np.random.default_rng(9)
    b = random_batch(LAYOUT, 8, rng)
    first = np.flatnonzero(b.phase == 0)
    sub = b.subset(first)
    critic = HcCritic.create(LAYOUT, rng, hidden=(8,), lam=0.0)
    y = rng.normal(size=len(sub))
    rep = hc_td_loss(critic, sub, None, gamma=0.9, targets=y)
    assert rep.td == pytest.approx(np.mean((critic.c.forward(sub.cur)[:, 0] - y) ** 2))
    assert np.all(rep.grads[0] == 0.0)


def test_matching_targets_give_zero_loss():
    rng = np.random.default_rng(10)
    b = random_batch(LAYOUT, 8, rng)
    critic = HcCritic.create(LAYOUT, rng, hidden=(8,), lam=0.0)
    y = critic.value(b.hist, b.hist_mask, b.cur)
    rep = hc_td_loss(critic, b, None, gamma=0.9, targets=y)
    assert rep.loss == 0.0 and all(np.all(g == 0.0) for g in rep.grads)


@pytest.mark.parametrize("structure", ["singleton", "pairwise"])
def test_td_loss_gradient_matches_finite_differences(structure):
    rng = np.random.default_rng(11)
    lay = StepLayout(2, 2, max_n=4, overlap_c=1)
    critic = HcCritic.create(lay, rng, structure=structure, K=1, hidden=(6,), lam=0.5)
    actor = Actor.create(lay, rng, hidden=(6,))
    b = random_batch(lay, 12, rng)
    y = hc_targets(critic, b, actor, 0.9)
    rep = hc_td_loss(critic, b, actor, 0.9, targets=y)
    flat = critic_params(critic)

    def f(p):
        set_critic_params(critic, p)
        out = hc_td_loss(critic, b, actor, 0.9, targets=y).loss
        set_critic_params(critic, flat)
        return out

    fd = central_difference(f, flat.copy())
    assert relative_error(np.concatenate(rep.grads), fd, floor=1e-4) < 1e-5
    assert rep.loss == pytest.approx(rep.td + 0.5 * rep.reg)


def test_targets_stop_at_terminals():
    rng = np.random.default_rng(12)
    b = random_batch(LAYOUT, 6, rng)
    b.terminal[:] = True
    critic = HcCritic.create(LAYOUT, rng, hidden=(8,))
    actor = Actor.create(LAYOUT, rng, hidden=(8,))
    np.testing.assert_array_equal(hc_targets(critic, b, actor, 0.99), b.reward)


def test_larger_lambda_lowers_the_regulariser():
    def train(lam):
        rng = np.random.default_rng(13)
        critic = HcCritic.create(LAYOUT, rng, hidden=(16,), lam=lam, lr=3e-3)
        b = random_batch(LAYOUT, 64, rng, interval_end_rate=0.5)
        y = rng.normal(size=64)
        for _ in range(300):
            critic.apply(hc_td_loss(critic, b, None, 0.9, targets=y).grads)
        ends = b.interval_end
        return reg_loss(critic.h, b.window[ends], b.window_mask[ends], b.reward[ends])[0]

    assert train(5.0) < train(0.0)


# ---------------------------------------------------------------------------
# policy gradient


class QuadraticC:
    """C(s, a, phase) = -(a - a_star)^2 summed over action dims (duck-types Approximator)."""

    def __init__(self, layout, a_star):
        self.layout = layout
        self.a_star = np.asarray(a_star, dtype=float)
        self.params = np.zeros(1)

    def copy(self):
        return QuadraticC(self.layout, self.a_star)

    def forward(self, x):
        return self.forward_cache(x)[0]

    def forward_cache(self, x):
        a = x[:, self.layout.action_slice()]
        return -((a - self.a_star) ** 2).sum(axis=1, keepdims=True), x

    def backward(self, x, grad_out, need_input=False):
        gx = np.zeros_like(x)
        gx[:, self.layout.action_slice()] = grad_out * -2.0 * (x[:, self.layout.action_slice()] - self.a_star)
        return np.zeros(1), gx


def constant_actor(layout, theta):
    net = Approximator(Architecture((layout.actor_dim, layout.action_dim)))
    net.biases[0][:] = theta
    return Actor(net, layout)


def test_policy_gradient_closed_form():
    theta, a_star = np.array([0.3, -0.6]), np.array([0.5, 0.1])
    b = random_batch(LAYOUT, 9, np.random.default_rng(14))
    critic = HcCritic(SingletonH(linear(LAYOUT.step_dim)), QuadraticC(LAYOUT, a_star))
    actor = constant_actor(LAYOUT, theta)
    g = hc_policy_gradient(critic, b, actor)
    bias = g[actor.net.final_layer_slice][-LAYOUT.action_dim:]
    np.testing.assert_allclose(bias, -2.0 * (theta - a_star))


def test_zero_c_gives_zero_policy_gradient():
    rng = np.random.default_rng(15)
    critic = HcCritic.create(LAYOUT, rng, hidden=(8,))
    critic.c.params[:] = 0.0
    g = hc_policy_gradient(critic, random_batch(LAYOUT, 5, rng), Actor.create(LAYOUT, rng, hidden=(8,)))
    assert np.all(g == 0.0)


@pytest.mark.parametrize("structure,c", [("singleton", 0), ("pairwise", 2)])
def test_action_gradient_ignores_h_exactly(structure, c):
    rng = np.random.default_rng(16)
    lay = StepLayout(2, 2, max_n=4, overlap_c=c)
    critic = HcCritic.create(lay, rng, structure=structure, K=2, hidden=(8,))
    b = random_batch(lay, 20, rng)
    full = full_critic_action_gradient(critic, b.window, b.window_mask, b.phase, lay)
    np.testing.assert_array_equal(full, hc_action_gradient(critic, b.hist, b.hist_mask, b.cur, lay))


def test_policy_gradient_matches_finite_differences():
    rng = np.random.default_rng(17)
    critic = HcCritic.create(LAYOUT, rng, hidden=(8,))
    actor = Actor.create(LAYOUT, rng, hidden=(8,))
    b = random_batch(LAYOUT, 6, rng)
    g = hc_policy_gradient(critic, b, actor)

    def f(p):
        old = actor.net.params.copy()
        actor.net.params[:] = p
        a = actor.act(b.state, b.phase)
        out = float(np.mean(critic.value(b.hist, b.hist_mask, LAYOUT.step(b.state, a, b.phase))))
        actor.net.params[:] = old
        return out

    assert relative_error(g, central_difference(f, actor.net.params.copy()), floor=1e-4) < 1e-5


# ---------------------------------------------------------------------------
# monolithic critic


def test_monolithic_without_history_weights_matches_hc():
    rng = np.random.default_rng(18)
    F = LAYOUT.step_dim
    mono = MonolithicCritic.create(LAYOUT, rng, hidden=(8,))
    mono.net.weights[0][F:] = 0.0
    c = Approximator(Architecture((F, 8, 1)))
    c.weights[0][...] = mono.net.weights[0][:F]
    c.biases[0][...] = mono.net.biases[0]
    c.weights[1][...] = mono.net.weights[1]
    c.biases[1][...] = mono.net.biases[1]
    critic = HcCritic(SingletonH.create(LAYOUT, rng, hidden=(8,)), c)
    actor = Actor.create(LAYOUT, rng, hidden=(8,))
    b = random_batch(LAYOUT, 10, rng)
    np.testing.assert_allclose(monolithic_trajectory_gradient(mono, b, actor), hc_policy_gradient(critic, b, actor),
                               atol=1e-14)


def test_monolithic_gradient_matches_finite_differences_and_is_deterministic():
    rng = np.random.default_rng(19)
    mono = MonolithicCritic.create(LAYOUT, rng, hidden=(8,))
    actor = Actor.create(LAYOUT, rng, hidden=(8,))
    b = random_batch(LAYOUT, 6, rng)
    g = monolithic_trajectory_gradient(mono, b, actor)
    np.testing.assert_array_equal(g, monolithic_trajectory_gradient(mono, b, actor))

    def f(p):
        old = actor.net.params.copy()
        actor.net.params[:] = p
        a = actor.act(b.state, b.phase)
        out = float(np.mean(mono.value(b.hist, b.hist_mask, LAYOUT.step(b.state, a, b.phase))))
        actor.net.params[:] = old
        return out

    assert relative_error(g, central_difference(f, actor.net.params.copy()), floor=1e-4) < 1e-5


def test_monolithic_rejects_wide_segments():
    mono = MonolithicCritic.create(LAYOUT, np.random.default_rng(20), hidden=(4,))
    W = LAYOUT.width + 1
    with pytest.raises(ValueError, match="width"):
        mono.featurize(np.zeros((1, W, LAYOUT.step_dim)), np.zeros((1, W)), np.zeros((1, LAYOUT.step_dim)))


def test_monolithic_td_loss_descends():
    rng = np.random.default_rng(21)
    mono = MonolithicCritic.create(LAYOUT, rng, hidden=(16,), lr=1e-3)
    actor = Actor.create(LAYOUT, rng, hidden=(8,))
    b = random_batch(LAYOUT, 32, rng)
    before = monolithic_td_loss(mono, b, actor, 0.0).td
    for _ in range(200):
        mono.apply(monolithic_td_loss(mono, b, actor, 0.0).grads)
    assert monolithic_td_loss(mono, b, actor, 0.0).td < before


# ---------------------------------------------------------------------------
# variance and target updates


def test_identical_samples_have_zero_variance():
    assert summed_sample_variance(np.tile([1.0, -2.0, 3.0], (5, 1))) == 0.0


def test_opposite_samples():
    g = np.array([0.5, -1.0, 2.0])
    assert summed_sample_variance(np.stack([g, -g])) == pytest.approx(2 * g @ g)


def test_variance_needs_two_samples():
    with pytest.raises(ValueError):
        summed_sample_variance(np.zeros((1, 3)))
    rng = np.random.default_rng(22)
    probe = GradientVarianceProbe(random_batch(LAYOUT, 1, rng), HcCritic.create(LAYOUT, rng, hidden=(4,)),
                                  MonolithicCritic.create(LAYOUT, rng, hidden=(4,)), Actor.create(LAYOUT, rng, hidden=(4,)))
    with pytest.raises(ValueError):
        estimate_gradient_variance(probe)


def test_variance_probe_reports_both_arms():
    rng = np.random.default_rng(23)
    probe = GradientVarianceProbe(random_batch(LAYOUT, 16, rng), HcCritic.create(LAYOUT, rng, hidden=(8,)),
                                  MonolithicCritic.create(LAYOUT, rng, hidden=(8,)), Actor.create(LAYOUT, rng, hidden=(8,)))
    out = estimate_gradient_variance(probe)
    assert set(out) == {"hc_variance", "monolithic_variance"}
    assert all(v > 0 for v in out.values())


def test_soft_update_examples():
    rng = np.random.default_rng(24)
    critic = HcCritic.create(LAYOUT, rng, hidden=(4,))
    for n in critic.live_nets:
        n.params += 1.0
    soft_update_targets(critic, 1.0)
    for t, l in zip(critic.target_nets, critic.live_nets):
        np.testing.assert_array_equal(t.params, l.params)
    before = [t.params.copy() for t in critic.target_nets]
    soft_update_targets(critic, 0.005)
    soft_update_targets(critic, 0.005)
    for t, p in zip(critic.target_nets, before):
        np.testing.assert_allclose(t.params, p, atol=1e-15)


def test_soft_update_is_geometric():
    live = Approximator.create((3, 4, 1), np.random.default_rng(25))
    target = Approximator(live.arch)
    d0 = np.abs(target.params - live.params).max()
    for k in range(1, 6):
        soft_update(target, live, 0.1)
        assert np.abs(target.params - live.params).max() == pytest.approx(d0 * 0.9 ** k)
    for bad in (0.0, 1.5):
        with pytest.raises(ValueError):
            soft_update(target, live, bad)
