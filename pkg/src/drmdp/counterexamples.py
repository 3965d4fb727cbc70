"""Small hand-built MDPs that separate policy classes and critic objectives.

* ``XorPolicyClass``: the interval reward is the XOR of the first and second
  choice, so the best phase-indexed policy earns half of the best
  history-dependent one.
* ``FixedPointBias``: a sum-form task where the ordinary (s, a) critic,
  even with on-policy data, prefers the worse first action.
* ``OptimalNotInPiS``: a past-invariant task whose optimal policy still
  needs the history.

Each fixture carries a map of expected quantities that is recomputed by the
tabular engine at construction; a mismatch above 1e-9 raises.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DrmdpSpec,
    EnumerationCapError,
    IntervalLaw,
    PolicyS,
    PolicyTau,
    RewardFunctional,
    RewardKind,
    TrajectorySegment,
    check_pi_condition,
)
from .tabular import (
    evaluate_policy,
    greedy_from_state_q,
    performance,
    policy_iteration,
    policy_value,
    segment_index,
    vanilla_q_fixed_point,
)

FIXTURE_NAMES = ("XorPolicyClass", "FixedPointBias", "OptimalNotInPiS")
EXPECTED_ATOL = 1e-9


class FixtureMismatch(AssertionError):
    pass


@dataclass(frozen=True)
class Expected:
    value: float
    source: str  # "stated" (taken from the construction) or "derived" (hand computation)


@dataclass(frozen=True, eq=False)
class NamedFixture:
    name: str
    spec: DrmdpSpec
    expected: dict[str, Expected]
    computed: dict[str, float] = field(default_factory=dict)

    def state(self, label: str) -> int:
        return self.spec.state_names.index(label)

    def action(self, label: str) -> int:
        return self.spec.action_names.index(label)

    def table_rows(self) -> list[tuple[str, float, float, str]]:
        return [(k, e.value, self.computed[k], e.source) for k, e in self.expected.items()]


def _spec(states, actions, edges, initial, reward, terminal, gamma, n=2):
    """``edges``: {(state, action): next_state}; terminal states get a self-loop 'stay'."""
    names_s = tuple(states)
    names_a = tuple(actions) + ("stay",)
    S, A = len(names_s), len(names_a)
    stay = A - 1
    P = np.zeros((S, A, S))
    avail = [[] for _ in range(S)]
    for (s, a), t in edges.items():
        i, j = names_s.index(s), names_a.index(a)
        P[i, j, names_s.index(t)] = 1.0
        avail[i].append(j)
    for s in terminal:
        i = names_s.index(s)
        P[i, stay, i] = 1.0
        avail[i].append(stay)
    mu = np.array([initial.get(s, 0.0) for s in names_s])
    return DrmdpSpec(
        actions=tuple(tuple(a) for a in avail),
        transition=P,
        initial=mu,
        interval_law=IntervalLaw.fixed(n),
        reward=reward(names_s, names_a),
        gamma=gamma,
        terminal=frozenset(names_s.index(s) for s in terminal),
        state_names=names_s,
        action_names=names_a,
    )


def _tabulated(entries):
    def make(names_s, names_a):
        table = {
            tuple((names_s.index(s), names_a.index(a)) for s, a in steps): v for steps, v in entries.items()
        }
        return RewardFunctional(RewardKind.TABULATED, table=table)

    return make


def _xor(gamma):
    reward = _tabulated({
        (("A0", "a0"), ("B", "b0")): 0.0,
        (("A0", "a0"), ("B", "b1")): 1.0,
        (("A1", "a1"), ("B", "b0")): 1.0,
        (("A1", "a1"), ("B", "b1")): 0.0,
    })
    spec = _spec(
        ["A0", "A1", "B", "C"],
        ["a0", "a1", "b0", "b1"],
        {("A0", "a0"): "B", ("A1", "a1"): "B", ("B", "b0"): "C", ("B", "b1"): "C"},
        {"A0": 0.5, "A1": 0.5},
        reward,
        ["C"],
        gamma,
    )
    expected = {
        "best_PiTau": Expected(gamma * 1.0, "derived"),
        "best_PiS": Expected(gamma * 0.5, "derived"),
        "pi_condition_holds": Expected(0.0, "stated"),
    }
    return spec, expected


def _fixed_point_bias(gamma):
    names_s = ["A", "B", "C", "D", "C0", "D0"]
    names_a = ["a0", "a1", "b", "c", "d"]

    def reward(ns, na):
        r = np.zeros((len(ns), len(na)))
        r[ns.index("A"), na.index("a0")] = 0.01
        r[ns.index("A"), na.index("a1")] = 1.0
        r[ns.index("B"), na.index("b")] = -1.0
        return RewardFunctional(RewardKind.SUM, step_reward=r)

    spec = _spec(
        names_s,
        names_a,
        {("A", "a0"): "C", ("A", "a1"): "D", ("B", "b"): "D", ("C", "c"): "C0", ("D", "d"): "D0"},
        {"A": 0.5, "B": 0.5},
        reward,
        ["C0", "D0"],
        gamma,
    )
    expected = {
        "r(B,b)": Expected(-1.0, "stated"),
        "best_PiS": Expected(0.0, "stated"),
        "J(a0 at A)": Expected(-0.495 * gamma, "stated"),
        "Q(A,a1) trajectory": Expected(gamma, "stated"),
        "pi_condition_holds": Expected(1.0, "stated"),
    }
    return spec, expected


def _optimal_not_in_pis(gamma):
    reward = _tabulated({
        (("Ab", "a10"), ("B", "b+1")): 10.0,
        (("Ab", "a10"), ("B", "b-1")): -10.0,
        (("Al", "a0.1"), ("B", "b+1")): 0.1,
        (("Al", "a0.1"), ("B", "b-1")): -0.1,
        (("C-", "tau"),): 5.0,
    })
    spec = _spec(
        ["Ab", "Al", "B", "C+", "C-", "T"],
        ["a10", "a0.1", "b+1", "b-1", "tau"],
        {("Ab", "a10"): "B", ("Al", "a0.1"): "B", ("B", "b+1"): "C+", ("B", "b-1"): "C-", ("C-", "tau"): "T"},
        {"Ab": 0.5, "Al": 0.5},
        reward,
        ["C+", "T"],
        gamma,
    )
    g = gamma
    expected = {
        "r(tau)": Expected(5.0, "stated"),
        "best_PiTau": Expected(0.5 * 10 * g + 0.5 * (-0.1 * g + 5 * g * g), "derived"),
        "best_PiS": Expected(max(0.5 * (10 + 0.1) * g, 0.5 * (-10.1 * g + 10 * g * g)), "derived"),
        "pi_condition_holds": Expected(1.0, "stated"),
    }
    return spec, expected


_BUILDERS = {"XorPolicyClass": _xor, "FixedPointBias": _fixed_point_bias, "OptimalNotInPiS": _optimal_not_in_pis}


def _compute(name: str, spec: DrmdpSpec, keys) -> dict[str, float]:
    out = {}
    names_s, names_a = spec.state_names, spec.action_names
    for key in keys:
        if key == "best_PiTau":
            out[key] = best_in_class(spec, "PiTau")[1]
        elif key == "best_PiS":
            out[key] = best_in_class(spec, "PiS")[1]
        elif key == "pi_condition_holds":
            out[key] = float(check_pi_condition(spec).holds)
        elif key == "r(B,b)":
            out[key] = spec.reward.per_step((names_s.index("B"), names_a.index("b")))
        elif key == "r(tau)":
            out[key] = spec.reward(TrajectorySegment(((names_s.index("C-"), names_a.index("tau")),)))
        elif key == "J(a0 at A)":
            out[key] = policy_value(spec, _fpb_policy(spec, 0.0))
        elif key == "Q(A,a1) trajectory":
            q = evaluate_policy(spec, _fpb_policy(spec, 0.5))
            out[key] = q[((names_s.index("A"), names_a.index("a1")),)]
        else:  # pragma: no cover
            raise KeyError(key)
    return out


def build_fixture(name: str, gamma: float = 0.99) -> NamedFixture:
    """Construct a named fixture and check its expected map against the engine."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; choose from {FIXTURE_NAMES}") from None
    spec, expected = builder(gamma)
    computed = _compute(name, spec, expected)
    for key, exp in expected.items():
        if not abs(computed[key] - exp.value) <= EXPECTED_ATOL:
            raise FixtureMismatch(f"{name}: {key} expected {exp.value!r}, engine gives {computed[key]!r}")
    return NamedFixture(name, spec, expected, computed)


# ---------------------------------------------------------------------------
# exhaustive search over deterministic policies


def best_in_class(fixture_or_spec, policy_class: str, cap: int = 1 << 16):
    """Best deterministic policy in ``PiS`` or ``PiTau`` by exhaustive enumeration.

    Only decision points reachable from the start with more than one
    available action are enumerated. Returns (policy, J).
    """
    spec = fixture_or_spec.spec if isinstance(fixture_or_spec, NamedFixture) else fixture_or_spec
    idx = segment_index(spec)
    if policy_class == "PiS":
        points = sorted({(s, hist.body_len) for hist, s in idx.contexts})
    elif policy_class == "PiTau":
        points = sorted(set(idx.contexts), key=lambda ctx: (ctx[0].steps, ctx[1]))
    else:
        raise ValueError(f"policy_class must be 'PiS' or 'PiTau', got {policy_class!r}")

    def state_of(pt):
        return pt[0] if policy_class == "PiS" else pt[1]

    free = [pt for pt in points if len(spec.actions[state_of(pt)]) > 1]
    total = math.prod(len(spec.actions[state_of(pt)]) for pt in free)
    if total > cap:
        raise EnumerationCapError(f"{total} deterministic {policy_class} policies exceed cap {cap}")
    best = (None, -math.inf)
    for combo in itertools.product(*(spec.actions[state_of(pt)] for pt in free)):
        policy = _make_policy(spec, policy_class, dict(zip(free, combo)))
        j = policy_value(spec, policy)
        if j > best[1] + 1e-12:
            best = (policy, j)
    return best


def _make_policy(spec, policy_class, assignment):
    if policy_class == "PiS":
        choice = np.array([[acts[0]] * spec.max_phase for acts in spec.actions])
        for (s, phase), a in assignment.items():
            choice[s, phase] = a
        return PolicyS.deterministic(spec, choice)
    table = {}
    for (hist, s), a in assignment.items():
        p = np.zeros(spec.n_actions)
        p[a] = 1.0
        table[(hist, s)] = p
    fallback = {s: (acts[0],) for s, acts in enumerate(spec.actions)}
    return PolicyTau(table, spec.n_actions, fallback)


# ---------------------------------------------------------------------------
# fixed-point bias


def _fpb_policy(spec: DrmdpSpec, p: float) -> PolicyS:
    A = spec.state_names.index("A")
    a0, a1 = spec.action_names.index("a0"), spec.action_names.index("a1")
    probs = np.zeros(spec.n_actions)
    probs[a0], probs[a1] = 1.0 - p, p
    return PolicyS.from_state_probs(spec, {A: probs})


def stated_vanilla_values(p: float, gamma: float) -> dict[str, float]:
    """Closed forms for the ordinary critic as stated with the construction."""
    return {
        "Q(C,c)": 0.01,
        "Q(A,a0)": 0.01 * gamma,
        "Q(D,d)": 0.5 * (p - 1.0),
        "Q(A,a1)": 0.5 * gamma * (p - 1.0),
    }


def conditioned_vanilla_values(p: float, gamma: float) -> dict[str, float]:
    """Closed forms when the (D, d) entry is conditioned on actually visiting D.

    D is reached from A with probability p/2 (interval reward +1) and from B
    with probability 1/2 (interval reward -1), so the least-squares value is
    (p - 1) / (p + 1). (A, a1) is never visited at p = 0.
    """
    qd = (p - 1.0) / (p + 1.0)
    return {
        "Q(C,c)": 0.01,
        "Q(A,a0)": 0.01 * gamma,
        "Q(D,d)": qd,
        "Q(A,a1)": gamma * qd if p > 0.0 else math.nan,
    }


@dataclass
class FixedPointBiasReport:
    gamma: float
    vanilla_final_J: float
    vanilla_policies: list[float]  # pi(a1 | A) per round
    new_q_final_J: float
    new_q_returns: list[float]
    p_sweep: dict[float, dict[str, float]]
    stated: dict[float, dict[str, float]]

    def lines(self) -> list[str]:
        g = self.gamma
        out = [
            f"gamma={g}",
            f"vanilla greedy J = {self.vanilla_final_J:.12g} (stated -0.495*gamma = {-0.495 * g:.12g})",
            f"trajectory-Q policy iteration J = {self.new_q_final_J:.12g} (stated 0)",
        ]
        for p, vals in self.p_sweep.items():
            for k, v in vals.items():
                out.append(f"p={p:<4} {k:8s} computed={v:.12g} stated={self.stated[p][k]:.12g}")
        return out


def reproduce_fixed_point_bias(
    gamma: float = 0.99,
    init_p: float = 1.0,
    p_values=(0.0, 0.5, 1.0),
    max_rounds: int = 20,
    exploration: float = 1e-9,
) -> FixedPointBiasReport:
    """Ordinary-critic policy iteration vs trajectory-Q policy iteration on ``FixedPointBias``.

    The improvement loop fits the ordinary critic to (nearly) on-policy data:
    ``exploration`` mixes in the uniform policy so that the action the
    current policy never takes still has a defined value. The ``p_values``
    sweep uses the same vanishing exploration, so every entry is defined and
    differs from its exact on-policy limit by O(exploration).
    """
    fx = build_fixture("FixedPointBias", gamma)
    spec = fx.spec
    A, a1 = fx.state("A"), fx.action("a1")
    policy = _fpb_policy(spec, init_p)
    history = [float(policy.table[A, 0, a1])]
    for _ in range(max_rounds):
        q = vanilla_q_fixed_point(spec, policy, exploration=exploration)
        new = greedy_from_state_q(spec, q)
        if new.same_as(policy):
            break
        policy = new
        history.append(float(policy.table[A, 0, a1]))
    vanilla_j = policy_value(spec, policy)

    pi_result = policy_iteration(spec, _fpb_policy(spec, init_p))
    new_j = pi_result.returns[-1]

    names = {"Q(C,c)": ("C", "c"), "Q(A,a0)": ("A", "a0"), "Q(D,d)": ("D", "d"), "Q(A,a1)": ("A", "a1")}
    sweep, stated = {}, {}
    for p in p_values:
        q = vanilla_q_fixed_point(spec, _fpb_policy(spec, p), exploration=exploration)
        sweep[p] = {k: q[(fx.state(s), fx.action(a))] for k, (s, a) in names.items()}
        stated[p] = stated_vanilla_values(p, gamma)
    return FixedPointBiasReport(gamma, vanilla_j, history, new_j, pi_result.returns, sweep, stated)


# ---------------------------------------------------------------------------
# off-policy bias


@dataclass
class OffPolicyExample:
    spec: DrmdpSpec
    behaviors: tuple[PolicyS, PolicyS]
    last_state: int
    last_actions: tuple[int, int]


def off_policy_example(gamma: float = 0.99, skew: float = 0.9) -> OffPolicyExample:
    """Two-step interval X -> Y -> T with two behaviours.

    At X, action u pays 1 and v pays 0; both lead to Y, where y0 and y1 pay
    0 and end the episode. Behaviour 1 plays u then y0 with probability
    ``skew``; behaviour 2 plays v then y0 with probability ``1 - skew``.
    Under the mixture the history value seen after (Y, y0) is ``skew`` and
    after (Y, y1) is ``1 - skew``.
    """
    if not 0.0 <= skew <= 1.0:
        raise ValueError("skew must lie in [0, 1]")

    def reward(ns, na):
        r = np.zeros((len(ns), len(na)))
        r[ns.index("X"), na.index("u")] = 1.0
        return RewardFunctional(RewardKind.SUM, step_reward=r)

    spec = _spec(
        ["X", "Y", "T"],
        ["u", "v", "y0", "y1"],
        {("X", "u"): "Y", ("X", "v"): "Y", ("Y", "y0"): "T", ("Y", "y1"): "T"},
        {"X": 1.0},
        reward,
        ["T"],
        gamma,
    )
    X, Y = spec.state_names.index("X"), spec.state_names.index("Y")
    u, v, y0, y1 = (spec.action_names.index(a) for a in ("u", "v", "y0", "y1"))

    def behavior(first, p_y0):
        t = np.zeros((spec.n_states, spec.max_phase, spec.n_actions))
        t[X, :, first] = 1.0
        t[Y, :, y0], t[Y, :, y1] = p_y0, 1.0 - p_y0
        t[spec.state_names.index("T"), :, spec.n_actions - 1] = 1.0
        return PolicyS(t)

    return OffPolicyExample(spec, (behavior(u, skew), behavior(v, 1.0 - skew)), Y, (y0, y1))


def fixture_spec(name: str, gamma: float = 0.99) -> DrmdpSpec:
    return build_fixture(name, gamma).spec


__all__ = [
    "FIXTURE_NAMES",
    "Expected",
    "FixedPointBiasReport",
    "FixtureMismatch",
    "NamedFixture",
    "OffPolicyExample",
    "best_in_class",
    "build_fixture",
    "conditioned_vanilla_values",
    "fixture_spec",
    "off_policy_example",
    "reproduce_fixed_point_bias",
    "stated_vanilla_values",
]
