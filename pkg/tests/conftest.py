"""Shared small specs for the unit tests."""
from __future__ import annotations

import numpy as np
import pytest

from drmdp.core import DrmdpSpec, IntervalLaw, RewardFunctional, RewardKind


def graph_spec(edges, step_reward, initial, *, kind="sum", n=1, gamma=0.9, terminal=(), c=0, law=None,
               weights=None, n_states=None, n_actions=None):
    """Spec from ``{(s, a): {s2: p}}`` edges; terminal states get action 0 as a self-loop."""
    S = n_states or 1 + max(max(s for s, _ in edges), max(t for d in edges.values() for t in d))
    A = n_actions or 1 + max(a for _, a in edges)
    P = np.zeros((S, A, S))
    avail = [[] for _ in range(S)]
    for (s, a), succ in edges.items():
        for t, p in succ.items():
            P[s, a, t] = p
        avail[s].append(a)
    for s in terminal:
        P[s, 0, s] = 1.0
        avail[s] = [0]
    mu = np.zeros(S)
    for s, p in initial.items():
        mu[s] = p
    r = np.zeros((S, A))
    for (s, a), v in step_reward.items():
        r[s, a] = v
    return DrmdpSpec(
        actions=tuple(tuple(a) for a in avail),
        transition=P,
        initial=mu,
        interval_law=law or IntervalLaw.fixed(n),
        reward=RewardFunctional(kind, step_reward=r, weights=weights),
        gamma=gamma,
        overlap_c=c,
        terminal=frozenset(terminal),
    )


def max_order_flip_spec(gamma: float = 0.9) -> DrmdpSpec:
    """Past-invariant Max spec whose best action at M depends on the history.

    States H0, H1 (start, band 0 and 0.9) lead to M. At M action x pays 1 and
    ends the episode; y pays 0.5 and enters G -> G2 -> T, a second interval
    worth 10 * 0.4. Under H1 the Max caps x's advantage, so y wins.
    """
    H0, H1, M, G, G2, T = range(6)
    h, x, y, g = range(4)
    edges = {
        (H0, h): {M: 1.0}, (H1, h): {M: 1.0},
        (M, x): {T: 1.0}, (M, y): {G: 1.0},
        (G, g): {G2: 1.0}, (G2, g): {T: 1.0},
    }
    rewards = {(H1, h): 0.9, (M, x): 1.0, (M, y): 0.5, (G, g): 0.4, (G2, g): 0.0}
    return graph_spec(edges, rewards, {H0: 0.5, H1: 0.5}, kind="max", n=2, gamma=gamma, terminal=(T,))


@pytest.fixture
def chain3():
    """Deterministic 3-state chain 0 -> 1 -> 2 -> 0 with two actions and unit per-step reward on action 1."""
    edges = {(s, a): {(s + 1) % 3: 1.0} for s in range(3) for a in (0, 1)}
    return graph_spec(edges, {(s, 1): 1.0 for s in range(3)}, {0: 1.0}, n=2, gamma=0.8)
