"""Independent reference solvers used to freeze expected values in the tests.

Nothing here imports the tabular engine; each oracle works from the raw
spec arrays only.
"""
from __future__ import annotations

import itertools

import numpy as np

from drmdp.core import DrmdpSpec, PolicyS, sample_episode, discounted_return


def per_step_arrays(spec: DrmdpSpec):
    """(P, r, live) for the one-step MDP of a spec whose intervals all have length 1."""
    S, A = spec.n_states, spec.n_actions
    r = np.zeros((S, A))
    for s in range(S):
        for a in spec.actions[s]:
            r[s, a] = spec.reward.per_step((s, a))
    live = np.array([s not in spec.terminal for s in range(S)], dtype=float)
    return spec.transition, r, live


def classical_q(spec: DrmdpSpec, policy: PolicyS, tol: float = 1e-13) -> np.ndarray:
    """Q^pi of the per-step MDP by plain value iteration; terminal states are worth 0."""
    P, r, live = per_step_arrays(spec)
    pi = policy.table[:, 0, :]
    q = np.zeros_like(r)
    while True:
        v = (pi * q).sum(axis=1) * live
        new = r + spec.gamma * P @ v
        if np.max(np.abs(new - q)) < tol:
            return new
        q = new


def classical_optimal_q(spec: DrmdpSpec, tol: float = 1e-13) -> np.ndarray:
    """Q* of the per-step MDP by value iteration over available actions."""
    P, r, live = per_step_arrays(spec)
    avail = np.full(r.shape, -np.inf)
    for s, acts in enumerate(spec.actions):
        avail[s, list(acts)] = 0.0
    q = np.zeros_like(r)
    while True:
        v = np.max(q + avail, axis=1) * live
        new = r + spec.gamma * P @ v
        if np.max(np.abs(new - q)) < tol:
            return new
        q = new


def classical_policy_iteration(spec: DrmdpSpec) -> np.ndarray:
    """Greedy action per state from Howard policy iteration (lowest id on ties)."""
    P, r, live = per_step_arrays(spec)
    S = spec.n_states
    choice = np.array([acts[0] for acts in spec.actions])
    while True:
        Ppi = P[np.arange(S), choice] * live[None, :]
        v = np.linalg.solve(np.eye(S) - spec.gamma * Ppi, r[np.arange(S), choice])
        q = r + spec.gamma * P @ (v * live)
        new = choice.copy()
        for s, acts in enumerate(spec.actions):
            best = max(q[s, a] for a in acts)
            new[s] = min(a for a in acts if q[s, a] >= best - 1e-10)
        if np.array_equal(new, choice):
            return choice
        choice = new


def monte_carlo_return(spec: DrmdpSpec, policy, episodes: int, horizon: int, seed: int = 0):
    """Mean and standard error of the discounted delayed return over sampled episodes."""
    vals = np.array([discounted_return(sample_episode(spec, policy, seed + i, horizon), spec.gamma)
                     for i in range(episodes)])
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(episodes))


def xor_policy_values(gamma: float) -> dict[str, float]:
    """Brute-force the XOR construction: the start fixes i at random, B picks j, reward i xor j at step 1.

    A phase-only policy at B cannot see i, so it must commit to one j.
    """
    reward = {(i, j): float(i ^ j) for i, j in itertools.product((0, 1), repeat=2)}
    best_tau = np.mean([max(reward[(i, j)] for j in (0, 1)) for i in (0, 1)])
    best_s = max(np.mean([reward[(i, j)] for i in (0, 1)]) for j in (0, 1))
    return {"PiTau": gamma * best_tau, "PiS": gamma * best_s}
