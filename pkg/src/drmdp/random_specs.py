"""Random small specs for property checks."""
from __future__ import annotations

import numpy as np

from .core import (
    DrmdpSpec,
    EnumerationCapError,
    IntervalLaw,
    PolicyS,
    RewardFunctional,
    RewardKind,
    check_pi_condition,
    enumerate_segments,
)


def random_spec(
    seed: int | np.random.Generator,
    *,
    kind: str = "sum",
    max_states: int = 6,
    max_actions: int = 3,
    max_n: int = 4,
    overlap_c: int | None = None,
    deterministic: bool = False,
    fixed_length: bool = False,
    terminal_prob: float = 0.5,
    max_keys: int = 3000,
    max_tries: int = 500,
) -> DrmdpSpec:
    """Draw a spec whose reachable key set has at most ``max_keys`` entries.

    Specs over the key budget are redrawn, so small specs are overrepresented.
    ``overlap_c`` defaults to a draw from {0, 1, 2} for sum-like kinds and 0
    otherwise.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    kind = RewardKind(kind)
    for _ in range(max_tries):
        spec = _draw(rng, kind, max_states, max_actions, max_n, overlap_c, deterministic, fixed_length, terminal_prob)
        try:
            enumerate_segments(spec, cap=max_keys)
        except EnumerationCapError:
            continue
        return spec
    raise RuntimeError(f"no spec within {max_keys} keys after {max_tries} draws")


def random_pi_spec(seed: int | np.random.Generator, **kwargs) -> DrmdpSpec:
    """Like :func:`random_spec` but redrawn until the past-invariance check passes."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    for _ in range(kwargs.pop("max_pi_tries", 500)):
        spec = random_spec(rng, **kwargs)
        if check_pi_condition(spec).holds:
            return spec
    raise RuntimeError("no past-invariant spec found")


def random_policy(spec: DrmdpSpec, seed: int | np.random.Generator) -> PolicyS:
    """Stochastic phase-indexed policy with Dirichlet rows over each state's actions."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    t = np.zeros((spec.n_states, spec.max_phase, spec.n_actions))
    for s, acts in enumerate(spec.actions):
        t[s][:, list(acts)] = rng.dirichlet(np.ones(len(acts)), size=spec.max_phase)
    return PolicyS(t)


def _draw(rng, kind, max_states, max_actions, max_n, overlap_c, deterministic, fixed_length, terminal_prob):
    S = int(rng.integers(2, max_states + 1))
    A = max_actions
    has_terminal = rng.random() < terminal_prob
    terminal = {S - 1} if has_terminal else set()
    live = [s for s in range(S) if s not in terminal]
    actions = []
    P = np.zeros((S, A, S))
    for s in range(S):
        if s in terminal:
            actions.append((0,))
            P[s, 0, s] = 1.0
            continue
        k = int(rng.integers(1, A + 1))
        acts = tuple(sorted(rng.choice(A, size=k, replace=False).tolist()))
        actions.append(acts)
        for a in acts:
            m = 1 if deterministic else int(rng.integers(1, 3))
            succ = rng.choice(S, size=min(m, S), replace=False)
            P[s, a, succ] = rng.dirichlet(np.ones(len(succ))) if len(succ) > 1 else 1.0
    mu = np.zeros(S)
    starts = rng.choice(live, size=min(len(live), int(rng.integers(1, 3))), replace=False)
    mu[starts] = rng.dirichlet(np.ones(len(starts))) if len(starts) > 1 else 1.0
    if fixed_length:
        law = IntervalLaw.fixed(int(rng.integers(1, max_n + 1)))
    else:
        n_max = int(rng.integers(1, max_n + 1))
        support = sorted(set(rng.choice(np.arange(1, n_max + 1), size=int(rng.integers(1, n_max + 1))).tolist()) | {n_max})
        probs = rng.dirichlet(np.ones(len(support)))
        probs[-1] = 1.0 - probs[:-1].sum()
        law = IntervalLaw(tuple(support), tuple(probs))
    sum_like = kind in (RewardKind.SUM, RewardKind.WEIGHTED_SUM)
    c = overlap_c if overlap_c is not None else (int(rng.integers(0, 3)) if sum_like else 0)
    step_reward = np.round(rng.uniform(-1.0, 1.0, size=(S, A)), 3)
    weights = None
    if kind is RewardKind.WEIGHTED_SUM:
        weights = tuple(np.round(rng.uniform(0.0, 1.0, size=c + law.max_length), 3).tolist())
    reward = RewardFunctional(kind, step_reward=step_reward, weights=weights)
    return DrmdpSpec(
        actions=tuple(actions),
        transition=P,
        initial=mu,
        interval_law=law,
        reward=reward,
        gamma=float(np.round(rng.uniform(0.5, 0.95), 3)),
        overlap_c=c,
        terminal=frozenset(terminal),
    )


__all__ = ["random_pi_spec", "random_policy", "random_spec"]
