"""JSON text format for :class:`DrmdpSpec`.

Layout (all sections required unless marked optional)::

    {
      "states": ["A", "B", ...],              # names, index = state id
      "actions": {"names": [...], "available": [[0, 1], [2], ...]},
      "transition": [[s, a, s2, p], ...],      # nonzero entries only
      "initial": [[s, p], ...],
      "interval_law": [[n, p], ...],
      "reward": {"kind": "sum", "step_reward": [[s, a, r], ...]}
              | {"kind": "weighted_sum", "step_reward": ..., "weights": [...]}
              | {"kind": "tabulated", "table": [[[[s, a] | null, ...], r], ...]},
      "gamma": 0.99,
      "overlap_c": 0,
      "terminal": [s, ...]                     # optional
    }

A ``null`` step in a tabulated key stands for the padding step before the
episode start. Floats are written with ``repr`` precision so values with up
to 15 significant digits round-trip exactly.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import PAD, DrmdpSpec, IntervalLaw, RewardFunctional, RewardKind, SpecError


def spec_to_dict(spec: DrmdpSpec) -> dict:
    S, A = spec.n_states, spec.n_actions
    P = spec.transition
    transition = [
        [s, a, int(t), float(P[s, a, t])] for s in range(S) for a in spec.actions[s] for t in np.flatnonzero(P[s, a] > 0)
    ]
    r = spec.reward
    reward: dict = {"kind": r.kind.value}
    if r.kind is RewardKind.TABULATED:
        reward["table"] = [[[None if st == PAD else list(st) for st in k], v] for k, v in r.table.items()]
    else:
        reward["step_reward"] = [
            [s, a, float(r.step_reward[s, a])] for s in range(S) for a in range(A) if r.step_reward[s, a] != 0.0
        ]
        reward["shape"] = list(r.step_reward.shape)
        if r.kind is RewardKind.WEIGHTED_SUM:
            reward["weights"] = list(r.weights)
    return {
        "states": list(spec.state_names) if spec.state_names else [str(s) for s in range(S)],
        "actions": {
            "names": list(spec.action_names) if spec.action_names else [str(a) for a in range(A)],
            "available": [list(a) for a in spec.actions],
        },
        "transition": transition,
        "initial": [[int(s), float(spec.initial[s])] for s in np.flatnonzero(spec.initial > 0)],
        "interval_law": [[n, p] for n, p in zip(spec.interval_law.support, spec.interval_law.probs)],
        "reward": reward,
        "gamma": spec.gamma,
        "overlap_c": spec.overlap_c,
        "terminal": sorted(spec.terminal),
    }


def spec_from_dict(data: dict) -> DrmdpSpec:
    try:
        states = list(data["states"])
        names_a = list(data["actions"]["names"])
        available = [tuple(a) for a in data["actions"]["available"]]
        S, A = len(states), len(names_a)
        P = np.zeros((S, A, S))
        for s, a, t, p in data["transition"]:
            P[s, a, t] = p
        mu = np.zeros(S)
        for s, p in data["initial"]:
            mu[s] = p
        law = IntervalLaw(*zip(*data["interval_law"]))
        rd = data["reward"]
        kind = RewardKind(rd["kind"])
        if kind is RewardKind.TABULATED:
            table = {tuple(PAD if st is None else tuple(st) for st in k): v for k, v in rd["table"]}
            reward = RewardFunctional(kind, table=table)
        else:
            step = np.zeros(tuple(rd.get("shape", (S, A))))
            for s, a, v in rd["step_reward"]:
                step[s, a] = v
            reward = RewardFunctional(kind, step_reward=step, weights=rd.get("weights"))
        return DrmdpSpec(
            actions=tuple(available),
            transition=P,
            initial=mu,
            interval_law=law,
            reward=reward,
            gamma=float(data["gamma"]),
            overlap_c=int(data["overlap_c"]),
            terminal=frozenset(data.get("terminal", ())),
            state_names=tuple(states),
            action_names=tuple(names_a),
        )
    except (KeyError, TypeError) as exc:
        raise SpecError(f"malformed spec document: {exc!r}") from exc


def dumps(spec: DrmdpSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=1)


def loads(text: str) -> DrmdpSpec:
    return spec_from_dict(json.loads(text))


def save_spec(spec: DrmdpSpec, path) -> None:
    Path(path).write_text(dumps(spec))


def load_spec(path) -> DrmdpSpec:
    return loads(Path(path).read_text())


__all__ = ["dumps", "load_spec", "loads", "save_spec", "spec_from_dict", "spec_to_dict"]
