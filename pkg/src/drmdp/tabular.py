"""Exact tabular computation of the trajectory-indexed Q-function.

Keys are reachable segments tau_{t_i-c:t+1}: the overlap prefix plus the
current interval up to and including (s_t, a_t). The Bellman recursion over
keys has two branches per successor state: the interval continues (the key
grows by one step) or it ends with the hazard probability, paying the
interval reward and restarting from the last ``c`` steps.

``exact_q_by_enumeration`` is kept independent of the sweep operator: it
enumerates continuation paths to the end of each interval and solves the
inter-interval recursion as a dense linear system.
"""
from __future__ import annotations

import csv
import math
import warnings
import weakref
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import (
    PAD,
    AnyPolicy,
    DrmdpSpec,
    EnumerationCapError,
    PolicyS,
    PolicyTau,
    RewardKind,
    TrajectorySegment,
    action_probs,
    check_pi_condition,
    enumerate_segments,
    initial_prefix,
    truncated_reward,
)

DEFAULT_CAP = 200_000


class ConvergenceError(RuntimeError):
    pass


class HorizonError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# key index and transition structure


class SegmentIndex:
    """Reachable keys of a spec plus the policy-independent part of the recursion."""

    def __init__(self, spec: DrmdpSpec, cap: int = DEFAULT_CAP):
        self.spec = spec
        self.keys = enumerate_segments(spec, cap)
        self.pos = {k: i for i, k in enumerate(self.keys)}
        c = spec.overlap_c
        law = spec.interval_law
        n = len(self.keys)
        self.reward = np.zeros(n)
        self.unpaid_truncations = 0
        rows, cols, coef, c_state, c_phase, c_action, c_ctx = [], [], [], [], [], [], []
        self.contexts: list[tuple[TrajectorySegment, int]] = []
        ctx_ids: dict[tuple[TrajectorySegment, int], int] = {}

        def ctx_id(hist, s):
            k = (hist, s)
            if k not in ctx_ids:
                ctx_ids[k] = len(self.contexts)
                self.contexts.append(k)
            return ctx_ids[k]

        for i, key in enumerate(self.keys):
            s, a = key.last
            k = key.body_len
            h = law.hazard(k)
            full = self.spec.reward(key) if h > 0.0 else 0.0
            for s2, p in spec.successors(s, a):
                if s2 in spec.terminal:
                    value, paid = truncated_reward(spec, key)
                    self.unpaid_truncations += not paid
                    self.reward[i] += p * value
                    continue
                branches = []
                if h > 0.0:
                    self.reward[i] += p * h * full
                    branches.append((key.overlap_tail(c), p * h))
                if h < 1.0:
                    branches.append((key, p * (1.0 - h)))
                for hist, w in branches:
                    cid = ctx_id(hist, s2)
                    for a2 in spec.actions[s2]:
                        rows.append(i)
                        cols.append(self.pos[hist.extend((s2, a2))])
                        coef.append(w)
                        c_state.append(s2)
                        c_phase.append(hist.body_len)
                        c_action.append(a2)
                        c_ctx.append(cid)
        self.rows = np.array(rows, dtype=np.int64)
        self.cols = np.array(cols, dtype=np.int64)
        self.coef = np.array(coef)
        self.ctx_state = np.array(c_state, dtype=np.int64)
        self.ctx_phase = np.array(c_phase, dtype=np.int64)
        self.ctx_action = np.array(c_action, dtype=np.int64)
        self.ctx_id = np.array(c_ctx, dtype=np.int64)

        start = initial_prefix(c)
        self.start_keys, self.start_prob, self.start_ctx = [], [], []
        for s0 in spec.start_states():
            cid = ctx_id(start, s0)
            for a0 in spec.actions[s0]:
                self.start_keys.append(self.pos[start.extend((s0, a0))])
                self.start_prob.append(float(spec.initial[s0]))
                self.start_ctx.append((cid, s0, a0))
        self.start_keys = np.array(self.start_keys, dtype=np.int64)
        self.start_prob = np.array(self.start_prob)

    def __len__(self):
        return len(self.keys)

    def context_matrix(self, policy: AnyPolicy) -> np.ndarray:
        """Action distribution for every decision context, shape (n_ctx, A)."""
        return np.array([action_probs(policy, hist, s) for hist, s in self.contexts])

    def entry_weights(self, policy: AnyPolicy) -> np.ndarray:
        if isinstance(policy, PolicyS):
            return policy.table[self.ctx_state, self.ctx_phase, self.ctx_action]
        return self.context_matrix(policy)[self.ctx_id, self.ctx_action]

    def start_weights(self, policy: AnyPolicy) -> np.ndarray:
        start = initial_prefix(self.spec.overlap_c)
        pi = np.array([action_probs(policy, start, s0)[a0] for _, s0, a0 in self.start_ctx])
        return self.start_prob * pi

    def chain(self, policy: AnyPolicy) -> sp.csr_matrix:
        """Key-to-key transition matrix under ``policy`` (undiscounted)."""
        n = len(self.keys)
        w = self.coef * self.entry_weights(policy)
        return sp.csr_matrix((w, (self.rows, self.cols)), shape=(n, n))

    @cached_property
    def decision_groups(self) -> dict[tuple[int, int], list[tuple[TrajectorySegment, dict[int, int]]]]:
        """(state, phase) -> [(history, {action: key index})], histories sorted."""
        groups: dict[tuple[int, int], dict[TrajectorySegment, dict[int, int]]] = {}
        for i, key in enumerate(self.keys):
            s, a = key.last
            groups.setdefault((s, key.body_len - 1), {}).setdefault(key.history(), {})[a] = i
        return {
            sp_: sorted(hists.items(), key=lambda item: item[0].steps) for sp_, hists in groups.items()
        }


_INDEX_CACHE: "weakref.WeakKeyDictionary[DrmdpSpec, SegmentIndex]" = weakref.WeakKeyDictionary()


def segment_index(spec: DrmdpSpec, cap: int = DEFAULT_CAP) -> SegmentIndex:
    idx = _INDEX_CACHE.get(spec)
    if idx is None:
        idx = SegmentIndex(spec, cap)
        _INDEX_CACHE[spec] = idx
    return idx


# ---------------------------------------------------------------------------
# tables


def _steps_of(key) -> tuple:
    return key.steps if isinstance(key, TrajectorySegment) else tuple(tuple(s) for s in key)


@dataclass(eq=False)
class TrajectoryQTable:
    """Values of Q over the reachable keys of ``spec``."""

    spec: DrmdpSpec
    keys: Sequence[TrajectorySegment]
    values: np.ndarray
    horizon_cap: int | None = None

    @cached_property
    def _pos(self) -> dict[tuple, int]:
        return {k.steps: i for i, k in enumerate(self.keys)}

    def __getitem__(self, key) -> float:
        return float(self.values[self._pos[_steps_of(key)]])

    def __contains__(self, key) -> bool:
        return _steps_of(key) in self._pos

    def __len__(self):
        return len(self.keys)

    def items(self):
        return zip(self.keys, self.values)

    def as_dict(self) -> dict[tuple, float]:
        return {k.steps: float(v) for k, v in zip(self.keys, self.values)}

    def sup_distance(self, other: "TrajectoryQTable") -> float:
        _check_keys(self, other)
        return float(np.max(np.abs(self.values - other.values))) if len(self.values) else 0.0

    def to_csv(self, path) -> None:
        """Two columns: segment key as ``s:a|s:a|...`` (``PAD`` as ``-1:-1``) and value."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["segment", "prefix_len", "value"])
            for key, v in zip(self.keys, self.values):
                w.writerow([serialize_key(key), key.prefix_len, repr(float(v))])


def serialize_key(key: TrajectorySegment) -> str:
    return "|".join(f"{s}:{a}" for s, a in key.steps)


def parse_key(text: str, prefix_len: int = 0) -> TrajectorySegment:
    steps = tuple(tuple(int(x) for x in part.split(":")) for part in text.split("|")) if text else ()
    return TrajectorySegment(steps, prefix_len)


def read_q_csv(path, spec: DrmdpSpec) -> TrajectoryQTable:
    keys, values = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            keys.append(parse_key(row["segment"], int(row["prefix_len"])))
            values.append(float(row["value"]))
    return TrajectoryQTable(spec, keys, np.array(values))


def _check_keys(a: TrajectoryQTable, b: TrajectoryQTable) -> None:
    if a.keys is b.keys:
        return
    if len(a.keys) != len(b.keys) or any(x != y for x, y in zip(a.keys, b.keys)):
        raise KeyError("tables are keyed differently")


def zero_table(spec: DrmdpSpec) -> TrajectoryQTable:
    idx = segment_index(spec)
    return TrajectoryQTable(spec, idx.keys, np.zeros(len(idx)))


# ---------------------------------------------------------------------------
# fixed-point iteration


def bellman_sweep(table: TrajectoryQTable, target: TrajectoryQTable, policy: AnyPolicy) -> TrajectoryQTable:
    """Exact minimiser of the trajectory TD objective with ``target`` held fixed.

    Each entry becomes E[R_t + gamma * target(next key)], where the next key
    extends the interval with probability 1 - hazard and restarts from the
    last c steps otherwise.
    """
    _check_keys(table, target)
    spec = table.spec
    idx = segment_index(spec)
    if len(idx.keys) != len(table.keys):
        raise KeyError("table keys do not match the spec's reachable segments")
    P = _chain_cached(idx, policy)
    return TrajectoryQTable(spec, table.keys, idx.reward + spec.gamma * (P @ target.values))


_CHAIN_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _chain_cached(idx: SegmentIndex, policy: AnyPolicy) -> sp.csr_matrix:
    per_policy = _CHAIN_CACHE.setdefault(policy, {})
    P = per_policy.get(id(idx))
    if P is None:
        P = idx.chain(policy)
        per_policy[id(idx)] = P
    return P


@dataclass
class FixedPointResult:
    table: TrajectoryQTable
    sweeps: int
    final_residual: float
    residuals: list[float] = field(default_factory=list)


def solve_fixed_point(spec: DrmdpSpec, policy: AnyPolicy, tol: float = 1e-10, max_sweeps: int = 100_000) -> FixedPointResult:
    """Iterate :func:`bellman_sweep` from the zero table until the sup-norm change is below ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = zero_table(spec)
    residuals = []
    for sweep in range(1, max_sweeps + 1):
        new = bellman_sweep(q, q, policy)
        r = new.sup_distance(q)
        residuals.append(r)
        q = new
        if r < tol:
            return FixedPointResult(q, sweep, r, residuals)
    raise ConvergenceError(f"no convergence in {max_sweeps} sweeps (residual {residuals[-1]:.3e})")


def performance(table: TrajectoryQTable, policy: AnyPolicy) -> float:
    """J(pi) = sum_{s0, a0} p(s0) pi(a0 | s0, 0) Q(pad + (s0, a0))."""
    idx = segment_index(table.spec)
    _check_keys(table, TrajectoryQTable(table.spec, idx.keys, table.values))
    return float(idx.start_weights(policy) @ table.values[idx.start_keys])


def evaluate_policy(spec: DrmdpSpec, policy: AnyPolicy) -> TrajectoryQTable:
    """Q^pi by a direct sparse solve of (I - gamma P_pi) Q = b."""
    idx = segment_index(spec)
    n = len(idx)
    M = sp.identity(n, format="csc") - spec.gamma * idx.chain(policy).tocsc()
    values = np.atleast_1d(spla.spsolve(M, idx.reward))
    return TrajectoryQTable(spec, idx.keys, values)


def policy_value(spec: DrmdpSpec, policy: AnyPolicy) -> float:
    return performance(evaluate_policy(spec, policy), policy)


# ---------------------------------------------------------------------------
# independent oracle


def exact_q_by_enumeration(
    spec: DrmdpSpec,
    policy: AnyPolicy,
    horizon: int | None = None,
    tol: float = 1e-12,
    cap: int = DEFAULT_CAP,
) -> TrajectoryQTable:
    """Q^pi for every reachable key by explicit enumeration of continuations.

    With ``horizon=None`` continuations are enumerated path by path to the end
    of the current interval, and the value at each interval boundary
    (overlap tail, next state) is obtained from a dense linear solve. With a
    horizon, the full continuation tree is enumerated to that depth and a
    ``HorizonError`` is raised if the discarded discounted mass could exceed
    ``tol``.
    """
    keys = enumerate_segments(spec, cap)
    if horizon is not None:
        return _enumerate_tree(spec, policy, keys, horizon, tol)
    c = spec.overlap_c
    law = spec.interval_law
    gamma = spec.gamma
    memo: dict[TrajectorySegment, tuple[float, dict]] = {}

    def after_action(window: TrajectorySegment):
        if window in memo:
            return memo[window]
        s, a = window.last
        h = law.hazard(window.body_len)
        g = 0.0
        m: dict = {}
        for s2, p in spec.successors(s, a):
            if s2 in spec.terminal:
                g += p * truncated_reward(spec, window)[0]
                continue
            if h > 0.0:
                g += p * h * spec.reward(window)
                b = (window.overlap_tail(c), s2)
                m[b] = m.get(b, 0.0) + p * h * gamma
            if h < 1.0:
                probs = action_probs(policy, window, s2)
                for a2 in spec.actions[s2]:
                    pa = probs[a2]
                    if pa == 0.0:
                        continue
                    w = p * (1.0 - h) * pa * gamma
                    g2, m2 = after_action(window.extend((s2, a2)))
                    g += w * g2
                    for b, x in m2.items():
                        m[b] = m.get(b, 0.0) + w * x
        memo[window] = (g, m)
        if len(memo) > cap:
            raise EnumerationCapError(f"more than {cap} enumerated windows")
        return g, m

    def boundary_entry(b):
        tail, s = b
        probs = action_probs(policy, tail, s)
        g = 0.0
        m: dict = {}
        for a in spec.actions[s]:
            if probs[a] == 0.0:
                continue
            ga, ma = after_action(tail.extend((s, a)))
            g += probs[a] * ga
            for b2, x in ma.items():
                m[b2] = m.get(b2, 0.0) + probs[a] * x
        return g, m

    per_key = [after_action(k) for k in keys]
    order: dict = {}
    pending = [b for _, m in per_key for b in m]
    rows = {}
    while pending:
        b = pending.pop()
        if b in order:
            continue
        order[b] = len(order)
        rows[b] = boundary_entry(b)
        pending.extend(b2 for b2 in rows[b][1] if b2 not in order)
    nb = len(order)
    A = np.eye(nb)
    g = np.zeros(nb)
    for b, i in order.items():
        gb, mb = rows[b]
        g[i] = gb
        for b2, x in mb.items():
            A[i, order[b2]] -= x
    v = np.linalg.solve(A, g) if nb else g
    values = np.array(
        [gk + sum(x * v[order[b]] for b, x in mk.items()) for gk, mk in per_key]
    )
    return TrajectoryQTable(spec, keys, values)


def _enumerate_tree(spec, policy, keys, horizon, tol):
    c = spec.overlap_c
    law = spec.interval_law
    gamma = spec.gamma
    dropped = [0.0]

    def after_action(window, depth):
        if depth >= horizon:
            dropped[0] = max(dropped[0], gamma ** depth)
            return 0.0
        s, a = window.last
        h = law.hazard(window.body_len)
        total = 0.0
        for s2, p in spec.successors(s, a):
            if s2 in spec.terminal:
                total += p * truncated_reward(spec, window)[0]
                continue
            branches = []
            if h > 0.0:
                total += p * h * spec.reward(window)
                branches.append((window.overlap_tail(c), p * h))
            if h < 1.0:
                branches.append((window, p * (1.0 - h)))
            for hist, w in branches:
                probs = action_probs(policy, hist, s2)
                for a2 in spec.actions[s2]:
                    if probs[a2] > 0.0:
                        total += w * probs[a2] * gamma * after_action(hist.extend((s2, a2)), depth + 1)
        return total

    values = np.array([after_action(k, 0) for k in keys])
    if dropped[0] > 0.0:
        rmax = max((abs(spec.reward(k)) for k in keys if k.body_len in law.support), default=0.0)
        bound = dropped[0] * rmax / (1.0 - gamma)
        if bound >= tol:
            raise HorizonError(f"horizon {horizon} leaves discounted tail bound {bound:.3e} >= {tol:.0e}")
    return TrajectoryQTable(spec, keys, values, horizon_cap=horizon)


# ---------------------------------------------------------------------------
# policy improvement


def _argmax_lowest(values: Mapping[int, float], tie_atol: float) -> int:
    best = max(values.values())
    return min(a for a, v in values.items() if v >= best - tie_atol)


def policy_improve(table: TrajectoryQTable, tie_atol: float = 1e-10, check_pi: bool = False) -> PolicyS:
    """Greedy phase-indexed policy from Q.

    For every (state, phase) the argmax is taken under the lexicographically
    smallest feasible history; ties go to the lowest action id. Pairs with no
    feasible history copy the phase-0 row (or the first reachable phase).
    """
    spec = table.spec
    if check_pi:
        report = check_pi_condition(spec)
        if not report.holds:
            warnings.warn(f"spec violates the PI condition, greedy policy is history dependent: {report.describe(spec)}")
    idx = segment_index(spec)
    _check_keys(table, TrajectoryQTable(spec, idx.keys, table.values))
    S, K, A = spec.n_states, spec.max_phase, spec.n_actions
    choice = np.full((S, K), -1, dtype=int)
    for (s, phase), hists in idx.decision_groups.items():
        _, by_action = hists[0]
        choice[s, phase] = _argmax_lowest({a: table.values[i] for a, i in by_action.items()}, tie_atol)
    for s in range(S):
        reachable = [k for k in range(K) if choice[s, k] >= 0]
        fill = choice[s, 0] if choice[s, 0] >= 0 else (choice[s, reachable[0]] if reachable else spec.actions[s][0])
        choice[s, choice[s] < 0] = fill
    return PolicyS.deterministic(spec, choice)


@dataclass(frozen=True)
class OrderViolation:
    state: int
    phase: int
    actions: tuple[int, int]
    histories: tuple[TrajectorySegment, TrajectorySegment]


def order_violations(table: TrajectoryQTable, atol: float = 1e-12) -> list[OrderViolation]:
    """History pairs under which Q ranks two actions differently.

    Differences within ``atol`` count as ties; a tie under one history must
    be a tie under the other.
    """
    idx = segment_index(table.spec)
    out = []
    for (s, phase), hists in idx.decision_groups.items():
        acts = sorted(hists[0][1])
        if len(acts) < 2 or len(hists) < 2:
            continue
        V = np.array([[table.values[by_a[a]] for a in acts] for _, by_a in hists])
        D = V[:, :, None] - V[:, None, :]
        Sg = np.where(np.abs(D) <= atol, 0, np.sign(D))
        bad = Sg != Sg[0][None]
        for h, i, j in zip(*np.nonzero(bad)):
            if i < j:
                out.append(OrderViolation(s, phase, (acts[i], acts[j]), (hists[0][0], hists[h][0])))
    return out


@dataclass
class PolicyIterationResult:
    policies: list[PolicyS]
    returns: list[float]
    tables: list[TrajectoryQTable]
    converged: bool


def policy_iteration(spec: DrmdpSpec, init: PolicyS, max_iters: int = 20, tol: float = 1e-12) -> PolicyIterationResult:
    """Alternate exact evaluation and greedy improvement until a policy repeats."""
    policies, returns, tables = [init], [], []
    policy = init
    for _ in range(max_iters):
        table = solve_fixed_point(spec, policy, tol).table
        tables.append(table)
        returns.append(performance(table, policy))
        new = policy_improve(table)
        if any(new.same_as(p) for p in policies):
            return PolicyIterationResult(policies, returns, tables, True)
        policies.append(new)
        policy = new
    return PolicyIterationResult(policies, returns, tables, False)


# ---------------------------------------------------------------------------
# vanilla (state, action) critic


@dataclass
class StateQTable:
    entries: dict[tuple[int, int], float]
    unreached: frozenset[tuple[int, int]] = frozenset()

    def __getitem__(self, sa: tuple[int, int]) -> float:
        if sa in self.unreached:
            return math.nan
        return self.entries[sa]


Mixture = Union[PolicyS, Sequence[PolicyS], Sequence[tuple[float, PolicyS]]]


def _as_mixture(data: Mixture) -> list[tuple[float, PolicyS]]:
    if isinstance(data, PolicyS):
        return [(1.0, data)]
    items = list(data)
    if not items:
        raise ValueError("empty behaviour mixture")
    if isinstance(items[0], PolicyS):
        items = [(1.0, p) for p in items]
    total = sum(w for w, _ in items)
    return [(w / total, p) for w, p in items]


def key_occupancy(spec: DrmdpSpec, policy: AnyPolicy, discount: float = 1.0) -> np.ndarray:
    """Expected (optionally discounted) number of visits of every key per episode."""
    idx = segment_index(spec)
    n = len(idx)
    mu0 = np.zeros(n)
    np.add.at(mu0, idx.start_keys, idx.start_weights(policy))
    M = sp.identity(n, format="csc") - discount * idx.chain(policy).T.tocsc()
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            d = spla.spsolve(M, mu0)
        except spla.MatrixRankWarning:
            raise ValueError("occupancy is unbounded; the spec is not episodic, pass discount < 1") from None
    d = np.atleast_1d(d)
    if not np.all(np.isfinite(d)):
        raise ValueError("occupancy is unbounded; the spec is not episodic, pass discount < 1")
    return np.maximum(d, 0.0)


def vanilla_q_fixed_point(
    spec: DrmdpSpec,
    data_policy: Mixture,
    target_policy: PolicyS | None = None,
    occupancy_discount: float = 1.0,
    exploration: float = 0.0,
    tol: float = 1e-9,
) -> StateQTable:
    """Fixed point of the ordinary (s, a) TD objective under the data's occupancy.

    Each entry is the occupancy-weighted mean of R_t + gamma * Q(s', a'),
    marginalising the interval history that actually determines R_t.
    Pairs the data never visits are reported in ``unreached``.

    Args:
        exploration: mix every behaviour with the uniform policy at this
            weight before computing the occupancy. A tiny value gives the
            on-policy limit while keeping every reachable pair defined.
        tol: bound on the sup-norm residual of the solved linear system.
    """
    mixture = _as_mixture(data_policy)
    if target_policy is None:
        if len(mixture) > 1:
            raise ValueError("target_policy is required with several behaviour policies")
        target_policy = mixture[0][1]
    if exploration:
        uni = PolicyS.uniform(spec).table
        mixture = [(w, PolicyS((1.0 - exploration) * p.table + exploration * uni)) for w, p in mixture]
    idx = segment_index(spec)
    d = sum(w * key_occupancy(spec, p, occupancy_discount) for w, p in mixture)
    A = spec.n_actions
    last_sa = np.array([k.last[0] * A + k.last[1] for k in idx.keys], dtype=np.int64)
    nsa = spec.n_states * A
    mass = np.bincount(last_sa, weights=d, minlength=nsa)
    rbar = np.bincount(last_sa, weights=d * idx.reward, minlength=nsa)
    w = d[idx.rows] * idx.coef * target_policy.table[idx.ctx_state, idx.ctx_phase, idx.ctx_action]
    T = sp.csr_matrix((w, (last_sa[idx.rows], idx.ctx_state * A + idx.ctx_action)), shape=(nsa, nsa)).toarray()
    visited = np.flatnonzero(mass > 0.0)
    if np.any(T[np.ix_(visited, np.setdiff1d(np.arange(nsa), visited))] > 0.0):
        raise ValueError("target policy bootstraps from (s, a) pairs absent from the data")
    Tv = T[np.ix_(visited, visited)] / mass[visited, None]
    M = np.eye(len(visited)) - spec.gamma * Tv
    rhs = rbar[visited] / mass[visited]
    q = np.linalg.solve(M, rhs)
    if len(q) and np.max(np.abs(M @ q - rhs)) > tol:
        raise ConvergenceError("vanilla fixed-point system is ill-conditioned")
    entries = {}
    for j, sa in enumerate(visited):
        entries[(int(sa // A), int(sa % A))] = float(q[j])
    unreached = frozenset(
        (s, a)
        for s in range(spec.n_states)
        if s not in spec.terminal
        for a in spec.actions[s]
        if (s, a) not in entries
    )
    return StateQTable(entries, unreached)


def greedy_from_state_q(spec: DrmdpSpec, q: StateQTable, tie_atol: float = 1e-10) -> PolicyS:
    """Phase-independent greedy policy; unvisited pairs are never preferred."""
    choice = np.zeros((spec.n_states, spec.max_phase), dtype=int)
    for s, acts in enumerate(spec.actions):
        vals = {a: q.entries[(s, a)] for a in acts if (s, a) in q.entries}
        choice[s, :] = _argmax_lowest(vals, tie_atol) if vals else acts[0]
    return PolicyS.deterministic(spec, choice)


# ---------------------------------------------------------------------------
# off-policy bias


@dataclass
class OffPolicyBiasReport:
    bias: dict[tuple[int, int], float]
    spread: dict[int, float]

    @property
    def varies(self) -> bool:
        return any(v > 1e-12 for v in self.spread.values())


def off_policy_bias_report(
    spec: DrmdpSpec, behaviors: Sequence[PolicyS], atol: float = 1e-12
) -> OffPolicyBiasReport:
    """History part of the vanilla last-step Q under a mixture of behaviours.

    Single-interval construction: the interval length is fixed at n + 1 and
    the reward is a plain sum of per-step rewards. For every (s_n, a_n) the
    history distribution is the mixture of each behaviour's conditional
    history distribution given s_n, weighted by beta_k(a_n | s_n).
    """
    if not behaviors:
        raise ValueError("behaviors must be nonempty")
    law = spec.interval_law
    if len(law.support) != 1:
        raise ValueError("off-policy bias construction needs a fixed interval length")
    if spec.reward.kind is not RewardKind.SUM or spec.overlap_c:
        raise ValueError("off-policy bias construction needs a sum-form reward with c = 0")
    last = law.support[0] - 1
    # per behaviour: s_n -> (P(s_n), E[history reward, s_n])
    stats = []
    for beta in behaviors:
        acc: dict[int, list[float]] = {}

        def walk(s, depth, prob, hist_reward):
            if depth == last:
                a = acc.setdefault(s, [0.0, 0.0])
                a[0] += prob
                a[1] += prob * hist_reward
                return
            for a in spec.actions[s]:
                pa = beta.table[s, depth, a]
                if pa == 0.0:
                    continue
                r = spec.reward.per_step((s, a))
                for s2, p in spec.successors(s, a):
                    if s2 not in spec.terminal:
                        walk(s2, depth + 1, prob * pa * p, hist_reward + r)

        for s0 in spec.start_states():
            walk(s0, 0, float(spec.initial[s0]), 0.0)
        stats.append({s: (m, tot / m) for s, (m, tot) in acc.items() if m > 0.0})

    bias: dict[tuple[int, int], float] = {}
    spread: dict[int, float] = {}
    for s in sorted({s for st in stats for s in st}):
        vals = []
        for a in spec.actions[s]:
            w = [beta.table[s, last, a] if s in st else 0.0 for beta, st in zip(behaviors, stats)]
            if sum(w) <= 0.0:
                continue
            v = sum(wk * st[s][1] for wk, st in zip(w, stats) if wk > 0.0) / sum(w)
            bias[(s, a)] = v
            vals.append(v)
        spread[s] = max(vals) - min(vals) if vals else 0.0
    return OffPolicyBiasReport(bias, spread)


__all__ = [
    "ConvergenceError",
    "FixedPointResult",
    "HorizonError",
    "OffPolicyBiasReport",
    "OrderViolation",
    "PolicyIterationResult",
    "SegmentIndex",
    "StateQTable",
    "TrajectoryQTable",
    "bellman_sweep",
    "evaluate_policy",
    "exact_q_by_enumeration",
    "greedy_from_state_q",
    "key_occupancy",
    "off_policy_bias_report",
    "order_violations",
    "performance",
    "policy_improve",
    "policy_iteration",
    "policy_value",
    "segment_index",
    "solve_fixed_point",
    "vanilla_q_fixed_point",
    "zero_table",
]
