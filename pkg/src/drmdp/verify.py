"""Invariant suites behind ``drmdp verify``.

Each check returns a :class:`Check` with the measured quantities, so the
report shows numbers rather than bare pass/fail flags.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .counterexamples import best_in_class, build_fixture, off_policy_example, reproduce_fixed_point_bias
from .hc import (
    HcCritic,
    MonolithicCritic,
    PairwiseH,
    StepLayout,
    full_critic_action_gradient,
    hc_action_gradient,
)
from .nn import Approximator, check_gradients
from .random_specs import random_pi_spec, random_policy, random_spec
from .tabular import (
    bellman_sweep,
    evaluate_policy,
    exact_q_by_enumeration,
    off_policy_bias_report,
    order_violations,
    policy_iteration,
    solve_fixed_point,
    TrajectoryQTable,
)

SUITES = ("theory", "counterexamples", "gradients", "all")
FIXED_POINT_GAMMAS = (0.5, 0.9, 0.99)
EPS = np.finfo(float).eps


@dataclass
class Check:
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        vals = " ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name} ({self.seconds:.2f}s) {vals}"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        out = fn(*args, **kwargs)
        for chk in out if isinstance(out, list) else [out]:
            chk.seconds = time.perf_counter() - t0
        return out

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------------------
# theory


def contraction_ok(residuals, gamma: float, scale: float, slack: float = 1e-9) -> tuple[bool, float]:
    """Whether every consecutive residual ratio is at most gamma + slack.

    Residuals near machine precision are pure cancellation noise, so each step
    is allowed an additive ``8 * eps * scale`` on top of the ratio bound.
    Also returns the largest ratio seen while the residual is well above
    that noise floor.
    """
    floor = 8.0 * EPS * max(scale, 1.0)
    worst = 0.0
    ok = True
    for r0, r1 in zip(residuals[:-1], residuals[1:]):
        if r1 > (gamma + slack) * r0 + floor:
            ok = False
        if r0 > 1e8 * floor:
            worst = max(worst, r1 / r0)
    return ok, worst


@_timed
def check_contraction(n_specs: int = 50, seed: int = 0) -> list[Check]:
    """Sweep residual ratios, the operator bound from random tables, and the enumeration match."""
    rng = np.random.default_rng(seed)
    ratio_ok = op_ok = True
    worst_ratio = worst_op = worst_match = 0.0
    kinds = ("sum", "weighted_sum")
    for i in range(n_specs):
        spec = random_spec(rng, kind=kinds[i % 2], overlap_c=i % 3)
        pol = random_policy(spec, rng)
        fp = solve_fixed_point(spec, pol, tol=1e-12)
        scale = float(np.max(np.abs(fp.table.values)))
        ok, w = contraction_ok(fp.residuals, spec.gamma, scale)
        ratio_ok &= ok
        worst_ratio = max(worst_ratio, w - spec.gamma)
        exact = exact_q_by_enumeration(spec, pol)
        worst_match = max(worst_match, fp.table.sup_distance(exact))
        q0 = TrajectoryQTable(spec, exact.keys, rng.normal(scale=10.0, size=len(exact.keys)))
        d0 = q0.sup_distance(exact)
        d1 = bellman_sweep(q0, q0, pol).sup_distance(exact)
        op_ok &= d1 <= (spec.gamma + 1e-9) * d0
        worst_op = max(worst_op, d1 / d0 - spec.gamma)
    return [
        Check("contraction: sweep residual ratio <= gamma + 1e-9", ratio_ok,
              {"specs": n_specs, "max(ratio - gamma) where residual > 1e8 floor": worst_ratio}),
        Check("contraction: |TQ - Q*| <= gamma |Q - Q*| from random tables", op_ok,
              {"specs": n_specs, "max(ratio - gamma)": worst_op}),
        Check("fixed point matches enumeration oracle within 1e-8", worst_match <= 1e-8,
              {"specs": n_specs, "max sup-distance": worst_match}),
    ]


@_timed
def check_order_invariance(n_specs: int = 100, seed: int = 1) -> Check:
    """Zero action-order sign flips across histories on past-invariant sum and max specs."""
    rng = np.random.default_rng(seed)
    total = pairs = 0
    for i in range(n_specs):
        kind = "sum" if i < n_specs // 2 else "max"
        spec = random_pi_spec(rng, kind=kind, terminal_prob=0.0)
        table = evaluate_policy(spec, random_policy(spec, rng))
        total += len(order_violations(table, atol=1e-12))
        pairs += 1
    return Check("order invariance on PI specs", total == 0, {"specs": pairs, "violations": total})


@_timed
def check_policy_improvement(n_specs: int = 50, seed: int = 2) -> Check:
    """Monotone returns, pointwise dominance on every key, termination within 20 rounds."""
    rng = np.random.default_rng(seed)
    kinds = ("sum", "weighted_sum", "max")
    worst_drop = worst_dom = 0.0
    rounds = 0
    converged = True
    for i in range(n_specs):
        spec = random_pi_spec(rng, kind=kinds[i % 3], terminal_prob=0.0)
        res = policy_iteration(spec, random_policy(spec, rng), max_iters=20)
        converged &= res.converged
        rounds = max(rounds, len(res.returns))
        for a, b in zip(res.returns[:-1], res.returns[1:]):
            worst_drop = max(worst_drop, a - b)
        for t0, t1 in zip(res.tables[:-1], res.tables[1:]):
            worst_dom = max(worst_dom, float(np.max(t0.values - t1.values)))
    ok = converged and worst_drop <= 1e-9 and worst_dom <= 1e-9
    return Check("policy improvement on PI specs", ok,
                 {"specs": n_specs, "max J drop": worst_drop, "max Q drop": worst_dom, "max rounds": rounds})


def theory_checks() -> list[Check]:
    return [*check_contraction(), check_order_invariance(), check_policy_improvement()]


# ---------------------------------------------------------------------------
# counterexamples


@_timed
def check_fixed_point_bias(gamma: float) -> list[Check]:
    rep = reproduce_fixed_point_bias(gamma)
    out = [
        Check(f"fixed-point bias gamma={gamma}: vanilla greedy J = -0.495*gamma",
              abs(rep.vanilla_final_J + 0.495 * gamma) <= 1e-9,
              {"computed": rep.vanilla_final_J, "stated": -0.495 * gamma}),
        Check(f"fixed-point bias gamma={gamma}: trajectory-Q policy iteration J = 0",
              abs(rep.new_q_final_J) <= 1e-9, {"computed": rep.new_q_final_J}),
    ]
    for p, vals in rep.p_sweep.items():
        for k, v in vals.items():
            want = rep.stated[p][k]
            ok = not math.isnan(v) and abs(v - want) <= 1e-9
            out.append(Check(f"fixed-point bias gamma={gamma} p={p}: {k}", ok, {"computed": v, "stated": want}))
    return out


@_timed
def check_policy_class_gap(gamma: float = 0.99) -> Check:
    fx = build_fixture("XorPolicyClass", gamma)
    _, j_tau = best_in_class(fx, "PiTau")
    _, j_s = best_in_class(fx, "PiS")
    ok = abs(j_tau - gamma) <= 1e-12 and abs(j_s - 0.5 * gamma) <= 1e-12
    return Check("XOR policy-class gap", ok, {"best PiTau": j_tau, "best PiS": j_s, "ratio": j_tau / j_s})


@_timed
def check_optimal_not_in_pis(gamma: float = 0.99) -> Check:
    fx = build_fixture("OptimalNotInPiS", gamma)
    _, j_tau = best_in_class(fx, "PiTau")
    _, j_s = best_in_class(fx, "PiS")
    return Check("PI spec whose optimum needs history", j_tau > j_s + 1e-9, {"best PiTau": j_tau, "best PiS": j_s})


@_timed
def check_off_policy_bias() -> Check:
    ex = off_policy_example()
    mixed = off_policy_bias_report(ex.spec, list(ex.behaviors))
    same = off_policy_bias_report(ex.spec, [ex.behaviors[0], ex.behaviors[0]])
    s = ex.last_state
    ok = mixed.spread[s] > 1e-9 and same.spread[s] <= 1e-12
    return Check("off-policy bias", ok, {"spread (two behaviours)": float(mixed.spread[s]),
                                         "spread (identical)": float(same.spread[s])})


def counterexample_checks() -> list[Check]:
    out = []
    for g in FIXED_POINT_GAMMAS:
        out.extend(check_fixed_point_bias(g))
    out += [check_policy_class_gap(), check_optimal_not_in_pis(), check_off_policy_bias()]
    return out


# ---------------------------------------------------------------------------
# gradients


def approximator_zoo(rng: np.random.Generator, layout: StepLayout | None = None, hidden=(64, 64)) -> dict[str, Approximator]:
    """One instance of every network shape used by the HC stack."""
    lay = layout or StepLayout(state_dim=2, action_dim=2, max_n=8)
    F = lay.step_dim
    return {
        "b / C (one step)": Approximator.create((F, *hidden, 1), rng),
        "c^1 (step pair)": Approximator.create((2 * F, *hidden, 1), rng),
        "actor (tanh)": Approximator.create((lay.actor_dim, *hidden, lay.action_dim), rng, output="tanh"),
        "monolithic": Approximator.create((MonolithicCritic.input_dim(lay), *hidden, 1), rng),
    }


@_timed
def check_finite_differences(points: int = 100, seed: int = 3) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []
    for name, net in approximator_zoo(rng).items():
        rep = check_gradients(net, rng, points=points)
        out.append(Check(f"finite differences: {name}", rep.passed(1e-5),
                         {"points": rep.points, "param rel err": rep.max_param_error,
                          "input rel err": rep.max_input_error}))
    return out


@_timed
def check_action_gradient_identity(seed: int = 4, batch: int = 64) -> Check:
    """d(H + C)/da through the full critic equals dC/da bit for bit."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    same = True
    for structure, c in (("singleton", 0), ("pairwise", 2)):
        lay = StepLayout(state_dim=2, action_dim=2, max_n=8, overlap_c=c)
        critic = HcCritic.create(lay, rng, structure, K=2)
        W = lay.width
        phase = rng.integers(0, lay.max_n, size=batch)
        mask = (np.arange(W)[None, :] <= c + phase[:, None]).astype(float)
        mask[:, :c] *= rng.integers(0, 2, size=(batch, c))
        window = rng.uniform(-1.0, 1.0, size=(batch, W, lay.step_dim)) * mask[..., None]
        full = full_critic_action_gradient(critic, window, mask, phase, lay)
        cur = window[np.arange(batch), c + phase]
        only_c = hc_action_gradient(critic, None, None, cur, lay)
        same &= bool(np.array_equal(full, only_c))
        worst = max(worst, float(np.max(np.abs(full - only_c))))
    return Check("grad_a(H + C) == grad_a C exactly", same, {"max |difference|": worst})


def gradient_checks() -> list[Check]:
    return [*check_finite_differences(), check_action_gradient_identity()]


# ---------------------------------------------------------------------------


def run_suite(name: str) -> list[Check]:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")
    out = []
    if name in ("theory", "all"):
        out += theory_checks()
    if name in ("counterexamples", "all"):
        out += counterexample_checks()
    if name in ("gradients", "all"):
        out += gradient_checks()
    return out


def report(checks: list[Check]) -> str:
    lines = [c.line() for c in checks]
    failed = sum(not c.passed for c in checks)
    lines.append(f"{len(checks) - failed}/{len(checks)} checks passed")
    return "\n".join(lines)


__all__ = [
    "Check",
    "SUITES",
    "approximator_zoo",
    "check_action_gradient_identity",
    "check_contraction",
    "check_finite_differences",
    "check_fixed_point_bias",
    "check_off_policy_bias",
    "check_optimal_not_in_pis",
    "check_order_invariance",
    "check_policy_class_gap",
    "check_policy_improvement",
    "contraction_ok",
    "report",
    "run_suite",
]
