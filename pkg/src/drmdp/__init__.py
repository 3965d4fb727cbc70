"""Delayed-reward MDPs: exact tabular analysis and HC actor-critic training."""
from .core import (
    PAD,
    CoverageError,
    DrmdpSpec,
    EnumerationCapError,
    IntervalLaw,
    IntervalLengthError,
    PolicyS,
    PolicyTau,
    RewardFunctional,
    RewardKind,
    SpecError,
    TrajectorySegment,
    check_pi_condition,
    check_strong_pi_condition,
    enumerate_segments,
    evaluate_reward,
    sample_episode,
)
from .tabular import (
    TrajectoryQTable,
    bellman_sweep,
    evaluate_policy,
    exact_q_by_enumeration,
    off_policy_bias_report,
    order_violations,
    performance,
    policy_improve,
    policy_iteration,
    solve_fixed_point,
    vanilla_q_fixed_point,
)
from .counterexamples import best_in_class, build_fixture, reproduce_fixed_point_bias
from .nn import Adam, Approximator, check_gradients, load_params, save_params
from .hc import (
    Actor,
    HcCritic,
    MonolithicCritic,
    PairwiseH,
    SingletonH,
    StepLayout,
    estimate_gradient_variance,
    hc_policy_gradient,
    hc_td_loss,
    monolithic_trajectory_gradient,
    reg_loss,
    soft_update_targets,
)
from .envs import (
    DelayedRewardWrapper,
    PointReachConfig,
    PointReachEnv,
    export_heatmap,
    point_reach_step,
    shortest_path_steps,
    wrap_delayed,
)
from .replay import ReplayBuffer, ReplayRecord
from .config import RunConfig, load_config
from .train import rap

__version__ = "0.1.0"

__all__ = sorted(
    name for name, obj in list(globals().items()) if not name.startswith("_") and not isinstance(obj, type(PAD))
    and getattr(obj, "__module__", "").startswith("drmdp")
) + ["PAD"]
