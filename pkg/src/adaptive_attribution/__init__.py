"""Replay versus interventional attribution in finite-horizon adaptive learning."""
from .errors import (
    AttributionError,
    ConditioningError,
    ConfigError,
    DomainError,
    NumericError,
    OverlapError,
    RegimeError,
    SupportInstabilityError,
)
from .model import (
    AdaptiveSystem,
    Evaluation,
    InteractionSpace,
    Kernel,
    UpdateMap,
    conditional_future_law,
    future_branches,
    one_coordinate_weights,
    path_probability,
    prefix_probability,
    replay_states,
)
from .targets import (
    conditional_expected_replay,
    dot_q,
    influence_report,
    interventional_influence,
    psi,
    replay_influence,
    structural_decomposition,
)
from .dp import (
    ContinuationTree,
    depth_L_influence,
    depth_L_target,
    influence_dp,
    replay_dp,
    stagewise_xi,
    truncation_bounds,
)
from .action_only import ActionOnlySystem, FactorizedSystem, mc_psi, policy_ratio, psi_importance
from .gallery import insufficiency_certificate, insufficiency_family, replay_oracle

__version__ = "0.1.0"
