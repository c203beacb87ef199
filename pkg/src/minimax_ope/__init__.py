"""Off-policy evaluation with minimax weight and Q-function learning on tabular MDPs."""

from .data import Dataset, EpisodeSet, Transition, sample_episodes, sample_iid, sample_trajectory
from .dr import DrInputs, dr_estimate, naive_behavior_value, population_dr, stepwise_is
from .efficiency import (
    VarianceReport,
    mswl_asymptotic_variance,
    mvl_asymptotic_variance,
    semiparametric_variance,
)
from .features import FeatureMap, KernelSpec, StateFeatureMap, tabular_features, tabular_state_features
from .fixtures import chain2, m1, mini_taxi, softmax_policy
from .linear import LinearFitReport, estimate_behavior_policy, mql_linear, mswl_linear, mwl_linear
from .mdp import (
    Policy,
    TabularMDP,
    discounted_occupancy,
    solve_q,
    state_value,
    stationary_distribution,
    true_return,
    true_weight,
)
from .model_based import EmpiricalMDP, fit_empirical_mdp, model_based_estimate
from .rkhs import mql_rkhs_fit, mql_rkhs_loss, mwl_rkhs_fit, mwl_rkhs_loss, verify_rkhs_max

__version__ = "0.1.0"
