"""Advantage decomposition of returns for tabular MDPs.

Estimators fit state values, advantages and nature advantages by least
squares on trajectory windows; an off-policy actor-critic uses them as
critics.  Submodules:

``mdp`` and ``envs``
    finite MDPs, policies, trajectories, exact dynamic-programming tables
    and the example environments.
``design`` and ``estimators``
    window design matrices and the fitting routines.
``analysis``
    identity checks, oracle comparisons and closed forms.
``actor_critic``
    the tabular training loop.
``experiments`` and ``cli``
    experiment drivers and the ``offdae`` command.
"""
from .errors import (
    ConfigurationError,
    DivergenceError,
    DomainError,
    EvaluationError,
    FitError,
    OffDaeError,
    SupportError,
)
from .mdp import (
    Dataset,
    FiniteMdp,
    NatureTable,
    PolicyTable,
    Trajectory,
    advantage_exact,
    nature_advantage_exact,
    policy_evaluation_exact,
    q_values_exact,
    sample_dataset,
    sample_trajectory,
)
from .estimators import (
    DecompositionTables,
    FitReport,
    TransitionModel,
    estimate_transitions,
    fit_batch_td0,
    fit_dae,
    fit_mc,
    fit_offpolicy_dae,
)
from .actor_critic import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "OffDaeError",
    "ConfigurationError",
    "EvaluationError",
    "FitError",
    "SupportError",
    "DomainError",
    "DivergenceError",
    "FiniteMdp",
    "PolicyTable",
    "Trajectory",
    "Dataset",
    "NatureTable",
    "sample_trajectory",
    "sample_dataset",
    "policy_evaluation_exact",
    "q_values_exact",
    "advantage_exact",
    "nature_advantage_exact",
    "DecompositionTables",
    "FitReport",
    "TransitionModel",
    "fit_mc",
    "fit_batch_td0",
    "fit_dae",
    "fit_offpolicy_dae",
    "estimate_transitions",
    "TrainConfig",
    "train",
]
