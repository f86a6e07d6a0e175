"""Federated multi-task learning with optimal data-poisoning attacks.

The library trains one linear model per node, coupled through a learned
relationship matrix, using a communication-efficient dual coordinate
solver; on top of it sit direct/indirect/hybrid poisoning attacks that
alternate solver rounds with projected gradient ascent on the injected
feature vectors, plus a reproducible experiment harness.
"""

from .attack import (
    AttackMode,
    AttackSpec,
    AttackTrace,
    at2fl_run,
    attack_gradient,
    build_attack_spec,
    default_radius,
    init_injected,
    project_ball,
    run_attack,
    target_train_loss,
)
from .data import (
    Federation,
    FederationSource,
    SourceKind,
    build_federation,
    load_csv_federation,
    split_train_test,
    synthesize_federation,
    write_csv_federation,
)
from .errors import (
    DataLoadError,
    DomainError,
    FedPoisonError,
    InfeasibleDualError,
    InfeasibleSpecError,
    ValidationError,
)
from .harness import (
    ExperimentReport,
    classification_error,
    evaluate_targets,
    export_report,
    import_report,
    rmse,
    run_comparison,
    sweep_ratio,
    sweep_step_size,
)
from .losses import LossKind, conjugate_loss, primal_loss
from .model import (
    CouplingMatrix,
    InjectedSet,
    ModelState,
    NodeDataset,
    Split,
    build_coupling,
    duality_gap,
    dual_objective,
    init_state,
    primal_objective,
    primal_value,
    update_omega,
    w_from_alpha,
)
from .solver import (
    GAP_TOL,
    RoundStats,
    SolverConfig,
    delta_alpha_hinge,
    delta_alpha_least_squares,
    run_round,
    solve_lower,
)

__version__ = "0.1.0"
