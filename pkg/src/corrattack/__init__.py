"""Query-efficient score-based black-box adversarial attack.

Block-structured actions are scored by a Gaussian process over cheap
4-dimensional features and picked by expected improvement, with a forgetting
window that tracks the drifting difference function as the adversarial state
moves.
"""

from .acquisition import expected_improvement, select_action
from .bandit import (
    ActionSpec,
    SampleSet,
    block_features,
    evaluate_difference,
    make_action_set,
    pca_first_component,
    update_samples,
)
from .engine import (
    AttackConfig,
    AttackResult,
    check_success,
    corrattack_stage,
    hierarchical_diff,
    hierarchical_flip,
    latin_hypercube_init,
    run_attack,
)
from .errors import (
    BudgetExhaustedError,
    ConfigError,
    CorrAttackError,
    NumericalFailureError,
    OracleUnavailableError,
    ProtocolError,
)
from .gp import (
    GpDataset,
    GpHyperparams,
    GpPosterior,
    fit_step,
    log_marginal_likelihood,
    matern52_ard,
    posterior,
    posterior_batch,
)
from .image import (
    BlockGrid,
    BlockIndex,
    apply_block_delta,
    make_grid,
    project_ball,
    split_blocks,
)
from .oracle import (
    LinearModel,
    LossSpec,
    Mlp2Model,
    RemoteOracle,
    SyntheticOracle,
    finite_difference_map,
    hinge_targeted,
    hinge_untargeted,
    make_synthetic_model,
)

__version__ = "0.1.0"
