"""Tree-aware classification risk via exact discrete optimal transport.

The package builds ground cost matrices from a semantic taxonomy's
tree-induced error (TIE) distances, evaluates the exact transport loss
between softmax predictions and one-hot targets (closed form and general
simplex solver), trains a shared-trunk multi-level classifier with the
weighted combined loss, and benchmarks it against cross-entropy on
synthetic hierarchical data.
"""

from .datagen import Dataset, GenConfig, benchmark_config, generate, make_full_tree
from .errors import DataError, NumericError, TaxonomyError
from .evaluate import (
    EvalReport,
    compare_methods,
    mean_tie,
    run_trials,
    topk_error,
)
from .ground import (
    IDENTITY,
    GroundMatrix,
    GroundTransform,
    apply_transform,
    build_ground_matrix,
)
from .multitask import (
    LevelModel,
    TrainConfig,
    TrainResult,
    build_model,
    combined_loss,
    forward,
    level_loss_weights,
    load_checkpoint,
    predict_leaf,
    save_checkpoint,
    train,
)
from .taxonomy import (
    LevelIndex,
    Taxonomy,
    level_index,
    level_weight,
    lift_to_level,
    parse_taxonomy,
    root_path,
    serialize_taxonomy,
    tie_distance,
)
from .transport import (
    TransportPlan,
    ce_loss,
    one_hot,
    one_hot_loss,
    one_hot_loss_grad_logits,
    one_hot_loss_grad_probs,
    regression_loss,
    softmax,
    solve_exact_ot,
    validate_plan,
)

__version__ = "0.1.0"
