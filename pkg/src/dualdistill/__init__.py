"""Dual-teacher prediction fusion and distillation for black-box adaptation.

A desk-scale numpy library: probability-simplex primitives, pluggable
prediction oracles, adaptive entropy-weighted fusion, a small dense target
network with exact gradients and Hessian-vector products, the two-stage
training procedure (dual-teacher distillation with subnetwork
rectification, then prototype self-training), synthetic covariate-shift
benchmarks, and file-based interchange so real model predictions can be
plugged in.
"""

__version__ = "0.1.0"

from .simplex import (  # noqa: F401
    PredictionMatrix,
    cosine,
    entropy,
    js_div,
    kl_div,
    mean_distribution,
    softmax,
)
from .fusion import (  # noqa: F401
    FusionReport,
    PseudoLabelStore,
    ema_refine,
    fuse,
    global_uncertainty,
    individual_uncertainty,
)
from .network import (  # noqa: F401
    LayerLayout,
    SgdState,
    SubnetworkMask,
    forward_full,
    forward_sub,
    hvp,
    init_weights,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)
from .pipeline import (  # noqa: F401
    MetricsRecord,
    PipelineConfig,
    PrototypeSet,
    assign_nearest_prototype,
    compute_prototypes,
    evaluate,
    run,
    run_ablation_grid,
    run_stage_one,
    run_stage_two,
)
from .synth import (  # noqa: F401
    DomainPair,
    DomainSpec,
    TargetDataset,
    bayes_accuracy,
    default_benchmark,
    generate,
)
from .teachers import (  # noqa: F401
    FilePredictions,
    PromptedTeacher,
    SyntheticBayesTeacher,
    load_file_teacher,
)
