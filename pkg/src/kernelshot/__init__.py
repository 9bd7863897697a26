"""Kernel-method adapters and a benchmark harness for low-shot
classification over precomputed image/text embeddings."""

from .core import (
    EpisodeSpec,
    FeatureBundle,
    HyperParams,
    OneHotLabels,
    l2_normalize_rows,
    one_hot,
    sample_episode,
)
from .kernels import (
    CalibratedGaussian,
    Composite,
    Gaussian,
    GaussianAffinity,
    KernelMatrix,
    KernelVector,
    Linear,
    WeightedLinear,
    gram_matrix,
    kernel_vector,
)
from .krr import KrrSolution, correlation_operator, interpolation_check, predict, solve
from .anchors import (
    AnchorSet,
    class_mean_anchors,
    image_anchors_from_shots,
    image_anchors_from_support,
    text_anchors_from_bundle,
)
from .methods import (
    CacheScores,
    MethodConfig,
    METHOD_NAMES,
    Scorer,
    TransformMatrix,
    ape_logits,
    ape_scores,
    cache_logits,
    compose_method,
    krr_transform_logits,
    tip_adapter_logits,
    zero_shot_logits,
)
from .trainer import TrainConfig, TrainReport, cross_entropy_loss, train
from .harness import (
    DataSplits,
    RunResult,
    SweepGrid,
    SyntheticSpec,
    compare,
    evaluate,
    gen_synthetic,
    load_bundle,
    save_bundle,
    sweep,
)

__version__ = "0.1.0"
