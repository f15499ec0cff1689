"""Set-based training and verification of neural networks with zonotopes."""

from setnn.attacks import AttackConfig, fgsm, fgsm_batch, pgd, pgd_batch
from setnn.config import ConfigError, RunConfig, load_run_config, resolve_backend
from setnn.data import (
    DataFormatError,
    Dataset,
    batches,
    load_mnist_idx,
    normalize_into_network,
    synthetic_2d,
)
from setnn.enclosure import approx_errors, enclosure_area, linear_slope, singh_enclose
from setnn.estimator import NotFittedError, SetTrainedClassifier
from setnn.network import (
    ACTIVATIONS,
    Activation,
    Linear,
    ModelFormatError,
    Network,
    deserialize,
    init_mlp,
    load_network,
    point_backward,
    point_forward,
    save_network,
    serialize,
    softmax,
)
from setnn.propagate import (
    BACKENDS,
    ForwardTrace,
    linf_input_set,
    output_bounds,
    output_f_radius,
    output_zonotope,
    set_backward,
    set_backward_batch,
    set_forward,
    set_forward_batch,
)
from setnn.training import (
    EpochMetrics,
    SetLossConfig,
    TrainConfig,
    TrainingDivergedError,
    set_loss,
    set_loss_gradient,
    train,
)
from setnn.verification import (
    Metrics,
    Verdict,
    classify,
    evaluate,
    interval_norm,
    max_verified_radius,
    verify_robust,
)
from setnn.zonotope import (
    Interval,
    Zonotope,
    affine_map,
    elementwise_add,
    f_radius,
    f_radius_gradient,
    interval_hull,
    minkowski_sum_interval,
    outer_product,
    point_zonotope,
    scale,
    support,
)

__version__ = "0.1.0"
