"""Strictly translation-equivariant networks over circular tensor spaces,
used as pre-classifier restorers for shifted and rotated inputs."""

from .circular import (
    CircularTensor,
    Shape,
    delta,
    delta_inverse,
    devectorize,
    inner,
    translate,
    vectorize,
)
from .constructive import (
    AperiodicityCertificate,
    BinaryDecompositionSpec,
    ConstructiveEstimator,
    binary_decomposition,
    build_binary_network,
    build_estimator_head,
    build_restorer,
    check_aperiodic,
)
from .errors import (
    CapacityError,
    ConfigError,
    DecodeError,
    EquirestoreError,
    ManifestError,
    NumericError,
    PeriodicDatasetError,
    ShapeError,
)
from .manifest import LabeledDataset, load_manifest, write_manifest
from .network import (
    CircularFilter,
    EquivariantLayer,
    EquivariantNetwork,
    apply_filter,
    apply_layer,
    check_equivariance,
    equivariance_witness,
    forward,
    materialize_matrix,
    max_equivariance_deviation,
)
from .pgm import load_pgm, save_pgm
from .polar import PolarGridSpec, rotate_image, to_polar
from .restore import (
    EvalTable,
    RestorationResult,
    correlation_estimator,
    estimate_translation,
    eval_grid,
    nn_classify,
    restore,
    restore_rotation,
)
from .training import (
    EpochRecord,
    EstimatorReport,
    GradientTape,
    TrainConfig,
    evaluate_estimator,
    loss_and_gradients,
    softmax_cross_entropy,
    support_offsets,
    train,
)

__version__ = "0.1.0"
