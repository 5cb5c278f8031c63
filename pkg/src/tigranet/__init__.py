"""Transformation-invariant image classification on grid graphs.

Images live as signals on a pixel-lattice graph; convolutions are
polynomials of the normalized Laplacian, pooling keeps the strongest
nodes, and a statistical layer of Chebyshev-filtered moments makes the
features invariant to lattice isometries. The equivariance lab measures
how far that invariance degrades under arbitrary rotations and sub-pixel
translations and compares against the analytic smoothness bounds.
"""

__version__ = "0.1.0"

from .grid import (
    Connectivity,
    GridGraph,
    LaplacianPowers,
    PaddedGrid,
    build_grid_graph,
    laplacian_powers,
    zero_pad_graph,
)
from .layers import (
    ArchitectureError,
    DenseLayer,
    FeatureStats,
    PoolState,
    SpectralConvLayer,
    dense_forward,
    dynamic_pool,
    dynamic_pool_backward,
    parse_architecture,
    softmax_nll,
    spectral_conv_forward,
    statistical_forward,
)
from .network import Network
from .spectral import (
    OracleSizeError,
    SpectralBasis,
    eigendecompose,
    filter_response_curve,
    generalized_translation,
    gft,
    igft,
    spectral_filter,
)
from .training import (
    AdamState,
    TrainingDivergedError,
    adam_step,
    gradient_check,
    init_network,
    init_spectral_filters,
    load_checkpoint,
    loss_and_gradients,
    save_checkpoint,
    spectral_conv_backward,
    statistical_backward,
    train,
)
from .transforms import (
    TransformSpec,
    apply_general_isometry,
    apply_graph_isometry,
    bicubic_downsample,
    bilinear_resize,
    closest_graph_isometry,
)
from .equivariance import (
    GapReport,
    equivariance_gap,
    mean_gap_experiment,
    resolution_for_epsilon,
    rotation_bound,
    translation_bound,
)
from .datasets import (
    LabeledSignalSet,
    image_to_signal,
    load_idx,
    make_mnist012,
    make_mnist_rot,
    make_mnist_trans,
    make_synthetic_digits,
    parse_idx,
)
