"""Self-supervised detection of per-input rotation-symmetry levels.

A constrained invariant-equivariant autoencoder learns per-input rotation
distributions; latent-space neighborhoods plus closed-form estimators yield
symmetry-level pseudo-labels; a boundary network learns to predict each
input's level. Extras: symmetry standardization, out-of-distribution symmetry
detection, and an analytic oracle testbed.
"""

from .angles import (
    CYCLIC,
    GAUSSIAN,
    IDENTITY,
    UNIFORM,
    DegenerateReadoutError,
    SymmetrySpec,
    canonicalize_angle,
    compose,
    cyclic_elements,
    geodesic_distance,
    inverse,
    sample_spec,
    xi_from_vector,
)
from .datasets import (
    BaseCorpus,
    SampleRecord,
    SymDataset,
    SymmetryProfile,
    build_dataset,
    load_dataset,
    parse_idx,
    preset_profile,
    render_glyph_corpus,
    save_dataset,
)
from .imaging import rotate_batch, rotate_image, rotate_tensor
from .nets import BoundaryTheta, DecoderDelta, EncoderEta, ModelBundle, ModelConfig, PsiEstimator
from .pseudolabels import (
    Estimate,
    NeighborIndex,
    estimate_cyclic,
    estimate_gaussian,
    estimate_uniform,
    filter_outliers,
    knn,
    pseudolabels_for_dataset,
)
from .standardize import (
    OODReport,
    StandardizedDataset,
    downstream_compare,
    evaluate_ood,
    is_ood,
    standardize_dataset,
    standardize_sample,
)
from .testbed import check_prop1, check_prop2, check_prop3, expected_l2, monte_carlo_l2
from .training import TrainConfig, TrainLog, embed_dataset, loss_l1, loss_l2, pretrain, train_theta

__version__ = "0.1.0"
