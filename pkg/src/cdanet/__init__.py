"""Volumetric multi-structure segmentation with contour- and
distance-transform-guided shape-aware attention."""

from .volume_io import (
    ChannelMapStack,
    FeatureMap,
    IntensityVolume,
    LabelVolume,
    decode_onehot,
    export_attention,
    generate_phantom,
    load_labels,
    load_volume,
    one_hot,
    save_prediction,
    save_volume,
)
from .preprocess import (
    PreprocessConfig,
    augment,
    contour_target,
    edt_bruteforce,
    fdt_target,
    foreground_distance,
    resize,
    window_normalize,
)
from .network import (
    CDANet,
    ModelVariantSpec,
    VARIANTS,
    build_variant,
    cda_forward,
    count_parameters,
)
from .losses import (
    LossWeights,
    generalized_dice,
    mse_dt,
    penalty_energy,
    total_loss,
    weighted_bce,
)
from .metrics import (
    StructureMetrics,
    SurfaceSet,
    assd,
    dsc,
    evaluate_case,
    extract_surface,
    hd95,
    jaccard,
    sensitivity_precision,
)

__version__ = "0.1.0"
