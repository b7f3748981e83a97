"""convtrace: EM-based convolutional trace extraction and classification.

The pipeline fits, per color channel, a linear pixel-prediction kernel
with an expectation-maximization mixture (predictable vs. outlier pixels),
concatenates the per-channel kernels into a fingerprint vector, and feeds
that vector to a bank of deterministic classifiers to tell naturally
captured images from generatively upsampled ones.
"""

from .attacks import AttackSpec, apply_attack, apply_attack_corpus, parse_attack_token
from .classify import (
    EvalReport,
    FeatureRecord,
    TrainedModel,
    evaluate,
    kfold_cv,
    load_model,
    predict,
    predict_batch,
    save_model,
    stratified_split,
    train,
)
from .em import (
    ConvolutionalTrace,
    EmConfig,
    KernelEstimate,
    PosteriorMap,
    e_step,
    estimate_sigma,
    extract_ct,
    m_step,
    neighbor_offsets,
    residual_map,
    run_em,
    trace_length,
)
from .errors import (
    ConvTraceError,
    DegenerateInputError,
    DimensionError,
    ExtractionError,
    FormatError,
    ParseError,
    ValidationError,
)
from .features import FeatureRow, read_features_csv, write_features_csv
from .imageio import (
    DatasetManifest,
    ManifestEntry,
    Plane,
    RgbImage,
    load_image,
    read_manifest,
    save_image,
    write_manifest,
)
from .synth import (
    SynthSpec,
    gen_dataset,
    gen_image,
    gen_noise_image,
    gen_smoothed_noise_image,
    transpose_conv_upsample,
    upsample_linear,
)

__version__ = "0.1.0"
