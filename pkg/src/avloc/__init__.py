"""Audio-visual sound source localization via iterative contrastive learning.

A desk-scale pipeline: synthetic paired corpora, log-mel audio features,
compact patch-MLP encoders, a contrastive objective refined by pseudo-labels
from a previous-epoch snapshot, response-map localization, and cIoU/AUC
evaluation.  Every gradient is computed exactly and is verifiable against
central finite differences.
"""

from .autodiff import (
    GradCheckReport,
    GradientError,
    ParamVector,
    ShapeError,
    Var,
    finite_diff_check,
    grad,
    value_and_grad,
)
from .corpus import (
    BoundingBox,
    CorpusConfig,
    CorpusError,
    CorpusInstance,
    CorpusManifest,
    SceneObject,
    generate_corpus,
    generate_instance,
    load_corpus,
)
from .dsp import DspConfig, Spectrogram, Waveform, log_mel_spectrogram, mel_filterbank, stft
from .encoders import (
    AudioEmbedding,
    EncoderConfig,
    Snapshot,
    VisualFeatureMap,
    audio_encode,
    init_params,
    load_checkpoint,
    phi,
    phi_subset,
    save_checkpoint,
    take_snapshot,
    visual_encode,
)
from .evaluation import (
    ConsensusMap,
    EvalResult,
    audio_retrieval,
    ciou,
    consensus_map,
    evaluate_corpus,
    success_curve,
)
from .localization import (
    ResponseMap,
    SoundingRegion,
    export_heatmap,
    minmax_normalize,
    response_map,
    threshold_region,
    upsample_bilinear,
)
from .losses import (
    ABSENT,
    Batch,
    PseudoLabels,
    compute_pseudo_labels,
    contrastive_loss,
    iterative_loss,
    relation_matrix,
    sample_nonsounding_feature,
    sample_sounding_feature,
)
from .rng import Rng
from .training import (
    TrainConfig,
    TrainingError,
    TrainResult,
    VariantSpec,
    ablation_variants,
    train,
)

__version__ = "0.1.0"
