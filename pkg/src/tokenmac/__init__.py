"""Link-level simulation and receiver library for token-domain multiple access.

K active devices tokenize their sources, modulate each token onto a column of
a shared Gaussian codebook, and transmit simultaneously over a multi-antenna
multiple-access channel.  The receiver recovers the token sequences in three
stages: per-slot active-token detection (AMP with a spike-and-slab prior),
token-to-device assignment (clustering the per-token channel estimates), and
context-based prediction of the positions left masked by token collisions.
"""

__version__ = "0.1.0"

from tokenmac.source import (
    SourceModel,
    TokenBatch,
    fit_markov,
    gen_markov_sources,
    load_corpus,
    random_markov,
)
from tokenmac.phy import (
    DeviceChannel,
    EquivalentChannel,
    ModulationCodebook,
    ReceivedFrame,
    SimConfig,
    equivalent_channel,
    gen_channels,
    gen_codebook,
    modulate,
    transmit_frame,
)
from tokenmac.detector import (
    AmpState,
    DetectionOutput,
    DetectorConfig,
    amp_iterate,
    denoiser_moments,
    detect_tokens,
    em_update_gamma,
)
from tokenmac.assignment import (
    AssignmentState,
    ClusterModel,
    coarse_assign,
    compute_score_threshold,
    kmeanspp_cluster,
    refine_assignment,
    score_matrix,
)
from tokenmac.predictor import (
    ExternalPredictor,
    MarkovPredictor,
    MaskedSequence,
    PredictionDistribution,
    PredictionError,
    external_predict,
    markov_posterior,
    predict_masked,
    random_fill,
)
from tokenmac.metrics import (
    DeviceMatching,
    LatencyModel,
    MetricsRecord,
    latency_orth,
    latency_todma,
    match_devices,
    match_devices_by_ter,
    nmse,
    orth_token_errors,
    tder,
    ter,
)
from tokenmac.harness import (
    ExperimentConfig,
    StageError,
    load_config,
    run_sweep,
    run_trial,
)
