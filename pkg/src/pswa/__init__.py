"""pswa: windowed attention with a high-frequency bridging branch.

A desk-scale reference implementation, built for inspection rather than
speed: a small autodiff core over numpy, the split-channel block
(window attention + depthwise-separable bridge), the progressive
channel-coverage schedule, an order-K neighborhood similarity, a toy
diffusion-transformer training harness, and the diagnostics (attention
distance, radial spectra, FLOPs accounting) used to study all of it.
"""

from .attention import (
    AttentionParams,
    WindowSpec,
    block_window_mask,
    full_mhsa,
    masked_full_attention_oracle,
    relative_position_index,
    window_attention,
    window_merge,
    window_partition,
)
from .block import (
    BridgeParams,
    NeighborhoodK,
    PCCASchedule,
    PSWALayerConfig,
    aggregate_neighborhood,
    bridge_branch,
    channel_split,
    coverage_schedule,
    kth_neighborhood,
    kth_order_similarity,
    pcca_schedule,
    pswa_forward,
)
from .config import RunConfig
from .diagnostics import (
    FlopsReport,
    FlopsRow,
    SurveyRecord,
    attention_distance,
    attention_pair_flops,
    distance_histogram,
    distance_survey,
    feature_spectrum,
    flops_report,
    hf_band_fraction,
    measured_flops,
    radial_spectrum,
)
from .diffusion import (
    AdamW,
    NoiseSchedule,
    ToyDataset,
    TrainResult,
    ddpm_sample,
    q_sample,
    train_model,
    training_loss,
)
from .errors import (
    ConfigurationError,
    DegenerateMapError,
    DimensionError,
    DomainError,
    NumericsError,
    PSWAError,
    UndefinedRowError,
    UsageError,
)
from .model import (
    BlockParams,
    TimeEmbedParams,
    ToyDiT,
    ToyDiTConfig,
    block_forward,
    load_checkpoint,
    model_forward,
    patchify,
    save_checkpoint,
    sinusoidal_features,
    timestep_embedding,
    unpatchify,
)
from .numerics import (
    GradTape,
    Rng,
    Tensor,
    dump_tensor,
    gradcheck,
    load_tensor,
    no_grad,
    ops,
    set_debug_checks,
    set_default_dtype,
)

__version__ = "0.1.0"
