"""Sigma-delta neural network denoiser: event-driven simulation, accounting, model files."""

from .accounting import ParamBreakdown, count_bits, count_params, model_size_bytes, param_breakdown
from .events import (
    DeltaState,
    SigmaState,
    SparseEvents,
    delta_encode,
    delta_reconstruct,
    sigma_accumulate,
)
from .model_io import ModelFormatError, ModelVersionError, load_model, save_model
from .network import (
    DEFAULT_TOPOLOGY,
    MAX_DELAY,
    LayerState,
    NetworkState,
    OpsCounter,
    SdnnLayer,
    SdnnNetwork,
    apply_mask,
    delay_frames,
    denoise,
    layer_step,
    network_step,
    quantize_weights,
    run_network,
)
