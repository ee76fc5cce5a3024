"""Desk-scale diffusion laboratory for multi-model, multi-condition,
multi-intensity guidance fusion, validated against analytic Gaussian-mixture
data worlds."""

from .schedule import NoiseSchedule, Sample, forward_diffuse, make_schedule
from .world import (
    AnalyticPredictor,
    DiffusedMixture,
    MixtureWorld,
    analytic_noise_prediction,
    diffuse_mixture,
    log_density,
    posterior_log_mass,
    quadrant_world,
    rejection_sample_product,
    restrict,
    sample_data,
    score,
    single_gaussian_world,
    std_normal_world,
    weighted_product_log_density,
)
from .guidance import (
    FunctionPredictor,
    GuidanceStack,
    GuidanceTerm,
    NoisePredictor,
    cfg_reference,
    compose,
    concept_stack,
    negative_prompt_reference,
)
from .sampler import SamplerConfig, ancestral_step, ddim_step, generate, inference_grid
from .denoiser import (
    Architecture,
    Denoiser,
    TrainConfig,
    TrainingDiverged,
    gradient_check,
    load_checkpoint,
    make_probe_batch,
    save_checkpoint,
    train,
    world_hash,
)
from .attention import (
    AttentionBlock,
    attention_forward,
    convert_to_null_text,
    null_text_forward,
)
from .metrics import GaussianFit, GridSpec, assignment_rate, frechet, grid_divergence

__version__ = "0.1.0"
