"""Attention-guided motion transfer for latent video diffusion models."""
from .attention import KINDS, SITES, AttentionArchive, AttentionRecord, AttentionSite, compute_attention
from .denoiser import Denoiser, DenoiserOutput, PromptEncoding
from .errors import (
    ArchiveLookupError,
    BindingError,
    ConfigurationError,
    ContractError,
    MotionTransferError,
    NumericalError,
    OrderingError,
    PhaseError,
)
from .fixtures import Tracklet, synth_fixture
from .guidance import GuidanceConfig, LossBreakdown, guidance_losses, latent_update, total_loss
from .masks import MaskSet, binarize, build_mask_set
from .metrics import ToyEmbedder, motion_fidelity, temporal_consistency, text_similarity
from .pipeline import GenerationResult, LatentTrajectory, generate, invert
from .run import RunManifest, TransferRun, transfer
from .scheduler import LatentState, NoiseSchedule, ddim_invert_step, ddim_step, make_schedule
from .toy import ToyCodec, ToyDenoiser, ToyDenoiserSpec

__version__ = "0.1.0"
