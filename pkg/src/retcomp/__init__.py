"""Retrieve-then-compress video token experiments with compression-aware GRPO."""

from .cgrpo import (
    CGRPOConfig,
    Rollout,
    RolloutGroup,
    StepMetrics,
    ToyPolicy,
    cgrpo_objective,
    cgrpo_step,
    compression_reward,
    kl_categorical,
    normalize_advantages,
    policy_forward,
    retention_ratio,
    sft_step,
    total_reward,
)
from .compressor import (
    CompressConfig,
    CompressReport,
    compress_sequence,
    compress_window,
    frame_similarity,
    merge_frames,
    window_budget,
)
from .core import TokenSequence, cosine, make_rng, mean_pool
from .synth import QASample, SynthConfig, eval_accuracy, gen_prototypes, gen_video
from .vmr import (
    MemoryBank,
    MemoryFragment,
    RetrievalResult,
    SegmentConfig,
    assemble_retrieved,
    bank_load,
    bank_save,
    embed_fragment,
    embed_query,
    retrieve_topk,
    segment_events,
)

__version__ = "0.1.0"
