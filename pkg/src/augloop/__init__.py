"""Agentic visual-augmentation loop runtime.

Library surface: deterministic image augmentation execution, the call
grammar parser, the episode loop with pluggable model backends, the
five-component reward stack, training-signal assembly, dataset filtering
and synthesis tooling, a benchmark harness, and a local HTTP service.
"""

__version__ = "0.1.0"

from .image import ImageBuffer
from .ops import (
    AugmentationOp,
    ExecOutcome,
    apply_op,
    downsample_for_compression,
)
from .parsing import (
    ParsedCall,
    ParseError,
    TagScan,
    extract_call,
    find_stop,
    render_call,
    scan_tags,
)
from .episode import (
    EpisodeConfig,
    EpisodeTrace,
    HttpChatBackend,
    Message,
    Query,
    SamplingParams,
    ScriptedBackend,
    render_history,
    run_episode,
    trace_from_dict,
    trace_to_dict,
)
from .rewards import (
    DEFAULT_WEIGHTS,
    HttpJudge,
    RewardBreakdown,
    RuleJudge,
    reward_api,
    reward_fmt,
    reward_suc,
    reward_vqa,
    score_trace,
    total_reward,
)
from .grpo import (
    LossSequence,
    RolloutGroup,
    ScoredTrace,
    assemble_batch,
    build_loss_sequence,
    group_normalize,
    kl_term,
)

__all__ = [name for name in dir() if not name.startswith("_")]
