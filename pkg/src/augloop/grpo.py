"""Training-signal assembly: loss masking, group advantages, KL terms.

This module emits records for an external trainer; it computes no
gradients. The loss sequence for a trace keeps the query, every reasoning
and call span, and the final answer in-loss, while every tool-injected
<output> block is masked out -- the policy is never trained on text it did
not produce. Rewards are normalized within each rollout group (the
standard group-relative scheme); a mean-centering mode is exposed for the
alternate per-trajectory reading.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .episode import EpisodeTrace, canonical_json, render_history
from .errors import GroupTooSmall, LengthMismatch, StructureInvalid
from .parsing import scan_tags

BATCH_SCHEMA_VERSION = "grpo/v1"
DEGENERATE_STD = 1e-8
DEFAULT_KL_BETA = 0.01
NORMALIZATION_MODES = ("zscore", "center")


@dataclass(frozen=True)
class LossSequence:
    """Ordered (text, include_in_loss) spans whose concatenation is the
    rendered trace, byte for byte."""

    spans: tuple  # of (str, bool)

    @property
    def text(self) -> str:
        return "".join(t for t, _ in self.spans)

    @property
    def included_chars(self) -> int:
        return sum(len(t) for t, inc in self.spans if inc)

    @property
    def excluded_spans(self) -> tuple:
        return tuple(t for t, inc in self.spans if not inc)


def build_loss_sequence(trace: EpisodeTrace) -> LossSequence:
    """Mask tool outputs out of the rendered trace.

    Image attachments never appear in the rendered text (they travel
    out-of-band), so the only excluded characters are the <output> blocks.
    Raises StructureInvalid when a tool output does not follow an assistant
    message with exactly one code span.
    """
    history = trace.history
    spans: list[tuple[str, bool]] = []
    for i, message in enumerate(history):
        if message.role == "tool_output":
            if i == 0 or history[i - 1].role != "assistant":
                raise StructureInvalid(
                    f"tool output at position {i} does not follow an assistant message")
            if len(scan_tags(history[i - 1].text).code_spans) != 1:
                raise StructureInvalid(
                    f"assistant message before tool output {i} must contain exactly one code span")
        prefix = ("\n" if i else "") + f"<|{message.role}|>"
        if message.role == "tool_output":
            spans.append((prefix, True))
            spans.append((message.text, False))
        else:
            spans.append((prefix + message.text, True))
    seq = LossSequence(tuple(spans))
    assert seq.text == render_history(history)
    return seq


def group_normalize(rewards: Sequence[float], mode: str = "zscore") -> list[float]:
    """Per-group advantages. zscore: (r - mean) / population std, all-zero
    when the group is degenerate (std < 1e-8); center: mean-subtraction only."""
    if len(rewards) < 2:
        raise GroupTooSmall(f"need at least 2 rewards to normalize, got {len(rewards)}")
    if mode not in NORMALIZATION_MODES:
        raise ValueError(f"unknown normalization mode {mode!r}")
    arr = np.asarray(rewards, dtype=np.float64)
    centered = arr - arr.mean()
    if mode == "center":
        return centered.tolist()
    std = arr.std()  # population std
    if std < DEGENERATE_STD:
        return [0.0] * len(rewards)
    return (centered / std).tolist()


@dataclass(frozen=True)
class KlRecord:
    values: np.ndarray
    beta: float = DEFAULT_KL_BETA


def kl_term(logp_policy: Sequence[float], logp_ref: Sequence[float],
            beta: float = DEFAULT_KL_BETA) -> KlRecord:
    """Per-position estimator exp(d) - d - 1 with d = logp_ref - logp_policy;
    non-negative by convexity, exactly zero on identical vectors."""
    policy = np.asarray(logp_policy, dtype=np.float64)
    ref = np.asarray(logp_ref, dtype=np.float64)
    if policy.shape != ref.shape:
        raise LengthMismatch(
            f"log-prob vectors differ in length: {policy.shape} vs {ref.shape}")
    delta = ref - policy
    values = np.expm1(delta) - delta  # exp(d) - d - 1, stable near zero
    return KlRecord(values=np.maximum(values, 0.0), beta=beta)


@dataclass(frozen=True)
class ScoredTrace:
    trace_id: str
    trace: EpisodeTrace
    reward: float
    logp_policy: Optional[tuple] = None
    logp_ref: Optional[tuple] = None


@dataclass(frozen=True)
class RolloutGroup:
    group_id: str
    traces: tuple  # of ScoredTrace


def assemble_batch(groups: Sequence[RolloutGroup], beta: float = DEFAULT_KL_BETA,
                   mode: str = "zscore") -> list[dict]:
    """Flatten rollout groups into trainer-ready records.

    Each record carries the masked spans, the trace's group-relative
    advantage (broadcast to every in-loss position by the consumer), KL
    values when log-probs were supplied, and the batch-wide normalization
    constant (the total in-loss length). Output order is deterministic:
    sorted by (group_id, trace_id).
    """
    rows = []
    for group in sorted(groups, key=lambda g: g.group_id):
        traces = sorted(group.traces, key=lambda t: t.trace_id)
        advantages = group_normalize([t.reward for t in traces], mode=mode)
        for scored, adv in zip(traces, advantages):
            seq = build_loss_sequence(scored.trace)
            kl_values = None
            if scored.logp_policy is not None and scored.logp_ref is not None:
                kl_values = kl_term(scored.logp_policy, scored.logp_ref, beta).values.tolist()
            rows.append({
                "group_id": group.group_id,
                "trace_id": scored.trace_id,
                "reward": scored.reward,
                "advantage": adv,
                "spans": [{"text": t, "in_loss": inc} for t, inc in seq.spans],
                "tau_len": seq.included_chars,
                "kl": kl_values,
                "beta": beta,
            })
    total_tau = sum(r["tau_len"] for r in rows)
    for row in rows:
        row["schema_version"] = BATCH_SCHEMA_VERSION
        row["total_tau_len"] = total_tau
        row["weight"] = row["tau_len"] / total_tau if total_tau else 0.0
    return rows


def write_batch(path, records: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(canonical_json(rec) + "\n")
