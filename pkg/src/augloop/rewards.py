"""The five-component reward stack and its weighted total.

Components, each computed per finalized episode trace:
  r_vqa  correctness of the final answer, judged on the last 500 rendered
         characters of the trace (continuous in [0, 1]);
  r_fmt  binary structural check for well-formed <think> and <answer> tags;
  r_cst  reasoning consistency / non-redundancy (continuous in [0, 1]);
  r_api  binary validity of every emitted API call (vacuously 1 with none);
  r_suc  conditional call-efficiency reward: zero unless the answer is
         correct, full credit up to the grace budget, then linear decay to
         zero at the call cap.

The weighted total uses weights (1, 0.25, 0.5, 0.25, 0.5) by default, so
the maximum attainable total is 2.5.

Judges are pluggable. The RuleJudge is deterministic (normalized
containment match; repetition ratio for consistency) and carries CI; the
HttpJudge fills the shipped prompt templates and calls an LLM endpoint.
"""

from __future__ import annotations

import ast
import json
import os
import re
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Protocol, Sequence

import httpx

from .episode import EpisodeTrace, render_history
from .errors import ConfigInvalid, JudgeUnavailable
from .parsing import scan_tags

DEFAULT_WEIGHTS = (1.0, 0.25, 0.5, 0.25, 0.5)
VQA_WINDOW_CHARS = 500


def _load_asset(name: str) -> str:
    return resources.files("augloop.assets").joinpath(name).read_text(encoding="utf-8")


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, float(x)))


@dataclass(frozen=True)
class RewardBreakdown:
    r_vqa: float
    r_fmt: float
    r_cst: float
    r_api: float
    r_suc: float
    total: float

    def as_dict(self) -> dict:
        return {"r_vqa": self.r_vqa, "r_fmt": self.r_fmt, "r_cst": self.r_cst,
                "r_api": self.r_api, "r_suc": self.r_suc, "total": self.total}


class Judge(Protocol):
    def score_vqa(self, question: str, ground_truth: str, answer_window: str) -> float: ...
    def score_consistency(self, full_trace_text: str) -> float: ...


_WS_RE = re.compile(r"\s+")


def _normalize(text: str) -> str:
    return _WS_RE.sub(" ", text.strip().lower())


class RuleJudge:
    """Deterministic judge: containment match for correctness, repeated
    4-gram ratio as a consistency approximation (not a learned rubric)."""

    def score_vqa(self, question: str, ground_truth: str, answer_window: str) -> float:
        gt = _normalize(ground_truth)
        if not gt:
            return 0.0
        return 1.0 if gt in _normalize(answer_window) else 0.0

    def score_consistency(self, full_trace_text: str) -> float:
        tokens = full_trace_text.split()
        if len(tokens) < 4:
            return 1.0
        grams = [tuple(tokens[i:i + 4]) for i in range(len(tokens) - 3)]
        return _clamp01(len(set(grams)) / len(grams))


class HttpJudge:
    """LLM judge over an OpenAI-style chat endpoint.

    Replies must carry a parseable {'score': ..., 'reasoning': ...} object;
    anything else raises JudgeUnavailable rather than defaulting to a score
    (silent zeros would corrupt RL signals).
    """

    def __init__(self, endpoint: str, model: str = "default",
                 api_key_env: str = "AUGLOOP_JUDGE_API_KEY",
                 timeout: float = 120.0, max_parallel: int = 4, transport=None):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key = os.environ.get(api_key_env, "")
        self.max_parallel = max_parallel
        self._client = httpx.Client(timeout=timeout, transport=transport)
        self._vqa_prompt = _load_asset("judge_prompt.txt")
        self._cst_prompt = _load_asset("consistency_prompt.txt")

    def _complete(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._client.post(
                f"{self.endpoint}/chat/completions",
                json={"model": self.model,
                      "messages": [{"role": "user", "content": prompt}]},
                headers=headers)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise JudgeUnavailable(f"judge endpoint failed: {exc}") from exc

    @staticmethod
    def parse_reply(content: str) -> float:
        """Extract the score from a {'score': ..., 'reasoning': ...} reply."""
        start = content.find("{")
        end = content.rfind("}")
        if start < 0 or end <= start:
            raise JudgeUnavailable(f"judge reply carries no score object: {content[:200]!r}")
        blob = content[start:end + 1]
        for loader in (json.loads, ast.literal_eval):
            try:
                obj = loader(blob)
                score = float(obj["score"])
                return _clamp01(score)
            except Exception:
                continue
        raise JudgeUnavailable(f"unparseable judge reply: {content[:200]!r}")

    def score_vqa(self, question: str, ground_truth: str, answer_window: str) -> float:
        prompt = self._vqa_prompt.format(question=question, ground_truth=ground_truth,
                                         prediction=answer_window)
        return self.parse_reply(self._complete(prompt))

    def score_consistency(self, full_trace_text: str) -> float:
        prompt = self._cst_prompt.format(trace_text=full_trace_text)
        return self.parse_reply(self._complete(prompt))


def answer_window(trace: EpisodeTrace) -> str:
    """Exactly the final 500 characters of the rendered trace (all of it if shorter)."""
    return render_history(trace.history)[-VQA_WINDOW_CHARS:]


def reward_vqa(trace: EpisodeTrace, ground_truth: str, judge: Judge) -> float:
    return _clamp01(judge.score_vqa(trace.question, ground_truth, answer_window(trace)))


def reward_fmt(trace: EpisodeTrace) -> int:
    scan = scan_tags(render_history(trace.history))
    return 1 if scan.has_think and scan.has_answer else 0


def reward_cst(trace: EpisodeTrace, judge: Judge) -> float:
    return _clamp01(judge.score_consistency(render_history(trace.history)))


def reward_api(trace: EpisodeTrace) -> int:
    return 1 if all(c.valid for c in trace.calls) else 0


def reward_suc(r_vqa: float, k: int, max_calls: int) -> float:
    """Piecewise conditional call reward: gated by correctness, full within
    the 2-call grace budget, linear decay on (2, K], zero past K."""
    if max_calls <= 2:
        raise ConfigInvalid("reward_suc requires max_calls K > 2")
    if k < 0:
        raise ConfigInvalid("call count k must be >= 0")
    if r_vqa < 0.5:
        return 0.0
    if k <= 2:
        return 1.0
    if k <= max_calls:
        return 1.0 - (k - 2) / (max_calls - 2)
    return 0.0


def total_reward(r_vqa: float, r_fmt: float, r_cst: float, r_api: float, r_suc: float,
                 weights: Sequence[float] = DEFAULT_WEIGHTS) -> RewardBreakdown:
    if len(weights) != 5 or any(w < 0 for w in weights):
        raise ConfigInvalid("weights must be 5 non-negative values")
    parts = (r_vqa, r_fmt, r_cst, r_api, r_suc)
    total = sum(w * p for w, p in zip(weights, parts))
    return RewardBreakdown(*parts, total=total)


def score_trace(trace: EpisodeTrace, ground_truth: str, judge: Judge,
                max_calls: int = 8,
                weights: Sequence[float] = DEFAULT_WEIGHTS) -> RewardBreakdown:
    """Compute the full breakdown for one finalized trace."""
    r_v = reward_vqa(trace, ground_truth, judge)
    return total_reward(
        r_v,
        float(reward_fmt(trace)),
        reward_cst(trace, judge),
        float(reward_api(trace)),
        reward_suc(r_v, trace.k, max_calls),
        weights=weights,
    )
