"""Benchmark execution and reporting: pass@k, call-frequency statistics,
and the resolution-compression experiment.

Manifests are line-delimited JSON ({id, image, question, answer, split,
type, ...}); raw attempt traces are persisted one file per (item, attempt)
before any scoring, so interrupted runs resume without re-running finished
items. Scoring is a separate deterministic pass.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

from .episode import (
    EpisodeConfig,
    EpisodeTrace,
    Query,
    SamplingParams,
    canonical_json,
    run_episode,
    trace_from_dict,
    trace_to_dict,
)
from .image import ImageBuffer
from .ops import (
    OP_KINDS,
    AugmentationOp,
    downsample_for_compression,
    flip,
    rotate,
)
from .parsing import render_call
from .rewards import Judge, reward_vqa

import numpy as np

CORRECT_THRESHOLD = 0.5
# Tab-style frequency columns: resize up/down are reported as one API.
_FREQ_KEYS = ("crop", "resize", "flip", "rotate", "denoise", "edge")


@dataclass(frozen=True)
class BenchmarkItem:
    item_id: str
    image_path: str
    question: str
    answer: str
    split: str = "other"  # real_world | synthetic | other
    type_tag: Optional[str] = None
    required_op: Optional[dict] = None  # fixture metadata for oracle backends
    wrong_answer: str = "unknown"


def read_manifest(path) -> list[BenchmarkItem]:
    items = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["id"] in seen:
                raise ValueError(f"duplicate item id {rec['id']!r} in manifest")
            seen.add(rec["id"])
            items.append(BenchmarkItem(
                item_id=rec["id"], image_path=rec["image"], question=rec["question"],
                answer=rec["answer"], split=rec.get("split", "other"),
                type_tag=rec.get("type"), required_op=rec.get("required_op"),
                wrong_answer=rec.get("wrong_answer", "unknown"),
            ))
    return items


def write_manifest(path, items: Sequence[BenchmarkItem]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for it in items:
            rec = {"id": it.item_id, "image": it.image_path, "question": it.question,
                   "answer": it.answer, "split": it.split}
            if it.type_tag:
                rec["type"] = it.type_tag
            if it.required_op:
                rec["required_op"] = it.required_op
            if it.wrong_answer != "unknown":
                rec["wrong_answer"] = it.wrong_answer
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class AttemptResult:
    item: BenchmarkItem
    attempt: int
    trace: EpisodeTrace


def run_benchmark(items: Sequence[BenchmarkItem],
                  backend_factory: Callable[[BenchmarkItem, int], object],
                  config: EpisodeConfig,
                  attempts: int,
                  sampling: SamplingParams,
                  out_dir,
                  compress_rate: float = 1.0) -> list[AttemptResult]:
    """Run `attempts` episodes per item with distinct per-attempt seeds.

    Traces are persisted as <out_dir>/<item>__<attempt>.json before any
    scoring; existing files are trusted and not re-run (resume by id).
    """
    os.makedirs(out_dir, exist_ok=True)
    results = []
    for item in items:
        image = ImageBuffer.load(item.image_path)
        if compress_rate < 1.0:
            image = downsample_for_compression(image, compress_rate)
        for attempt in range(1, attempts + 1):
            trace_path = os.path.join(out_dir, f"{item.item_id}__{attempt}.json")
            if os.path.exists(trace_path):
                with open(trace_path, "r", encoding="utf-8") as fh:
                    stored = json.load(fh)
                results.append(AttemptResult(item, attempt, trace_from_dict(stored["trace"])))
                continue
            seed = (sampling.seed or 0) * 1000 + attempt
            attempt_sampling = replace(sampling, seed=seed)
            attempt_config = replace(config, sampling=attempt_sampling)
            backend = backend_factory(item, attempt)
            trace = run_episode(backend, Query(image=image, question=item.question),
                                attempt_config)
            payload = {
                "item_id": item.item_id,
                "attempt": attempt,
                "sampling": {"temperature": attempt_sampling.temperature,
                             "top_p": attempt_sampling.top_p,
                             "top_k": attempt_sampling.top_k,
                             "seed": attempt_sampling.seed},
                "trace": trace_to_dict(trace),
            }
            with open(trace_path, "w", encoding="utf-8") as fh:
                fh.write(canonical_json(payload))
            results.append(AttemptResult(item, attempt, trace))
    return results


@dataclass(frozen=True)
class PassKReport:
    ks: tuple
    per_item: dict  # item_id -> {"split", "verdicts", "pass@k": {...}}
    per_split: dict  # split -> {"pass@k": rate}
    overall_pooled: dict  # "pass@k" -> rate
    overall_macro: dict
    sampling_config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ks": list(self.ks),
            "per_item": self.per_item,
            "per_split": self.per_split,
            "overall_pooled": self.overall_pooled,
            "overall_macro": self.overall_macro,
            "sampling_config": self.sampling_config,
        }

    def table(self) -> str:
        lines = ["split      " + "  ".join(f"pass@{k}" for k in self.ks)]
        for split in sorted(self.per_split):
            rates = self.per_split[split]
            lines.append(f"{split:<10} " + "  ".join(
                f"{rates[f'pass@{k}'] * 100:6.1f}%" for k in self.ks))
        lines.append("pooled     " + "  ".join(
            f"{self.overall_pooled[f'pass@{k}'] * 100:6.1f}%" for k in self.ks))
        lines.append("macro      " + "  ".join(
            f"{self.overall_macro[f'pass@{k}'] * 100:6.1f}%" for k in self.ks))
        return "\n".join(lines)


def score_passk(results: Sequence[AttemptResult], judge: Judge,
                ks: Sequence[int] = (1, 5),
                sampling_config: Optional[dict] = None) -> PassKReport:
    """An item is correct@k iff any of its first k attempts is judged correct.

    The Average is pooled over items by default; macro (mean of split rates)
    is reported alongside for unequal splits.
    """
    by_item: dict[str, dict] = {}
    for res in sorted(results, key=lambda r: (r.item.item_id, r.attempt)):
        entry = by_item.setdefault(res.item.item_id,
                                   {"split": res.item.split, "verdicts": []})
        score = reward_vqa(res.trace, res.item.answer, judge)
        entry["verdicts"].append(score >= CORRECT_THRESHOLD)

    ks = tuple(ks)
    per_item = {}
    for item_id, entry in by_item.items():
        verdicts = entry["verdicts"]
        per_item[item_id] = {
            "split": entry["split"],
            "verdicts": verdicts,
            **{f"pass@{k}": any(verdicts[:k]) for k in ks},
        }

    splits = sorted({e["split"] for e in per_item.values()})
    per_split = {}
    for split in splits:
        members = [e for e in per_item.values() if e["split"] == split]
        per_split[split] = {
            f"pass@{k}": sum(e[f"pass@{k}"] for e in members) / len(members) for k in ks
        }
    n = len(per_item)
    overall_pooled = {
        f"pass@{k}": sum(e[f"pass@{k}"] for e in per_item.values()) / n for k in ks
    } if n else {f"pass@{k}": 0.0 for k in ks}
    overall_macro = {
        f"pass@{k}": sum(per_split[s][f"pass@{k}"] for s in splits) / len(splits) for k in ks
    } if splits else {f"pass@{k}": 0.0 for k in ks}

    return PassKReport(ks=ks, per_item=per_item, per_split=per_split,
                       overall_pooled=overall_pooled, overall_macro=overall_macro,
                       sampling_config=sampling_config or {})


@dataclass(frozen=True)
class ApiFreqReport:
    total_episodes: int
    direct_pct: float
    fail_pct: float
    op_pct: dict
    zero_denominator: bool = False

    def to_dict(self) -> dict:
        return {"total_episodes": self.total_episodes, "direct_pct": self.direct_pct,
                "fail_pct": self.fail_pct, "op_pct": self.op_pct,
                "zero_denominator": self.zero_denominator}


def api_frequency(traces: Sequence[EpisodeTrace]) -> ApiFreqReport:
    """Per-episode presence statistics: direct = no call at all; fail = any
    invalid call or a forced/exhausted termination; per-op columns count
    episodes where the op appears at least once (they can sum past 100%)."""
    total = len(traces)
    if total == 0:
        return ApiFreqReport(0, 0.0, 0.0, {k: 0.0 for k in _FREQ_KEYS},
                             zero_denominator=True)
    direct = sum(1 for t in traces if t.k == 0)
    fail = sum(
        1 for t in traces
        if t.terminated_by in ("forced", "context_exhausted")
        or any(c.status == "parse_error" for c in t.calls)
    )
    op_counts = {k: 0 for k in _FREQ_KEYS}
    for t in traces:
        kinds = set()
        for c in t.calls:
            if c.op is None:
                continue
            kind = "resize" if c.op.kind.startswith("resize") else c.op.kind
            kinds.add(kind)
        for kind in kinds:
            op_counts[kind] += 1
    pct = lambda x: 100.0 * x / total
    return ApiFreqReport(
        total_episodes=total,
        direct_pct=pct(direct),
        fail_pct=pct(fail),
        op_pct={k: pct(v) for k, v in op_counts.items()},
    )


def compression_experiment(items: Sequence[BenchmarkItem],
                           backend_factory: Callable[[BenchmarkItem, int], object],
                           rates: Sequence[float],
                           config: EpisodeConfig,
                           judge: Judge,
                           out_dir,
                           sampling: SamplingParams = SamplingParams(temperature=0.1, top_p=0.8, seed=0)) -> dict:
    """Accuracy with vs. without resize_up on compressed inputs, per rate.

    The "without" arm strips resize_up from the executable vocabulary, so
    upscale requests come back as unknown-operation errors.
    """
    cells = []
    for rate in rates:
        if not (0.0 < rate <= 1.0):
            raise ValueError(f"rates must lie in (0, 1], got {rate}")
        for allow_resize_up in (True, False):
            allowed = OP_KINDS if allow_resize_up else tuple(
                k for k in OP_KINDS if k != "resize_up")
            arm_config = replace(config, allowed_ops=allowed)
            arm_dir = os.path.join(
                out_dir, f"rate{int(rate * 100):03d}_{'with' if allow_resize_up else 'without'}")
            results = run_benchmark(items, backend_factory, arm_config, attempts=1,
                                    sampling=sampling, out_dir=arm_dir,
                                    compress_rate=rate)
            correct = sum(
                reward_vqa(r.trace, r.item.answer, judge) >= CORRECT_THRESHOLD
                for r in results)
            invoked = sum(
                any(c.op is not None and c.op.kind == "resize_up" for c in r.trace.calls)
                for r in results)
            cells.append({
                "rate": rate,
                "resize_up_allowed": allow_resize_up,
                "accuracy": correct / len(results) if results else 0.0,
                "resize_up_rate": invoked / len(results) if results else 0.0,
                "episodes": len(results),
            })
    return {"cells": cells}


# ---------------------------------------------------------------------------
# Desk-scale adversarial fixture synthesis + oracle backend
# ---------------------------------------------------------------------------

_FIXTURE_OPS = (rotate(180), flip("horizontal"),
                AugmentationOp("denoise", {"method": "median", "kernel_size": 3}), None)

_NARRATION = {
    "rotate": "rotate the image upright",
    "flip": "mirror the image back",
    "denoise": "clean up the noise",
    "crop": "zoom into the region",
    "resize_up": "enlarge the image",
    "resize_down": "shrink the image",
    "edge": "look at the edges",
}


def synthesize_fixture(out_dir, count: int = 20, seed: int = 0,
                       size: int = 64) -> str:
    """Build a small adversarial-style benchmark: random images, each tagged
    with the augmentation an oracle needs before it can answer (None for
    directly answerable items). Ground truth is recorded in the manifest.
    Returns the manifest path."""
    rng = np.random.default_rng(seed)
    image_dir = os.path.join(out_dir, "images")
    os.makedirs(image_dir, exist_ok=True)
    items = []
    for i in range(count):
        pixels = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
        image = ImageBuffer(pixels)
        op = _FIXTURE_OPS[i % len(_FIXTURE_OPS)]
        if op is not None:
            # Store the pre-transformed image so the oracle must undo it.
            from .ops import apply_op
            image = apply_op(image, op, image).image
        path = os.path.join(image_dir, f"item{i:03d}.png")
        image.save(path)
        items.append(BenchmarkItem(
            item_id=f"item{i:03d}",
            image_path=path,
            question=f"What is the hidden label in image {i}?",
            answer=f"label-{i:03d}",
            split="synthetic" if i % 2 else "real_world",
            type_tag="hidden-text",
            required_op=({"kind": op.kind, "params": op.params} if op else None),
            wrong_answer="unreadable",
        ))
    manifest = os.path.join(out_dir, "manifest.jsonl")
    write_manifest(manifest, items)
    return manifest


class OracleBackend:
    """Scripted stand-in for a trained model: answers correctly only once the
    item's required augmentation has produced an image; answers the wrong
    answer if the call failed; answers directly when no augmentation is
    required."""

    def __init__(self, item: BenchmarkItem):
        self.item = item
        self.required = (AugmentationOp(item.required_op["kind"],
                                        dict(item.required_op["params"]))
                         if item.required_op else None)

    def _answer(self, text: str) -> str:
        return f"The label is visible now.</think><answer>{text}</answer>"

    def generate(self, history, stop_set, sampling):
        from .episode import GeneratedSpan, find_stop
        last = history[-1]
        if last.role == "tool_output":
            answer = self.item.answer if "<image>" in last.text else self.item.wrong_answer
            text = self._answer(answer)
        elif self.required is None:
            text = f"<think>The image is clear enough. {self._answer(self.item.answer)}"
        else:
            narration = _NARRATION[self.required.kind]
            text = (f"<think>I should {narration} first.\n"
                    f"<code>\n{render_call(self.required)}\n</code>")
        hit = find_stop(text, stop_set)
        if hit is not None:
            return GeneratedSpan(text[:hit.position + len(hit.stop)], "stop")
        return GeneratedSpan(text, "length")
