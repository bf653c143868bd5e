"""Dataset tooling: pass@k difficulty filtering and format-trajectory synthesis.

Stage one grades each question by how many of k sampled attempts a judge
marks wrong, then partitions: easiest items (difficulty 0) are kept at a
seeded 10% sample, mid-difficulty items are kept wholesale, and items every
attempt failed go to a semantic-validity recheck queue instead of being
silently dropped.

Stage two fabricates structurally perfect tool-use trajectories from plain
QA pairs by splicing a rendered API call into a fixed template; the result
is guaranteed to pass the format and call-validity rewards by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import TemplateUnknown
from .ops import AugmentationOp
from .parsing import extract_call, render_call, scan_tags, ParsedCall
from .rewards import Judge

CORRECT_THRESHOLD = 0.5
LEVEL0_SAMPLE_RATE = 0.10

DISPOSITION_KEEP = "keep"
DISPOSITION_SAMPLE = "sample_10pct"
DISPOSITION_RECHECK = "recheck_validity"
DISPOSITION_DROP = "drop"


@dataclass(frozen=True)
class QAItem:
    item_id: str
    question: str
    answer: str
    image_path: Optional[str] = None
    split: Optional[str] = None
    type_tag: Optional[str] = None


@dataclass(frozen=True)
class DifficultyRecord:
    item_id: str
    k: int
    verdicts: tuple  # per-attempt correctness flags
    difficulty: int  # number of incorrect attempts, in [0, k]
    disposition: Optional[str] = None


@dataclass(frozen=True)
class FilterPartition:
    kept: tuple
    recheck: tuple
    dropped: tuple

    @property
    def summary(self) -> dict:
        counts: dict[int, int] = {}
        for rec in (*self.kept, *self.recheck, *self.dropped):
            counts[rec.difficulty] = counts.get(rec.difficulty, 0) + 1
        return {
            "kept": len(self.kept),
            "recheck": len(self.recheck),
            "dropped": len(self.dropped),
            "by_difficulty": {str(k): v for k, v in sorted(counts.items())},
        }


def passk_difficulty(item: QAItem, attempts: Sequence[str], judge: Judge) -> DifficultyRecord:
    """Judge each attempt independently; difficulty = number judged wrong."""
    if not attempts:
        raise ValueError("need at least one attempt")
    verdicts = tuple(
        judge.score_vqa(item.question, item.answer, attempt) >= CORRECT_THRESHOLD
        for attempt in attempts
    )
    return DifficultyRecord(
        item_id=item.item_id,
        k=len(attempts),
        verdicts=verdicts,
        difficulty=len(attempts) - sum(verdicts),
    )


def apply_filter_policy(records: Sequence[DifficultyRecord], seed: int,
                        sample_rate: float = LEVEL0_SAMPLE_RATE) -> FilterPartition:
    """Deterministic partition under a seeded generator.

    difficulty 0        -> kept with probability sample_rate
    0 < difficulty < k  -> kept unconditionally
    difficulty == k     -> recheck queue (never silently dropped)
    """
    rng = np.random.default_rng(seed)
    kept, recheck, dropped = [], [], []
    for rec in records:
        if rec.disposition is not None:
            raise ValueError(f"record {rec.item_id} already has a disposition")
        if rec.difficulty == 0:
            # One draw per level-0 record, in input order, keeps the
            # partition byte-reproducible for a given seed.
            if rng.random() < sample_rate:
                kept.append(replace(rec, disposition=DISPOSITION_SAMPLE))
            else:
                dropped.append(replace(rec, disposition=DISPOSITION_DROP))
        elif rec.difficulty == rec.k:
            recheck.append(replace(rec, disposition=DISPOSITION_RECHECK))
        else:
            kept.append(replace(rec, disposition=DISPOSITION_KEEP))
    return FilterPartition(tuple(kept), tuple(recheck), tuple(dropped))


def resolve_recheck(records: Sequence[DifficultyRecord],
                    verifier: Optional[Callable[[DifficultyRecord], bool]] = None):
    """Split the recheck queue with a pluggable semantic-validity verifier.

    Without a verifier every record stays queued for external review.
    """
    if verifier is None:
        return tuple(records), ()
    kept = tuple(r for r in records if verifier(r))
    discarded = tuple(r for r in records if not verifier(r))
    return kept, discarded


# ---------------------------------------------------------------------------
# Format-trajectory synthesis
# ---------------------------------------------------------------------------

_NARRATIONS = {
    "crop": "crop the region of interest",
    "resize_up": "enlarge the image for a closer look",
    "resize_down": "shrink the image to see the whole layout",
    "rotate": "rotate the pre-rotated image back to its upright orientation",
    "flip": "flip the mirrored image back to its readable orientation",
    "denoise": "denoise the image to read the information",
    "edge": "extract an edge map to expose the outlines",
}

_TEMPLATES = {"default": "format_sft_template.txt"}


@dataclass(frozen=True)
class SftTrajectory:
    qa: QAItem
    op: AugmentationOp
    text: str


def synth_format_trajectory(qa: QAItem, op_choice: AugmentationOp,
                            template_id: str = "default") -> SftTrajectory:
    """Render a QA pair into a structurally valid tool-use trajectory.

    The output reparses by construction: the embedded call round-trips
    through the grammar, and the think/answer tags satisfy the format check.
    """
    if template_id not in _TEMPLATES:
        raise TemplateUnknown(f"unknown template {template_id!r}")
    template = resources.files("augloop.assets").joinpath(
        _TEMPLATES[template_id]).read_text(encoding="utf-8")
    call = render_call(op_choice)
    text = template.format(
        question=qa.question.strip(),
        call=call,
        op_kind=op_choice.kind,
        narration=_NARRATIONS[op_choice.kind],
        answer=qa.answer.strip(),
    )
    scan = scan_tags(text)
    assert scan.has_think and scan.has_answer and len(scan.code_spans) == 1
    reparsed = extract_call(text[scan.code_spans[0][0]:scan.code_spans[0][1]])
    assert isinstance(reparsed, ParsedCall) and reparsed.op == op_choice
    return SftTrajectory(qa=qa, op=op_choice, text=text)


# ---------------------------------------------------------------------------
# QA manifest IO (line-delimited records)
# ---------------------------------------------------------------------------

def read_qa_manifest(path) -> list[QAItem]:
    items = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            items.append(QAItem(
                item_id=rec["id"], question=rec["question"], answer=rec["answer"],
                image_path=rec.get("image"), split=rec.get("split"),
                type_tag=rec.get("type"),
            ))
    return items


def write_qa_manifest(path, items: Sequence[QAItem]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            rec = {"id": item.item_id, "question": item.question, "answer": item.answer}
            if item.image_path:
                rec["image"] = item.image_path
            if item.split:
                rec["split"] = item.split
            if item.type_tag:
                rec["type"] = item.type_tag
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


def write_difficulty_records(path, records: Sequence[DifficultyRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({
                "id": rec.item_id, "k": rec.k,
                "verdicts": list(rec.verdicts),
                "difficulty": rec.difficulty,
                "disposition": rec.disposition,
            }, sort_keys=True) + "\n")
