"""Generate the frozen golden fixtures under tests/fixtures.

Run once and commit the outputs; the test suite replays the same scripted
episodes and asserts byte-identical serialization against these files.
"""

import json
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "tests"))

from augloop.episode import (
    EpisodeConfig,
    Query,
    ScriptedBackend,
    canonical_json,
    run_episode,
    trace_to_dict,
)
from augloop.grpo import RolloutGroup, ScoredTrace, assemble_batch
from augloop.image import ImageBuffer
from augloop.rewards import RuleJudge, score_trace

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures")


def gradient_image(width=32, height=32):
    y, x = np.mgrid[0:height, 0:width]
    r = (x * 255 // max(width - 1, 1)).astype(np.uint8)
    g = (y * 255 // max(height - 1, 1)).astype(np.uint8)
    b = ((x + y) * 255 // max(width + height - 2, 1)).astype(np.uint8)
    return ImageBuffer(np.stack([r, g, b], axis=-1))


SCENARIOS = {
    "a": {
        "question": "What color dominates?",
        "spans": ["<think>The image is readable as-is.</think><answer>teal</answer>"],
        "max_calls": 8,
    },
    "b": {
        "question": "What is written in the corner?",
        "spans": [
            "<think>Too small; enlarge it.\n<code>\nimage_path = resize_up(image_path, factor=2.0)\n</code>",
            "Now legible.</think><answer>seven</answer>",
        ],
        "max_calls": 8,
    },
    "c": {
        "question": "How many dots?",
        "spans": [
            "<think>Try an unsupported filter.\n<code>\nsharpen(image_path)\n</code>",
            "That API does not exist; counting anyway.</think><answer>twelve</answer>",
        ],
        "max_calls": 8,
    },
    "d": {
        "question": "What is the hidden word?",
        "spans": [
            "<think>rotate\n<code>\nimage_path = rotate(image_path, degrees=90)\n</code>",
            "<think>again\n<code>\nimage_path = rotate(image_path, degrees=90)\n</code>",
            "<think>again\n<code>\nimage_path = rotate(image_path, degrees=90)\n</code>",
            "<think>once more\n<code>\nimage_path = rotate(image_path, degrees=90)\n</code>",
            "No more budget.</think><answer>unknown</answer>",
        ],
        "max_calls": 3,
    },
}


def build_trace(name):
    scenario = SCENARIOS[name]
    return run_episode(
        ScriptedBackend(scenario["spans"]),
        Query(image=gradient_image(), question=scenario["question"]),
        EpisodeConfig(max_calls=scenario["max_calls"]),
    )


def main():
    os.makedirs(FIXTURES, exist_ok=True)
    traces = {}
    for name in SCENARIOS:
        trace = build_trace(name)
        traces[name] = trace
        path = os.path.join(FIXTURES, f"golden_trace_{name}.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(canonical_json(trace_to_dict(trace)) + "\n")
        print(f"wrote {path} (k={trace.k}, terminated_by={trace.terminated_by})")

    # Frozen reward breakdown for scenario b (ground truth "seven").
    breakdown = score_trace(traces["b"], "seven", RuleJudge())
    with open(os.path.join(FIXTURES, "golden_rewards.json"), "w", encoding="utf-8") as fh:
        fh.write(canonical_json({"scenario": "b", "ground_truth": "seven",
                                 "max_calls": 8,
                                 "breakdown": breakdown.as_dict()}) + "\n")
    print("wrote golden_rewards.json")

    # Frozen trainer batch over two rollout groups built from the golden
    # traces, including one pair with log-probs so the KL path is covered.
    groups = [
        RolloutGroup("g1", (
            ScoredTrace("t1", traces["a"], 2.5,
                        logp_policy=(-0.2, -0.4, -0.1), logp_ref=(-0.25, -0.4, -0.3)),
            ScoredTrace("t2", traces["b"], 1.75),
            ScoredTrace("t3", traces["c"], 0.5),
        )),
        RolloutGroup("g2", (
            ScoredTrace("t4", traces["d"], 0.25),
            ScoredTrace("t5", traces["b"], 0.25),
        )),
    ]
    records = assemble_batch(groups, beta=0.01, mode="zscore")
    with open(os.path.join(FIXTURES, "golden_batch.jsonl"), "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(canonical_json(rec) + "\n")
    print(f"wrote golden_batch.jsonl ({len(records)} records)")

    # The matching service request body, for client-parity tests.
    request = {
        "request_id": "golden-batch",
        "beta": 0.01,
        "mode": "zscore",
        "groups": [
            {"group_id": g.group_id, "traces": [
                {"trace_id": t.trace_id,
                 "trace": trace_to_dict(t.trace),
                 "reward": t.reward,
                 "logp_policy": list(t.logp_policy) if t.logp_policy else None,
                 "logp_ref": list(t.logp_ref) if t.logp_ref else None}
                for t in g.traces]}
            for g in groups],
    }
    with open(os.path.join(FIXTURES, "golden_batch_request.json"), "w",
              encoding="utf-8") as fh:
        fh.write(canonical_json(request) + "\n")
    print("wrote golden_batch_request.json")


if __name__ == "__main__":
    main()
