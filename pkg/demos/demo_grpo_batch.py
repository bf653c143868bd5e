"""Assemble a trainer batch from a rollout group: masking, advantages, KL.

Run: python3 demos/demo_grpo_batch.py
"""

import numpy as np

from augloop.episode import EpisodeConfig, Query, ScriptedBackend, run_episode
from augloop.grpo import RolloutGroup, ScoredTrace, assemble_batch, build_loss_sequence
from augloop.image import ImageBuffer
from augloop.rewards import RuleJudge, score_trace

GOOD = [
    "<think>Zoom in first.\n<code>\nimage_path = resize_up(image_path, factor=2.0)\n</code>",
    "Readable now.</think><answer>seven</answer>",
]
LAZY = ["<think>Looks like seven, maybe.</think><answer>three</answer>"]


def main():
    rng = np.random.default_rng(0)
    image = ImageBuffer(rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8))
    question = "What digit is shown?"

    scored = []
    for trace_id, spans in (("careful", GOOD), ("lazy", LAZY)):
        trace = run_episode(ScriptedBackend(spans),
                            Query(image=image, question=question), EpisodeConfig())
        reward = score_trace(trace, "seven", RuleJudge()).total
        scored.append(ScoredTrace(trace_id, trace, reward))
        print(f"{trace_id}: reward={reward:.3f}")

    seq = build_loss_sequence(scored[0].trace)
    print(f"\nloss sequence for 'careful': {len(seq.spans)} spans, "
          f"{seq.included_chars} in-loss chars")
    print(f"masked spans: {seq.excluded_spans}")

    rows = assemble_batch([RolloutGroup("demo", tuple(scored))])
    print("\nbatch records:")
    for row in rows:
        print(f"  {row['trace_id']:8s} advantage={row['advantage']:+.3f} "
              f"tau_len={row['tau_len']} weight={row['weight']:.3f}")


if __name__ == "__main__":
    main()
