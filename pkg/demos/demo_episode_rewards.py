"""Run a scripted episode end to end, then score it.

Run: python3 demos/demo_episode_rewards.py
"""

import numpy as np

from augloop.episode import EpisodeConfig, Query, ScriptedBackend, run_episode
from augloop.image import ImageBuffer
from augloop.rewards import RuleJudge, score_trace

SPANS = [
    "<think>The text is tiny; I will enlarge the image first.\n"
    "<code>\nimage_path = resize_up(image_path, factor=2.0)\n</code>",
    "Much better, the corner now reads clearly.</think>"
    "<answer>seven</answer>",
]


def main():
    rng = np.random.default_rng(0)
    image = ImageBuffer(rng.integers(0, 256, size=(96, 128, 3), dtype=np.uint8))

    trace = run_episode(ScriptedBackend(SPANS),
                        Query(image=image, question="What is written in the corner?"),
                        EpisodeConfig())

    print(f"terminated_by={trace.terminated_by}, k={trace.k}, "
          f"answer={trace.final_answer!r}")
    print("\nconversation:")
    for message in trace.history:
        preview = message.text.replace("\n", " ")[:90]
        tag = f" [+{len(message.attachments)} image]" if message.attachments else ""
        print(f"  <|{message.role}|> {preview}{tag}")

    breakdown = score_trace(trace, "seven", RuleJudge())
    print("\nreward breakdown:")
    for key, value in breakdown.as_dict().items():
        print(f"  {key:6s} = {value:.4f}")


if __name__ == "__main__":
    main()
