"""Synthesize a small benchmark, run the oracle backend, report pass@k and
call frequencies, then show the compression experiment.

Run: python3 demos/demo_eval_passk.py
"""

import tempfile

from augloop.bench import (
    OracleBackend,
    api_frequency,
    compression_experiment,
    read_manifest,
    run_benchmark,
    score_passk,
    synthesize_fixture,
)
from augloop.episode import EpisodeConfig, SamplingParams
from augloop.rewards import RuleJudge


def main():
    workdir = tempfile.mkdtemp(prefix="augloop-demo-")
    manifest = synthesize_fixture(f"{workdir}/fixture", count=20, seed=0, size=96)
    items = read_manifest(manifest)
    print(f"synthesized {len(items)} items under {workdir}")

    results = run_benchmark(items, lambda item, attempt: OracleBackend(item),
                            EpisodeConfig(), attempts=2,
                            sampling=SamplingParams(seed=0),
                            out_dir=f"{workdir}/runs")
    report = score_passk(results, RuleJudge(), ks=(1, 2))
    print("\npass@k:")
    print(report.table())

    freq = api_frequency([r.trace for r in results])
    print(f"\ncall frequencies over {freq.total_episodes} episodes:")
    print(f"  direct {freq.direct_pct:.1f}%, fail {freq.fail_pct:.1f}%")
    for op, pct in freq.op_pct.items():
        if pct:
            print(f"  {op:8s} {pct:.1f}%")

    # Items needing a resize-up once their input is compressed.
    zoom_items = [it for it in items if it.required_op is None][:4]
    zoom_items = [
        type(it)(item_id=it.item_id, image_path=it.image_path, question=it.question,
                 answer=it.answer, split=it.split, type_tag=it.type_tag,
                 required_op={"kind": "resize_up", "params": {"factor": 2.0}},
                 wrong_answer=it.wrong_answer)
        for it in zoom_items
    ]
    cx = compression_experiment(zoom_items,
                                lambda item, attempt: OracleBackend(item),
                                rates=[0.5], config=EpisodeConfig(),
                                judge=RuleJudge(), out_dir=f"{workdir}/cx")
    print("\ncompression experiment at rate 0.5:")
    for cell in cx["cells"]:
        arm = "with resize_up" if cell["resize_up_allowed"] else "without"
        print(f"  {arm:16s} accuracy={cell['accuracy']:.2f} "
              f"resize_up_rate={cell['resize_up_rate']:.2f}")


if __name__ == "__main__":
    main()
