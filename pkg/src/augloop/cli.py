"""Operator command line: thin adapters over the library modules.

Subcommands: run, eval, filter, synth, rewards, grpo, serve. With
--format records, standard output carries only schema-conformant records;
all diagnostics go to standard error. Stochastic subcommands require an
explicit --seed.

Exit codes: 0 success, 2 usage, then per error class: 3 input/data,
4 backend/transport, 5 judge, 6 configuration.
"""

from __future__ import annotations

import json
import sys

import click

from .bench import (
    OracleBackend,
    api_frequency,
    read_manifest,
    run_benchmark,
    score_passk,
)
from .config import load_config
from .episode import (
    EpisodeConfig,
    SamplingParams,
    ScriptedBackend,
    HttpChatBackend,
    Query,
    canonical_json,
    run_episode,
    trace_from_dict,
    trace_to_dict,
)
from .errors import AugLoopError, ConfigInvalid
from .grpo import RolloutGroup, ScoredTrace, assemble_batch, write_batch
from .image import ImageBuffer
from .parsing import ParsedCall, extract_call
from .pipeline import (
    QAItem,
    apply_filter_policy,
    passk_difficulty,
    synth_format_trajectory,
    write_difficulty_records,
)
from .rewards import DEFAULT_WEIGHTS, RuleJudge, score_trace


def _info(message: str) -> None:
    click.echo(message, err=True)


def _make_backend(spec: str):
    kind, _, arg = spec.partition(":")
    if kind == "scripted":
        return lambda item=None, attempt=None: ScriptedBackend.from_file(arg)
    if kind == "oracle":
        return lambda item, attempt: OracleBackend(item)
    if kind == "http":
        return lambda item=None, attempt=None: HttpChatBackend(arg)
    raise ConfigInvalid(f"unknown backend spec {spec!r}; use scripted:FILE, oracle, or http:URL")


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON config file (defaults < file < env < flags).")
@click.pass_context
def cli(ctx, config_path):
    ctx.obj = {"config_path": config_path}


@cli.command("run")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--question", required=True)
@click.option("--backend", "backend_spec", required=True,
              help="scripted:SPANS.json or http:ENDPOINT")
@click.option("--max-calls", type=int, default=None)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), default=None, help="Write the trace record here.")
@click.option("--format", "fmt", type=click.Choice(["text", "records"]), default="text")
@click.pass_context
def run_cmd(ctx, image_path, question, backend_spec, max_calls, seed, out, fmt):
    """Run a single episode from an image and a question."""
    cfg = load_config(ctx.obj["config_path"], overrides={"max_calls": max_calls})
    backend = _make_backend(backend_spec)()
    config = EpisodeConfig(max_calls=cfg["max_calls"],
                           sampling=SamplingParams(seed=seed))
    trace = run_episode(backend, Query(image=ImageBuffer.load(image_path),
                                       question=question), config)
    record = trace_to_dict(trace)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(canonical_json(record) + "\n")
        _info(f"trace written to {out}")
    if fmt == "records":
        click.echo(canonical_json(record))
    else:
        click.echo(f"terminated_by={trace.terminated_by} k={trace.k} "
                   f"answer={trace.final_answer!r}")


@cli.command("eval")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--backend", "backend_spec", default="oracle")
@click.option("--attempts", type=int, default=5)
@click.option("--seed", type=int, required=True)
@click.option("--temperature", type=float, default=0.7)
@click.option("--top-p", type=float, default=0.95)
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--format", "fmt", type=click.Choice(["text", "records"]), default="text")
@click.pass_context
def eval_cmd(ctx, manifest, backend_spec, attempts, seed, temperature, top_p, out_dir, fmt):
    """Run a benchmark manifest and report pass@k plus call frequencies."""
    items = read_manifest(manifest)
    factory = _make_backend(backend_spec)
    sampling = SamplingParams(temperature=temperature, top_p=top_p, seed=seed)
    results = run_benchmark(items, factory, EpisodeConfig(), attempts, sampling, out_dir)
    report = score_passk(results, RuleJudge(), ks=(1, attempts),
                         sampling_config={"temperature": temperature, "top_p": top_p,
                                          "seed": seed, "attempts": attempts})
    freq = api_frequency([r.trace for r in results])
    with open(f"{out_dir}/passk_report.json", "w", encoding="utf-8") as fh:
        fh.write(canonical_json(report.to_dict()) + "\n")
    with open(f"{out_dir}/api_frequency.json", "w", encoding="utf-8") as fh:
        fh.write(canonical_json(freq.to_dict()) + "\n")
    if fmt == "records":
        click.echo(canonical_json(report.to_dict()))
        click.echo(canonical_json(freq.to_dict()))
    else:
        click.echo(report.table())
        _info(f"reports written under {out_dir}")


@cli.command("filter")
@click.option("--attempts-file", required=True, type=click.Path(exists=True),
              help="JSONL: {id, question, answer, attempts: [str, ...]}")
@click.option("--seed", type=int, required=True)
@click.option("--out-dir", required=True, type=click.Path())
def filter_cmd(attempts_file, seed, out_dir):
    """Pass@k difficulty filtering into kept / recheck / dropped partitions."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    judge = RuleJudge()
    records = []
    with open(attempts_file, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            item = QAItem(item_id=rec["id"], question=rec["question"], answer=rec["answer"])
            records.append(passk_difficulty(item, rec["attempts"], judge))
    partition = apply_filter_policy(records, seed=seed)
    write_difficulty_records(f"{out_dir}/kept.jsonl", partition.kept)
    write_difficulty_records(f"{out_dir}/recheck.jsonl", partition.recheck)
    write_difficulty_records(f"{out_dir}/dropped.jsonl", partition.dropped)
    with open(f"{out_dir}/summary.json", "w", encoding="utf-8") as fh:
        fh.write(canonical_json(partition.summary) + "\n")
    _info(f"partition written under {out_dir}")
    click.echo(canonical_json(partition.summary))


@cli.command("synth")
@click.option("--qa-file", required=True, type=click.Path(exists=True),
              help="JSONL: {id, question, answer}")
@click.option("--call", "call_text", required=True,
              help='API call to splice in, e.g. \'denoise(image_path, method="gaussian", kernel_size=3)\'')
@click.option("--out", required=True, type=click.Path())
def synth_cmd(qa_file, call_text, out):
    """Synthesize format-SFT trajectories from plain QA pairs."""
    parsed = extract_call(call_text)
    if not isinstance(parsed, ParsedCall):
        raise ConfigInvalid(f"--call does not parse: {parsed.message}")
    count = 0
    with open(qa_file, "r", encoding="utf-8") as src, \
            open(out, "w", encoding="utf-8") as dst:
        for line in src:
            if not line.strip():
                continue
            rec = json.loads(line)
            qa = QAItem(item_id=rec["id"], question=rec["question"], answer=rec["answer"])
            traj = synth_format_trajectory(qa, parsed.op)
            dst.write(canonical_json({"id": qa.item_id, "op": {
                "kind": traj.op.kind, "params": traj.op.params,
            }, "text": traj.text}) + "\n")
            count += 1
    _info(f"{count} trajectories written to {out}")


@cli.command("rewards")
@click.option("--traces", "traces_file", required=True, type=click.Path(exists=True),
              help="JSONL: {trace: <episode record>, ground_truth: str}")
@click.option("--max-calls", type=int, default=None)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def rewards_cmd(ctx, traces_file, max_calls, out):
    """Score trace files with the rule judge; extends records with rewards."""
    cfg = load_config(ctx.obj["config_path"], overrides={"max_calls": max_calls})
    judge = RuleJudge()
    with open(traces_file, "r", encoding="utf-8") as src, \
            open(out, "w", encoding="utf-8") as dst:
        for line in src:
            if not line.strip():
                continue
            rec = json.loads(line)
            trace = trace_from_dict(rec["trace"])
            breakdown = score_trace(trace, rec["ground_truth"], judge,
                                    max_calls=cfg["max_calls"],
                                    weights=tuple(cfg["weights"]))
            rec["trace"]["rewards"] = breakdown.as_dict()
            dst.write(canonical_json(rec) + "\n")
    _info(f"scored traces written to {out}")


@cli.command("grpo")
@click.option("--groups", "groups_file", required=True, type=click.Path(exists=True),
              help="JSONL: {group_id, trace_id, trace, reward, logp_policy?, logp_ref?}")
@click.option("--beta", type=float, default=None)
@click.option("--mode", type=click.Choice(["zscore", "center"]), default="zscore")
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def grpo_cmd(ctx, groups_file, beta, mode, out):
    """Assemble trainer-ready batches from scored rollout groups."""
    cfg = load_config(ctx.obj["config_path"], overrides={"beta": beta})
    grouped: dict[str, list[ScoredTrace]] = {}
    with open(groups_file, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            grouped.setdefault(rec["group_id"], []).append(ScoredTrace(
                trace_id=rec["trace_id"],
                trace=trace_from_dict(rec["trace"]),
                reward=rec["reward"],
                logp_policy=tuple(rec["logp_policy"]) if rec.get("logp_policy") else None,
                logp_ref=tuple(rec["logp_ref"]) if rec.get("logp_ref") else None,
            ))
    groups = [RolloutGroup(gid, tuple(traces)) for gid, traces in grouped.items()]
    records = assemble_batch(groups, beta=cfg["beta"], mode=mode)
    write_batch(out, records)
    _info(f"{len(records)} training records written to {out}")


@cli.command("serve")
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.pass_context
def serve_cmd(ctx, host, port):
    """Start the local HTTP service."""
    from .service import serve

    cfg = load_config(ctx.obj["config_path"],
                      overrides={"service_host": host, "service_port": port})
    _info(f"serving on {cfg['service_host']}:{cfg['service_port']}")
    serve(host=cfg["service_host"], port=cfg["service_port"])


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show()
        return 2
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except AugLoopError as exc:
        click.echo(f"error [{exc.code}]: {exc}", err=True)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
