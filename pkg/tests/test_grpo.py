import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from augloop.episode import (
    EpisodeConfig,
    EpisodeTrace,
    Message,
    Query,
    ScriptedBackend,
    render_history,
    run_episode,
)
from augloop.errors import GroupTooSmall, LengthMismatch, StructureInvalid
from augloop.grpo import (
    BATCH_SCHEMA_VERSION,
    RolloutGroup,
    ScoredTrace,
    assemble_batch,
    build_loss_sequence,
    group_normalize,
    kl_term,
)

from conftest import make_image


def episode(spans, image, **kwargs):
    return run_episode(ScriptedBackend(spans), Query(image=image, question="q?"),
                       EpisodeConfig(**kwargs))


CALL_SPANS = [
    "<think>zoom\n<code>\nrotate(image_path, degrees=90)\n</code>",
    "<think>more\n<code>\ncrop(image_path, 0, 0, 10, 10)\n</code>",
    "done</think><answer>cat</answer>",
]


class TestLossMasking:
    def test_excluded_spans_are_exactly_output_blocks(self, image):
        trace = episode(CALL_SPANS, image)
        seq = build_loss_sequence(trace)
        expected = tuple(m.text for m in trace.history if m.role == "tool_output")
        assert seq.excluded_spans == expected
        for span in seq.excluded_spans:
            assert span.startswith("<output>") and span.endswith("</output>")

    def test_reconstruction_byte_exact(self, image):
        trace = episode(CALL_SPANS, image)
        seq = build_loss_sequence(trace)
        assert seq.text == render_history(trace.history)

    def test_role_headers_stay_in_loss(self, image):
        trace = episode(CALL_SPANS, image)
        seq = build_loss_sequence(trace)
        in_loss = "".join(t for t, inc in seq.spans if inc)
        assert "<|tool_output|>" in in_loss
        assert "<output>" not in in_loss

    def test_error_outputs_also_masked(self, image):
        spans = ["<think>\n<code>\nsharpen(i)\n</code>", "</think><answer>x</answer>"]
        trace = episode(spans, image)
        seq = build_loss_sequence(trace)
        assert len(seq.excluded_spans) == 1
        assert "Error:" in seq.excluded_spans[0]

    def test_direct_answer_has_no_exclusions(self, image):
        trace = episode(["<think>x</think><answer>y</answer>"], image)
        seq = build_loss_sequence(trace)
        assert seq.excluded_spans == ()
        assert seq.included_chars == len(seq.text)

    def test_orphan_tool_output_rejected(self, image):
        bad = EpisodeTrace(
            history=(Message("tool_output", "<output>x</output>"),),
            calls=(), final_answer="", k=0, terminated_by="answer")
        with pytest.raises(StructureInvalid):
            build_loss_sequence(bad)

    def test_tool_output_after_codeless_assistant_rejected(self, image):
        bad = EpisodeTrace(
            history=(Message("user", "q"),
                     Message("assistant", "no code here"),
                     Message("tool_output", "<output>x</output>")),
            calls=(), final_answer="", k=0, terminated_by="answer")
        with pytest.raises(StructureInvalid):
            build_loss_sequence(bad)


class TestNormalize:
    def test_zscore_zero_mean_unit_std(self):
        adv = np.array(group_normalize([1.0, 2.0, 3.0, 4.0]))
        assert abs(adv.mean()) < 1e-12
        assert abs(adv.std() - 1.0) < 1e-12

    def test_degenerate_group_all_zero(self):
        assert group_normalize([0.7, 0.7, 0.7]) == [0.0, 0.0, 0.0]
        assert group_normalize([0.7, 0.7 + 1e-12]) == [0.0, 0.0]

    def test_center_mode(self):
        adv = group_normalize([1.0, 3.0], mode="center")
        assert adv == [-1.0, 1.0]

    def test_center_mode_keeps_scale(self):
        adv = group_normalize([0.0, 10.0], mode="center")
        assert adv == [-5.0, 5.0]

    def test_too_small(self):
        with pytest.raises(GroupTooSmall):
            group_normalize([1.0])

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            group_normalize([1.0, 2.0], mode="minmax")

    @given(rewards=st.lists(st.floats(-10, 10), min_size=2, max_size=16))
    @settings(max_examples=200, deadline=None)
    def test_zscore_property(self, rewards):
        adv = np.array(group_normalize(rewards))
        assert abs(adv.mean()) < 1e-9
        if np.asarray(rewards).std() >= 1e-8:
            assert abs(adv.std() - 1.0) < 1e-6
        else:
            assert (adv == 0).all()


class TestKl:
    def test_identical_vectors_zero(self):
        record = kl_term([0.1, -2.0, 5.0], [0.1, -2.0, 5.0])
        assert (record.values == 0.0).all()

    def test_always_nonnegative(self):
        rng = np.random.default_rng(0)
        policy = rng.normal(size=100)
        ref = rng.normal(size=100)
        record = kl_term(policy, ref)
        assert (record.values >= 0.0).all()

    def test_estimator_formula(self):
        record = kl_term([0.0], [1.0])
        assert record.values[0] == pytest.approx(np.expm1(1.0) - 1.0)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            kl_term([1.0], [1.0, 2.0])


class TestAssembleBatch:
    def _groups(self, image):
        t1 = episode(CALL_SPANS, image)
        t2 = episode(["<think>x</think><answer>y</answer>"], image)
        return [
            RolloutGroup("g2", (ScoredTrace("b", t2, 0.5),
                                ScoredTrace("a", t1, 1.5))),
            RolloutGroup("g1", (ScoredTrace("x", t1, 2.0,
                                            logp_policy=(0.1, 0.2),
                                            logp_ref=(0.1, 0.3)),
                                ScoredTrace("y", t2, 0.0))),
        ]

    def test_sorted_and_weighted(self, image):
        rows = assemble_batch(self._groups(image))
        keys = [(r["group_id"], r["trace_id"]) for r in rows]
        assert keys == sorted(keys)
        total = rows[0]["total_tau_len"]
        assert total == sum(r["tau_len"] for r in rows)
        assert sum(r["weight"] for r in rows) == pytest.approx(1.0)
        for row in rows:
            assert row["schema_version"] == BATCH_SCHEMA_VERSION
            assert row["weight"] == pytest.approx(row["tau_len"] / total)

    def test_advantages_per_group(self, image):
        rows = assemble_batch(self._groups(image))
        by_group = {}
        for row in rows:
            by_group.setdefault(row["group_id"], []).append(row["advantage"])
        for advs in by_group.values():
            assert abs(sum(advs)) < 1e-9

    def test_kl_carried_when_logprobs_present(self, image):
        rows = assemble_batch(self._groups(image))
        with_kl = [r for r in rows if r["kl"] is not None]
        assert len(with_kl) == 1
        assert with_kl[0]["trace_id"] == "x"
        assert all(v >= 0 for v in with_kl[0]["kl"])

    def test_spans_reconstruct_trace(self, image):
        trace = episode(CALL_SPANS, image)
        rows = assemble_batch([RolloutGroup("g", (ScoredTrace("a", trace, 1.0),
                                                  ScoredTrace("b", trace, 0.0)))])
        text = "".join(s["text"] for s in rows[0]["spans"])
        assert text == render_history(trace.history)
