import httpx
import pytest
from hypothesis import given, settings, strategies as st

from augloop.episode import EpisodeConfig, Query, ScriptedBackend, run_episode
from augloop.errors import ConfigInvalid, JudgeUnavailable
from augloop.rewards import (
    DEFAULT_WEIGHTS,
    VQA_WINDOW_CHARS,
    HttpJudge,
    RuleJudge,
    answer_window,
    reward_api,
    reward_fmt,
    reward_suc,
    reward_vqa,
    score_trace,
    total_reward,
)


def episode(spans, image, **kwargs):
    return run_episode(ScriptedBackend(spans), Query(image=image, question="q?"),
                       EpisodeConfig(**kwargs))


GOOD_SPANS = [
    "<think>zoom\n<code>\nimage_path = resize_up(image_path, factor=2.0)\n</code>",
    "clear now</think><answer>seven</answer>",
]


class TestSuc:
    def test_gated_by_correctness(self):
        assert reward_suc(0.49, 1, 8) == 0.0
        assert reward_suc(0.5, 1, 8) == 1.0

    def test_grace_band(self):
        for k in (0, 1, 2):
            assert reward_suc(1.0, k, 8) == 1.0

    def test_linear_decay(self):
        assert reward_suc(0.9, 5, 8) == pytest.approx(0.5)
        assert reward_suc(0.9, 8, 8) == pytest.approx(0.0)
        assert reward_suc(0.9, 3, 8) == pytest.approx(1 - 1 / 6)

    def test_past_cap(self):
        assert reward_suc(0.9, 9, 8) == 0.0
        assert reward_suc(1.0, 100, 8) == 0.0

    def test_config_guards(self):
        with pytest.raises(ConfigInvalid):
            reward_suc(1.0, 1, 2)
        with pytest.raises(ConfigInvalid):
            reward_suc(1.0, -1, 8)

    @given(r=st.floats(0, 1), k=st.integers(0, 32),
           cap=st.integers(3, 16))
    @settings(max_examples=200, deadline=None)
    def test_range_property(self, r, k, cap):
        value = reward_suc(r, k, cap)
        assert 0.0 <= value <= 1.0


class TestComponents:
    def test_fmt_requires_both_tags(self, image):
        good = episode(["<think>x</think><answer>y</answer>"], image)
        assert reward_fmt(good) == 1
        no_think = episode(["just text <answer>y</answer>"], image)
        assert reward_fmt(no_think) == 0
        unclosed = episode(["<think>x<answer>y</answer>"], image)
        assert reward_fmt(unclosed) == 0

    def test_api_all_valid(self, image):
        trace = episode(GOOD_SPANS, image)
        assert reward_api(trace) == 1

    def test_api_parse_error_invalidates(self, image):
        trace = episode(["<think>\n<code>\nsharpen(i)\n</code>",
                         "</think><answer>y</answer>"], image)
        assert reward_api(trace) == 0

    def test_api_exec_error_invalidates(self, image):
        trace = episode(["<think>\n<code>\ncrop(i, 0, 0, 9999, 9999)\n</code>",
                         "</think><answer>y</answer>"], image)
        assert reward_api(trace) == 0

    def test_api_not_executed_stays_valid(self, image):
        call = "<think>\n<code>\nedge(image_path)\n</code>"
        trace = episode([call] * 4 + ["</think><answer>y</answer>"], image, max_calls=3)
        assert trace.calls[-1].status == "not_executed"
        assert reward_api(trace) == 1

    def test_api_vacuous_without_calls(self, image):
        trace = episode(["<think>x</think><answer>y</answer>"], image)
        assert reward_api(trace) == 1

    def test_vqa_window_is_exactly_final_chars(self, image):
        filler = "z " * 600
        trace = episode([f"<think>{filler}</think><answer>seven</answer>"], image)
        window = answer_window(trace)
        assert len(window) == VQA_WINDOW_CHARS
        assert window.endswith("<answer>seven</answer>")
        assert reward_vqa(trace, "seven", RuleJudge()) == 1.0

    def test_vqa_answer_outside_window_scores_zero(self, image):
        trace = episode(["<think>seven " + "pad " * 300 + "</think><answer>eight</answer>"],
                        image)
        assert reward_vqa(trace, "seven", RuleJudge()) == 0.0

    def test_rule_judge_normalization(self):
        judge = RuleJudge()
        assert judge.score_vqa("q", "Blue Whale", "the   BLUE\nwhale appears") == 1.0
        assert judge.score_vqa("q", "blue", "red") == 0.0
        assert judge.score_vqa("q", "", "anything") == 0.0

    def test_rule_judge_consistency(self):
        judge = RuleJudge()
        assert judge.score_consistency("a b c d e f g h") == 1.0
        repeated = "the same four words " * 50
        assert judge.score_consistency(repeated) < 0.1
        assert judge.score_consistency("a b") == 1.0


class TestTotal:
    def test_max_total(self):
        breakdown = total_reward(1, 1, 1, 1, 1)
        assert breakdown.total == pytest.approx(2.5)

    def test_weights_applied(self):
        breakdown = total_reward(1, 0, 0, 0, 0)
        assert breakdown.total == 1.0
        breakdown = total_reward(0, 1, 0, 0, 0)
        assert breakdown.total == 0.25

    def test_custom_weights(self):
        breakdown = total_reward(1, 1, 1, 1, 1, weights=(1, 1, 1, 1, 1))
        assert breakdown.total == 5.0

    def test_bad_weights(self):
        with pytest.raises(ConfigInvalid):
            total_reward(1, 1, 1, 1, 1, weights=(1, 2, 3))
        with pytest.raises(ConfigInvalid):
            total_reward(1, 1, 1, 1, 1, weights=(1, 1, 1, 1, -1))

    @given(parts=st.tuples(*[st.floats(0, 1) for _ in range(5)]))
    @settings(max_examples=200, deadline=None)
    def test_bounded_and_monotone(self, parts):
        breakdown = total_reward(*parts)
        assert 0.0 <= breakdown.total <= 2.5
        bumped = tuple(min(1.0, p + 0.1) for p in parts)
        assert total_reward(*bumped).total >= breakdown.total - 1e-12

    def test_score_trace_perfect(self, image):
        trace = episode(GOOD_SPANS, image)
        breakdown = score_trace(trace, "seven", RuleJudge())
        assert breakdown.r_vqa == 1.0
        assert breakdown.r_fmt == 1.0
        assert breakdown.r_api == 1.0
        assert breakdown.r_suc == 1.0
        assert breakdown.total == pytest.approx(
            sum(w * p for w, p in zip(DEFAULT_WEIGHTS,
                                      (1, 1, breakdown.r_cst, 1, 1))))

    def test_score_trace_wrong_answer(self, image):
        trace = episode(GOOD_SPANS, image)
        breakdown = score_trace(trace, "eight", RuleJudge())
        assert breakdown.r_vqa == 0.0
        assert breakdown.r_suc == 0.0


class TestHttpJudge:
    def _judge(self, handler):
        return HttpJudge("http://example.invalid/v1",
                         transport=httpx.MockTransport(handler))

    def test_parse_reply_json(self):
        assert HttpJudge.parse_reply('{"score": 0.8, "reasoning": "ok"}') == 0.8

    def test_parse_reply_python_literal(self):
        assert HttpJudge.parse_reply("{'score': 1, 'reasoning': 'yes'}") == 1.0

    def test_parse_reply_embedded(self):
        text = 'Sure. {"score": 0.25, "reasoning": "partial"} Done.'
        assert HttpJudge.parse_reply(text) == 0.25

    def test_parse_reply_clamped(self):
        assert HttpJudge.parse_reply('{"score": 7, "reasoning": ""}') == 1.0

    def test_parse_reply_failure(self):
        with pytest.raises(JudgeUnavailable):
            HttpJudge.parse_reply("no object here")
        with pytest.raises(JudgeUnavailable):
            HttpJudge.parse_reply('{"verdict": "good"}')

    def test_endpoint_roundtrip(self):
        def reply(request):
            return httpx.Response(200, json={"choices": [{
                "message": {"content": '{"score": 0.5, "reasoning": "half"}'}}]})

        judge = self._judge(reply)
        assert judge.score_vqa("q", "gt", "pred") == 0.5
        assert judge.score_consistency("trace text") == 0.5

    def test_transport_failure(self):
        def boom(request):
            raise httpx.ConnectError("refused")

        judge = self._judge(boom)
        with pytest.raises(JudgeUnavailable):
            judge.score_vqa("q", "gt", "pred")
