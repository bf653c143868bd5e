import pytest
from hypothesis import given, settings, strategies as st

from augloop.ops import AugmentationOp, OP_KINDS
from augloop.parsing import (
    DEFAULT_STOP_SET,
    ParsedCall,
    ParseError,
    extract_call,
    find_stop,
    render_call,
    scan_tags,
)


class TestFindStop:
    def test_earliest_stop_wins(self):
        text = "abc</code>def</answer>"
        hit = find_stop(text, DEFAULT_STOP_SET)
        assert hit.stop == "</code>" and hit.position == 3

    def test_answer_before_code(self):
        text = "x</answer>y</code>"
        hit = find_stop(text, DEFAULT_STOP_SET)
        assert hit.stop == "</answer>"

    def test_no_stop(self):
        assert find_stop("nothing here", DEFAULT_STOP_SET) is None

    def test_partial_stop_ignored(self):
        assert find_stop("</cod", DEFAULT_STOP_SET) is None

    def test_empty_stop_set_rejected(self):
        with pytest.raises(ValueError):
            find_stop("x", ())


class TestScanTags:
    def test_well_formed(self):
        text = "<think>reason<code>crop(i,0,0,1,1)</code><output>x</output></think><answer>42</answer>"
        scan = scan_tags(text)
        assert scan.has_think and scan.has_answer
        assert scan.answer_text == "42"
        assert len(scan.code_spans) == 1 and len(scan.output_spans) == 1

    def test_unclosed_tags_absent(self):
        scan = scan_tags("<think>never closed <answer>also open")
        assert not scan.has_think and not scan.has_answer

    def test_orphan_close_absent(self):
        scan = scan_tags("</think></answer>")
        assert not scan.has_think and not scan.has_answer

    def test_total_on_junk(self):
        for junk in ("", "\x00\xff", "<><><tag>", "<answer></answer>"):
            scan_tags(junk)  # must not raise


VALID_CALLS = [
    ("crop(image_path, 10, 20, 30, 40)",
     AugmentationOp("crop", {"x0": 10, "y0": 20, "x1": 30, "y1": 40}), None),
    ("img2 = crop(img, 0, 0, 5, 5)",
     AugmentationOp("crop", {"x0": 0, "y0": 0, "x1": 5, "y1": 5}), "img2"),
    ("resize_up(image_path, factor=2.0)",
     AugmentationOp("resize_up", {"factor": 2.0}), None),
    ("resize(image_path, 0.5)",
     AugmentationOp("resize_down", {"factor": 0.5}), None),
    ("resize(image_path, 3)",
     AugmentationOp("resize_up", {"factor": 3}), None),
    ("rotate(image_path, degrees=90)",
     AugmentationOp("rotate", {"degrees": 90}), None),
    ('flip("horizontal")',
     AugmentationOp("flip", {"axis": "horizontal"}), None),
    ('flip(image_path, axis="vertical")',
     AugmentationOp("flip", {"axis": "vertical"}), None),
    ('denoise(image_path, method="gaussian", kernel_size=5)',
     AugmentationOp("denoise", {"method": "gaussian", "kernel_size": 5}), None),
    ("denoise(image_path)",
     AugmentationOp("denoise", {"method": "median", "kernel_size": 3}), None),
    ("edge(image_path)",
     AugmentationOp("edge", {}), None),
    ("  \n crop(i, 1, 2, 3, 4)  ",
     AugmentationOp("crop", {"x0": 1, "y0": 2, "x1": 3, "y1": 4}), None),
]


class TestExtractCall:
    @pytest.mark.parametrize("text,expected,target", VALID_CALLS)
    def test_valid_calls(self, text, expected, target):
        parsed = extract_call(text)
        assert isinstance(parsed, ParsedCall), getattr(parsed, "message", None)
        assert parsed.op == expected
        assert parsed.assignment_target == target

    @pytest.mark.parametrize("text,code", [
        ("sharpen(image_path)", "unknown_operation"),
        ("Crop(image_path, 0, 0, 1, 1)", "unknown_operation"),
        ("crop(image_path, 0, 0, 1)", "param_invalid"),
        ("crop(image_path, 0, 0, 1, 1, 9)", "param_invalid"),
        ("rotate(image_path, degrees=45)", "param_invalid"),
        ('flip(image_path, axis="diag")', "param_invalid"),
        ("denoise(image_path, kernel_size=4)", "param_invalid"),
        ("resize(image_path, factor=-2)", "param_invalid"),
        ("resize(image_path, factor=99)", "param_invalid"),
        ('crop(image_path, "a", 0, 1, 1)', "param_invalid"),
        ("crop(image_path, 0.5, 0, 1, 1)", "param_invalid"),
        ("rotate(image_path, angle=90)", "param_invalid"),
        ("crop(", "syntax_malformed"),
        ("", "syntax_malformed"),
        ("x = 1", "syntax_malformed"),
        ("crop(i,0,0,1,1); edge(i)", "syntax_malformed"),
        ("for x in y: pass", "syntax_malformed"),
        ("crop(i, 0, 0, 1, __import__('os'))", "syntax_malformed"),
        ("a.b(image_path)", "syntax_malformed"),
        ("crop(i, *args)", "syntax_malformed"),
        ("crop(i, **kw)", "syntax_malformed"),
        ("edge(i) + 1", "syntax_malformed"),
        ("rotate(image_path, degrees=True)", "syntax_malformed"),
    ])
    def test_rejections(self, text, code):
        parsed = extract_call(text)
        assert isinstance(parsed, ParseError)
        assert parsed.code == code
        assert parsed.message.startswith("Error:")

    def test_allowed_kinds_restriction(self):
        parsed = extract_call("resize_up(image_path, factor=2)",
                              allowed_kinds=tuple(k for k in OP_KINDS if k != "resize_up"))
        assert isinstance(parsed, ParseError)
        assert parsed.code == "unknown_operation"

    def test_resize_alias_respects_allowed_kinds(self):
        parsed = extract_call("resize(image_path, 2)",
                              allowed_kinds=tuple(k for k in OP_KINDS if k != "resize_up"))
        assert isinstance(parsed, ParseError) and parsed.code == "unknown_operation"
        still_ok = extract_call("resize(image_path, 0.5)",
                                allowed_kinds=tuple(k for k in OP_KINDS if k != "resize_up"))
        assert isinstance(still_ok, ParsedCall)

    def test_never_executes_input(self, tmp_path):
        marker = tmp_path / "pwned"
        extract_call(f"__import__('pathlib').Path('{marker}').touch()")
        extract_call(f"crop(open('{marker}', 'w'), 0, 0, 1, 1)")
        assert not marker.exists()


def op_strategy():
    crop_ops = st.tuples(st.integers(0, 50), st.integers(0, 50),
                         st.integers(51, 200), st.integers(51, 200)).map(
        lambda t: AugmentationOp("crop", {"x0": t[0], "y0": t[1], "x1": t[2], "y1": t[3]}))
    resize_ops = st.one_of(
        st.floats(1.0, 8.0, allow_nan=False).map(
            lambda f: AugmentationOp("resize_up", {"factor": f})),
        st.floats(0.125, 1.0, allow_nan=False).map(
            lambda f: AugmentationOp("resize_down", {"factor": f})))
    rotate_ops = st.sampled_from([90, 180, 270]).map(
        lambda d: AugmentationOp("rotate", {"degrees": d}))
    flip_ops = st.sampled_from(["horizontal", "vertical"]).map(
        lambda a: AugmentationOp("flip", {"axis": a}))
    denoise_ops = st.tuples(st.sampled_from(["gaussian", "median", "bilateral"]),
                            st.sampled_from([3, 5, 7, 9])).map(
        lambda t: AugmentationOp("denoise", {"method": t[0], "kernel_size": t[1]}))
    edge_ops = st.just(AugmentationOp("edge", {}))
    return st.one_of(crop_ops, resize_ops, rotate_ops, flip_ops, denoise_ops, edge_ops)


class TestRoundTrip:
    @given(op=op_strategy(), target=st.sampled_from([None, "image_path", "img2", "x"]))
    @settings(max_examples=300, deadline=None)
    def test_render_then_extract(self, op, target):
        text = render_call(op, assignment_target=target)
        parsed = extract_call(text)
        assert isinstance(parsed, ParsedCall), getattr(parsed, "message", text)
        assert parsed.op == op
        assert parsed.assignment_target == target

    @given(data=st.binary(max_size=200))
    @settings(max_examples=500, deadline=None)
    def test_arbitrary_bytes_never_crash(self, data):
        text = data.decode("utf-8", errors="replace")
        result = extract_call(text)
        assert isinstance(result, (ParsedCall, ParseError))
        scan_tags(text)
        find_stop(text, DEFAULT_STOP_SET)
