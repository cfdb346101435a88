"""Trace serialization, validation, streaming memory, and path vectors."""

from __future__ import annotations

import io
import json

import psutil
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moepos.corpus import DEFAULT_TAGSET
from moepos.trace import (
    HEADER_FIELDS,
    RECORD_FIELDS,
    TokenRecord,
    TraceFormatError,
    TraceHeader,
    TraceInvariantError,
    open_trace,
    path_vector,
    read_trace,
    record_violations,
    trace_to_string,
    validate_trace,
    write_trace,
)

from .conftest import DATA_DIR


def _header(n_layers=2, n_experts=4, k=2):
    return TraceHeader(
        model_name="t", n_layers=n_layers, n_experts=n_experts, k=k,
        tokenizer_id="word", tagset=DEFAULT_TAGSET.tags,
    )


def _record(i=0, layers=None, upos="NOUN"):
    if layers is None:
        layers = (((0, 0.75), (1, 0.25)), ((3, 0.6), (2, 0.4)))
    return TokenRecord(
        sentence_id=0, word_index=i, surface=f"w{i}", token_id=i,
        upos=upos, layers=layers,
    )


def test_round_trip_100_records_is_identity():
    header = _header()
    records = [_record(i) for i in range(100)]
    text = trace_to_string(header, records)
    restored_header, restored = read_trace(io.StringIO(text))
    assert restored_header == header
    assert restored == records


def test_wire_field_names_are_pinned():
    header = _header()
    text = trace_to_string(header, [_record()])
    lines = text.strip().split("\n")
    assert set(json.loads(lines[0])) == set(HEADER_FIELDS) == {
        "model_name", "n_layers", "n_experts", "k", "tokenizer_id", "tagset"}
    assert set(json.loads(lines[1])) == set(RECORD_FIELDS) == {
        "sid", "wid", "tok", "tid", "pos", "layers"}
    assert text.endswith("\n")
    assert "\r" not in text


def test_gates_are_quantized_to_six_significant_digits():
    record = _record(layers=(((0, 0.876543211), (1, 0.123456789)),
                             ((2, 2 / 3 - 1e-12), (1, 1 / 3))))
    assert record.layers[0][0][1] == 0.876543
    assert record.layers[0][1][1] == 0.123457
    assert record.layers[1][0][1] == 0.666667
    assert record.layers[1][1][1] == 0.333333
    # descending order is part of the record, not re-sorted at write time
    header = _header()
    text = trace_to_string(header, [record])
    _, restored = read_trace(io.StringIO(text))
    assert restored[0] == record
    assert trace_to_string(header, restored) == text


def test_validate_reports_wrong_pair_count():
    header = _header(k=2)
    bad = _record(layers=(((0, 1.0),), ((3, 0.6), (2, 0.4))))
    report = validate_trace(header, [_record(), bad, _record()])
    assert not report.ok
    assert report.records_checked == 3
    assert report.violations[0][0] == 1
    assert "expected k=2" in report.violations[0][1]


def test_validate_reports_out_of_range_expert_and_bad_sum():
    header = _header(n_experts=4)
    outside = _record(layers=(((4, 0.75), (1, 0.25)), ((0, 0.6), (1, 0.4))))
    report = validate_trace(header, [outside])
    assert any("out of [0, 4)" in message for _, message in report.violations)
    short = _record(layers=(((0, 0.6), (1, 0.3)), ((0, 0.6), (1, 0.4))))
    report = validate_trace(header, [short])
    assert any("sum to" in message for _, message in report.violations)


def test_validate_reports_duplicates_order_and_tag():
    header = _header()
    dup = _record(layers=(((1, 0.5), (1, 0.5)), ((0, 0.6), (1, 0.4))))
    assert any("repeats" in m for m in record_violations(header, dup))
    ascending = _record(layers=(((0, 0.25), (1, 0.75)), ((0, 0.6), (1, 0.4))))
    assert any("descending" in m for m in record_violations(header, ascending))
    alien = _record(upos="NOT_A_TAG")
    assert any("tagset" in m for m in record_violations(header, alien))
    wrong_depth = _record(layers=(((0, 0.75), (1, 0.25)),))
    assert any("header says 2" in m for m in record_violations(header, wrong_depth))


def test_validate_ok_on_valid_trace_and_truncates_at_limit():
    header = _header()
    assert validate_trace(header, [_record(i) for i in range(10)]).ok
    bad = [_record(upos="BAD") for _ in range(150)]
    report = validate_trace(header, bad, max_violations=100)
    assert report.truncated
    assert len(report.violations) == 100


def test_open_trace_validation_raises_with_record_index():
    header = _header()
    good, bad = _record(0), _record(1, layers=(((0, 1.0),), ((0, 0.6), (1, 0.4))))
    text = trace_to_string(header, [good])
    # hand-corrupt the second record line
    bad_line = json.dumps({
        "sid": 0, "wid": 1, "tok": "w1", "tid": 1, "pos": "NOUN",
        "layers": [[[0, 1.0]], [[0, 0.6], [1, 0.4]]],
    }, separators=(",", ":"))
    stream = io.StringIO(text + bad_line + "\n")
    _, records = open_trace(stream)
    with pytest.raises(TraceInvariantError, match="record 1"):
        list(records)


def test_format_errors_are_typed_and_indexed():
    with pytest.raises(TraceFormatError, match="empty trace"):
        read_trace(io.StringIO(""))
    with pytest.raises(TraceFormatError, match="incompatible trace version"):
        read_trace(io.StringIO('{"model_name":"x","extra":1}\n'))
    header_line = trace_to_string(_header(), [])
    with pytest.raises(TraceFormatError, match="record 0"):
        read_trace(io.StringIO(header_line + '{"sid": 0, "truncated...\n'))
    # expert indices must be JSON integers
    float_expert = header_line + json.dumps({
        "sid": 0, "wid": 0, "tok": "w", "tid": 0, "pos": "NOUN",
        "layers": [[[0.0, 0.75], [1, 0.25]], [[3, 0.6], [2, 0.4]]],
    }) + "\n"
    with pytest.raises(TraceFormatError, match="expert"):
        read_trace(io.StringIO(float_expert))


def test_header_invariants():
    with pytest.raises(TraceFormatError):
        read_trace(io.StringIO('{"model_name":"x","n_layers":1,"n_experts":2,'
                               '"k":3,"tokenizer_id":"t","tagset":["NOUN"]}\n'))
    with pytest.raises(Exception):
        TraceHeader(model_name="x", n_layers=0, n_experts=2, k=1,
                    tokenizer_id="t", tagset=("NOUN",))


def test_write_trace_accepts_path_and_returns_count(tmp_path):
    header = _header()
    destination = tmp_path / "out.trace.jsonl"
    count = write_trace(header, (_record(i) for i in range(7)), destination)
    assert count == 7
    restored_header, restored = read_trace(destination)
    assert restored_header == header
    assert len(restored) == 7


def test_streaming_keeps_memory_flat(tmp_path):
    # 1e5 records must stream without materializing; < 100 MB growth
    header = _header(n_layers=4)
    layers = (((0, 0.75), (1, 0.25)),) * 4

    def generate():
        for i in range(100_000):
            yield TokenRecord(sentence_id=i // 50, word_index=i % 50,
                              surface=f"w{i}", token_id=i, upos="NOUN",
                              layers=layers)

    destination = tmp_path / "big.trace.jsonl"
    write_trace(header, generate(), destination)

    process = psutil.Process()
    before = process.memory_info().rss
    peak = before
    _, records = open_trace(destination)
    count = 0
    for _ in records:
        count += 1
        if count % 10_000 == 0:
            peak = max(peak, process.memory_info().rss)
    assert count == 100_000
    assert peak - before < 100 * 1024 * 1024


def test_path_vector_shapes_and_ranges():
    layers = tuple(
        tuple(((2 * l) % 8, 0.75) if j == 0 else ((2 * l + 1) % 8, 0.25)
              for j in range(2))
        for l in range(32)
    )
    record = _record(layers=layers)
    full = path_vector(record, "top_k")
    assert len(full.values) == 64
    assert full.layer_range == (0, 32)
    top1 = path_vector(record, "top_1")
    assert len(top1.values) == 32
    assert top1.values == tuple((2 * l) % 8 for l in range(32))
    first = path_vector(record, "top_k", (0, 1))
    assert first.values == (0, 1)


def test_path_vector_concatenates_over_adjacent_ranges():
    record = _record()
    left = path_vector(record, "top_k", (0, 1))
    right = path_vector(record, "top_k", (1, 2))
    union = path_vector(record, "top_k", (0, 2))
    assert left.values + right.values == union.values


def test_path_vector_rejects_bad_ranges_and_modes():
    record = _record()
    for bad in ((0, 0), (1, 1), (-1, 2), (0, 3), (2, 1)):
        with pytest.raises(Exception):
            path_vector(record, "top_k", bad)
    with pytest.raises(Exception):
        path_vector(record, "top_2")


def test_golden_trace_parse_is_byte_stable():
    path = DATA_DIR / "golden.trace.jsonl"
    original = path.read_text(encoding="utf-8")
    header, records = read_trace(path)
    assert trace_to_string(header, records) == original
    assert validate_trace(header, records).ok
    assert header.model_name == "golden-fixture"
    assert len(records) == 12


@st.composite
def _trace_case(draw):
    n_layers = draw(st.integers(1, 4))
    n_experts = draw(st.integers(2, 6))
    k = draw(st.integers(1, min(3, n_experts)))
    header = TraceHeader(model_name="p", n_layers=n_layers, n_experts=n_experts,
                         k=k, tokenizer_id="word", tagset=DEFAULT_TAGSET.tags)
    records = []
    for i in range(draw(st.integers(1, 5))):
        layers = []
        for _ in range(n_layers):
            experts = draw(st.permutations(range(n_experts)))[:k]
            raw = sorted(draw(st.lists(st.floats(0.05, 1.0), min_size=k, max_size=k)),
                         reverse=True)
            total = sum(raw)
            layers.append(tuple((e, w / total) for e, w in zip(experts, raw)))
        records.append(_record(i, layers=tuple(layers),
                               upos=draw(st.sampled_from(DEFAULT_TAGSET.tags))))
    return header, records


@settings(max_examples=50)
@given(_trace_case())
def test_round_trip_identity_property(case):
    header, records = case
    text = trace_to_string(header, records)
    restored_header, restored = read_trace(io.StringIO(text))
    assert restored_header == header
    assert restored == records
    assert trace_to_string(restored_header, restored) == text
