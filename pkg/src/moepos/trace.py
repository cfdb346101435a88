"""Routing-trace data model: JSONL serialization, validation, path vectors.

A trace file is UTF-8 JSON Lines: line 1 is the header object, every later
line is one token record. Gate weights are quantized to 6 significant digits
at record construction, so an in-memory record and its serialized form carry
identical values and write -> read -> write is byte-stable.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

HEADER_FIELDS = ("model_name", "n_layers", "n_experts", "k", "tokenizer_id", "tagset")
RECORD_FIELDS = ("sid", "wid", "tok", "tid", "pos", "layers")

# Allowance on the per-layer gate sum: 1e-6 from the producer plus half an
# ulp of the 6-significant-digit wire encoding per gate.
def _gate_sum_tolerance(k: int) -> float:
    return 1e-6 + 5e-7 * k + 1e-12


class TraceError(ValueError):
    """Invalid trace operation."""


class TraceFormatError(TraceError):
    """Structurally unreadable trace data."""

    def __init__(self, message: str, record_index: int | None = None):
        if record_index is not None:
            message = f"record {record_index}: {message}"
        super().__init__(message)
        self.record_index = record_index


class TraceInvariantError(TraceError):
    """A parsed record violates a trace invariant."""

    def __init__(self, record_index: int, message: str):
        super().__init__(f"record {record_index}: {message}")
        self.record_index = record_index


def _quantize(w: float) -> float:
    return float(f"{float(w):.6g}")


@dataclass(frozen=True)
class TraceHeader:
    """Shape and provenance of a trace: model, layer/expert geometry, tagset."""

    model_name: str
    n_layers: int
    n_experts: int
    k: int
    tokenizer_id: str
    tagset: tuple[str, ...]

    def __post_init__(self):
        if self.n_layers < 1 or self.n_experts < 1 or self.k < 1:
            raise TraceError("n_layers, n_experts and k must all be >= 1")
        if self.k > self.n_experts:
            raise TraceError(f"k={self.k} exceeds n_experts={self.n_experts}")
        object.__setattr__(self, "tagset", tuple(self.tagset))


@dataclass(frozen=True)
class TokenRecord:
    """One token's identity plus its per-layer (expert, gate) selections.

    layers[l] holds exactly k pairs in descending gate order.
    """

    sentence_id: int
    word_index: int
    surface: str
    token_id: int
    upos: str
    layers: tuple[tuple[tuple[int, float], ...], ...]

    def __post_init__(self):
        frozen = tuple(
            tuple((int(e), _quantize(w)) for e, w in layer) for layer in self.layers
        )
        object.__setattr__(self, "layers", frozen)


@dataclass(frozen=True)
class PathVector:
    """A record's expert choices flattened over a half-open layer range."""

    values: tuple[int, ...]
    mode: str
    layer_range: tuple[int, int]


@dataclass
class ValidationReport:
    """Outcome of validate_trace: first violations found, if any."""

    violations: list[tuple[int, str]] = field(default_factory=list)
    records_checked: int = 0
    truncated: bool = False

    @property
    def ok(self) -> bool:
        return not self.violations


def record_violations(header: TraceHeader, record: TokenRecord) -> list[str]:
    """All invariant violations of one record against its header."""
    problems: list[str] = []
    if len(record.layers) != header.n_layers:
        problems.append(f"has {len(record.layers)} layers, header says {header.n_layers}")
    if record.upos not in header.tagset:
        problems.append(f"pos {record.upos!r} not in header tagset")
    tol = _gate_sum_tolerance(header.k)
    for l, layer in enumerate(record.layers):
        if len(layer) != header.k:
            problems.append(f"layer {l} has {len(layer)} pairs, expected k={header.k}")
            continue
        experts = [e for e, _ in layer]
        weights = [w for _, w in layer]
        if any(not 0 <= e < header.n_experts for e in experts):
            problems.append(f"layer {l} expert index out of [0, {header.n_experts})")
        if len(set(experts)) != len(experts):
            problems.append(f"layer {l} repeats an expert index")
        if any(w <= 0 for w in weights):
            problems.append(f"layer {l} has a non-positive gate weight")
        if any(a < b for a, b in zip(weights, weights[1:])):
            problems.append(f"layer {l} gate weights not in descending order")
        if abs(sum(weights) - 1.0) > tol:
            problems.append(f"layer {l} gate weights sum to {sum(weights):.8f}")
    return problems


def validate_trace(header: TraceHeader, records: Iterable[TokenRecord],
                   max_violations: int = 100) -> ValidationReport:
    """Check every record's invariants; collect at most max_violations."""
    report = ValidationReport()
    for index, record in enumerate(records):
        report.records_checked += 1
        for problem in record_violations(header, record):
            if len(report.violations) >= max_violations:
                report.truncated = True
                return report
            report.violations.append((index, problem))
    return report


def _header_to_json(header: TraceHeader) -> str:
    payload = {
        "model_name": header.model_name,
        "n_layers": header.n_layers,
        "n_experts": header.n_experts,
        "k": header.k,
        "tokenizer_id": header.tokenizer_id,
        "tagset": list(header.tagset),
    }
    return json.dumps(payload, separators=(",", ":"), ensure_ascii=False)


def _record_to_json(record: TokenRecord) -> str:
    payload = {
        "sid": record.sentence_id,
        "wid": record.word_index,
        "tok": record.surface,
        "tid": record.token_id,
        "pos": record.upos,
        "layers": [[[e, w] for e, w in layer] for layer in record.layers],
    }
    return json.dumps(payload, separators=(",", ":"), ensure_ascii=False)


def _parse_header(line: str) -> TraceHeader:
    try:
        data = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"header is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or set(data) != set(HEADER_FIELDS):
        raise TraceFormatError(
            f"header fields {sorted(data) if isinstance(data, dict) else type(data).__name__} "
            f"do not match expected {sorted(HEADER_FIELDS)}; incompatible trace version"
        )
    try:
        return TraceHeader(
            model_name=str(data["model_name"]),
            n_layers=int(data["n_layers"]),
            n_experts=int(data["n_experts"]),
            k=int(data["k"]),
            tokenizer_id=str(data["tokenizer_id"]),
            tagset=tuple(str(t) for t in data["tagset"]),
        )
    except (TypeError, TraceError) as exc:
        raise TraceFormatError(f"bad header values: {exc}") from exc


def _parse_record(line: str, index: int) -> TokenRecord:
    try:
        data = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"not valid JSON ({exc}); file truncated?", index) from exc
    if not isinstance(data, dict) or set(data) != set(RECORD_FIELDS):
        raise TraceFormatError("record fields do not match the trace schema", index)
    layers = data["layers"]
    if not isinstance(layers, list) or not all(
        isinstance(layer, list)
        and all(isinstance(p, list) and len(p) == 2 and isinstance(p[0], int)
                and isinstance(p[1], (int, float)) for p in layer)
        for layer in layers
    ):
        raise TraceFormatError("layers must be arrays of [expert, weight] pairs", index)
    try:
        return TokenRecord(
            sentence_id=int(data["sid"]),
            word_index=int(data["wid"]),
            surface=str(data["tok"]),
            token_id=int(data["tid"]),
            upos=str(data["pos"]),
            layers=tuple(tuple((p[0], p[1]) for p in layer) for layer in layers),
        )
    except (TypeError, ValueError) as exc:
        raise TraceFormatError(f"bad record values: {exc}", index) from exc


def write_trace(header: TraceHeader, records: Iterable[TokenRecord], sink) -> int:
    """Stream records to a path or text file object; returns records written."""
    own = isinstance(sink, (str, Path))
    f = open(sink, "w", encoding="utf-8", newline="\n") if own else sink
    count = 0
    try:
        f.write(_header_to_json(header) + "\n")
        for record in records:
            f.write(_record_to_json(record) + "\n")
            count += 1
    finally:
        if own:
            f.close()
    return count


def open_trace(source, validate: bool = True) -> tuple[TraceHeader, Iterator[TokenRecord]]:
    """Header plus a lazy record iterator; memory stays flat on big files.

    With validate=True a record that breaks an invariant raises
    TraceInvariantError naming its index; format damage always raises.
    """
    own = isinstance(source, (str, Path))
    f = open(source, "r", encoding="utf-8") if own else source
    first = f.readline()
    if not first.strip():
        if own:
            f.close()
        raise TraceFormatError("empty trace: no header line")
    try:
        header = _parse_header(first)
    except TraceError:
        if own:
            f.close()
        raise

    def records() -> Iterator[TokenRecord]:
        try:
            index = 0
            for line in f:
                if not line.strip():
                    continue
                record = _parse_record(line, index)
                if validate:
                    problems = record_violations(header, record)
                    if problems:
                        raise TraceInvariantError(index, problems[0])
                yield record
                index += 1
        finally:
            if own:
                f.close()

    return header, records()


def read_trace(source, validate: bool = True) -> tuple[TraceHeader, list[TokenRecord]]:
    """Load a whole trace into memory; see open_trace for streaming."""
    header, records = open_trace(source, validate=validate)
    return header, list(records)


def trace_to_string(header: TraceHeader, records: Iterable[TokenRecord]) -> str:
    buffer = io.StringIO()
    write_trace(header, records, buffer)
    return buffer.getvalue()


def path_vector(record: TokenRecord, mode: str = "top_k",
                layer_range: tuple[int, int] | None = None) -> PathVector:
    """Flatten a record's expert choices.

    top_k walks layers then gate rank (k entries per layer); top_1 keeps only
    the highest-gate expert per layer. layer_range is half-open.
    """
    n_layers = len(record.layers)
    if layer_range is None:
        layer_range = (0, n_layers)
    start, end = layer_range
    if not 0 <= start < end <= n_layers:
        raise TraceError(f"layer range [{start}, {end}) invalid for {n_layers} layers")
    if mode == "top_k":
        values = tuple(e for layer in record.layers[start:end] for e, _ in layer)
    elif mode == "top_1":
        values = tuple(layer[0][0] for layer in record.layers[start:end])
    else:
        raise TraceError(f"unknown path mode {mode!r}")
    return PathVector(values=values, mode=mode, layer_range=(start, end))
