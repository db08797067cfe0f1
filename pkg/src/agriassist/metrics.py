"""Evaluation metrics computed from session journals and annotation files.

Label-dependent metrics (answer accuracy, context relevance, follow-up
relevance) only exist when an annotations file supplies the human labels;
everything else is derived from the journal alone. The computation is a
single read-only pass and safe to run against a live journal snapshot.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

SLOW_THRESHOLD_MS = 3000.0

EXPERT_ESCALATION_EVENT = "EscalatedToExpert"  # hook only; never fired by default


class JournalCorrupt(Exception):
    def __init__(self, line_number: int, reason: str):
        self.line_number = line_number
        super().__init__(f"journal corrupt at line {line_number}: {reason}")


class AnnotationsCorrupt(Exception):
    def __init__(self, line_number: int, reason: str):
        self.line_number = line_number
        super().__init__(f"annotations corrupt at line {line_number}: {reason}")


@dataclass(frozen=True)
class AnnotationRecord:
    session_id: str
    turn_index: int
    qra_correct: bool
    pcr_relevant: bool
    fqr_appropriate: bool


@dataclass
class MetricsReport:
    sessions: int = 0
    sessions_with_turns: int = 0
    sessions_answered: int = 0
    turns: int = 0
    error_responses: int = 0
    qcr: float = 0.0
    rt_avg_ms: float = 0.0
    slow_fraction_over_3s: float = 0.0
    text_delivery_rate: float = 0.0
    error_rate: float = 0.0
    uptime_fraction: float = 0.0
    feedback_count: int = 0
    feedback_mean_rating: Optional[float] = None
    nps: Optional[float] = None
    qra: Optional[float] = None
    pcr: Optional[float] = None
    fqr: Optional[float] = None
    annotations_used: int = 0
    annotation_mismatches: list[str] = field(default_factory=list)
    expert_escalations: int = 0


def compute_metrics(
    journal_lines: Iterable[str],
    annotations: Optional[Iterable[AnnotationRecord]] = None,
) -> MetricsReport:
    """Single-pass metric computation over journal lines.

    Raises JournalCorrupt (with the line number) on an unparseable line.
    Annotations referencing unknown turns are excluded and listed in the
    report's mismatch list.
    """
    report = MetricsReport()
    sessions_seen: set[str] = set()
    sessions_with_turns: set[str] = set()
    sessions_answered: set[str] = set()
    turn_keys: set[tuple[str, int]] = set()
    latencies: list[float] = []
    ratings: list[int] = []
    server_errors = 0

    for lineno, line in enumerate(journal_lines, start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except ValueError as exc:
            raise JournalCorrupt(lineno, f"invalid JSON: {exc}") from exc
        if not isinstance(entry, dict) or "type" not in entry:
            raise JournalCorrupt(lineno, "entry is not an object with a 'type'")
        kind = entry["type"]
        try:
            if kind == "session":
                sessions_seen.add(str(entry["session_id"]))
            elif kind == "turn":
                sid = str(entry["session_id"])
                sessions_seen.add(sid)
                sessions_with_turns.add(sid)
                if entry.get("phase") == "Answered":
                    sessions_answered.add(sid)
                turn_keys.add((sid, int(entry["turn_index"])))
                latencies.append(float(entry.get("latency_ms", 0.0)))
                events = entry.get("events", [])
                report.expert_escalations += sum(
                    1 for e in events if e == EXPERT_ESCALATION_EVENT
                )
            elif kind == "feedback":
                ratings.append(int(entry["rating"]))
            elif kind == "error":
                report.error_responses += 1
                if int(entry.get("status", 0)) >= 500:
                    server_errors += 1
            # unknown types are skipped for forward compatibility
        except (KeyError, TypeError, ValueError) as exc:
            raise JournalCorrupt(lineno, f"bad {kind} entry: {exc}") from exc

    report.sessions = len(sessions_seen)
    report.sessions_with_turns = len(sessions_with_turns)
    report.sessions_answered = len(sessions_answered)
    report.turns = len(turn_keys)

    if sessions_with_turns:
        report.qcr = len(sessions_answered) / len(sessions_with_turns)
    if latencies:
        report.rt_avg_ms = sum(latencies) / len(latencies)
        report.slow_fraction_over_3s = sum(
            1 for ms in latencies if ms > SLOW_THRESHOLD_MS
        ) / len(latencies)
    attempts = len(latencies) + report.error_responses
    if attempts:
        report.text_delivery_rate = len(latencies) / attempts
        report.error_rate = server_errors / attempts
        report.uptime_fraction = (attempts - server_errors) / attempts

    report.feedback_count = len(ratings)
    if ratings:
        report.feedback_mean_rating = sum(ratings) / len(ratings)
        promoters = sum(1 for r in ratings if r == 5)
        detractors = sum(1 for r in ratings if r <= 2)
        report.nps = 100.0 * (promoters - detractors) / len(ratings)

    if annotations is not None:
        used: list[AnnotationRecord] = []
        for rec in annotations:
            if (rec.session_id, rec.turn_index) in turn_keys:
                used.append(rec)
            else:
                report.annotation_mismatches.append(
                    f"{rec.session_id}#{rec.turn_index}"
                )
        report.annotations_used = len(used)
        if used:
            report.qra = sum(1 for r in used if r.qra_correct) / len(used)
            report.pcr = sum(1 for r in used if r.pcr_relevant) / len(used)
            report.fqr = sum(1 for r in used if r.fqr_appropriate) / len(used)
    return report


def compute_metrics_from_path(
    journal_path: str | Path,
    annotations_path: str | Path | None = None,
) -> MetricsReport:
    journal_path = Path(journal_path)
    lines = (
        journal_path.read_text("utf-8").splitlines() if journal_path.exists() else []
    )
    annotations = load_annotations(annotations_path) if annotations_path else None
    return compute_metrics(lines, annotations)


def load_annotations(path: str | Path) -> list[AnnotationRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                records.append(
                    AnnotationRecord(
                        session_id=str(doc["session_id"]),
                        turn_index=int(doc["turn_index"]),
                        qra_correct=bool(doc["qra_correct"]),
                        pcr_relevant=bool(doc["pcr_relevant"]),
                        fqr_appropriate=bool(doc["fqr_appropriate"]),
                    )
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise AnnotationsCorrupt(lineno, str(exc)) from exc
    return records


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_ROWS = (
    ("sessions", "Sessions", "count"),
    ("sessions_with_turns", "Sessions with turns", "count"),
    ("sessions_answered", "Sessions answered", "count"),
    ("turns", "Message turns", "count"),
    ("qcr", "Query Completion Rate (QCR)", "fraction"),
    ("qra", "Query Response Accuracy (QRA)", "fraction"),
    ("pcr", "Personalization & Contextual Relevance (PCR)", "fraction"),
    ("fqr", "Follow-up Question Relevance (FQR)", "fraction"),
    ("rt_avg_ms", "Average Response Time (ms)", "number"),
    ("slow_fraction_over_3s", "Responses slower than 3 s", "fraction"),
    ("text_delivery_rate", "Text Delivery Rate", "fraction"),
    ("error_rate", "Error Rate", "fraction"),
    ("uptime_fraction", "Uptime Rate", "fraction"),
    ("feedback_count", "Feedback records", "count"),
    ("feedback_mean_rating", "User Satisfaction (mean rating)", "number"),
    ("nps", "Net Promoter Score", "number"),
    ("expert_escalations", "Expert escalations", "count"),
)


def report_to_dict(report: MetricsReport) -> dict:
    doc = {}
    for key, _, _ in _ROWS:
        doc[key] = getattr(report, key)
    doc["annotations_used"] = report.annotations_used
    doc["annotation_mismatches"] = list(report.annotation_mismatches)
    return doc


def render_report(report: MetricsReport, fmt: str = "text_table") -> bytes:
    if fmt == "line_delimited":
        lines = []
        for key, label, _ in _ROWS:
            value = getattr(report, key)
            lines.append(
                json.dumps(
                    {"metric": key, "label": label, "value": value,
                     "available": value is not None},
                    ensure_ascii=False,
                )
            )
        for mismatch in report.annotation_mismatches:
            lines.append(json.dumps({"metric": "annotation_mismatch", "value": mismatch}))
        return ("\n".join(lines) + "\n").encode("utf-8")
    if fmt == "text_table":
        width = max(len(label) for _, label, _ in _ROWS)
        lines = [f"{'Metric'.ljust(width)}  Value", f"{'-' * width}  -----"]
        for key, label, kind in _ROWS:
            value = getattr(report, key)
            if value is None:
                shown = "unavailable"
            elif kind == "fraction":
                shown = f"{100.0 * value:.2f}%"
            elif kind == "number":
                shown = f"{value:.2f}"
            else:
                shown = str(value)
            lines.append(f"{label.ljust(width)}  {shown}")
        if report.annotation_mismatches:
            lines.append("")
            lines.append("Annotation mismatches (excluded):")
            lines.extend(f"  - {m}" for m in report.annotation_mismatches)
        return ("\n".join(lines) + "\n").encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}")
