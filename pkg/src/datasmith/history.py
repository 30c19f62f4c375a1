"""Budget-bounded rendering of a session into one context string.

Every agent call sees the same picture of the run so far, built by six rules:

1. The project brief opens the transcript.
2. Cells appear in order, labelled "Text #n:" / "Code #n:" with full sources.
3. Failed code cells that are no longer the latest cell keep their source but
   contribute no output.
4. A successful code cell shows the first ``head_tail_lines`` lines of its
   stdout under "Output (head):".
5. Only when the transcript currently ends in a failed code cell, the last
   ``head_tail_lines`` lines of its stderr appear under "Error (tail):", so
   the next agent sees exactly one actionable error.
6. The finished string keeps only its final ``char_limit`` characters
   (Unicode scalar values, counted after assembly, cut mid-line if needed).

The exact text format is frozen in docs/history-format.md; tests hold an
independent reference implementation against this one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .domain import Cell, CellKind, ExecStatus, ProjectSpec, Session

HEADER_TITLE = "Project summary"
OUTPUT_HEAD_LABEL = "Output (head):"
ERROR_TAIL_LABEL = "Error (tail):"
TEXT_LABEL = "Text #{n}:"
CODE_LABEL = "Code #{n}:"
BLOCK_SEPARATOR = "\n\n"

# Header lines appear in this fixed order; empty optional fields are omitted.
_HEADER_FIELDS = (
    ("Task description", "task_description"),
    ("Data description", "data_description"),
    ("Data location", "data_location"),
    ("Metrics", "metrics"),
    ("Inputs", "inputs"),
    ("Outputs", "outputs"),
    ("Special instructions", "special_instructions"),
)


@dataclass(frozen=True)
class SizeReport:
    """How large the transcript was before and after the budget cut."""

    untruncated_chars: int
    emitted_chars: int
    truncated: bool


def render_header(spec: ProjectSpec) -> str:
    """Rule 1: the project brief, one labelled line per non-empty field."""
    lines = [HEADER_TITLE, "=" * len(HEADER_TITLE)]
    if spec.general_instructions:
        lines.append("General instructions:")
        for key, value in spec.general_instructions:
            lines.append(f"- {key}: {value}")
    for label, attr in _HEADER_FIELDS:
        value = getattr(spec, attr)
        if value:
            lines.append(f"{label}: {value}")
    return "\n".join(lines)


def _head(text: str, n: int) -> list[str]:
    return text.splitlines()[:n]

def _tail(text: str, n: int) -> list[str]:
    lines = text.splitlines()
    return lines[-n:] if n else []


def _render_cell(cell: Cell, *, is_last: bool, head_tail_lines: int) -> str:
    if cell.kind is CellKind.TEXT:
        return TEXT_LABEL.format(n=cell.ordinal) + "\n" + cell.source
    if cell.kind is CellKind.FINISH:
        return cell.source
    parts = [CODE_LABEL.format(n=cell.ordinal) + "\n" + cell.source]
    result = cell.final_result
    if result is not None and result.status is ExecStatus.SUCCESS:
        head = _head(result.stdout, head_tail_lines)
        parts.append(OUTPUT_HEAD_LABEL + ("\n" + "\n".join(head) if head else ""))
    elif result is not None and is_last:
        tail = _tail(result.stderr, head_tail_lines)
        parts.append(ERROR_TAIL_LABEL + ("\n" + "\n".join(tail) if tail else ""))
    return "\n".join(parts)


def render_untruncated(
    session: Session,
    *,
    head_tail_lines: Optional[int] = None,
) -> str:
    """The full transcript before rule 6 applies."""
    htl = session.config.head_tail_lines if head_tail_lines is None else head_tail_lines
    last_index = len(session.cells) - 1
    blocks = [render_header(session.spec)]
    for index, cell in enumerate(session.cells):
        blocks.append(_render_cell(cell, is_last=index == last_index, head_tail_lines=htl))
    return BLOCK_SEPARATOR.join(blocks)


def render_history(
    session: Session,
    *,
    char_limit: Optional[int] = None,
    head_tail_lines: Optional[int] = None,
) -> str:
    """Render the session under the character budget.

    Limits default to the session's own config.  The result is always a
    suffix of the untruncated transcript and never exceeds ``char_limit``
    Unicode characters.
    """
    limit = session.config.history_char_limit if char_limit is None else char_limit
    if limit < 1:
        raise ValueError("char_limit must be positive")
    full = render_untruncated(session, head_tail_lines=head_tail_lines)
    return full[-limit:] if len(full) > limit else full


def render_size_report(
    session: Session,
    *,
    char_limit: Optional[int] = None,
    head_tail_lines: Optional[int] = None,
) -> SizeReport:
    """Sizes before/after truncation, for trace records and dashboards."""
    limit = session.config.history_char_limit if char_limit is None else char_limit
    if limit < 1:
        raise ValueError("char_limit must be positive")
    full = render_untruncated(session, head_tail_lines=head_tail_lines)
    emitted = min(len(full), limit)
    return SizeReport(
        untruncated_chars=len(full),
        emitted_chars=emitted,
        truncated=len(full) > limit,
    )
