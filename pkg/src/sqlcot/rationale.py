"""Step-by-step SQL-building rationales and their Markdown form.

A rationale is an ordered list of steps. Each step has a bold
``**Step N: title**`` heading (optionally underlined with ``--``), prose,
and at most one fenced ```` ```sql ```` block. The last step always carries
SQL: that block is the final statement answering the question.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

_HEADING_RE = re.compile(r"^\s*\*\*\s*Step\s+(\d+)\s*:\s*(.*?)\s*\*\*\s*$")
_UNDERLINE_RE = re.compile(r"^\s*-{2,}\s*$")
_FENCE_OPEN_RE = re.compile(r"^\s*```([A-Za-z0-9_-]*)\s*$")
_FENCE_CLOSE_RE = re.compile(r"^\s*```\s*$")


class CotParseError(ValueError):
    """A document does not parse as a valid rationale."""


@dataclass
class CotStep:
    """One rationale step; ``sql`` holds the step's fenced SQL, if any."""

    index: int
    title: str
    prose: str = ""
    sql: str | None = None

    def to_dict(self) -> dict:
        return {"index": self.index, "title": self.title, "prose": self.prose, "sql": self.sql}

    @classmethod
    def from_dict(cls, data: dict) -> "CotStep":
        return cls(**data)


@dataclass
class CotRationale:
    """Ordered steps plus optional closing prose after the final SQL."""

    steps: list[CotStep]
    trailer: str = ""

    def validate(self) -> None:
        if len(self.steps) < 2:
            raise CotParseError("rationale has fewer than 2 steps")
        for position, step in enumerate(self.steps, start=1):
            if step.index != position:
                raise CotParseError(f"non-contiguous step numbering at step {step.index}")
            if step.sql is not None and not step.sql.strip():
                raise CotParseError(f"step {step.index} has an empty sql block")
        if self.steps[-1].sql is None:
            raise CotParseError("last step lacks a sql block")

    def to_dict(self) -> dict:
        return {"steps": [s.to_dict() for s in self.steps], "trailer": self.trailer}

    @classmethod
    def from_dict(cls, data: dict) -> "CotRationale":
        return cls(steps=[CotStep.from_dict(s) for s in data["steps"]], trailer=data.get("trailer", ""))


@dataclass
class _Region:
    index: int
    title: str
    lines: list[str] = field(default_factory=list)


def _split_regions(markdown: str) -> tuple[str, list[_Region]]:
    preamble: list[str] = []
    regions: list[_Region] = []
    for line in markdown.splitlines():
        m = _HEADING_RE.match(line)
        if m:
            regions.append(_Region(index=int(m.group(1)), title=m.group(2)))
        elif regions:
            regions[-1].lines.append(line)
        else:
            preamble.append(line)
    return "\n".join(preamble).strip(), regions


def _extract_step(region: _Region, is_last: bool) -> tuple[CotStep, str]:
    """Build a step from a heading region; returns (step, trailer_text)."""
    lines = list(region.lines)
    # Drop the optional "--" underline directly below the heading.
    cursor = 0
    while cursor < len(lines) and not lines[cursor].strip():
        cursor += 1
    if cursor < len(lines) and _UNDERLINE_RE.match(lines[cursor]):
        lines = lines[:cursor] + lines[cursor + 1:]

    # Ordered parts: plain text lines and non-step fences, with a marker for
    # where the step's own sql fence sat.
    parts: list[tuple[str, str]] = []  # (kind, text); kind: text | fence | sqlmark
    sql: str | None = None
    i = 0
    while i < len(lines):
        open_match = _FENCE_OPEN_RE.match(lines[i])
        if not open_match:
            parts.append(("text", lines[i]))
            i += 1
            continue
        tag = open_match.group(1).lower()
        body: list[str] = []
        i += 1
        while i < len(lines) and not _FENCE_CLOSE_RE.match(lines[i]):
            body.append(lines[i])
            i += 1
        if i >= len(lines):
            logger.warning("unterminated code fence in step %d", region.index)
        else:
            i += 1
        content = "\n".join(body)
        if tag == "sql" and sql is None:
            sql = content
            parts.append(("sqlmark", ""))
        elif tag == "sql":
            # Extra sql fences fold into prose untagged so a reparse keeps
            # them as prose rather than promoting one to the step SQL.
            logger.warning("step %d has multiple sql fences; extras folded into prose", region.index)
            parts.append(("fence", "\n".join(["```", content, "```"])))
        else:
            parts.append(("fence", "\n".join([f"```{open_match.group(1)}", content, "```"])))

    # In the last step, a trailing run of plain text after the sql fence is
    # the document trailer, provided no fence interrupts it.
    trailer = ""
    if is_last and sql is not None:
        mark = next(idx for idx, (kind, _) in enumerate(parts) if kind == "sqlmark")
        tail = parts[mark + 1:]
        if tail and all(kind == "text" for kind, _ in tail):
            trailer = "\n".join(text for _, text in tail).strip()
            parts = parts[: mark + 1]

    prose = "\n".join(text for kind, text in parts if kind != "sqlmark").strip()
    return CotStep(index=region.index, title=region.title, prose=prose, sql=sql), trailer


def parse_cot(markdown: str) -> CotRationale:
    """Parse a Markdown rationale document.

    Step boundaries are ``**Step N: …**`` headings. Each step's first
    ```` ```sql ```` fence becomes its SQL; other fenced blocks stay prose.
    Text before the first heading is kept as leading prose of step 1; text
    after the final step's SQL becomes the trailer.
    """
    preamble, regions = _split_regions(markdown)
    if not regions:
        raise CotParseError("no step headings found")

    steps: list[CotStep] = []
    trailer = ""
    for pos, region in enumerate(regions):
        step, region_trailer = _extract_step(region, is_last=(pos == len(regions) - 1))
        steps.append(step)
        if region_trailer:
            trailer = region_trailer
    if preamble:
        first = steps[0]
        first.prose = f"{preamble}\n\n{first.prose}".strip()

    cot = CotRationale(steps=steps, trailer=trailer)
    cot.validate()
    return cot


def serialize_cot(cot: CotRationale) -> str:
    """Emit the canonical byte-exact Markdown layout.

    Per step: heading line, ``--`` underline, blank line, prose, blank line,
    ```` ```sql ```` fence. Blocks are separated by one blank line and the
    document ends with a newline. ``parse_cot(serialize_cot(c))`` equals ``c``
    structurally (titles and prose compared in stripped form).
    """
    cot.validate()
    blocks: list[str] = []
    for step in cot.steps:
        lines = [f"**Step {step.index}: {step.title.strip()}**", "--"]
        prose = step.prose.strip()
        if prose:
            lines += ["", prose]
        if step.sql is not None:
            lines += ["", "```sql", step.sql, "```"]
        blocks.append("\n".join(lines))
    doc = "\n\n".join(blocks)
    trailer = cot.trailer.strip()
    if trailer:
        doc += "\n\n" + trailer
    return doc + "\n"


def final_sql(cot: CotRationale) -> str:
    """The SQL of the last step, verbatim."""
    cot.validate()
    assert cot.steps[-1].sql is not None
    return cot.steps[-1].sql


def cot_length(cot: CotRationale) -> tuple[int, int]:
    """(step count, character count of the canonical serialization)."""
    return len(cot.steps), len(serialize_cot(cot))
