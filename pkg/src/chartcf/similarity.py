"""Visual-similarity judging and score-based pair selection.

A judge model scores each original/counterfactual image pair on a fixed
five-criterion rubric (20 points each, 100 total).  Selection then keeps a
rho% slice of the scored pairs: the lowest-scoring slice by default, or a
seeded random / highest-scoring slice for comparison runs.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import ConfigError, EmptyInputError, JudgeParseError
from .transport import ChatClient, image_part, text_part

JUDGE_PROMPT = """\
You are an expert at evaluating visualization chart plots. You will be given two python-generated chart images:
- **Original Image**: The chart before code modification
- **Modified Image**: The chart after code modification
Your task is to assess the similarity between the two chart images.

### Scoring Criteria:
Evaluate the similarity between the two images based on the following criteria, totaling 100 points:

1. **Chart Types (20 points):** How similar are the chart types (e.g., line charts, bar charts, scatter plots, etc.) between the two images?
2. **Layout (20 points):** How similar is the arrangement of subplots (e.g., number of rows and columns, spacing) between the two images?
3. **Text Content (20 points):** How similar are the titles, annotations, axis labels, and other text elements (excluding axis tick labels) between the two images?
4. **Data (20 points):** How closely do the data trends, patterns, and the number of data groups match between the two images?
5. **Style (20 points):** How similar are the colors, line styles, marker types, legends, grids, and other stylistic details between the two images?

### Evaluation:
Compare the two images head to head and provide a detailed assessment. Use the following format for your response:


---

Comments:
- Chart Types: {your comment and subscore}
- Layout: {your comment and subscore}
- Text Content: {your comment and subscore}
- Data: {your comment and subscore}
- Style: {your comment and subscore}

Score: {your final score out of 100}

---

Please use the above format to ensure the evaluation is clear and comprehensive.
"""

STRATEGY_KEEP_LOW = "keep_low"
STRATEGY_RANDOM = "random"
STRATEGY_KEEP_HIGH = "keep_high"
STRATEGIES = (STRATEGY_KEEP_LOW, STRATEGY_RANDOM, STRATEGY_KEEP_HIGH)

_CRITERIA = {
    "chart_types": "Chart Types",
    "layout": "Layout",
    "text_content": "Text Content",
    "data": "Data",
    "style": "Style",
}

_SCORE_RE = re.compile(r"Score:\s*(\d+)")
_OUT_OF_20_RE = re.compile(r"(\d+)\s*/\s*20")
_INT_RE = re.compile(r"\d+")


@dataclass(frozen=True)
class SimilarityScore:
    chart_types: int | None
    layout: int | None
    text_content: int | None
    data: int | None
    style: int | None
    total: int
    judge_model: str
    raw: str

    def subscores(self) -> tuple[int | None, ...]:
        return (self.chart_types, self.layout, self.text_content, self.data, self.style)

    def to_json(self) -> dict:
        return {
            "chart_types": self.chart_types,
            "layout": self.layout,
            "text_content": self.text_content,
            "data": self.data,
            "style": self.style,
            "total": self.total,
            "judge_model": self.judge_model,
        }


@dataclass(frozen=True)
class ScoredPair:
    """What selection and partitioning operate on."""

    pair_id: str
    total: int
    score: SimilarityScore | None = None


def _criterion_subscore(raw: str, label: str) -> int | None:
    """Subscore from the '- <Criterion>: ...' comment line.

    An 'N/20' form wins; otherwise the last bare integer on the line.
    Returns None when the line exists but carries no number.
    """
    match = re.search(rf"^[ \t]*-[ \t]*{re.escape(label)}\s*:(.*)$", raw, re.MULTILINE)
    if not match:
        return None
    comment = match.group(1)
    frac = _OUT_OF_20_RE.search(comment)
    if frac:
        return int(frac.group(1))
    numbers = _INT_RE.findall(comment)
    return int(numbers[-1]) if numbers else None


def parse_judge_reply(raw: str, judge_model: str = "") -> SimilarityScore:
    """Parse one rubric reply; raises JudgeParseError on anything off-format.

    The final "Score: N" occurrence is the total.  When all five criterion
    subscores parse, their sum must equal the total.
    """
    totals = _SCORE_RE.findall(raw)
    if not totals:
        raise JudgeParseError("no 'Score: N' line in judge reply")
    total = int(totals[-1])
    if not 0 <= total <= 100:
        raise JudgeParseError(f"total {total} outside [0, 100]")
    subs = {field: _criterion_subscore(raw, label) for field, label in _CRITERIA.items()}
    parsed = [v for v in subs.values() if v is not None]
    if any(not 0 <= v <= 20 for v in parsed):
        raise JudgeParseError(f"subscore outside [0, 20]: {subs}")
    if len(parsed) == 5 and sum(parsed) != total:
        raise JudgeParseError(f"subscores {parsed} sum to {sum(parsed)}, not {total}")
    return SimilarityScore(total=total, judge_model=judge_model, raw=raw, **subs)


class JudgeClient:
    """Scores image pairs with the fixed rubric prompt."""

    def __init__(self, chat: ChatClient):
        self.chat = chat

    def score_pair(self, pair_id: str, original_image: Path, modified_image: Path) -> SimilarityScore:
        """Judge one pair; re-asks once on a malformed reply, then raises."""
        for path in (original_image, modified_image):
            if not Path(path).is_file():
                raise ConfigError(f"image not found for pair {pair_id}: {path}")
        parts = [
            image_part(Path(original_image).read_bytes()),
            image_part(Path(modified_image).read_bytes()),
            text_part(JUDGE_PROMPT),
        ]
        tag = f"{pair_id}/judge"
        last: JudgeParseError | None = None
        for _ in range(2):
            reply = self.chat.complete(parts, tag)
            try:
                return parse_judge_reply(reply.text, judge_model=self.chat.cfg.model_id)
            except JudgeParseError as exc:
                last = exc
        assert last is not None
        raise last


def retention_count(n: int, rho: float) -> int:
    """k = round(rho/100 * n), half away from zero, at least 1 when n >= 1."""
    if n <= 0:
        return 0
    return max(1, math.floor(n * rho / 100.0 + 0.5))


@dataclass(frozen=True)
class SelectionConfig:
    strategy: str
    rho: float
    rng_seed: int | None = None

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; pick one of {STRATEGIES}")
        if not 0 < self.rho <= 100:
            raise ConfigError(f"rho must be in (0, 100], got {self.rho}")
        if self.strategy == STRATEGY_RANDOM and self.rng_seed is None:
            raise ConfigError("random strategy needs an rng_seed")


def _shuffled_ids(entries: Sequence[ScoredPair], seed: int) -> list[ScoredPair]:
    # Fisher-Yates driven only by Random.random(), which is stable across
    # Python versions and platforms; prefixes give a nested random family.
    rng = random.Random(seed)
    items = sorted(entries, key=lambda e: e.pair_id)
    for i in range(len(items) - 1, 0, -1):
        j = int(rng.random() * (i + 1))
        items[i], items[j] = items[j], items[i]
    return items


def select(entries: Sequence[ScoredPair], cfg: SelectionConfig) -> list[ScoredPair]:
    """Keep the rho% slice per strategy; result is in ascending pair id.

    Ties on the total are broken by ascending pair id, which also makes
    keep_low/keep_high nested families as rho grows.
    """
    if not entries:
        raise EmptyInputError("no scored pairs to select from")
    k = retention_count(len(entries), cfg.rho)
    if cfg.strategy == STRATEGY_KEEP_LOW:
        ranked = sorted(entries, key=lambda e: (e.total, e.pair_id))
    elif cfg.strategy == STRATEGY_KEEP_HIGH:
        ranked = sorted(entries, key=lambda e: (-e.total, e.pair_id))
    else:
        ranked = _shuffled_ids(entries, cfg.rng_seed or 0)
    return sorted(ranked[:k], key=lambda e: e.pair_id)


def partition_halves(entries: Sequence[ScoredPair]) -> tuple[list[ScoredPair], list[ScoredPair]]:
    """Median split by total with the keep_low tie rule; the lowest half
    takes the extra element when the count is odd."""
    if len(entries) < 2:
        raise EmptyInputError("need at least two scored pairs to partition")
    ranked = sorted(entries, key=lambda e: (e.total, e.pair_id))
    cut = (len(ranked) + 1) // 2
    lowest = sorted(ranked[:cut], key=lambda e: e.pair_id)
    highest = sorted(ranked[cut:], key=lambda e: e.pair_id)
    return lowest, highest
