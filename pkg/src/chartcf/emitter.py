"""Materialize selected pairs into text-preference and image-preference records.

Default emission is asymmetric and anchored on the original sample: the
text record prefers the original answer over the counterfactual answer
given the original image, and the image record prefers the original image
over the counterfactual image given the original answer.  Symmetric mode
additionally mirrors each record with the counterfactual side preferred,
for symmetric-loss experiments.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import FormattingError, MissingImageError
from .pipeline import CounterfactualPair

MODE_TEXT = "text"
MODE_IMAGE = "image"
MODE_BOTH = "both"
MODES = (MODE_TEXT, MODE_IMAGE, MODE_BOTH)

TEXT_RECORDS_FILENAME = "text_dpo.jsonl"
IMAGE_RECORDS_FILENAME = "image_dpo.jsonl"


@dataclass(frozen=True)
class EmitResult:
    text_path: Path | None
    image_path: Path | None
    text_records: int
    image_records: int


def format_response(answer: str, reasoning: str | None, question_type: str, pair_id: str) -> str:
    """Render one side's response text; reasoning pairs keep the two-field
    layout verbatim as parsed from the modifier."""
    if question_type == "reasoning":
        if not reasoning:
            raise FormattingError(f"pair {pair_id}: reasoning question without reasoning text")
        return f"Reasoning Process: {reasoning}\nAnswer: {answer}"
    return answer


def _resolve(path_str: str, base: Path) -> Path:
    path = Path(path_str)
    return path if path.is_absolute() else base / path


def _require_image(path: Path, pair_id: str) -> Path:
    if not path.is_file():
        raise MissingImageError(f"pair {pair_id}: image not found: {path}")
    return path


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def build_records(
    pair: CounterfactualPair, base: Path, symmetric: bool
) -> tuple[list[dict], list[dict]]:
    """Text and image record dicts for one pair, invariants enforced."""
    pid = pair.seed.id
    original = _require_image(_resolve(str(pair.seed.image), base), pid)
    counterfactual = _require_image(_resolve(pair.counterfactual.image, base), pid)
    if _digest(original) == _digest(counterfactual):
        raise FormattingError(f"pair {pid}: original and counterfactual images are pixel-identical")

    chosen = format_response(pair.seed.answer, pair.seed.reasoning, pair.seed.question_type, pid)
    rejected = format_response(
        pair.counterfactual.answer, pair.counterfactual.reasoning, pair.seed.question_type, pid
    )
    if chosen == rejected:
        raise FormattingError(f"pair {pid}: chosen and rejected responses are identical")

    text_records = [{
        "pair_id": pid,
        "image": str(original),
        "question": pair.seed.question,
        "chosen": chosen,
        "rejected": rejected,
    }]
    image_records = [{
        "pair_id": pid,
        "chosen_image": str(original),
        "rejected_image": str(counterfactual),
        "question": pair.seed.question,
        "response": chosen,
    }]
    if symmetric:
        text_records.append({
            "pair_id": pid,
            "image": str(counterfactual),
            "question": pair.seed.question,
            "chosen": rejected,
            "rejected": chosen,
        })
        image_records.append({
            "pair_id": pid,
            "chosen_image": str(counterfactual),
            "rejected_image": str(original),
            "question": pair.seed.question,
            "response": rejected,
        })
    return text_records, image_records


def emit(
    pairs: Iterable[CounterfactualPair],
    mode: str,
    symmetric: bool,
    out_dir: str | Path,
    pairs_base: str | Path = ".",
) -> EmitResult:
    """Write the record files for `pairs` under `out_dir`.

    `pairs_base` anchors relative image paths (normally the directory of
    the pairs JSONL the pairs were loaded from).
    """
    if mode not in MODES:
        raise FormattingError(f"unknown emit mode {mode!r}; pick one of {MODES}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = Path(pairs_base)

    text_rows: list[dict] = []
    image_rows: list[dict] = []
    for pair in sorted(pairs, key=lambda p: p.seed.id):
        text, image = build_records(pair, base, symmetric)
        text_rows.extend(text)
        image_rows.extend(image)

    text_path = image_path = None
    if mode in (MODE_TEXT, MODE_BOTH):
        text_path = out_dir / TEXT_RECORDS_FILENAME
        _write_jsonl(text_path, text_rows)
    if mode in (MODE_IMAGE, MODE_BOTH):
        image_path = out_dir / IMAGE_RECORDS_FILENAME
        _write_jsonl(image_path, image_rows)
    return EmitResult(
        text_path=text_path,
        image_path=image_path,
        text_records=len(text_rows) if text_path else 0,
        image_records=len(image_rows) if image_path else 0,
    )


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    with path.open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
