"""Offline test/demo corpus: deterministic seeds, transcripts, and images.

Everything here is reproducible byte-for-byte from the corpus root path,
so pipeline runs over a corpus can be compared across processes.  The
module doubles as a CLI: ``python -m chartcf.testing DIR [--n 100]``.
"""

from __future__ import annotations

import json
import struct
import sys
import zlib
from dataclasses import dataclass, field
from pathlib import Path

OUTCOME_OK = "ok"
OUTCOME_INFEASIBLE = "infeasible"
OUTCOME_PARSE_THEN_OK = "parse_then_ok"
OUTCOME_RENDER_THEN_OK = "render_then_ok"
OUTCOME_RENDER_FAIL_3X = "render_fail_3x"
OUTCOME_PARSE_FAIL_3X = "parse_fail_3x"
OUTCOME_OK_AT_3 = "ok_at_3"

ALL_OUTCOMES = (
    OUTCOME_OK,
    OUTCOME_INFEASIBLE,
    OUTCOME_PARSE_THEN_OK,
    OUTCOME_RENDER_THEN_OK,
    OUTCOME_RENDER_FAIL_3X,
    OUTCOME_PARSE_FAIL_3X,
    OUTCOME_OK_AT_3,
)


def make_png(width: int = 4, height: int = 4, rgb: tuple[int, int, int] = (200, 40, 40)) -> bytes:
    """A minimal valid RGB PNG with deterministic bytes."""

    def chunk(tag: bytes, data: bytes) -> bytes:
        return (
            struct.pack(">I", len(data))
            + tag
            + data
            + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)
        )

    header = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    row = b"\x00" + bytes(rgb) * width
    body = zlib.compress(row * height, level=9)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", header) + chunk(b"IDAT", body) + chunk(b"IEND", b"")


def scripted_outcome(index: int) -> str:
    """Per-sample outcome schedule for the standard 100-sample corpus."""
    if index == 0:
        return OUTCOME_INFEASIBLE
    if index in (1, 2):
        return OUTCOME_PARSE_THEN_OK
    if 3 <= index <= 10:
        return OUTCOME_RENDER_THEN_OK
    if index == 11:
        return OUTCOME_RENDER_FAIL_3X
    return OUTCOME_OK


def scripted_total(index: int) -> int:
    """Deterministic judge total for sample `index`, in [60, 100]."""
    return 60 + (index * 7) % 41


def _subscores(total: int) -> list[int]:
    base, rem = divmod(total, 5)
    return [base + (1 if i < rem else 0) for i in range(5)]


_CODE_TEMPLATE = """\
import matplotlib.pyplot as plt
import random


def set_random_seed(seed):
    random.seed(seed)


set_random_seed(42)

labels = ["A", "B", "C"]
values = [{a}, {b}, 5.0]
fig, ax = plt.subplots(figsize=(4, 3))
ax.bar(labels, values, color="#4477aa")
ax.set_title("{title}")
fig.savefig("rendered_images/{sid}.png")
"""

_CRITERIA = ("Chart Types", "Layout", "Text Content", "Data", "Style")


def _judge_reply(total: int) -> str:
    subs = _subscores(total)
    lines = ["---", "", "Comments:"]
    for name, sub in zip(_CRITERIA, subs):
        lines.append(f"- {name}: close match between the two images ({sub}/20)")
    lines += ["", f"Score: {total}", "", "---"]
    return "\n".join(lines)


def _modifier_reply(code: str, answer: str, reasoning: str | None) -> str:
    if reasoning is not None:
        new_answer = f"Reasoning Process: {reasoning}\nAnswer: {answer}"
    else:
        new_answer = answer
    return (
        "**Feasibility:**\nYES\n\n"
        "**Rationale of Modification:**\n"
        "Adjusting the single element responsible for the current answer.\n\n"
        "**Modified Code:**\n```python\n" + code + "\n```\n\n"
        "**New Answer:**\n" + new_answer + "\n"
    )


_INFEASIBLE_REPLY = (
    "**Feasibility:**\nNO\n\n"
    "**Rationale of Modification:**\n"
    "The question is not grounded in any code-controlled element.\n\n"
    "**Modified Code:**\n```python\nNone\n```\n\n"
    "**New Answer:**\nNone\n"
)


@dataclass
class MockCorpus:
    root: Path
    manifest: Path
    transcripts: Path
    n: int
    expected_report: dict = field(default_factory=dict)
    expected_outcomes: dict[str, tuple[str, int]] = field(default_factory=dict)


def build_mock_corpus(
    root: str | Path, n: int = 100, outcomes: list[str] | None = None
) -> MockCorpus:
    """Write a fully scripted corpus under `root` and return its layout.

    `outcomes` overrides the standard per-index schedule (one entry per
    sample).  The returned expected_report is computed here, straight from
    the schedule, independent of the pipeline being tested.
    """
    # Manifest and directive paths must be absolute; a relative root would
    # otherwise re-resolve against the manifest's own directory.
    root = Path(root).resolve()
    if outcomes is not None and len(outcomes) != n:
        raise ValueError(f"need {n} outcomes, got {len(outcomes)}")
    images = root / "seed_images"
    codes = root / "seed_code"
    prerendered = root / "prerendered"
    transcripts = root / "transcripts"
    for d in (images, codes, prerendered, transcripts):
        d.mkdir(parents=True, exist_ok=True)

    manifest = root / "manifest.jsonl"
    counts = {"infeasible": 0, "parse_failed_final": 0, "render_failed_final": 0,
              "validator_failed_final": 0, "succeeded": 0}
    histogram: dict[int, int] = {}
    expected: dict[str, tuple[str, int]] = {}

    with manifest.open("w") as mf:
        for i in range(n):
            sid = f"{i:06d}"
            reasoning_kind = i % 3 == 2
            outcome = outcomes[i] if outcomes is not None else scripted_outcome(i)

            (images / f"{sid}.png").write_bytes(
                make_png(rgb=(10 + i % 200, 40, 60))
            )
            (prerendered / f"{sid}.png").write_bytes(
                make_png(rgb=(10 + i % 200, 200, 90))
            )

            a, b = 3.0 + i % 4, 7.0 + i % 3
            title = f"Quarterly Output {i}"
            original = _CODE_TEMPLATE.format(a=a, b=b, sid=sid, title=title)
            (codes / f"{sid}.py").write_text(original)

            if reasoning_kind:
                question = "By how much is B larger than A?"
                reasoning = f"A is {a} and B is {b}. The difference is {b} - {a} = {round(b - a, 1)}."
                answer = str(round(b - a, 1))
                new_b = b + 4.0
                new_reasoning = (
                    f"A is {a} and B is {new_b}. The difference is {new_b} - {a} = {round(new_b - a, 1)}."
                )
                new_answer = str(round(new_b - a, 1))
                good_code = _CODE_TEMPLATE.format(a=a, b=new_b, sid=sid, title=title)
            else:
                question = "What is the title of the chart?"
                reasoning = None
                new_reasoning = None
                answer = f"The title of the chart is '{title}'."
                new_title = f"Annual Output {i}"
                new_answer = f"The title of the chart is '{new_title}'."
                good_code = _CODE_TEMPLATE.format(a=a, b=b, sid=sid, title=new_title)

            copy_src = prerendered / f"{sid}.png"
            good_code += f"# fixture-render: status=ok copy={copy_src}\n"
            # Unbalanced bracket: compile must fail, validator must still pass.
            broken_code = good_code.replace("values = [", "values = [ [", 1)
            failing_code = good_code.replace("status=ok", "status=runtime_error", 1)

            good = _modifier_reply(good_code, new_answer, new_reasoning)
            broken = _modifier_reply(broken_code, new_answer, new_reasoning)
            failing = _modifier_reply(failing_code, new_answer, new_reasoning)

            if outcome == OUTCOME_INFEASIBLE:
                replies = [{"status": 200, "text": _INFEASIBLE_REPLY}]
                counts["infeasible"] += 1
                attempts = 1
                expected[sid] = ("infeasible", attempts)
            elif outcome == OUTCOME_PARSE_THEN_OK:
                replies = [{"status": 200, "text": broken}, {"status": 200, "text": good}]
                counts["succeeded"] += 1
                attempts = 2
                expected[sid] = ("succeeded", attempts)
            elif outcome == OUTCOME_RENDER_THEN_OK:
                replies = [{"status": 200, "text": failing}, {"status": 200, "text": good}]
                counts["succeeded"] += 1
                attempts = 2
                expected[sid] = ("succeeded", attempts)
            elif outcome == OUTCOME_RENDER_FAIL_3X:
                replies = [{"status": 200, "text": failing}] * 3
                counts["render_failed_final"] += 1
                attempts = 3
                expected[sid] = ("render_failed_final", attempts)
            elif outcome == OUTCOME_PARSE_FAIL_3X:
                replies = [{"status": 200, "text": broken}] * 3
                counts["parse_failed_final"] += 1
                attempts = 3
                expected[sid] = ("parse_failed_final", attempts)
            elif outcome == OUTCOME_OK_AT_3:
                replies = [{"status": 200, "text": failing},
                           {"status": 200, "text": broken},
                           {"status": 200, "text": good}]
                counts["succeeded"] += 1
                attempts = 3
                expected[sid] = ("succeeded", attempts)
            else:
                replies = [{"status": 200, "text": good}]
                counts["succeeded"] += 1
                attempts = 1
                expected[sid] = ("succeeded", attempts)
            histogram[attempts] = histogram.get(attempts, 0) + 1

            (transcripts / f"{sid}.modify.json").write_text(
                json.dumps({"replies": replies})
            )
            (transcripts / f"{sid}.judge.json").write_text(
                json.dumps({"replies": [{"status": 200, "text": _judge_reply(scripted_total(i))}]})
            )

            record = {
                "id": sid,
                "image": str(images / f"{sid}.png"),
                "code_path": str(codes / f"{sid}.py"),
                "question": question,
                "answer": answer,
                "qa_type": "reasoning" if reasoning_kind else "descriptive",
            }
            if reasoning is not None:
                record["reasoning"] = reasoning
            mf.write(json.dumps(record) + "\n")

    expected_report = {"seeds": n, **counts, "retry_histogram": histogram}
    return MockCorpus(
        root=root,
        manifest=manifest,
        transcripts=transcripts,
        n=n,
        expected_report=expected_report,
        expected_outcomes=expected,
    )


def main(argv: list[str] | None = None) -> int:
    args = list(sys.argv[1:] if argv is None else argv)
    if not args or args[0] in ("-h", "--help"):
        print("usage: python -m chartcf.testing DIR [--n N]", file=sys.stderr)
        return 2
    target = args[0]
    n = 100
    if "--n" in args:
        n = int(args[args.index("--n") + 1])
    corpus = build_mock_corpus(target, n=n)
    print(f"wrote {corpus.n}-sample corpus under {corpus.root}")
    print(f"manifest: {corpus.manifest}")
    print(f"transcripts: {corpus.transcripts}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
