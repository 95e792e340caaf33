"""Per-seed synthesis lifecycle and corpus-level orchestration.

One sample flows modify -> validate -> parse -> render -> pair.  A
feasibility NO is terminal; every other failure triggers a fresh modifier
call, three calls total at most.  Corpus runs fan samples out over a
thread pool, checkpoint incrementally (pair JSONL plus a done-ids
sidecar), and always emit the final pair file sorted by seed id so output
bytes do not depend on completion order.
"""

from __future__ import annotations

import hashlib
import json
import shutil
import threading
import time
from concurrent.futures import FIRST_EXCEPTION, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    ChartCFError,
    InconsistentResponseError,
    MalformedReplyError,
    ManifestError,
    ParseError,
    PathMismatchError,
    TransientExhaustedError,
    WorkerDeadError,
)
from .modifier import ModifierClient
from .sandbox import STATUS_OK, STATUS_PARSE_ERROR, WorkerPool
from .validator import declared_save_paths, validate

MAX_ATTEMPTS = 3

STAGE_INFEASIBLE = "infeasible"
STAGE_MODIFY = "modify"
STAGE_VALIDATE = "validate"
STAGE_PARSE = "parse"
STAGE_RENDER = "render"

OUTCOME_SUCCEEDED = "succeeded"
OUTCOME_INFEASIBLE = "infeasible"
OUTCOME_PARSE_FAILED = "parse_failed_final"
OUTCOME_VALIDATOR_FAILED = "validator_failed_final"
OUTCOME_RENDER_FAILED = "render_failed_final"

# Modifier-reply problems (transport, malformed/unparseable replies) are
# counted in the parse bucket together with code parse failures; the two
# code-level buckets keep their own stages.
_STAGE_OUTCOME = {
    STAGE_INFEASIBLE: OUTCOME_INFEASIBLE,
    STAGE_MODIFY: OUTCOME_PARSE_FAILED,
    STAGE_PARSE: OUTCOME_PARSE_FAILED,
    STAGE_VALIDATE: OUTCOME_VALIDATOR_FAILED,
    STAGE_RENDER: OUTCOME_RENDER_FAILED,
}


@dataclass(frozen=True)
class SeedSample:
    id: str
    image: Path
    code: str
    question: str
    answer: str
    reasoning: str | None
    question_type: str


@dataclass(frozen=True)
class CounterfactualSample:
    image: str
    code: str
    answer: str
    reasoning: str | None


@dataclass(frozen=True)
class CounterfactualPair:
    seed: SeedSample
    counterfactual: CounterfactualSample
    similarity: dict | None
    attempts: int
    provenance: dict


@dataclass(frozen=True)
class FailureRecord:
    seed_id: str
    stage: str
    reason: str
    attempts: int


@dataclass(frozen=True)
class PipelineReport:
    seeds: int
    infeasible: int
    parse_failed_final: int
    render_failed_final: int
    validator_failed_final: int
    succeeded: int
    retry_histogram: dict[int, int]

    def closed(self) -> bool:
        return (
            self.infeasible
            + self.parse_failed_final
            + self.render_failed_final
            + self.validator_failed_final
            + self.succeeded
            == self.seeds
        )

    def to_json(self) -> dict:
        return {
            "seeds": self.seeds,
            "infeasible": self.infeasible,
            "parse_failed_final": self.parse_failed_final,
            "render_failed_final": self.render_failed_final,
            "validator_failed_final": self.validator_failed_final,
            "succeeded": self.succeeded,
            "retry_histogram": {str(k): self.retry_histogram[k] for k in sorted(self.retry_histogram)},
        }

    @staticmethod
    def from_json(data: dict) -> "PipelineReport":
        return PipelineReport(
            seeds=data["seeds"],
            infeasible=data["infeasible"],
            parse_failed_final=data["parse_failed_final"],
            render_failed_final=data["render_failed_final"],
            validator_failed_final=data["validator_failed_final"],
            succeeded=data["succeeded"],
            retry_histogram={int(k): v for k, v in data["retry_histogram"].items()},
        )


def load_manifest(path: str | Path) -> list[SeedSample]:
    """Read the seed manifest JSONL, resolving paths against its directory."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent
    seeds: list[SeedSample] = []
    seen: set[str] = set()
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: bad JSON ({exc})") from exc
        try:
            sid = row["id"]
            image = (base / row["image"]).resolve() if not Path(row["image"]).is_absolute() else Path(row["image"])
            code_path = Path(row["code_path"])
            if not code_path.is_absolute():
                code_path = (base / code_path).resolve()
            seed = SeedSample(
                id=sid,
                image=image,
                code=code_path.read_text(),
                question=row["question"],
                answer=row["answer"],
                reasoning=row.get("reasoning"),
                question_type=row["qa_type"],
            )
        except KeyError as exc:
            raise ManifestError(f"{path}:{lineno}: missing field {exc}") from exc
        except OSError as exc:
            raise ManifestError(f"{path}:{lineno}: unreadable code file ({exc})") from exc
        if seed.id in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate id {seed.id}")
        seen.add(seed.id)
        if not seed.image.is_file():
            raise ManifestError(f"{path}:{lineno}: image not found: {seed.image}")
        if seed.question_type not in ("descriptive", "reasoning"):
            raise ManifestError(f"{path}:{lineno}: bad qa_type {seed.question_type!r}")
        if seed.question_type == "reasoning" and not seed.reasoning:
            raise ManifestError(f"{path}:{lineno}: reasoning sample without reasoning text")
        seeds.append(seed)
    return seeds


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def pair_to_json(pair: CounterfactualPair) -> dict:
    seed = pair.seed
    cf = pair.counterfactual
    return {
        "id": seed.id,
        "seed": {
            "id": seed.id,
            "image": str(seed.image),
            "code": seed.code,
            "question": seed.question,
            "answer": seed.answer,
            "reasoning": seed.reasoning,
            "qa_type": seed.question_type,
        },
        "counterfactual": {
            "image": cf.image,
            "code": cf.code,
            "answer": cf.answer,
            "reasoning": cf.reasoning,
        },
        "similarity": pair.similarity,
        "attempts": pair.attempts,
        "provenance": pair.provenance,
    }


def pair_from_json(row: dict) -> CounterfactualPair:
    seed = row["seed"]
    cf = row["counterfactual"]
    return CounterfactualPair(
        seed=SeedSample(
            id=seed["id"],
            image=Path(seed["image"]),
            code=seed["code"],
            question=seed["question"],
            answer=seed["answer"],
            reasoning=seed.get("reasoning"),
            question_type=seed["qa_type"],
        ),
        counterfactual=CounterfactualSample(
            image=cf["image"], code=cf["code"], answer=cf["answer"], reasoning=cf.get("reasoning")
        ),
        similarity=row.get("similarity"),
        attempts=row["attempts"],
        provenance=row.get("provenance", {}),
    )


def load_pairs(path: str | Path) -> list[CounterfactualPair]:
    pairs = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            pairs.append(pair_from_json(json.loads(line)))
    return pairs


class _AttemptFailure(ChartCFError):
    def __init__(self, stage: str, reason: str):
        super().__init__(f"{stage}: {reason}")
        self.stage = stage
        self.reason = reason


class SynthesisRunner:
    """Owns one corpus run: clients, worker pool, output layout, accounting."""

    def __init__(
        self,
        modifier: ModifierClient,
        pool: WorkerPool,
        out_dir: str | Path,
        clock=time.time,
        max_attempts: int = MAX_ATTEMPTS,
    ):
        self.modifier = modifier
        self.pool = pool
        self.out_dir = Path(out_dir)
        self.images_dir = self.out_dir / "images"
        self.clock = clock
        self.max_attempts = max_attempts
        self._sink_lock = threading.Lock()

    # -- single-sample lifecycle -------------------------------------------

    def run_sample(self, seed: SeedSample) -> CounterfactualPair | FailureRecord:
        """Drive one seed to a pair, an infeasible verdict, or a failure."""
        last: _AttemptFailure | None = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                return self._attempt(seed, attempt)
            except _Infeasible as verdict:
                return FailureRecord(seed.id, STAGE_INFEASIBLE, verdict.reason, attempt)
            except _AttemptFailure as failure:
                last = failure
        assert last is not None
        return FailureRecord(seed.id, last.stage, last.reason, self.max_attempts)

    def _attempt(self, seed: SeedSample, attempt: int) -> CounterfactualPair:
        tag = f"{seed.id}/modify"
        image_bytes = seed.image.read_bytes()
        try:
            response, usage = self.modifier.modify(seed, image_bytes, tag)
        except (TransientExhaustedError, MalformedReplyError,
                ParseError, InconsistentResponseError) as exc:
            raise _AttemptFailure(STAGE_MODIFY, str(exc)) from exc

        if not response.feasible:
            raise _Infeasible(response.rationale or "modifier deemed the task infeasible")

        code = response.modified_code
        assert code is not None and response.new_answer is not None

        verdict = validate(seed.code, code)
        if not verdict.ok:
            names = ",".join(v.value for v in verdict.violations)
            raise _AttemptFailure(STAGE_VALIDATE, names)
        if response.new_answer.strip() == seed.answer.strip():
            raise _AttemptFailure(STAGE_VALIDATE, "answer_unchanged")

        parsed = self.pool.parse_only(code)
        if parsed.status == STATUS_PARSE_ERROR:
            raise _AttemptFailure(STAGE_PARSE, parsed.stderr_excerpt or "parse error")
        if parsed.status != STATUS_OK:
            raise _AttemptFailure(STAGE_PARSE, f"parse_only status {parsed.status}")

        expected = declared_save_paths(seed.code)[0]
        try:
            rendered = self.pool.render(code, expected)
        except PathMismatchError as exc:
            raise _AttemptFailure(STAGE_RENDER, f"path_mismatch: {exc}") from exc
        except WorkerDeadError as exc:
            raise _AttemptFailure(STAGE_RENDER, f"worker_died: {exc}") from exc
        if rendered.status != STATUS_OK:
            raise _AttemptFailure(STAGE_RENDER, rendered.status)

        rendered_path = Path(rendered.image_path)
        if _sha256_file(rendered_path) == _sha256_file(seed.image):
            # Pixel-identical output cannot be visually noticeable; demote.
            self.pool.cleanup_render(rendered)
            raise _AttemptFailure(STAGE_VALIDATE, "image_identical")

        self.images_dir.mkdir(parents=True, exist_ok=True)
        dest = self.images_dir / f"{seed.id}_cf.png"
        shutil.copyfile(rendered_path, dest)
        self.pool.cleanup_render(rendered)

        provenance = {
            "model_id": self.modifier.chat.cfg.model_id,
            "created_at": self.clock(),
            "response_sha256": hashlib.sha256(response.raw.encode()).hexdigest(),
        }
        if usage is not None:
            provenance["usage"] = usage
        return CounterfactualPair(
            seed=seed,
            counterfactual=CounterfactualSample(
                image=str(dest.relative_to(self.out_dir)),
                code=code,
                answer=response.new_answer,
                reasoning=response.new_reasoning,
            ),
            similarity=None,
            attempts=attempt,
            provenance=provenance,
        )

    # -- corpus orchestration ------------------------------------------------

    def run_corpus(
        self, seeds: list[SeedSample], concurrency: int = 1, resume: bool = False
    ) -> tuple[list[CounterfactualPair], PipelineReport]:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        pairs_path = self.out_dir / "pairs.jsonl"
        failures_path = self.out_dir / "failures.jsonl"
        sidecar_path = self.out_dir / "done_ids.jsonl"

        done: dict[str, dict] = {}
        if resume and sidecar_path.exists():
            for line in sidecar_path.read_text().splitlines():
                if line.strip():
                    row = json.loads(line)
                    done[row["id"]] = row
        elif not resume:
            for stale in (pairs_path, failures_path, sidecar_path):
                stale.unlink(missing_ok=True)

        todo = [s for s in seeds if s.id not in done]

        def process(seed: SeedSample) -> None:
            outcome = self.run_sample(seed)
            with self._sink_lock:
                if isinstance(outcome, CounterfactualPair):
                    _append_json(pairs_path, pair_to_json(outcome))
                    bucket = OUTCOME_SUCCEEDED
                else:
                    bucket = _STAGE_OUTCOME[outcome.stage]
                    _append_json(
                        failures_path,
                        {"id": seed.id, "stage": outcome.stage, "reason": outcome.reason,
                         "attempts": outcome.attempts, "outcome": bucket},
                    )
                row = {"id": seed.id, "outcome": bucket, "attempts": outcome.attempts}
                _append_json(sidecar_path, row)
                done[seed.id] = row

        if concurrency <= 1:
            for seed in todo:
                process(seed)
        else:
            with ThreadPoolExecutor(max_workers=concurrency) as executor:
                futures: list[Future] = [executor.submit(process, s) for s in todo]
                finished, pending = wait(futures, return_when=FIRST_EXCEPTION)
                for future in pending:
                    future.cancel()
                for future in finished:
                    future.result()  # re-raise the first fatal error

        report = self._build_report(seeds, done)
        # Dedupe by id (a resume can re-append a pair whose sidecar write
        # was interrupted), then fix the output order regardless of
        # completion order.
        by_id = {p.seed.id: p for p in (load_pairs(pairs_path) if pairs_path.exists() else [])}
        pairs = [by_id[sid] for sid in sorted(by_id)]
        _rewrite_sorted(pairs_path, [pair_to_json(p) for p in pairs])
        if failures_path.exists():
            rows = [json.loads(l) for l in failures_path.read_text().splitlines() if l.strip()]
            fail_by_id = {r["id"]: r for r in rows}
            _rewrite_sorted(failures_path, [fail_by_id[i] for i in sorted(fail_by_id)])
        (self.out_dir / "report.json").write_text(json.dumps(report.to_json(), indent=2) + "\n")
        return pairs, report

    def _build_report(self, seeds: list[SeedSample], done: dict[str, dict]) -> PipelineReport:
        counts = {
            OUTCOME_INFEASIBLE: 0,
            OUTCOME_PARSE_FAILED: 0,
            OUTCOME_RENDER_FAILED: 0,
            OUTCOME_VALIDATOR_FAILED: 0,
            OUTCOME_SUCCEEDED: 0,
        }
        histogram: dict[int, int] = {}
        for seed in seeds:
            row = done.get(seed.id)
            if row is None:
                continue
            counts[row["outcome"]] += 1
            histogram[row["attempts"]] = histogram.get(row["attempts"], 0) + 1
        return PipelineReport(
            seeds=len(seeds),
            infeasible=counts[OUTCOME_INFEASIBLE],
            parse_failed_final=counts[OUTCOME_PARSE_FAILED],
            render_failed_final=counts[OUTCOME_RENDER_FAILED],
            validator_failed_final=counts[OUTCOME_VALIDATOR_FAILED],
            succeeded=counts[OUTCOME_SUCCEEDED],
            retry_histogram=histogram,
        )


class _Infeasible(ChartCFError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def _append_json(path: Path, row: dict) -> None:
    with path.open("a") as fh:
        fh.write(json.dumps(row) + "\n")


def _rewrite_sorted(path: Path, rows: list[dict]) -> None:
    tmp = path.with_suffix(".tmp")
    with tmp.open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    tmp.replace(path)
