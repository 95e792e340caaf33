"""Command-line entry point wiring synthesize -> score -> select -> emit,
plus the loss checker and report rendering.

Exit codes: 0 success, 1 data errors, 2 usage errors.  Every subcommand
reads and writes only the documented JSONL formats.  `--transport mock:DIR`
replays canned transcripts so the whole flow runs without API keys; the
render stage then uses the bundled fixture worker.
"""

from __future__ import annotations

import json
import shlex
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import click

from . import dpo
from .config import parse_config_file
from .emitter import MODES, emit as emit_records
from .errors import ChartCFError, ConfigError, JudgeParseError
from .modifier import ModifierClient
from .pipeline import SynthesisRunner, load_manifest, load_pairs
from .prompts import KIND_DISTRACTOR, PromptTemplate
from .report import (
    format_report,
    load_report,
    render_report_figures,
    render_score_histogram,
)
from .sandbox import WorkerPool
from .similarity import (
    STRATEGIES,
    JudgeClient,
    ScoredPair,
    SelectionConfig,
    SimilarityScore,
    select as select_pairs,
)
from .transport import ApiConfig, ChatClient, HttpTransport, MockTransport

FIXTURE_WORKER_CMD = [sys.executable, "-m", "chartcf.fixture_worker"]
REAL_WORKER_CMD = [sys.executable, "-m", "chartcf_worker"]


def _fail(exc: Exception) -> "click.ClickException":
    return click.ClickException(str(exc))


def _config_value(ctx: click.Context, key: str, flag_value, default=None):
    if flag_value is not None:
        return flag_value
    return (ctx.obj or {}).get(key, default)


def _build_transport(spec: str, cfg: ApiConfig):
    if spec == "http":
        return HttpTransport(cfg)
    if spec.startswith("mock:"):
        return MockTransport(spec.split(":", 1)[1])
    raise ConfigError(f"unknown transport {spec!r}; use 'http' or 'mock:DIR'")


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Flat key=value config file; flags override it.")
@click.pass_context
def main(ctx: click.Context, config_path: str | None) -> None:
    """Counterfactual chart-pair synthesis and preference-data tooling."""
    try:
        ctx.obj = parse_config_file(config_path) if config_path else {}
    except ChartCFError as exc:
        raise _fail(exc)


@main.command()
@click.option("--manifest", type=click.Path(), default=None, help="Seed manifest JSONL.")
@click.option("--out", "out_dir", type=click.Path(), default=None, help="Output directory.")
@click.option("--transport", "transport_spec", default=None,
              help="'http' (default) or 'mock:DIR' transcript replay.")
@click.option("--modifier-model", default=None, help="Code-modifier model id.")
@click.option("--concurrency", type=int, default=None, help="Samples in flight.")
@click.option("--workers", type=int, default=None, help="Render worker pool size.")
@click.option("--worker-cmd", default=None, help="Render worker command line.")
@click.option("--max-retries", type=int, default=None)
@click.option("--requests-per-minute", type=float, default=None)
@click.option("--distractor-template", type=click.Path(exists=True), default=None,
              help="Template body file enabling distractor mode.")
@click.option("--resume", is_flag=True, help="Skip seeds recorded in the done-ids sidecar.")
@click.option("--dry-run", is_flag=True, help="Validate inputs; no network, no writes.")
@click.pass_context
def synthesize(ctx, manifest, out_dir, transport_spec, modifier_model, concurrency,
               workers, worker_cmd, max_retries, requests_per_minute,
               distractor_template, resume, dry_run):
    """Run the modify/validate/parse/render pipeline over a seed manifest."""
    conf = ctx.obj or {}
    manifest = _config_value(ctx, "manifest", manifest)
    out_dir = _config_value(ctx, "out_dir", out_dir)
    transport_spec = _config_value(ctx, "transport", transport_spec, "http")
    if not manifest or not out_dir:
        raise click.UsageError("--manifest and --out are required (flag or config)")
    try:
        seeds = load_manifest(manifest)
        cfg = ApiConfig(
            model_id=modifier_model or conf.get("modifier_model", "gpt-5-2025-08-07"),
            base_url=conf.get("base_url", ""),
            api_key_env=conf.get("api_key_env", "CHARTCF_API_KEY"),
            max_retries=int(_config_value(ctx, "max_retries", max_retries, 3)),
            requests_per_minute=float(
                _config_value(ctx, "requests_per_minute", requests_per_minute, 0.0)
            ),
        )
        distractor = None
        if distractor_template:
            distractor = PromptTemplate(KIND_DISTRACTOR, Path(distractor_template).read_text())
        if dry_run:
            click.echo(f"dry-run: {len(seeds)} seeds from {manifest}, "
                       f"transport={transport_spec}, out={out_dir}")
            return
        transport = _build_transport(transport_spec, cfg)
        mock_mode = transport_spec.startswith("mock:")
        cmd = shlex.split(worker_cmd or conf.get("worker_cmd", "")) or (
            FIXTURE_WORKER_CMD if mock_mode else REAL_WORKER_CMD
        )
        chat = ChatClient(cfg, transport)
        modifier = ModifierClient(chat, distractor_template=distractor,
                                  distractor_mode=distractor is not None)
        pool = WorkerPool(cmd, size=workers or (int(conf["workers"]) if "workers" in conf else None))
        runner = SynthesisRunner(
            modifier, pool, out_dir,
            clock=(lambda: 0.0) if mock_mode else time.time,
        )
        try:
            pairs, report = runner.run_corpus(
                seeds,
                concurrency=int(_config_value(ctx, "concurrency", concurrency, 1)),
                resume=resume,
            )
        finally:
            pool.shutdown()
    except ChartCFError as exc:
        raise _fail(exc)
    click.echo(format_report(report))
    click.echo(f"pairs: {Path(out_dir) / 'pairs.jsonl'} ({len(pairs)} records)")


@main.command()
@click.option("--pairs", "pairs_path", type=click.Path(), required=True,
              help="Pair dataset JSONL from synthesize.")
@click.option("--judge-model", default=None, help="Similarity judge model id.")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Scored-pair JSONL (default: scores.jsonl next to the pairs).")
@click.option("--transport", "transport_spec", default=None)
@click.option("--concurrency", type=int, default=None)
@click.option("--dry-run", is_flag=True)
@click.pass_context
def score(ctx, pairs_path, judge_model, out_path, transport_spec, concurrency, dry_run):
    """Judge visual similarity for every pair; unscored pairs are marked."""
    conf = ctx.obj or {}
    transport_spec = _config_value(ctx, "transport", transport_spec, "http")
    out_path = Path(out_path) if out_path else Path(pairs_path).parent / "scores.jsonl"
    try:
        pairs = load_pairs(pairs_path)
        cfg = ApiConfig(
            model_id=judge_model or conf.get("judge_model", "gpt-5-mini"),
            base_url=conf.get("base_url", ""),
            api_key_env=conf.get("api_key_env", "CHARTCF_API_KEY"),
        )
        if dry_run:
            click.echo(f"dry-run: would score {len(pairs)} pairs with {cfg.model_id}")
            return
        judge = JudgeClient(ChatClient(cfg, _build_transport(transport_spec, cfg)))
        base = Path(pairs_path).parent

        done: set[str] = set()
        if out_path.exists():
            for line in out_path.read_text().splitlines():
                if line.strip():
                    done.add(json.loads(line)["pair_id"])

        def score_one(pair) -> dict:
            original = pair.seed.image
            modified = Path(pair.counterfactual.image)
            if not modified.is_absolute():
                modified = base / modified
            try:
                result = judge.score_pair(pair.seed.id, original, modified)
                return {"pair_id": pair.seed.id, "similarity": result.to_json()}
            except JudgeParseError as exc:
                return {"pair_id": pair.seed.id, "unscored": True, "error": str(exc)}

        todo = [p for p in pairs if p.seed.id not in done]
        n_threads = int(_config_value(ctx, "concurrency", concurrency, 1))
        if n_threads > 1:
            with ThreadPoolExecutor(max_workers=n_threads) as pool:
                rows = list(pool.map(score_one, todo))
        else:
            rows = [score_one(p) for p in todo]
        with out_path.open("a") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
        all_rows = [json.loads(l) for l in out_path.read_text().splitlines() if l.strip()]
        all_rows.sort(key=lambda r: r["pair_id"])
        with out_path.open("w") as fh:
            for row in all_rows:
                fh.write(json.dumps(row) + "\n")
    except ChartCFError as exc:
        raise _fail(exc)
    unscored = sum(1 for r in all_rows if r.get("unscored"))
    click.echo(f"scored {len(all_rows) - unscored}/{len(all_rows)} pairs -> {out_path}")


def load_score_index(path: str | Path) -> list[ScoredPair]:
    """Scored-pair JSONL -> entries; unscored pairs are excluded."""
    entries = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        if row.get("unscored"):
            continue
        sim = row["similarity"]
        entries.append(ScoredPair(
            pair_id=row["pair_id"],
            total=sim["total"],
            score=SimilarityScore(raw="", **sim),
        ))
    return entries


@main.command("select")
@click.option("--scores", "scores_path", type=click.Path(exists=True), required=True,
              help="Scored-pair JSONL from score.")
@click.option("--strategy", type=click.Choice(STRATEGIES), default="keep_low")
@click.option("--rho", type=float, required=True, help="Retention percentage in (0, 100].")
@click.option("--rng-seed", type=int, default=None, help="Seed for the random strategy.")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Selected ids JSONL (default: selected.jsonl next to the scores).")
@click.pass_context
def select_cmd(ctx, scores_path, strategy, rho, rng_seed, out_path):
    """Keep the rho% slice of scored pairs per the chosen strategy."""
    out_path = Path(out_path) if out_path else Path(scores_path).parent / "selected.jsonl"
    try:
        entries = load_score_index(scores_path)
        chosen = select_pairs(entries, SelectionConfig(strategy=strategy, rho=rho, rng_seed=rng_seed))
    except ChartCFError as exc:
        raise _fail(exc)
    with out_path.open("w") as fh:
        for entry in chosen:
            fh.write(json.dumps({"pair_id": entry.pair_id, "total": entry.total}) + "\n")
    click.echo(f"selected {len(chosen)}/{len(entries)} pairs -> {out_path}")


@main.command("emit")
@click.option("--pairs", "pairs_path", type=click.Path(exists=True), required=True)
@click.option("--ids", "ids_path", type=click.Path(exists=True), default=None,
              help="Selected-ids JSONL; emits only those pairs.")
@click.option("--mode", type=click.Choice(MODES), default="both")
@click.option("--symmetric", type=bool, default=False,
              help="Also emit counterfactual-anchored mirror records.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--dry-run", is_flag=True)
def emit_cmd(pairs_path, ids_path, mode, symmetric, out_dir, dry_run):
    """Write text/image preference record files for (selected) pairs."""
    try:
        pairs = load_pairs(pairs_path)
        if ids_path:
            keep = {
                json.loads(line)["pair_id"]
                for line in Path(ids_path).read_text().splitlines()
                if line.strip()
            }
            pairs = [p for p in pairs if p.seed.id in keep]
        if dry_run:
            per_pair = 2 if symmetric else 1
            click.echo(f"dry-run: would emit {len(pairs) * per_pair} records per file "
                       f"for {len(pairs)} pairs (mode={mode})")
            return
        result = emit_records(pairs, mode=mode, symmetric=symmetric, out_dir=out_dir,
                              pairs_base=Path(pairs_path).parent)
    except ChartCFError as exc:
        raise _fail(exc)
    if result.text_path:
        click.echo(f"text records:  {result.text_path} ({result.text_records})")
    if result.image_path:
        click.echo(f"image records: {result.image_path} ({result.image_records})")


@main.command("loss-check")
@click.option("--inputs", "inputs_path", type=click.Path(exists=True), default=None,
              help="LossInput JSONL (default: the bundled verification vectors).")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Loss/gradient JSONL (default: stdout).")
@click.option("--tolerance", type=float, default=1e-6, show_default=True)
@click.option("--h", "step", type=float, default=1e-5, show_default=True)
@click.option("--beta", type=float, default=dpo.DEFAULT_BETA, show_default=True,
              help="Temperature for records that do not carry one.")
def loss_check(inputs_path, out_path, tolerance, step, beta):
    """Evaluate loss/gradient rows and finite-difference-check each one."""
    if inputs_path is None:
        text = resources.files("chartcf").joinpath("data/loss_check_vectors.jsonl").read_text()
    else:
        text = Path(inputs_path).read_text()
    rows_out: list[dict] = []
    worst = 0.0
    try:
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            row = json.loads(line)
            inp = dpo.LossInput(
                lp_policy_chosen=row["lp_policy_chosen"],
                lp_ref_chosen=row["lp_ref_chosen"],
                lp_policy_rejected=row["lp_policy_rejected"],
                lp_ref_rejected=row["lp_ref_rejected"],
                beta=row.get("beta", beta),
            )
            out = dpo.dpo_loss(inp)
            fd_error = dpo.finite_diff_check(inp, h=step)
            worst = max(worst, fd_error)
            rows_out.append({
                "line": lineno,
                "loss": out.loss,
                "margin": out.margin,
                "gradient": list(out.gradient),
                "fd_error": fd_error,
            })
    except ChartCFError as exc:
        raise _fail(exc)
    payload = "\n".join(json.dumps(r) for r in rows_out) + "\n"
    if out_path:
        Path(out_path).write_text(payload)
    else:
        click.echo(payload, nl=False)
    if worst > tolerance:
        raise click.ClickException(
            f"finite-difference check failed: max error {worst:.3e} > {tolerance:.3e}"
        )
    click.echo(f"checked {len(rows_out)} records, max finite-difference error {worst:.3e}",
               err=True)


@main.command("report")
@click.option("--report", "report_path", type=click.Path(exists=True), required=True)
@click.option("--figures", "figures_dir", type=click.Path(), default=None,
              help="Also render report figures into this directory.")
@click.option("--scores", "scores_path", type=click.Path(exists=True), default=None,
              help="Scored-pair JSONL for a similarity-distribution figure.")
@click.option("--json", "as_json", is_flag=True, help="Print the raw JSON document.")
def report_cmd(report_path, figures_dir, scores_path, as_json):
    """Pretty-print a pipeline report; optionally render figures."""
    try:
        report = load_report(report_path)
    except (ChartCFError, KeyError, ValueError) as exc:
        raise _fail(exc)
    if as_json:
        click.echo(json.dumps(report.to_json(), indent=2))
    else:
        click.echo(format_report(report))
    if figures_dir:
        written = render_report_figures(report, figures_dir)
        if scores_path:
            written.append(render_score_histogram(load_score_index(scores_path), figures_dir))
        for path in written:
            click.echo(f"figure: {path}")


if __name__ == "__main__":
    main()
