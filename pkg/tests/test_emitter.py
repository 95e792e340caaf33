import json
import sys
from pathlib import Path

import pytest

from chartcf.emitter import build_records, emit, format_response
from chartcf.errors import FormattingError, MissingImageError
from chartcf.modifier import ModifierClient
from chartcf.pipeline import (
    CounterfactualPair,
    CounterfactualSample,
    SeedSample,
    SynthesisRunner,
)
from chartcf.sandbox import WorkerPool
from chartcf.testing import make_png
from chartcf.transport import ApiConfig, ChatClient, MockTransport

FIXTURE_CMD = [sys.executable, "-m", "chartcf.fixture_worker"]


@pytest.fixture(scope="module")
def emitted_pairs(mock_corpus, corpus_seeds, tmp_path_factory):
    out = tmp_path_factory.mktemp("emit-pairs")
    transport = MockTransport(mock_corpus.transcripts)
    chat = ChatClient(ApiConfig(model_id="m", backoff_base_s=0.0), transport)
    pool = WorkerPool(FIXTURE_CMD, size=2, scratch_root=out / "_scratch")
    runner = SynthesisRunner(ModifierClient(chat), pool, out, clock=lambda: 0.0)
    try:
        picks = [s for s in corpus_seeds if s.id in ("000012", "000013", "000014", "000015")]
        pairs, _ = runner.run_corpus(picks, concurrency=2)
    finally:
        pool.shutdown()
    return pairs, out


def test_asymmetric_both_cardinality(emitted_pairs, tmp_path):
    pairs, base = emitted_pairs
    result = emit(pairs, mode="both", symmetric=False, out_dir=tmp_path, pairs_base=base)
    assert result.text_records == 4
    assert result.image_records == 4
    text_rows = [json.loads(l) for l in result.text_path.read_text().splitlines()]
    image_rows = [json.loads(l) for l in result.image_path.read_text().splitlines()]
    assert len(text_rows) == len(image_rows) == 4
    assert set(text_rows[0]) == {"pair_id", "image", "question", "chosen", "rejected"}
    assert set(image_rows[0]) == {"pair_id", "chosen_image", "rejected_image", "question", "response"}


def test_symmetric_doubles_records(emitted_pairs, tmp_path):
    pairs, base = emitted_pairs
    result = emit(pairs, mode="both", symmetric=True, out_dir=tmp_path, pairs_base=base)
    assert result.text_records == 8
    assert result.image_records == 8


def test_cross_consistency_and_anchoring(emitted_pairs, tmp_path):
    pairs, base = emitted_pairs
    result = emit(pairs, mode="both", symmetric=False, out_dir=tmp_path, pairs_base=base)
    text_rows = {json.loads(l)["pair_id"]: json.loads(l) for l in result.text_path.read_text().splitlines()}
    image_rows = {json.loads(l)["pair_id"]: json.loads(l) for l in result.image_path.read_text().splitlines()}
    for pid, text in text_rows.items():
        image = image_rows[pid]
        assert image["response"] == text["chosen"]
        assert text["chosen"] != text["rejected"]
        assert image["chosen_image"] != image["rejected_image"]
        assert image["chosen_image"] == text["image"]  # original image anchors both
        assert Path(text["image"]).is_file()
        assert Path(image["rejected_image"]).is_file()


def test_reasoning_pairs_keep_two_field_format(emitted_pairs, tmp_path):
    pairs, base = emitted_pairs
    reasoning = [p for p in pairs if p.seed.question_type == "reasoning"]
    assert reasoning
    result = emit(reasoning, mode="text", symmetric=False, out_dir=tmp_path, pairs_base=base)
    rows = [json.loads(l) for l in result.text_path.read_text().splitlines()]
    for row in rows:
        assert row["chosen"].startswith("Reasoning Process: ")
        assert "\nAnswer: " in row["chosen"]
        assert row["rejected"].startswith("Reasoning Process: ")


def test_mode_text_only_writes_one_file(emitted_pairs, tmp_path):
    pairs, base = emitted_pairs
    result = emit(pairs, mode="text", symmetric=False, out_dir=tmp_path, pairs_base=base)
    assert result.text_path is not None and result.image_path is None
    assert result.image_records == 0


def test_format_response_requires_reasoning():
    assert format_response("42", None, "descriptive", "p") == "42"
    assert format_response("42", "first compute", "reasoning", "p") == (
        "Reasoning Process: first compute\nAnswer: 42"
    )
    with pytest.raises(FormattingError):
        format_response("42", None, "reasoning", "p")


def hand_pair(tmp_path, same_bytes=False):
    orig = tmp_path / "orig.png"
    cf = tmp_path / "cf.png"
    orig.write_bytes(make_png(rgb=(5, 5, 5)))
    cf.write_bytes(make_png(rgb=(5, 5, 5) if same_bytes else (9, 9, 9)))
    seed = SeedSample(
        id="p1", image=orig, code="c", question="q?", answer="one",
        reasoning=None, question_type="descriptive",
    )
    return CounterfactualPair(
        seed=seed,
        counterfactual=CounterfactualSample(image=str(cf), code="c2", answer="two", reasoning=None),
        similarity=None,
        attempts=1,
        provenance={},
    )


def test_missing_image_rejected(tmp_path):
    pair = hand_pair(tmp_path)
    Path(pair.counterfactual.image).unlink()
    with pytest.raises(MissingImageError):
        build_records(pair, tmp_path, symmetric=False)


def test_identical_image_digests_rejected(tmp_path):
    pair = hand_pair(tmp_path, same_bytes=True)
    with pytest.raises(FormattingError):
        build_records(pair, tmp_path, symmetric=False)


def test_records_reparse_losslessly(emitted_pairs, tmp_path):
    pairs, base = emitted_pairs
    result = emit(pairs, mode="both", symmetric=True, out_dir=tmp_path, pairs_base=base)
    for path in (result.text_path, result.image_path):
        rows = [json.loads(l) for l in path.read_text().splitlines()]
        rewritten = "".join(json.dumps(r) + "\n" for r in rows)
        assert rewritten == path.read_text()
