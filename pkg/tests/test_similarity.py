import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chartcf.errors import ConfigError, EmptyInputError, JudgeParseError
from chartcf.similarity import (
    JUDGE_PROMPT,
    JudgeClient,
    ScoredPair,
    SelectionConfig,
    parse_judge_reply,
    partition_halves,
    retention_count,
    select,
)
from chartcf.testing import make_png
from chartcf.transport import ApiConfig, ChatClient, MockTransport


def judge_reply(subs, total):
    names = ("Chart Types", "Layout", "Text Content", "Data", "Style")
    lines = ["---", "", "Comments:"]
    for name, sub in zip(names, subs):
        lines.append(f"- {name}: looks close ({sub}/20)")
    lines += ["", f"Score: {total}", "", "---"]
    return "\n".join(lines)


def test_parse_full_rubric_reply_93():
    score = parse_judge_reply(judge_reply([20, 20, 15, 20, 18], 93), judge_model="j")
    assert score.total == 93
    assert score.subscores() == (20, 20, 15, 20, 18)
    assert sum(score.subscores()) == score.total


def test_parse_totals_90_and_76():
    assert parse_judge_reply(judge_reply([20, 20, 12, 20, 18], 90)).total == 90
    assert parse_judge_reply(judge_reply([16, 16, 14, 16, 14], 76)).total == 76


def test_final_score_occurrence_wins():
    raw = "Score: 10\nsome revision...\n" + judge_reply([20, 20, 15, 20, 18], 93)
    assert parse_judge_reply(raw).total == 93


def test_no_score_line_is_malformed():
    with pytest.raises(JudgeParseError):
        parse_judge_reply("Comments:\n- Chart Types: fine (20/20)\n")


def test_subscore_sum_mismatch_is_malformed():
    with pytest.raises(JudgeParseError):
        parse_judge_reply(judge_reply([20, 20, 15, 20, 18], 90))


def test_out_of_range_values_are_malformed():
    with pytest.raises(JudgeParseError):
        parse_judge_reply(judge_reply([25, 20, 15, 20, 18], 98))
    with pytest.raises(JudgeParseError):
        parse_judge_reply("Score: 104\n")


def test_missing_subscore_lines_tolerated_when_total_present():
    score = parse_judge_reply("Looks very similar overall.\n\nScore: 88\n")
    assert score.total == 88
    assert score.subscores() == (None, None, None, None, None)


def test_judge_prompt_pins_rubric():
    assert "totaling 100 points" in JUDGE_PROMPT
    for criterion in ("Chart Types", "Layout", "Text Content", "Data", "Style"):
        assert f"**{criterion} (20 points):**" in JUDGE_PROMPT
    assert "Score: {your final score out of 100}" in JUDGE_PROMPT


def write_images(tmp_path):
    a = tmp_path / "orig.png"
    b = tmp_path / "cf.png"
    a.write_bytes(make_png(rgb=(1, 1, 1)))
    b.write_bytes(make_png(rgb=(2, 2, 2)))
    return a, b


def judge_with_replies(tmp_path, replies):
    tdir = tmp_path / "transcripts"
    tdir.mkdir()
    (tdir / "p1.judge.json").write_text(json.dumps({"replies": replies}))
    cfg = ApiConfig(model_id="judge", backoff_base_s=0.0)
    return JudgeClient(ChatClient(cfg, MockTransport(tdir)))


def test_score_pair_happy_path(tmp_path):
    a, b = write_images(tmp_path)
    judge = judge_with_replies(tmp_path, [{"status": 200, "text": judge_reply([20, 20, 15, 20, 18], 93)}])
    assert judge.score_pair("p1", a, b).total == 93


def test_score_pair_reasks_once_then_raises(tmp_path):
    a, b = write_images(tmp_path)
    judge = judge_with_replies(
        tmp_path,
        [{"status": 200, "text": "no score here"},
         {"status": 200, "text": judge_reply([20, 20, 15, 20, 18], 93)}],
    )
    assert judge.score_pair("p1", a, b).total == 93

    # two bad replies in a row -> JudgeParseError
    tdir = tmp_path / "again"
    tdir.mkdir()
    (tdir / "p1.judge.json").write_text(json.dumps(
        {"replies": [{"status": 200, "text": "no score"}, {"status": 200, "text": "still none"}]}
    ))
    failing = JudgeClient(ChatClient(ApiConfig(model_id="j", backoff_base_s=0.0), MockTransport(tdir)))
    with pytest.raises(JudgeParseError):
        failing.score_pair("p1", a, b)


def test_score_pair_missing_image(tmp_path):
    a, _ = write_images(tmp_path)
    judge = judge_with_replies(tmp_path, [])
    with pytest.raises(ConfigError):
        judge.score_pair("p1", a, tmp_path / "missing.png")


# -- selection ----------------------------------------------------------------

APPENDIX_CASE = [
    ScoredPair("a", 93),
    ScoredPair("b", 90),
    ScoredPair("c", 90),
    ScoredPair("d", 76),
]


def brute_force_keep_low(entries, k):
    """Independent oracle: full enumeration of the ranked order."""
    ranked = sorted(entries, key=lambda e: (e.total, e.pair_id))
    return sorted(e.pair_id for e in ranked[:k])


def test_keep_low_four_element_case():
    chosen = select(APPENDIX_CASE, SelectionConfig("keep_low", 50))
    assert [e.pair_id for e in chosen] == ["b", "d"]  # ascending id order
    assert set(e.pair_id for e in chosen) == set(brute_force_keep_low(APPENDIX_CASE, 2))


def test_full_retention_keeps_everything_in_id_order():
    chosen = select(APPENDIX_CASE, SelectionConfig("keep_low", 100))
    assert [e.pair_id for e in chosen] == ["a", "b", "c", "d"]


def test_keep_high_mirrors_keep_low_ties():
    chosen = select(APPENDIX_CASE, SelectionConfig("keep_high", 50))
    # 93 first, then the tie at 90 broken by ascending id -> b
    assert set(e.pair_id for e in chosen) == {"a", "b"}


def test_retention_count_examples():
    assert retention_count(10_428, 40) == 4_171
    assert retention_count(4, 50) == 2
    assert retention_count(1, 1) == 1  # k >= 1 when N >= 1
    assert retention_count(0, 40) == 0
    assert retention_count(10, 25) == 3  # 2.5 rounds half away from zero


def test_large_index_keep_low_count():
    entries = [ScoredPair(f"{i:06d}", 60 + (i * 7) % 41) for i in range(10_428)]
    chosen = select(entries, SelectionConfig("keep_low", 40))
    assert len(chosen) == 4_171


def test_nesting_monotonicity_keep_low_and_high():
    entries = [ScoredPair(f"{i:05d}", (i * 13) % 101) for i in range(523)]
    for strategy in ("keep_low", "keep_high"):
        previous: set[str] = set()
        for rho in range(10, 101, 10):
            chosen = {e.pair_id for e in select(entries, SelectionConfig(strategy, rho))}
            assert previous <= chosen
            previous = chosen


def test_random_strategy_reproducible_and_nested():
    entries = [ScoredPair(f"{i:05d}", i % 101) for i in range(200)]
    first = select(entries, SelectionConfig("random", 30, rng_seed=42))
    second = select(entries, SelectionConfig("random", 30, rng_seed=42))
    assert [e.pair_id for e in first] == [e.pair_id for e in second]
    other_seed = select(entries, SelectionConfig("random", 30, rng_seed=43))
    assert [e.pair_id for e in other_seed] != [e.pair_id for e in first]
    smaller = {e.pair_id for e in select(entries, SelectionConfig("random", 10, rng_seed=42))}
    assert smaller <= {e.pair_id for e in first}


def test_random_requires_seed():
    with pytest.raises(ConfigError):
        SelectionConfig("random", 30)


def test_select_validates_inputs():
    with pytest.raises(EmptyInputError):
        select([], SelectionConfig("keep_low", 40))
    with pytest.raises(ConfigError):
        SelectionConfig("keep_low", 0)
    with pytest.raises(ConfigError):
        SelectionConfig("keep_low", 101)
    with pytest.raises(ConfigError):
        SelectionConfig("sideways", 50)


@given(
    totals=st.lists(st.integers(0, 100), min_size=1, max_size=120),
    rho=st.integers(1, 100),
)
@settings(max_examples=200, deadline=None)
def test_selected_count_is_exact_and_complement_partitions(totals, rho):
    entries = [ScoredPair(f"{i:04d}", t) for i, t in enumerate(totals)]
    chosen = select(entries, SelectionConfig("keep_low", rho))
    k = retention_count(len(entries), rho)
    assert len(chosen) == k
    chosen_ids = {e.pair_id for e in chosen}
    complement = [e for e in entries if e.pair_id not in chosen_ids]
    assert len(complement) == len(entries) - k
    # every kept total is <= every complement total, up to tie handling by id
    if chosen and complement:
        assert max(e.total for e in chosen) <= min(e.total for e in complement) or any(
            c.total == min(e.total for e in complement) for c in chosen
        )


def test_partition_halves_enumerated_case():
    lowest, highest = partition_halves(APPENDIX_CASE)
    assert [e.pair_id for e in lowest] == ["b", "d"]
    assert [e.pair_id for e in highest] == ["a", "c"]


def test_partition_equal_totals_split_by_id():
    entries = [ScoredPair("x", 50), ScoredPair("y", 50)]
    lowest, highest = partition_halves(entries)
    assert [e.pair_id for e in lowest] == ["x"]
    assert [e.pair_id for e in highest] == ["y"]


def test_partition_odd_count_gives_low_the_extra():
    entries = [ScoredPair(str(i), i) for i in range(5)]
    lowest, highest = partition_halves(entries)
    assert len(lowest) - len(highest) == 1


def test_partition_requires_two():
    with pytest.raises(EmptyInputError):
        partition_halves([ScoredPair("only", 10)])
