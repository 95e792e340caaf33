import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chartcf.errors import (
    AuthError,
    ChartCFError,
    ConfigError,
    InconsistentResponseError,
    MalformedReplyError,
    ParseError,
    TransientExhaustedError,
)
from chartcf.modifier import ModifierClient, parse_modifier_response
from chartcf.transport import (
    ApiConfig,
    ChatClient,
    MockTransport,
    image_data_url,
    image_part,
)
from chartcf.testing import make_png

# Shaped like the stock prompt's example output, answer included.
DESCRIPTIVE_REPLY = """\
**Feasibility:**
YES

**Rationale of Modification:**
To change the title of the first subplot, we only need to modify the `ax1.set_title()` call.

**Modified Code:**
```python
ax1.set_title('Dynamic Wave Effects')
fig.savefig('rendered_images/000002.png')
```

**New Answer:**
The title of the first subplot is 'Dynamic Wave Effects'.
"""

REASONING_REPLY = """\
**Feasibility:**
YES

**Rationale of Modification:**
I will modify the mean revenue values for Q1 and/or Q2 in `revenue_means`.

**Modified Code:**
```python
revenue_means = [19.1, 10.2]
fig.savefig('rendered_images/000007.png')
```

**New Answer:**
Reasoning Process: The mean revenue for Q1 is 19.1 and for Q2 it is 10.2. The decrease is calculated as 19.1 - 10.2 = 8.9.
Answer: 8.9
"""

INFEASIBLE_REPLY = """\
**Feasibility:**
NO

**Rationale of Modification:**
The question asks about an element the code does not control.

**Modified Code:**
```python
None
```

**New Answer:**
None
"""


def test_parse_descriptive_fixture():
    parsed = parse_modifier_response(DESCRIPTIVE_REPLY, "descriptive")
    assert parsed.feasible
    assert "Dynamic Wave Effects" in parsed.new_answer
    assert parsed.modified_code.startswith("ax1.set_title('Dynamic Wave Effects')")
    assert parsed.new_reasoning is None
    assert parsed.raw == DESCRIPTIVE_REPLY


def test_parse_reasoning_fixture_splits_answer():
    parsed = parse_modifier_response(REASONING_REPLY, "reasoning")
    assert parsed.feasible
    assert parsed.new_answer == "8.9"
    assert parsed.new_reasoning.startswith("The mean revenue for Q1 is 19.1")
    assert "revenue_means = [19.1, 10.2]" in parsed.modified_code


def test_parse_infeasible_fixture():
    parsed = parse_modifier_response(INFEASIBLE_REPLY, "descriptive")
    assert not parsed.feasible
    assert parsed.modified_code is None
    assert parsed.new_answer is None


def test_section_round_trip_is_lossless():
    parsed = parse_modifier_response(DESCRIPTIVE_REPLY, "descriptive")
    assert parsed.rationale == (
        "To change the title of the first subplot, we only need to modify the `ax1.set_title()` call."
    )
    rebuilt = (
        "**Feasibility:**\nYES\n\n"
        f"**Rationale of Modification:**\n{parsed.rationale}\n\n"
        f"**Modified Code:**\n```python\n{parsed.modified_code}\n```\n\n"
        f"**New Answer:**\n{parsed.new_answer}\n"
    )
    again = parse_modifier_response(rebuilt, "descriptive")
    assert again.feasible == parsed.feasible
    assert again.rationale == parsed.rationale
    assert again.modified_code == parsed.modified_code
    assert again.new_answer == parsed.new_answer


def test_missing_header_is_parse_error():
    with pytest.raises(ParseError):
        parse_modifier_response("**Feasibility:**\nYES\nno other sections", "descriptive")


def test_feasible_without_code_is_inconsistent():
    reply = DESCRIPTIVE_REPLY.replace(
        "```python\nax1.set_title('Dynamic Wave Effects')\nfig.savefig('rendered_images/000002.png')\n```",
        "```python\nNone\n```",
    )
    with pytest.raises(InconsistentResponseError):
        parse_modifier_response(reply, "descriptive")


def test_headers_match_case_insensitively_with_whitespace():
    reply = DESCRIPTIVE_REPLY.replace("**Feasibility:**", "  ** FEASIBILITY : **")
    parsed = parse_modifier_response(reply, "descriptive")
    assert parsed.feasible


def test_first_fenced_block_wins_over_trailing_chatter():
    reply = DESCRIPTIVE_REPLY.replace(
        "**New Answer:**",
        "```python\nprint('chatter')\n```\n\n**New Answer:**",
    )
    parsed = parse_modifier_response(reply, "descriptive")
    assert "ax1.set_title" in parsed.modified_code
    assert "chatter" not in parsed.modified_code


def test_reasoning_reply_without_markers_is_parse_error():
    reply = REASONING_REPLY.replace("Reasoning Process:", "Thoughts:")
    with pytest.raises(ParseError):
        parse_modifier_response(reply, "reasoning")


@given(st.text(max_size=2000))
@settings(max_examples=300, deadline=None)
def test_parser_never_panics_on_arbitrary_text(raw):
    try:
        parse_modifier_response(raw, "descriptive")
    except ChartCFError:
        pass  # ParseError / InconsistentResponseError are the documented outcomes


# -- transport behavior ------------------------------------------------------


def make_transcripts(tmp_path, name, replies):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps({"replies": replies}))
    return MockTransport(tmp_path)


def cfg(**kw):
    defaults = dict(model_id="test-model", max_retries=3, backoff_base_s=0.0)
    defaults.update(kw)
    return ApiConfig(**defaults)


def test_mock_passthrough(tmp_path):
    transport = make_transcripts(tmp_path, "s1.modify", [{"status": 200, "text": "hello"}])
    chat = ChatClient(cfg(), transport)
    assert chat.complete([{"type": "text", "text": "x"}], "s1/modify").text == "hello"


def test_retries_429_twice_then_succeeds(tmp_path):
    transport = make_transcripts(
        tmp_path, "s1.modify",
        [{"status": 429}, {"status": 429}, {"status": 200, "text": "ok at last"}],
    )
    chat = ChatClient(cfg(), transport)
    assert chat.complete([], "s1/modify").text == "ok at last"
    assert transport.calls == ["s1/modify"] * 3


def test_auth_error_is_immediate(tmp_path):
    transport = make_transcripts(
        tmp_path, "s1.modify", [{"status": 401}, {"status": 200, "text": "never"}]
    )
    with pytest.raises(AuthError):
        ChatClient(cfg(), transport).complete([], "s1/modify")
    assert transport.calls == ["s1/modify"]


def test_attempts_never_exceed_retry_budget(tmp_path):
    transport = make_transcripts(tmp_path, "s1.modify", [{"status": 500}] * 10)
    with pytest.raises(TransientExhaustedError):
        ChatClient(cfg(max_retries=2), transport).complete([], "s1/modify")
    assert len(transport.calls) == 3  # max_retries + 1


def test_scripted_timeouts_are_retried(tmp_path):
    transport = make_transcripts(
        tmp_path, "s1.modify", [{"error": "timeout"}, {"status": 200, "text": "late"}]
    )
    assert ChatClient(cfg(), transport).complete([], "s1/modify").text == "late"


def test_empty_reply_is_malformed(tmp_path):
    transport = make_transcripts(tmp_path, "s1.modify", [{"status": 200, "text": ""}])
    with pytest.raises(MalformedReplyError):
        ChatClient(cfg(), transport).complete([], "s1/modify")


def test_rate_limiter_spaces_acquisitions():
    import time

    from chartcf.transport import RateLimiter

    limiter = RateLimiter(per_minute=1200)  # 50 ms interval
    start = time.monotonic()
    for _ in range(3):
        limiter.acquire()
    assert time.monotonic() - start >= 0.095
    unlimited = RateLimiter(per_minute=0)
    start = time.monotonic()
    for _ in range(100):
        unlimited.acquire()
    assert time.monotonic() - start < 0.1


def test_image_data_url_detects_formats():
    url = image_data_url(make_png())
    assert url.startswith("data:image/png;base64,")
    assert image_data_url(b"\xff\xd8\xff\xe0rest").startswith("data:image/jpeg;base64,")
    with pytest.raises(ConfigError):
        image_data_url(b"GIF89a...")


def test_modifier_client_sends_image_then_prompt(tmp_path, mock_corpus, corpus_seeds):
    seed = corpus_seeds[12]  # a plain-success descriptive sample
    transport = MockTransport(mock_corpus.transcripts)
    client = ModifierClient(ChatClient(cfg(), transport))
    response, usage = client.modify(seed, seed.image.read_bytes(), f"{seed.id}/modify")
    assert response.feasible
    assert response.new_answer != seed.answer
    part = image_part(make_png())
    assert part["type"] == "image_url"
