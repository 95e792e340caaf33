"""Code-modifier client: prompt assembly, the API call, and reply parsing."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import InconsistentResponseError, ParseError
from .prompts import (
    KIND_DESCRIPTIVE,
    KIND_DISTRACTOR,
    KIND_REASONING,
    PromptTemplate,
    default_template,
    render_prompt,
)
from .transport import ChatClient, ChatReply, image_part, text_part

_SECTION_NAMES = ("Feasibility", "Rationale of Modification", "Modified Code", "New Answer")

# Bold headers like "**Modified Code:**", case-insensitive, whitespace-tolerant.
_HEADER_RE = re.compile(
    r"^[ \t]*\*\*[ \t]*(" + "|".join(n.replace(" ", r"\s+") for n in _SECTION_NAMES) + r")[ \t]*:[ \t]*\*\*",
    re.IGNORECASE | re.MULTILINE,
)
_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)
_FEASIBILITY_RE = re.compile(r"\s*(yes|no)\b", re.IGNORECASE)
_REASONING_ANSWER_RE = re.compile(r"Reasoning Process:\s*(.*?)\s*Answer:\s*(.*)\Z", re.DOTALL)


@dataclass(frozen=True)
class ModifierResponse:
    """Parsed modifier reply; absent fields were the literal "None"."""

    feasible: bool
    rationale: str
    modified_code: str | None
    new_answer: str | None
    new_reasoning: str | None
    raw: str


def _none_is_absent(text: str | None) -> str | None:
    if text is None:
        return None
    stripped = text.strip()
    if not stripped or stripped.lower() == "none":
        return None
    return stripped


def _split_sections(raw: str) -> dict[str, str]:
    matches = list(_HEADER_RE.finditer(raw))
    sections: dict[str, str] = {}
    for i, match in enumerate(matches):
        name = re.sub(r"\s+", " ", match.group(1)).lower()
        if name in sections:
            continue  # first occurrence wins over trailing chatter
        end = matches[i + 1].start() if i + 1 < len(matches) else len(raw)
        sections[name] = raw[match.end():end]
    missing = [n for n in _SECTION_NAMES if n.lower() not in sections]
    if missing:
        raise ParseError(f"reply is missing section header(s): {missing}")
    return sections


def parse_modifier_response(raw: str, kind: str) -> ModifierResponse:
    """Extract the four output sections from a raw modifier reply.

    Sections are located by their bold headers.  The modified code is the
    first fenced block after the Modified Code header.  For reasoning
    questions the New Answer section is split at the "Reasoning Process:"
    and "Answer:" markers.
    """
    sections = _split_sections(raw)

    feas_match = _FEASIBILITY_RE.match(sections["feasibility"].strip())
    if not feas_match:
        raise ParseError("feasibility section is not YES or NO")
    feasible = feas_match.group(1).lower() == "yes"

    rationale = sections["rationale of modification"].strip()

    fence = _FENCE_RE.search(sections["modified code"])
    modified_code = _none_is_absent(fence.group(1) if fence else None)

    answer_text = sections["new answer"].strip()
    new_reasoning: str | None = None
    if kind == KIND_REASONING and _none_is_absent(answer_text) is not None:
        split = _REASONING_ANSWER_RE.search(answer_text)
        if not split:
            raise ParseError("reasoning reply lacks Reasoning Process:/Answer: markers")
        new_reasoning = _none_is_absent(split.group(1))
        new_answer = _none_is_absent(split.group(2))
    else:
        new_answer = _none_is_absent(answer_text)

    if feasible:
        if modified_code is None:
            raise InconsistentResponseError("feasibility YES but modified code is missing/None")
        if new_answer is None:
            raise InconsistentResponseError("feasibility YES but new answer is missing/None")
        if kind == KIND_REASONING and new_reasoning is None:
            raise InconsistentResponseError("feasibility YES but reasoning process is missing/None")
    else:
        # An infeasible verdict carries no usable payload by contract.
        modified_code = None
        new_answer = None
        new_reasoning = None

    return ModifierResponse(
        feasible=feasible,
        rationale=rationale,
        modified_code=modified_code,
        new_answer=new_answer,
        new_reasoning=new_reasoning,
        raw=raw,
    )


class ModifierClient:
    """Renders the kind-appropriate prompt and calls the modifier endpoint."""

    def __init__(
        self,
        chat: ChatClient,
        distractor_template: PromptTemplate | None = None,
        distractor_mode: bool = False,
    ):
        self.chat = chat
        self.templates = {
            KIND_DESCRIPTIVE: default_template(KIND_DESCRIPTIVE),
            KIND_REASONING: default_template(KIND_REASONING),
        }
        if distractor_template is not None:
            self.templates[KIND_DISTRACTOR] = distractor_template
        self.distractor_mode = distractor_mode

    def template_for(self, seed) -> PromptTemplate:
        if self.distractor_mode:
            return self.templates[KIND_DISTRACTOR]
        return self.templates[seed.question_type]

    def call_modifier(self, prompt: str, image: bytes, tag: str) -> ChatReply:
        """Send [image, prompt] as one user message; returns the reply text."""
        return self.chat.complete([image_part(image), text_part(prompt)], tag)

    def modify(self, seed, image: bytes, tag: str) -> tuple[ModifierResponse, dict | None]:
        """Full round trip for one seed; returns (parsed response, token usage)."""
        prompt = render_prompt(self.template_for(seed), seed)
        reply = self.call_modifier(prompt, image, tag)
        parse_kind = KIND_REASONING if seed.question_type == KIND_REASONING else KIND_DESCRIPTIVE
        return parse_modifier_response(reply.text, parse_kind), reply.usage
