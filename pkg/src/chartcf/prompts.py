"""Code-modification prompt templates and slot rendering.

Templates use ``{{ name }}`` slots.  The two shipped bodies are the stock
descriptive/reasoning modification prompts; a distractor-mode template has
no shipped body and must be supplied by the caller.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import InvalidTemplateError, MissingSlotError

SLOT_RE = re.compile(r"\{\{\s*([a-z_]+)\s*\}\}")

KIND_DESCRIPTIVE = "descriptive"
KIND_REASONING = "reasoning"
KIND_DISTRACTOR = "distractor"

_DESCRIPTIVE_SLOTS = frozenset({"python_code", "question", "current_answer"})
_REASONING_SLOTS = _DESCRIPTIVE_SLOTS | {"current_reasoning_process"}

DESCRIPTIVE_TEMPLATE_BODY = """\
**Task:** Given a chart image, its plotting code, a descriptive question, and the current answer, modify the code so that the answer to the question becomes different. You should ONLY modify the element(s) directly responsible for the current answer.

## Requirements

- First assess whether you think you are capable of reasonably accomplishing this task
- Identify the specific data point(s) or element(s) that determine the current answer
- Modify ONLY those necessary elements to produce a different answer
- Do NOT change any other data points, labels, colors, or visual elements
- Do NOT change the final output/save path in the original code: it must remain `rendered_images/{6-digit-number}.png`, e.g., `rendered_images/000002.png`.
- Do NOT modify the `set_random_seed` function or the random seed value it sets
- Ensure the modification is visually noticeable to human eyes (e.g., at least 15-25% change for numerical values)
- Provide the complete, executable Python code with your modifications, not just the changed parts

## Example (Omitting the Chart Image for Brevity)

## Example Input

**Plotting Code:**
```python
<example_original_code>
```

**Question:**
What is the title of the first subplot on the left?

**Current Answer:**
The title of the first subplot is 'Sculpture Wave Patterns'.

## Example Output

**Feasibility:**
YES

**Rationale of Modification:**
To change the title of the first subplot, we only need to modify the `ax1.set_title()` function that sets the title of the first subplot. This change will directly affect the current answer without impacting any other part of the code or plot. Changing the title satisfies the requirement of producing a visually noticeable difference.

**Modified Code:**
```python
<example_modified_code>
```

**New Answer:**
The title of the first subplot is 'Dynamic Wave Effects'.

## Input

**Plotting Code:**
```python
{{ python_code }}
```
**Question:**
{{ question }}

**Current Answer:**
{{ current_answer }}

## Output Format

**Feasibility:**
[YES or NO - whether this task can be reasonably accomplished]

**Rationale of Modification:**
[If feasibility is YES: Briefly explain which element(s) you will modify and why this produces a different answer]
[If feasibility is NO: Briefly explain why]

**Modified Code:**
```python
[Your complete modified code here if feasible, otherwise write "None"]
```
**New Answer:**
[The new correct answer if feasible, otherwise write "None". Do NOT include words like "modified", "updated", "changed", or any reference to the modification process.]
"""

REASONING_TEMPLATE_BODY = """\
**Task:** Given a chart image, its plotting code, a reasoning question, and the current answer with reasoning process, modify the code so that the answer becomes different. You should ONLY modify the element(s) directly responsible for the current answer.

## Requirements

- First assess whether you think you are capable of reasonably accomplishing this task
- Identify the specific data point(s) or element(s) that determine the current answer
- Modify ONLY those necessary elements to produce a different answer with a reasoning process
- Do NOT change any other data points, labels, colors, or visual elements
- Do NOT change the final output/save path in the original code: it must remain `rendered_images/{6-digit-number}.png`, e.g., `rendered_images/000002.png`.
- Do NOT modify the `set_random_seed` function or the random seed value it sets
- Ensure the modification is visually noticeable to human eyes (e.g., at least 15-25% change for numerical values)
- Provide the complete, executable Python code with your modifications, not just the changed parts

## Example (Omitting the Chart Image for Brevity)

### Example Input

**Plotting Code:**
```python
<example_original_code>
```
**Question:**
By how much does the mean revenue decrease from Q1 to Q2?

**Current Answer:**
Reasoning Process: The mean revenue for Q1 is 15.3 and for Q2 it is 11.9. The decrease is calculated as 15.3 - 11.9 = 3.4.
Answer: 3.4

### Example Output

**Feasibility:**
YES

**Rationale of Modification:**
To change the answer, I will modify the mean revenue values for Q1 and/or Q2 in `revenue_means`. This adjustment will directly change the mean revenue values displayed in the chart without affecting other elements of the visualization.

**Modified Code:**
```python
<example_modified_code>
```
**New Answer:**
Reasoning Process: The mean revenue for Q1 is 19.1 and for Q2 it is 10.2. The decrease is calculated as 19.1 - 10.2 = 8.9.
Answer: 8.9

## Input

**Plotting Code:**
```python
{{ python_code }}
```
**Question:**
{{ question }}

**Current Answer:**
Reasoning Process: {{ current_reasoning_process }}
Answer: {{ current_answer }}

## Output Format

**Feasibility:**
[YES or NO - whether this task can be reasonably accomplished]

**Rationale of Modification:**
[If feasibility is YES: Briefly explain which element(s) you will modify and why this produces a different answer]
[If feasibility is NO: Briefly explain why]

**Modified Code:**
```python
[Your complete modified code here if feasible, otherwise write "None"]
```
**New Answer:**
Reasoning Process: [If feasible, provide step-by-step reasoning that leads to the new answer, Otherwise write "None". Do NOT include words like "modified", "updated", "changed", or any reference to the modification process.]
Answer: [The new correct answer if feasible, otherwise write "None". Do NOT include words like "modified", "updated", "changed", or any reference to the modification process.]
"""


@dataclass(frozen=True)
class PromptTemplate:
    """A code-modification prompt with named slots."""

    kind: str
    body: str
    slots: frozenset[str] = field(init=False)

    def __post_init__(self) -> None:
        if "{{" in SLOT_RE.sub("", self.body):
            raise InvalidTemplateError("template body has a malformed slot marker")
        found = frozenset(SLOT_RE.findall(self.body))
        if self.kind == KIND_DESCRIPTIVE:
            required = _DESCRIPTIVE_SLOTS
        elif self.kind == KIND_REASONING:
            required = _REASONING_SLOTS
        elif self.kind == KIND_DISTRACTOR:
            # Custom body; any subset of the known slots is acceptable.
            unknown = found - _REASONING_SLOTS
            if unknown:
                raise InvalidTemplateError(
                    f"distractor template uses unknown slots: {sorted(unknown)}"
                )
            object.__setattr__(self, "slots", found)
            return
        else:
            raise InvalidTemplateError(f"unknown template kind: {self.kind!r}")
        if found != required:
            raise InvalidTemplateError(
                f"{self.kind} template must use exactly slots {sorted(required)}, "
                f"found {sorted(found)}"
            )
        object.__setattr__(self, "slots", found)


def default_template(kind: str) -> PromptTemplate:
    """Shipped template for a question kind (distractor has no default)."""
    if kind == KIND_DESCRIPTIVE:
        return PromptTemplate(KIND_DESCRIPTIVE, DESCRIPTIVE_TEMPLATE_BODY)
    if kind == KIND_REASONING:
        return PromptTemplate(KIND_REASONING, REASONING_TEMPLATE_BODY)
    if kind == KIND_DISTRACTOR:
        raise InvalidTemplateError(
            "no default distractor template ships; supply a body via --distractor-template"
        )
    raise InvalidTemplateError(f"unknown template kind: {kind!r}")


def render_prompt(template: PromptTemplate, seed) -> str:
    """Fill every slot of `template` verbatim from a seed sample.

    The seed supplies: code -> python_code, question -> question,
    answer -> current_answer, reasoning -> current_reasoning_process.
    """
    values = {
        "python_code": seed.code,
        "question": seed.question,
        "current_answer": seed.answer,
        "current_reasoning_process": getattr(seed, "reasoning", None),
    }
    for name in template.slots:
        if values.get(name) is None:
            raise MissingSlotError(
                f"seed {getattr(seed, 'id', '?')} has no value for slot {name!r}"
            )

    def fill(match: re.Match[str]) -> str:
        return values[match.group(1)]

    return SLOT_RE.sub(fill, template.body)
