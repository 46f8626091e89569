"""Prompt rendering for the zero-/few-shot, simple/structured NER prompts.

Every prompt is built from the same blocks: a task instruction, the entity
definition as task guidance, an output specification and, for structured
prompts, an explicit ``### Output:`` retrieval cue. The few-shot variants
prepend one training passage together with its gold labels.

Templates are plain ``str.format`` strings and may be overridden per variant.
Available fields: ``entities`` ("rare diseases"), ``Entities``
("Rare diseases"), ``definition``, ``text``, ``example_text`` and
``example_labels``.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass
from typing import Mapping

from pnb.corpus import Document, EntityType
from pnb.errors import EmptyInput, MissingExample, PromptError


class Setting(str, enum.Enum):
    Zero = "zero"
    Few = "few"


class PromptFormat(str, enum.Enum):
    Simple = "simple"
    Structured = "structured"


DEFAULT_DEFINITIONS: dict[EntityType, str] = {
    EntityType.RareDisease: "diseases that affect a small number of individuals",
    EntityType.Disease: (
        "an abnormal condition of a part, organ, or system of an organism resulting from "
        "various causes, such as infection, inflammation, environmental factors, or genetic "
        "defect, and characterized by an identifiable group of signs, symptoms, or both"
    ),
    EntityType.Symptom: (
        "physical or mental problems that may indicate a disease or condition; they cannot "
        "be seen and do not show up on medical tests"
    ),
    EntityType.Sign: (
        "physical or mental problems that may indicate a disease or condition; they can be "
        "seen and show up on medical tests"
    ),
}

NO_LABELS = "None"

_SIMPLE_INSTRUCTION = (
    "Extract the exact names of {entities}, which are {definition}, "
    "from this passage and output them in a list:"
)

DEFAULT_TEMPLATES: dict[tuple[Setting, PromptFormat], str] = {
    (Setting.Zero, PromptFormat.Simple): _SIMPLE_INSTRUCTION + ' "{text}"',
    (Setting.Zero, PromptFormat.Structured): (
        "### Task:\n"
        "Extract the exact names of {entities} from the input text and output them in a list.\n"
        "### Definition:\n"
        "{Entities} are defined as {definition}.\n"
        '### Input text: "{text}"\n'
        "### Output:"
    ),
    (Setting.Few, PromptFormat.Simple): (
        'Passage: "{example_text}"\n'
        + _SIMPLE_INSTRUCTION + " {example_labels}\n"
        'Passage: "{text}"\n'
        + _SIMPLE_INSTRUCTION
    ),
    (Setting.Few, PromptFormat.Structured): (
        "### Task:\n"
        "Extract the exact names of {entities}, from the input text and output them in a list.\n"
        "### Definition:\n"
        "{Entities} are defined as {definition}.\n"
        '### Input text: "{example_text}"\n'
        "### Output: {example_labels}\n"
        '### Input text: "{text}"\n'
        "### Output:"
    ),
}

STRUCTURED_HEADERS = ("### Task:", "### Definition:", "### Input text:", "### Output:")


def default_definition(etype: EntityType) -> str:
    return DEFAULT_DEFINITIONS[etype]


def plural(etype: EntityType) -> str:
    return etype.noun + "s"


def unique_labels(surfaces: list[str]) -> tuple[str, ...]:
    seen: set[str] = set()
    out = []
    for s in surfaces:
        key = s.casefold()
        if key not in seen:
            seen.add(key)
            out.append(s)
    return tuple(out)


@dataclass(frozen=True)
class FewShotExample:
    doc_id: str
    text: str
    labels: tuple[str, ...]

    @classmethod
    def from_document(cls, doc: Document, etype: EntityType) -> FewShotExample:
        """Gold surfaces of ``etype`` in document order, case-insensitive duplicates dropped."""
        ents = sorted(doc.entities_of(etype), key=lambda e: (e.start, e.end))
        return cls(doc.doc_id, doc.text, unique_labels([e.surface for e in ents]))


@dataclass(frozen=True)
class PromptSpec:
    setting: Setting
    format: PromptFormat
    etype: EntityType
    definition: str
    input_text: str
    example: FewShotExample | None = None

    def validate(self) -> None:
        if self.setting is Setting.Few and self.example is None:
            raise MissingExample("few-shot prompt requires an example")
        if self.setting is Setting.Zero and self.example is not None:
            raise PromptError("zero-shot prompt must not carry an example")
        if not self.definition.strip():
            raise PromptError("definition must be non-empty")
        if not self.input_text.strip():
            raise EmptyInput("input text is empty")

    def fingerprint(self) -> str:
        payload = {
            "setting": self.setting.value,
            "format": self.format.value,
            "etype": self.etype.value,
            "definition": self.definition,
            "input_text": self.input_text,
            "example": None if self.example is None else {
                "doc_id": self.example.doc_id,
                "text": self.example.text,
                "labels": list(self.example.labels),
            },
        }
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    token_estimate: int
    spec_fingerprint: str


def render_prompt(
    spec: PromptSpec,
    templates: Mapping[tuple[Setting, PromptFormat], str] | None = None,
) -> RenderedPrompt:
    spec.validate()
    template = (templates or {}).get((spec.setting, spec.format)) or DEFAULT_TEMPLATES[(spec.setting, spec.format)]
    entities = plural(spec.etype)
    fields = {
        "entities": entities,
        "Entities": entities[0].upper() + entities[1:],
        "definition": spec.definition.strip().rstrip("."),
        "text": spec.input_text,
        "example_text": "",
        "example_labels": "",
    }
    if spec.example is not None:
        fields["example_text"] = spec.example.text
        fields["example_labels"] = ", ".join(spec.example.labels) or NO_LABELS
    text = template.format(**fields)
    return RenderedPrompt(text, math.ceil(len(text) / 4), spec.fingerprint())


def template_key(name: str) -> tuple[Setting, PromptFormat]:
    """Parse ``"few_structured"`` style config keys."""
    try:
        setting, fmt = name.lower().split("_", 1)
        return Setting(setting), PromptFormat(fmt)
    except ValueError as exc:
        raise PromptError(f"bad template name {name!r}; expected e.g. 'zero_simple'") from exc
