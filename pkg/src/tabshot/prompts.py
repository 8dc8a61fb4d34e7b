"""Deterministic rendering of (context set, target) into chat prompts.

Two structures (tabular grid, serialized text) x two context settings
(zero-shot, few-shot) x three variants (standard, interpretable,
reflection round). Identical inputs always produce byte-identical output;
the target's label is never rendered anywhere.

Instruction texts and serialization templates are versioned JSON fixtures
shipped with the package; every experiment records the version it used.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal, InvalidOperation
from importlib import resources

from .errors import FormatContract, MissingTemplateRule, SchemaDrift
from .selection import FeatureSet
from .splits import ContextSet
from .table import Cell, FeatureTable, SubjectRow, select_columns

STRUCTURES = ("tabular", "serialized")
SHOTS = ("zero", "few")
VARIANTS = ("standard", "interpretable", "reflection_round")

MISSING_TOKEN = "NaN"
MASK_TOKEN = "?"
LABEL_WORDS = {0: "CN", 1: "AD"}
TARGET_MARKER = "Target patient:"
EXAMPLES_MARKER = "Examples:"

# third-person-singular phrases so the sentence patterns stay grammatical
NEUTRAL_PRONOUNS = {"noun": "of unrecorded sex", "subject": "the patient", "possessive": "the patient's"}


@dataclass(frozen=True)
class PromptFormat:
    structure: str
    shots: str
    variant: str = "standard"

    def __post_init__(self) -> None:
        if self.structure not in STRUCTURES:
            raise ValueError(f"structure must be one of {STRUCTURES}")
        if self.shots not in SHOTS:
            raise ValueError(f"shots must be one of {SHOTS}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")

    def describe(self) -> str:
        return f"{self.shots}-shot {self.structure} ({self.variant})"


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass(frozen=True)
class RenderedPrompt:
    messages: tuple[Message, ...]
    target_id: str
    format: PromptFormat
    expected_label_position: str

    def user_text(self) -> str:
        return "\n".join(m.content for m in self.messages if m.role == "user")


@dataclass(frozen=True)
class SerializationTemplate:
    style: str
    unit_map: dict = field(default_factory=dict)
    pronoun_rules: dict = field(default_factory=dict)
    numeric_precision: int = 4
    sex_column: str | None = None
    covariate_sentences: dict = field(default_factory=dict)
    default_covariate_sentence: str | None = None
    feature_sentence: str | None = None


@dataclass(frozen=True)
class InstructionSet:
    version: str
    system: str
    tabular_zero: str
    tabular_few: str
    serialized_zero: str
    serialized_few: str
    interpretable_suffix: str
    reflection_instruction: str


def _fixture(name: str) -> dict:
    path = resources.files("tabshot").joinpath("fixtures").joinpath(name)
    return json.loads(path.read_text(encoding="utf-8"))


def load_instructions(version: str = "v1") -> InstructionSet:
    doc = _fixture(f"instructions_{version}.json")
    return InstructionSet(**doc)


def load_template(style: str, version: str = "v1") -> SerializationTemplate:
    doc = _fixture(f"templates_{version}.json")
    try:
        spec = doc["templates"][style]
    except KeyError:
        raise MissingTemplateRule(f"no serialization template for style {style!r}") from None
    return SerializationTemplate(**spec)


def format_numeric(raw: str, frac_digits: int = 4) -> str:
    """Canonical numeric rendering: at most `frac_digits` fractional digits,
    trailing zeros trimmed, integers bare. Operates on the source decimal
    string so rendering never drifts with float round-trips."""
    try:
        d = Decimal(raw)
    except InvalidOperation:
        return raw
    exponent = d.as_tuple().exponent
    if isinstance(exponent, int) and exponent < -frac_digits:
        d = d.quantize(Decimal(1).scaleb(-frac_digits), rounding=ROUND_HALF_EVEN)
    text = format(d, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    if text in ("", "-0"):
        text = "0"
    return text


def render_cell(cell: Cell, kind: str, precision: int = 4) -> str:
    if cell.missing:
        return MISSING_TOKEN
    if kind in ("numeric", "count"):
        return format_numeric(cell.raw, precision)
    return cell.raw


def _grid_line(cells: list[str]) -> str:
    return "| " + " | ".join(cells) + " |"


def _check_row(table: FeatureTable, row: SubjectRow) -> None:
    if len(row.cells) != len(table.columns):
        raise SchemaDrift(
            f"row {row.subject_id!r} has {len(row.cells)} cells, table has {len(table.columns)} columns"
        )


def render_table_block(
    context: ContextSet,
    target: SubjectRow,
    features: FeatureSet | None,
    table: FeatureTable,
) -> str:
    """Pipe-separated grid: header, k labeled example rows, masked target row.

    Column order is the table's canonical order (optionally narrowed to the
    feature set); the target's label cell renders as "?".
    """
    working = table if features is None else select_columns(table, features.selected)
    label_idx = working.column_index(working.label_column)
    lines = [_grid_line([c.name for c in working.columns])]

    def row_line(row: SubjectRow, mask_label: bool) -> str:
        _check_row(working, row)
        rendered = []
        for idx, (cell, spec) in enumerate(zip(row.cells, working.columns)):
            if idx == label_idx:
                rendered.append(MASK_TOKEN if mask_label else render_cell(cell, spec.kind))
            else:
                rendered.append(render_cell(cell, spec.kind))
        return _grid_line(rendered)

    for example_id, _ in context.examples:
        lines.append(row_line(working.row_by_id(example_id), mask_label=False))
    target_row = (
        target
        if features is None
        else working.row_by_id(target.subject_id)
    )
    lines.append(row_line(target_row, mask_label=True))
    return "\n".join(lines)


def _pronouns(template: SerializationTemplate, table: FeatureTable, row: SubjectRow) -> dict:
    if template.sex_column and template.sex_column in {c.name for c in table.columns}:
        cell = table.cell(row, template.sex_column)
        if not cell.missing and cell.raw in template.pronoun_rules:
            return template.pronoun_rules[cell.raw]
    return NEUTRAL_PRONOUNS


def _sentence(pattern: str, *, name: str, value: str, unit: str, pronouns: dict) -> str:
    return pattern.format(
        name=name,
        value=value,
        unit=unit,
        noun=pronouns["noun"],
        subject=pronouns["subject"],
        Subject=pronouns["subject"].capitalize(),
        possessive=pronouns["possessive"],
        Possessive=pronouns["possessive"].capitalize(),
    )


def serialize_subject(
    row: SubjectRow,
    template: SerializationTemplate,
    table: FeatureTable,
    include_label: bool = False,
) -> str:
    """Render one subject as text.

    Narrative style emits covariate sentences followed by one sentence per
    feature; keyvalue style emits the covariate sentences and then
    "name=value" pairs joined by ", " on their own line. When requested, the
    label is appended on a final line as "Diagnosis: AD" / "Diagnosis: CN".
    """
    _check_row(table, row)
    pronouns = _pronouns(template, table, row)
    precision = template.numeric_precision

    def unit_for(name: str) -> str:
        unit = template.unit_map.get(name)
        if unit is None:
            unit = table.column(name).unit
        return f" {unit}" if unit else ""

    covariate_order = list(table.covariate_names)
    if template.sex_column in covariate_order:
        covariate_order.remove(template.sex_column)
        covariate_order.insert(0, template.sex_column)

    sentences: list[str] = []
    for name in covariate_order:
        cell = table.cell(row, name)
        value = render_cell(cell, table.column(name).kind, precision)
        pattern = template.covariate_sentences.get(name)
        if name == template.sex_column and (cell.missing or cell.raw not in template.pronoun_rules):
            pattern = None  # unusable sex sentence; fall back to the generic form
        if pattern is None:
            pattern = template.default_covariate_sentence
        if pattern is None:
            raise MissingTemplateRule(f"no covariate sentence rule for {name!r}")
        unit = "" if cell.missing else unit_for(name)
        sentences.append(_sentence(pattern, name=name, value=value, unit=unit, pronouns=pronouns))

    feature_names = [
        n for n in table.feature_names if n not in table.covariate_names
    ]
    lines: list[str] = []
    if template.style == "keyvalue":
        pairs = []
        for name in feature_names:
            cell = table.cell(row, name)
            pairs.append(f"{name}={render_cell(cell, table.column(name).kind, precision)}")
        lines.append(" ".join(sentences))
        if pairs:
            lines.append(", ".join(pairs))
    elif template.style == "narrative":
        if template.feature_sentence is None and feature_names:
            raise MissingTemplateRule("narrative template has no feature sentence rule")
        for name in feature_names:
            cell = table.cell(row, name)
            value = render_cell(cell, table.column(name).kind, precision)
            unit = "" if cell.missing else unit_for(name)
            sentences.append(
                _sentence(template.feature_sentence, name=name, value=value, unit=unit, pronouns=pronouns)
            )
        lines.append(" ".join(sentences))
    else:
        raise MissingTemplateRule(f"unknown serialization style {template.style!r}")

    if include_label:
        label = table.label_of(row)
        if label is None:
            raise FormatContract(f"subject {row.subject_id!r} has no label to include")
        lines.append(f"Diagnosis: {LABEL_WORDS[label]}")
    return "\n".join(lines)


def build_prompt(
    target: SubjectRow,
    context: ContextSet,
    format: PromptFormat,
    features: FeatureSet | None,
    instructions: InstructionSet,
    table: FeatureTable,
    template: SerializationTemplate | None = None,
    prior_answer: str | None = None,
) -> RenderedPrompt:
    """Assemble the chat messages for one target.

    Few-shot requires a non-empty context, zero-shot an empty one. The
    interpretable variant appends the step-by-step cue and the JSON output
    schema; the reflection variant wraps the standard prompt with the prior
    answer as an assistant turn plus a review request.
    """
    if format.shots == "few" and context.k < 1:
        raise FormatContract("few-shot prompts need at least one context example")
    if format.shots == "zero" and context.k != 0:
        raise FormatContract("zero-shot prompts must have an empty context set")
    if format.variant == "reflection_round":
        if prior_answer is None:
            raise FormatContract("reflection round needs the prior answer")
        base = build_prompt(
            target, context,
            PromptFormat(format.structure, format.shots, "standard"),
            features, instructions, table, template,
        )
        return build_reflection_prompt(base, prior_answer, instructions)

    if format.structure == "tabular":
        instruction = instructions.tabular_zero if format.shots == "zero" else instructions.tabular_few
        block = render_table_block(context, target, features, table)
        user = f"{instruction}\n\n{block}"
    else:
        if template is None:
            raise FormatContract("serialized prompts need a serialization template")
        working = table if features is None else select_columns(table, features.selected)
        target_row = working.row_by_id(target.subject_id)
        target_desc = serialize_subject(target_row, template, working, include_label=False)
        if format.shots == "zero":
            instruction = instructions.serialized_zero
            user = f"{instruction}\n\n{TARGET_MARKER}\n{target_desc}"
        else:
            instruction = instructions.serialized_few
            descs = [
                serialize_subject(working.row_by_id(eid), template, working, include_label=True)
                for eid, _ in context.examples
            ]
            examples_block = "\n\n".join(descs)
            user = (
                f"{instruction}\n\n{EXAMPLES_MARKER}\n\n{examples_block}"
                f"\n\n{TARGET_MARKER}\n{target_desc}"
            )

    if format.variant == "interpretable":
        user = f"{user}\n\n{instructions.interpretable_suffix}"
        position = "assistant_reply_json_prediction"
    else:
        position = "assistant_reply"

    messages = (
        Message(role="system", content=instructions.system),
        Message(role="user", content=user),
    )
    return RenderedPrompt(
        messages=messages,
        target_id=target.subject_id,
        format=format,
        expected_label_position=position,
    )


def build_reflection_prompt(
    prior: RenderedPrompt, prior_answer: str, instructions: InstructionSet
) -> RenderedPrompt:
    """Round-2 prompt: the original messages, the model's answer, a review ask."""
    messages = (
        *prior.messages,
        Message(role="assistant", content=prior_answer),
        Message(role="user", content=instructions.reflection_instruction),
    )
    return RenderedPrompt(
        messages=messages,
        target_id=prior.target_id,
        format=PromptFormat(prior.format.structure, prior.format.shots, "reflection_round"),
        expected_label_position=prior.expected_label_position,
    )


def token_budget(prompt: RenderedPrompt, chars_per_token_estimate: float) -> int:
    """Crude size estimate: ceil(total characters / chars-per-token)."""
    if chars_per_token_estimate <= 0:
        raise ValueError("estimate must be positive")
    total = sum(len(m.content) for m in prompt.messages)
    return math.ceil(total / chars_per_token_estimate)


# --- leakage scanning -------------------------------------------------------

def grid_lines(text: str) -> list[str]:
    return [line for line in text.splitlines() if line.startswith("| ")]


def target_grid_row(text: str) -> str | None:
    lines = grid_lines(text)
    return lines[-1] if len(lines) >= 2 else None


def target_section(text: str) -> str | None:
    """Text of the target description (serialized prompts)."""
    marker_at = text.rfind(TARGET_MARKER)
    if marker_at < 0:
        return None
    section = text[marker_at + len(TARGET_MARKER):]
    blank = section.find("\n\n")
    return section[:blank] if blank >= 0 else section


def leaks_target_label(prompt_messages, structure: str, label: int) -> bool:
    """True if the target position reveals the record's own label."""
    texts = [m.content if isinstance(m, Message) else m["content"]
             for m in prompt_messages
             if (m.role if isinstance(m, Message) else m["role"]) == "user"]
    joined = "\n".join(texts)
    if structure == "tabular":
        row = target_grid_row(joined)
        if row is None:
            return True  # no grid at all: treat as leaking (malformed)
        cells = [c.strip() for c in row.strip("|").split("|")]
        label_cell = cells[-1] if cells else ""
        return label_cell != MASK_TOKEN
    section = target_section(joined)
    if section is None:
        return True
    return "Diagnosis:" in section
