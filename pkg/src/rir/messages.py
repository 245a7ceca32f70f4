"""Prompt assembly for the experiment conditions.

Every prompt is an ordered ``PromptBundle`` of role-tagged text and image
parts with exactly one system part in front.  Retrieval-augmented bundles
always carry five parts in a fixed order: system prompt, capture image,
layout explanation, query image, query text.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .capture import MaskMode, SearchCapture
from .datasets import VisualQuestion
from .errors import EmptyField, MissingCapture, MissingEntity

#: Default system prompt; recorded in run metadata so it stays swappable.
SYSTEM_PROMPT = (
    "You are a helpful assistant that answers visual questions concisely and factually."
)

#: Explains the capture's geometry to the model.  Fixed wording; acceptance
#: tests assert it verbatim in every retrieval-augmented bundle.
CAPTURE_LAYOUT_NOTE = (
    "In the screenshot, the large image on the left is the query image for a "
    "reverse image search. The smaller images on the right and their titles "
    "are the top hits from the search."
)

#: Text-only rewrite used when the entity name is supplied by an oracle.
ENTITY_STATEMENT_TEMPLATE = (
    "Imagine that you are presented with an image of {entity}. "
    "Answer the following question: {question}"
)

#: Instruction sent with a capture to probe entity recall.
ENTITY_PROBE_PROMPT = "Name the entity shown in the query image on the left."


class Condition(str, Enum):
    VANILLA = "Vanilla"
    RIR = "RIR"
    RIR_MASK_IMAGES = "RIRMaskImages"
    RIR_MASK_TEXT = "RIRMaskText"
    ORACLE_ENTITY = "OracleEntity"

    @property
    def is_rir(self) -> bool:
        return self in (
            Condition.RIR,
            Condition.RIR_MASK_IMAGES,
            Condition.RIR_MASK_TEXT,
        )

    @property
    def mask_mode(self) -> MaskMode:
        if self is Condition.RIR_MASK_IMAGES:
            return MaskMode.MASK_IMAGES
        if self is Condition.RIR_MASK_TEXT:
            return MaskMode.MASK_TEXT
        return MaskMode.NONE

    @classmethod
    def parse(cls, name: str) -> "Condition":
        for member in cls:
            if member.value == name:
                return member
        raise ValueError(f"unknown condition {name!r}")


@dataclass(frozen=True)
class MessagePart:
    role: str  # "system" | "user"
    kind: str  # "text" | "image"
    body: str  # text content, or an image reference (path/URL)


@dataclass(frozen=True)
class PromptBundle:
    """Ordered multimodal message parts, plus the key used by scripted fixtures."""

    parts: tuple[MessagePart, ...]
    sample_id: str | None = None
    tag: str | None = None

    def __post_init__(self) -> None:
        system_positions = [i for i, p in enumerate(self.parts) if p.role == "system"]
        if system_positions != [0]:
            raise ValueError("bundle must have exactly one system part, first")

    def texts(self) -> list[str]:
        return [p.body for p in self.parts if p.kind == "text"]

    def images(self) -> list[str]:
        return [p.body for p in self.parts if p.kind == "image"]


def oracle_rephrase(entity_name: str, question: str) -> str:
    """Substitute the entity name and question into the text-only template.

    Pure substitution; the original question always survives verbatim as the
    suffix of the result.
    """
    if not entity_name.strip():
        raise EmptyField("entity_name is blank")
    if not question.strip():
        raise EmptyField("question is blank")
    return ENTITY_STATEMENT_TEMPLATE.format(entity=entity_name, question=question)


def _capture_ref(capture: SearchCapture) -> str:
    if capture.path is not None:
        return str(capture.path)
    return f"capture:{capture.content_hash}"


def compose_messages(
    vq: VisualQuestion,
    condition: Condition,
    capture: SearchCapture | None = None,
    entity_name: str | None = None,
    system_prompt: str = SYSTEM_PROMPT,
) -> PromptBundle:
    """Build the prompt bundle for one sample under one condition.

    Retrieval conditions require a capture and produce the fixed 5-part
    order; the oracle condition requires an entity name and is text-only;
    vanilla sends just the query image and question.
    """
    system = MessagePart("system", "text", system_prompt)
    if condition.is_rir:
        if capture is None:
            raise MissingCapture(f"{condition.value} requires a capture")
        parts = (
            system,
            MessagePart("user", "image", _capture_ref(capture)),
            MessagePart("user", "text", CAPTURE_LAYOUT_NOTE),
            MessagePart("user", "image", vq.image),
            MessagePart("user", "text", vq.question),
        )
    elif condition is Condition.ORACLE_ENTITY:
        if entity_name is None:
            raise MissingEntity(f"{condition.value} requires an entity name")
        parts = (
            system,
            MessagePart("user", "text", oracle_rephrase(entity_name, vq.question)),
        )
    else:
        parts = (
            system,
            MessagePart("user", "image", vq.image),
            MessagePart("user", "text", vq.question),
        )
    return PromptBundle(parts=parts, sample_id=vq.id, tag=condition.value)


def probe_bundle(capture: SearchCapture, sample_id: str | None = None,
                 system_prompt: str = SYSTEM_PROMPT) -> PromptBundle:
    """Bundle asking the model to name the entity shown in a capture."""
    return PromptBundle(
        parts=(
            MessagePart("system", "text", system_prompt),
            MessagePart("user", "image", _capture_ref(capture)),
            MessagePart("user", "text", ENTITY_PROBE_PROMPT),
        ),
        sample_id=sample_id,
        tag="probe",
    )
