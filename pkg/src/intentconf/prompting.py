"""Prompt assembly for configuration generation and alignment checks.

A profile names which prompt enhancements are active: plain instruction
prompting, step-by-step reasoning, retrieved documentation context,
curated few-shot examples, or all of them combined. build_prompt turns a
generation request plus the active profile into one payload; the sections
always appear in the same order so transcripts stay reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import yaml

from .gateway import (
    PromptPayload,
    Provider,
    RawResponse,
    SamplingParams,
    clamp_for_determinism,
    complete,
)
from .preprocess import ConfigDocument, StructuralError, parse_config, serialize_config
from .retrieval import Chunk

PROFILE_NAMES = ("ip", "cot", "rag", "fsl", "lads")

MAX_CHAIN_ATTEMPTS = 3

INSTRUCTION_HEADER = (
    "You are a deployment engineer for distributed compute clusters.\n"
    "Translate the user's intent into a configuration for the named system.\n"
    "Output only the configuration, as YAML, no prose. Produce only relevant\n"
    "configuration details: include only keys the intent calls for or the\n"
    "system requires, never boilerplate."
)

COT_SUFFIX = (
    "Let's think step by step: identify the system being configured, list\n"
    "the constraints the request imposes, map each constraint onto the\n"
    "system's configuration schema, and check every constraint is met.\n"
    "When asked for a verdict, end with exactly one final line of the form\n"
    "VERDICT: ALIGNED or VERDICT: MISALIGNED: <reason>."
)

ALIGNMENT_HEADER = (
    "You are reviewing a generated cluster configuration against the intent\n"
    "it was produced from. Judge whether every constraint in the intent is\n"
    "reflected in the configuration and nothing contradicts it."
)

FEEDBACK_LABEL = "## PREVIOUS ATTEMPT FAILED"


class ProfileViolation(Exception):
    """A profile requirement cannot be met with the inputs provided."""


class VerdictUnparseable(Exception):
    """An alignment reply did not end with a recognizable verdict line."""

    def __init__(self, message: str, raw: RawResponse):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class OptimizationProfile:
    """Which prompt enhancements are switched on, plus sampling policy."""

    name: str
    use_instruction_header: bool = True
    use_cot: bool = False
    use_retrieval: bool = False
    use_few_shot: bool = False
    sampling: SamplingParams = SamplingParams()
    max_chain_attempts: int = MAX_CHAIN_ATTEMPTS

    def __post_init__(self):
        if self.name not in PROFILE_NAMES:
            raise ValueError(f"profile name must be one of {PROFILE_NAMES}, got {self.name!r}")
        if not self.use_instruction_header:
            raise ValueError("every profile keeps the instruction header on")
        if self.max_chain_attempts < 1:
            raise ValueError("max_chain_attempts must be >= 1")
        expected = _FLAGS[self.name]
        actual = (self.use_cot, self.use_retrieval, self.use_few_shot)
        if actual != expected:
            raise ValueError(
                f"profile {self.name!r} implies flags cot/retrieval/few_shot = {expected}, got {actual}"
            )

    @property
    def effective_sampling(self) -> SamplingParams:
        return clamp_for_determinism(self.sampling)

    @classmethod
    def for_name(
        cls,
        name: str,
        sampling: SamplingParams | None = None,
        max_chain_attempts: int = MAX_CHAIN_ATTEMPTS,
    ) -> "OptimizationProfile":
        name = name.lower()
        if name not in PROFILE_NAMES:
            raise ValueError(f"unknown profile {name!r}; choose from {PROFILE_NAMES}")
        cot, rag, fsl = _FLAGS[name]
        return cls(
            name=name,
            use_instruction_header=True,
            use_cot=cot,
            use_retrieval=rag,
            use_few_shot=fsl,
            sampling=sampling or SamplingParams(),
            max_chain_attempts=max_chain_attempts,
        )


# name -> (use_cot, use_retrieval, use_few_shot); the header is always on.
_FLAGS = {
    "ip": (False, False, False),
    "cot": (True, False, False),
    "rag": (False, True, False),
    "fsl": (False, False, True),
    "lads": (True, True, True),
}


@dataclass(frozen=True)
class FewShotExample:
    """One curated example: the task, the intent, a correct configuration,
    and optionally a labeled counterexample."""

    prompt: str
    intent: str
    correct_output: str
    incorrect_output: str = ""
    defect_note: str = ""

    def __post_init__(self):
        if not self.prompt or not self.intent:
            raise ValueError("example prompt and intent must be non-empty")
        try:
            parse_config(self.correct_output)
        except StructuralError as exc:
            raise ValueError(f"correct_output must parse as a configuration: {exc}") from exc
        if self.incorrect_output and not self.defect_note:
            raise ValueError("an incorrect_output needs a one-line defect note")


@dataclass(frozen=True)
class GenerationRequest:
    """Everything the prompt builder needs for one generation call."""

    system: str
    prompt: str
    intent: str
    resource_context: str = ""
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.system:
            raise ValueError("target system must be named")
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if not self.intent:
            raise ValueError("intent must be non-empty")


def _context_section(chunks: Sequence[Chunk | str]) -> str:
    parts = ["## Context"]
    for i, chunk in enumerate(chunks):
        if isinstance(chunk, Chunk):
            parts.append(f"[doc {chunk.doc_id} part {chunk.ordinal}]\n{chunk.text}")
        else:
            parts.append(f"[context {i}]\n{chunk}")
    return "\n\n".join(parts)


def _examples_section(shots: Sequence[FewShotExample]) -> str:
    # Correct examples first, then every counterexample with its defect note.
    parts = ["## Examples"]
    for shot in shots:
        parts.append(
            f"Prompt: {shot.prompt}\nIntent: {shot.intent}\n"
            f"Configuration:\n{shot.correct_output.rstrip()}"
        )
    for shot in shots:
        if shot.incorrect_output:
            parts.append(
                f"Prompt: {shot.prompt}\nIntent: {shot.intent}\n"
                f"Configuration (incorrect, defect: {shot.defect_note}):\n"
                f"{shot.incorrect_output.rstrip()}"
            )
    return "\n\n".join(parts)


def build_prompt(
    profile: OptimizationProfile,
    request: GenerationRequest,
    shots: Sequence[FewShotExample] = (),
    context_chunks: Sequence[Chunk | str] = (),
    feedback: str = "",
) -> PromptPayload:
    """Assemble the generation payload for one attempt.

    Sections appear in fixed order: instruction header (as the system
    role), retrieved context, examples, the user intent, the task prompt,
    the reasoning suffix, and finally the feedback block when the chain is
    retrying. Disabled sections are absent, never empty.
    """
    sections: list[str] = []
    if profile.use_retrieval and context_chunks:
        sections.append(_context_section(context_chunks))
    if profile.use_few_shot:
        if not shots:
            raise ProfileViolation(
                f"profile {profile.name!r} requires few-shot examples but none were provided"
            )
        sections.append(_examples_section(shots))
    sections.append(f"## User intent\n{request.intent}")
    task_lines = ["## Task", request.prompt]
    if request.resource_context:
        task_lines.append("Cluster resources available:")
        task_lines.append(request.resource_context)
    sections.append("\n".join(task_lines))
    if profile.use_cot:
        sections.append(COT_SUFFIX)
    if feedback:
        sections.append(f"{FEEDBACK_LABEL}\n{feedback}")
    return PromptPayload(
        system_instructions=INSTRUCTION_HEADER,
        user_message="\n\n".join(sections),
        metadata=dict(request.metadata),
    )


def build_cot_suffix() -> str:
    return COT_SUFFIX


@dataclass(frozen=True)
class Verdict:
    aligned: bool
    reason: str
    raw: RawResponse


def _parse_verdict(raw: RawResponse) -> Verdict:
    lines = [line.strip() for line in raw.text.splitlines() if line.strip()]
    if not lines:
        raise VerdictUnparseable("alignment reply is empty", raw)
    final = lines[-1]
    if final == "VERDICT: ALIGNED":
        return Verdict(aligned=True, reason="", raw=raw)
    prefix = "VERDICT: MISALIGNED:"
    if final.startswith(prefix):
        return Verdict(aligned=False, reason=final[len(prefix):].strip(), raw=raw)
    raise VerdictUnparseable(f"final line {final!r} is not a verdict", raw)


def verify_alignment(
    config: ConfigDocument,
    request: GenerationRequest,
    provider: Provider,
    params: SamplingParams,
    metadata: Mapping[str, str] | None = None,
) -> Verdict:
    """One reasoning call judging whether a configuration matches its intent.

    The verdict is read from the reply's final non-empty line; anything the
    model says before that line is ignored.
    """
    user_message = "\n\n".join(
        [
            f"## User intent\n{request.intent}",
            f"## Task\n{request.prompt}",
            f"## Generated configuration\n{serialize_config(config)}",
            COT_SUFFIX,
        ]
    )
    payload = PromptPayload(
        system_instructions=ALIGNMENT_HEADER,
        user_message=user_message,
        metadata=dict(metadata or {}),
    )
    raw = complete(payload, clamp_for_determinism(params), provider)
    return _parse_verdict(raw)


def load_shot_library(root: Path | str, system: str) -> tuple[FewShotExample, ...]:
    """Few-shot examples for ``system`` from <root>/<system>/*.yaml, sorted by filename.

    Each file holds ``prompt``, ``intent``, ``correct_output`` and
    optionally ``incorrect_output`` with a ``defect_note``.
    """
    directory = Path(root) / system
    if not directory.is_dir():
        return ()
    shots = []
    for path in sorted(directory.glob("*.yaml")):
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        if not isinstance(data, dict):
            raise ValueError(f"shot file {path} must be a YAML mapping")

        def _as_text(value) -> str:
            if isinstance(value, dict):
                return yaml.safe_dump(value, default_flow_style=False, indent=2, sort_keys=False)
            return str(value) if value is not None else ""

        try:
            shots.append(
                FewShotExample(
                    prompt=str(data.get("prompt", "")),
                    intent=str(data.get("intent", "")),
                    correct_output=_as_text(data.get("correct_output")),
                    incorrect_output=_as_text(data.get("incorrect_output")),
                    defect_note=str(data.get("defect_note", "")),
                )
            )
        except ValueError as exc:
            raise ValueError(f"shot file {path}: {exc}") from exc
    return tuple(shots)
