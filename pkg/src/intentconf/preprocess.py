"""Extract and normalize YAML configuration from raw model output.

Model replies arrive as anything from clean YAML to prose-wrapped,
fence-wrapped, or truncated text. This module finds the configuration,
parses it strictly (duplicate keys are an error, the root must be a
mapping), and re-serializes it into one canonical form so downstream
diffing and deployment always see identical bytes for identical trees.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import yaml


class StructuralErrorKind(enum.Enum):
    NO_YAML_FOUND = "NoYamlFound"
    PARSE_FAILURE = "ParseFailure"
    MULTIPLE_DOCUMENTS_AMBIGUOUS = "MultipleDocumentsAmbiguous"


class StructuralError(Exception):
    """Raised when no single well-formed mapping can be recovered from a reply."""

    def __init__(
        self,
        kind: StructuralErrorKind,
        detail: str,
        line: int | None = None,
        column: int | None = None,
    ):
        super().__init__(f"{kind.value}: {detail}")
        self.kind = kind
        self.detail = detail
        self.line = line
        self.column = column


@dataclass(frozen=True)
class ConfigDocument:
    """A parsed configuration: the mapping tree plus the text it came from."""

    root: dict
    source_text: str = ""


class _UniqueKeyLoader(yaml.SafeLoader):
    """SafeLoader that rejects duplicate mapping keys instead of last-wins."""


def _construct_mapping(loader, node, deep=False):
    mapping = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if isinstance(key, (dict, list)):
            raise yaml.constructor.ConstructorError(
                None, None, "unhashable mapping key", key_node.start_mark
            )
        if key in mapping:
            raise yaml.constructor.ConstructorError(
                None,
                None,
                f"duplicate key {key!r}",
                key_node.start_mark,
            )
        mapping[key] = loader.construct_object(value_node, deep=deep)
    return mapping


_UniqueKeyLoader.add_constructor(
    yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping
)


def _mark_position(exc: yaml.YAMLError) -> tuple[int | None, int | None]:
    mark = getattr(exc, "problem_mark", None)
    if mark is None:
        return None, None
    return mark.line + 1, mark.column + 1


def _try_parse_mapping(text: str) -> dict | None:
    """Parse ``text`` as a single-document mapping; None on any failure."""
    try:
        docs = [d for d in yaml.load_all(text, Loader=_UniqueKeyLoader)]
    except yaml.YAMLError:
        return None
    non_empty = [d for d in docs if d is not None]
    if len(non_empty) != 1 or not isinstance(non_empty[0], dict):
        return None
    return non_empty[0]


def _fenced_blocks(text: str) -> list[str]:
    """Bodies of triple-backtick fences in order of appearance.

    The opening fence may carry a language tag; an unterminated fence runs
    to the end of the text.
    """
    blocks = []
    lines = text.splitlines()
    body: list[str] | None = None
    for line in lines:
        stripped = line.strip()
        if stripped.startswith("```"):
            if body is None:
                body = []
            else:
                blocks.append("\n".join(body))
                body = None
            continue
        if body is not None:
            body.append(line)
    if body is not None:
        blocks.append("\n".join(body))
    return blocks


def _largest_parsable_span(text: str) -> str | None:
    """Largest contiguous run of lines that parses as a mapping root.

    Scans spans longest-first; among equal lengths the earliest wins.
    """
    lines = text.splitlines()
    n = len(lines)
    for length in range(n, 0, -1):
        for start in range(0, n - length + 1):
            candidate = "\n".join(lines[start : start + length])
            if not candidate.strip():
                continue
            if _try_parse_mapping(candidate) is not None:
                return candidate
    return None


def extract_config_text(raw: str) -> str:
    """Pull the YAML configuration text out of a raw model reply.

    Preference order: the whole reply if it already parses as a mapping,
    then the first fenced block that does, then the largest contiguous
    line span that does.
    """
    if _try_parse_mapping(raw) is not None:
        return raw
    for block in _fenced_blocks(raw):
        if _try_parse_mapping(block) is not None:
            return block
    span = _largest_parsable_span(raw)
    if span is not None:
        return span
    raise StructuralError(
        StructuralErrorKind.NO_YAML_FOUND,
        "no contiguous region of the reply parses as a YAML mapping",
    )


def parse_config(text: str) -> ConfigDocument:
    """Parse extracted text strictly into a ConfigDocument."""
    try:
        docs = list(yaml.load_all(text, Loader=_UniqueKeyLoader))
    except yaml.YAMLError as exc:
        line, column = _mark_position(exc)
        raise StructuralError(
            StructuralErrorKind.PARSE_FAILURE, str(exc), line=line, column=column
        ) from exc
    non_empty = [d for d in docs if d is not None]
    if len(non_empty) > 1:
        raise StructuralError(
            StructuralErrorKind.MULTIPLE_DOCUMENTS_AMBIGUOUS,
            f"reply contains {len(non_empty)} YAML documents; expected exactly one",
        )
    if not non_empty:
        raise StructuralError(
            StructuralErrorKind.PARSE_FAILURE, "reply parses to an empty document"
        )
    root = non_empty[0]
    if not isinstance(root, dict):
        raise StructuralError(
            StructuralErrorKind.PARSE_FAILURE,
            f"configuration root must be a mapping, got {type(root).__name__}",
        )
    return ConfigDocument(root=root, source_text=text)


def preprocess_reply(raw: str) -> ConfigDocument:
    """extract_config_text followed by parse_config."""
    return parse_config(extract_config_text(raw))


def serialize_config(document: ConfigDocument | dict) -> str:
    """Canonical YAML form: block style, two-space indent, key order preserved."""
    root = document.root if isinstance(document, ConfigDocument) else document
    return yaml.safe_dump(
        root,
        default_flow_style=False,
        indent=2,
        sort_keys=False,
        allow_unicode=True,
    )


def document_from_tree(root: dict) -> ConfigDocument:
    if not isinstance(root, dict):
        raise StructuralError(
            StructuralErrorKind.PARSE_FAILURE,
            f"configuration root must be a mapping, got {type(root).__name__}",
        )
    return ConfigDocument(root=root, source_text=serialize_config(root))
