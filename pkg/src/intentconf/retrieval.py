"""Documentation chunking and lexical retrieval.

Long reference material (cluster specs, application manuals) is split into
overlapping token-window chunks and indexed with a BM25 scorer so that only
the relevant slices are stuffed into a generation prompt.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_CHUNK_SIZE = 5000
DEFAULT_OVERLAP = 500
DEFAULT_TOP_K = 4

# BM25 constants; idf uses the always-positive log(1 + ...) variant so that
# extra occurrences of a query term can never lower a chunk's score.
BM25_K1 = 1.2
BM25_B = 0.75

_TOKEN_RE = re.compile(r"\w+|[^\w\s]+")
_TERM_RE = re.compile(r"[a-z0-9]+")


class InvalidChunking(ValueError):
    """Raised when overlap is not strictly smaller than the chunk size."""


def count_tokens(text: str) -> int:
    """Approximate token count: word runs plus standalone punctuation runs.

    "replicas: 2" counts as 3 (word, ":", word). The approximation is
    deterministic and monotone under concatenation; every token budget in
    this package (chunk windows, mock usage stats, cost records) uses it.
    """
    return len(_TOKEN_RE.findall(text))


def _token_spans(text: str) -> list[tuple[int, int]]:
    return [m.span() for m in _TOKEN_RE.finditer(text)]


@dataclass(frozen=True)
class Chunk:
    """One token-window slice of a source document."""

    doc_id: str
    ordinal: int
    token_span: tuple[int, int]
    text: str


def chunk_document(
    doc: str,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    overlap: int = DEFAULT_OVERLAP,
    doc_id: str = "",
) -> list[Chunk]:
    """Split ``doc`` into windows of ``chunk_size`` tokens with ``overlap``.

    Window i covers tokens [i*stride, i*stride + chunk_size) where
    stride = chunk_size - overlap, clipped to the document end; windows are
    emitted until every token is covered. Boundaries always land on token
    boundaries.
    """
    if chunk_size <= 0:
        raise InvalidChunking(f"chunk_size must be positive, got {chunk_size}")
    if overlap < 0 or overlap >= chunk_size:
        raise InvalidChunking(
            f"overlap must satisfy 0 <= overlap < chunk_size, got {overlap}"
        )
    spans = _token_spans(doc)
    total = len(spans)
    if total == 0:
        return []
    stride = chunk_size - overlap
    chunks: list[Chunk] = []
    start = 0
    ordinal = 0
    while True:
        end = min(start + chunk_size, total)
        text = doc[spans[start][0] : spans[end - 1][1]]
        chunks.append(Chunk(doc_id=doc_id, ordinal=ordinal, token_span=(start, end), text=text))
        if end >= total:
            break
        start += stride
        ordinal += 1
    return chunks


def _terms(text: str) -> list[str]:
    return _TERM_RE.findall(text.lower())


@dataclass(frozen=True)
class RetrievalIndex:
    """Immutable BM25 index over document chunks."""

    chunks: tuple[Chunk, ...]
    term_frequencies: tuple[Counter, ...]
    document_frequencies: dict[str, int] = field(repr=False)
    chunk_lengths: tuple[int, ...] = ()
    average_length: float = 0.0


def build_index(
    docs: list[tuple[str, str]],
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    overlap: int = DEFAULT_OVERLAP,
) -> RetrievalIndex:
    """Chunk every (doc_id, text) pair and build the retrieval index."""
    if not docs:
        raise ValueError("build_index requires at least one document")
    chunks: list[Chunk] = []
    for doc_id, text in docs:
        chunks.extend(chunk_document(text, chunk_size, overlap, doc_id=doc_id))
    tfs = tuple(Counter(_terms(c.text)) for c in chunks)
    dfs: dict[str, int] = {}
    for tf in tfs:
        for term in tf:
            dfs[term] = dfs.get(term, 0) + 1
    lengths = tuple(sum(tf.values()) for tf in tfs)
    avg = (sum(lengths) / len(lengths)) if lengths else 0.0
    return RetrievalIndex(
        chunks=tuple(chunks),
        term_frequencies=tfs,
        document_frequencies=dfs,
        chunk_lengths=lengths,
        average_length=avg,
    )


def load_corpus(root: Path | str) -> list[tuple[str, str]]:
    """Read every *.md / *.txt file under ``root``; the file path is the doc id."""
    root = Path(root)
    docs = []
    for path in sorted(root.rglob("*")):
        if path.suffix.lower() in (".md", ".txt") and path.is_file():
            docs.append((str(path.relative_to(root)), path.read_text(encoding="utf-8")))
    return docs


def _score(index: RetrievalIndex, position: int, query_terms: list[str]) -> float:
    tf = index.term_frequencies[position]
    length = index.chunk_lengths[position]
    n = len(index.chunks)
    avg = index.average_length or 1.0
    score = 0.0
    for term in query_terms:
        df = index.document_frequencies.get(term, 0)
        freq = tf.get(term, 0)
        if df == 0 or freq == 0:
            continue
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        denom = freq + BM25_K1 * (1.0 - BM25_B + BM25_B * length / avg)
        score += idf * freq * (BM25_K1 + 1.0) / denom
    return score


def retrieve(index: RetrievalIndex, query: str, k: int = DEFAULT_TOP_K) -> list[Chunk]:
    """Return the top-k chunks for ``query`` by BM25 score.

    Ties are broken by (doc_id, ordinal) ascending; fewer than k chunks are
    returned only when the index holds fewer.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    query_terms = sorted(set(_terms(query)))
    ranked = sorted(
        range(len(index.chunks)),
        key=lambda i: (-_score(index, i, query_terms), index.chunks[i].doc_id, index.chunks[i].ordinal),
    )
    return [index.chunks[i] for i in ranked[:k]]
