"""SQL keyword lexing and keyword-frequency similarity.

A statement is represented by the multiset of reserved-keyword occurrences
outside string literals, quoted identifiers, and comments. Those sparse
count vectors drive cosine-similarity ranking of few-shot exemplars.
No SQL grammar is involved; this is a lexical view only.
"""

from __future__ import annotations

import hashlib
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

logger = logging.getLogger(__name__)

_DEFAULT_VOCAB_RESOURCE = "sqlite_keywords.txt"
_VERSION_COMMENT_PREFIX = "# version:"

_WORD_START = frozenset("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_WORD_CHARS = _WORD_START | frozenset("0123456789$")
_DIGITS = frozenset("0123456789")
# Once a number starts, letters/dots may follow (1e5, 1.5, 0x1F); none of
# that may be mistaken for a keyword.
_NUMBER_CHARS = _WORD_CHARS | frozenset(".")


class VocabularyMismatchError(ValueError):
    """Raised when vectors from different vocabulary versions are compared."""


@dataclass(frozen=True)
class KeywordVocabulary:
    """Ordered, versioned keyword list defining the vector feature space."""

    keywords: tuple[str, ...]
    version: str
    _members: frozenset[str] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(set(self.keywords)) != len(self.keywords):
            dupes = [k for k, n in Counter(self.keywords).items() if n > 1]
            raise ValueError(f"duplicate keywords in vocabulary: {dupes}")
        object.__setattr__(self, "_members", frozenset(self.keywords))

    def __contains__(self, word: str) -> bool:
        return word in self._members

    def __len__(self) -> int:
        return len(self.keywords)

    @classmethod
    def from_keywords(cls, keywords: Iterable[str], version: str) -> "KeywordVocabulary":
        return cls(tuple(k.upper() for k in keywords), version)

    @classmethod
    def from_text(cls, text: str, version: str | None = None) -> "KeywordVocabulary":
        """Parse the one-keyword-per-line format (``#`` comments allowed).

        A ``# version: <tag>`` comment sets the version; otherwise the tag is
        derived from a content hash so distinct files never silently compare.
        """
        keywords: list[str] = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if version is None and line.lower().startswith(_VERSION_COMMENT_PREFIX):
                    version = line[len(_VERSION_COMMENT_PREFIX):].strip()
                continue
            keywords.append(line.upper())
        if version is None:
            digest = hashlib.sha256("\n".join(keywords).encode("utf-8")).hexdigest()
            version = f"sha256:{digest[:12]}"
        return cls(tuple(keywords), version)

    @classmethod
    def load(cls, path: str | Path) -> "KeywordVocabulary":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> "KeywordVocabulary":
        global _DEFAULT_VOCAB
        if _DEFAULT_VOCAB is None:
            text = (
                resources.files("sqlcot.data")
                .joinpath(_DEFAULT_VOCAB_RESOURCE)
                .read_text(encoding="utf-8")
            )
            _DEFAULT_VOCAB = cls.from_text(text)
        return _DEFAULT_VOCAB


_DEFAULT_VOCAB: KeywordVocabulary | None = None


@dataclass(frozen=True)
class SqlVector:
    """Sparse keyword→count map; absent keys are zero."""

    counts: dict[str, int]
    vocab_version: str

    def __post_init__(self) -> None:
        bad = {k: v for k, v in self.counts.items() if v < 1}
        if bad:
            raise ValueError(f"vector counts must be >= 1 for present keys: {bad}")

    @property
    def norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.counts.values()))

    def to_dict(self) -> dict:
        return {"counts": dict(sorted(self.counts.items())), "vocab_version": self.vocab_version}

    @classmethod
    def from_dict(cls, data: dict) -> "SqlVector":
        return cls(counts=dict(data["counts"]), vocab_version=data["vocab_version"])


class KeywordHit(NamedTuple):
    keyword: str
    start: int
    end: int
    depth: int


def scan_keywords(sql: str, vocab: KeywordVocabulary | None = None) -> list[KeywordHit]:
    """Scan ``sql`` for vocabulary keywords with positions and paren depth.

    The scanner is total over byte strings. It skips:

    * single-quoted string literals (``''`` escapes),
    * quoted identifiers — double quotes, backticks, ``[...]``,
    * ``--`` line comments and ``/* */`` block comments.

    Identifiers merely containing a keyword (``selected_col``) never match.
    An unterminated literal or comment consumes the rest of the input and is
    reported as a warning.
    """
    if vocab is None:
        vocab = KeywordVocabulary.default()
    hits: list[KeywordHit] = []
    depth = 0
    i = 0
    n = len(sql)
    while i < n:
        ch = sql[i]
        if ch == "'" or ch == '"':
            closer = ch
            j = i + 1
            while j < n:
                if sql[j] == closer:
                    if j + 1 < n and sql[j + 1] == closer:  # doubled escape
                        j += 2
                        continue
                    break
                j += 1
            if j >= n:
                logger.warning("unterminated quoted region starting at offset %d", i)
                break
            i = j + 1
        elif ch == "`":
            j = sql.find("`", i + 1)
            if j < 0:
                logger.warning("unterminated backtick identifier at offset %d", i)
                break
            i = j + 1
        elif ch == "[":
            j = sql.find("]", i + 1)
            if j < 0:
                logger.warning("unterminated bracket identifier at offset %d", i)
                break
            i = j + 1
        elif ch == "-" and i + 1 < n and sql[i + 1] == "-":
            j = sql.find("\n", i + 2)
            i = n if j < 0 else j + 1
        elif ch == "/" and i + 1 < n and sql[i + 1] == "*":
            j = sql.find("*/", i + 2)
            if j < 0:
                logger.warning("unterminated block comment at offset %d", i)
                break
            i = j + 2
        elif ch == "(":
            depth += 1
            i += 1
        elif ch == ")":
            depth = max(0, depth - 1)
            i += 1
        elif ch in _WORD_START:
            j = i + 1
            while j < n and sql[j] in _WORD_CHARS:
                j += 1
            word = sql[i:j].upper()
            if word in vocab:
                hits.append(KeywordHit(word, i, j, depth))
            i = j
        elif ch in _DIGITS:
            j = i + 1
            while j < n and sql[j] in _NUMBER_CHARS:
                j += 1
            i = j
        else:
            i += 1
    return hits


def tokenize_keywords(sql: str, vocab: KeywordVocabulary | None = None) -> list[str]:
    """Return in-order, uppercase keyword occurrences of ``sql``."""
    return [hit.keyword for hit in scan_keywords(sql, vocab)]


def vectorize(sql: str, vocab: KeywordVocabulary | None = None) -> SqlVector:
    """Build the sparse keyword-frequency vector of ``sql``."""
    if vocab is None:
        vocab = KeywordVocabulary.default()
    counts = Counter(tokenize_keywords(sql, vocab))
    return SqlVector(counts=dict(counts), vocab_version=vocab.version)


def cosine(a: SqlVector, b: SqlVector) -> float:
    """Cosine similarity in [0, 1]; 0.0 when either vector is all-zero.

    Counts are integers, so the defining ratio is checked exactly: positive
    scalar multiples score exactly 1.0 and nothing else can reach it.
    """
    if a.vocab_version != b.vocab_version:
        raise VocabularyMismatchError(
            f"vocabulary mismatch: {a.vocab_version!r} vs {b.vocab_version!r}"
        )
    if not a.counts or not b.counts:
        return 0.0
    small, large = (a.counts, b.counts) if len(a.counts) <= len(b.counts) else (b.counts, a.counts)
    dot = sum(v * large.get(k, 0) for k, v in small.items())
    if dot == 0:
        return 0.0
    sq_a = sum(v * v for v in a.counts.values())
    sq_b = sum(v * v for v in b.counts.values())
    if dot * dot == sq_a * sq_b:
        return 1.0
    return min(1.0, dot / math.sqrt(sq_a * sq_b))


def has_toplevel_order_by(sql: str, vocab: KeywordVocabulary | None = None) -> bool:
    """Heuristic: an ORDER keyword at paren depth 0 outside literals/comments."""
    return any(h.keyword == "ORDER" and h.depth == 0 for h in scan_keywords(sql, vocab))


def rank_examples(
    query_sql: str,
    repo: Sequence,
    n: int,
    vocab: KeywordVocabulary | None = None,
    exclude_instance_id: str | None = None,
):
    """Top-``n`` repository records by cosine against ``query_sql``'s vector.

    Records need ``sql_vector``, ``instance_id``, and ``key`` attributes.
    Ordering is fully deterministic: descending score, then ascending
    instance_id, then ascending record key. A record whose instance_id equals
    ``exclude_instance_id`` is never returned (no self-leakage).
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return []
    if vocab is None:
        vocab = KeywordVocabulary.default()
    query_vec = vectorize(query_sql, vocab)
    scored = [
        (cosine(query_vec, record.sql_vector), record)
        for record in repo
        if record.instance_id != exclude_instance_id
    ]
    scored.sort(key=lambda item: (-item[0], item[1].instance_id, item[1].key))
    return [record for _, record in scored[:n]]
