"""Parse Stack Exchange dumps and TSV files into tag-question bipartite graphs."""

from __future__ import annotations

import html
import io
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Sequence, TextIO
from xml.parsers import expat

import numpy as np
import scipy.sparse as sp

from .errors import DataError, ParseError

logger = logging.getLogger(__name__)

MIN_TAGS = 1
MAX_TAGS = 5
QUESTION_POST_TYPE = "1"


@dataclass(frozen=True)
class CommunityDataset:
    """Questions of one community, each with its parsed tag list.

    ``rejected`` maps a reason ("too_many_tags", "no_tags", ...) to the number
    of rows dropped for it.
    """

    name: str
    records: tuple[tuple[str, tuple[str, ...]], ...]
    rejected: dict[str, int] = field(default_factory=dict)

    @property
    def n_rejected(self) -> int:
        return sum(self.rejected.values())

    def __len__(self) -> int:
        return len(self.records)


def decode_tag_attribute(raw: str) -> list[str]:
    """Split a ``Tags`` attribute value into tag names.

    Accepts the classic ``<a><b>`` form and the pipe-delimited ``|a|b|`` form
    used by newer dumps. Names are HTML-unescaped.

    Raises:
        ParseError: if the bracket structure is unbalanced or a name is empty.
    """
    if not raw:
        return []
    if raw.startswith("|"):
        if not raw.endswith("|") or len(raw) < 3:
            raise ParseError(f"unbalanced tag list {raw!r}")
        names = raw[1:-1].split("|")
    else:
        names = []
        i = 0
        while i < len(raw):
            if raw[i] != "<":
                raise ParseError(f"unexpected text {raw[i:i + 20]!r} in tag list")
            j = raw.find(">", i + 1)
            if j == -1:
                raise ParseError(f"unterminated tag {raw[i:i + 20]!r}")
            names.append(raw[i + 1 : j])
            i = j + 1
    out = []
    for name in names:
        if "<" in name:
            raise ParseError(f"unbalanced tag {name!r}")
        name = html.unescape(name).strip()
        if not name or "<" in name or ">" in name:
            raise ParseError(f"invalid tag name {name!r} in {raw!r}")
        out.append(name)
    return out


class _RecordCollector:
    def __init__(self):
        self.records: list[tuple[str, tuple[str, ...]]] = []
        self.rejected: Counter[str] = Counter()
        self.seen: set[str] = set()

    def add(self, qid, tags):
        if not qid:
            self.rejected["missing_id"] += 1
        elif qid in self.seen:
            self.rejected["duplicate_id"] += 1
        elif len(tags) < MIN_TAGS:
            self.rejected["no_tags"] += 1
        elif len(tags) > MAX_TAGS:
            self.rejected["too_many_tags"] += 1
        else:
            self.seen.add(qid)
            self.records.append((qid, tuple(tags)))

    def dataset(self, name):
        if self.rejected:
            logger.warning("%s: rejected %d records %s", name, sum(self.rejected.values()), dict(self.rejected))
        return CommunityDataset(name, tuple(self.records), dict(self.rejected))


def parse_posts_xml(stream: BinaryIO, community_name: str, chunk_size: int = 1 << 20) -> CommunityDataset:
    """Stream ``row`` elements of a ``Posts.xml`` dump into a dataset.

    Only questions (``PostTypeId="1"``) are kept. Question rows with a bad or
    out-of-range ``Tags`` attribute are counted in ``rejected``.

    Raises:
        ParseError: if the stream cannot be read or tokenized. ``offset`` is the
            byte position of the failure.
    """
    collector = _RecordCollector()
    parser = expat.ParserCreate()
    parser.buffer_text = True

    def start(name, attrs):
        if name != "row" or attrs.get("PostTypeId") != QUESTION_POST_TYPE:
            return
        raw = attrs.get("Tags", "")
        if not raw:
            collector.rejected["no_tags"] += 1
            return
        try:
            tags = decode_tag_attribute(raw)
        except ParseError:
            collector.rejected["bad_tags"] += 1
            return
        collector.add(attrs.get("Id", ""), tags)

    parser.StartElementHandler = start
    consumed = 0
    try:
        while True:
            try:
                chunk = stream.read(chunk_size)
            except OSError as exc:
                raise ParseError(f"cannot read stream: {exc}", offset=consumed) from exc
            if not chunk:
                break
            consumed += len(chunk)
            parser.Parse(chunk, False)
        parser.Parse(b"", True)
    except expat.ExpatError as exc:
        raise ParseError(f"malformed XML: {expat.ErrorString(exc.code)}", offset=parser.ErrorByteIndex) from exc
    return collector.dataset(community_name)


def parse_tsv(stream: BinaryIO, community_name: str) -> CommunityDataset:
    """Read ``question_id<TAB>tag1,tag2,...`` lines.

    Lines with zero or more than five tags are rejected and counted; a repeated
    question id is fatal.
    """
    collector = _RecordCollector()
    offset = 0
    for lineno, raw in enumerate(stream, 1):
        try:
            line = raw.decode("utf-8").rstrip("\r\n")
        except UnicodeDecodeError as exc:
            raise ParseError(f"invalid UTF-8 on line {lineno}", offset=offset + exc.start) from exc
        offset += len(raw)
        if not line.strip():
            continue
        qid, _, tag_field = line.partition("\t")
        qid = qid.strip()
        if qid in collector.seen:
            raise DataError(f"duplicate question id {qid!r} on line {lineno}")
        tags = [t.strip() for t in tag_field.split(",") if t.strip()]
        if any("<" in t or ">" in t for t in tags):
            collector.rejected["bad_tags"] += 1
            continue
        collector.add(qid, tags)
    return collector.dataset(community_name)


class BipartiteTagGraph:
    """Immutable tag-question incidence structure.

    Stored tag-major in CSR form: the questions of tag ``t`` are
    ``indices[indptr[t]:indptr[t + 1]]``, sorted ascending. Tag ids follow the
    order of ``tag_names``.
    """

    def __init__(
        self,
        tag_names: Sequence[str],
        n_questions: int,
        indptr,
        indices,
        question_ids: Sequence[str] | None = None,
        *,
        allow_empty_questions: bool = False,
        n_collapsed_duplicates: int = 0,
    ):
        self.tag_names = tuple(tag_names)
        self.n_questions = int(n_questions)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.indptr.flags.writeable = False
        self.indices.flags.writeable = False
        if question_ids is None:
            question_ids = [f"q{i}" for i in range(self.n_questions)]
        self.question_ids = tuple(question_ids)
        self.n_collapsed_duplicates = n_collapsed_duplicates
        self._check(allow_empty_questions)
        self._question_major = None

    def _check(self, allow_empty_questions):
        n_tags = len(self.tag_names)
        if self.indptr.shape != (n_tags + 1,) or self.indptr[0] != 0 or self.indptr[-1] != len(self.indices):
            raise DataError("malformed incidence pointers")
        if np.any(np.diff(self.indptr) < 0):
            raise DataError("malformed incidence pointers")
        if len(self.question_ids) != self.n_questions:
            raise DataError("question id count does not match n_questions")
        if len(self.indices):
            if self.indices.min() < 0 or self.indices.max() >= self.n_questions:
                raise DataError("question index out of range")
            steps = np.diff(self.indices)
            # within each tag segment indices must strictly increase
            inner = np.ones(len(steps), dtype=bool)
            bounds = self.indptr[1:-1]
            bounds = bounds[(bounds > 0) & (bounds < len(self.indices))]
            inner[bounds - 1] = False
            if np.any(steps[inner] <= 0):
                raise DataError("duplicate or unsorted (tag, question) pair")
        if not allow_empty_questions and self.n_questions:
            if np.count_nonzero(np.bincount(self.indices, minlength=self.n_questions)) != self.n_questions:
                raise DataError("graph contains questions without tags")
        assert int(self.frequencies.sum()) == self.m

    @classmethod
    def from_incidence(cls, tag_names, n_questions, incidence: Iterable[Iterable[int]], **kwargs) -> BipartiteTagGraph:
        """Build from one iterable of question indices per tag."""
        sets = [np.unique(np.asarray(list(q), dtype=np.int64)) for q in incidence]
        indptr = np.zeros(len(sets) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(s) for s in sets])
        indices = np.concatenate(sets) if sets else np.zeros(0, dtype=np.int64)
        return cls(tag_names, n_questions, indptr, indices, **kwargs)

    @property
    def n_tags(self) -> int:
        return len(self.tag_names)

    @property
    def m(self) -> int:
        return len(self.indices)

    @property
    def frequencies(self) -> np.ndarray:
        """Tag frequencies x_t (bipartite degree of each tag)."""
        return np.diff(self.indptr)

    def incidence(self, t: int) -> np.ndarray:
        return self.indices[self.indptr[t] : self.indptr[t + 1]]

    def tags_per_question(self) -> np.ndarray:
        return np.bincount(self.indices, minlength=self.n_questions)

    def to_sparse(self) -> sp.csr_matrix:
        """Tag-by-question 0/1 incidence matrix."""
        data = np.ones(self.m, dtype=np.int64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n_tags, self.n_questions))

    def question_tags(self) -> tuple[np.ndarray, np.ndarray]:
        """Question-major CSR ``(qptr, tags)``; tags of each question sorted."""
        if self._question_major is None:
            csc = self.to_sparse().tocsc()
            csc.sort_indices()
            self._question_major = (csc.indptr.astype(np.int64), csc.indices.astype(np.int64))
        return self._question_major

    def tag_index(self, name: str) -> int:
        try:
            return self.tag_names.index(name)
        except ValueError:
            raise KeyError(name) from None

    def __eq__(self, other):
        if not isinstance(other, BipartiteTagGraph):
            return NotImplemented
        return (
            self.tag_names == other.tag_names
            and self.n_questions == other.n_questions
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    __hash__ = None

    def __repr__(self):
        return f"BipartiteTagGraph(n_tags={self.n_tags}, n_questions={self.n_questions}, m={self.m})"


def build_bipartite(dataset: CommunityDataset) -> BipartiteTagGraph:
    """Intern tags (lexicographic ids) and questions (record order)."""
    tag_names = sorted({tag for _, tags in dataset.records for tag in tags})
    tag_id = {name: i for i, name in enumerate(tag_names)}
    rows, cols = [], []
    duplicates = 0
    for q, (_, tags) in enumerate(dataset.records):
        ids = {tag_id[t] for t in tags}
        duplicates += len(tags) - len(ids)
        rows.extend(ids)
        cols.extend([q] * len(ids))
    if duplicates:
        logger.warning("%s: collapsed %d duplicate tags within questions", dataset.name, duplicates)
    order = np.lexsort((np.asarray(cols, dtype=np.int64), np.asarray(rows, dtype=np.int64)))
    rows_arr = np.asarray(rows, dtype=np.int64)[order]
    indices = np.asarray(cols, dtype=np.int64)[order]
    indptr = np.zeros(len(tag_names) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(np.bincount(rows_arr, minlength=len(tag_names)))
    return BipartiteTagGraph(
        tag_names,
        len(dataset.records),
        indptr,
        indices,
        [qid for qid, _ in dataset.records],
        n_collapsed_duplicates=duplicates,
    )


@dataclass(frozen=True)
class GraphSummary:
    n_tags: int
    n_questions: int
    m: int
    min_frequency: int | None
    max_frequency: int | None

    def to_dict(self) -> dict:
        return {
            "n_tags": self.n_tags,
            "n_questions": self.n_questions,
            "m": self.m,
            "min_frequency": self.min_frequency,
            "max_frequency": self.max_frequency,
        }


def summary(graph: BipartiteTagGraph) -> GraphSummary:
    freqs = graph.frequencies
    if graph.n_tags == 0:
        return GraphSummary(0, graph.n_questions, 0, None, None)
    return GraphSummary(graph.n_tags, graph.n_questions, graph.m, int(freqs.min()), int(freqs.max()))


def write_tsv(graph: BipartiteTagGraph, stream: TextIO) -> None:
    """Write the canonical TSV form: one question per line, tags sorted."""
    qptr, qtags = graph.question_tags()
    names = graph.tag_names
    for q, qid in enumerate(graph.question_ids):
        tags = qtags[qptr[q] : qptr[q + 1]]
        if len(tags) == 0:
            raise DataError(f"question {qid!r} has no tags")
        stream.write(qid + "\t" + ",".join(names[t] for t in tags) + "\n")


def to_tsv_bytes(graph: BipartiteTagGraph) -> bytes:
    buf = io.StringIO()
    write_tsv(graph, buf)
    return buf.getvalue().encode("utf-8")
