"""Readers and writers for every on-disk format.

Formats (UTF-8, dot-decimal):

* corpus / queries TSV: ``id<TAB>text``
* qrels: ``query_id 0 doc_id grade``
* run: ``query_id Q0 doc_id rank score tag``, score with 6 decimals
* vectors: ``#vectors<TAB>version=1<TAB>kind=..<TAB>dim=..<TAB>count=..`` then
  ``id<TAB>v1 v2 ...`` (dense) or ``id<TAB>term:weight ...`` (sparse), floats
  in shortest round-trip form
* checkpoint: ``LOLCKPT\\0`` magic, uint32 version, uint64 header length,
  JSON header (config + tensor names/shapes/offsets), raw little-endian float64
* vocabulary TSV: ``token<TAB>id``
* config: JSON object with a ``schema_version`` key
"""

from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .core import DENSE, Document, Query, RankedList, RelevanceJudgments, VectorRepr
from .reformulator import ReformulatorConfig, ReformulatorParams

PathLike = Union[str, Path]

VECTORS_VERSION = 1
CHECKPOINT_VERSION = 1
CONFIG_SCHEMA_VERSION = 1
CHECKPOINT_MAGIC = b"LOLCKPT\0"


class FormatError(ValueError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class CheckpointError(ValueError):
    pass


def _lines(path: PathLike):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if line.strip():
                yield line_no, line


def _write_lines(path: PathLike, lines: Iterable[str]) -> None:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in lines:
                fh.write(line)
                fh.write("\n")
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc


# -- tokenization ---------------------------------------------------------------

def tokenize(text: str) -> List[str]:
    return text.lower().split()


class Vocabulary:
    """Token <-> id map; ids are assigned in first-seen order."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.token_to_id: Dict[str, int] = {}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.token_to_id:
            self.token_to_id[token] = len(self.token_to_id)
        return self.token_to_id[token]

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocabulary":
        vocab = cls()
        for text in texts:
            for tok in tokenize(text):
                vocab.add(tok)
        return vocab

    def encode(self, text: str, strict: bool = False) -> Tuple[int, ...]:
        ids = []
        for tok in tokenize(text):
            if tok in self.token_to_id:
                ids.append(self.token_to_id[tok])
            elif strict:
                raise KeyError(tok)
        return tuple(ids)

    def decode(self, ids: Sequence[int]) -> str:
        inverse = {i: t for t, i in self.token_to_id.items()}
        return " ".join(inverse[i] for i in ids)

    def __len__(self) -> int:
        return len(self.token_to_id)


def synthetic_vocabulary(size: int) -> Vocabulary:
    return Vocabulary([f"t{i}" for i in range(size)])


def read_vocabulary(path: PathLike) -> Vocabulary:
    vocab = Vocabulary()
    for line_no, line in _lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(path, line_no, "expected 'token<TAB>id'")
        try:
            idx = int(parts[1])
        except ValueError:
            raise FormatError(path, line_no, f"id field {parts[1]!r} is not an integer") from None
        if idx != len(vocab):
            raise FormatError(path, line_no, f"ids must be consecutive from 0, got {idx}")
        vocab.add(parts[0])
    return vocab


def write_vocabulary(vocab: Vocabulary, path: PathLike) -> None:
    _write_lines(path, (f"{t}\t{i}" for t, i in vocab.token_to_id.items()))


def encode_sparse(token_ids: Sequence[int], vocab_size: int) -> VectorRepr:
    """Sublinear term frequency (1 + ln tf), L2-normalised."""
    tf: Dict[int, int] = {}
    for t in token_ids:
        tf[t] = tf.get(t, 0) + 1
    if not tf:
        return VectorRepr.sparse({}, vocab_size)
    weights = {t: 1.0 + math.log(c) for t, c in tf.items()}
    norm = math.sqrt(math.fsum(w * w for w in weights.values()))
    return VectorRepr.sparse({t: w / norm for t, w in weights.items()}, vocab_size)


# -- corpus / queries -------------------------------------------------------------

def _read_id_text(path: PathLike, what: str) -> List[Tuple[str, str]]:
    rows, seen = [], set()
    for line_no, line in _lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(path, line_no, f"expected '{what}_id<TAB>text', got {len(parts)} fields")
        ident, text = parts
        if not ident:
            raise FormatError(path, line_no, f"empty {what}_id")
        if ident in seen:
            raise FormatError(path, line_no, f"duplicate {what}_id {ident!r}")
        seen.add(ident)
        rows.append((ident, text))
    return rows


def read_id_text(path: PathLike, what: str = "doc") -> List[Tuple[str, str]]:
    return _read_id_text(path, what)


def _attach(rows, vectors: Optional[Mapping[str, VectorRepr]], vocab: Optional[Vocabulary], vocab_size, path):
    out = []
    for ident, text in rows:
        tokens = vocab.encode(text) if vocab is not None else ()
        if vectors is not None:
            if ident not in vectors:
                raise ValueError(f"{path}: no vector for {ident!r}")
            vec = vectors[ident]
        else:
            if vocab is None:
                raise ValueError("either vectors or a vocabulary is required")
            vec = encode_sparse(tokens, vocab_size or len(vocab))
        out.append((ident, tokens, vec))
    return out


def read_corpus(path: PathLike, vectors: Optional[Mapping[str, VectorRepr]] = None,
                vocab: Optional[Vocabulary] = None, vocab_size: Optional[int] = None) -> List[Document]:
    """Documents in file order. Without ``vectors`` the text is sparse-encoded."""
    return [Document(i, t, v) for i, t, v in _attach(_read_id_text(path, "doc"), vectors, vocab, vocab_size, path)]


def read_queries(path: PathLike, vectors: Optional[Mapping[str, VectorRepr]] = None,
                 vocab: Optional[Vocabulary] = None, vocab_size: Optional[int] = None) -> List[Query]:
    return [Query(i, t, v) for i, t, v in _attach(_read_id_text(path, "query"), vectors, vocab, vocab_size, path)]


def _clean_text(text: str) -> str:
    return " ".join(text.replace("\t", " ").split())


def write_id_text(rows: Iterable[Tuple[str, str]], path: PathLike) -> None:
    _write_lines(path, (f"{i}\t{_clean_text(t)}" for i, t in rows))


def write_corpus(docs: Sequence[Document], path: PathLike, vocab: Vocabulary) -> None:
    write_id_text(((d.doc_id, vocab.decode(d.text)) for d in docs), path)


def write_queries(queries: Sequence[Query], path: PathLike, vocab: Vocabulary) -> None:
    write_id_text(((q.query_id, vocab.decode(q.text)) for q in queries), path)


# -- qrels ------------------------------------------------------------------------

def read_qrels(path: PathLike) -> RelevanceJudgments:
    grades = {}
    for line_no, line in _lines(path):
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(path, line_no, f"expected 'query_id 0 doc_id grade', got {len(parts)} fields")
        qid, _, did, grade = parts
        try:
            g = int(grade)
        except ValueError:
            raise FormatError(path, line_no, f"grade field {grade!r} is not an integer") from None
        if g < 0:
            raise FormatError(path, line_no, f"grade field {grade!r} is negative")
        if (qid, did) in grades:
            raise FormatError(path, line_no, f"duplicate judgment for ({qid}, {did})")
        grades[(qid, did)] = g
    return RelevanceJudgments(grades)


def write_qrels(judgments: RelevanceJudgments, path: PathLike) -> None:
    _write_lines(path, (f"{q} 0 {d} {g}" for q, d, g in judgments.items()))


# -- runs -------------------------------------------------------------------------

def format_score(score: float) -> str:
    return f"{score:.6f}"


def read_run(path: PathLike) -> Dict[str, RankedList]:
    """Ranked lists keyed by query id, in first-appearance order."""
    entries: Dict[str, List[Tuple[str, float]]] = {}
    tags: Dict[str, str] = {}
    last_rank: Dict[str, int] = {}
    for line_no, line in _lines(path):
        parts = line.split()
        if len(parts) != 6:
            raise FormatError(path, line_no, f"expected 'query_id Q0 doc_id rank score tag', got {len(parts)} fields")
        qid, _, did, rank_s, score_s, tag = parts
        try:
            rank = int(rank_s)
        except ValueError:
            raise FormatError(path, line_no, f"rank field {rank_s!r} is not an integer") from None
        try:
            score = float(score_s)
        except ValueError:
            raise FormatError(path, line_no, f"score field {score_s!r} is not a number") from None
        if not math.isfinite(score):
            raise FormatError(path, line_no, f"score field {score_s!r} is not finite")
        if rank <= last_rank.get(qid, 0):
            raise FormatError(path, line_no, f"rank field {rank} does not increase for query {qid}")
        lst = entries.setdefault(qid, [])
        if lst and score > lst[-1][1]:
            raise FormatError(path, line_no, f"score field {score_s} increases with rank for query {qid}")
        if any(d == did for d, _ in lst):
            raise FormatError(path, line_no, f"doc_id {did!r} repeated for query {qid}")
        last_rank[qid] = rank
        tags.setdefault(qid, tag)
        lst.append((did, score))
    return {q: RankedList(q, tuple(e), tags[q]) for q, e in entries.items()}


def write_run(runs: Union[Mapping[str, RankedList], Sequence[RankedList]], path: PathLike, tag: Optional[str] = None) -> None:
    lists = list(runs.values()) if isinstance(runs, Mapping) else list(runs)
    if not lists:
        raise ValueError("write_run needs at least one ranked list")

    def lines():
        for run in lists:
            t = tag or run.produced_by or "run"
            for rank, (did, score) in enumerate(run.entries, start=1):
                yield f"{run.query_id} Q0 {did} {rank} {format_score(score)} {t}"

    _write_lines(path, lines())


def round_run(run: RankedList) -> RankedList:
    """The ranked list as it reads back from a run file."""
    return RankedList(run.query_id, tuple((d, float(format_score(s))) for d, s in run.entries), run.produced_by)


# -- vectors ----------------------------------------------------------------------

_HEADER_RE = re.compile(r"^#vectors\tversion=(\d+)\tkind=(dense|sparse)\tdim=(\d+)\tcount=(\d+)$")


def write_vectors(items: Sequence[Tuple[str, VectorRepr]], path: PathLike) -> None:
    items = list(items)
    if not items:
        raise ValueError("write_vectors needs at least one vector")
    kind, dim = items[0][1].kind, items[0][1].dim

    def lines():
        yield f"#vectors\tversion={VECTORS_VERSION}\tkind={kind}\tdim={dim}\tcount={len(items)}"
        for ident, vec in items:
            if vec.kind != kind or vec.dim != dim:
                raise ValueError(f"vector {ident!r} does not match {kind}/{dim}")
            if kind == DENSE:
                body = " ".join(repr(float(x)) for x in vec.values)
            else:
                body = " ".join(f"{t}:{w!r}" for t, w in sorted(vec.entries.items()))
            yield f"{ident}\t{body}"

    _write_lines(path, lines())


def read_vectors(path: PathLike) -> Dict[str, VectorRepr]:
    out: Dict[str, VectorRepr] = {}
    header = None
    for line_no, line in _lines(path):
        if header is None:
            m = _HEADER_RE.match(line)
            if not m:
                raise FormatError(path, line_no, "missing or malformed '#vectors' header")
            version, kind, dim, count = int(m.group(1)), m.group(2), int(m.group(3)), int(m.group(4))
            if version != VECTORS_VERSION:
                raise FormatError(path, line_no, f"vectors version {version}, expected {VECTORS_VERSION}")
            header = (kind, dim, count)
            continue
        kind, dim, _ = header
        ident, _, body = line.partition("\t")
        if ident in out:
            raise FormatError(path, line_no, f"duplicate id {ident!r}")
        try:
            if kind == DENSE:
                vals = [float(x) for x in body.split()]
                if len(vals) != dim:
                    raise FormatError(path, line_no, f"expected {dim} values, got {len(vals)}")
                out[ident] = VectorRepr.dense(vals)
            else:
                entries = {}
                for tok in body.split():
                    t, _, w = tok.partition(":")
                    entries[int(t)] = float(w)
                out[ident] = VectorRepr.sparse(entries, dim)
        except FormatError:
            raise
        except ValueError as exc:
            raise FormatError(path, line_no, f"bad vector entry: {exc}") from None
    if header is None:
        return out
    if len(out) != header[2]:
        raise FormatError(path, 0, f"header promises {header[2]} vectors, found {len(out)}")
    return out


# -- checkpoints ------------------------------------------------------------------

def checkpoint_bytes(params: ReformulatorParams, metadata: Optional[dict] = None) -> bytes:
    names = sorted(params.tensors)
    tensors, offset = [], 0
    for name in names:
        arr = params.tensors[name]
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "dtype": "<f8",
        "tensors": tensors,
        "data_bytes": offset,
        "metadata": metadata or {},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(params.tensors[n], dtype="<f8").tobytes() for n in names)
    return CHECKPOINT_MAGIC + struct.pack("<IQ", CHECKPOINT_VERSION, len(head)) + head + body


def save_checkpoint(params: ReformulatorParams, path: PathLike, metadata: Optional[dict] = None) -> None:
    data = checkpoint_bytes(params, metadata)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise OSError(f"failed writing checkpoint {path}: {exc}") from exc


def load_checkpoint(path: PathLike, with_metadata: bool = False):
    data = Path(path).read_bytes()
    prefix = len(CHECKPOINT_MAGIC) + 12
    if len(data) < prefix or not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic or truncated header)")
    version, head_len = struct.unpack("<IQ", data[len(CHECKPOINT_MAGIC):prefix])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})")
    if len(data) < prefix + head_len:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(data[prefix:prefix + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint header: {exc}") from None
    if header.get("format_version") != version:
        raise CheckpointError(f"{path}: header version {header.get('format_version')} disagrees with {version}")
    body = data[prefix + head_len:]
    if len(body) != header["data_bytes"]:
        raise CheckpointError(f"{path}: truncated checkpoint ({len(body)} of {header['data_bytes']} data bytes)")
    tensors = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=t["offset"])
        tensors[t["name"]] = arr.reshape(t["shape"]).astype(np.float64)
    cfg = dict(header["config"])
    params = ReformulatorParams(ReformulatorConfig(**cfg), tensors)
    if with_metadata:
        return params, header["metadata"]
    return params


# -- config -----------------------------------------------------------------------

def read_config(path: PathLike) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    version = doc.get("schema_version")
    if version != CONFIG_SCHEMA_VERSION:
        raise ValueError(f"{path}: config schema_version {version!r}, expected {CONFIG_SCHEMA_VERSION}")
    return {k: v for k, v in doc.items() if k != "schema_version"}


def write_config(values: Mapping, path: PathLike) -> None:
    doc = {"schema_version": CONFIG_SCHEMA_VERSION, **values}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- metrics log ------------------------------------------------------------------

METRICS_COLUMNS = ("epoch", "depth", "dev_mrr@10", "train_loss", "train_lcr", "selection", "revisions")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if v is None:
        return "-"
    if isinstance(v, str):
        return v
    return f"{float(v):.8f}"


def write_table(rows: Sequence[Mapping], columns: Sequence[str], path: PathLike) -> None:
    """Tab-separated table with a header row; floats with 8 decimals."""
    _write_lines(path, ["\t".join(columns)] + ["\t".join(_fmt(r.get(c)) for c in columns) for r in rows])


def read_table(path: PathLike) -> List[Dict[str, str]]:
    rows, header = [], None
    for line_no, line in _lines(path):
        parts = line.split("\t")
        if header is None:
            header = parts
            continue
        if len(parts) != len(header):
            raise FormatError(path, line_no, f"expected {len(header)} columns, got {len(parts)}")
        rows.append(dict(zip(header, parts)))
    return rows
