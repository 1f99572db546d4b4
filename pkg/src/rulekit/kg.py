"""Knowledge graph store: triple loading, interning, inverse closure, adjacency.

Every relation gets a paired inverse relation (named by prefixing ``!``),
and every triple is mirrored as its inverse triple within the same split.
Base relations take even ids, their inverses the following odd id, so
``inverse_of(r) == r ^ 1``.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np
from scipy import sparse

from .errors import DataError, GraphFormatError, TripleParseError

INVERSE_MARKER = "!"

RawTriple = tuple[str, str, str]


class Triple(NamedTuple):
    head: int
    rel: int
    tail: int


def inverse_of(rel: int) -> int:
    """Id of the paired inverse relation (an involution)."""
    return rel ^ 1


def is_inverse(rel: int) -> bool:
    return bool(rel & 1)


def load_triples(path, split: str = "train") -> list[RawTriple]:
    """Read a triple TSV file: one ``head\\trelation\\ttail`` per line, UTF-8.

    Order is preserved and duplicate lines are retained; deduplication
    happens at graph build. An empty file yields an empty list. A line
    with a field count other than 3 raises :class:`TripleParseError`
    with the offending line number.
    """
    out: list[RawTriple] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 3:
                raise TripleParseError(
                    f"{path}:{lineno} ({split}): expected 3 tab-separated "
                    f"fields, got {len(fields)}"
                )
            out.append((fields[0], fields[1], fields[2]))
    return out


def _dedup_rows(rows: list[tuple[int, int, int]]) -> np.ndarray:
    seen: set[tuple[int, int, int]] = set()
    kept = []
    for row in rows:
        if row not in seen:
            seen.add(row)
            kept.append(row)
    arr = np.array(kept, dtype=np.int64) if kept else np.empty((0, 3), dtype=np.int64)
    return arr


class KnowledgeGraph:
    """Interned, inverse-closed triple store with per-relation CSR adjacency.

    Immutable after construction; all lookup structures are built eagerly
    or memoised on first use (memo writes are idempotent, so concurrent
    readers stay consistent under the GIL). Adjacency reflects the train
    split only.
    """

    def __init__(
        self,
        entity_names: list[str],
        relation_names: list[str],
        train: np.ndarray,
        valid: np.ndarray,
        test: np.ndarray,
    ):
        self.entity_names = entity_names
        self.relation_names = relation_names
        self.entity_ids = {name: i for i, name in enumerate(entity_names)}
        self.relation_ids = {name: i for i, name in enumerate(relation_names)}
        self.train = train
        self.valid = valid
        self.test = test
        self._adjacency = self._build_adjacency()
        self._positive_matrices: dict[tuple[int, str], sparse.csr_matrix] = {}
        self._all_known_tails: dict[tuple[int, int], np.ndarray] | None = None
        self._train_tails: dict[tuple[int, int], np.ndarray] | None = None
        self._train_pair_rels: dict[tuple[int, int], list[int]] | None = None
        self._out_edges: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None

    # -- basic shape --------------------------------------------------

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    def split(self, name: str) -> np.ndarray:
        try:
            return {"train": self.train, "valid": self.valid, "test": self.test}[name]
        except KeyError:
            raise DataError(f"unknown split {name!r}") from None

    def entity_id(self, name: str) -> int:
        return self.entity_ids[name]

    def relation_id(self, name: str) -> int:
        return self.relation_ids[name]

    # -- adjacency ----------------------------------------------------

    def _build_adjacency(self) -> list[sparse.csr_matrix]:
        n_e, n_r = self.n_entities, self.n_relations
        mats = []
        if len(self.train):
            rels = self.train[:, 1]
        for r in range(n_r):
            if len(self.train):
                rows = self.train[rels == r]
            else:
                rows = np.empty((0, 3), dtype=np.int64)
            data = np.ones(len(rows), dtype=np.int64)
            mat = sparse.csr_matrix(
                (data, (rows[:, 0], rows[:, 2])), shape=(n_e, n_e), dtype=np.int64
            )
            mats.append(mat)
        return mats

    def adjacency(self, rel: int) -> sparse.csr_matrix:
        """Train-split 0/1 adjacency of ``rel``: entry (h, t) is 1 iff (h, rel, t)."""
        if not 0 <= rel < self.n_relations:
            raise KeyError(f"unknown relation id {rel}")
        return self._adjacency[rel]

    # -- positives ----------------------------------------------------

    def positive_matrix(self, rel: int, scope: str = "train") -> sparse.csr_matrix:
        """Boolean matrix of known-positive (h, t) pairs for ``rel``.

        scope "train" uses the train split; "train_and_test" adds the test
        split (the analysis convention; the valid split stays out either way).
        """
        key = (rel, scope)
        cached = self._positive_matrices.get(key)
        if cached is not None:
            return cached
        if scope == "train":
            splits = [self.train]
        elif scope == "train_and_test":
            splits = [self.train, self.test]
        else:
            raise DataError(f"unknown positives scope {scope!r}")
        rows_list = [s[s[:, 1] == rel] for s in splits if len(s)]
        if rows_list:
            rows = np.concatenate(rows_list, axis=0)
        else:
            rows = np.empty((0, 3), dtype=np.int64)
        data = np.ones(len(rows), dtype=bool)
        mat = sparse.csr_matrix(
            (data, (rows[:, 0], rows[:, 2])),
            shape=(self.n_entities, self.n_entities),
            dtype=bool,
        )
        mat.sum_duplicates()
        self._positive_matrices[key] = mat
        return mat

    def all_known_tails(self, head: int, rel: int) -> np.ndarray:
        """Tails t with (head, rel, t) in train, valid or test (filtered-ranking mask)."""
        if self._all_known_tails is None:
            index: dict[tuple[int, int], list[int]] = {}
            for split in (self.train, self.valid, self.test):
                for h, r, t in split:
                    index.setdefault((int(h), int(r)), []).append(int(t))
            self._all_known_tails = {
                k: np.unique(np.array(v, dtype=np.int64)) for k, v in index.items()
            }
        return self._all_known_tails.get((head, rel), np.empty(0, dtype=np.int64))

    def train_tails(self, head: int, rel: int) -> np.ndarray:
        """Tails of (head, rel) in the train split only (negative sampling)."""
        if self._train_tails is None:
            index: dict[tuple[int, int], list[int]] = {}
            for h, r, t in self.train:
                index.setdefault((int(h), int(r)), []).append(int(t))
            self._train_tails = {
                k: np.unique(np.array(v, dtype=np.int64)) for k, v in index.items()
            }
        return self._train_tails.get((head, rel), np.empty(0, dtype=np.int64))

    def train_pair_relations(self, head: int, tail: int) -> list[int]:
        """All relations q with (head, q, tail) in the train split."""
        if self._train_pair_rels is None:
            index: dict[tuple[int, int], list[int]] = {}
            for h, r, t in self.train:
                index.setdefault((int(h), int(t)), []).append(int(r))
            self._train_pair_rels = index
        return self._train_pair_rels.get((head, tail), [])

    def out_edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Train out-edges of every entity, merged over all relations.

        Returns (indptr, rels, dsts): the edges of entity u are the slice
        ``indptr[u]:indptr[u+1]``, ordered by (relation, destination).
        """
        if self._out_edges is None:
            srcs, rels, dsts = [], [], []
            for r in range(self.n_relations):
                coo = self._adjacency[r].tocoo()
                srcs.append(coo.row)
                rels.append(np.full(coo.nnz, r, dtype=np.int64))
                dsts.append(coo.col)
            src = np.concatenate(srcs) if srcs else np.empty(0, dtype=np.int64)
            rel = np.concatenate(rels) if rels else np.empty(0, dtype=np.int64)
            dst = np.concatenate(dsts) if dsts else np.empty(0, dtype=np.int64)
            order = np.lexsort((dst, rel, src))
            src, rel, dst = src[order], rel[order], dst[order]
            indptr = np.zeros(self.n_entities + 1, dtype=np.int64)
            np.add.at(indptr, src + 1, 1)
            np.cumsum(indptr, out=indptr)
            self._out_edges = (indptr, rel, dst)
        return self._out_edges

    # -- head scopes ---------------------------------------------------

    @property
    def train_heads(self) -> np.ndarray:
        return np.unique(self.train[:, 0]) if len(self.train) else np.empty(0, np.int64)

    @property
    def test_heads(self) -> np.ndarray:
        return np.unique(self.test[:, 0]) if len(self.test) else np.empty(0, np.int64)


def build_graph(
    train: Sequence[RawTriple],
    valid: Sequence[RawTriple] = (),
    test: Sequence[RawTriple] = (),
) -> KnowledgeGraph:
    """Intern raw triples, apply the inverse closure, and index adjacency.

    Ids are assigned in first-seen order over train, then valid, then test,
    so a graph is reproducible from the same files. For each (h, r, t) the
    mirrored (t, !r, h) lands in the same split; duplicates are dropped.
    """
    entity_names: list[str] = []
    entity_ids: dict[str, int] = {}
    relation_names: list[str] = []
    relation_ids: dict[str, int] = {}

    def intern_entity(name: str) -> int:
        eid = entity_ids.get(name)
        if eid is None:
            eid = len(entity_names)
            entity_ids[name] = eid
            entity_names.append(name)
        return eid

    def intern_relation(name: str) -> int:
        if name.startswith(INVERSE_MARKER):
            raise GraphFormatError(
                f"relation name {name!r} starts with the reserved "
                f"inverse marker {INVERSE_MARKER!r}"
            )
        rid = relation_ids.get(name)
        if rid is None:
            rid = len(relation_names)
            relation_ids[name] = rid
            relation_names.append(name)
            inv_name = INVERSE_MARKER + name
            relation_ids[inv_name] = rid + 1
            relation_names.append(inv_name)
        return rid

    splits = []
    for raw in (train, valid, test):
        rows = []
        for h, r, t in raw:
            hid = intern_entity(h)
            rid = intern_relation(r)
            tid = intern_entity(t)
            rows.append((hid, rid, tid))
        splits.append(rows)

    closed = []
    for rows in splits:
        base = _dedup_rows(rows)
        mirrored = rows + [(t, r ^ 1, h) for h, r, t in rows]
        closed.append(_dedup_rows(mirrored))

    return KnowledgeGraph(entity_names, relation_names, *closed)


def load_graph_dir(
    directory,
    train_file: str = "train.txt",
    valid_file: str = "valid.txt",
    test_file: str = "test.txt",
) -> KnowledgeGraph:
    """Build a graph from the conventional three split files in a directory.

    Missing valid/test files are treated as empty splits; a missing train
    file is an error.
    """
    import os

    def read(name, split, required):
        path = os.path.join(directory, name)
        if not os.path.exists(path):
            if required:
                raise DataError(f"missing train file: {path}")
            return []
        return load_triples(path, split)

    return build_graph(
        read(train_file, "train", required=True),
        read(valid_file, "valid", required=False),
        read(test_file, "test", required=False),
    )


def write_triples(kg: KnowledgeGraph, split: str, path) -> None:
    """Write the non-inverse triples of a split as TSV, in stored order.

    Mirrored triples are omitted (they are regenerated on reload), so the
    output round-trips through :func:`load_triples` + :func:`build_graph`.
    """
    rows = kg.split(split)
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in rows:
            if is_inverse(int(r)):
                continue
            fh.write(
                f"{kg.entity_names[h]}\t{kg.relation_names[r]}\t{kg.entity_names[t]}\n"
            )
