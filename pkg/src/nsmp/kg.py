"""Knowledge graph storage: id dictionaries, triple set, sparse boolean adjacency.

Entities and relations get dense integer ids in first-appearance order, which
makes loading deterministic without a sorted vocabulary. Per-relation adjacency
is a boolean matrix stored in compressed-row form (column indices only, all
weights implicitly 1) and built lazily because a query touches few relations.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np


class TripleLoadError(ValueError):
    """Raised for malformed or empty triple files."""


@dataclass(frozen=True)
class RelationMatrix:
    """Boolean sparse matrix in compressed-row form.

    Entry (i, j) is present iff row i's slice of `indices` contains j.
    Column indices are sorted ascending within each row and hold no
    duplicates, so `indices[indptr[i]:indptr[i+1]]` is a sorted set.
    """

    n_rows: int
    n_cols: int
    indptr: np.ndarray
    indices: np.ndarray

    @classmethod
    def from_pairs(cls, pairs: np.ndarray, n_rows: int, n_cols: int) -> "RelationMatrix":
        """Build from an (n, 2) array of (row, col) pairs (duplicates allowed)."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if pairs.size:
            if (
                pairs.min() < 0
                or pairs[:, 0].max() >= n_rows
                or pairs[:, 1].max() >= n_cols
            ):
                raise ValueError("pair indices out of range")
            order = np.lexsort((pairs[:, 1], pairs[:, 0]))
            pairs = pairs[order]
            keep = np.ones(len(pairs), dtype=bool)
            keep[1:] = np.any(pairs[1:] != pairs[:-1], axis=1)
            pairs = pairs[keep]
        counts = np.bincount(pairs[:, 0], minlength=n_rows)
        indptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return cls(n_rows, n_cols, indptr, pairs[:, 1].copy())

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def row(self, i: int) -> np.ndarray:
        """Sorted column ids of row i."""
        if not 0 <= i < self.n_rows:
            raise IndexError(f"row {i} out of range for {self.n_rows}-row matrix")
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def gather_rows(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Concatenate the given rows; returns (column ids, originating row position).

        The second array maps each returned column id back to the position in
        `rows` it came from, which lets callers weight the columns by per-row
        coefficients without a Python loop.
        """
        rows = np.asarray(rows, dtype=np.int64)
        starts = self.indptr[rows]
        lengths = self.indptr[rows + 1] - starts
        total = int(lengths.sum())
        if total == 0:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        # Vectorized ragged gather: offsets[k] = starts[row_pos[k]] + within-row offset.
        row_pos = np.repeat(np.arange(len(rows)), lengths)
        within = np.arange(total) - np.repeat(np.cumsum(lengths) - lengths, lengths)
        cols = self.indices[starts[row_pos] + within]
        return cols, row_pos

    def transpose(self) -> "RelationMatrix":
        pairs = np.empty((self.nnz, 2), dtype=np.int64)
        pairs[:, 0] = self.indices
        pairs[:, 1] = np.repeat(np.arange(self.n_rows), np.diff(self.indptr))
        return RelationMatrix.from_pairs(pairs, self.n_cols, self.n_rows)

    def toarray(self) -> np.ndarray:
        dense = np.zeros((self.n_rows, self.n_cols), dtype=bool)
        dense[np.repeat(np.arange(self.n_rows), np.diff(self.indptr)), self.indices] = True
        return dense


class TripleStore:
    """Immutable knowledge graph with dense ids and cached adjacency.

    `entity_names` / `relation_names` index label by id; `triples` is a set of
    (head id, relation id, tail id). Adjacency matrices (and transposes) are
    built on first use and cached behind a lock so concurrent query
    evaluations can share one store.
    """

    def __init__(
        self,
        entity_names: list[str],
        relation_names: list[str],
        triples: set[tuple[int, int, int]],
    ):
        self.entity_names = list(entity_names)
        self.relation_names = list(relation_names)
        self.triples = frozenset(triples)
        self._entity_ids = {name: i for i, name in enumerate(self.entity_names)}
        self._relation_ids = {name: i for i, name in enumerate(self.relation_names)}
        if len(self._entity_ids) != len(self.entity_names):
            raise ValueError("duplicate entity names")
        if len(self._relation_ids) != len(self.relation_names):
            raise ValueError("duplicate relation names")
        nV, nR = len(self.entity_names), len(self.relation_names)
        for h, r, t in self.triples:
            if not (0 <= h < nV and 0 <= t < nV and 0 <= r < nR):
                raise ValueError(f"triple {(h, r, t)} out of range")
        self._adjacency_cache: dict[tuple[int, bool], RelationMatrix] = {}
        self._cache_lock = threading.Lock()

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    def entity_id(self, name: str) -> int:
        try:
            return self._entity_ids[name]
        except KeyError:
            raise KeyError(f"unknown entity {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self._relation_ids[name]
        except KeyError:
            raise KeyError(f"unknown relation {name!r}") from None

    def has_triple(self, h: int, r: int, t: int) -> bool:
        return (h, r, t) in self.triples

    def triples_array(self) -> np.ndarray:
        """All triples as a sorted (n, 3) int64 array (deterministic order)."""
        if not self.triples:
            return np.empty((0, 3), dtype=np.int64)
        arr = np.array(sorted(self.triples), dtype=np.int64)
        return arr

    def adjacency(self, r: int, transposed: bool = False) -> RelationMatrix:
        """Boolean adjacency of relation r: entry (i, j) iff (e_i, r, e_j) is a triple.

        With `transposed` the returned matrix holds (j, i) instead. Built
        lazily and cached; thread safe.
        """
        if not 0 <= r < self.n_relations:
            raise IndexError(f"relation id {r} out of range for {self.n_relations} relations")
        key = (r, bool(transposed))
        with self._cache_lock:
            cached = self._adjacency_cache.get(key)
            if cached is not None:
                return cached
            pairs = [(t, h) if transposed else (h, t) for h, rr, t in self.triples if rr == r]
            mat = RelationMatrix.from_pairs(
                np.array(pairs, dtype=np.int64).reshape(-1, 2), self.n_entities, self.n_entities
            )
            self._adjacency_cache[key] = mat
            return mat

    def one_hot(self, e: int):
        """One-hot fuzzy vector for entity e (the initial state of a constant node)."""
        from nsmp import fuzzy

        if not 0 <= e < self.n_entities:
            raise IndexError(f"entity id {e} out of range for {self.n_entities} entities")
        return fuzzy.one_hot(e, self.n_entities)

    def restrict(self, triples: set[tuple[int, int, int]]) -> "TripleStore":
        """A view of this graph limited to `triples` (must be a subset).

        Shares the id dictionaries, so formulas and answer ids stay aligned
        between the observed graph used for inference and the full graph used
        for answer splits.
        """
        extra = set(triples) - self.triples
        if extra:
            raise ValueError(f"restriction contains {len(extra)} triples not in this store")
        return TripleStore(self.entity_names, self.relation_names, set(triples))


def load_triples(path: str) -> TripleStore:
    """Load a UTF-8 TSV of `head<TAB>relation<TAB>tail` lines into a TripleStore.

    Ids are assigned in first-appearance order (head, then relation, then
    tail, line by line); duplicate lines are deduplicated. Malformed lines
    raise TripleLoadError with the 1-based line number.
    """
    return load_triples_multi([path])


def load_triples_multi(paths: list[str]) -> TripleStore:
    """Load and union several TSV files; id order follows file order."""
    entity_names: list[str] = []
    relation_names: list[str] = []
    entity_ids: dict[str, int] = {}
    relation_ids: dict[str, int] = {}
    triples: set[tuple[int, int, int]] = set()

    def intern(name: str, ids: dict[str, int], names: list[str]) -> int:
        i = ids.get(name)
        if i is None:
            i = len(names)
            ids[name] = i
            names.append(name)
        return i

    for path in paths:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) != 3 or not all(parts):
                    raise TripleLoadError(
                        f"{path}:{lineno}: expected `head<TAB>relation<TAB>tail`, got {line!r}"
                    )
                h, r, t = parts
                triples.add(
                    (
                        intern(h, entity_ids, entity_names),
                        intern(r, relation_ids, relation_names),
                        intern(t, entity_ids, entity_names),
                    )
                )
    if not triples:
        raise TripleLoadError(f"no triples found in {', '.join(paths)}")
    return TripleStore(entity_names, relation_names, triples)


def load_triple_subset(store: TripleStore, paths: list[str]) -> TripleStore:
    """Load TSV files whose labels must already exist in `store`; returns a restriction.

    Used for the observed-graph view in open-world evaluation: the full graph
    defines the vocabulary, the subset defines which edges inference may use.
    """
    triples: set[tuple[int, int, int]] = set()
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) != 3 or not all(parts):
                    raise TripleLoadError(
                        f"{path}:{lineno}: expected `head<TAB>relation<TAB>tail`, got {line!r}"
                    )
                h, r, t = parts
                try:
                    triple = (store.entity_id(h), store.relation_id(r), store.entity_id(t))
                except KeyError as exc:
                    raise TripleLoadError(f"{path}:{lineno}: {exc.args[0]}") from None
                triples.add(triple)
    return store.restrict(triples)


def write_id_map(names: list[str], path: str) -> None:
    """Dump a `label<TAB>id` TSV so other tools can align with our dense ids."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, name in enumerate(names):
            fh.write(f"{name}\t{i}\n")
