"""Brute-force ground truth and query generation.

The oracle enumerates exact answer sets by exhaustive assignment of the
existential variables, giving a reference the engine is tested against. Two
routes implement the same semantics: a literal nested-loop enumeration (free
variable outermost, early exit) kept as the readable reference, and a
vectorized route that evaluates each existential assignment against all free
variable candidates at once with boolean arrays. The two are cross-validated
in the tests; the vectorized route is the default because enumeration cost
dominates test time otherwise.

Deliberately not an optimized symbolic engine: no join ordering, dense
boolean adjacency, desk-scale guards.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from nsmp.formulas import (
    And,
    Atom,
    Const,
    Formula,
    Or,
    Var,
    instantiate_template,
    parse,
    template_slots,
    to_dnf,
    TEMPLATES,
)
from nsmp.kg import TripleStore

MAX_EXISTENTIALS = 4
MAX_ORACLE_ENTITIES = 2000


@dataclass(frozen=True)
class AnswerSplit:
    """Answers over the observed graph (easy) vs. answers that appear only
    once missing edges are restored (hard)."""

    easy: frozenset[int]
    hard: frozenset[int]


@dataclass(frozen=True)
class GeneratedQuery:
    formula: str
    template: str
    easy: frozenset[int]
    hard: frozenset[int]


def _formula_variables(f: Formula) -> set[str]:
    if isinstance(f, Atom):
        return {t.name for t in (f.lhs, f.rhs) if isinstance(t, Var)}
    out: set[str] = set()
    for p in f.parts:
        out |= _formula_variables(p)
    return out


def _existentials(f: Formula) -> list[str]:
    names = sorted(_formula_variables(f) - {"y"})
    if len(names) > MAX_EXISTENTIALS:
        raise ValueError(
            f"{len(names)} existential variables exceed the brute-force guard ({MAX_EXISTENTIALS})"
        )
    return names


class Oracle:
    """Holds dense per-relation adjacency for repeated enumeration over one store."""

    def __init__(self, store: TripleStore):
        if store.n_entities > MAX_ORACLE_ENTITIES:
            raise ValueError(
                f"oracle is desk-scale only ({store.n_entities} entities > {MAX_ORACLE_ENTITIES})"
            )
        self.store = store
        self._dense: dict[int, np.ndarray] = {}

    def _adj(self, r: int) -> np.ndarray:
        mat = self._dense.get(r)
        if mat is None:
            mat = self.store.adjacency(r).toarray()
            self._dense[r] = mat
        return mat

    def answers(self, f: Formula) -> set[int]:
        """Exact answer set, evaluated branch by branch over the DNF."""
        n = self.store.n_entities
        satisfied = np.zeros(n, dtype=bool)
        for branch in to_dnf(f):
            satisfied |= self._branch_answers(branch)
        return set(int(i) for i in np.nonzero(satisfied)[0])

    def _branch_answers(self, branch: tuple[Atom, ...]) -> np.ndarray:
        n = self.store.n_entities
        names = _existentials(And(branch))
        result = np.zeros(n, dtype=bool)
        for assignment in itertools.product(range(n), repeat=len(names)):
            binding = dict(zip(names, assignment))
            sat = np.ones(n, dtype=bool)
            for atom in branch:
                sat &= self._atom_mask(atom, binding)
                if not sat.any():
                    break
            result |= sat
            if result.all():
                break
        return result

    def _atom_mask(self, atom: Atom, binding: dict[str, int]) -> np.ndarray:
        """Boolean vector over free-variable candidates satisfying the atom
        under the given existential binding."""
        n = self.store.n_entities
        adj = self._adj(atom.relation)

        def value(term) -> int | None:
            if isinstance(term, Const):
                return term.entity
            return None if term.name == "y" else binding[term.name]

        lhs, rhs = value(atom.lhs), value(atom.rhs)
        if lhs is None and rhs is None:
            mask = np.diagonal(adj).copy()  # r(y, y)
        elif lhs is None:
            mask = adj[:, rhs].copy()
        elif rhs is None:
            mask = adj[lhs, :].copy()
        else:
            mask = np.full(n, bool(adj[lhs, rhs]))
        return ~mask if atom.negated else mask


def enumerate_answers(f: Formula, store: TripleStore) -> set[int]:
    """Exact answer set of the formula over the store's triples."""
    return Oracle(store).answers(f)


def enumerate_answers_naive(f: Formula, store: TripleStore) -> set[int]:
    """Reference route: iterate the free variable outermost and search for a
    satisfying existential assignment with early exit, checking atoms
    directly against the triple set."""
    names = _existentials(f)
    triples = store.triples
    n = store.n_entities

    def truth(formula: Formula, binding: dict[str, int]) -> bool:
        if isinstance(formula, Atom):
            def value(term) -> int:
                return term.entity if isinstance(term, Const) else binding[term.name]

            present = (value(formula.lhs), formula.relation, value(formula.rhs)) in triples
            return present != formula.negated
        if isinstance(formula, And):
            return all(truth(p, binding) for p in formula.parts)
        return any(truth(p, binding) for p in formula.parts)

    answers = set()
    for candidate in range(n):
        found = any(
            truth(f, dict(zip(names, assignment), y=candidate))
            for assignment in itertools.product(range(n), repeat=len(names))
        )
        if found:
            answers.add(candidate)
    return answers


def split_answers(f: Formula, observed: TripleStore, full: TripleStore) -> AnswerSplit:
    """easy = answers over the observed graph; hard = answers over the full
    graph not already easy. The observed triples must be a subset of the full."""
    if not observed.triples <= full.triples:
        raise ValueError("observed graph is not a subset of the full graph")
    easy = enumerate_answers(f, observed)
    hard = enumerate_answers(f, full) - easy
    return AnswerSplit(frozenset(easy), frozenset(hard))


def generate_queries(
    store: TripleStore,
    template: str,
    count: int,
    seed: int,
    observed: TripleStore | None = None,
    require: str = "hard",
    budget_factor: int = 500,
) -> list[GeneratedQuery]:
    """Rejection-sample template instantiations with uniformly drawn relations
    and constants until `count` distinct queries meet the requirement.

    require="hard" keeps queries with at least one hard answer under the
    observed/full split (the default protocol); "any" keeps queries with a
    nonempty answer set over the full graph (used when observed == full,
    where hard answers cannot exist); "none" keeps everything that parses.
    Deterministic given the seed. Exhausting the sampling budget raises with
    the template name.
    """
    if template not in TEMPLATES:
        raise KeyError(f"unknown template {template!r}")
    if require not in ("hard", "any", "none"):
        raise ValueError(f"unknown requirement {require!r}")
    if observed is None:
        observed = store
    n_rels, n_consts = template_slots(template)
    rng = np.random.default_rng(seed)
    # The oracle is only needed when the requirement inspects answer sets,
    # which keeps require="none" usable beyond the brute-force size guard.
    full_oracle = Oracle(store) if require != "none" else None
    observed_oracle = Oracle(observed) if require != "none" and observed is not store else None
    out: list[GeneratedQuery] = []
    seen: set[str] = set()
    budget = count * budget_factor
    for _ in range(budget):
        if len(out) >= count:
            break
        relations = [int(r) for r in rng.integers(0, store.n_relations, n_rels)]
        constants = [int(c) for c in rng.integers(0, store.n_entities, n_consts)]
        text = instantiate_template(template, relations, constants, store)
        if text in seen:
            continue
        parse(text, store)
        easy: frozenset[int] = frozenset()
        hard: frozenset[int] = frozenset()
        if full_oracle is not None:
            f = parse(text, store)
            full_answers = full_oracle.answers(f)
            if require == "any" and not full_answers:
                continue
            easy_set = observed_oracle.answers(f) if observed_oracle is not None else full_answers
            hard = frozenset(full_answers - easy_set)
            if require == "hard" and not hard:
                continue
            easy = frozenset(easy_set)
        seen.add(text)
        out.append(GeneratedQuery(text, template, easy, hard))
    if len(out) < count:
        raise RuntimeError(
            f"template {template}: sampling budget exhausted after {budget} attempts "
            f"({len(out)}/{count} queries met requirement {require!r})"
        )
    return out


def random_store(
    n_entities: int,
    n_relations: int,
    density: float | None = None,
    n_edges: int | None = None,
    seed: int = 0,
) -> TripleStore:
    """Synthetic knowledge graph for tests and benchmarks.

    Either each (head, tail) pair carries each relation independently with
    probability `density`, or exactly `n_edges` distinct triples are drawn
    uniformly. Entities are named n0..n{V-1}, relations r0..r{R-1}; all
    entities exist in the vocabulary even when isolated.
    """
    if (density is None) == (n_edges is None):
        raise ValueError("specify exactly one of density / n_edges")
    rng = np.random.default_rng(seed)
    triples: set[tuple[int, int, int]] = set()
    if density is not None:
        for r in range(n_relations):
            heads, tails = np.nonzero(rng.random((n_entities, n_entities)) < density)
            triples |= {(int(h), r, int(t)) for h, t in zip(heads, tails)}
    else:
        while len(triples) < n_edges:
            needed = n_edges - len(triples)
            hs = rng.integers(0, n_entities, needed)
            rs = rng.integers(0, n_relations, needed)
            ts = rng.integers(0, n_entities, needed)
            triples |= set(zip(map(int, hs), map(int, rs), map(int, ts)))
    return TripleStore(
        [f"n{i}" for i in range(n_entities)],
        [f"r{i}" for i in range(n_relations)],
        triples,
    )


def hold_out_edges(store: TripleStore, fraction: float, seed: int) -> TripleStore:
    """Observed-graph view with a uniformly sampled fraction of edges removed."""
    rng = np.random.default_rng(seed)
    triples = sorted(store.triples)
    n_drop = int(round(fraction * len(triples)))
    drop = set(rng.choice(len(triples), size=n_drop, replace=False).tolist())
    kept = {t for i, t in enumerate(triples) if i not in drop}
    return store.restrict(kept)
