"""Formula parsing, DNF normalization, query-graph construction, and depth.

Surface grammar (whitespace insensitive):

    query := disj
    disj  := conj ('|' conj)*
    conj  := atom ('&' atom)*
    atom  := ['!'] REL '(' term ',' term ')' | '(' disj ')'
    term  := 'e'INT | 'x'INT | 'y' | LABEL

`e<INT>` addresses an entity by dense id, `x<INT>` is an existential
variable, `y` is the single free variable; any other label is resolved
against the store's entity dictionary (the reserved forms shadow labels of
the same spelling). Relations are always resolved by name. Negation applies
to atoms only; `!(...)` is rejected rather than pushed down.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass
from typing import Sequence, Union

from nsmp.kg import TripleStore

MAX_DNF_BRANCHES = 64

_TOKEN = re.compile(r"[!&|(),]|[^\s!&|(),]+")
_ENTITY_REF = re.compile(r"e(\d+)\Z")
_VARIABLE_REF = re.compile(r"x(\d+)\Z")


class ParseError(ValueError):
    """Syntax or resolution error, with the offending position."""


class UnsupportedQueryError(ValueError):
    """Structurally valid formula the engine cannot evaluate (disconnected,
    constant-free, or exceeding the DNF branch guard)."""


@dataclass(frozen=True)
class Const:
    entity: int


@dataclass(frozen=True)
class Var:
    name: str

    @property
    def is_free(self) -> bool:
        return self.name == "y"


Term = Union[Const, Var]


@dataclass(frozen=True)
class Atom:
    relation: int
    lhs: Term
    rhs: Term
    negated: bool = False


@dataclass(frozen=True)
class And:
    parts: tuple


@dataclass(frozen=True)
class Or:
    parts: tuple


Formula = Union[Atom, And, Or]


class _Tokens:
    def __init__(self, text: str):
        self.text = text
        self.items: list[tuple[str, int]] = [(m.group(), m.start()) for m in _TOKEN.finditer(text)]
        self.pos = 0

    def peek(self) -> tuple[str, int]:
        if self.pos >= len(self.items):
            return ("", len(self.text))
        return self.items[self.pos]

    def next(self) -> tuple[str, int]:
        tok = self.peek()
        self.pos += 1
        return tok


def _resolve_term(token: str, position: int, store: TripleStore) -> Term:
    if token == "y":
        return Var("y")
    m = _VARIABLE_REF.match(token)
    if m:
        return Var(f"x{int(m.group(1))}")
    m = _ENTITY_REF.match(token)
    if m:
        entity = int(m.group(1))
        if entity >= store.n_entities:
            raise ParseError(f"position {position}: entity id {entity} out of range")
        return Const(entity)
    try:
        return Const(store.entity_id(token))
    except KeyError:
        raise ParseError(f"position {position}: unknown entity {token!r}") from None


def parse(text: str, store: TripleStore) -> Formula:
    """Parse a formula, resolving entity/relation tokens against the store.

    The formula must mention the free variable y at least once.
    """
    tokens = _Tokens(text)
    formula = _parse_disj(tokens, store)
    tok, pos = tokens.peek()
    if tok:
        raise ParseError(f"position {pos}: unexpected {tok!r}")
    if not _mentions_free(formula):
        raise ParseError("formula has no free variable y")
    return formula


def _parse_disj(tokens: _Tokens, store: TripleStore) -> Formula:
    parts = [_parse_conj(tokens, store)]
    while tokens.peek()[0] == "|":
        tokens.next()
        parts.append(_parse_conj(tokens, store))
    return parts[0] if len(parts) == 1 else Or(tuple(parts))


def _parse_conj(tokens: _Tokens, store: TripleStore) -> Formula:
    parts = [_parse_atom(tokens, store)]
    while tokens.peek()[0] == "&":
        tokens.next()
        parts.append(_parse_atom(tokens, store))
    return parts[0] if len(parts) == 1 else And(tuple(parts))


def _parse_atom(tokens: _Tokens, store: TripleStore) -> Formula:
    tok, pos = tokens.next()
    if tok == "!":
        inner, inner_pos = tokens.peek()
        if inner == "(" or inner in {"!", "&", "|", ")", ",", ""}:
            raise ParseError(f"position {inner_pos}: negation must be atomic")
        return _parse_rel_atom(tokens, store, negated=True)
    if tok == "(":
        inner = _parse_disj(tokens, store)
        closing, cpos = tokens.next()
        if closing != ")":
            raise ParseError(f"position {cpos}: expected ')'")
        return inner
    if tok in {"", "&", "|", ")", ",", "("}:
        raise ParseError(f"position {pos}: expected an atom, got {tok!r}")
    tokens.pos -= 1
    return _parse_rel_atom(tokens, store, negated=False)


def _parse_rel_atom(tokens: _Tokens, store: TripleStore, negated: bool) -> Atom:
    rel_tok, rel_pos = tokens.next()
    if rel_tok in {"", "!", "&", "|", "(", ")", ","}:
        raise ParseError(f"position {rel_pos}: expected a relation name, got {rel_tok!r}")
    try:
        relation = store.relation_id(rel_tok)
    except KeyError:
        raise ParseError(f"position {rel_pos}: unknown relation {rel_tok!r}") from None
    tok, pos = tokens.next()
    if tok != "(":
        raise ParseError(f"position {pos}: expected '(' after relation name")
    lhs_tok, lhs_pos = tokens.next()
    lhs = _resolve_term(lhs_tok, lhs_pos, store)
    tok, pos = tokens.next()
    if tok != ",":
        raise ParseError(f"position {pos}: expected ','")
    rhs_tok, rhs_pos = tokens.next()
    rhs = _resolve_term(rhs_tok, rhs_pos, store)
    tok, pos = tokens.next()
    if tok != ")":
        raise ParseError(f"position {pos}: expected ')'")
    return Atom(relation, lhs, rhs, negated)


def _mentions_free(f: Formula) -> bool:
    if isinstance(f, Atom):
        return any(isinstance(t, Var) and t.is_free for t in (f.lhs, f.rhs))
    return any(_mentions_free(p) for p in f.parts)


def render(f: Formula, store: TripleStore) -> str:
    """Canonical text for a formula; parse(render(f)) reproduces f."""
    if isinstance(f, Atom):
        return "{}{}({},{})".format(
            "!" if f.negated else "",
            store.relation_names[f.relation],
            _render_term(f.lhs),
            _render_term(f.rhs),
        )
    if isinstance(f, And):
        return "&".join(
            f"({render(p, store)})" if isinstance(p, Or) else render(p, store) for p in f.parts
        )
    return "|".join(render(p, store) for p in f.parts)


def _render_term(t: Term) -> str:
    return f"e{t.entity}" if isinstance(t, Const) else t.name


def to_dnf(f: Formula) -> list[tuple[Atom, ...]]:
    """Distribute conjunction over disjunction; returns the list of branches
    (each a tuple of possibly negated atoms) in left-to-right order.

    More than 64 branches raises UnsupportedQueryError.
    """
    branches = _branches(f)
    if len(branches) > MAX_DNF_BRANCHES:
        raise UnsupportedQueryError(
            f"DNF expansion produced {len(branches)} branches (limit {MAX_DNF_BRANCHES})"
        )
    return branches


def _branches(f: Formula) -> list[tuple[Atom, ...]]:
    if isinstance(f, Atom):
        return [(f,)]
    if isinstance(f, Or):
        out: list[tuple[Atom, ...]] = []
        for p in f.parts:
            out.extend(_branches(p))
            if len(out) > MAX_DNF_BRANCHES:
                break
        return out
    acc: list[tuple[Atom, ...]] = [()]
    for p in f.parts:
        part_branches = _branches(p)
        acc = [left + right for left in acc for right in part_branches]
        if len(acc) > MAX_DNF_BRANCHES:
            raise UnsupportedQueryError(
                f"DNF expansion exceeded the {MAX_DNF_BRANCHES}-branch limit"
            )
    return acc


@dataclass(frozen=True)
class Node:
    kind: str  # "const" | "var"
    entity: int | None = None
    name: str | None = None

    @property
    def is_free(self) -> bool:
        return self.kind == "var" and self.name == "y"

    def label(self) -> str:
        return f"e{self.entity}" if self.kind == "const" else str(self.name)


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    relation: int
    negated: bool


@dataclass(frozen=True)
class QueryGraph:
    """Directed multigraph of one conjunctive branch.

    One node per distinct term, one edge per atom (parallel edges preserved);
    edge direction follows the atom: r(t1, t2) points t1 -> t2.
    """

    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    free_index: int

    def variable_indices(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.kind == "var"]

    def constant_indices(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.kind == "const"]

    def incident(self, v: int) -> list[tuple[Edge, int, bool]]:
        """Edges touching node v as (edge, other endpoint, v_is_target)."""
        out = []
        for e in self.edges:
            if e.dst == v:
                out.append((e, e.src, True))
            if e.src == v:
                out.append((e, e.dst, False))
        return out


def build_graph(branch: Sequence[Atom]) -> QueryGraph:
    """Build the query multigraph of a conjunctive branch.

    Rejects branches without a constant node (messages originate from
    constants), without the free variable, or with disconnected components.
    """
    keys: list[tuple] = []
    nodes: list[Node] = []
    index: dict[tuple, int] = {}

    def node_of(term: Term) -> int:
        key = ("const", term.entity) if isinstance(term, Const) else ("var", term.name)
        i = index.get(key)
        if i is None:
            i = len(nodes)
            index[key] = i
            keys.append(key)
            nodes.append(
                Node("const", entity=term.entity)
                if isinstance(term, Const)
                else Node("var", name=term.name)
            )
        return i

    edges = [Edge(node_of(a.lhs), node_of(a.rhs), a.relation, a.negated) for a in branch]
    free = [i for i, n in enumerate(nodes) if n.is_free]
    if not free:
        raise UnsupportedQueryError("branch has no free variable y")
    if not any(n.kind == "const" for n in nodes):
        raise UnsupportedQueryError("branch has no constant node")

    neighbors: dict[int, set[int]] = {i: set() for i in range(len(nodes))}
    for e in edges:
        neighbors[e.src].add(e.dst)
        neighbors[e.dst].add(e.src)
    seen = {free[0]}
    queue = deque(seen)
    while queue:
        v = queue.popleft()
        for u in neighbors[v]:
            if u not in seen:
                seen.add(u)
                queue.append(u)
    if len(seen) != len(nodes):
        raise UnsupportedQueryError("query graph is disconnected")
    return QueryGraph(tuple(nodes), tuple(edges), free[0])


@dataclass(frozen=True)
class DepthInfo:
    """Hop distances over the undirected query graph.

    depth is the largest constant-to-free-node distance and lower-bounds the
    layer count; dist_to_constant drives the message-passing schedule (a
    variable first receives information at that layer).
    """

    depth: int
    dist_to_free: tuple[int, ...]
    dist_to_constant: tuple[int, ...]


def _bfs(graph: QueryGraph, sources: Sequence[int]) -> list[int]:
    dist = [-1] * len(graph.nodes)
    queue = deque()
    for s in sources:
        dist[s] = 0
        queue.append(s)
    adjacency: dict[int, set[int]] = {i: set() for i in range(len(graph.nodes))}
    for e in graph.edges:
        adjacency[e.src].add(e.dst)
        adjacency[e.dst].add(e.src)
    while queue:
        v = queue.popleft()
        for u in adjacency[v]:
            if dist[u] < 0:
                dist[u] = dist[v] + 1
                queue.append(u)
    return dist


def depth(graph: QueryGraph) -> DepthInfo:
    """Distances are purely structural: direction and negation flags ignored."""
    dist_free = _bfs(graph, [graph.free_index])
    dist_const = _bfs(graph, graph.constant_indices())
    d = max(dist_free[c] for c in graph.constant_indices())
    return DepthInfo(d, tuple(dist_free), tuple(dist_const))


# Formula skeletons for the named query structures. Placeholders {rK} take
# relation names, {cK} entity references; existentials are numbered by
# position. Trees: 1p..pin/pni; the remaining shapes carry parallel edges
# (2m, 2nm, 3mp, 3pm, im), hanging existential leaves (2il, 3il), or true
# cycles (3c, 3cm).
TEMPLATES: dict[str, str] = {
    "1p": "{r0}({c0},y)",
    "2p": "{r0}({c0},x1)&{r1}(x1,y)",
    "3p": "{r0}({c0},x1)&{r1}(x1,x2)&{r2}(x2,y)",
    "2i": "{r0}({c0},y)&{r1}({c1},y)",
    "3i": "{r0}({c0},y)&{r1}({c1},y)&{r2}({c2},y)",
    "pi": "{r0}({c0},x1)&{r1}(x1,y)&{r2}({c1},y)",
    "ip": "{r0}({c0},x1)&{r1}({c1},x1)&{r2}(x1,y)",
    "2u": "{r0}({c0},y)|{r1}({c1},y)",
    "up": "({r0}({c0},x1)|{r1}({c1},x1))&{r2}(x1,y)",
    "2in": "{r0}({c0},y)&!{r1}({c1},y)",
    "3in": "{r0}({c0},y)&{r1}({c1},y)&!{r2}({c2},y)",
    "inp": "{r0}({c0},x1)&!{r1}({c1},x1)&{r2}(x1,y)",
    "pin": "{r0}({c0},x1)&{r1}(x1,y)&!{r2}({c1},y)",
    "pni": "{r0}({c0},x1)&!{r1}(x1,y)&{r2}({c1},y)",
    "2il": "{r0}({c0},y)&{r1}({c1},y)&{r2}(x1,y)",
    "3il": "{r0}({c0},y)&{r1}({c1},y)&{r2}({c2},y)&{r3}(x1,y)",
    "2m": "{r0}({c0},y)&{r1}({c0},y)",
    "2nm": "{r0}({c0},y)&!{r1}({c0},y)",
    "3mp": "{r0}({c0},x1)&{r1}({c0},x1)&{r2}(x1,y)",
    "3pm": "{r0}({c0},x1)&{r1}(x1,y)&{r2}(x1,y)",
    "im": "{r0}({c0},y)&{r1}({c1},y)&{r2}({c1},y)",
    "3c": "{r0}({c0},x1)&{r1}(x1,x2)&{r2}(x2,y)&{r3}(x1,y)",
    "3cm": "{r0}({c0},x1)&{r1}(x1,x2)&{r2}(x2,y)&{r3}(x1,y)&{r4}(x1,y)",
}


def template_slots(name: str) -> tuple[int, int]:
    """(number of relation slots, number of constant slots) of a template."""
    skeleton = TEMPLATES[name]
    rels = len(set(re.findall(r"\{r(\d+)\}", skeleton)))
    consts = len(set(re.findall(r"\{c(\d+)\}", skeleton)))
    return rels, consts


def instantiate_template(name: str, relations: Sequence[int], constants: Sequence[int], store: TripleStore) -> str:
    """Fill a template skeleton with concrete relation ids and entity ids."""
    if name not in TEMPLATES:
        raise KeyError(f"unknown template {name!r}")
    values = {f"r{i}": store.relation_names[r] for i, r in enumerate(relations)}
    values.update({f"c{i}": f"e{c}" for i, c in enumerate(constants)})
    return TEMPLATES[name].format(**values)
