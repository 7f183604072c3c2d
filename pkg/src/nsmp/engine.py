"""Layered neural-symbolic message passing over query graphs.

Each variable node carries a pair of states: a sparse fuzzy set over entities
and a complex embedding summarizing it. Per layer, every variable whose
eligible neighbor set is nonempty aggregates one message per incident edge by
elementwise product, where a message is the normalized sum of the symbolic
one-hop propagation and (when enabled) the softmax-converted neural one-hop
message. Constants keep their one-hot/pretrained state and never receive
messages. Updates are synchronous: layer l reads only layer l-1 states, so
evaluation order cannot change results.

The eligibility rule is the dynamic-pruning schedule: a variable neighbor may
send messages only once its own state has been updated. Consequently a
variable first updates at exactly its undirected hop distance from the
nearest constant. The rule can be disabled (every neighbor always eligible)
to measure how many messages the schedule saves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nsmp import fuzzy, predictor
from nsmp.formulas import Formula, QueryGraph, build_graph, depth, to_dnf
from nsmp.fuzzy import FuzzyVec
from nsmp.kg import TripleStore
from nsmp.predictor import ComplexEmbeddingTable


@dataclass
class EngineConfig:
    """Inference settings.

    lam blends the symbolic and neural answer scores (lam=1 is purely
    symbolic). layers=None resolves the layer count as depth + layer_offset;
    a fixed value must be >= the query depth. With neural_enabled=False the
    neural term is omitted from messages and answer extraction behaves as
    lam=1. dynamic_pruning=False disables the scheduling rule (for message
    accounting); results with all-eligible neighbors are not meaningful in
    symbolic-only mode because empty states annihilate products.
    """

    epsilon: float = 1e-14
    alpha: float = 100.0
    lam: float = 0.3
    layers: int | None = None
    layer_offset: int = 1
    neural_enabled: bool = True
    dynamic_pruning: bool = True
    dnf_combiner: str = "max"

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.layers is not None and self.layers < 1:
            raise ValueError("fixed layer count must be >= 1")
        if self.layer_offset < 0:
            raise ValueError("layer_offset must be >= 0")
        if self.dnf_combiner not in ("max", "prob-sum"):
            raise ValueError(f"unknown dnf_combiner {self.dnf_combiner!r}")


@dataclass
class NodeState:
    """Per-node state: fuzzy set, its embedding summary, and scheduling flags."""

    symbolic: FuzzyVec
    neural: np.ndarray | None
    updated: bool
    first_update: int | None = None


@dataclass
class BranchStats:
    depth: int
    layers: int
    messages_per_layer: list[int]
    first_update: dict[str, int]
    degenerate_nodes: list[str]
    warnings: list[str]

    @property
    def total_messages(self) -> int:
        return sum(self.messages_per_layer)


@dataclass
class BranchResult:
    graph: QueryGraph
    scores: np.ndarray
    explanations: dict[str, FuzzyVec]
    stats: BranchStats


@dataclass
class AnswerDistribution:
    """Final scores over entities plus per-branch variable explanations."""

    scores: np.ndarray
    branches: list[BranchResult]

    def top_k(self, k: int) -> list[tuple[int, float]]:
        """Highest-scoring entities; ties broken by ascending entity id."""
        order = np.lexsort((np.arange(self.scores.size), -self.scores))
        return [(int(i), float(self.scores[i])) for i in order[:k]]


def explain(result: AnswerDistribution, k: int) -> list[dict[str, list[tuple[int, float]]]]:
    """Per branch and per variable node, the k highest-weight entities of the
    final fuzzy state (descending weight, ties by ascending entity id)."""
    out = []
    for branch in result.branches:
        listing = {}
        for name, vec in branch.explanations.items():
            order = np.lexsort((vec.indices, -vec.weights))[:k]
            listing[name] = [(int(vec.indices[i]), float(vec.weights[i])) for i in order]
        out.append(listing)
    return out


class QueryEngine:
    """Answers formulas over a TripleStore, optionally with a frozen predictor.

    The store and embedding table are immutable and may be shared by
    concurrent evaluations; one evaluation is single-threaded and
    deterministic.
    """

    def __init__(
        self,
        store: TripleStore,
        embeddings: ComplexEmbeddingTable | None = None,
        config: EngineConfig | None = None,
    ):
        self.store = store
        self.table = embeddings
        self.config = config if config is not None else EngineConfig()
        if self.config.neural_enabled:
            if embeddings is None:
                raise ValueError("neural_enabled requires an embedding table (or set neural_enabled=False)")
            if embeddings.n_entities != store.n_entities or embeddings.n_relations != store.n_relations:
                raise ValueError(
                    f"embedding table covers {embeddings.n_entities} entities / "
                    f"{embeddings.n_relations} relations, store has "
                    f"{store.n_entities} / {store.n_relations}"
                )

    # ------------------------------------------------------------------ setup

    def _initial_states(self, graph: QueryGraph) -> list[NodeState]:
        n = self.store.n_entities
        neural_on = self.config.neural_enabled
        rank = self.table.rank if neural_on else 0
        states = []
        for node in graph.nodes:
            if node.kind == "const":
                states.append(
                    NodeState(
                        symbolic=fuzzy.one_hot(node.entity, n),
                        neural=self.table.entity(node.entity) if neural_on else None,
                        updated=True,
                        first_update=0,
                    )
                )
            else:
                states.append(
                    NodeState(
                        symbolic=FuzzyVec.empty(n),
                        neural=np.zeros(rank, dtype=np.complex128) if neural_on else None,
                        updated=False,
                    )
                )
        return states

    def _fuzzy_to_embedding(self, s: FuzzyVec) -> np.ndarray:
        """Probability-weighted sum of entity embeddings over the support of s.

        An empty fuzzy set maps to the zero embedding (degenerate node)."""
        if s.is_empty:
            return np.zeros(self.table.rank, dtype=np.complex128)
        er = self.table._cached64("entity_real")
        ei = self.table._cached64("entity_imag")
        return s.weights @ er[s.indices] + 1j * (s.weights @ ei[s.indices])

    # --------------------------------------------------------------- messages

    def encode_message(self, src: NodeState, relation: int, forward: bool, negated: bool) -> FuzzyVec:
        """One neural-symbolic message along an edge.

        forward=True walks the edge in its stored direction (the source is
        the head); forward=False walks it backwards. The symbolic one-hop
        term and the softmax-converted neural term are summed coordinatewise
        and re-normalized; with the neural path disabled the symbolic term
        alone is normalized (propagate already applies the normalization).
        """
        cfg = self.config
        matrix = self.store.adjacency(relation, transposed=not forward)
        sym = fuzzy.propagate(src.symbolic, matrix, negated, cfg.alpha, cfg.epsilon)
        if not cfg.neural_enabled:
            return sym
        message = predictor.relation_message(self.table, src.neural, relation, forward, negated)
        dense = predictor.fuzzy_from_embedding(self.table, message)
        if sym.size:
            dense[sym.indices] += sym.weights
        return fuzzy.normalize(dense, cfg.epsilon)

    def run_layer(
        self, graph: QueryGraph, states: list[NodeState], layer: int
    ) -> tuple[list[NodeState], int]:
        """One synchronous update of every variable node; returns the new
        states and the number of messages computed."""
        cfg = self.config
        new_states = list(states)
        messages_sent = 0
        for v in graph.variable_indices():
            msgs: list[FuzzyVec] = []
            for edge, u, v_is_target in graph.incident(v):
                src = states[u]
                if cfg.dynamic_pruning and graph.nodes[u].kind != "const" and not src.updated:
                    continue
                msgs.append(self.encode_message(src, edge.relation, forward=v_is_target, negated=edge.negated))
            if not msgs:
                continue  # empty neighbor set: carry the state forward unchanged
            messages_sent += len(msgs)
            sym = fuzzy.hadamard_aggregate(msgs, cfg.epsilon)
            neural = self._fuzzy_to_embedding(sym) if cfg.neural_enabled else None
            prev = states[v]
            new_states[v] = NodeState(
                symbolic=sym,
                neural=neural,
                updated=True,
                first_update=prev.first_update if prev.first_update is not None else layer,
            )
        return new_states, messages_sent

    # ----------------------------------------------------------------- answer

    def _resolve_layers(self, d: int) -> int:
        cfg = self.config
        if cfg.layers is None:
            return d + cfg.layer_offset
        if cfg.layers < d:
            raise ValueError(f"fixed layer count {cfg.layers} is below the query depth {d}")
        return cfg.layers

    def answer_conjunctive(self, graph: QueryGraph) -> AnswerDistribution:
        """Run the message-passing loop on one conjunctive branch."""
        cfg = self.config
        info = depth(graph)
        layers = self._resolve_layers(info.depth)
        states = self._initial_states(graph)
        messages_per_layer: list[int] = []
        for layer in range(1, layers + 1):
            states, sent = self.run_layer(graph, states, layer)
            messages_per_layer.append(sent)

        n = self.store.n_entities
        free_state = states[graph.free_index]
        warnings: list[str] = []
        if not free_state.updated:
            warnings.append("free variable never updated; falling back to a uniform answer")

        symbolic_dense = free_state.symbolic.to_dense()
        if cfg.neural_enabled and (cfg.lam < 1.0 or not free_state.updated):
            cosines = self._entity_cosines(free_state.neural)
            neural_scores = predictor.softmax(cosines)
            lam = cfg.lam if free_state.updated else 0.0
            scores = lam * symbolic_dense + (1.0 - lam) * neural_scores
        elif not free_state.updated:
            scores = np.full(n, 1.0 / n)
        else:
            scores = symbolic_dense

        explanations = {}
        degenerate = []
        first_update = {}
        for v in graph.variable_indices():
            label = graph.nodes[v].label()
            explanations[label] = states[v].symbolic
            if states[v].first_update is not None:
                first_update[label] = states[v].first_update
            if states[v].updated and states[v].symbolic.is_empty:
                degenerate.append(label)
        stats = BranchStats(info.depth, layers, messages_per_layer, first_update, degenerate, warnings)
        branch = BranchResult(graph, scores, explanations, stats)
        return AnswerDistribution(scores, [branch])

    def _entity_cosines(self, neural: np.ndarray) -> np.ndarray:
        """Cosine similarity between the free node's embedding and every entity
        embedding (complex vectors treated as real vectors of doubled length);
        zero vectors on either side give similarity 0."""
        er = self.table._cached64("entity_real")
        ei = self.table._cached64("entity_imag")
        nr, ni = np.real(neural), np.imag(neural)
        numer = er @ nr + ei @ ni
        node_norm = np.sqrt(np.sum(nr * nr) + np.sum(ni * ni))
        entity_norms = np.sqrt(np.einsum("ij,ij->i", er, er) + np.einsum("ij,ij->i", ei, ei))
        denom = node_norm * entity_norms
        out = np.zeros(er.shape[0], dtype=np.float64)
        np.divide(numer, denom, out=out, where=denom > 0)
        return out

    def answer(self, formula: Formula) -> AnswerDistribution:
        """DNF-expand the formula, answer each branch, and combine the branch
        score vectors elementwise (max by default, probabilistic sum optionally)."""
        branches = to_dnf(formula)
        results = [self.answer_conjunctive(build_graph(b)) for b in branches]
        if len(results) == 1:
            return results[0]
        vectors = [r.scores for r in results]
        if self.config.dnf_combiner == "max":
            combined = fuzzy.union_max(vectors)
        else:
            combined = fuzzy.union_prob_sum(vectors)
        return AnswerDistribution(combined, [r.branches[0] for r in results])
