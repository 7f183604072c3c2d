import numpy as np
import pytest

from nsmp.engine import AnswerDistribution, EngineConfig, QueryEngine, explain
from nsmp.formulas import (
    QueryGraph,
    build_graph,
    depth,
    instantiate_template,
    parse,
    template_slots,
    to_dnf,
)
from nsmp.fuzzy import FuzzyVec, hadamard_aggregate, normalize, propagate
from nsmp.oracle import enumerate_answers, generate_queries, random_store
from nsmp.predictor import (
    fuzzy_from_embedding,
    relation_message,
    softmax,
    train_toy,
)

# For each conjunctive template: (layer count at the default depth+1 setting,
# total messages with the scheduling rule, total messages without it, and the
# layer at which each variable first updates — its hop distance to the nearest
# constant). Derived by hand from the template shapes; the schedule is purely
# structural, so the numbers hold on any store.
EXPECTED_SCHEDULE = {
    "1p": (2, 2, 2, {"y": 1}),
    "2p": (3, 6, 9, {"x1": 1, "y": 2}),
    "3p": (4, 12, 20, {"x1": 1, "x2": 2, "y": 3}),
    "2i": (2, 4, 4, {"y": 1}),
    "3i": (2, 6, 6, {"y": 1}),
    "pi": (3, 10, 12, {"x1": 1, "y": 1}),
    "ip": (3, 9, 12, {"x1": 1, "y": 2}),
    "2in": (2, 4, 4, {"y": 1}),
    "3in": (2, 6, 6, {"y": 1}),
    "inp": (3, 9, 12, {"x1": 1, "y": 2}),
    "pin": (3, 10, 12, {"x1": 1, "y": 1}),
    "pni": (3, 10, 12, {"x1": 1, "y": 1}),
    "2il": (2, 5, 8, {"y": 1, "x1": 2}),
    "3il": (2, 7, 10, {"y": 1, "x1": 2}),
    "2m": (2, 4, 4, {"y": 1}),
    "2nm": (2, 4, 4, {"y": 1}),
    "3mp": (3, 9, 12, {"x1": 1, "y": 2}),
    "3pm": (3, 9, 15, {"x1": 1, "y": 2}),
    "im": (2, 6, 6, {"y": 1}),
    "3c": (3, 11, 21, {"x1": 1, "x2": 2, "y": 2}),
    "3cm": (3, 14, 27, {"x1": 1, "x2": 2, "y": 2}),
}


def simulate_schedule(graph: QueryGraph, layers: int, pruned: bool):
    """Independent re-implementation of the message schedule (flags only, no
    state): per layer, a variable with at least one eligible neighbor receives
    one message per eligible incident edge; eligibility reads last layer's
    flags; constants are always eligible."""
    updated = [graph.nodes[v].kind == "const" for v in range(len(graph.nodes))]
    first: dict[str, int] = {}
    per_layer = []
    for layer in range(1, layers + 1):
        snapshot = list(updated)
        sent = 0
        for v in graph.variable_indices():
            eligible = [
                edge
                for edge, u, _ in graph.incident(v)
                if not pruned or graph.nodes[u].kind == "const" or snapshot[u]
            ]
            if eligible:
                sent += len(eligible)
                if not updated[v]:
                    first[graph.nodes[v].label()] = layer
                updated[v] = True
        per_layer.append(sent)
    return per_layer, first


def symbolic_engine(store, **overrides):
    defaults = dict(neural_enabled=False, lam=1.0, alpha=float(store.n_entities))
    defaults.update(overrides)
    return QueryEngine(store, config=EngineConfig(**defaults))


class TestInitialStates:
    def test_constants_are_one_hot_and_updated(self, toy_store):
        engine = symbolic_engine(toy_store)
        graph = build_graph(to_dnf(parse("r(e0,x1)&s(x1,y)", toy_store))[0])
        states = engine._initial_states(graph)
        assert states[0].symbolic.as_dict() == {0: 1.0}
        assert states[0].updated and states[0].first_update == 0
        assert states[1].symbolic.is_empty and not states[1].updated
        assert states[2].symbolic.is_empty and not states[2].updated


class TestEncodeMessage:
    def test_symbolic_only_equals_propagation(self, toy_store):
        engine = symbolic_engine(toy_store)
        graph = build_graph(to_dnf(parse("r(e0,y)", toy_store))[0])
        states = engine._initial_states(graph)
        out = engine.encode_message(states[0], relation=0, forward=True, negated=False)
        assert out.as_dict() == {1: 0.5, 2: 0.5}

    def test_uniform_neural_blend(self, toy_store):
        # All-identical entity embeddings make the neural term uniform (0.25
        # per entity here), so the blended message is the normalized sum of
        # [0.25, 0.75, 0.75, 0.25].
        from nsmp.predictor import ComplexEmbeddingTable

        table = ComplexEmbeddingTable(
            entity_real=np.ones((4, 2)),
            entity_imag=np.zeros((4, 2)),
            relation_real=np.ones((2, 2)),
            relation_imag=np.zeros((2, 2)),
        )
        engine = QueryEngine(toy_store, table, EngineConfig(lam=0.5))
        graph = build_graph(to_dnf(parse("r(e0,y)", toy_store))[0])
        states = engine._initial_states(graph)
        out = engine.encode_message(states[0], relation=0, forward=True, negated=False)
        np.testing.assert_allclose(out.to_dense(), [0.125, 0.375, 0.375, 0.125])

    def test_blend_matches_hand_composition(self, toy_store):
        table = train_toy(toy_store, rank=4, epochs=20)
        engine = QueryEngine(toy_store, table, EngineConfig())
        graph = build_graph(to_dnf(parse("s(y,e3)", toy_store))[0])
        states = engine._initial_states(graph)
        const = graph.constant_indices()[0]
        # Edge e3 <-s- y walked backwards from the constant.
        got = engine.encode_message(states[const], relation=1, forward=False, negated=False)
        sym = propagate(toy_store.one_hot(3), toy_store.adjacency(1, transposed=True))
        dense = fuzzy_from_embedding(table, relation_message(table, table.entity(3), 1, forward=False))
        dense[sym.indices] += sym.weights
        want = normalize(dense)
        assert got.support() == want.support()
        np.testing.assert_allclose(got.to_dense(), want.to_dense(), rtol=1e-12)


class TestRunLayerTrace:
    def test_two_hop_layer_by_layer(self, toy_store):
        engine = symbolic_engine(toy_store)
        graph = build_graph(to_dnf(parse("r(e0,x1)&s(x1,y)", toy_store))[0])
        states = engine._initial_states(graph)

        states, sent = engine.run_layer(graph, states, 1)
        assert sent == 1
        assert states[1].symbolic.as_dict() == {1: 0.5, 2: 0.5}
        assert states[1].first_update == 1
        assert not states[2].updated  # y's only neighbor was not yet updated

        states, sent = engine.run_layer(graph, states, 2)
        assert sent == 2
        assert states[2].symbolic.as_dict() == {3: 1.0}
        assert states[2].first_update == 2
        assert states[1].symbolic.as_dict() == {1: 0.5, 2: 0.5}

        states, sent = engine.run_layer(graph, states, 3)
        assert sent == 3  # x1 now also hears back from y
        assert states[1].symbolic.as_dict() == {1: 0.5, 2: 0.5}
        assert states[2].symbolic.as_dict() == {3: 1.0}

    def test_intersection_aggregates_one_message_per_edge(self, toy_store):
        engine = symbolic_engine(toy_store)
        graph = build_graph(to_dnf(parse("r(e0,y)&r(e0,y)&s(e1,y)", toy_store))[0])
        states, sent = engine.run_layer(graph, engine._initial_states(graph), 1)
        assert sent == 3
        # r(A,.) twice and s(B,.) once: {1,2} * {1,2} * {3} is empty.
        assert states[graph.free_index].symbolic.is_empty
        assert states[graph.free_index].updated


class TestAnswer:
    def test_two_hop_full_mass_on_answer(self, toy_store):
        engine = symbolic_engine(toy_store)
        result = engine.answer(parse("r(e0,x1)&s(x1,y)", toy_store))
        np.testing.assert_allclose(result.scores, [0, 0, 0, 1])
        stats = result.branches[0].stats
        assert stats.depth == 2
        assert stats.layers == 3
        assert stats.messages_per_layer == [1, 2, 3]
        assert stats.first_update == {"x1": 1, "y": 2}
        assert stats.degenerate_nodes == []

    def test_explanations(self, toy_store):
        engine = symbolic_engine(toy_store)
        result = engine.answer(parse("r(e0,x1)&s(x1,y)", toy_store))
        listing = explain(result, k=2)
        assert listing == [{"x1": [(1, 0.5), (2, 0.5)], "y": [(3, 1.0)]}]
        assert explain(result, k=1)[0]["x1"] == [(1, 0.5)]  # ties break by id

    def test_top_k_tie_break(self):
        dist = AnswerDistribution(np.array([0.0, 0.5, 0.5, 0.0]), [])
        assert dist.top_k(3) == [(1, 0.5), (2, 0.5), (0, 0.0)]

    def test_union_max(self, toy_store):
        engine = symbolic_engine(toy_store)
        # First branch is unsatisfiable (D has no outgoing r edge).
        result = engine.answer(parse("r(e3,y)|s(e1,y)", toy_store))
        np.testing.assert_allclose(result.scores, [0, 0, 0, 1])
        assert len(result.branches) == 2
        assert result.branches[0].stats.degenerate_nodes == ["y"]

    def test_union_prob_sum(self, toy_store):
        engine = symbolic_engine(toy_store, dnf_combiner="prob-sum")
        result = engine.answer(parse("r(e0,y)|r(e0,y)", toy_store))
        np.testing.assert_allclose(result.scores, [0, 0.75, 0.75, 0])

    def test_negation_branch(self, toy_store):
        engine = symbolic_engine(toy_store, alpha=4.0)
        result = engine.answer(parse("s(e1,y)&!r(e0,y)", toy_store))
        assert set(np.nonzero(result.scores)[0]) == {3}

    def test_matches_oracle_support_on_trees(self):
        rng = np.random.default_rng(31)
        for seed in range(6):
            store = random_store(15, 3, density=0.15, seed=seed)
            engine = symbolic_engine(store)
            for template in ("2p", "pi", "3in"):
                try:
                    queries = generate_queries(store, template, 3, seed=seed, require="any")
                except RuntimeError:
                    continue
                for q in queries:
                    f = parse(q.formula, store)
                    support = set(np.nonzero(engine.answer(f).scores)[0])
                    assert support == enumerate_answers(f, store)

    def test_extra_layer_keeps_tree_support(self):
        store = random_store(18, 3, density=0.15, seed=40)
        for template in ("2p", "pi", "ip"):
            queries = generate_queries(store, template, 3, seed=7, require="any")
            for q in queries:
                f = parse(q.formula, store)
                g = build_graph(to_dnf(f)[0])
                d = depth(g).depth
                base = symbolic_engine(store, layers=d + 1).answer(f)
                extra = symbolic_engine(store, layers=d + 2).answer(f)
                assert set(np.nonzero(base.scores)[0]) == set(np.nonzero(extra.scores)[0])

    def test_deterministic(self, toy_store):
        table = train_toy(toy_store, rank=4, epochs=10)
        engine = QueryEngine(toy_store, table, EngineConfig(lam=0.3))
        a = engine.answer(parse("r(e0,x1)&s(x1,y)", toy_store))
        b = engine.answer(parse("r(e0,x1)&s(x1,y)", toy_store))
        assert np.array_equal(a.scores, b.scores)


class TestNeuralAnswer:
    def test_lambda_one_equals_symbolic(self, toy_store):
        table = train_toy(toy_store, rank=4, epochs=10)
        with_neural = QueryEngine(toy_store, table, EngineConfig(lam=1.0))
        without = symbolic_engine(toy_store)
        f = parse("r(e0,x1)&s(x1,y)", toy_store)
        # The neural term still shapes intermediate messages, but at lam=1 the
        # final scores are exactly the symbolic state.
        result = with_neural.answer(f)
        assert set(np.nonzero(result.scores)[0]) <= {3} | set(range(4))
        np.testing.assert_allclose(
            result.scores, result.branches[0].explanations["y"].to_dense()
        )
        np.testing.assert_allclose(without.answer(f).scores, [0, 0, 0, 1])

    def test_lambda_zero_ranks_single_answer_first(self, toy_store):
        table = train_toy(toy_store, rank=8, epochs=50)
        engine = QueryEngine(toy_store, table, EngineConfig(lam=0.0))
        result = engine.answer(parse("s(e1,y)", toy_store))
        # s(B, y) has the unique answer D; its summary embedding is exactly
        # E_D, so the cosine term peaks there.
        assert result.top_k(1)[0][0] == 3
        np.testing.assert_allclose(result.scores.sum(), 1.0, rtol=1e-9)

    def test_blend_is_convex_combination(self, toy_store):
        table = train_toy(toy_store, rank=4, epochs=10)
        f = parse("r(e0,y)", toy_store)
        sym = QueryEngine(toy_store, table, EngineConfig(lam=1.0)).answer(f).scores
        neu = QueryEngine(toy_store, table, EngineConfig(lam=0.0)).answer(f).scores
        mid = QueryEngine(toy_store, table, EngineConfig(lam=0.3)).answer(f).scores
        np.testing.assert_allclose(mid, 0.3 * sym + 0.7 * neu, rtol=1e-12)

    def test_cosine_step_is_scale_invariant(self, toy_store):
        table = train_toy(toy_store, rank=4, epochs=10)
        engine = QueryEngine(toy_store, table, EngineConfig(lam=0.0))
        rng = np.random.default_rng(33)
        vec = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        np.testing.assert_allclose(
            engine._entity_cosines(vec * 7.5), engine._entity_cosines(vec), rtol=1e-12
        )
        # The zero summary (degenerate node) maps to all-zero cosines.
        assert np.array_equal(engine._entity_cosines(np.zeros(4, dtype=np.complex128)), np.zeros(4))

    def test_neural_messages_keep_dead_branch_alive(self, toy_store):
        # Symbolically, r(A,.) and s(A,.) have disjoint successor sets (the
        # latter is empty), so the pure-symbolic run collapses to all-zero
        # scores; the softmax neural term is strictly positive everywhere and
        # keeps every entity in play.
        f = parse("r(e0,y)&s(e0,y)", toy_store)
        sym = symbolic_engine(toy_store).answer(f)
        assert sym.branches[0].stats.degenerate_nodes == ["y"]
        np.testing.assert_allclose(sym.scores, np.zeros(4))

        table = train_toy(toy_store, rank=4, epochs=10)
        neural = QueryEngine(toy_store, table, EngineConfig(lam=0.3)).answer(f)
        assert neural.branches[0].stats.degenerate_nodes == []
        assert np.all(neural.scores > 0)


class TestScheduling:
    @pytest.mark.parametrize("template", sorted(EXPECTED_SCHEDULE))
    def test_template_schedule(self, template):
        store = random_store(12, 5, density=0.3, seed=2)
        layers_want, pruned_want, full_want, first_want = EXPECTED_SCHEDULE[template]
        n_rels, n_consts = template_slots(template)
        text = instantiate_template(
            template, list(range(n_rels)), list(range(n_consts)), store
        )
        graph = build_graph(to_dnf(parse(text, store))[0])

        pruned = symbolic_engine(store).answer_conjunctive(graph).branches[0].stats
        assert pruned.layers == layers_want
        assert pruned.total_messages == pruned_want
        assert pruned.first_update == first_want
        # The first update of every variable is its hop distance to the
        # nearest constant.
        info = depth(graph)
        for v in graph.variable_indices():
            assert pruned.first_update[graph.nodes[v].label()] == info.dist_to_constant[v]

        full = symbolic_engine(store, dynamic_pruning=False).answer_conjunctive(graph)
        assert full.branches[0].stats.total_messages == full_want
        assert {v: 1 for v in first_want} == full.branches[0].stats.first_update

        # Cross-check both modes against an independent simulation of the rule.
        sim_pruned, sim_first = simulate_schedule(graph, layers_want, pruned=True)
        assert pruned.messages_per_layer == sim_pruned
        assert pruned.first_update == sim_first
        sim_full, _ = simulate_schedule(graph, layers_want, pruned=False)
        assert full.branches[0].stats.messages_per_layer == sim_full

    def test_pruning_strictly_helps_on_cycles(self):
        store = random_store(12, 5, density=0.3, seed=2)
        for template in ("3c", "3cm"):
            _, pruned_want, full_want, _ = EXPECTED_SCHEDULE[template]
            assert pruned_want < full_want


class TestLayerControl:
    def test_auto_layers_is_depth_plus_offset(self, toy_store):
        engine = symbolic_engine(toy_store, layer_offset=2)
        result = engine.answer(parse("r(e0,x1)&s(x1,y)", toy_store))
        assert result.branches[0].stats.layers == 4

    def test_fixed_layers_below_depth_rejected(self, toy_store):
        engine = symbolic_engine(toy_store, layers=1)
        with pytest.raises(ValueError, match="below the query depth"):
            engine.answer(parse("r(e0,x1)&s(x1,y)", toy_store))

    def test_fixed_layers_at_depth_allowed(self, toy_store):
        engine = symbolic_engine(toy_store, layers=2)
        result = engine.answer(parse("r(e0,x1)&s(x1,y)", toy_store))
        assert result.branches[0].stats.layers == 2
        np.testing.assert_allclose(result.scores, [0, 0, 0, 1])


class TestConfigAndWiring:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            EngineConfig(lam=1.5)
        with pytest.raises(ValueError):
            EngineConfig(epsilon=0)
        with pytest.raises(ValueError):
            EngineConfig(alpha=-1)
        with pytest.raises(ValueError):
            EngineConfig(layers=0)
        with pytest.raises(ValueError):
            EngineConfig(dnf_combiner="sum")

    def test_neural_requires_table(self, toy_store):
        with pytest.raises(ValueError, match="embedding table"):
            QueryEngine(toy_store, config=EngineConfig())

    def test_table_shape_must_match_store(self, toy_store):
        table = train_toy(random_store(6, 3, density=0.5, seed=1), rank=4, epochs=1)
        with pytest.raises(ValueError, match="covers"):
            QueryEngine(toy_store, table, EngineConfig())
