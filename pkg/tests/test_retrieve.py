"""Retrieval engine tests: contributions, regions, aggregation, selection."""

import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mindgraph.fuse import compute_path_embeddings
from mindgraph.graph import PAD, StructureError
from mindgraph.index import TemplateMatrices, build_template_matrices
from mindgraph.providers import (
    HashedBagEmbedder,
    MockLLMProvider,
    ProviderError,
    similarities,
)
from mindgraph.retrieve import (
    KeyPoint,
    NoFactCellsError,
    RankedPath,
    RetrievalConfig,
    RetrievalTrace,
    SeedNode,
    _contribution,
    _render_outline,
    _row_scores,
    aggregate_and_select,
    aggregate_matrix,
    band_boundaries,
    control_matrix,
    generate_key_points,
    pathway_matrix,
    retrieve,
    select_seed_nodes,
    similarity_matrix,
)

from generators import hand_graph, hand_template, random_graph, unit_store_for
from oracles import contribution_reference, region_cells


def kp(vector: np.ndarray, index: int = 0) -> KeyPoint:
    return KeyPoint(index=index, text=f"kp {index}", vector=np.asarray(vector, dtype=np.float64))


class ScriptedLLM:
    def __init__(self, responses: list[str]):
        self.responses = list(responses)

    def generate(self, request) -> str:
        return self.responses.pop(0)


# -- the three-way contribution rule -----------------------------------------


class TestContribution:
    def test_support_keeps_the_candidate_similarity(self):
        assert _contribution(0.8, 0.78, 0.03, 0.05) == 0.78

    def test_fuzzy_support_halves_it(self):
        assert _contribution(0.8, 0.76, 0.03, 0.05) == pytest.approx(0.38, abs=1e-12)

    def test_rejection_zeroes_it(self):
        assert _contribution(0.8, 0.74, 0.03, 0.05) == 0.0

    def test_support_boundary_is_inclusive(self):
        # dyadic thresholds make the boundary differences exact
        assert _contribution(1.0, 0.75, 0.25, 0.5) == 0.75
        below = float(np.nextafter(0.75, 0.0))
        assert _contribution(1.0, below, 0.25, 0.5) == 0.5 * below

    def test_fuzzy_boundary_is_inclusive(self):
        assert _contribution(1.0, 0.5, 0.25, 0.5) == 0.25
        # one ulp below still lands on the boundary after round-to-even, so
        # step two ulps down to cross it
        below = float(np.nextafter(np.nextafter(0.5, 0.0), 0.0))
        assert _contribution(1.0, below, 0.25, 0.5) == 0.0

    def test_stronger_candidate_always_supports(self):
        assert _contribution(0.2, 0.9, 0.03, 0.05) == 0.9

    def test_nonpositive_outcomes_collapse_to_zero(self):
        assert _contribution(0.0, 0.0, 0.03, 0.05) == 0.0
        assert _contribution(0.1, -0.5, 0.03, 0.05) == 0.0
        assert _contribution(-0.9, -0.2, 0.03, 0.05) == 0.0

    @given(
        st.floats(-1, 1, allow_nan=False),
        st.floats(-1, 1, allow_nan=False),
        st.floats(0.001, 0.2, allow_nan=False),
        st.floats(0.0, 0.3, allow_nan=False),
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_the_reference_rule(self, s0, sc, theta_s, extra):
        theta_f = theta_s + extra
        assert _contribution(s0, sc, theta_s, theta_f) == contribution_reference(
            s0, sc, theta_s, theta_f
        )


# -- similarity matrices ------------------------------------------------------


class TestSimilarityMatrix:
    def _setup(self, seed: int = 0):
        graph = hand_graph()
        store = unit_store_for(graph, dim=8, seed=seed)
        tm = build_template_matrices(graph, [1], store)
        rng = np.random.default_rng(seed + 50)
        v = rng.standard_normal(8)
        return graph, store, tm, kp(v / np.linalg.norm(v))

    def test_pad_cells_are_exactly_zero(self):
        _, _, tm, k = self._setup()
        sim = similarity_matrix(k, tm)
        assert sim[0, 3] == 0.0 and sim[1, 3] == 0.0

    def test_matches_direct_node_similarity_bitwise(self):
        _, store, tm, k = self._setup(1)
        sim = similarity_matrix(k, tm)
        for r in range(tm.n_rows):
            for c in range(tm.n_cols):
                nid = int(tm.ids[r, c])
                if nid == PAD:
                    continue
                direct = similarities(store.get(nid)[None, :], k.vector)[0]
                assert sim[r, c] == direct

    def test_shared_nodes_share_one_value(self):
        _, _, tm, k = self._setup(2)
        sim = similarity_matrix(k, tm)
        # node 1 occupies column 0 of every row, node 2 rows 0 and 1
        assert sim[0, 0] == sim[1, 0] == sim[2, 0]
        assert sim[0, 1] == sim[1, 1]


# -- seed selection -----------------------------------------------------------


class TestSelectSeedNodes:
    def test_picks_strongest_fact_cells(self):
        tm = hand_template()
        sim = np.zeros((3, 4))
        sim[0, 2], sim[1, 2], sim[2, 3] = 0.2, 0.9, 0.5
        seeds = select_seed_nodes(kp(np.zeros(4)), sim, tm, seeds_per_kp=2)
        assert [(s.row, s.col) for s in seeds] == [(1, 2), (2, 3)]
        assert seeds[0].sim == 0.9

    def test_ties_break_toward_the_smaller_row(self):
        tm = hand_template()
        sim = np.zeros((3, 4))
        sim[0, 2] = sim[1, 2] = sim[2, 3] = 0.7
        seeds = select_seed_nodes(kp(np.zeros(4)), sim, tm, seeds_per_kp=3)
        assert [s.row for s in seeds] == [0, 1, 2]

    def test_route_cells_are_ineligible(self):
        tm = hand_template()
        sim = np.zeros((3, 4))
        sim[0, 1] = 0.99  # a route cell, stronger than every fact
        sim[0, 2] = 0.1
        seeds = select_seed_nodes(kp(np.zeros(4)), sim, tm, seeds_per_kp=1)
        assert (seeds[0].row, seeds[0].col) == (0, 2)

    def test_short_templates_yield_fewer_seeds(self):
        tm = hand_template()
        seeds = select_seed_nodes(kp(np.zeros(4)), np.zeros((3, 4)), tm, seeds_per_kp=99)
        assert len(seeds) == 3

    def test_empty_template_raises(self):
        empty = TemplateMatrices(
            ids=np.full((0, 4), PAD, dtype=np.int64),
            vectors=np.zeros((0, 4, 2), dtype=np.float32),
            row_map=np.empty(0, dtype=np.int64),
        )
        with pytest.raises(NoFactCellsError):
            select_seed_nodes(kp(np.zeros(2)), np.zeros((0, 4)), empty, seeds_per_kp=1)

    def test_nonpositive_budget_rejected(self):
        with pytest.raises(ValueError):
            select_seed_nodes(kp(np.zeros(4)), np.zeros((3, 4)), hand_template(), 0)


# -- control matrix -----------------------------------------------------------


def _hand_sim() -> np.ndarray:
    """Similarities for hand_template driving a seed at (1, 2) with s0=0.9."""
    sim = np.zeros((3, 4))
    sim[1, 2] = 0.90  # the seed fact
    sim[1, 1] = 0.89  # parent: supports
    sim[1, 0] = 0.80  # topic: rejected, so bnd_l stays at column 1
    sim[0, 1] = 0.89  # same shared ancestor cell
    sim[0, 2] = 0.87  # sibling fact: the 0.03 difference rounds just past
    #                   theta_s in binary, so this cell gets fuzzy support
    sim[2, 0] = 0.90
    return sim


class TestControlMatrix:
    def test_hand_case_stains_the_band(self):
        tm = hand_template()
        seed = SeedNode(row=1, col=2, sim=0.9, kp_index=0)
        cm, bnd_l = control_matrix(seed, _hand_sim(), tm, RetrievalConfig())
        assert bnd_l == 1
        expect = np.zeros((3, 4))
        expect[0, 1], expect[0, 2] = 0.89, 0.5 * 0.87
        expect[1, 1], expect[1, 2] = 0.89, 0.90
        assert np.array_equal(cm, expect)

    def test_climb_stops_at_the_first_rejection(self):
        tm = hand_template()
        sim = _hand_sim()
        sim[1, 0] = 0.89  # now the topic supports too
        seed = SeedNode(row=1, col=2, sim=0.9, kp_index=0)
        cm, bnd_l = control_matrix(seed, sim, tm, RetrievalConfig())
        assert bnd_l == 0
        assert cm[2, 0] == 0.90  # the whole template is in the band now

    def test_rejected_parent_keeps_the_region_on_one_row(self):
        tm = hand_template()
        sim = np.zeros((3, 4))
        sim[1, 2] = 0.9
        sim[1, 1] = 0.1
        seed = SeedNode(row=1, col=2, sim=0.9, kp_index=0)
        cm, bnd_l = control_matrix(seed, sim, tm, RetrievalConfig())
        assert bnd_l == 2
        expect = np.zeros((3, 4))
        expect[1, 2] = 0.9
        assert np.array_equal(cm, expect)

    def test_rejected_seed_cell_stains_nothing(self):
        tm = hand_template()
        sim = np.zeros((3, 4))
        seed = SeedNode(row=1, col=2, sim=0.9, kp_index=0)
        cm, bnd_l = control_matrix(seed, sim, tm, RetrievalConfig())
        assert bnd_l == 2
        assert not cm.any()

    def test_rows_freeze_past_their_first_rejection(self):
        tm = hand_template()
        sim = np.full((3, 4), 0.9)
        sim[2, 1] = 0.1  # rejected interior cell on the deep row
        sim[0, 3] = sim[1, 3] = 0.0
        seed = SeedNode(row=0, col=2, sim=0.9, kp_index=0)
        cm, bnd_l = control_matrix(seed, sim, tm, RetrievalConfig())
        assert bnd_l == 0
        assert cm[2, 0] == 0.9
        # the high-similarity cells behind the rejection stay untouched
        assert cm[2, 1] == 0.0 and cm[2, 2] == 0.0 and cm[2, 3] == 0.0

    def test_pad_cells_are_never_stained(self):
        tm = hand_template()
        sim = np.full((3, 4), 0.9)
        seed = SeedNode(row=0, col=2, sim=0.9, kp_index=0)
        cm, _ = control_matrix(seed, sim, tm, RetrievalConfig())
        assert cm[0, 3] == 0.0 and cm[1, 3] == 0.0
        assert cm[2, 3] == 0.9

    def test_eval_count_is_climb_plus_band(self):
        tm = hand_template()
        trace = RetrievalTrace()
        seed = SeedNode(row=1, col=2, sim=0.9, kp_index=0)
        control_matrix(seed, _hand_sim(), tm, RetrievalConfig(), trace=trace)
        # 1 seed eval + 2 climb evals + 4 band cells
        assert trace.per_seed_evals == [7]
        assert trace.per_seed_path_len == [3]
        assert trace.per_seed_band_cells == [4]
        assert trace.contribution_evals == 7

    def test_matches_the_cellwise_reference(self):
        config = RetrievalConfig(theta_s=0.1, theta_f=0.2)
        for seed_idx in range(6):
            graph = random_graph(random.Random(seed_idx), n_maps=4)
            store = unit_store_for(graph, dim=8, seed=seed_idx)
            tm = build_template_matrices(graph, [n.id for n in graph.topics()], store)
            rng = np.random.default_rng(seed_idx)
            v = rng.standard_normal(8)
            k = kp(v / np.linalg.norm(v))
            sim = similarity_matrix(k, tm)
            for seed in select_seed_nodes(k, sim, tm, seeds_per_kp=3):
                cm, bnd_l = control_matrix(seed, sim, tm, config)
                expect = np.zeros(sim.shape)
                band_rows = sorted({r for r, _ in region_cells(tm.ids.tolist(), PAD, seed.row, bnd_l)})
                for r in band_rows:
                    for c in range(bnd_l, tm.n_cols):
                        if tm.ids[r, c] == PAD:
                            break
                        value = contribution_reference(
                            seed.sim, float(sim[r, c]), config.theta_s, config.theta_f
                        )
                        if value == 0.0:
                            break
                        expect[r, c] = value
                assert np.array_equal(cm, expect)

    def test_scale_invariant_under_power_of_two_scaling(self):
        # halving every similarity and both thresholds is exact in binary
        tm = hand_template()
        seed_hi = SeedNode(row=1, col=2, sim=0.9, kp_index=0)
        sim = _hand_sim()
        cm_hi, bnd_hi = control_matrix(seed_hi, sim, tm, RetrievalConfig(theta_s=0.03, theta_f=0.05))
        seed_lo = SeedNode(row=1, col=2, sim=0.45, kp_index=0)
        cm_lo, bnd_lo = control_matrix(
            seed_lo, 0.5 * sim, tm, RetrievalConfig(theta_s=0.015, theta_f=0.025)
        )
        assert bnd_hi == bnd_lo
        assert np.array_equal(cm_lo, 0.5 * cm_hi)


# -- pathway matrix -----------------------------------------------------------


class TestPathwayMatrix:
    def test_band_region_from_a_mid_column_turn(self):
        tm = hand_template()
        seed = SeedNode(row=1, col=2, sim=0.9, kp_index=0)
        pm = pathway_matrix(seed, 1, tm)
        expect = np.zeros((3, 4), dtype=np.uint8)
        expect[0, 1:3] = 1
        expect[1, 1:3] = 1
        assert np.array_equal(pm, expect)

    def test_topic_turn_covers_every_real_cell(self):
        tm = hand_template()
        seed = SeedNode(row=1, col=2, sim=0.9, kp_index=0)
        pm = pathway_matrix(seed, 0, tm)
        assert np.array_equal(pm, tm.mask.astype(np.uint8))

    def test_no_turn_keeps_the_seed_row_tail_only(self):
        tm = hand_template()
        seed = SeedNode(row=1, col=2, sim=0.9, kp_index=0)
        pm = pathway_matrix(seed, 2, tm)
        expect = np.zeros((3, 4), dtype=np.uint8)
        expect[1, 2] = 1
        assert np.array_equal(pm, expect)

    def test_rectangular_variant_truncates_at_the_shortest_fact(self):
        tm = hand_template()
        seed = SeedNode(row=2, col=3, sim=0.9, kp_index=0)
        pm = pathway_matrix(seed, 0, tm, rectangular=True)
        expect = np.zeros((3, 4), dtype=np.uint8)
        expect[:, 0:3] = 1
        assert np.array_equal(pm, expect)

    def test_matches_the_region_oracle(self):
        for g_seed in range(5):
            graph = random_graph(random.Random(g_seed), n_maps=4)
            store = unit_store_for(graph, dim=4, seed=g_seed)
            tm = build_template_matrices(graph, [n.id for n in graph.topics()], store)
            cols = tm.fact_cols()
            for row in range(0, tm.n_rows, 2):
                seed = SeedNode(row=row, col=int(cols[row]), sim=0.5, kp_index=0)
                for bnd_l in range(0, int(cols[row]) + 1):
                    for rect in (False, True):
                        pm = pathway_matrix(seed, bnd_l, tm, rectangular=rect)
                        cells = region_cells(tm.ids.tolist(), PAD, row, bnd_l, rectangular=rect)
                        expect = np.zeros(tm.ids.shape, dtype=np.uint8)
                        for r, c in cells:
                            expect[r, c] = 1
                        assert np.array_equal(pm, expect)

    def test_boundaries_report_the_band(self):
        tm = hand_template()
        seed = SeedNode(row=1, col=2, sim=0.9, kp_index=0)
        b = band_boundaries(tm, seed, 1)
        assert (b.bnd_l, b.bnd_t, b.bnd_b, b.bnd_r) == (1, 0, 1, None)
        b = band_boundaries(tm, seed, 0, rectangular=True)
        assert (b.bnd_l, b.bnd_t, b.bnd_b, b.bnd_r) == (0, 0, 2, 2)


# -- aggregation and selection ------------------------------------------------


class TestAggregateMatrix:
    def test_sums_cells_across_seeds(self):
        a = np.array([[0.1, 0.0], [0.2, 0.3]])
        b = np.array([[0.4, 0.0], [0.0, 0.1]])
        am = aggregate_matrix([a, b], (2, 2))
        assert am[0, 0] == pytest.approx(0.5, abs=1e-15)
        assert am[0, 1] == 0.0

    def test_seed_order_cannot_matter(self):
        rng = np.random.default_rng(0)
        sms = [np.abs(rng.standard_normal((4, 3))) for _ in range(6)]
        forward = aggregate_matrix(sms, (4, 3))
        backward = aggregate_matrix(list(reversed(sms)), (4, 3))
        assert np.array_equal(forward, backward)

    def test_empty_input_is_all_zero(self):
        assert not aggregate_matrix([], (3, 2)).any()


class TestRowScores:
    def test_exact_sums_with_and_without_zeros(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            sms = [
                np.where(rng.random((5, 4)) < 0.4, 0.0, rng.random((5, 4)))
                for _ in range(4)
            ]
            scores = _row_scores(sms, 5, 4)
            for i in range(5):
                every_value = [float(sm[i, j]) for sm in sms for j in range(4)]
                assert scores[i] == math.fsum(every_value)

    def test_no_seeds_means_all_zero(self):
        assert _row_scores([], 3, 4) == [0.0, 0.0, 0.0]


def _ranked(graph, tm, sms_spec, config=None, query="q"):
    """Drive aggregate_and_select from hand-written stained matrices."""
    seeds = [SeedNode(row=0, col=2, sim=0.9, kp_index=i) for i in range(len(sms_spec))]
    cms = [np.asarray(sm, dtype=np.float64) for sm in sms_spec]
    pms = [np.ones_like(cm, dtype=np.uint8) for cm in cms]
    return aggregate_and_select(graph, tm, seeds, cms, pms, config or RetrievalConfig(), query)


class TestAggregateAndSelect:
    def test_ranks_rows_by_total_stain(self):
        graph, tm = hand_graph(), hand_template()
        sm = np.zeros((3, 4))
        sm[0, 1:3] = 0.3
        sm[1, 1:3] = 0.4
        ctx = _ranked(graph, tm, [sm])
        assert [p.row for p in ctx.ranked_paths] == [1, 0]
        assert ctx.ranked_paths[0].score == pytest.approx(0.8, abs=1e-15)
        assert not ctx.low_confidence

    def test_zero_scoring_rows_never_appear(self):
        graph, tm = hand_graph(), hand_template()
        sm = np.zeros((3, 4))
        sm[2, 0] = 0.6
        ctx = _ranked(graph, tm, [sm])
        assert [p.row for p in ctx.ranked_paths] == [2]

    def test_ties_break_toward_the_smaller_row(self):
        graph, tm = hand_graph(), hand_template()
        sm = np.zeros((3, 4))
        sm[1, 2] = 0.5
        sm[0, 2] = 0.5
        ctx = _ranked(graph, tm, [sm])
        assert [p.row for p in ctx.ranked_paths] == [0, 1]

    def test_top_k_truncates(self):
        graph, tm = hand_graph(), hand_template()
        sm = np.zeros((3, 4))
        sm[0, 2], sm[1, 2], sm[2, 3] = 0.3, 0.2, 0.1
        ctx = _ranked(graph, tm, [sm], RetrievalConfig(top_k_paths=2))
        assert [p.row for p in ctx.ranked_paths] == [0, 1]

    def test_paths_carry_ids_texts_and_sources(self):
        graph, tm = hand_graph(), hand_template()
        sm = np.zeros((3, 4))
        sm[2, 3] = 0.9
        ctx = _ranked(graph, tm, [sm])
        path = ctx.ranked_paths[0]
        assert path.node_ids == (1, 3, 6, 7)
        assert path.texts == ("topic one", "route three", "route six", "fact seven")

    def test_kp_attribution_lists_every_contributing_key_point(self):
        graph, tm = hand_graph(), hand_template()
        sm0 = np.zeros((3, 4))
        sm0[0, 2] = 0.5
        sm1 = np.zeros((3, 4))
        sm1[0, 2] = 0.2
        sm1[1, 2] = 0.4
        ctx = _ranked(graph, tm, [sm0, sm1])
        by_row = {p.row: p for p in ctx.ranked_paths}
        assert by_row[0].kp_indices == (0, 1)
        assert by_row[1].kp_indices == (1,)

    def test_weak_best_path_flags_low_confidence(self):
        graph, tm = hand_graph(), hand_template()
        sm = np.zeros((3, 4))
        sm[0, 2] = 0.01
        ctx = _ranked(graph, tm, [sm], RetrievalConfig(theta_f=0.05))
        assert ctx.low_confidence

    def test_no_paths_flags_low_confidence(self):
        graph, tm = hand_graph(), hand_template()
        ctx = _ranked(graph, tm, [np.zeros((3, 4))])
        assert ctx.ranked_paths == []
        assert ctx.outline == ""
        assert ctx.low_confidence


class TestRenderOutline:
    def test_shared_prefixes_fold_together(self):
        graph = hand_graph()
        paths = [
            RankedPath(0, (1, 2, 4), ("topic one", "route two", "fact four"), 0.5, (0,)),
            RankedPath(1, (1, 2, 5), ("topic one", "route two", "fact five"), 0.25, (0,)),
        ]
        assert _render_outline(graph, paths) == (
            "- topic one\n"
            "  - route two\n"
            "    - fact four  [score=0.5000]\n"
            "    - fact five  [score=0.2500]"
        )

    def test_topics_appear_in_best_path_order(self):
        graph = hand_graph()
        # a second map so two distinct topics can interleave
        from generators import make_payload

        graph.add_mind_map(make_payload("m2", "other topic", {"other fact": None}, graph.allocator))
        other_topic = graph.maps["m2"].topic_id
        other_fact = next(iter(graph.facts_under(other_topic)))
        paths = [
            RankedPath(3, (other_topic, other_fact), ("other topic", "other fact"), 0.9, (0,)),
            RankedPath(0, (1, 2, 4), ("topic one", "route two", "fact four"), 0.5, (0,)),
        ]
        out = _render_outline(graph, paths)
        assert out.index("other topic") < out.index("topic one")

    def test_rows_inside_a_topic_follow_document_order(self):
        graph = hand_graph()
        paths = [
            RankedPath(1, (1, 2, 5), ("topic one", "route two", "fact five"), 0.9, (0,)),
            RankedPath(0, (1, 2, 4), ("topic one", "route two", "fact four"), 0.5, (0,)),
        ]
        out = _render_outline(graph, paths)
        assert out.index("fact four") < out.index("fact five")


# -- key points ----------------------------------------------------------------


class TestGenerateKeyPoints:
    def test_parses_bulleted_and_numbered_lines(self):
        emb = HashedBagEmbedder(dim=64)
        llm = ScriptedLLM(["- first point\n2. second point\n* third point"])
        kps = generate_key_points("what happened?", llm, emb)
        assert [k.text for k in kps] == ["first point", "second point", "third point"]
        assert [k.index for k in kps] == [0, 1, 2]
        expect = emb.embed(["first point", "second point", "third point"])
        for k in kps:
            assert np.array_equal(k.vector, expect[k.index])

    def test_blank_reply_falls_back_to_the_query(self):
        emb = HashedBagEmbedder(dim=64)
        kps = generate_key_points("the whole query", ScriptedLLM(["\n\n"]), emb)
        assert [k.text for k in kps] == ["the whole query"]

    def test_provider_failure_falls_back_to_the_query(self):
        emb = HashedBagEmbedder(dim=64)

        class DownLLM:
            def generate(self, request):
                raise ProviderError("backend unavailable")

        kps = generate_key_points("plain question", DownLLM(), emb)
        assert len(kps) == 1 and kps[0].text == "plain question"

    def test_empty_query_rejected(self):
        with pytest.raises(ValueError):
            generate_key_points("  ", MockLLMProvider(), HashedBagEmbedder())


# -- end to end through the matrix pipeline -------------------------------------


class TestRetrieve:
    def _world(self):
        from generators import make_payload
        from mindgraph.graph import PseudoGraph

        graph = PseudoGraph()
        graph.add_mind_map(
            make_payload(
                "m0",
                "ocean tides",
                {"tidal drivers": {"moon pulls water": None, "sun adds lift": None}},
                graph.allocator,
            )
        )
        graph.add_mind_map(
            make_payload(
                "m1",
                "desert winds",
                {"dune motion": {"sand drifts east": None}},
                graph.allocator,
            )
        )
        emb = HashedBagEmbedder(dim=64)
        store = compute_path_embeddings(graph, emb)
        return graph, store, emb

    def test_finds_the_matching_fact(self):
        graph, store, emb = self._world()
        trace = RetrievalTrace()
        ctx = retrieve(
            "key points: moon pulls water",
            graph,
            store,
            MockLLMProvider(),
            emb,
            RetrievalConfig(),
            trace=trace,
        )
        assert ctx.ranked_paths, "expected at least one path"
        assert "moon pulls water" in ctx.ranked_paths[0].texts[-1]
        assert not ctx.low_confidence

    def test_trace_is_fully_populated(self):
        graph, store, emb = self._world()
        trace = RetrievalTrace()
        retrieve("key points: sand drifts east", graph, store, MockLLMProvider(), emb, trace=trace)
        n_seeds = len(trace.seeds)
        assert n_seeds > 0
        assert len(trace.cms) == n_seeds
        assert len(trace.pms) == n_seeds
        assert len(trace.boundaries) == n_seeds
        assert len(trace.per_seed_evals) == n_seeds
        assert trace.template is not None
        assert len(trace.sims) == len(trace.kps)
        assert len(trace.row_scores) == trace.template.n_rows

    def test_eval_counts_stay_within_climb_plus_band(self):
        graph, store, emb = self._world()
        trace = RetrievalTrace()
        retrieve("key points: moon pulls water", graph, store, MockLLMProvider(), emb, trace=trace)
        for evals, path_len, band in zip(
            trace.per_seed_evals, trace.per_seed_path_len, trace.per_seed_band_cells
        ):
            assert evals <= path_len + band

    def test_prebuilt_template_matches_the_per_query_build(self):
        graph, store, emb = self._world()
        config = RetrievalConfig(whole_graph_candidates=True)
        prebuilt = build_template_matrices(graph, [n.id for n in graph.topics()], store)
        a = retrieve("key points: moon pulls water", graph, store, MockLLMProvider(), emb, config)
        b = retrieve(
            "key points: moon pulls water",
            graph,
            store,
            MockLLMProvider(),
            emb,
            config,
            template=prebuilt,
        )
        assert [p.row for p in a.ranked_paths] == [p.row for p in b.ranked_paths]
        assert [p.score for p in a.ranked_paths] == [p.score for p in b.ranked_paths]
        assert a.outline == b.outline

    def test_band_contiguity_is_asserted(self):
        tm = hand_template()
        tm.ids[1, 1] = 99  # break the contiguity the index layout guarantees
        tm.ids[2, 1] = 2
        sim = np.full((3, 4), 0.9)
        sim[0, 0] = 0.1  # reject the topic so the turn lands on column 1
        seed = SeedNode(row=0, col=2, sim=0.9, kp_index=0)
        with pytest.raises(StructureError):
            control_matrix(seed, sim, tm, RetrievalConfig())
