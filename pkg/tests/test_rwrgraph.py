import math
from datetime import date

import numpy as np
import pytest
from scipy import sparse

from eventscope.eventmine import EventRecord
from eventscope.profiles import EventProfile, UserProfile
from eventscope.rwrgraph import (EVENT, SocioSpatialGraph, _normalize,
                                 build_graph, category_user_weight, rwr,
                                 rwr_feature)

from conftest import corpus_from

CUTOFF = date(2011, 6, 1)


def dense_rwr_oracle(graph, event_id, alpha):
    """Direct solve of (I - alpha P^T) x = (1 - alpha) e with the dangling
    redirection folded into P."""
    n = graph.n_nodes
    P = graph.transition.toarray()
    r = graph.node_index(EVENT, event_id)
    for i in np.flatnonzero(graph.dangling):
        P[i, r] = 1.0
    e = np.zeros(n)
    e[r] = 1.0
    return np.linalg.solve(np.eye(n) - alpha * P.T, (1 - alpha) * e)


def random_typed_graph(rng, n_users, n_cats):
    """Random weights on the four legal arc types; some rows dangling."""
    n = n_users + n_cats + 1
    M = np.zeros((n, n))
    for u in range(n_users):
        if rng.random() < 0.85:
            for v in range(n_users):
                if u != v and rng.random() < 0.3:
                    M[u, v] = rng.random()
            for c in range(n_cats):
                if rng.random() < 0.5:
                    M[u, n_users + c] = rng.random()
    for c in range(n_cats):
        if rng.random() < 0.8:
            for u in range(n_users):
                if rng.random() < 0.4:
                    M[n_users + c, u] = rng.random()
    event_row = n_users + n_cats
    for c in range(n_cats):
        if rng.random() < 0.6:
            M[event_row, n_users + c] = rng.random()
    user_ids = [f"u{i}" for i in range(n_users)]
    cats = [f"c{i}" for i in range(n_cats)]
    return _normalize(sparse.csr_matrix(M), user_ids, cats, ["ev"])


def profile(user, counts, vector):
    return UserProfile(user, counts, vector, (0,) * 24, None, CUTOFF)


def event_record(event_id="ev", attendees=("a",)):
    return EventRecord(event_id, CUTOFF, "vA", frozenset({"vA"}),
                       frozenset(attendees), 12, 10, 3.0)


class TestCategoryUserWeight:
    def test_hand_value(self):
        # busiest visitor of the category, 2 of 8 category types visited
        assert category_user_weight(5, 5, 8, 2) == pytest.approx(math.log(4), abs=1e-9)

    def test_zero_cases(self):
        assert category_user_weight(0, 5, 8, 2) == 0.0
        assert category_user_weight(3, 5, 8, 8) == 0.0   # visited everything


class TestBuildGraph:
    @pytest.fixture
    def five_friend_corpus(self, tmp_path):
        edges = [("hub", f"f{i}") for i in range(4)]
        rows = [("hub", "vA", "2011-05-01T10:00:00Z")]
        venues = [("vA", 51.5, -0.12, "Bar"), ("vB", 51.51, -0.12, "Gym"),
                  ("vC", 51.52, -0.12, "Cafe"), ("vD", 51.53, -0.12, "Pub"),
                  ("vE", 51.54, -0.12, "Tea")]
        return corpus_from(tmp_path, rows, venues, edges)

    def test_user_user_arcs_inverse_degree(self, five_friend_corpus):
        profiles = {u: profile(u, {}, {}) for u in five_friend_corpus.users}
        g = build_graph(five_friend_corpus, [], [], profiles)
        arcs = g.out_arcs("user", "hub")
        assert len(arcs) == 4
        for _, _, w in arcs:
            assert w == pytest.approx(0.25)

    def test_event_keeps_only_nonzero_topk(self, five_friend_corpus):
        ev = event_record()
        ep = EventProfile("ev", {"Bar": 0.5, "Gym": 0.25, "Cafe": 0.25,
                                 "Pub": 0.0, "Tea": 0.0}, frozenset({"a"}))
        profiles = {u: profile(u, {}, {}) for u in five_friend_corpus.users}
        g = build_graph(five_friend_corpus, [ev], [ep], profiles)
        arcs = g.out_arcs("event", "ev")
        assert len(arcs) == 3
        assert sum(w for *_, w in arcs) == pytest.approx(1.0, abs=1e-12)

    def test_empty_event_profile_rejected(self, five_friend_corpus):
        ep = EventProfile("ev", {}, frozenset({"a"}))
        profiles = {u: profile(u, {}, {}) for u in five_friend_corpus.users}
        with pytest.raises(ValueError, match="empty profile"):
            build_graph(five_friend_corpus, [event_record()], [ep], profiles)

    def test_rows_normalized(self, tmp_path):
        from eventscope.synthgen import SynthConfig, generate
        from eventscope.eventmine import mine_events
        from eventscope.profiles import (UserProfileTable, build_event_profile,
                                         compute_idf, build_user_profile)
        corpus, _ = generate(SynthConfig(n_users=50, n_venues=20, n_categories=8,
                                         n_days=20, n_events=2, event_size_mean=12,
                                         factor_mix={"category": 1.0}, seed=3))
        events = mine_events(corpus, top_k=2)
        day = events[0].day
        idf = compute_idf(corpus, day)
        profiles = {u: build_user_profile(corpus, u, day, idf) for u in corpus.users}
        eps = [build_event_profile(corpus, e, e.attendees) for e in events]
        g = build_graph(corpus, events, eps, profiles)
        sums = np.asarray(g.transition.sum(axis=1)).ravel()
        for i, s in enumerate(sums):
            assert g.dangling[i] == (s == 0)
            if not g.dangling[i]:
                assert s == pytest.approx(1.0, abs=1e-12)


class TestRWR:
    def chain_graph(self):
        """event -> cat -> user; the user's only arc returns to the cat."""
        M = np.zeros((3, 3))
        M[2, 1] = 1.0   # event -> category
        M[1, 0] = 1.0   # category -> user
        M[0, 1] = 1.0   # user -> category
        return _normalize(sparse.csr_matrix(M), ["u0"], ["c0"], ["ev"])

    def test_alpha_zero_is_pure_restart(self):
        g = self.chain_graph()
        res = rwr(g, "ev", alpha=0.0)
        assert res.user_scores["u0"] == 0.0
        assert res.scores[g.node_index(EVENT, "ev")] == pytest.approx(1.0)

    def test_unreachable_user_scores_zero(self):
        M = np.zeros((4, 4))
        M[3, 2] = 1.0   # event -> cat
        M[2, 0] = 1.0   # cat -> u0; u1 unreachable
        g = _normalize(sparse.csr_matrix(M), ["u0", "u1"], ["c0"], ["ev"])
        res = rwr(g, "ev", alpha=0.85)
        assert res.user_scores["u1"] == 0.0
        assert res.user_scores["u0"] > 0.0

    def test_three_node_chain_matches_dense_solve(self):
        g = self.chain_graph()
        res = rwr(g, "ev", alpha=0.85, tolerance=1e-12)
        oracle = dense_rwr_oracle(g, "ev", 0.85)
        np.testing.assert_allclose(res.scores, oracle, atol=1e-9)

    def test_randomized_graphs_match_dense_solve(self):
        rng = np.random.default_rng(17)
        for trial in range(25):
            n_users = int(rng.integers(2, 30))
            n_cats = int(rng.integers(1, 15))
            g = random_typed_graph(rng, n_users, n_cats)
            res = rwr(g, "ev", alpha=0.85, tolerance=1e-13, max_iterations=400)
            oracle = dense_rwr_oracle(g, "ev", 0.85)
            np.testing.assert_allclose(res.scores, oracle, atol=1e-8)
            assert res.scores.sum() == pytest.approx(1.0, abs=1e-9)

    def test_residual_decay_ratio_bounded_by_alpha(self):
        rng = np.random.default_rng(23)
        g = random_typed_graph(rng, 20, 6)
        res = rwr(g, "ev", alpha=0.85, tolerance=1e-12, max_iterations=400)
        hist = res.residual_history
        for a, b in zip(hist, hist[1:]):
            if a > 1e-13:
                assert b <= a * (0.85 + 1e-9)

    def test_probability_conserved_each_run(self):
        rng = np.random.default_rng(29)
        for _ in range(5):
            g = random_typed_graph(rng, 15, 5)
            res = rwr(g, "ev", alpha=0.6)
            assert res.scores.sum() == pytest.approx(1.0, abs=1e-9)
            assert (res.scores >= 0).all()

    def test_alpha_out_of_range(self):
        with pytest.raises(ValueError):
            rwr(self.chain_graph(), "ev", alpha=1.0)

    def test_nonconvergence_reports_residual(self):
        g = self.chain_graph()
        with pytest.raises(RuntimeError, match="residual"):
            rwr(g, "ev", alpha=0.99, tolerance=1e-12, max_iterations=3)

    def test_removing_social_arcs_leaves_category_path_only(self):
        # u1 reachable only through u0's friendship arc
        M = np.zeros((4, 4))
        M[3, 2] = 1.0   # ev -> c0
        M[2, 0] = 1.0   # c0 -> u0
        M[0, 1] = 1.0   # u0 -> u1 (social)
        g_with = _normalize(sparse.csr_matrix(M), ["u0", "u1"], ["c0"], ["ev"])
        with_social = rwr(g_with, "ev", alpha=0.85)
        M2 = M.copy()
        M2[0, 1] = 0.0
        g_without = _normalize(sparse.csr_matrix(M2), ["u0", "u1"], ["c0"], ["ev"])
        without = rwr(g_without, "ev", alpha=0.85)
        assert with_social.user_scores["u1"] > 0.0
        assert without.user_scores["u1"] == 0.0

    def test_adding_friendship_never_decreases_neighbor_score(self):
        # enumeration over a small family: base chain plus optional u0->u1 arc
        for extra_weight in (0.25, 0.5, 1.0):
            M = np.zeros((5, 5))
            M[4, 3] = 1.0    # ev -> c0
            M[3, 0] = 0.7    # c0 -> u0
            M[3, 1] = 0.3    # c0 -> u1
            M[0, 3] = 1.0    # u0 -> c0
            base = _normalize(sparse.csr_matrix(M), ["u0", "u1", "u2"], ["c0"], ["ev"])
            score_before = rwr(base, "ev", alpha=0.85).user_scores["u2"]
            M2 = M.copy()
            M2[0, 2] = extra_weight   # befriend u2
            g2 = _normalize(sparse.csr_matrix(M2), ["u0", "u1", "u2"], ["c0"], ["ev"])
            score_after = rwr(g2, "ev", alpha=0.85).user_scores["u2"]
            assert score_after >= score_before


class TestRwrFeature:
    @pytest.fixture
    @staticmethod
    def mined():
        from eventscope.synthgen import SynthConfig, generate
        from eventscope.eventmine import mine_events
        corpus, _ = generate(SynthConfig(n_users=60, n_venues=25, n_categories=8,
                                         n_days=25, n_events=2, event_size_mean=15,
                                         factor_mix={"niche": 0.5, "category": 0.5},
                                         devotees_per_niche=20, seed=21))
        return corpus, mine_events(corpus, top_k=2)

    def test_isolated_user_scores_zero(self, mined):
        corpus, events = mined
        matrix = rwr_feature(corpus, events)
        # a user with no pre-event check-ins and no friends is unreachable
        from eventscope.corpus import CorpusIndex
        index = CorpusIndex(corpus)
        for e in events:
            from eventscope.profiles import UserProfileTable
            table = UserProfileTable(index, e.day)
            col = matrix.col_of(e.event_id)
            for u in index.user_ids:
                ui = index.uindex[u]
                if table.cat_counts[ui].sum() == 0 and not corpus.social.friends(u):
                    assert matrix.raw[ui, col] == 0.0

    def test_matches_public_build_graph_path(self, mined):
        from eventscope.profiles import build_event_profile, build_user_profile, compute_idf
        corpus, events = mined
        matrix = rwr_feature(corpus, events)
        for e in events:
            idf = compute_idf(corpus, e.day)
            profiles = {u: build_user_profile(corpus, u, e.day, idf) for u in corpus.users}
            ep = build_event_profile(corpus, e, e.attendees)
            g = build_graph(corpus, [e], [ep], profiles)
            res = rwr(g, e.event_id)
            col = matrix.col_of(e.event_id)
            for i, u in enumerate(matrix.user_ids):
                assert matrix.raw[i, col] == pytest.approx(res.user_scores[u], abs=1e-9)

    def test_scores_sum_to_one_with_non_user_nodes(self, mined):
        from eventscope.profiles import build_event_profile, build_user_profile, compute_idf
        corpus, events = mined
        e = events[0]
        idf = compute_idf(corpus, e.day)
        profiles = {u: build_user_profile(corpus, u, e.day, idf) for u in corpus.users}
        ep = build_event_profile(corpus, e, e.attendees)
        g = build_graph(corpus, [e], [ep], profiles)
        res = rwr(g, e.event_id)
        assert res.scores.sum() == pytest.approx(1.0, abs=1e-9)
        assert sum(res.user_scores.values()) <= 1.0


def test_friend_of_heavy_visitor_scores_higher():
    """6-node hand graph: two identical users, one befriended by a heavy
    visitor of the event's top category; verified against the dense oracle."""
    # nodes: u_fan, u_friend, u_loner, c_music, (pad cat), ev
    user_ids = ["u_fan", "u_friend", "u_loner"]
    cats = ["c_music", "c_other"]
    M = np.zeros((6, 6))
    ev, c_music = 5, 3
    M[ev, c_music] = 1.0
    M[c_music, 0] = 1.0          # category -> its heavy visitor
    M[0, 3] = 0.5                # fan revisits music
    M[0, 1] = 0.5                # fan -> friend
    M[1, 0] = 1.0                # friend -> fan
    g = _normalize(sparse.csr_matrix(M), user_ids, cats, ["ev"])
    res = rwr(g, "ev", alpha=0.85)
    assert res.user_scores["u_friend"] > res.user_scores["u_loner"]
    oracle = dense_rwr_oracle(g, "ev", 0.85)
    np.testing.assert_allclose(res.scores, oracle, atol=1e-9)
