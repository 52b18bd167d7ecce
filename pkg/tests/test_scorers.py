import math
from datetime import date

import numpy as np
import pytest

from eventscope.eventmine import EventRecord
from eventscope.profiles import EventProfile, UserProfile
from eventscope.scorers import (FEATURE_NAMES, RANDOM_WALK, ScorerContext,
                                category_score, home_distance, popularity,
                                rank_events, social_influence,
                                temporal_distance)
from eventscope.corpus import Venue

from conftest import corpus_from

CUTOFF = date(2011, 6, 1)


def user_profile(user="u", counts=None, vector=None, hours=None, home=None):
    return UserProfile(user, counts or {}, vector or {},
                       tuple(hours or [0] * 24), home, CUTOFF)


def event(event_id="e1", anchor="vA", attendees=("a",), peak=12, pop=10):
    return EventRecord(event_id, CUTOFF, anchor, frozenset({anchor}),
                       frozenset(attendees), peak, pop, 5.0)


VENUES = {
    "vA": Venue("vA", 51.5, -0.12, "Bar"),
    "vB": Venue("vB", 51.50899322, -0.12, "Gym"),   # ~1.000 km north of vA
}


class TestHomeDistance:
    def test_home_at_anchor(self):
        s = home_distance(user_profile(home="vA"), event(), VENUES)
        assert s.raw == 0.0
        assert s.oriented == 1.0

    def test_one_km_gives_half(self):
        s = home_distance(user_profile(home="vB"), event(), VENUES)
        assert s.raw == pytest.approx(1000.0, abs=1.0)
        assert s.oriented == pytest.approx(0.5, abs=1e-3)

    def test_absent_home_ranks_last(self):
        s = home_distance(user_profile(home=None), event(), VENUES)
        assert s.raw is None
        assert s.oriented == 0.0


class TestCategoryScore:
    def test_identical_vectors(self):
        u = user_profile(vector={"Bar": 0.4, "Gym": 0.3})
        e = EventProfile("e1", {"Bar": 0.4, "Gym": 0.3}, frozenset({"a"}))
        assert category_score(u, e).oriented == pytest.approx(1.0)

    def test_disjoint_supports(self):
        u = user_profile(vector={"Bar": 1.0})
        e = EventProfile("e1", {"Gym": 1.0}, frozenset({"a"}))
        assert category_score(u, e).oriented == 0.0

    def test_hand_cosine(self):
        u = user_profile(vector={"Bar": 1.0, "Gym": 1.0})
        e = EventProfile("e1", {"Bar": 1.0}, frozenset({"a"}))
        assert category_score(u, e).oriented == pytest.approx(1 / math.sqrt(2), abs=1e-9)

    def test_zero_vector_scores_zero(self):
        u = user_profile(vector={})
        e = EventProfile("e1", {"Bar": 1.0}, frozenset({"a"}))
        assert category_score(u, e).oriented == 0.0

    def test_always_in_unit_interval(self):
        rng = np.random.default_rng(0)
        cats = [f"c{i}" for i in range(6)]
        for _ in range(100):
            u = user_profile(vector={c: float(rng.random()) for c in cats if rng.random() < 0.7})
            e = EventProfile("e1", {c: float(rng.random()) for c in cats if rng.random() < 0.7},
                             frozenset({"a"}))
            s = category_score(u, e).oriented
            assert 0.0 <= s <= 1.0 + 1e-12


class TestTemporalDistance:
    def test_all_mass_at_peak(self):
        hours = [0] * 24
        hours[12] = 7
        s = temporal_distance(user_profile(hours=hours), event(peak=12))
        assert s.raw == 0.0

    def test_circular_wraparound(self):
        hours = [0] * 24
        hours[23] = 5
        s = temporal_distance(user_profile(hours=hours), event(peak=1))
        assert s.raw == pytest.approx(2.0)

    def test_hand_weighted_sum(self):
        hours = [0] * 24
        hours[15] = 10   # normalized 1.0 at peak + 3
        hours[12] = 5    # normalized 0.5 at peak
        s = temporal_distance(user_profile(hours=hours), event(peak=12))
        assert s.raw == pytest.approx(3.0, abs=1e-9)
        assert s.oriented == pytest.approx(-3.0)

    def test_empty_histogram_sentinel(self):
        s = temporal_distance(user_profile(), event())
        assert s.raw is None
        assert s.oriented == -math.inf

    def test_invariant_under_count_scaling(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            hours = [int(rng.integers(0, 5)) for _ in range(24)]
            if sum(hours) == 0:
                hours[3] = 1
            peak = int(rng.integers(24))
            base = temporal_distance(user_profile(hours=hours), event(peak=peak)).raw
            scaled = temporal_distance(user_profile(hours=[h * 7 for h in hours]),
                                       event(peak=peak)).raw
            assert scaled == pytest.approx(base, abs=1e-12)


class TestPopularity:
    def test_constant_across_users(self):
        e = event(pop=120)
        assert popularity(e, "u1").oriented == 120.0
        assert popularity(e, "u2").oriented == 120.0

    def test_shared_ordering(self):
        assert popularity(event("e1", pop=120)).oriented > popularity(event("e2", pop=80)).oriented


class TestSocialInfluence:
    @pytest.fixture
    def social_corpus(self, tmp_path):
        # hand-built 8-node graph; centrality counted by enumeration below
        edges = [("me", "f1"), ("me", "f2"), ("f1", "a1"), ("f1", "a2"),
                 ("f2", "a3"), ("a1", "a2"), ("a1", "a3"), ("x", "a3")]
        rows = [(u, "vA", f"2011-05-01T10:{i:02d}:00Z")
                for i, u in enumerate(["me", "f1", "f2", "a1", "a2", "a3", "x"])]
        return corpus_from(tmp_path, rows, [("vA", 51.5, -0.12, "Bar")], edges)

    def test_no_attending_friends(self, social_corpus):
        s = social_influence(social_corpus, "me", event(attendees=("a1", "a2")), {"a1", "a2"})
        assert (s.raw, s.tie_break) == (0.0, 0.0)

    def test_centrality_tie_break_by_enumeration(self, social_corpus):
        # event A: attendees {f1, a1, a2}; me's friend f1 has friends a1, a2
        # inside -> centrality 2.  event B: attendees {f2, a3}; f2 has only a3
        # inside -> centrality 1.  raw ties at 1, tie_break decides.
        ev_a = event("eA", attendees=("f1", "a1", "a2"))
        ev_b = event("eB", attendees=("f2", "a3"))
        sa = social_influence(social_corpus, "me", ev_a, {"f1", "a1", "a2"})
        sb = social_influence(social_corpus, "me", ev_b, {"f2", "a3"})
        assert sa.raw == sb.raw == 1.0
        assert sa.tie_break == 2.0
        assert sb.tie_break == 1.0
        ranked = rank_events([sa, sb], {})
        assert ranked.event_ids == ("eA", "eB")

    def test_held_out_friend_not_counted(self, social_corpus):
        ev = event("eA", attendees=("f1", "a1"))
        s = social_influence(social_corpus, "me", ev, {"a1"})
        assert s.raw == 0.0

    def test_monotone_in_training_set(self, social_corpus):
        ev = event("eA", attendees=("f1", "f2", "a1"))
        for base in ({"a1"}, {"f1"}, {"f1", "f2"}):
            s0 = social_influence(social_corpus, "me", ev, base)
            s1 = social_influence(social_corpus, "me", ev, base | {"f2"})
            assert s1.raw >= s0.raw


class TestRankEvents:
    def scores(self, pairs):
        from eventscope.scorers import FeatureScore
        return [FeatureScore("f", "u", eid, val, val, tie) for eid, val, tie in pairs]

    def test_simple_order(self):
        plist = rank_events(self.scores([("e1", 0.9, 0), ("e2", 0.1, 0)]), {"e1": 1})
        assert plist.event_ids == ("e1", "e2")
        assert plist.rank_of("e1") == 1

    def test_tie_break_field(self):
        plist = rank_events(self.scores([("e1", 0.5, 1.0), ("e2", 0.5, 3.0)]), {})
        assert plist.event_ids == ("e2", "e1")

    def test_tie_break_disabled(self):
        plist = rank_events(self.scores([("e1", 0.5, 1.0), ("e2", 0.5, 3.0)]), {},
                            use_tie_break=False)
        assert plist.event_ids == ("e1", "e2")

    def test_full_tie_ascending_ids(self):
        plist = rank_events(self.scores([("e2", 0.5, 0), ("e1", 0.5, 0), ("e3", 0.5, 0)]), {})
        assert plist.event_ids == ("e1", "e2", "e3")

    def test_duplicate_event_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            rank_events(self.scores([("e1", 0.5, 0), ("e1", 0.4, 0)]), {})

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            vals = rng.random(8)
            pairs = [(f"e{i}", float(v), 0.0) for i, v in enumerate(vals)]
            base = rank_events(self.scores(pairs), {})
            for transform in (lambda x: 3 * x + 1, math.exp, lambda x: x ** 3 + 0.5 * x):
                warped = [(eid, transform(v), t) for eid, v, t in pairs]
                assert rank_events(self.scores(warped), {}).event_ids == base.event_ids


class TestMatrixConsistency:
    """The vectorized matrices must agree with the per-pair scorers."""

    @pytest.fixture(scope="class")
    @staticmethod
    def setup():
        from eventscope.synthgen import SynthConfig, generate
        from eventscope.eventmine import mine_events
        corpus, _ = generate(SynthConfig(
            n_users=120, n_venues=40, n_categories=8, n_days=30, n_events=3,
            event_size_mean=25, factor_mix={"social": 0.5, "category": 0.5}, seed=13))
        events = mine_events(corpus, top_k=3)
        training = {e.event_id: set(sorted(e.attendees)[:-2]) for e in events}
        return corpus, events, training

    def test_matrices_match_per_pair(self, setup):
        from eventscope.profiles import build_event_profile, build_user_profile, compute_idf
        corpus, events, training = setup
        ctx = ScorerContext(corpus)
        rng = np.random.default_rng(3)
        users = sorted(corpus.users)
        sample = [users[i] for i in rng.choice(len(users), size=25, replace=False)]

        matrices = {n: ctx.matrix(n, events, training)
                    for n in FEATURE_NAMES if n != RANDOM_WALK}
        idf_by_day, profiles_by_day = {}, {}
        for e in events:
            if e.day not in idf_by_day:
                idf_by_day[e.day] = compute_idf(corpus, e.day)
        event_profiles = {e.event_id: build_event_profile(corpus, e, training[e.event_id])
                          for e in events}

        for u in sample:
            for e in events:
                idf = idf_by_day[e.day]
                profile = build_user_profile(corpus, u, e.day, idf)
                pairs = {
                    "home_distance": home_distance(profile, e, corpus.venues),
                    "category_score": category_score(profile, event_profiles[e.event_id]),
                    "temporal_distance": temporal_distance(profile, e),
                    "popularity": popularity(e, u),
                    "social_influence": social_influence(corpus, u, e, training[e.event_id]),
                }
                for name, direct in pairs.items():
                    got = matrices[name].get(u, e.event_id)
                    if direct.raw is None:
                        assert got.raw is None
                        if name == "temporal_distance":
                            continue  # matrix holds the worst-observed sentinel
                    else:
                        assert got.raw == pytest.approx(direct.raw, abs=1e-9)
                        assert got.oriented == pytest.approx(direct.oriented, abs=1e-9)
                    assert got.tie_break == pytest.approx(direct.tie_break, abs=1e-9)

    def test_temporal_sentinel_is_below_everything(self, setup):
        corpus, events, training = setup
        ctx = ScorerContext(corpus)
        m = ctx.matrix("temporal_distance", events, training)
        missing = np.isnan(m.raw)
        if missing.any():
            assert m.oriented[missing].max() < m.oriented[~missing].min()
