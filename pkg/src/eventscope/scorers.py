"""The five non-graph attendance features, per pair and as score matrices.

Every feature carries a raw value and an oriented value, a monotone
transform fixed so that higher always means more likely to attend.  That
keeps single-feature rankings unchanged while giving the fusion learners
uniformly oriented inputs.  Missing data (no home venue, empty hourly
histogram) ranks last under the affected feature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus, CorpusIndex
from .eventmine import EventRecord, haversine_m
from .profiles import EventProfile, UserProfile, UserProfileTable

HOME_DISTANCE = "home_distance"
CATEGORY_SCORE = "category_score"
TEMPORAL_DISTANCE = "temporal_distance"
POPULARITY = "popularity"
SOCIAL_INFLUENCE = "social_influence"
RANDOM_WALK = "random_walk"

FEATURE_NAMES = (HOME_DISTANCE, CATEGORY_SCORE, TEMPORAL_DISTANCE,
                 POPULARITY, SOCIAL_INFLUENCE, RANDOM_WALK)


@dataclass(frozen=True)
class FeatureScore:
    feature_name: str
    user_id: str
    event_id: str
    raw: float | None          # None when the input data is missing
    oriented: float            # higher = more likely to attend
    tie_break: float = 0.0


@dataclass(frozen=True)
class PredictionList:
    """One user's ranked events with ground-truth relevance flags."""

    user_id: str
    event_ids: tuple           # rank order, best first (rank i+1)
    relevance: dict            # event_id -> 0/1

    def rank_of(self, event_id) -> int:
        return self.event_ids.index(event_id) + 1


def _circular_hour_distance(h, p):
    d = abs(h - p)
    return min(d, 24 - d)


def home_distance(profile: UserProfile, event: EventRecord, venues: dict) -> FeatureScore:
    """Distance from the user's home venue to the event anchor.

    oriented = 1 / (1 + km); users without a home rank last (oriented 0).
    """
    anchor = venues[event.anchor_venue]
    if profile.home_venue is None:
        return FeatureScore(HOME_DISTANCE, profile.user_id, event.event_id, None, 0.0)
    home = venues[profile.home_venue]
    raw = haversine_m(home.lat, home.lon, anchor.lat, anchor.lon)
    return FeatureScore(HOME_DISTANCE, profile.user_id, event.event_id, raw, 1.0 / (1.0 + raw / 1000.0))


def category_score(user: UserProfile, event: EventProfile) -> FeatureScore:
    """Cosine similarity between user and event category vectors."""
    dot = sum(user.category_vector.get(c, 0.0) * s for c, s in event.category_vector.items())
    nu = math.sqrt(sum(v * v for v in user.category_vector.values()))
    ne = math.sqrt(sum(v * v for v in event.category_vector.values()))
    cos = dot / (nu * ne) if nu > 0 and ne > 0 else 0.0
    return FeatureScore(CATEGORY_SCORE, user.user_id, event.event_id, cos, cos)


def temporal_distance(user: UserProfile, event: EventRecord) -> FeatureScore:
    """Activity-weighted circular distance of the user's hours from the
    event peak; oriented is the negation.  An empty histogram yields the
    -inf sentinel (matrix builders substitute worst-observed - 1)."""
    hours = user.hourly_counts
    peak = event.peak_hour
    max_h = max(hours)
    if max_h == 0:
        return FeatureScore(TEMPORAL_DISTANCE, user.user_id, event.event_id, None, -math.inf)
    raw = sum((n / max_h) * _circular_hour_distance(h, peak) for h, n in enumerate(hours))
    return FeatureScore(TEMPORAL_DISTANCE, user.user_id, event.event_id, raw, -raw)


def popularity(event: EventRecord, user_id: str = "") -> FeatureScore:
    """Total event-day check-ins across the scope; identical for all users."""
    return FeatureScore(POPULARITY, user_id, event.event_id, float(event.popularity), float(event.popularity))


def social_influence(corpus: Corpus, user, event: EventRecord, training_attendees) -> FeatureScore:
    """Number of the user's friends among the training attendees.

    Ties are broken by the best-connected such friend: the maximum, over
    attending friends, of that friend's own friend count within the
    training attendee set.
    """
    training = set(training_attendees)
    if not training <= event.attendees:
        raise ValueError("training attendees must be a subset of event attendees")
    friends = set(corpus.social.friends(user) & training)
    friends.discard(user)
    raw = len(friends)
    tie = 0.0
    for f in friends:
        tie = max(tie, len(corpus.social.friends(f) & training))
    return FeatureScore(SOCIAL_INFLUENCE, user, event.event_id, float(raw), float(raw), tie)


def rank_events(scores, relevance, use_tie_break: bool = True) -> PredictionList:
    """Sort one user's feature scores into a prediction list.

    Descending by (oriented, tie_break), final ties by ascending event id.
    `relevance` flags are supplied by the evaluation harness.
    """
    ids = [s.event_id for s in scores]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate event_id in scores")
    if use_tie_break:
        ordered = sorted(scores, key=lambda s: (-s.oriented, -s.tie_break, s.event_id))
    else:
        ordered = sorted(scores, key=lambda s: (-s.oriented, s.event_id))
    user_id = scores[0].user_id if scores else ""
    rel = {e: int(relevance.get(e, 0)) for e in ids}
    return PredictionList(user_id, tuple(s.event_id for s in ordered), rel)


@dataclass
class ScoreMatrix:
    """A users x events block of one feature's scores.

    `raw` uses NaN for missing data; `oriented` is always finite (missing
    entries hold the feature's rank-last sentinel, which is also what the
    fusion learners receive).
    """

    feature_name: str
    user_ids: list
    event_ids: list
    raw: np.ndarray
    oriented: np.ndarray
    tie_break: np.ndarray = None
    _urow: dict = field(default=None, repr=False)
    _ecol: dict = field(default=None, repr=False)

    def __post_init__(self):
        if self.tie_break is None:
            self.tie_break = np.zeros_like(self.oriented)
        self._urow = {u: i for i, u in enumerate(self.user_ids)}
        self._ecol = {e: j for j, e in enumerate(self.event_ids)}

    def row_of(self, user_id) -> int:
        return self._urow[user_id]

    def col_of(self, event_id) -> int:
        return self._ecol[event_id]

    def get(self, user_id, event_id) -> FeatureScore:
        i, j = self._urow[user_id], self._ecol[event_id]
        raw = self.raw[i, j]
        return FeatureScore(self.feature_name, user_id, event_id,
                            None if np.isnan(raw) else float(raw),
                            float(self.oriented[i, j]), float(self.tie_break[i, j]))

    def user_scores(self, user_id) -> list:
        return [self.get(user_id, e) for e in self.event_ids]

    def write_csv(self, fh, header: bool = True) -> None:
        if header:
            fh.write("feature,user_id,event_id,raw,oriented,tie_break\n")
        for i, u in enumerate(self.user_ids):
            for j, e in enumerate(self.event_ids):
                raw = self.raw[i, j]
                raw_s = "" if np.isnan(raw) else repr(float(raw))
                fh.write(f"{self.feature_name},{u},{e},{raw_s},"
                         f"{repr(float(self.oriented[i, j]))},{repr(float(self.tie_break[i, j]))}\n")


class ScorerContext:
    """Vectorized builder of feature matrices over a corpus.

    Caches the per-cutoff profile tables (user profiles depend only on the
    cutoff day, not on the evaluation fold) and the friendship matrix.
    Matrix entries agree with the per-pair scorer functions.
    """

    def __init__(self, corpus: Corpus, index: CorpusIndex | None = None):
        self.corpus = corpus
        self.index = index if index is not None else CorpusIndex(corpus)
        self._tables = {}
        self._friends = None
        hours = np.arange(24)
        diff = np.abs(hours[:, None] - hours[None, :])
        self._circ = np.minimum(diff, 24 - diff).astype(float)

    def table(self, cutoff_day) -> UserProfileTable:
        if cutoff_day not in self._tables:
            self._tables[cutoff_day] = UserProfileTable(self.index, cutoff_day)
        return self._tables[cutoff_day]

    def friend_csr(self):
        if self._friends is None:
            self._friends = self.index.friend_matrix()
        return self._friends

    def event_profile_vector(self, event: EventRecord, training) -> np.ndarray:
        """Event category scores from the given training attendees.

        Unlike the scalar profile builder this tolerates an empty training
        set (an event whose attendees are all held out in some fold) by
        returning the all-zero, uninformative profile.
        """
        table = self.table(event.day)
        if not training:
            return np.zeros(self.index.n_categories)
        uidx = np.array([self.index.uindex[u] for u in sorted(training)], dtype=np.int64)
        return table.event_vector(uidx)

    def matrix(self, feature_name, events, training_sets) -> ScoreMatrix:
        """Full user x event matrix for one feature.

        `training_sets` maps event_id to the attendees visible to profile
        construction and social counting (the evaluation harness passes
        each event's non-held-out attendees).
        """
        builders = {
            HOME_DISTANCE: self._home_matrix,
            CATEGORY_SCORE: self._category_matrix,
            TEMPORAL_DISTANCE: self._temporal_matrix,
            POPULARITY: self._popularity_matrix,
            SOCIAL_INFLUENCE: self._social_matrix,
        }
        if feature_name not in builders:
            raise ValueError(f"unknown feature {feature_name!r}")
        return builders[feature_name](list(events), training_sets)

    def _shell(self, name, events):
        n_u, n_e = self.index.n_users, len(events)
        return ScoreMatrix(name, list(self.index.user_ids), [e.event_id for e in events],
                           np.full((n_u, n_e), np.nan), np.zeros((n_u, n_e)))

    def _home_matrix(self, events, _training):
        m = self._shell(HOME_DISTANCE, events)
        for j, e in enumerate(events):
            hlat, hlon = self.table(e.day).home_coords()
            anchor = self.corpus.venues[e.anchor_venue]
            m.raw[:, j] = _haversine_vec(hlat, hlon, anchor.lat, anchor.lon)
        has = ~np.isnan(m.raw)
        m.oriented[has] = 1.0 / (1.0 + m.raw[has] / 1000.0)
        return m

    def _category_matrix(self, events, training_sets):
        m = self._shell(CATEGORY_SCORE, events)
        for j, e in enumerate(events):
            table = self.table(e.day)
            user_vecs = table.tfidf
            norms = np.linalg.norm(user_vecs, axis=1)
            ev = self.event_profile_vector(e, training_sets[e.event_id])
            ev_norm = np.linalg.norm(ev)
            col = np.zeros(self.index.n_users)
            ok = (norms > 0)
            if ev_norm > 0:
                col[ok] = (user_vecs[ok] @ ev) / (norms[ok] * ev_norm)
            m.raw[:, j] = col
        m.oriented[:] = m.raw
        return m

    def _temporal_matrix(self, events, _training):
        m = self._shell(TEMPORAL_DISTANCE, events)
        for j, e in enumerate(events):
            table = self.table(e.day)
            hours = table.hour_counts
            max_h = hours.max(axis=1)
            ok = max_h > 0
            col = np.full(self.index.n_users, np.nan)
            col[ok] = (hours[ok] / max_h[ok, None]) @ self._circ[:, e.peak_hour]
            m.raw[:, j] = col
        has = ~np.isnan(m.raw)
        m.oriented[has] = -m.raw[has]
        # missing histograms rank last: worst observed minus one
        sentinel = (m.oriented[has].min() - 1.0) if has.any() else -1.0
        m.oriented[~has] = sentinel
        return m

    def _popularity_matrix(self, events, _training):
        m = self._shell(POPULARITY, events)
        for j, e in enumerate(events):
            m.raw[:, j] = float(e.popularity)
        m.oriented[:] = m.raw
        return m

    def _social_matrix(self, events, training_sets):
        m = self._shell(SOCIAL_INFLUENCE, events)
        A = self.friend_csr()
        tie = np.zeros_like(m.oriented)
        for j, e in enumerate(events):
            members = np.array(sorted(self.index.uindex[u] for u in training_sets[e.event_id]
                                      if u in self.index.uindex), dtype=np.int64)
            ind = np.zeros(self.index.n_users)
            ind[members] = 1.0
            counts = A @ ind
            m.raw[:, j] = counts
            centrality = counts[members]
            col = tie[:, j]
            for mi, c in zip(members, centrality):
                fr = A.indices[A.indptr[mi]:A.indptr[mi + 1]]
                np.maximum.at(col, fr, c)
        m.oriented[:] = m.raw
        m.tie_break = tie
        return m


def _haversine_vec(lat1, lon1, lat2, lon2):
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlam = np.radians(lon2 - lon1)
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlam / 2) ** 2
    return 6_371_000.0 * 2 * np.arcsin(np.minimum(1.0, np.sqrt(a)))
