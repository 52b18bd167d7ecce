"""Per-user and per-event preference profiles.

User profiles weight visited place categories TF-IDF style: the visit
count relative to the user's most-visited category, times the log of how
rare the category is across the city's users.  Event profiles score each
category by how common it is among the training attendees and how large
their share of the city-wide visits is.  Everything is built strictly
from check-ins before a cutoff day so no event-day activity leaks in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date

import numpy as np

from .corpus import Corpus, CorpusIndex, checkins_before


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    category_counts: dict      # category -> pre-cutoff check-in count
    category_vector: dict      # category -> TF-IDF score
    hourly_counts: tuple       # 24 pre-cutoff counts
    home_venue: str | None     # most-visited venue, lexicographic tie-break
    cutoff_day: date


@dataclass(frozen=True)
class EventProfile:
    event_id: str
    category_vector: dict      # category -> score in [0, 1]
    built_from: frozenset      # training attendee user ids


def compute_idf(corpus: Corpus, cutoff_day: date) -> dict:
    """ln(|U| / #users who visited the category before the cutoff).

    The population is the full corpus user set; categories nobody visited
    before the cutoff are absent from the map.
    """
    n_users = len(corpus.users)
    if n_users < 1:
        raise ValueError("corpus has no users")
    visitors = {}
    for user in corpus.users:
        seen = {corpus.venues[c.venue_id].category for c in checkins_before(corpus, user, cutoff_day)}
        for cat in seen:
            visitors[cat] = visitors.get(cat, 0) + 1
    return {cat: math.log(n_users / n) for cat, n in visitors.items()}


def build_user_profile(corpus: Corpus, user, cutoff_day: date, idf_table: dict) -> UserProfile:
    """TF-IDF category vector, hourly histogram and home venue for one user."""
    history = checkins_before(corpus, user, cutoff_day)

    cat_counts = {}
    venue_counts = {}
    hours = [0] * 24
    for ci in history:
        cat = corpus.venues[ci.venue_id].category
        cat_counts[cat] = cat_counts.get(cat, 0) + 1
        venue_counts[ci.venue_id] = venue_counts.get(ci.venue_id, 0) + 1
        hours[ci.local_hour] += 1

    vector = {}
    if cat_counts:
        max_count = max(cat_counts.values())
        for cat, n in cat_counts.items():
            vector[cat] = (n / max_count) * idf_table[cat]

    home = None
    if venue_counts:
        best = max(venue_counts.values())
        home = min(v for v, n in venue_counts.items() if n == best)

    return UserProfile(user, cat_counts, vector, tuple(hours), home, cutoff_day)


def build_event_profile(corpus: Corpus, event, training_attendees) -> EventProfile:
    """Category scores from the training attendees' pre-event check-ins.

    score = (share of attendees who visited the category) x (attendees'
    fraction of the city-wide visit count).  Categories with zero
    city-wide pre-event count are omitted.
    """
    training = set(training_attendees)
    if not training:
        raise ValueError("cannot build event profile from zero users")
    if not training <= event.attendees:
        raise ValueError("training attendees must be a subset of event attendees")

    train_counts = {}
    train_visitors = {}
    city_counts = {}
    for user in corpus.users:
        history = checkins_before(corpus, user, event.day)
        seen = set()
        for ci in history:
            cat = corpus.venues[ci.venue_id].category
            city_counts[cat] = city_counts.get(cat, 0) + 1
            if user in training:
                train_counts[cat] = train_counts.get(cat, 0) + 1
                seen.add(cat)
        if user in training:
            for cat in seen:
                train_visitors[cat] = train_visitors.get(cat, 0) + 1

    vector = {}
    for cat, city_total in city_counts.items():
        a = train_visitors.get(cat, 0) / len(training)
        b = train_counts.get(cat, 0) / city_total
        vector[cat] = a * b
    return EventProfile(event.event_id, vector, frozenset(training))


def top_k_categories(profile: EventProfile, k: int = 10) -> list:
    """The k highest-scoring categories, ties broken by category name."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(profile.category_vector.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:k]


class UserProfileTable:
    """All user profiles at one cutoff, as dense arrays over a CorpusIndex.

    Row/column order follows the index (sorted ids), so argmax-with-lowest-
    index tie-breaks match the lexicographic rules of the scalar builders.
    Agrees entry-for-entry with `build_user_profile`/`compute_idf`.
    """

    def __init__(self, index: CorpusIndex, cutoff_day: date):
        self.index = index
        self.cutoff_day = cutoff_day
        n_u, n_c = index.n_users, index.n_categories
        cutoff_ord = cutoff_day.toordinal()
        mask = index.ci_day < cutoff_ord
        users = index.ci_user[mask]
        cats = index.ci_cat[mask]
        hrs = index.ci_hour[mask]
        venues = index.ci_venue[mask]

        self.cat_counts = np.zeros((n_u, n_c))
        np.add.at(self.cat_counts, (users, cats), 1.0)
        self.hour_counts = np.zeros((n_u, 24))
        np.add.at(self.hour_counts, (users, hrs), 1.0)

        self.home_vidx = np.full(n_u, -1, dtype=np.int64)
        if users.size:
            key = users * index.n_venues + venues
            uniq, cnt = np.unique(key, return_counts=True)
            uu, vv = uniq // index.n_venues, uniq % index.n_venues
            order = np.lexsort((vv, -cnt, uu))   # per user: highest count, lowest venue index
            uu, vv = uu[order], vv[order]
            first = np.ones(uu.size, dtype=bool)
            first[1:] = uu[1:] != uu[:-1]
            self.home_vidx[uu[first]] = vv[first]

        visitors = (self.cat_counts > 0).sum(axis=0)
        self.idf = np.zeros(n_c)
        active = visitors > 0
        self.idf[active] = np.log(n_u / visitors[active])

        row_max = self.cat_counts.max(axis=1, keepdims=True)
        safe = np.where(row_max > 0, row_max, 1.0)
        self.tfidf = (self.cat_counts / safe) * self.idf

        self.city_cat_counts = self.cat_counts.sum(axis=0)

    def idf_table(self) -> dict:
        return {self.index.categories[c]: float(self.idf[c])
                for c in np.flatnonzero(self.city_cat_counts > 0)}

    def home_coords(self):
        """(lat, lon) arrays per user; NaN where no home exists."""
        lat = np.full(self.index.n_users, np.nan)
        lon = np.full(self.index.n_users, np.nan)
        has = self.home_vidx >= 0
        lat[has] = self.index.venue_lat[self.home_vidx[has]]
        lon[has] = self.index.venue_lon[self.home_vidx[has]]
        return lat, lon

    def event_vector(self, training_uidx) -> np.ndarray:
        """Event category scores over the index vocabulary (zeros where
        the city-wide pre-event count is zero)."""
        training_uidx = np.asarray(training_uidx, dtype=np.int64)
        if training_uidx.size == 0:
            raise ValueError("cannot build event profile from zero users")
        sub = self.cat_counts[training_uidx]
        a = (sub > 0).sum(axis=0) / training_uidx.size
        city = self.city_cat_counts
        b = np.divide(sub.sum(axis=0), city, out=np.zeros_like(city), where=city > 0)
        return a * b

    def user_profile(self, user) -> UserProfile:
        """Materialize one user's profile from the table."""
        u = self.index.uindex[user]
        counts = {self.index.categories[c]: int(n)
                  for c, n in enumerate(self.cat_counts[u]) if n > 0}
        vector = {self.index.categories[c]: float(self.tfidf[u, c])
                  for c in np.flatnonzero(self.cat_counts[u] > 0)}
        home = self.index.venue_ids[self.home_vidx[u]] if self.home_vidx[u] >= 0 else None
        hours = tuple(int(h) for h in self.hour_counts[u])
        return UserProfile(user, counts, vector, hours, home, self.cutoff_day)
