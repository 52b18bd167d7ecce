"""Check-in corpus loading, validation, and indexing.

A corpus is three CSV files: venues (id, coordinates, category), check-ins
(user, venue, UTC timestamp), and an undirected social edge list.  Loading
produces an immutable in-memory `Corpus` keyed for per-venue, per-user and
per-day access.  Daily and hourly bucketing happens in city-local time,
derived from a single per-corpus minute offset (no DST modeling).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone

import numpy as np


class CorpusFormatError(ValueError):
    """Raised when a corpus file fails to parse or validate."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


@dataclass(frozen=True)
class Venue:
    venue_id: str
    lat: float
    lon: float
    category: str


@dataclass(frozen=True)
class CheckIn:
    user_id: str
    venue_id: str
    timestamp: datetime        # tz-aware UTC, second precision
    local_day: date
    local_hour: int


@dataclass(frozen=True)
class SocialGraph:
    """Symmetric friendship adjacency without self-loops."""

    adjacency: dict  # user_id -> frozenset of friend user_ids

    def friends(self, user_id) -> frozenset:
        return self.adjacency.get(user_id, frozenset())

    def degree(self, user_id) -> int:
        return len(self.adjacency.get(user_id, ()))


@dataclass(frozen=True)
class Corpus:
    """Immutable check-in corpus. Safe for concurrent shared reads."""

    venues: dict               # venue_id -> Venue
    checkins: tuple            # CheckIn, sorted by timestamp
    social: SocialGraph
    users: frozenset           # user ids seen in check-ins or social edges
    timezone_offset_minutes: int
    _by_user: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        by_user = {}
        for ci in self.checkins:
            by_user.setdefault(ci.user_id, []).append(ci)
        object.__setattr__(self, "_by_user", {u: tuple(cs) for u, cs in by_user.items()})

    def user_checkins(self, user_id) -> tuple:
        return self._by_user.get(user_id, ())

    @property
    def categories(self) -> tuple:
        """Sorted category vocabulary drawn from the venue set."""
        return tuple(sorted({v.category for v in self.venues.values()}))


def local_parts(timestamp: datetime, offset_minutes: int):
    """Local (day, hour) of a UTC instant under a fixed minute offset."""
    local = timestamp + timedelta(minutes=offset_minutes)
    return local.date(), local.hour


def _parse_timestamp(raw, path, line):
    try:
        ts = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    except ValueError:
        raise CorpusFormatError(path, line, f"bad timestamp {raw!r}") from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _read_rows(path, expected_header):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CorpusFormatError(path, 1, "empty file") from None
        if [h.strip() for h in header] != expected_header:
            raise CorpusFormatError(path, 1, f"expected header {','.join(expected_header)}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise CorpusFormatError(path, line, f"expected {len(expected_header)} fields, got {len(row)}")
            yield line, row


def load_venues(path) -> dict:
    venues = {}
    for line, (venue_id, lat, lon, category) in _read_rows(path, ["venue_id", "lat", "lon", "category"]):
        try:
            lat, lon = float(lat), float(lon)
        except ValueError:
            raise CorpusFormatError(path, line, "coordinates must be decimal degrees") from None
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
            raise CorpusFormatError(path, line, f"coordinates out of range: ({lat}, {lon})")
        if not category:
            raise CorpusFormatError(path, line, "empty category")
        if venue_id in venues:
            raise CorpusFormatError(path, line, f"duplicate venue_id {venue_id!r}")
        venues[venue_id] = Venue(venue_id, lat, lon, category)
    return venues


def load_corpus(checkins_path, venues_path, social_path, timezone_offset_minutes: int = 0) -> Corpus:
    """Load and validate the three corpus files.

    Social edges are symmetrized (either direction implies both) and
    self-loops are dropped.  Check-ins referencing unknown venues are
    rejected; exact (user, venue, timestamp) duplicates are collapsed.
    """
    venues = load_venues(venues_path)

    seen = set()
    checkins = []
    for line, (user_id, venue_id, raw_ts) in _read_rows(checkins_path, ["user_id", "venue_id", "timestamp"]):
        if venue_id not in venues:
            raise CorpusFormatError(checkins_path, line, f"check-in references unknown venue {venue_id!r}")
        ts = _parse_timestamp(raw_ts, checkins_path, line)
        key = (user_id, venue_id, ts)
        if key in seen:
            continue
        seen.add(key)
        day, hour = local_parts(ts, timezone_offset_minutes)
        checkins.append(CheckIn(user_id, venue_id, ts, day, hour))
    checkins.sort(key=lambda c: c.timestamp)

    adjacency = {}
    for line, (a, b) in _read_rows(social_path, ["user_a", "user_b"]):
        if a == b:
            continue
        adjacency.setdefault(a, set()).add(b)
        adjacency.setdefault(b, set()).add(a)
    social = SocialGraph({u: frozenset(fs) for u, fs in adjacency.items()})

    users = frozenset(c.user_id for c in checkins) | frozenset(adjacency)
    return Corpus(venues, tuple(checkins), social, users, timezone_offset_minutes)


def write_corpus(corpus: Corpus, checkins_path, venues_path, social_path) -> None:
    """Write a corpus back to the three CSV formats (round-trips exactly)."""
    with open(venues_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["venue_id", "lat", "lon", "category"])
        for vid in sorted(corpus.venues):
            v = corpus.venues[vid]
            w.writerow([v.venue_id, repr(float(v.lat)), repr(float(v.lon)), v.category])
    with open(checkins_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "venue_id", "timestamp"])
        for ci in corpus.checkins:
            stamp = ci.timestamp.strftime("%Y-%m-%dT%H:%M:%SZ")
            w.writerow([ci.user_id, ci.venue_id, stamp])
    with open(social_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user_a", "user_b"])
        edges = {tuple(sorted((u, f))) for u, fs in corpus.social.adjacency.items() for f in fs}
        for a, b in sorted(edges):
            w.writerow([a, b])


def checkins_before(corpus: Corpus, user, cutoff_day: date) -> tuple:
    """The user's check-ins strictly before `cutoff_day`, in timestamp order.

    Unknown users yield an empty sequence; the evaluation harness must
    tolerate test users with thin histories.
    """
    return tuple(c for c in corpus.user_checkins(user) if c.local_day < cutoff_day)


class CorpusIndex:
    """Integer-indexed array view of a corpus for vectorized work.

    Users, venues and categories are mapped to dense indices in sorted-id
    order, so index order equals lexicographic id order everywhere a
    deterministic tie-break is needed.
    """

    def __init__(self, corpus: Corpus):
        self.corpus = corpus
        self.user_ids = sorted(corpus.users)
        self.venue_ids = sorted(corpus.venues)
        self.categories = list(corpus.categories)
        self.uindex = {u: i for i, u in enumerate(self.user_ids)}
        self.vindex = {v: i for i, v in enumerate(self.venue_ids)}
        self.cindex = {c: i for i, c in enumerate(self.categories)}

        self.venue_lat = np.array([corpus.venues[v].lat for v in self.venue_ids])
        self.venue_lon = np.array([corpus.venues[v].lon for v in self.venue_ids])
        self.venue_cat = np.array([self.cindex[corpus.venues[v].category] for v in self.venue_ids], dtype=np.int64)

        n = len(corpus.checkins)
        self.ci_user = np.empty(n, dtype=np.int64)
        self.ci_venue = np.empty(n, dtype=np.int64)
        self.ci_day = np.empty(n, dtype=np.int64)      # proleptic ordinal of local_day
        self.ci_hour = np.empty(n, dtype=np.int64)
        for i, ci in enumerate(corpus.checkins):
            self.ci_user[i] = self.uindex[ci.user_id]
            self.ci_venue[i] = self.vindex[ci.venue_id]
            self.ci_day[i] = ci.local_day.toordinal()
            self.ci_hour[i] = ci.local_hour
        self.ci_cat = self.venue_cat[self.ci_venue] if n else np.empty(0, dtype=np.int64)

    @property
    def n_users(self):
        return len(self.user_ids)

    @property
    def n_venues(self):
        return len(self.venue_ids)

    @property
    def n_categories(self):
        return len(self.categories)

    def friend_matrix(self):
        """Boolean CSR adjacency over user indices (symmetric, no loops)."""
        from scipy import sparse

        rows, cols = [], []
        for u, fs in self.corpus.social.adjacency.items():
            ui = self.uindex[u]
            for f in fs:
                rows.append(ui)
                cols.append(self.uindex[f])
        data = np.ones(len(rows), dtype=np.float64)
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.n_users, self.n_users))
