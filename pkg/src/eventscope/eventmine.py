"""Mine organized events from a corpus as daily check-in anomalies.

A venue-day whose check-in count is more than `threshold_factor` times the
venue's average over its active days is an anomaly candidate.  The top
candidates become events: the anchor venue plus nearby venues that were
also busier than usual form the spatial scope, and everyone who checked in
at a scope place on the event day counts as an attendee.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from datetime import date

EARTH_RADIUS_M = 6_371_000.0


def haversine_m(lat1, lon1, lat2, lon2) -> float:
    """Great-circle distance in meters between two lat/lon points (degrees)."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dphi = p2 - p1
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dlam / 2) ** 2
    return EARTH_RADIUS_M * 2 * math.asin(min(1.0, math.sqrt(a)))


@dataclass(frozen=True)
class EventRecord:
    """A mined event: one anchor venue on one day plus its expanded scope."""

    event_id: str
    day: date
    anchor_venue: str
    places: frozenset          # venue ids within scope
    attendees: frozenset       # users with >=1 check-in at scope places that day
    peak_hour: int
    popularity: int            # total scope check-ins on the day
    anomaly_magnitude: float   # observed - average at the anchor venue


def venue_day_counts(corpus) -> dict:
    """Check-in counts per (venue_id, local_day); absent pairs mean zero."""
    counts = Counter()
    for ci in corpus.checkins:
        counts[(ci.venue_id, ci.local_day)] += 1
    return dict(counts)


def _active_day_averages(counts):
    totals = defaultdict(int)
    days = defaultdict(int)
    for (venue, _day), n in counts.items():
        totals[venue] += n
        days[venue] += 1
    return {v: totals[v] / days[v] for v in totals}


def detect_anomalies(corpus, threshold_factor: float = 2.0) -> list:
    """Venue-days busier than `threshold_factor` times the venue's average.

    The average is taken over the venue's active days only (days with at
    least one check-in); the comparison is strict, so exactly double does
    not fire.  Returns (venue_id, day, observed, average, magnitude)
    tuples sorted by descending magnitude, ties by (day, venue_id).
    """
    if threshold_factor <= 0:
        raise ValueError("threshold_factor must be positive")
    counts = venue_day_counts(corpus)
    averages = _active_day_averages(counts)
    out = []
    for (venue, day), observed in counts.items():
        avg = averages[venue]
        if observed > threshold_factor * avg:
            out.append((venue, day, observed, avg, observed - avg))
    out.sort(key=lambda r: (-r[4], r[1], r[0]))
    return out


def mine_events(corpus, top_k: int = 60, radius_m: float = 300.0,
                threshold_factor: float = 2.0) -> list:
    """Extract up to `top_k` events from the anomaly candidate list.

    Candidates are consumed in decreasing magnitude order, one event per
    (anchor, day); a candidate whose venue-day was already absorbed into an
    earlier event's scope is skipped.  Scope = anchor plus every venue
    within `radius_m` whose same-day count strictly exceeds its own
    active-day average.  Fewer than `top_k` candidates is not an error.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    counts = venue_day_counts(corpus)
    averages = _active_day_averages(counts)
    candidates = detect_anomalies(corpus, threshold_factor)

    by_day_hour = defaultdict(Counter)   # (venue, day) -> hour counts
    by_day_users = defaultdict(set)      # (venue, day) -> users
    for ci in corpus.checkins:
        by_day_hour[(ci.venue_id, ci.local_day)][ci.local_hour] += 1
        by_day_users[(ci.venue_id, ci.local_day)].add(ci.user_id)

    events = []
    claimed = set()  # (venue, day) pairs already inside a selected scope
    for venue, day, observed, avg, magnitude in candidates:
        if len(events) >= top_k:
            break
        if (venue, day) in claimed:
            continue
        anchor = corpus.venues[venue]
        places = {venue}
        for other_id, other in corpus.venues.items():
            if other_id == venue:
                continue
            if haversine_m(anchor.lat, anchor.lon, other.lat, other.lon) > radius_m:
                continue
            day_count = counts.get((other_id, day), 0)
            if other_id in averages and day_count > averages[other_id]:
                places.add(other_id)

        attendees = set()
        hour_counts = Counter()
        popularity = 0
        for p in places:
            attendees |= by_day_users.get((p, day), set())
            hour_counts.update(by_day_hour.get((p, day), ()))
            popularity += counts.get((p, day), 0)
            claimed.add((p, day))
        peak_hour = min(h for h in hour_counts if hour_counts[h] == max(hour_counts.values()))

        events.append(EventRecord(
            event_id=f"{venue}@{day.isoformat()}",
            day=day,
            anchor_venue=venue,
            places=frozenset(places),
            attendees=frozenset(attendees),
            peak_hour=peak_hour,
            popularity=popularity,
            anomaly_magnitude=magnitude,
        ))
    return events


def write_events_jsonl(events, path) -> None:
    """One EventRecord per line; sets serialized as sorted lists."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(json.dumps({
                "event_id": e.event_id,
                "day": e.day.isoformat(),
                "anchor_venue": e.anchor_venue,
                "places": sorted(e.places),
                "attendees": sorted(e.attendees),
                "peak_hour": e.peak_hour,
                "popularity": e.popularity,
                "anomaly_magnitude": e.anomaly_magnitude,
            }, sort_keys=True) + "\n")


def read_events_jsonl(path) -> list:
    events = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            events.append(EventRecord(
                event_id=d["event_id"],
                day=date.fromisoformat(d["day"]),
                anchor_venue=d["anchor_venue"],
                places=frozenset(d["places"]),
                attendees=frozenset(d["attendees"]),
                peak_hour=d["peak_hour"],
                popularity=d["popularity"],
                anomaly_magnitude=d["anomaly_magnitude"],
            ))
    return events
