"""Seeded synthetic check-in corpora with planted, factor-driven events.

Users get a home on a km grid, a Dirichlet category taste, one of three
hourly archetypes (morning / midday / evening) and a geometric friendship
graph densified by triadic closure.  Background check-ins follow taste
plus distance decay from home.  Each planted event is dominated by one
participation factor: its attendees are drawn with logistic probability
in that factor's standardized score (friend clusters for social events,
heavy visitors of a globally-rare category for niche events, and so on),
then stamped onto the event venue hard enough to clear the anomaly
detector's threshold with margin.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from datetime import date, datetime, timedelta, timezone

import numpy as np

from ._util import substream
from .corpus import CheckIn, Corpus, SocialGraph, Venue, local_parts

FACTORS = ("distance", "category", "temporal", "social", "popularity", "niche")
ARCHETYPE_PEAKS = (9, 13, 20)


@dataclass
class SynthConfig:
    n_users: int = 2000
    n_venues: int = 300
    n_categories: int = 20
    n_days: int = 90
    n_events: int = 20
    grid_extent_km: float = 10.0
    factor_mix: dict = field(default_factory=lambda: {"social": 1.0})
    background_rate: float = 1.0
    friendship_degree: float = 10.0
    seed: int = 0
    start_day: str = "2011-03-01"
    # attendance / shape coefficients (fixed defaults, documented here:
    # acceptance effect sizes were calibrated against them)
    event_size_mean: int = 120
    selection_sharpness: float = 6.0   # logistic slope on standardized factor scores
    local_visit_share: float = 0.7     # background venue choice: local decay vs global taste
    distance_decay_km: float = 0.8
    dirichlet_alpha: float = 0.25
    devotees_per_niche: int = 150
    devotee_boost: float = 0.35
    companions_per_niche: int = 2      # tail categories a niche scene also favors
    companion_boost: float = 0.12
    popularity_spread: float = 9.0     # max/min target-size ratio for popularity events

    def validate(self):
        for name in ("n_users", "n_venues", "n_categories", "n_days", "n_events"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_events > self.n_days * self.n_venues:
            raise ValueError("infeasible config: more events than venue-days")
        weights = dict(self.factor_mix)
        unknown = set(weights) - set(FACTORS)
        if unknown:
            raise ValueError(f"unknown factors in mix: {sorted(unknown)}")
        total = sum(weights.values())
        if any(w < 0 for w in weights.values()) or not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-9):
            raise ValueError("factor_mix weights must be non-negative and sum to 1")
        if self.background_rate <= 0:
            raise ValueError("background_rate must be positive")
        if self.n_events > self.n_days - self.n_days // 4:
            raise ValueError("infeasible config: not enough distinct event days after warm-up")
        date.fromisoformat(self.start_day)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class PlantedEvent:
    venue_id: str
    day: date
    peak_hour: int
    factor: str
    attendees: tuple           # planted attendee user ids, sorted
    target_size: int

    def to_dict(self):
        return {"venue_id": self.venue_id, "day": self.day.isoformat(),
                "peak_hour": self.peak_hour, "factor": self.factor,
                "attendees": list(self.attendees), "target_size": self.target_size}


@dataclass
class GroundTruth:
    planted: list
    config: SynthConfig

    def to_dict(self):
        return {"planted": [p.to_dict() for p in self.planted],
                "config": asdict(self.config)}

    def anchors(self) -> set:
        return {(p.venue_id, p.day) for p in self.planted}


def _largest_remainder(weights: dict, total: int) -> dict:
    """Integer factor counts proportional to weights, summing to total."""
    names = sorted(weights)
    raw = {n: weights[n] * total for n in names}
    counts = {n: int(raw[n]) for n in names}
    short = total - sum(counts.values())
    by_frac = sorted(names, key=lambda n: (-(raw[n] - counts[n]), n))
    for n in by_frac[:short]:
        counts[n] += 1
    return {n: c for n, c in counts.items() if c > 0}


def _hour_distribution(peak, sigma=2.5):
    hours = np.arange(24)
    d = np.minimum(np.abs(hours - peak), 24 - np.abs(hours - peak))
    p = np.exp(-0.5 * (d / sigma) ** 2)
    return p / p.sum()


def _grid_to_latlon(x_km, y_km):
    base_lat, base_lon = 40.0, -74.0
    lat = base_lat + y_km / 111.32
    lon = base_lon + x_km / (111.32 * math.cos(math.radians(base_lat)))
    return lat, lon


def _solve_logistic_intercept(z, slope, target):
    """Intercept a such that sum sigmoid(a + slope*z) hits the target."""
    lo, hi = -60.0, 60.0
    for _ in range(100):
        mid = (lo + hi) / 2
        expected = (1.0 / (1.0 + np.exp(-(mid + slope * z)))).sum()
        if expected > target:
            hi = mid
        else:
            lo = mid
    return (lo + hi) / 2


class _Generator:
    def __init__(self, config: SynthConfig):
        config.validate()
        self.cfg = config
        self.start = date.fromisoformat(config.start_day)

    # --- population -------------------------------------------------------

    def _category_weights(self, n_rare):
        n_common = self.cfg.n_categories - n_rare
        if n_common < 3:
            raise ValueError("infeasible config: too many niche events for the category vocabulary")
        zipf = 1.0 / np.arange(1, n_common + 1)
        rare_share = 0.003 * n_rare
        weights = np.concatenate([zipf / zipf.sum() * (1 - rare_share),
                                  np.full(n_rare, 0.003)])
        return weights, n_common

    def _users(self, rare_cats, companions):
        """Homes, tastes and archetypes; devotees of each rare category get
        a boosted preference for it plus its companion tail categories, so
        niche scenes have systematically anti-popular taste profiles."""
        cfg = self.cfg
        rng = substream(cfg.seed, "users")
        homes = rng.uniform(0, cfg.grid_extent_km, size=(cfg.n_users, 2))
        conc = cfg.dirichlet_alpha * cfg.n_categories * self.cat_weights
        prefs = rng.dirichlet(np.maximum(conc, 1e-3), size=cfg.n_users)
        archetypes = rng.integers(0, len(ARCHETYPE_PEAKS), size=cfg.n_users)

        devotees = {}
        for cat in rare_cats:
            pool = substream(cfg.seed, "devotees", cat).choice(
                cfg.n_users, size=min(cfg.devotees_per_niche, cfg.n_users), replace=False)
            devotees[cat] = np.sort(pool)
            prefs[pool, cat] += cfg.devotee_boost
            for comp in companions.get(cat, ()):
                prefs[pool, comp] += cfg.companion_boost
        prefs /= prefs.sum(axis=1, keepdims=True)
        return homes, prefs, archetypes, devotees

    def _social(self, homes):
        cfg = self.cfg
        rng = substream(cfg.seed, "social")
        n = cfg.n_users
        target_edges = int(n * cfg.friendship_degree / 2)
        d2 = ((homes[:, None, :] - homes[None, :, :]) ** 2).sum(axis=2)
        np.fill_diagonal(d2, np.inf)
        k = max(1, int(round(cfg.friendship_degree * 0.4)))
        nearest = np.argsort(d2, axis=1)[:, :k]

        edges = set()
        for u in range(n):
            for v in nearest[u]:
                edges.add((min(u, int(v)), max(u, int(v))))
        adjacency = [set() for _ in range(n)]
        for a, b in edges:
            adjacency[a].add(b)
            adjacency[b].add(a)

        tries = 0
        while len(edges) < target_edges and tries < 50 * target_edges:
            tries += 1
            u = int(rng.integers(n))
            friends = sorted(adjacency[u])
            if len(friends) < 2:
                continue
            pick = rng.choice(len(friends), size=2, replace=False)
            a, b = friends[int(pick[0])], friends[int(pick[1])]
            e = (min(a, b), max(a, b))
            if e not in edges:
                edges.add(e)
                adjacency[a].add(b)
                adjacency[b].add(a)
        return adjacency

    # --- events -----------------------------------------------------------

    def _event_plan(self, n_common, rare_cats):
        cfg = self.cfg
        counts = _largest_remainder(dict(cfg.factor_mix), cfg.n_events)
        labels = [f for f in sorted(counts) for _ in range(counts[f])]
        order = substream(cfg.seed, "factors").permutation(len(labels))
        factors = [labels[i] for i in order]

        day_rng = substream(cfg.seed, "days")
        warmup = cfg.n_days // 4
        days = np.sort(day_rng.choice(np.arange(warmup, cfg.n_days),
                                      size=cfg.n_events, replace=False))

        peak_rng = substream(cfg.seed, "peaks")
        peaks = [int(ARCHETYPE_PEAKS[peak_rng.integers(len(ARCHETYPE_PEAKS))])
                 for _ in range(cfg.n_events)]

        # themes: niche events take their own rare category; category-driven
        # events take distinct mid-tail common categories; the rest cycle
        # through the common head
        theme_rng = substream(cfg.seed, "themes")
        mid_tail = list(range(n_common // 2, n_common))
        theme_rng.shuffle(mid_tail)
        rare_iter = iter(rare_cats)
        themes = []
        head_cycle = 0
        for f in factors:
            if f == "niche":
                themes.append(next(rare_iter))
            elif f == "category" and mid_tail:
                themes.append(mid_tail.pop())
            else:
                themes.append(head_cycle % max(1, n_common // 2))
                head_cycle += 1

        companions = {}
        if rare_cats:
            tail = list(range(n_common // 2, n_common))
            comp_rng = substream(cfg.seed, "companions")
            comp_rng.shuffle(tail)
            pos = 0
            for cat in rare_cats:
                picked = []
                for _ in range(min(cfg.companions_per_niche, len(tail))):
                    picked.append(tail[pos % len(tail)])
                    pos += 1
                companions[cat] = tuple(picked)

        size_rng = substream(cfg.seed, "sizes")
        sizes = []
        pop_events = [i for i, f in enumerate(factors) if f == "popularity"]
        if pop_events:
            r = math.sqrt(cfg.popularity_spread)
            spread = np.geomspace(cfg.event_size_mean / r, cfg.event_size_mean * r,
                                  len(pop_events))
            spread = spread[size_rng.permutation(len(pop_events))]
        pop_pos = 0
        for i, f in enumerate(factors):
            if f == "popularity":
                sizes.append(int(round(spread[pop_pos])))
                pop_pos += 1
            else:
                sizes.append(cfg.event_size_mean)
        sizes = [min(s, max(2, self.cfg.n_users // 2)) for s in sizes]
        return factors, days, peaks, themes, sizes, companions

    def _venues(self, factors, themes, n_common):
        cfg = self.cfg
        rng = substream(cfg.seed, "venues")
        positions = []
        min_gap = 0.75  # km; keeps planted scopes disjoint at the 300 m radius
        attempts = 0
        while len(positions) < cfg.n_events:
            attempts += 1
            if attempts > 20_000:       # crowded grid: relax the separation
                min_gap /= 2
                attempts = 0
            cand = rng.uniform(0, cfg.grid_extent_km, size=2)
            if all((cand[0] - p[0]) ** 2 + (cand[1] - p[1]) ** 2 >= min_gap ** 2
                   for p in positions):
                positions.append(cand)
        anchor_xy = np.array(positions)
        anchor_cats = np.array(themes, dtype=np.int64)

        n_rest = cfg.n_venues - cfg.n_events
        if n_rest < 0:
            raise ValueError("infeasible config: need at least one venue per event")
        rest_xy = rng.uniform(0, cfg.grid_extent_km, size=(n_rest, 2))
        common_w = self.cat_weights[:n_common] / self.cat_weights[:n_common].sum()
        rest_cats = rng.choice(n_common, size=n_rest, p=common_w)

        xy = np.vstack([anchor_xy, rest_xy])
        cats = np.concatenate([anchor_cats, rest_cats])
        return xy, cats

    # --- check-ins --------------------------------------------------------

    def _background(self, homes, prefs, archetypes, venue_xy, venue_cats):
        cfg = self.cfg
        rng = substream(cfg.seed, "background")
        hour_dists = [_hour_distribution(p) for p in ARCHETYPE_PEAKS]

        d = np.sqrt(((homes[:, None, :] - venue_xy[None, :, :]) ** 2).sum(axis=2))
        decay = np.exp(-d / cfg.distance_decay_km)

        venues_in_cat = [np.flatnonzero(venue_cats == c) for c in range(cfg.n_categories)]
        checkins = []  # (user, venue, day_idx, hour, minute, second)
        for u in range(cfg.n_users):
            local = prefs[u, venue_cats] * decay[u]
            total = local.sum()
            if total <= 0:
                continue
            local = local / total
            cat_p = prefs[u].copy()
            for c in range(cfg.n_categories):
                if venues_in_cat[c].size == 0:
                    cat_p[c] = 0.0
            cat_p /= cat_p.sum()

            per_day = rng.poisson(cfg.background_rate, size=cfg.n_days)
            k = int(per_day.sum())
            if k == 0:
                continue
            days = np.repeat(np.arange(cfg.n_days), per_day)
            hours = rng.choice(24, size=k, p=hour_dists[archetypes[u]])
            use_local = rng.random(k) < cfg.local_visit_share
            venues = np.empty(k, dtype=np.int64)
            n_local = int(use_local.sum())
            if n_local:
                venues[use_local] = rng.choice(cfg.n_venues, size=n_local, p=local)
            n_global = k - n_local
            if n_global:
                cats = rng.choice(cfg.n_categories, size=n_global, p=cat_p)
                picks = np.empty(n_global, dtype=np.int64)
                for i, c in enumerate(cats):
                    vs = venues_in_cat[c]
                    picks[i] = vs[rng.integers(vs.size)]
                venues[~use_local] = picks
            minutes = rng.integers(0, 60, size=k)
            seconds = rng.integers(0, 60, size=k)
            for i in range(k):
                checkins.append((u, int(venues[i]), int(days[i]), int(hours[i]),
                                 int(minutes[i]), int(seconds[i])))
        return checkins

    def _factor_scores(self, factor, event_idx, homes, prefs, archetypes,
                       adjacency, anchor_xy, theme, pools):
        cfg = self.cfg
        if factor == "distance":
            z = -np.sqrt(((homes - anchor_xy) ** 2).sum(axis=1))
        elif factor in ("category", "niche"):
            z = prefs[:, theme]
        elif factor == "temporal":
            peaks = np.array([ARCHETYPE_PEAKS[a] for a in archetypes], dtype=float)
            d = np.abs(peaks - self.peaks[event_idx])
            z = -np.minimum(d, 24 - d)
        elif factor == "social":
            pool = pools[event_idx]
            z = np.array([len(adjacency[u] & pool) for u in range(cfg.n_users)], dtype=float)
        elif factor == "popularity":
            z = np.zeros(cfg.n_users)
        else:
            raise ValueError(f"unknown factor {factor!r}")
        sd = z.std()
        return (z - z.mean()) / sd if sd > 0 else np.zeros_like(z)

    def _social_pool(self, event_idx, adjacency, target):
        rng = substream(self.cfg.seed, "pools", event_idx)
        want = min(self.cfg.n_users, 4 * target)
        pool = set()
        frontier = []
        while len(pool) < want:
            if not frontier:
                seed_user = int(rng.integers(self.cfg.n_users))
                if seed_user in pool:
                    continue
                frontier = [seed_user]
            nxt = frontier.pop(0)
            if nxt in pool:
                continue
            pool.add(nxt)
            frontier.extend(sorted(adjacency[nxt] - pool))
        return pool

    # --- assembly ---------------------------------------------------------

    def generate(self):
        cfg = self.cfg
        n_rare = _largest_remainder(dict(cfg.factor_mix), cfg.n_events).get("niche", 0)
        self.cat_weights, n_common = self._category_weights(n_rare)
        rare_cats = list(range(n_common, cfg.n_categories))

        factors, days, peaks, themes, sizes, companions = self._event_plan(n_common, rare_cats)
        self.peaks = peaks
        homes, prefs, archetypes, _dev = self._users(rare_cats, companions)
        adjacency = self._social(homes)
        venue_xy, venue_cats = self._venues(factors, themes, n_common)

        raw = self._background(homes, prefs, archetypes, venue_xy, venue_cats)

        bg_day_counts = np.zeros((cfg.n_venues, cfg.n_days), dtype=np.int64)
        for u, v, d, *_ in raw:
            bg_day_counts[v, d] += 1

        pools = {}
        for i, f in enumerate(factors):
            if f == "social":
                pools[i] = self._social_pool(i, adjacency, sizes[i])

        planted = []
        for i, factor in enumerate(factors):
            day_idx = int(days[i])
            z = self._factor_scores(factor, i, homes, prefs, archetypes,
                                    adjacency, venue_xy[i], themes[i], pools)
            rng = substream(cfg.seed, "attendees", i)
            a = _solve_logistic_intercept(z, cfg.selection_sharpness, sizes[i])
            p = 1.0 / (1.0 + np.exp(-(a + cfg.selection_sharpness * z)))
            chosen = np.flatnonzero(rng.random(cfg.n_users) < p)

            # guarantee the planted spike is at least 3x the anchor's
            # active-day average even after the spike joins the average
            bg_total = int(bg_day_counts[i].sum())
            bg_day = int(bg_day_counts[i, day_idx])
            active = int((bg_day_counts[i] > 0).sum()) + (0 if bg_day > 0 else 1)
            need = math.ceil(3.0 * (bg_total - bg_day) / max(active - 3, 1)) - bg_day + 1
            if chosen.size < max(need, 2):
                extra = np.argsort(-p, kind="stable")
                extras = [e for e in extra if e not in set(chosen)]
                chosen = np.sort(np.concatenate(
                    [chosen, np.array(extras[:max(need, 2) - chosen.size], dtype=np.int64)]))

            hour_rng = substream(cfg.seed, "event-checkins", i)
            offsets = hour_rng.choice([-2, -1, 0, 1, 2], size=chosen.size,
                                      p=[0.05, 0.2, 0.5, 0.2, 0.05])
            hours = (peaks[i] + offsets) % 24
            minutes = hour_rng.integers(0, 60, size=chosen.size)
            seconds = hour_rng.integers(0, 60, size=chosen.size)
            for j, u in enumerate(chosen):
                raw.append((int(u), i, day_idx, int(hours[j]),
                            int(minutes[j]), int(seconds[j])))
            planted.append((i, day_idx, factor, chosen, sizes[i]))

        return self._assemble(raw, venue_xy, venue_cats, adjacency, planted)

    def _assemble(self, raw, venue_xy, venue_cats, adjacency, planted):
        cfg = self.cfg
        uw = len(str(cfg.n_users - 1))
        vw = len(str(cfg.n_venues - 1))
        user_id = lambda u: f"u{u:0{uw}d}"
        venue_id = lambda v: f"v{v:0{vw}d}"

        venues = {}
        for v in range(cfg.n_venues):
            lat, lon = _grid_to_latlon(float(venue_xy[v, 0]), float(venue_xy[v, 1]))
            venues[venue_id(v)] = Venue(venue_id(v), lat, lon, f"cat{venue_cats[v]:02d}")

        seen = set()
        checkins = []
        for u, v, d, h, mi, s in raw:
            day = self.start + timedelta(days=d)
            ts = datetime(day.year, day.month, day.day, h, mi, s, tzinfo=timezone.utc)
            key = (u, v, ts)
            if key in seen:
                continue
            seen.add(key)
            local_day, local_hour = local_parts(ts, 0)
            checkins.append(CheckIn(user_id(u), venue_id(v), ts, local_day, local_hour))
        checkins.sort(key=lambda c: (c.timestamp, c.user_id, c.venue_id))

        social = SocialGraph({user_id(u): frozenset(user_id(f) for f in fs)
                              for u, fs in enumerate(adjacency) if fs})
        users = frozenset(c.user_id for c in checkins) | frozenset(social.adjacency)
        corpus = Corpus(venues, tuple(checkins), social, users, 0)

        planted_events = []
        for v, d, factor, chosen, size in planted:
            planted_events.append(PlantedEvent(
                venue_id(v), self.start + timedelta(days=d), self.peaks[v],
                factor, tuple(sorted(user_id(u) for u in chosen)), size))
        return corpus, GroundTruth(planted_events, cfg)


def generate(config: SynthConfig):
    """Build a corpus plus ground truth (planted events, dominant factors)."""
    return _Generator(config).generate()


def write_ground_truth(truth: GroundTruth, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(truth.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
