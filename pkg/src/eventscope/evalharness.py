"""Stratified cross-validated evaluation of event ranking.

Each event's attendees are split into near-equal blocks; block f is held
out as test users in fold f while the rest act as known participants from
whom event profiles, social counts and graph inputs are built.  Every test
user receives one ranked list over all events, scored with NDCG and
top-N / top-X% accuracy, averaged across users.  A niche analysis
correlates how far each event's category profile strays from global place
popularity with how well the random-walk feature finds its attendees.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from ._util import substream
from . import fusion
from .scorers import (FEATURE_NAMES, RANDOM_WALK, SOCIAL_INFLUENCE,
                      ScoreMatrix, ScorerContext, rank_events)
from .rwrgraph import rwr_feature

RANDOM_BASELINE = "random"
ORACLE_FEATURE = "oracle"

MODEL_SPECS = ("ridge", "m5", "ridge+rwr", "m5+rwr")


@dataclass(frozen=True)
class FoldPlan:
    fold_index: int
    test_attendees: dict       # event_id -> frozenset of held-out attendees
    training_attendees: dict   # event_id -> frozenset (attendees minus held-out)
    test_users: frozenset      # union of the per-event test sets


def make_folds(events, n_folds: int = 10, seed: int = 0) -> list:
    """Stratified fold plans: per event, a seeded shuffle of the attendees
    partitioned into `n_folds` blocks whose sizes differ by at most one.

    Each attendee of each event lands in the test set of exactly one fold;
    events with fewer attendees than folds leave some folds empty.
    """
    if n_folds < 2:
        raise ValueError("n_folds must be >= 2")
    events = list(events)
    blocks = {}
    for e in events:
        attendees = sorted(e.attendees)
        rng = substream(seed, "folds", e.event_id)
        order = rng.permutation(len(attendees))
        shuffled = [attendees[i] for i in order]
        base, rem = divmod(len(shuffled), n_folds)
        sizes = [base + 1] * rem + [base] * (n_folds - rem)
        out, start = [], 0
        for s in sizes:
            out.append(frozenset(shuffled[start:start + s]))
            start += s
        blocks[e.event_id] = out

    folds = []
    for f in range(n_folds):
        test = {e.event_id: blocks[e.event_id][f] for e in events}
        training = {e.event_id: frozenset(e.attendees) - test[e.event_id] for e in events}
        test_users = frozenset().union(*test.values()) if test else frozenset()
        folds.append(FoldPlan(f, test, training, test_users))
    return folds


def ndcg_at(plist, n: int = 10) -> float:
    """Normalized discounted cumulative gain over the first n positions.

    Binary relevance; the normalizer is the same sum with all relevant
    items ranked first.  A list with no relevant item at all scores 0.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    n_rel = sum(plist.relevance.get(e, 0) for e in plist.event_ids)
    if n_rel == 0:
        return 0.0
    dcg = sum(1.0 / math.log2(1 + i)
              for i, e in enumerate(plist.event_ids[:n], start=1)
              if plist.relevance.get(e, 0))
    ideal = sum(1.0 / math.log2(1 + i) for i in range(1, min(n, n_rel) + 1))
    return dcg / ideal


def accuracy_at(plist, n: int) -> int:
    """1 iff some relevant event ranks within the top n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return int(any(plist.relevance.get(e, 0) for e in plist.event_ids[:n]))


def accuracy_at_pct(plist, pct: float) -> int:
    """accuracy_at with the cutoff at ceil(pct% of the list length)."""
    if not 0 < pct <= 100:
        raise ValueError("pct must be in (0, 100]")
    return accuracy_at(plist, math.ceil(pct / 100.0 * len(plist.event_ids)))


def kendall_tau(ranking_a, ranking_b) -> float:
    """(concordant - discordant) / (m choose 2) over two total orders."""
    a, b = list(ranking_a), list(ranking_b)
    if set(a) != set(b) or len(a) != len(b) or len(set(a)) != len(a):
        raise ValueError("rankings must order the same item set without repeats")
    m = len(a)
    if m < 2:
        raise ValueError("need at least two items")
    pos_b = {item: i for i, item in enumerate(b)}
    concordant = discordant = 0
    for i in range(m):
        for j in range(i + 1, m):
            if pos_b[a[i]] < pos_b[a[j]]:
                concordant += 1
            else:
                discordant += 1
    return (concordant - discordant) / (m * (m - 1) / 2)


def spearman_rho(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size != y.size or x.size < 3:
        raise ValueError("need two equal-length samples of size >= 3")
    rx, ry = rankdata(x), rankdata(y)
    sx, sy = rx.std(), ry.std()
    if sx == 0 or sy == 0:
        return 0.0
    return float(((rx - rx.mean()) * (ry - ry.mean())).mean() / (sx * sy))


def permutation_pvalue(x, y, n_permutations: int = 10_000, seed: int = 0) -> float:
    """Two-sided permutation p-value for the Spearman correlation of (x, y)."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    observed = abs(spearman_rho(x, y))
    rng = substream(seed, "permutation")
    hits = 0
    for _ in range(n_permutations):
        perm = rng.permutation(y.size)
        if abs(spearman_rho(x, y[perm])) >= observed - 1e-12:
            hits += 1
    return (1 + hits) / (n_permutations + 1)


@dataclass
class NicheReport:
    tau: dict                  # event_id -> Kendall tau niche score
    accuracy: dict             # event_id -> per-event accuracy used for rho
    rho: float
    p_value: float
    n_permutations: int

    def to_dict(self):
        return {"tau": dict(sorted(self.tau.items())),
                "accuracy": dict(sorted(self.accuracy.items())),
                "rho": self.rho, "p_value": self.p_value,
                "n_permutations": self.n_permutations}


def niche_analysis(events, event_profiles, corpus, per_event_accuracy,
                   n_permutations: int = 10_000, seed: int = 0) -> NicheReport:
    """Correlate event nicheness with a feature's per-event accuracy.

    An event's niche score is the Kendall tau between its profile's
    category ranking and the corpus-wide category popularity ranking,
    taken over the categories the profile actually scores (nonzero).
    Events with fewer than two such categories carry no tau and are
    excluded from the correlation.
    """
    global_counts = Counter(corpus.venues[ci.venue_id].category for ci in corpus.checkins)

    taus = {}
    for event, profile in zip(events, event_profiles):
        cats = [c for c, s in profile.category_vector.items() if s > 0]
        if len(cats) < 2:
            continue
        by_profile = sorted(cats, key=lambda c: (-profile.category_vector[c], c))
        by_popularity = sorted(cats, key=lambda c: (-global_counts.get(c, 0), c))
        taus[event.event_id] = kendall_tau(by_profile, by_popularity)

    shared = sorted(set(taus) & set(per_event_accuracy))
    if len(shared) < 3:
        raise ValueError("insufficient data for correlation")
    tau_values = [taus[e] for e in shared]
    acc_values = [per_event_accuracy[e] for e in shared]
    rho = spearman_rho(tau_values, acc_values)
    p = permutation_pvalue(tau_values, acc_values, n_permutations, seed)
    return NicheReport({e: taus[e] for e in shared},
                       {e: per_event_accuracy[e] for e in shared},
                       rho, p, n_permutations)


@dataclass
class BlockMetrics:
    """Aggregated ranking quality for one feature or fused model."""

    ndcg: float
    ndcg_n: int
    accuracy_at_n: list        # mean Accuracy@N for N = 1..n_events
    accuracy_at_pct: dict      # pct -> mean accuracy
    n_rankings: int
    per_event_accuracy: dict = field(default_factory=dict)

    def to_dict(self):
        return {"ndcg": self.ndcg, "ndcg_n": self.ndcg_n,
                "accuracy_at_n": list(self.accuracy_at_n),
                "accuracy_at_pct": {str(k): v for k, v in sorted(self.accuracy_at_pct.items())},
                "n_rankings": self.n_rankings,
                "per_event_accuracy": dict(sorted(self.per_event_accuracy.items()))}


@dataclass
class MetricsReport:
    seed: int
    n_folds: int
    n_events: int
    event_ids: list
    features: dict             # feature name -> BlockMetrics
    models: dict               # model spec -> BlockMetrics
    niche: NicheReport | None = None

    def to_dict(self):
        out = {"seed": self.seed, "n_folds": self.n_folds, "n_events": self.n_events,
               "event_ids": list(self.event_ids),
               "features": {k: v.to_dict() for k, v in sorted(self.features.items())},
               "models": {k: v.to_dict() for k, v in sorted(self.models.items())}}
        if self.niche is not None:
            out["niche"] = self.niche.to_dict()
        return out

    def block(self, name) -> BlockMetrics:
        return self.features.get(name) or self.models[name]

    def write_accuracy_csv(self, fh) -> None:
        fh.write("feature,n,accuracy\n")
        for name, block in sorted({**self.features, **self.models}.items()):
            for n, acc in enumerate(block.accuracy_at_n, start=1):
                fh.write(f"{name},{n},{repr(float(acc))}\n")


class _Tally:
    """Per-user metric accumulation for one feature or model block."""

    def __init__(self, n_events, ndcg_n, pcts):
        self.n_events = n_events
        self.ndcg_n = ndcg_n
        self.pcts = pcts
        self.ndcg = []
        self.best_ranks = []
        self.event_hits = {}

    def add(self, plist, test_event_ids):
        self.ndcg.append(ndcg_at(plist, self.ndcg_n))
        ranks = [i for i, e in enumerate(plist.event_ids, start=1)
                 if plist.relevance.get(e, 0)]
        self.best_ranks.append(min(ranks) if ranks else self.n_events + 1)
        if self.pcts and test_event_ids:
            cut = math.ceil(self.pcts[0] / 100.0 * self.n_events)
            rank_of = {e: i for i, e in enumerate(plist.event_ids, start=1)}
            for eid in test_event_ids:
                self.event_hits.setdefault(eid, []).append(int(rank_of[eid] <= cut))

    def merge(self, other):
        self.ndcg.extend(other.ndcg)
        self.best_ranks.extend(other.best_ranks)
        for eid, hits in other.event_hits.items():
            self.event_hits.setdefault(eid, []).extend(hits)

    def summary(self) -> BlockMetrics:
        best = np.array(self.best_ranks)
        curve = [(float(np.mean(best <= n)) if best.size else 0.0)
                 for n in range(1, self.n_events + 1)]
        at_pct = {pct: (float(np.mean(best <= math.ceil(pct / 100.0 * self.n_events)))
                        if best.size else 0.0)
                  for pct in self.pcts}
        per_event = {eid: float(np.mean(h)) for eid, h in self.event_hits.items()}
        return BlockMetrics(float(np.mean(self.ndcg)) if self.ndcg else 0.0,
                            self.ndcg_n, curve, at_pct, len(self.ndcg), per_event)


def _base_matrix_names(features, models):
    names = {f for f in features if f in FEATURE_NAMES and f != RANDOM_WALK}
    needs_rwr = RANDOM_WALK in features
    if models:
        names.update(n for n in FEATURE_NAMES if n != RANDOM_WALK)
        needs_rwr = needs_rwr or any(m.endswith("+rwr") for m in models)
    return sorted(names), needs_rwr


def run_experiment(corpus, events, features=(SOCIAL_INFLUENCE,), n_folds: int = 10,
                   seed: int = 0, *, models=(), ndcg_n: int = 10, accuracy_pcts=(5.0,),
                   rwr_k: int = 10, rwr_alpha: float = 0.85, rwr_tolerance: float = 1e-10,
                   rwr_max_iterations: int = 200, use_centrality: bool = True,
                   ridge_lambda: float = 1e-8, n_negatives: int = 15, min_leaf: int = 8,
                   sd_threshold: float = 0.05, threads: int = 1,
                   context: ScorerContext | None = None) -> MetricsReport:
    """Run the full stratified protocol and aggregate ranking metrics.

    For every fold, profiles, social counts and the walk graph are rebuilt
    from that fold's training attendees at each event's pre-day cutoff;
    every held-out user is ranked over all events with relevance equal to
    true attendance.  `features` may include the six participation
    features plus the "random" baseline and the "oracle" diagnostic.
    `models` selects fused learners from ridge / m5, with or without the
    random-walk feature ("m5+rwr" etc.).
    """
    events = list(events)
    if not events:
        raise ValueError("no events to evaluate")
    for m in models:
        if m not in MODEL_SPECS:
            raise ValueError(f"unknown model spec {m!r}")
    known = set(FEATURE_NAMES) | {RANDOM_BASELINE, ORACLE_FEATURE}
    for f in features:
        if f not in known:
            raise ValueError(f"unknown feature {f!r}")

    ctx = context if context is not None else ScorerContext(corpus)
    folds = make_folds(events, n_folds, seed)
    attended_by = {}
    for e in events:
        for u in e.attendees:
            attended_by.setdefault(u, set()).add(e.event_id)

    pcts = list(accuracy_pcts)
    blocks = list(features) + list(models)
    matrix_names, needs_rwr = _base_matrix_names(features, models)

    def run_fold(fold):
        training_sets = fold.training_attendees
        matrices = {name: ctx.matrix(name, events, training_sets) for name in matrix_names}
        if needs_rwr:
            matrices[RANDOM_WALK] = rwr_feature(
                corpus, events, training_sets, k=rwr_k, alpha=rwr_alpha,
                tolerance=rwr_tolerance, max_iterations=rwr_max_iterations, context=ctx)
        if RANDOM_BASELINE in features:
            rng = substream(seed, "random-feature", fold.fold_index)
            raw = rng.random((ctx.index.n_users, len(events)))
            matrices[RANDOM_BASELINE] = ScoreMatrix(
                RANDOM_BASELINE, list(ctx.index.user_ids),
                [e.event_id for e in events], raw, raw.copy())
        if ORACLE_FEATURE in features:
            raw = np.zeros((ctx.index.n_users, len(events)))
            for j, e in enumerate(events):
                for u in e.attendees:
                    raw[ctx.index.uindex[u], j] = 1.0
            matrices[ORACLE_FEATURE] = ScoreMatrix(
                ORACLE_FEATURE, list(ctx.index.user_ids),
                [e.event_id for e in events], raw, raw.copy())

        fitted = {}
        for spec in models:
            order = fusion.RWR_FUSION_FEATURES if spec.endswith("+rwr") else fusion.BASE_FUSION_FEATURES
            instances = fusion.build_training_set(fold, matrices, events, n_negatives,
                                                  seed, feature_order=order)
            if spec.startswith("ridge"):
                fitted[spec] = fusion.fit_ridge(instances, ridge_lambda, feature_order=order)
            else:
                fitted[spec] = fusion.fit_model_tree(instances, min_leaf, sd_threshold,
                                                     ridge_lambda, feature_order=order)

        tallies = {b: _Tally(len(events), ndcg_n, pcts) for b in blocks}
        for user in sorted(fold.test_users):
            relevance = {eid: 1 for eid in attended_by.get(user, ())}
            tested_here = [e.event_id for e in events if user in fold.test_attendees[e.event_id]]
            for f in features:
                scores = matrices[f].user_scores(user)
                plist = rank_events(scores, relevance, use_tie_break=use_centrality)
                tallies[f].add(plist, tested_here)
            for spec in models:
                plist = fusion.predict_and_rank(fitted[spec], user, events, matrices, relevance)
                tallies[spec].add(plist, tested_here)
        return tallies

    # warm shared caches so parallel folds only read them
    for day in sorted({e.day for e in events}):
        ctx.table(day)
    ctx.friend_csr()

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fold_tallies = list(pool.map(run_fold, folds))
    else:
        fold_tallies = [run_fold(f) for f in folds]

    merged = {b: _Tally(len(events), ndcg_n, pcts) for b in blocks}
    for tallies in fold_tallies:
        for b in blocks:
            merged[b].merge(tallies[b])

    feature_blocks = {f: merged[f].summary() for f in features}
    model_blocks = {m: merged[m].summary() for m in models}
    return MetricsReport(seed, n_folds, len(events), [e.event_id for e in events],
                         feature_blocks, model_blocks)
