"""Socio-spatial graph over users, categories and events, plus RWR scoring.

The directed graph carries four arc types: user->user (inverse friend
count), user->category (the user's TF-IDF category score), category->user
(the category treated as a document over its visitors) and event->category
(top-K event profile scores).  Out-weights are normalized per node into
transition probabilities.  A personalized random walk restarts at one
event node; the steady-state mass on user nodes measures how strongly the
event's place types and their social surroundings pull each user in.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .corpus import Corpus, CorpusIndex
from .profiles import UserProfileTable, top_k_categories
from .scorers import RANDOM_WALK, ScoreMatrix, ScorerContext

USER, CATEGORY, EVENT = "user", "category", "event"


@dataclass
class SocioSpatialGraph:
    """Row-stochastic typed transition structure.

    Node order is users, then categories, then events; `transition` rows
    sum to one except for dangling nodes (no out-arcs), whose mass the
    walk redirects to the restart node.
    """

    user_ids: list
    categories: list
    event_ids: list
    transition: sparse.csr_matrix
    dangling: np.ndarray
    _index: dict = field(default=None, repr=False)

    def __post_init__(self):
        if self._index is None:
            idx = {}
            for i, u in enumerate(self.user_ids):
                idx[(USER, u)] = i
            base = len(self.user_ids)
            for i, c in enumerate(self.categories):
                idx[(CATEGORY, c)] = base + i
            base += len(self.categories)
            for i, e in enumerate(self.event_ids):
                idx[(EVENT, e)] = base + i
            self._index = idx

    @property
    def n_nodes(self) -> int:
        return len(self.user_ids) + len(self.categories) + len(self.event_ids)

    def node_index(self, kind, node_id) -> int:
        return self._index[(kind, node_id)]

    def node_label(self, i):
        n_u, n_c = len(self.user_ids), len(self.categories)
        if i < n_u:
            return USER, self.user_ids[i]
        if i < n_u + n_c:
            return CATEGORY, self.categories[i - n_u]
        return EVENT, self.event_ids[i - n_u - n_c]

    def out_arcs(self, kind, node_id) -> list:
        """(target kind, target id, weight) triples for one source node."""
        i = self.node_index(kind, node_id)
        row = self.transition.getrow(i)
        return [(*self.node_label(j), w) for j, w in zip(row.indices, row.data)]

    def write_jsonl(self, fh) -> None:
        P = self.transition.tocoo()
        for i, j, w in zip(P.row, P.col, P.data):
            sk, si = self.node_label(int(i))
            dk, di = self.node_label(int(j))
            fh.write(json.dumps({"src_type": sk, "src_id": si, "dst_type": dk,
                                 "dst_id": di, "weight": float(w)}, sort_keys=True) + "\n")


@dataclass(frozen=True)
class RWRResult:
    event_id: str
    alpha: float
    iterations: int
    residual: float
    user_scores: dict                  # user_id -> steady-state probability
    scores: np.ndarray = field(repr=False, compare=False, default=None)
    residual_history: tuple = field(repr=False, compare=False, default=())


def category_user_weight(count: int, max_count: int, n_categories: int, n_visited: int) -> float:
    """Raw category->user arc weight: the category treated as a document.

    TF is the user's visit count at the category relative to the busiest
    visitor; the IDF-like term penalizes users who spread across many
    category types.
    """
    if count <= 0 or max_count <= 0 or n_visited <= 0:
        return 0.0
    return (count / max_count) * math.log(n_categories / n_visited)


def build_graph(corpus: Corpus, events, event_profiles, user_profiles, k: int = 10) -> SocioSpatialGraph:
    """Assemble and row-normalize the socio-spatial graph.

    `user_profiles` maps user_id to a UserProfile (one shared cutoff per
    graph); `event_profiles` pairs with `events` by position.  Event nodes
    keep out-arcs to their top-k nonzero profile categories and receive no
    in-arcs, so extra events in the graph are inert for other restarts.
    """
    user_ids = sorted(corpus.users)
    categories = list(corpus.categories)
    event_ids = [e.event_id for e in events]
    uidx = {u: i for i, u in enumerate(user_ids)}
    cidx = {c: len(user_ids) + i for i, c in enumerate(categories)}
    n = len(user_ids) + len(categories) + len(event_ids)

    rows, cols, data = [], [], []

    max_cat_count = {}
    for profile in user_profiles.values():
        for cat, cnt in profile.category_counts.items():
            if cnt > max_cat_count.get(cat, 0):
                max_cat_count[cat] = cnt

    n_cats = len(categories)
    for u in user_ids:
        i = uidx[u]
        friends = corpus.social.friends(u)
        if friends:
            w = 1.0 / len(friends)
            for f in sorted(friends):
                rows.append(i)
                cols.append(uidx[f])
                data.append(w)
        profile = user_profiles.get(u)
        if profile is None:
            continue
        for cat, score in profile.category_vector.items():
            if score > 0:
                rows.append(i)
                cols.append(cidx[cat])
                data.append(score)
        n_visited = len(profile.category_counts)
        for cat, cnt in profile.category_counts.items():
            w = category_user_weight(cnt, max_cat_count[cat], n_cats, n_visited)
            if w > 0:
                rows.append(cidx[cat])
                cols.append(i)
                data.append(w)

    for pos, (event, profile) in enumerate(zip(events, event_profiles)):
        if not profile.category_vector:
            raise ValueError(f"event {event.event_id} has an empty profile")
        src = len(user_ids) + len(categories) + pos
        for cat, score in top_k_categories(profile, k):
            if score > 0:
                rows.append(src)
                cols.append(cidx[cat])
                data.append(score)

    P = sparse.csr_matrix((data, (rows, cols)), shape=(n, n))
    return _normalize(P, user_ids, categories, event_ids)


def _normalize(P, user_ids, categories, event_ids) -> SocioSpatialGraph:
    row_sums = np.asarray(P.sum(axis=1)).ravel()
    dangling = row_sums == 0
    scale = np.where(dangling, 0.0, 1.0 / np.where(dangling, 1.0, row_sums))
    P = sparse.diags(scale) @ P
    return SocioSpatialGraph(list(user_ids), list(categories), list(event_ids), P.tocsr(), dangling)


def rwr(graph: SocioSpatialGraph, event, alpha: float = 0.85,
        tolerance: float = 1e-10, max_iterations: int = 200) -> RWRResult:
    """Power-iterate the restart fixed point for one event node.

    x <- alpha * P^T x + (1 - alpha) * e, with dangling-node mass
    redirected to the event node each sweep, starting from x = e.
    Converges when the L1 change drops below `tolerance`.
    """
    if not 0 <= alpha < 1:
        raise ValueError("alpha must satisfy 0 <= alpha < 1")
    restart_idx = graph.node_index(EVENT, event)
    PT = graph.transition.T.tocsr()
    dangling = graph.dangling

    x = np.zeros(graph.n_nodes)
    x[restart_idx] = 1.0
    history = []
    iterations = 0
    residual = math.inf
    for iterations in range(1, max_iterations + 1):
        y = alpha * (PT @ x)
        y[restart_idx] += alpha * x[dangling].sum() + (1.0 - alpha)
        residual = float(np.abs(y - x).sum())
        history.append(residual)
        x = y
        if residual < tolerance:
            break
    else:
        raise RuntimeError(f"RWR failed to converge: residual {residual:.3e} "
                           f"after {max_iterations} iterations")

    n_u = len(graph.user_ids)
    user_scores = {u: float(x[i]) for i, u in enumerate(graph.user_ids)}
    return RWRResult(event, alpha, iterations, residual, user_scores,
                     scores=x, residual_history=tuple(history))


def rwr_feature(corpus: Corpus, events, training_sets=None, k: int = 10,
                alpha: float = 0.85, tolerance: float = 1e-10,
                max_iterations: int = 200, context: ScorerContext | None = None) -> ScoreMatrix:
    """Users x events matrix of steady-state RWR scores.

    Profiles are rebuilt at each event's own pre-day cutoff, with event
    profiles drawn from `training_sets` (defaults to the full attendee
    sets).  Events sharing a day share one graph; since event nodes have
    no in-arcs the co-resident event nodes cannot influence each other.
    """
    events = list(events)
    if training_sets is None:
        training_sets = {e.event_id: e.attendees for e in events}
    ctx = context if context is not None else ScorerContext(corpus)
    index = ctx.index

    n_u, n_e = index.n_users, len(events)
    raw = np.zeros((n_u, n_e))
    col_of = {e.event_id: j for j, e in enumerate(events)}

    by_day = {}
    for e in events:
        by_day.setdefault(e.day, []).append(e)

    for day in sorted(by_day):
        group = by_day[day]
        table = ctx.table(day)
        P, dangling = _transition_from_table(index, table, ctx.friend_csr(), group,
                                             [ctx.event_profile_vector(e, training_sets[e.event_id])
                                              for e in group], k)
        graph = SocioSpatialGraph(list(index.user_ids), list(index.categories),
                                  [e.event_id for e in group], P, dangling)
        for e in group:
            result = rwr(graph, e.event_id, alpha, tolerance, max_iterations)
            raw[:, col_of[e.event_id]] = result.scores[:n_u]

    return ScoreMatrix(RANDOM_WALK, list(index.user_ids), [e.event_id for e in events],
                       raw, raw.copy())


def _transition_from_table(index: CorpusIndex, table: UserProfileTable, friend_csr,
                           events, event_vectors, k):
    """Vectorized equivalent of `build_graph` for one cutoff table."""
    n_u, n_c, n_e = index.n_users, index.n_categories, len(events)
    n = n_u + n_c + n_e

    deg = np.asarray(friend_csr.sum(axis=1)).ravel()
    social = sparse.diags(np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)) @ friend_csr

    user_cat = sparse.csr_matrix(table.tfidf)

    counts = table.cat_counts
    col_max = counts.max(axis=0)
    tf = np.divide(counts, col_max, out=np.zeros_like(counts), where=col_max > 0)
    n_visited = (counts > 0).sum(axis=1)
    idf_u = np.zeros(n_u)
    has = n_visited > 0
    idf_u[has] = np.log(n_c / n_visited[has])
    cat_user = sparse.csr_matrix((tf * idf_u[:, None]).T)

    ev_rows, ev_cols, ev_data = [], [], []
    for pos, vec in enumerate(event_vectors):
        order = np.lexsort((np.arange(n_c), -vec))[:k]
        for c in order:
            if vec[c] > 0:
                ev_rows.append(pos)
                ev_cols.append(c)
                ev_data.append(vec[c])
    event_cat = sparse.csr_matrix((ev_data, (ev_rows, ev_cols)), shape=(n_e, n_c))

    zeros = sparse.csr_matrix
    P = sparse.bmat([
        [social, user_cat, zeros((n_u, n_e))],
        [cat_user, zeros((n_c, n_c)), zeros((n_c, n_e))],
        [zeros((n_e, n_u)), event_cat, zeros((n_e, n_e))],
    ], format="csr")

    row_sums = np.asarray(P.sum(axis=1)).ravel()
    dangling = row_sums == 0
    scale = np.divide(1.0, row_sums, out=np.zeros_like(row_sums), where=~dangling)
    return (sparse.diags(scale) @ P).tocsr(), dangling
