"""eventscope: mine organized events from check-in corpora and rank
user attendance likelihood with spatio-temporal and social features."""

from .corpus import (CheckIn, Corpus, CorpusIndex, SocialGraph, Venue,
                     checkins_before, load_corpus, write_corpus)
from .eventmine import (EventRecord, detect_anomalies, haversine_m,
                        mine_events, read_events_jsonl, venue_day_counts,
                        write_events_jsonl)
from .profiles import (EventProfile, UserProfile, UserProfileTable,
                       build_event_profile, build_user_profile, compute_idf,
                       top_k_categories)
from .scorers import (FEATURE_NAMES, FeatureScore, PredictionList,
                      ScoreMatrix, ScorerContext, category_score,
                      home_distance, popularity, rank_events,
                      social_influence, temporal_distance)
from .rwrgraph import RWRResult, SocioSpatialGraph, build_graph, rwr, rwr_feature
from .evalharness import (FoldPlan, MetricsReport, NicheReport, accuracy_at,
                          accuracy_at_pct, kendall_tau, make_folds,
                          ndcg_at, niche_analysis, run_experiment,
                          spearman_rho)
from .fusion import (ModelTree, RidgeModel, TrainingInstance,
                     build_training_set, fit_model_tree, fit_ridge,
                     predict_and_rank)
from .synthgen import GroundTruth, PlantedEvent, SynthConfig, generate

__version__ = "0.1.0"
