"""Command-line pipeline: synth -> detect -> score -> evaluate -> fuse -> analyze.

Every subcommand takes an optional flat TOML or JSON config file; explicit
command-line flags override file values, which override built-in defaults.
All outputs land in the --out directory and are byte-deterministic given
the inputs, the resolved config and the seed (the resolved config itself
is written alongside the results).  Exit codes: 0 success, 1 module
failure (single-line JSON error on stderr), 2 config validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from ._util import stable_json
from . import evalharness, fusion, synthgen
from .corpus import load_corpus, write_corpus
from .eventmine import mine_events, read_events_jsonl, write_events_jsonl
from .profiles import build_event_profile
from .rwrgraph import rwr_feature
from .scorers import FEATURE_NAMES, RANDOM_WALK, ScorerContext


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    checkins: str = ""
    venues: str = ""
    social: str = ""
    events: str = ""
    out: str = "out"
    timezone_offset_minutes: int = 0
    top_k: int = 60
    radius_m: float = 300.0
    threshold_factor: float = 2.0
    features: tuple = ("popularity",)
    alpha: float = 0.85
    rwr_k: int = 10
    rwr_tolerance: float = 1e-10
    rwr_max_iterations: int = 200
    n_folds: int = 10
    seed: int = 0
    ndcg_n: int = 10
    accuracy_pcts: tuple = (5.0,)
    use_centrality: bool = True
    model: str = "m5"
    with_rwr: bool = True
    all_variants: bool = False
    ridge_lambda: float = 1e-8
    n_negatives: int = 15
    min_leaf: int = 8
    sd_threshold: float = 0.05
    permutations: int = 10_000
    threads: int = 1

    def validate(self):
        known = set(FEATURE_NAMES) | {evalharness.RANDOM_BASELINE, evalharness.ORACLE_FEATURE}
        bad = [f for f in self.features if f not in known]
        if bad:
            raise ConfigError(f"unknown features: {bad}")
        if self.model not in ("ridge", "m5"):
            raise ConfigError(f"model must be 'ridge' or 'm5', got {self.model!r}")
        if not 0 <= self.alpha < 1:
            raise ConfigError("alpha must be in [0, 1)")
        if self.n_folds < 2:
            raise ConfigError("n_folds must be >= 2")
        if self.top_k < 1 or self.radius_m <= 0 or self.threshold_factor <= 0:
            raise ConfigError("detection parameters out of range")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def to_dict(self):
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in fields(self)}


def _load_config_file(path) -> dict:
    text = Path(path).read_bytes()
    if str(path).endswith(".json"):
        return json.loads(text)
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    return tomllib.loads(text.decode("utf-8"))


def resolve_config(args) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        file_values = _load_config_file(args.config)
        known = {f.name for f in fields(RunConfig)}
        unknown = set(file_values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_values)
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    for key in ("features", "accuracy_pcts"):
        if key in values and isinstance(values[key], str):
            parts = [p.strip() for p in values[key].split(",") if p.strip()]
            values[key] = tuple(float(p) for p in parts) if key == "accuracy_pcts" else tuple(parts)
        elif key in values:
            values[key] = tuple(values[key])
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def _outdir(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(stable_json(cfg.to_dict()))
    print(f"eventscope: seed={cfg.seed} out={out}", file=sys.stderr)
    return out


def _corpus(cfg):
    for name in ("checkins", "venues", "social"):
        if not getattr(cfg, name):
            raise ConfigError(f"missing required input: {name}")
    return load_corpus(cfg.checkins, cfg.venues, cfg.social, cfg.timezone_offset_minutes)


def _events(cfg):
    if not cfg.events:
        raise ConfigError("missing required input: events")
    return read_events_jsonl(cfg.events)


def cmd_synth(args):
    cfg = resolve_config(args)
    out = _outdir(cfg)
    raw = _load_config_file(args.synth_config) if args.synth_config else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    sc = synthgen.SynthConfig.from_dict(raw)
    corpus, truth = synthgen.generate(sc)
    write_corpus(corpus, out / "checkins.csv", out / "venues.csv", out / "social.csv")
    synthgen.write_ground_truth(truth, out / "ground_truth.json")
    return 0


def cmd_detect(args):
    cfg = resolve_config(args)
    out = _outdir(cfg)
    corpus = _corpus(cfg)
    events = mine_events(corpus, cfg.top_k, cfg.radius_m, cfg.threshold_factor)
    write_events_jsonl(events, out / "events.jsonl")
    print(f"eventscope: mined {len(events)} events", file=sys.stderr)
    return 0


def cmd_score(args):
    cfg = resolve_config(args)
    out = _outdir(cfg)
    corpus = _corpus(cfg)
    events = _events(cfg)
    ctx = ScorerContext(corpus)
    training = {e.event_id: e.attendees for e in events}
    with open(out / "scores.csv", "w", encoding="utf-8") as fh:
        fh.write("feature,user_id,event_id,raw,oriented,tie_break\n")
        for name in cfg.features:
            if name == RANDOM_WALK:
                matrix = rwr_feature(corpus, events, training, k=cfg.rwr_k,
                                     alpha=cfg.alpha, tolerance=cfg.rwr_tolerance,
                                     max_iterations=cfg.rwr_max_iterations, context=ctx)
            else:
                matrix = ctx.matrix(name, events, training)
            matrix.write_csv(fh, header=False)
    return 0


def _write_report(report, out):
    (out / "metrics.json").write_text(stable_json(report.to_dict()))
    with open(out / "accuracy_curves.csv", "w", encoding="utf-8") as fh:
        report.write_accuracy_csv(fh)


def cmd_evaluate(args):
    cfg = resolve_config(args)
    out = _outdir(cfg)
    corpus = _corpus(cfg)
    events = _events(cfg)
    report = evalharness.run_experiment(
        corpus, events, features=cfg.features, n_folds=cfg.n_folds, seed=cfg.seed,
        ndcg_n=cfg.ndcg_n, accuracy_pcts=cfg.accuracy_pcts, rwr_k=cfg.rwr_k,
        rwr_alpha=cfg.alpha, rwr_tolerance=cfg.rwr_tolerance,
        rwr_max_iterations=cfg.rwr_max_iterations, use_centrality=cfg.use_centrality,
        threads=cfg.threads)
    _write_report(report, out)
    return 0


def cmd_fuse(args):
    cfg = resolve_config(args)
    out = _outdir(cfg)
    corpus = _corpus(cfg)
    events = _events(cfg)
    if cfg.all_variants:
        models = list(evalharness.MODEL_SPECS)
    else:
        models = [cfg.model + ("+rwr" if cfg.with_rwr else "")]
    report = evalharness.run_experiment(
        corpus, events, features=cfg.features, n_folds=cfg.n_folds, seed=cfg.seed,
        models=models, ndcg_n=cfg.ndcg_n, accuracy_pcts=cfg.accuracy_pcts,
        rwr_k=cfg.rwr_k, rwr_alpha=cfg.alpha, rwr_tolerance=cfg.rwr_tolerance,
        rwr_max_iterations=cfg.rwr_max_iterations, use_centrality=cfg.use_centrality,
        ridge_lambda=cfg.ridge_lambda, n_negatives=cfg.n_negatives,
        min_leaf=cfg.min_leaf, sd_threshold=cfg.sd_threshold, threads=cfg.threads)
    _write_report(report, out)

    # reference model dumps fitted on the first fold's training split
    folds = evalharness.make_folds(events, cfg.n_folds, cfg.seed)
    ctx = ScorerContext(corpus)
    matrices = {n: ctx.matrix(n, events, folds[0].training_attendees)
                for n in FEATURE_NAMES if n != RANDOM_WALK}
    needs_rwr = any(m.endswith("+rwr") for m in models)
    if needs_rwr:
        matrices[RANDOM_WALK] = rwr_feature(corpus, events, folds[0].training_attendees,
                                            k=cfg.rwr_k, alpha=cfg.alpha,
                                            tolerance=cfg.rwr_tolerance,
                                            max_iterations=cfg.rwr_max_iterations, context=ctx)
    for spec in models:
        order = fusion.RWR_FUSION_FEATURES if spec.endswith("+rwr") else fusion.BASE_FUSION_FEATURES
        instances = fusion.build_training_set(folds[0], matrices, events,
                                              cfg.n_negatives, cfg.seed, feature_order=order)
        if spec.startswith("ridge"):
            model = fusion.fit_ridge(instances, cfg.ridge_lambda, feature_order=order)
        else:
            model = fusion.fit_model_tree(instances, cfg.min_leaf, cfg.sd_threshold,
                                          cfg.ridge_lambda, feature_order=order)
        name = spec.replace("+", "_")
        (out / f"model_{name}.json").write_text(stable_json({"fold": 0, **model.to_dict()}))
    return 0


def cmd_analyze(args):
    cfg = resolve_config(args)
    out = _outdir(cfg)
    corpus = _corpus(cfg)
    events = _events(cfg)
    report = evalharness.run_experiment(
        corpus, events, features=(RANDOM_WALK,), n_folds=cfg.n_folds, seed=cfg.seed,
        ndcg_n=cfg.ndcg_n, accuracy_pcts=cfg.accuracy_pcts, rwr_k=cfg.rwr_k,
        rwr_alpha=cfg.alpha, rwr_tolerance=cfg.rwr_tolerance,
        rwr_max_iterations=cfg.rwr_max_iterations, threads=cfg.threads)
    profiles = [build_event_profile(corpus, e, e.attendees) for e in events]
    niche = evalharness.niche_analysis(
        events, profiles, corpus,
        report.features[RANDOM_WALK].per_event_accuracy,
        n_permutations=cfg.permutations, seed=cfg.seed)
    report.niche = niche
    _write_report(report, out)
    (out / "niche.json").write_text(stable_json(niche.to_dict()))
    return 0


def _add_common(p):
    p.add_argument("--config", help="flat TOML or JSON config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)


def _add_corpus_inputs(p):
    p.add_argument("--checkins")
    p.add_argument("--venues")
    p.add_argument("--social")
    p.add_argument("--timezone-offset", dest="timezone_offset_minutes", type=int, default=None)


def _add_eval_inputs(p):
    p.add_argument("--events")
    p.add_argument("--features")
    p.add_argument("--folds", dest="n_folds", type=int, default=None)
    p.add_argument("--ndcg", dest="ndcg_n", type=int, default=None)
    p.add_argument("--pcts", dest="accuracy_pcts")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--rwr-k", dest="rwr_k", type=int, default=None)
    p.add_argument("--no-centrality", dest="use_centrality", action="store_false", default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="eventscope", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus with planted events")
    _add_common(p)
    p.add_argument("--synth-config", dest="synth_config", help="SynthConfig TOML/JSON")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("detect", help="mine events from a corpus")
    _add_common(p)
    _add_corpus_inputs(p)
    p.add_argument("--top", dest="top_k", type=int, default=None)
    p.add_argument("--radius", dest="radius_m", type=float, default=None)
    p.add_argument("--threshold", dest="threshold_factor", type=float, default=None)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("score", help="dump feature score matrices")
    _add_common(p)
    _add_corpus_inputs(p)
    _add_eval_inputs(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="cross-validated feature evaluation")
    _add_common(p)
    _add_corpus_inputs(p)
    _add_eval_inputs(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("fuse", help="train and evaluate fused ranking models")
    _add_common(p)
    _add_corpus_inputs(p)
    _add_eval_inputs(p)
    p.add_argument("--model", choices=("ridge", "m5"), default=None)
    rwr_group = p.add_mutually_exclusive_group()
    rwr_group.add_argument("--with-rwr", dest="with_rwr", action="store_true", default=None)
    rwr_group.add_argument("--no-rwr", dest="with_rwr", action="store_false", default=None)
    p.add_argument("--all-variants", dest="all_variants", action="store_true", default=None)
    p.add_argument("--lambda", dest="ridge_lambda", type=float, default=None)
    p.add_argument("--negatives", dest="n_negatives", type=int, default=None)
    p.add_argument("--min-leaf", dest="min_leaf", type=int, default=None)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("analyze", help="niche-event correlation analysis")
    _add_common(p)
    _add_corpus_inputs(p)
    _add_eval_inputs(p)
    p.add_argument("--permutations", type=int, default=None)
    p.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - single-line machine-readable contract
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
