# cli.py
import argparse
import json
import logging
import os
import sys

from config import SYNTH_SERVE_HOST, SYNTH_SERVE_PORT, config_hash, load_config
from models.configuration import Configuration
from services import curation_service, interaction_service, selection_service, synth_service
from services.chat_service import CHAT_MODES, ChatClient
from services.remote_provider import RemoteSynthProvider
from services.rollout_store import CacheOnlyProvider, RolloutStore, load_selections
from utils.errors import CurationError, ValidationError
from utils.file_utils import header_record, write_columns, write_jsonl
from utils.log_setup import configure_logging

EXIT_OK = 0
EXIT_FAILURES = 1
EXIT_USAGE = 2

DEFAULT_RATIOS = "0,10,20,30,40,50,60,70,80,90"


# --- argument parsing ---

def _add_provider_options(parser):
    group = parser.add_argument_group("rollout provider")
    group.add_argument("--worlds", help="Synthetic worlds file; evaluates configurations by simulation")
    group.add_argument("--exact", action="store_true", help="Exact-probability mode for synthetic worlds")
    group.add_argument("--paired-runs", action="store_true",
                       help="Share each run's random stream across configurations of a synthetic world")
    group.add_argument("--provider-url", help="Base URL of a running `synth serve` instance")
    group.add_argument("--endpoint", action="store_true", help="Sample the configured chat-completion endpoint")
    _add_chat_options(group)


def _add_chat_options(parser):
    parser.add_argument("--chat-mode", choices=CHAT_MODES, default="live")
    parser.add_argument("--transcript", help="Transcript file for record/replay chat modes")


def build_parser():
    parser = argparse.ArgumentParser(prog="kpcurate", description="Knowledge-point hint curation toolkit")
    parser.add_argument("--config", help="JSON config file (flags override its values)")
    parser.add_argument("--data-dir")
    parser.add_argument("--log-dir")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--runs", type=int)
    parser.add_argument("--samples-per-run", type=int)
    parser.add_argument("--epsilon", help="T-LOO tolerance, e.g. 1/32")
    parser.add_argument("--delta", help="CBRS near-optimality band, e.g. 1/32")
    parser.add_argument("--enumeration-cap", type=int)
    parser.add_argument("--exhaustive-cap", type=int)
    parser.add_argument("--paradox-subset-cap", type=int)
    parser.add_argument("--bucket-edges", help="Comma-separated edges from 0 to 1")
    parser.add_argument("--injection-threshold", type=float)
    parser.add_argument("--parallelism", type=int)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="Load problems / KPs / rollouts into the data directory")
    p.add_argument("--problems")
    p.add_argument("--kps")
    p.add_argument("--rollouts", help="Aggregated run_counts file")
    p.add_argument("--raw-rollouts", help="Per-sample rollout file")

    p = sub.add_parser("evaluate", help="Fill missing {∅, K, K∖{i}} accuracy cells")
    _add_provider_options(p)

    p = sub.add_parser("select", help="Run a selection strategy over every problem")
    p.add_argument("--strategy", required=True,
                   choices=[s.replace("_", "-") for s in selection_service.STRATEGIES])
    p.add_argument("--strict-formula", action="store_true", help="Literal printed branch-3 set for S/T-LOO")
    p.add_argument("--output")
    _add_provider_options(p)

    p = sub.add_parser("compare", help="Summary row per strategy, plus the CBRS delta sweep")
    p.add_argument("--strategies", default="none,all,random,max-score,s-loo,t-loo,css,cbrs")
    p.add_argument("--deltas", default="0,1/32,2/32")
    p.add_argument("--output")
    _add_provider_options(p)

    p = sub.add_parser("paradox", help="Pruning-interaction statistics p_m and delta_m")
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--output")
    _add_provider_options(p)

    p = sub.add_parser("buckets", help="Difficulty buckets by no-KP accuracy")
    p.add_argument("--hinted", default="all", help="'all' or a selections file")
    p.add_argument("--output")

    p = sub.add_parser("distribution", help="Per-problem correct-count distribution")
    p.add_argument("--configs", default="none", help="'none', 'all' or a selections file")
    p.add_argument("--run", type=int, default=0)
    p.add_argument("--pooled", action="store_true")
    p.add_argument("--output")

    p = sub.add_parser("jaccard", help="Mean per-problem Jaccard overlap of two selections files")
    p.add_argument("selections_a")
    p.add_argument("selections_b")

    p = sub.add_parser("prefix-sweep", help="Accuracy vs injected solution-prefix ratio")
    p.add_argument("--problem", required=True)
    p.add_argument("--ratios", default=DEFAULT_RATIOS)
    p.add_argument("--threshold-tokens", type=int,
                   help="Use a synthetic threshold provider with the jump at this many tokens")
    p.add_argument("--low", type=float, default=0.1)
    p.add_argument("--high", type=float, default=0.7)
    p.add_argument("--output")
    group = p.add_argument_group("chat endpoint")
    _add_chat_options(group)

    p = sub.add_parser("curate", help="Solution, extraction and leakage stages for uncurated problems")
    _add_chat_options(p)

    p = sub.add_parser("export", help="Write the hint-augmented training export")
    p.add_argument("--selections", required=True)
    p.add_argument("--output")

    p = sub.add_parser("synth", help="Synthetic benchmark tools")
    synth_sub = p.add_subparsers(dest="synth_command", required=True)
    g = synth_sub.add_parser("generate", help="Write a synthetic dataset and its worlds into the data directory")
    g.add_argument("--problems", type=int, default=500)
    g.add_argument("--kps", type=int, default=6)
    g.add_argument("--paradox-fraction", type=float, default=0.3)
    g.add_argument("--zero-fraction", type=float, default=0.3)
    s = synth_sub.add_parser("serve", help="Serve synthetic rollouts over HTTP")
    s.add_argument("--worlds", required=True)
    s.add_argument("--exact", action="store_true")
    s.add_argument("--paired-runs", action="store_true")
    s.add_argument("--host", default=SYNTH_SERVE_HOST)
    s.add_argument("--port", type=int, default=SYNTH_SERVE_PORT)
    return parser


def config_overrides(args):
    edges = None
    if args.bucket_edges:
        edges = [float(e) for e in args.bucket_edges.split(",")]
    return {
        "data_dir": args.data_dir,
        "log_dir": args.log_dir,
        "seed": args.seed,
        "runs": args.runs,
        "samples_per_run": args.samples_per_run,
        "epsilon": args.epsilon,
        "delta": args.delta,
        "enumeration_cap": args.enumeration_cap,
        "exhaustive_cap": args.exhaustive_cap,
        "paradox_subset_cap": args.paradox_subset_cap,
        "bucket_edges": edges,
        "injection_threshold": args.injection_threshold,
        "parallelism": args.parallelism,
    }


# --- helpers ---

class Context:
    def __init__(self, args, cfg):
        self.args = args
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.command = args.command if args.command != "synth" else f"synth {args.synth_command}"
        self._store = None

    @property
    def store(self):
        if self._store is None:
            self._store = RolloutStore(self.cfg.data_dir, self.cfg.runs, self.cfg.samples_per_run)
        return self._store

    def header(self, **extra):
        return header_record(self.command, self.hash, **extra)

    def output(self, name):
        return os.path.join(self.cfg.data_dir, name)

    def chat_client(self):
        return ChatClient(self.cfg.endpoint, mode=self.args.chat_mode, transcript_path=self.args.transcript)

    def provider(self):
        args = self.args
        if getattr(args, "worlds", None):
            return synth_service.SyntheticProvider(synth_service.load_worlds(args.worlds), exact=args.exact,
                                                    paired=args.paired_runs)
        if getattr(args, "provider_url", None):
            return RemoteSynthProvider(args.provider_url)
        if getattr(args, "endpoint", False):
            return curation_service.EndpointProvider(self.store, self.chat_client(),
                                                     parallelism=self.cfg.parallelism)
        return CacheOnlyProvider()

    def finish(self, failures):
        """Writes the failure report when needed; returns the exit code."""
        path = self.output(f"failures-{self.command.replace(' ', '-')}.jsonl")
        if failures:
            write_jsonl(path, failures, header=self.header())
            logging.warning(f"{len(failures)} problem(s) failed; see {path}")
            return EXIT_FAILURES
        if os.path.exists(path):
            os.remove(path)
        return EXIT_OK


def _print(record):
    print(json.dumps(record, sort_keys=True, ensure_ascii=False))


def _ratio(text):
    try:
        value = float(text)
    except ValueError:
        raise ValidationError(f"prefix ratio '{text.strip()}' is not a number") from None
    return int(value) if value.is_integer() else value


def _config_map(ctx, source):
    """{problem_id: Configuration} for 'none', 'all' or a selections file."""
    store = ctx.store
    if source == "none":
        return {pid: Configuration.empty() for pid in store.problem_ids()}
    if source == "all":
        return {pid: store.table_for(pid).full for pid in store.problem_ids()}
    return {pid: outcome.selected for pid, outcome in load_selections(source).items()}


# --- subcommands ---

def cmd_ingest(ctx):
    args, store = ctx.args, ctx.store
    counts = {}
    if args.problems:
        counts["problems"] = store.ingest_problems(args.problems)
    if args.kps:
        counts["kps"] = store.ingest_kps(args.kps)
    if args.rollouts:
        counts["rollouts"] = store.ingest_rollouts(args.rollouts)
    if args.raw_rollouts:
        counts["raw_rollouts"] = store.ingest_raw_rollouts(args.raw_rollouts)
    if not counts:
        raise ValidationError("ingest needs at least one of --problems, --kps, --rollouts, --raw-rollouts")
    _print(counts)
    return EXIT_OK


def cmd_evaluate(ctx):
    evaluated, failures = selection_service.fill_loo_cells(ctx.store, ctx.provider(), ctx.cfg.parallelism)
    _print({"evaluated": evaluated, "failures": len(failures)})
    return ctx.finish(failures)


def cmd_select(ctx):
    args = ctx.args
    params = selection_service.StrategyParams.from_config(ctx.cfg, strict_formula=args.strict_formula)
    result = selection_service.batch_select(ctx.store, args.strategy, params, ctx.provider(), ctx.cfg.parallelism)
    path = args.output or ctx.output(f"selections-{result.strategy}.jsonl")
    ctx.store.save_selections(result.outcomes, path, header=ctx.header(strategy=result.strategy))
    summary_path = ctx.output(f"summary-{result.strategy}.jsonl")
    write_jsonl(summary_path, [result.summary], header=ctx.header(strategy=result.strategy))
    _print(result.summary)
    return ctx.finish(result.failures)


def cmd_compare(ctx):
    args = ctx.args
    params = selection_service.StrategyParams.from_config(ctx.cfg)
    worlds = synth_service.load_worlds(args.worlds) if args.worlds else None
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    rows, failures = [], []
    for row, result in selection_service.compare_strategies(ctx.store, strategies, params, ctx.provider(),
                                                            worlds, ctx.cfg.parallelism):
        rows.append(row)
        failures.extend(dict(f, strategy=result.strategy) for f in result.failures)
        rows.append(dict(interaction_service.kp_statistics(ctx.store, result.outcomes), strategy=result.strategy))
    deltas = [d.strip() for d in args.deltas.split(",") if d.strip()]
    rows.extend(selection_service.cbrs_delta_sweep(ctx.store, deltas))
    write_jsonl(args.output or ctx.output("compare.jsonl"), rows, header=ctx.header())
    for row in rows:
        _print(row)
    return ctx.finish(failures)


def cmd_paradox(ctx):
    args = ctx.args
    report = interaction_service.paradox_stats(ctx.store, args.m, ctx.provider(), ctx.cfg.paradox_subset_cap,
                                               ctx.cfg.seed)
    path = args.output or ctx.output(f"paradox-m{args.m}.jsonl")
    write_jsonl(path, [report.to_record()] + report.detail_records(), header=ctx.header(m=args.m))
    _print(report.to_record())
    return ctx.finish(report.failures)


def cmd_buckets(ctx):
    args = ctx.args
    report = interaction_service.difficulty_buckets(ctx.store, _config_map(ctx, args.hinted), ctx.cfg.bucket_edges)
    path = args.output or ctx.output("buckets.jsonl")
    write_jsonl(path, report.to_records(), header=ctx.header(hinted=args.hinted))
    rows = []
    for bucket in report.per_bucket:
        quantiles = bucket["quantiles"] or {}
        rows.append([bucket["low"], bucket["high"], bucket["n"], bucket["mu_wo"], bucket["mu_with"]]
                    + [quantiles.get(str(q)) for q in interaction_service.QUANTILES])
    write_columns(os.path.splitext(path)[0] + ".tsv",
                  ["low", "high", "n", "mu_wo", "mu_with"] + [f"p{q}" for q in interaction_service.QUANTILES],
                  rows)
    for record in report.to_records():
        _print(record)
    return EXIT_OK


def cmd_distribution(ctx):
    args = ctx.args
    result = interaction_service.correct_count_distribution(ctx.store, _config_map(ctx, args.configs),
                                                            run=args.run, pooled=args.pooled)
    path = args.output or ctx.output("distribution.jsonl")
    write_jsonl(path, [result], header=ctx.header(configs=args.configs))
    _print(result)
    return EXIT_OK


def cmd_jaccard(ctx):
    a = {pid: o.selected for pid, o in load_selections(ctx.args.selections_a).items()}
    b = {pid: o.selected for pid, o in load_selections(ctx.args.selections_b).items()}
    _print({"kind": "jaccard", "problems": len(a), "jaccard": interaction_service.strategy_jaccard(a, b)})
    return EXIT_OK


def cmd_prefix_sweep(ctx):
    args = ctx.args
    problem = ctx.store.problems.get(args.problem)
    if problem is None:
        raise ValidationError(f"Unknown problem {args.problem}")
    if args.threshold_tokens is not None:
        provider = synth_service.ThresholdPromptProvider(args.threshold_tokens, args.low, args.high,
                                                         seed=ctx.cfg.seed)
    else:
        provider = curation_service.EndpointProvider(ctx.store, ctx.chat_client(), parallelism=ctx.cfg.parallelism)
    ratios = [_ratio(r) for r in args.ratios.split(",") if r.strip()]
    points = interaction_service.prefix_sweep(problem, ratios, provider, ctx.cfg.runs, ctx.cfg.samples_per_run)
    path = args.output or ctx.output(f"prefix-{problem.id}.jsonl")
    write_jsonl(path, points, header=ctx.header(problem_id=problem.id))
    write_columns(os.path.splitext(path)[0] + ".tsv", ["ratio", "tokens", "accuracy"],
                  [[p["ratio"], p["tokens"], p["accuracy"]] for p in points])
    for point in points:
        _print({k: v for k, v in point.items() if k != "hint"})
    return EXIT_OK


def cmd_curate(ctx):
    reports, failures = curation_service.run_curation(ctx.store, ctx.chat_client(),
                                                      ctx.cfg.solution_max_attempts, ctx.cfg.parallelism)
    write_jsonl(ctx.output("curation.jsonl"), reports, header=ctx.header())
    _print({"curated": len(reports), "failures": len(failures)})
    return ctx.finish(failures)


def cmd_export(ctx):
    args = ctx.args
    path = args.output or ctx.output("export.jsonl")
    _, summary, skipped = curation_service.export_training_data(
        ctx.store, load_selections(args.selections), ctx.cfg.injection_threshold, path, header=ctx.header()
    )
    _print(summary)
    return ctx.finish(skipped)


def cmd_synth(ctx):
    args = ctx.args
    if args.synth_command == "generate":
        benchmark = synth_service.generate_benchmark(args.problems, args.kps, args.paradox_fraction,
                                                     args.zero_fraction, ctx.cfg.seed)
        benchmark.write(ctx.cfg.data_dir, header=ctx.header())
        _print({"problems": len(benchmark.problems), "kps": args.kps, "seed": ctx.cfg.seed})
        return EXIT_OK

    from app import create_app

    app = create_app(synth_service.load_worlds(args.worlds), exact=args.exact, paired=args.paired_runs)
    logging.info(f"Serving synthetic rollouts on {args.host}:{args.port}")
    app.run(debug=False, host=args.host, port=args.port, use_reloader=False)
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "evaluate": cmd_evaluate,
    "select": cmd_select,
    "compare": cmd_compare,
    "paradox": cmd_paradox,
    "buckets": cmd_buckets,
    "distribution": cmd_distribution,
    "jaccard": cmd_jaccard,
    "prefix-sweep": cmd_prefix_sweep,
    "curate": cmd_curate,
    "export": cmd_export,
    "synth": cmd_synth,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, config_overrides(args))
    except (ValidationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    configure_logging(cfg.log_dir or os.path.join(cfg.data_dir, "logs"))
    ctx = Context(args, cfg)
    try:
        return COMMANDS[args.command](ctx)
    except ValidationError as e:
        logging.error(f"{ctx.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except CurationError as e:
        logging.error(f"{ctx.command} failed: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURES


if __name__ == "__main__":
    sys.exit(main())
