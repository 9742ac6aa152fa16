"""Command-line surface: scenario generation, bandwidth precompute,
re-ranking, evaluation, parameter sweeps, and timing benchmarks.

Exit codes: 0 success, 2 usage, 3 data/format, 4 internal error.
Set DAKR_LOG=debug|info|warning|error to control verbosity.  Data outputs
are byte-stable for a fixed seed; wall-clock figures go to stdout or to a
separate timings file, never into data files.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .core import DistanceMetric, FeatureSet
from .errors import DakrError, FormatError, MissingTruth, StaleSigmaTable
from .evaluation import (
    DEFAULT_RANKS,
    SCENARIO_KINDS,
    evaluate_methods,
    generate_scenario,
    k_sweep,
)
from .fileio import (
    read_features,
    read_sigma_sidecar,
    read_truth_csv,
    sigma_table_from_sidecar,
    write_csv_rows,
    write_features_binary,
    write_features_csv,
    write_json,
    write_rankings_csv,
    write_sigma_sidecar,
    write_truth_csv,
)
from .kernels import (
    bi_dakr_rank,
    compute_sigma_table,
    default_k_sigma,
    inv_dakr_rank,
)
from .neighbors import (
    GALLERY_ONLY,
    WITH_PROBES,
    rank_by_distance,
    rank_by_inn,
    rank_by_rnn,
)
from .rerank import DAKR_METHODS, parse_method_token, rerank, resolve_policy

log = logging.getLogger("dakr")

_BENCH_METHODS = ("knn", "inn", "inv_dakr", "bi_dakr")


def _configure_logging() -> None:
    level = os.environ.get("DAKR_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def _existing(parser: argparse.ArgumentParser, path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        parser.error(f"{what} file not found: {p}")
    return p


def _build_metric(parser: argparse.ArgumentParser, args) -> DistanceMetric:
    if args.metric in ("euclidean", "squared_euclidean"):
        if args.metric_matrix:
            parser.error(f"--metric-matrix is not used with {args.metric}")
        return DistanceMetric(args.metric)
    if not args.metric_matrix:
        parser.error(f"--metric {args.metric} requires --metric-matrix")
    matrix = np.loadtxt(
        _existing(parser, args.metric_matrix, "metric matrix"),
        delimiter=",",
        ndmin=2,
    )
    if args.metric == "mahalanobis":
        return DistanceMetric.mahalanobis(matrix)
    return DistanceMetric.precomputed(matrix)


def _add_metric_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument(
        "--metric",
        default="euclidean",
        choices=["euclidean", "squared_euclidean", "mahalanobis", "precomputed"],
    )
    sub.add_argument("--metric-matrix", help="CSV matrix for mahalanobis/precomputed")


def _add_scenario_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--scenario", choices=list(SCENARIO_KINDS))
    sub.add_argument("--n-identities", type=int, default=100)
    sub.add_argument("--shots-per-id", type=int, default=1)
    sub.add_argument("--n-distractors", type=int, default=0)
    sub.add_argument("--dim", type=int, default=16)
    sub.add_argument("--cluster-spread", type=float, default=0.21)
    sub.add_argument("--seed", type=int, default=0)


def _scenario_from_args(args):
    return generate_scenario(
        args.scenario,
        n_identities=args.n_identities,
        shots_per_id=args.shots_per_id,
        n_distractors=args.n_distractors,
        dim=args.dim,
        cluster_spread=args.cluster_spread,
        seed=args.seed,
    )


def _load_eval_data(parser, args):
    """Either the three input files or a synthetic scenario, never both."""
    have_files = args.gallery or args.probes or args.truth
    if args.scenario and have_files:
        parser.error("give either input files or --scenario, not both")
    if args.scenario:
        return _scenario_from_args(args)
    if not (args.gallery and args.probes and args.truth):
        parser.error("need --gallery, --probes and --truth (or --scenario)")
    gallery = read_features(_existing(parser, args.gallery, "gallery"))
    probes = read_features(_existing(parser, args.probes, "probes"))
    truth = read_truth_csv(_existing(parser, args.truth, "truth"))
    return gallery, probes, truth


def cmd_gen(parser, args) -> int:
    if not args.scenario:
        parser.error("gen requires --scenario")
    gallery, probes, truth = _scenario_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.format == "bin":
        write_features_binary(gallery, out / "gallery.fst")
        write_features_binary(probes, out / "probes.fst")
    else:
        write_features_csv(gallery, out / "gallery.csv")
        write_features_csv(probes, out / "probes.csv")
    write_truth_csv(truth, out / "truth.csv")
    print(
        f"wrote {len(gallery)} gallery / {len(probes)} probe samples "
        f"(dim={gallery.dim}) to {out}"
    )
    return 0


def cmd_sigma(parser, args) -> int:
    gallery = read_features(_existing(parser, args.gallery, "gallery"))
    metric = _build_metric(parser, args)
    probes = None
    if args.with_probes:
        if not args.probes:
            parser.error("--with-probes requires --probes")
        probes = read_features(_existing(parser, args.probes, "probes"))
    k_sigma = args.k_sigma or default_k_sigma(len(gallery))
    policy = resolve_policy(WITH_PROBES if args.with_probes else GALLERY_ONLY, probes)
    started = time.perf_counter()
    table = compute_sigma_table(gallery, metric, k_sigma, policy, n_threads=args.threads)
    offline_ms = (time.perf_counter() - started) * 1e3
    write_sigma_sidecar(table, args.out)
    print(f"offline_ms={offline_ms:.3f}")
    log.info("bandwidths for %d samples written to %s", len(table.gallery_sigmas), args.out)
    return 0


def cmd_rerank(parser, args) -> int:
    gallery = read_features(_existing(parser, args.gallery, "gallery"))
    probes = read_features(_existing(parser, args.probes, "probes"))
    metric = _build_metric(parser, args)
    method, mode = parse_method_token(args.method)
    if args.with_probes:
        mode = WITH_PROBES
    policy = resolve_policy(mode, probes)
    k_sigma = args.k_sigma

    table = None
    if method in DAKR_METHODS:
        if k_sigma is None:
            k_sigma = default_k_sigma(len(gallery))
        if args.sigma_table:
            record = read_sigma_sidecar(_existing(parser, args.sigma_table, "sigma table"))
            try:
                if args.k_sigma is not None and record["k_sigma"] != args.k_sigma:
                    raise StaleSigmaTable(
                        f"sidecar k_sigma={record['k_sigma']} != requested {args.k_sigma}"
                    )
                table = sigma_table_from_sidecar(record, gallery, metric, policy)
                k_sigma = table.k_sigma
            except StaleSigmaTable:
                if not args.recompute:
                    raise
                warnings.warn(
                    "sigma table is stale; recomputing (--recompute)",
                    RuntimeWarning,
                    stacklevel=1,
                )
                table = None

    rankings = rerank(
        method,
        probes,
        gallery,
        metric,
        k=args.k,
        k_sigma=k_sigma,
        policy=policy,
        table=table,
        n_threads=args.threads,
    )
    token = method + ("+" if policy.mode == WITH_PROBES else "")
    write_rankings_csv(rankings, token, args.out)
    log.info("wrote rankings for %d probes to %s", len(rankings), args.out)
    return 0


def cmd_eval(parser, args) -> int:
    gallery, probes, truth = _load_eval_data(parser, args)
    metric = _build_metric(parser, args)
    methods = [m.strip() for m in args.method.split(",") if m.strip()]
    if args.with_probes:
        methods = [m if m.endswith("+") else m + "+" for m in methods]
    report = evaluate_methods(
        gallery,
        probes,
        truth,
        methods,
        metric=metric,
        k=args.k,
        k_sigma=args.k_sigma,
        ranks=_int_list(args.ranks),
        n_threads=args.threads,
    )
    base = Path(args.out)
    write_json(report.to_json_dict(), base.with_suffix(".json"))
    write_csv_rows(
        report.csv_rows(),
        ["method", "k", "k_sigma", "rank", "cmc", "map"],
        base.with_suffix(".csv"),
    )
    write_json(report.timings_dict(), base.with_suffix(".timings.json"))
    for result in report.results:
        summary = " ".join(
            f"r{rank}={result.cmc[rank - 1]:.4f}" for rank in report.ranks
        )
        print(f"{result.method}: {summary} mAP={result.mean_ap:.4f}")
    return 0


def cmd_sweep(parser, args) -> int:
    metric = _build_metric(parser, args)
    methods = [m.strip() for m in args.method.split(",") if m.strip()]
    k_values = _int_list(args.k_values)
    ranks = tuple(_int_list(args.ranks))
    if args.scenario:
        trials = []
        for trial in range(args.trials):
            scenario_args = argparse.Namespace(**vars(args))
            scenario_args.seed = args.seed + trial
            trials.append(_scenario_from_args(scenario_args))
    else:
        gallery, probes, truth = _load_eval_data(parser, args)
        trials = [(gallery, probes, truth)]
    ranks, curves = k_sweep(
        methods, trials, k_values, metric=metric, ranks=ranks, n_threads=args.threads
    )
    payload = {
        "ranks": list(ranks),
        "k_values": k_values,
        "trials": len(trials),
        "gains": {
            method: {str(k): [float(g) for g in gains] for k, gains in curve.items()}
            for method, curve in curves.items()
        },
    }
    base = Path(args.out)
    write_json(payload, base.with_suffix(".json"))
    rows = [
        {
            "method": method,
            "k": k,
            "rank": rank,
            "gain": float(curves[method][k][i]),
        }
        for method in methods
        for k in k_values
        for i, rank in enumerate(ranks)
    ]
    write_csv_rows(rows, ["method", "k", "rank", "gain"], base.with_suffix(".csv"))
    print(f"swept {len(methods)} methods over k={k_values} on {len(trials)} trials")
    return 0


def _bench_one(method, gallery, probe_vectors, metric, k, k_sigma):
    """Offline cost plus per-probe online wall-clock (median).

    Every probe call goes through the library's per-probe API, so inverse
    neighbor scans pay their full online cost on each probe.
    """
    offset = int(gallery.ids.max()) + 1
    table = None
    offline_ms = 0.0
    if method in DAKR_METHODS:
        started = time.perf_counter()
        table = compute_sigma_table(gallery, metric, k_sigma)
        offline_ms = (time.perf_counter() - started) * 1e3

    def run(row):
        pid = offset + row
        vec = probe_vectors[row]
        if method == "knn":
            rank_by_distance(pid, vec, gallery, metric)
        elif method == "inn":
            rank_by_inn(pid, vec, gallery, metric, k)
        elif method == "rnn":
            rank_by_rnn(pid, vec, gallery, metric, k)
        elif method == "inv_dakr":
            inv_dakr_rank(pid, vec, gallery, metric, table)
        else:
            bi_dakr_rank(pid, vec, gallery, metric, table)

    run(0)  # warmup, excluded from timing
    samples = []
    for row in range(len(probe_vectors)):
        started = time.perf_counter()
        run(row)
        samples.append((time.perf_counter() - started) * 1e3)
    return offline_ms, float(np.median(samples))


def cmd_bench(parser, args) -> int:
    sizes = _int_list(args.sizes)
    methods = [m.strip() for m in args.method.split(",") if m.strip()]
    for method in methods:
        parse_method_token(method)
    rng = np.random.default_rng(args.seed)
    rows = []
    for n in sizes:
        gallery = FeatureSet(np.arange(n), rng.standard_normal((n, args.dim)))
        probe_vectors = rng.standard_normal((args.bench_probes, args.dim))
        metric = DistanceMetric.euclidean()
        k = args.k or max(1, round(0.01 * n))
        k_sigma = args.k_sigma or default_k_sigma(n)
        for method in methods:
            offline_ms, online_ms = _bench_one(
                method, gallery, probe_vectors, metric, k, k_sigma
            )
            rows.append(
                {
                    "method": method,
                    "n": n,
                    "dim": args.dim,
                    "offline_ms": f"{offline_ms:.6f}",
                    "online_ms_per_probe": f"{online_ms:.6f}",
                }
            )
            log.info(
                "bench %s n=%d offline=%.2fms online=%.4fms/probe",
                method,
                n,
                offline_ms,
                online_ms,
            )
    write_csv_rows(
        rows, ["method", "n", "dim", "offline_ms", "online_ms_per_probe"], args.out
    )
    print(f"benchmarked {len(methods)} methods at sizes {sizes}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dakr",
        description="Density-adaptive kernel re-ranking toolkit",
    )
    parser.add_argument("--version", action="version", version=f"dakr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="write a synthetic scenario to files")
    _add_scenario_flags(gen)
    gen.add_argument("--format", choices=["csv", "bin"], default="csv")
    gen.add_argument("--out", required=True, help="output directory")

    sigma = sub.add_parser("sigma", help="precompute the bandwidth sidecar")
    sigma.add_argument("--gallery", required=True)
    sigma.add_argument("--probes")
    sigma.add_argument("--with-probes", action="store_true")
    sigma.add_argument("--k-sigma", type=int)
    sigma.add_argument("--threads", type=int, default=os.cpu_count())
    _add_metric_flags(sigma)
    sigma.add_argument("--out", required=True)

    rrk = sub.add_parser("rerank", help="rank the gallery for every probe")
    rrk.add_argument("--gallery", required=True)
    rrk.add_argument("--probes", required=True)
    rrk.add_argument("--method", default="knn")
    rrk.add_argument("--k", type=int)
    rrk.add_argument("--k-sigma", type=int)
    rrk.add_argument("--with-probes", action="store_true")
    rrk.add_argument("--sigma-table")
    rrk.add_argument("--recompute", action="store_true",
                     help="recompute a stale sigma table instead of failing")
    rrk.add_argument("--threads", type=int, default=os.cpu_count())
    _add_metric_flags(rrk)
    rrk.add_argument("--out", required=True)

    ev = sub.add_parser("eval", help="CMC/mAP report for one or more methods")
    ev.add_argument("--gallery")
    ev.add_argument("--probes")
    ev.add_argument("--truth")
    _add_scenario_flags(ev)
    ev.add_argument("--method", default="knn")
    ev.add_argument("--k", type=int)
    ev.add_argument("--k-sigma", type=int)
    ev.add_argument("--with-probes", action="store_true")
    ev.add_argument("--ranks", default=",".join(str(r) for r in DEFAULT_RANKS))
    ev.add_argument("--threads", type=int, default=os.cpu_count())
    _add_metric_flags(ev)
    ev.add_argument("--out", required=True, help="report base path")

    sw = sub.add_parser("sweep", help="per-rank gain over the k-NN baseline vs k")
    sw.add_argument("--gallery")
    sw.add_argument("--probes")
    sw.add_argument("--truth")
    _add_scenario_flags(sw)
    sw.add_argument("--trials", type=int, default=10)
    sw.add_argument("--method", default="inv_dakr,bi_dakr")
    sw.add_argument("--k-values", default="1,2,5,10,20")
    sw.add_argument("--ranks", default=",".join(str(r) for r in DEFAULT_RANKS))
    sw.add_argument("--threads", type=int, default=os.cpu_count())
    _add_metric_flags(sw)
    sw.add_argument("--out", required=True, help="report base path")

    bench = sub.add_parser("bench", help="offline/online wall-clock table")
    bench.add_argument("--sizes", default="1000,2000,4000,8000")
    bench.add_argument("--dim", type=int, default=64)
    bench.add_argument("--method", default=",".join(_BENCH_METHODS))
    bench.add_argument("--k", type=int)
    bench.add_argument("--k-sigma", type=int)
    bench.add_argument("--bench-probes", type=int, default=5)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", required=True)

    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "gen": cmd_gen,
        "sigma": cmd_sigma,
        "rerank": cmd_rerank,
        "eval": cmd_eval,
        "sweep": cmd_sweep,
        "bench": cmd_bench,
    }
    try:
        return handlers[args.command](parser, args)
    except (FormatError, StaleSigmaTable, MissingTruth, OSError) as exc:
        print(f"dakr: error: {exc}", file=sys.stderr)
        return 3
    except DakrError as exc:
        print(f"dakr: internal error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
