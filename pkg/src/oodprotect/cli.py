"""Command-line interface.

Subcommands:
    metrics  compute SE/CR/CD reports for candidate OOD embedding files
    rank     order previously computed reports by protectiveness
    demo     run one of the bundled experiments (two-moon, ranking, fgs)

Exit codes: 0 success, 2 input or validation error, 3 I/O error. Reports
written with --out get a rendered PNG figure next to them unless --no-plot
is given. All randomness flows from --seed. The OODP_THREADS environment
variable caps internal parallelism.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .embeddings import (
    FormatError,
    ValidationError,
    equalize_sizes,
    load_embedding_set,
    save_embedding_set,
    subsample,
)
from .experiments import (
    run_fgs_experiment,
    run_ranking_experiment,
    run_two_moon_experiment,
)
from .gaps import DEFAULT_LAMBDA
from .metrics import (
    DEFAULT_EPSILON_REL,
    DEFAULT_K,
    MetricReport,
    metric_report,
    rank_candidates,
    reports_to_csv,
    reports_to_json,
)
from . import plots

DEFAULT_MAX_IN = 10000

RANK_CSV_HEADER = "rank,ood_name,score,rule,cr_percent,se,cd"


@dataclass(frozen=True)
class RunConfig:
    """Validated arguments of one CLI invocation."""

    subcommand: str
    inputs: tuple
    k: int = DEFAULT_K
    seed: int = 0
    epsilon_rel: float = DEFAULT_EPSILON_REL
    lam: float = DEFAULT_LAMBDA
    out: str | None = None
    format: str = "json"
    out_dir: str | None = None
    experiment: str | None = None
    normalize: bool = False
    max_in: int = DEFAULT_MAX_IN
    plot: bool = True
    epochs: int | None = None
    n: int | None = None

    def __post_init__(self):
        if self.format not in ("json", "csv"):
            raise ValueError(f"format must be json or csv, got {self.format!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not (0.0 <= self.epsilon_rel < 1.0):
            raise ValueError("epsilon-rel must lie in [0, 1)")
        if self.lam <= 0.0:
            raise ValueError("lambda must be positive")


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _check_inputs_exist(paths) -> None:
    for p in paths:
        if not Path(p).exists():
            raise FileNotFoundError(f"input file not found: {p}")


def _emit(cfg: RunConfig, content: str) -> Path | None:
    """Write content to --out atomically, or print it; returns the out path."""
    if cfg.out is None:
        print(content, end="" if content.endswith("\n") else "\n")
        return None
    out = Path(cfg.out)
    _atomic_write_text(out, content)
    print(f"wrote {out}")
    return out


def cmd_metrics(cfg: RunConfig) -> int:
    _check_inputs_exist(cfg.inputs)
    in_set = load_embedding_set(cfg.inputs[0])
    if cfg.max_in >= 1:
        in_set = subsample(in_set, cfg.max_in, cfg.seed)
    candidates = []
    for p in cfg.inputs[1:]:
        cand = load_embedding_set(p)
        if cand.predicted is None:
            raise ValidationError(f"candidate {cand.name!r} carries no predictions")
        candidates.append(cand)
    candidates = equalize_sizes(candidates, cfg.seed)
    reports = [
        metric_report(in_set, cand, cfg.k, normalize=cfg.normalize) for cand in candidates
    ]
    content = reports_to_json(reports) if cfg.format == "json" else reports_to_csv(reports)
    out = _emit(cfg, content)
    if out is not None and cfg.plot:
        fig = plots.plot_metric_reports(reports, out.with_suffix(".png"))
        print(f"wrote {fig}")
    return 0


def _load_reports(paths) -> list[MetricReport]:
    reports = []
    for p in paths:
        data = json.loads(Path(p).read_text(encoding="utf-8"))
        if isinstance(data, dict):
            data = [data]
        reports.extend(MetricReport.from_json_dict(d) for d in data)
    return reports


def cmd_rank(cfg: RunConfig) -> int:
    _check_inputs_exist(cfg.inputs)
    ranked = rank_candidates(_load_reports(cfg.inputs), cfg.epsilon_rel)
    if cfg.format == "json":
        content = json.dumps([rc.to_json_dict() for rc in ranked], indent=2)
    else:
        rows = [RANK_CSV_HEADER]
        for rc in ranked:
            r = rc.report
            rows.append(
                f"{rc.rank},{r.ood_name},{rc.score!r},{rc.rule},"
                f"{100.0 * r.cr!r},{r.se!r},{r.cd!r}"
            )
        content = "\n".join(rows) + "\n"
    out = _emit(cfg, content)
    if out is not None and cfg.plot:
        fig = plots.plot_ranking(ranked, out.with_suffix(".png"))
        print(f"wrote {fig}")
    print(ranked[0].report.ood_name)
    return 0


def _float_csv(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def _write_two_moon(cfg: RunConfig, out_dir: Path) -> None:
    kwargs = {}
    if cfg.n is not None:
        kwargs["n"] = cfg.n
    if cfg.epochs is not None:
        kwargs["epochs"] = cfg.epochs
    result = run_two_moon_experiment(cfg.seed, **kwargs)
    summary = result.summary()
    _atomic_write_text(out_dir / "summary.json", json.dumps(summary, indent=2) + "\n")
    lines = ["x0,x1,vanilla_conf,vanilla_pred,ring_pred,blob_pred"]
    for i in range(result.probes.shape[0]):
        lines.append(
            _float_csv(result.probes[i])
            + f",{result.vanilla_probe_conf[i]!r}"
            + f",{result.vanilla_probe_preds[i]},{result.ring_probe_preds[i]}"
            + f",{result.blob_probe_preds[i]}"
        )
    _atomic_write_text(out_dir / "probes.csv", "\n".join(lines) + "\n")
    save_embedding_set(
        result.data.to_embedding_set("two-moons-train"), out_dir / "train_data.csv", "csv"
    )
    if cfg.plot:
        rejection = result.data.num_classes
        plots.plot_decision_map(
            result.vanilla_net, result.data, out_dir / "vanilla.png",
            "vanilla MLP confidence", probes=result.probes,
        )
        plots.plot_decision_map(
            result.ring_net, result.data, out_dir / "augmented_ring.png",
            "augmented MLP, ring OOD (gray = rejected)",
            rejection_class=rejection, ood_points=result.ring_points, probes=result.probes,
        )
        plots.plot_decision_map(
            result.blob_net, result.data, out_dir / "augmented_blob.png",
            "augmented MLP, collapsed-blob OOD (gray = rejected)",
            rejection_class=rejection, ood_points=result.blob_points, probes=result.probes,
        )
    print(f"vanilla mean max softmax on far probes: {summary['vanilla_mean_max_softmax']:.4f}")
    print(f"ring-trained probe rejection: {summary['ring_probe_rejection']:.4f}")
    print(f"blob-trained probe rejection: {summary['blob_probe_rejection']:.4f}")


def _write_ranking(cfg: RunConfig, out_dir: Path) -> None:
    kwargs = {"k": cfg.k, "epsilon_rel": cfg.epsilon_rel, "lam": cfg.lam}
    if cfg.n is not None:
        kwargs["n"] = cfg.n
    if cfg.epochs is not None:
        kwargs["epochs"] = cfg.epochs
    result = run_ranking_experiment(cfg.seed, **kwargs)
    summary = result.summary()
    _atomic_write_text(out_dir / "summary.json", json.dumps(summary, indent=2) + "\n")
    _atomic_write_text(out_dir / "reports.json", reports_to_json(list(result.reports)))
    _atomic_write_text(out_dir / "reports.csv", reports_to_csv(list(result.reports)))
    _atomic_write_text(
        out_dir / "ranking.json",
        json.dumps([rc.to_json_dict() for rc in result.ranked], indent=2) + "\n",
    )
    lines = [
        "candidate,mean_unseen_rejection,gap_objective,in_gap,ood_gap_sum,"
        "in_train_loss,in_val_loss,ood_train_loss"
    ]
    for name, o in result.outcomes.items():
        lines.append(
            f"{name},{o.mean_unseen_rejection!r},{o.gap.objective!r},"
            f"{o.gap.in_gap!r},{o.gap.ood_gap_sum!r},{o.record.in_train_loss!r},"
            f"{o.record.in_val_loss!r},{o.record.ood_train_loss!r}"
        )
    _atomic_write_text(out_dir / "oracle.csv", "\n".join(lines) + "\n")
    if cfg.plot:
        plots.plot_metric_reports(
            list(result.reports), out_dir / "metrics.png", "candidate OOD sets"
        )
        plots.plot_ranking(list(result.ranked), out_dir / "ranking.png")
    print(f"metric ranking: {' > '.join(summary['metric_order'])}")
    print(f"oracle ranking: {' > '.join(summary['oracle_order'])}")
    print(f"gap-objective winner: {summary['gap_winner']}")
    print(f"top agreement: {summary['top_agreement']} (spearman {summary['spearman']:.2f})")
    print(f"winner: {summary['metric_winner']}")


def _write_fgs(cfg: RunConfig, out_dir: Path) -> None:
    kwargs = {"k": cfg.k}
    if cfg.n is not None:
        kwargs["n"] = cfg.n
    if cfg.epochs is not None:
        kwargs["epochs"] = cfg.epochs
    result = run_fgs_experiment(cfg.seed, **kwargs)
    summary = result.summary()
    _atomic_write_text(out_dir / "sweep.csv", result.sweep.to_csv())
    _atomic_write_text(out_dir / "summary.json", json.dumps(summary, indent=2) + "\n")
    if cfg.plot:
        plots.plot_sweep(result.sweep, out_dir / "sweep.png")
    rows = result.sweep.rows
    print(f"alphas: {[r.alpha for r in rows]}")
    print(f"vanilla error: {rows[0].vanilla_err:.3f} -> {rows[-1].vanilla_err:.3f}")
    print(f"augmented rejection: {rows[0].aug_rej:.3f} -> {rows[-1].aug_rej:.3f}")
    print(f"adversary CD: {rows[0].cd:.3f} -> {rows[-1].cd:.3f} "
          f"(training OOD CD {result.sweep.train_ood_cd:.3f})")


def cmd_demo(cfg: RunConfig) -> int:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    writers = {
        "two-moon": _write_two_moon,
        "ranking": _write_ranking,
        "fgs": _write_fgs,
    }
    writers[cfg.experiment](cfg, out_dir)
    print(f"artifacts in {out_dir}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oodprotect",
        description="Rank candidate OOD sets by feature-space protectiveness.",
        epilog="OODP_THREADS caps internal parallelism.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_metrics = sub.add_parser(
        "metrics", help="compute SE/CR/CD reports for candidate OOD embedding files"
    )
    p_metrics.add_argument("in_path", help="in-distribution embedding file (csv or binary)")
    p_metrics.add_argument("ood_paths", nargs="+", help="candidate OOD embedding files")
    p_metrics.add_argument("--k", type=int, default=DEFAULT_K, help="neighbors per OOD point")
    p_metrics.add_argument("--seed", type=int, default=0)
    p_metrics.add_argument(
        "--max-in", type=int, default=DEFAULT_MAX_IN,
        help="subsample the in-distribution set down to this many rows",
    )
    p_metrics.add_argument("--normalize", action="store_true",
                           help="L2-normalize feature vectors before distances")
    p_metrics.add_argument("--format", choices=("json", "csv"), default="json")
    p_metrics.add_argument("--out", default=None)
    p_metrics.add_argument("--no-plot", action="store_true")

    p_rank = sub.add_parser("rank", help="order metric reports by protectiveness")
    p_rank.add_argument("report_paths", nargs="+", help="JSON report files from 'metrics'")
    p_rank.add_argument("--epsilon-rel", type=float, default=DEFAULT_EPSILON_REL,
                        help="relative band for declaring SE/CR ties")
    p_rank.add_argument("--format", choices=("json", "csv"), default="json")
    p_rank.add_argument("--out", default=None)
    p_rank.add_argument("--no-plot", action="store_true")

    p_demo = sub.add_parser("demo", help="run a bundled experiment")
    p_demo.add_argument("experiment", choices=("two-moon", "ranking", "fgs"))
    p_demo.add_argument("--seed", type=int, default=0)
    p_demo.add_argument("--out-dir", default=None,
                        help="artifact directory (default oodp-demo-<experiment>)")
    p_demo.add_argument("--k", type=int, default=DEFAULT_K)
    p_demo.add_argument("--epsilon-rel", type=float, default=DEFAULT_EPSILON_REL)
    p_demo.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    p_demo.add_argument("--n", type=int, default=None, help="training set size override")
    p_demo.add_argument("--epochs", type=int, default=None, help="training epochs override")
    p_demo.add_argument("--no-plot", action="store_true")
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    common = {
        "subcommand": args.subcommand,
        "seed": getattr(args, "seed", 0),
        "k": getattr(args, "k", DEFAULT_K),
        "epsilon_rel": getattr(args, "epsilon_rel", DEFAULT_EPSILON_REL),
        "lam": getattr(args, "lam", DEFAULT_LAMBDA),
        "format": getattr(args, "format", "json"),
        "out": getattr(args, "out", None),
        "plot": not getattr(args, "no_plot", False),
        "epochs": getattr(args, "epochs", None),
        "n": getattr(args, "n", None),
    }
    if args.subcommand == "metrics":
        return RunConfig(
            inputs=(args.in_path, *args.ood_paths),
            normalize=args.normalize,
            max_in=args.max_in,
            **common,
        )
    if args.subcommand == "rank":
        return RunConfig(inputs=tuple(args.report_paths), **common)
    out_dir = args.out_dir or f"oodp-demo-{args.experiment}"
    return RunConfig(inputs=(), out_dir=out_dir, experiment=args.experiment, **common)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"metrics": cmd_metrics, "rank": cmd_rank, "demo": cmd_demo}
    try:
        cfg = _config_from_args(args)
        return handlers[cfg.subcommand](cfg)
    except (FormatError, ValidationError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
