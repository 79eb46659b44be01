"""Command-line front end: ``run`` one training job, ``ablate`` a variant
grid, ``report`` tables and static plots from finished run directories.
"""

from __future__ import annotations

import argparse
import sys
from collections import defaultdict
from pathlib import Path

from .config import parse_config
from .evaluate import AblationRow, AblationTable
from .experiment import read_metrics, run_ablation, run_experiment


def _add_set_arg(parser):
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override a config value (repeatable)",
    )


def _load_config(args):
    overrides = list(args.set)
    if getattr(args, "out", None):
        overrides.append(f"run.output={args.out}")
    return parse_config(args.config, overrides)


def cmd_run(args) -> int:
    config = _load_config(args)
    run_dir = run_experiment(
        config,
        seed=args.seed,
        variant=args.variant,
    )
    print(run_dir)
    return 0


def cmd_ablate(args) -> int:
    config = _load_config(args)
    variants = args.variants.split(",") if args.variants else ["baseline", "full"]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else list(config.seeds)
    table, run_dirs = run_ablation(config, variants, seeds)
    out_root = Path(config.out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "ablation.md").write_text(table.to_markdown(), encoding="utf-8")
    (out_root / "ablation.csv").write_text(table.to_csv(), encoding="utf-8")
    sys.stdout.write(table.to_markdown())
    for d in run_dirs:
        print(d)
    return 0


def _variant_of(run_dir: Path) -> str:
    resolved = run_dir / "config.resolved"
    if resolved.exists():
        for line in resolved.read_text(encoding="utf-8").splitlines():
            if line.strip().startswith("variant"):
                return line.split("=", 1)[1].strip()
    return run_dir.name.rsplit("_", 2)[0]


def build_report_table(run_dirs) -> tuple[AblationTable, list[tuple[Path, list[dict]]]]:
    """Final-epoch accuracy per variant from finished run directories."""
    by_variant: dict[str, list[float]] = defaultdict(list)
    loaded = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        try:
            records = read_metrics(run_dir)
        except OSError as exc:
            print(f"warning: skipping {run_dir}: {exc}", file=sys.stderr)
            continue
        if not records:
            print(f"warning: skipping {run_dir}: empty metrics", file=sys.stderr)
            continue
        loaded.append((run_dir, records))
        by_variant[_variant_of(run_dir)].append(float(records[-1]["target_acc"]))
    rows = [AblationRow(variant=v, accuracies=a) for v, a in sorted(by_variant.items())]
    return AblationTable(rows=rows, seeds=[]), loaded


def _plot_curves(loaded, out_dir: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    def curve(records, key):
        pairs = [(r["epoch"], r[key]) for r in records if r.get(key) is not None]
        return [p[0] for p in pairs], [p[1] for p in pairs]

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for run_dir, records in loaded:
        ax.plot(*curve(records, "loss_total"), label=run_dir.name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("total loss")
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(out_dir / "loss_curves.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for run_dir, records in loaded:
        for bucket, style in (("easy", "-"), ("hard", "--"), ("outlier", ":")):
            xs, ys = curve(records, f"bucket_acc_{bucket}")
            if xs:
                ax.plot(xs, ys, style, label=f"{run_dir.name}:{bucket}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("bucket accuracy")
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(out_dir / "bucket_accuracy.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for run_dir, records in loaded:
        ax.plot(*curve(records, "matching_acc"), label=run_dir.name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("matching accuracy")
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(out_dir / "matching_accuracy.png", dpi=120)
    plt.close(fig)


def cmd_report(args) -> int:
    table, loaded = build_report_table(args.run_dirs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = table.to_markdown() if args.format == "md" else table.to_csv()
    (out_dir / f"ablation.{args.format}").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    if loaded:
        _plot_curves(loaded, out_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixadapt",
        description="confidence-guided mixing trainer for few-shot domain adaptation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one training run")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--variant", default=None)
    p_run.add_argument("--out", default=None, help="output root override")
    _add_set_arg(p_run)
    p_run.set_defaults(func=cmd_run)

    p_abl = sub.add_parser("ablate", help="run a variant x seed grid")
    p_abl.add_argument("--config", required=True)
    p_abl.add_argument("--variants", default=None, help="comma-separated variant list")
    p_abl.add_argument("--seeds", default=None, help="comma-separated seed list")
    p_abl.add_argument("--out", default=None, help="output root override")
    _add_set_arg(p_abl)
    p_abl.set_defaults(func=cmd_ablate)

    p_rep = sub.add_parser("report", help="tabulate and plot finished runs")
    p_rep.add_argument("run_dirs", nargs="+")
    p_rep.add_argument("--format", choices=("md", "csv"), default="md")
    p_rep.add_argument("--out", default="report")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
