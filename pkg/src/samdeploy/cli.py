"""Command-line front end for reproducible batch runs.

Subcommands: ``validate`` checks a SAM file's account balance, ``deploy``
builds an economy from scratch through the deployment phase, ``run`` starts
a fresh simulation or continues a snapshot, ``compare`` reports how well the
recorded flows reproduce the table, and ``report`` writes the full set of
delimited outputs plus rendered figures for an existing snapshot.

Every output directory starts with a manifest naming the run id, the input
checksum and every effective config value, so a result can always be traced
back to its exact inputs.  Identical inputs produce byte-identical delimited
outputs; the manifest timestamp sits on its own line so a textual diff of
two equal runs differs in exactly that line.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from datetime import datetime, timezone
from pathlib import Path

from samdeploy import __version__
from samdeploy.accounting import (
    compare_sam,
    computed_sam,
    emit_ledger_cells,
    emit_sam_matrix,
    emit_timeseries,
    emit_wealth_histogram,
    major_cells,
    wealth_histogram,
)
from samdeploy.engine import (
    SimConfig,
    SnapshotError,
    World,
    household_wealth,
    init_world,
    load_snapshot,
    run,
    save_snapshot,
    world_hash,
)
from samdeploy.sam import (
    SamFormatError,
    parse_sam,
    serialize_sam,
    validate_balance,
)

USAGE_ERROR = 2


class CliError(Exception):
    """Input problem with a one-line diagnostic; exits with code 1."""


# ---------------------------------------------------------------------------
# config assembly
# ---------------------------------------------------------------------------


def read_config_file(path: Path) -> dict:
    """Parse a flat ``key = value`` config file.  Blank lines and ``#``
    comments are ignored."""
    mapping: dict[str, str] = {}
    try:
        text = path.read_text()
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        mapping[key.strip()] = value.strip()
    return mapping


_FLAG_FIELDS = (
    ("agents", "n_sim_agents"),
    ("seed", "seed"),
    ("deploy_months", "deployment_months"),
)


def build_config(args) -> SimConfig:
    """Defaults, overridden by the config file, overridden by flags."""
    mapping: dict = {}
    if getattr(args, "config", None):
        mapping.update(read_config_file(Path(args.config)))
    for flag, field in _FLAG_FIELDS:
        value = getattr(args, flag, None)
        if value is not None:
            mapping[field] = value
    try:
        return SimConfig.from_mapping(mapping)
    except ValueError as exc:
        raise CliError(str(exc)) from None


# ---------------------------------------------------------------------------
# inputs and outputs
# ---------------------------------------------------------------------------


def load_sam_file(path_str: str):
    path = Path(path_str)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CliError(f"cannot read SAM {path}: {exc.strerror}") from None
    try:
        return parse_sam(text), hashlib.sha256(text.encode()).hexdigest()
    except SamFormatError as exc:
        raise CliError(f"{path}: {exc}") from None


def load_snapshot_file(path_str: str) -> World:
    try:
        return load_snapshot(path_str)
    except SnapshotError as exc:
        raise CliError(str(exc)) from None


def run_id_for(sam_sha: str, cfg: SimConfig, months: int) -> str:
    key = f"{sam_sha}:{sorted(cfg.to_mapping().items())}:{months}"
    return hashlib.sha256(key.encode()).hexdigest()[:16]


def write_manifest(out: Path, run_id: str, sam_sha: str, cfg: SimConfig,
                   months_run: int, world: World) -> None:
    lines = [
        f"run_id = {run_id}",
        f"samdeploy_version = {__version__}",
        f"sam_sha256 = {sam_sha}",
        f"months_run = {months_run}",
        f"final_month = {world.month}",
        f"phase = {world.phase}",
        f"budget_factor = {world.beta!r}",
        f"ledger_hash = {world.ledger.chain_hash}",
        f"world_hash = {world_hash(world)}",
    ]
    for key, value in sorted(cfg.to_mapping().items()):
        lines.append(f"config.{key} = {value}")
    # the timestamp is the only nondeterministic field; keeping it last and
    # alone on its line lets byte comparisons ignore exactly one line
    lines.append(f"timestamp = {datetime.now(timezone.utc).isoformat()}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")


def write_outputs(world: World, out: Path, window: int) -> None:
    sam = world.sam
    emit_timeseries(world.series, out / "timeseries.csv",
                    [sam.accounts[k] for k in sam.sectors])
    end = world.ledger.closed_months
    window = min(window, end)
    computed = computed_sam(world.ledger, end, window)
    emit_sam_matrix(computed.matrix, sam.accounts, out / "sam_computed.csv")
    pct = compare_sam(computed, sam)
    emit_sam_matrix(pct.percent, sam.accounts, out / "sam_pct.csv")
    wealth = [household_wealth(world, h) for h in world.households]
    emit_wealth_histogram(wealth_histogram(wealth), out / "wealth_hist.csv")
    emit_ledger_cells(world.ledger, sam.accounts, out / "ledger_cells.csv")


def prepare_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------


def render_figures(world: World, out: Path, window: int) -> list[Path]:
    """Diagnostic plots next to the delimited output: the unemployment and
    consumption paths, the reproduction heatmap, and the wealth histogram."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    sam = world.sam
    written: list[Path] = []

    months = [r.month for r in world.series]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    ax1.plot(months, [r.unemployment_pct for r in world.series], lw=0.8)
    ax1.set_ylabel("unemployment [%]")
    ax2.plot(months, [r.hh_cons for r in world.series], lw=0.8,
             label="households")
    ax2.plot(months, [r.gov_cons for r in world.series], lw=0.8,
             label="government")
    ax2.plot(months, [r.ext_cons for r in world.series], lw=0.8,
             label="external")
    ax2.set_xlabel("month")
    ax2.set_ylabel("consumption [model units]")
    ax2.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    path = out / "timeseries.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    end = world.ledger.closed_months
    pct = compare_sam(computed_sam(world.ledger, end, min(window, end)), sam)
    fig, ax = plt.subplots(figsize=(7.5, 6.5))
    data = np.ma.masked_invalid(pct.percent)
    cmap = plt.get_cmap("RdYlGn").copy()
    cmap.set_bad(color="#dddddd")
    im = ax.imshow(data, cmap=cmap, vmin=50.0, vmax=150.0)
    ax.set_xticks(range(sam.n_accounts))
    ax.set_xticklabels(sam.accounts, rotation=90, fontsize=7)
    ax.set_yticks(range(sam.n_accounts))
    ax.set_yticklabels(sam.accounts, fontsize=7)
    fig.colorbar(im, ax=ax, label="recorded / target [%]")
    fig.tight_layout()
    path = out / "sam_pct.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    wealth = [household_wealth(world, h) for h in world.households]
    hist = wealth_histogram(wealth)
    fig, ax = plt.subplots(figsize=(7, 5))
    widths = np.diff(hist.bin_edges)
    ax.bar(hist.bin_edges[:-1], hist.counts, width=widths, align="edge",
           edgecolor="black", lw=0.4)
    ax.set_xlabel("household wealth [model units]")
    ax.set_ylabel("households")
    ax.set_title(f"gini {hist.gini:.3f}, skewness {hist.skewness:.2f}")
    fig.tight_layout()
    path = out / "wealth_hist.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)
    return written


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    sam, _ = load_sam_file(args.sam)
    report = validate_balance(sam)
    print(f"{sam.name}: {sam.n_accounts} accounts, "
          f"{len(sam.sectors)} producing sectors")
    for k, name in enumerate(report.accounts):
        print(f"  {name:<20} row {report.row_totals[k]:>14.2f} "
              f"col {report.col_totals[k]:>14.2f} "
              f"rel {report.rel_imbalance[k]:.2e}")
    worst_name, worst = report.worst()
    print(f"max relative imbalance {worst:.2e} ({worst_name}): "
          + ("balanced" if report.passed else "NOT balanced"))
    return 0 if report.passed else 1


def cmd_deploy(args) -> int:
    sam, sam_sha = load_sam_file(args.sam)
    cfg = build_config(args)
    months = args.months if args.months is not None else cfg.deployment_months
    cfg = SimConfig.from_mapping({**cfg.to_mapping(),
                                  "deployment_months": months,
                                  "total_months": months})
    out = prepare_out(args)
    write_manifest_placeholder = run_id_for(sam_sha, cfg, months)
    world = run(init_world(sam, cfg), months)
    write_outputs(world, out, args.window)
    save_snapshot(world, out / "final.snap")
    write_manifest(out, write_manifest_placeholder, sam_sha, cfg, months, world)
    print(f"deployed {months} months, budget factor {world.beta:.4f}, "
          f"outputs in {out}")
    return 0


def cmd_run(args) -> int:
    if (args.sam is None) == (args.snapshot is None):
        raise CliError("run needs exactly one of --sam or --snapshot")
    out = prepare_out(args)
    if args.sam is not None:
        sam, sam_sha = load_sam_file(args.sam)
        cfg = build_config(args)
        months = args.months if args.months is not None else cfg.total_months
        world = init_world(sam, cfg)
    else:
        world = load_snapshot_file(args.snapshot)
        for flag, _ in _FLAG_FIELDS:
            if getattr(args, flag, None) is not None or args.config:
                raise CliError("config and agent flags apply to fresh runs "
                               "only; a snapshot fixes them")
        cfg = world.config
        sam_sha = hashlib.sha256(serialize_sam(world.sam).encode()).hexdigest()
        if args.months is None:
            raise CliError("run --snapshot needs --months")
        months = args.months
    run(world, months)
    write_outputs(world, out, args.window)
    save_snapshot(world, out / "final.snap")
    write_manifest(out, run_id_for(sam_sha, cfg, world.month), sam_sha, cfg,
                   months, world)
    print(f"ran {months} months to month {world.month}, outputs in {out}")
    return 0


def cmd_compare(args) -> int:
    world = load_snapshot_file(args.snapshot)
    sam = world.sam
    end = world.ledger.closed_months
    if end == 0:
        raise CliError("snapshot has no closed months to compare")
    window = min(args.window, end)
    computed = computed_sam(world.ledger, end, window)
    pct = compare_sam(computed, sam)
    majors = major_cells(sam)
    worst_gap = 0.0
    for i, j in majors:
        gap = abs(pct.percent[i, j] - 100.0)
        worst_gap = max(worst_gap, gap)
        print(f"  {sam.accounts[i]:<20} <- {sam.accounts[j]:<20} "
              f"{pct.percent[i, j]:7.1f}%")
    print(f"{len(majors)} major cells (>=0.5% of output), month window "
          f"{end - window + 1}..{end}, worst deviation {worst_gap:.1f}%")
    if args.out:
        out = prepare_out(args)
        emit_sam_matrix(computed.matrix, sam.accounts, out / "sam_computed.csv")
        emit_sam_matrix(pct.percent, sam.accounts, out / "sam_pct.csv")
    return 0


def cmd_report(args) -> int:
    world = load_snapshot_file(args.snapshot)
    if world.ledger.closed_months == 0:
        raise CliError("snapshot has no closed months to report")
    out = prepare_out(args)
    write_outputs(world, out, args.window)
    figures = render_figures(world, out, args.window)
    names = ", ".join(p.name for p in figures)
    print(f"report in {out}: timeseries.csv, sam_computed.csv, sam_pct.csv, "
          f"wealth_hist.csv, ledger_cells.csv, {names}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--agents", type=int, metavar="N",
                   help=f"simulated households (default "
                        f"{SimConfig.n_sim_agents})")
    p.add_argument("--seed", type=int, metavar="N",
                   help=f"RNG seed (default {SimConfig.seed})")
    p.add_argument("--deploy-months", dest="deploy_months", type=int,
                   metavar="N",
                   help=f"months of forced-budget deployment (default "
                        f"{SimConfig.deployment_months})")


def _defaults_epilog() -> str:
    pairs = sorted(SimConfig().to_mapping().items())
    lines = ["config file keys and defaults:"]
    lines += [f"  {k} = {v}" for k, v in pairs]
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="samdeploy",
        description="Deploy an agent economy from a social accounting "
                    "matrix and evolve it month by month.",
    )
    parser.add_argument("--version", action="version",
                        version=f"samdeploy {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a SAM file's account balance",
                       description="Parse a SAM file and verify that every "
                                   "account's receipts equal its spending.")
    p.add_argument("--sam", required=True, help="SAM file path")
    p.set_defaults(func=cmd_validate)

    common = dict(formatter_class=argparse.RawDescriptionHelpFormatter,
                  epilog=_defaults_epilog())

    p = sub.add_parser("deploy", help="build an economy through the "
                       "deployment phase and snapshot it",
                       description="Run the forced-budget deployment from "
                                   "an empty economy and save the final "
                                   "state.", **common)
    p.add_argument("--sam", required=True, help="SAM file path")
    p.add_argument("--months", type=int, metavar="N",
                   help="deployment length in months (default from config)")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--window", type=int, default=12, metavar="N",
                   help="trailing months aggregated for the comparison "
                        "outputs (default 12)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_deploy)

    p = sub.add_parser("run", help="run a fresh simulation or continue a "
                       "snapshot",
                       description="Simulate months either from a SAM file "
                                   "(fresh world) or from a snapshot "
                                   "(continuation).", **common)
    p.add_argument("--sam", help="SAM file path (fresh run)")
    p.add_argument("--snapshot", help="snapshot path (continuation)")
    p.add_argument("--months", type=int, metavar="N",
                   help="months to simulate")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--window", type=int, default=12, metavar="N",
                   help="trailing months aggregated for the comparison "
                        "outputs (default 12)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="compare recorded flows against the "
                       "table",
                       description="Print every major cell of the recorded "
                                   "flow matrix as a percentage of its "
                                   "target.")
    p.add_argument("--snapshot", required=True, help="snapshot path")
    p.add_argument("--window", type=int, default=12, metavar="N")
    p.add_argument("--out", metavar="DIR",
                   help="also write sam_computed.csv and sam_pct.csv here")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="write delimited outputs and figures "
                       "for a snapshot",
                       description="Emit the full delimited output set and "
                                   "rendered figures for an existing "
                                   "snapshot.")
    p.add_argument("--snapshot", required=True, help="snapshot path")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--window", type=int, default=12, metavar="N")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"samdeploy: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
