import argparse
import logging
import sys
from pathlib import Path

from config import ACCEPTANCE_SEED
from lab.acceptance import run_acceptance
from lab.reports import RunManifest, write_csv, write_json
from lab.runs import Outcome, run_plan
from model.errors import LabError
from model.plans import COMMANDS, load_plan


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sieve-lab",
        description="Nested occupancy, perturbed random walks and renewal bounds: simulations and checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment from a JSON config")
        p.add_argument("--config", required=True, help="JSON run config")
        _common(p)
    p = sub.add_parser("acceptance", help="run the desk-scale acceptance suite")
    _common(p)
    p.add_argument("--only", type=int, nargs="+", help="criterion numbers to run (default: all)")
    p.add_argument("--mu-scale", type=float, default=1.0,
                   help="multiply the weak-law mean by this factor (sensitivity smoke test)")
    return parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default="out", help="output directory (created if missing)")
    p.add_argument("--seed", type=int, help="master seed, overrides the config")
    p.add_argument("--threads", type=int, default=1, help="worker processes for replicate pools")
    p.add_argument("-v", "--verbose", action="count", default=0)


def write_outcome(outcome: Outcome, out_dir: Path, manifest: RunManifest) -> None:
    cmd = outcome.command
    for name, (header, rows) in outcome.tables.items():
        manifest.add_output(f"{cmd}_{name}", write_csv(out_dir / f"{cmd}_{name}.csv", header, rows))
    for name, grid in outcome.grids.items():
        manifest.add_output(f"grid_{name}", write_csv(out_dir / f"grid_{name}.csv", ["t", "value"], grid.to_rows()))
    manifest.add_output(f"{cmd}_report", write_json(out_dir / f"{cmd}_report.json", outcome.report))
    if outcome.passed is not None:
        manifest.results[cmd] = bool(outcome.passed)


def run(config: str, command: str, out_dir: str, seed: int | None = None, threads: int = 1) -> RunManifest:
    plan = load_plan(config, command)
    if seed is not None:
        plan = plan.with_seed(seed)
    out = Path(out_dir)
    manifest = RunManifest(command, plan.effective_config(), plan.seed)
    outcome = run_plan(plan, threads)
    write_outcome(outcome, out, manifest)
    manifest.seal(out)
    return manifest


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "acceptance":
            seed = ACCEPTANCE_SEED if args.seed is None else args.seed
            manifest = run_acceptance(args.out, seed, args.threads, args.only, args.mu_scale)
        else:
            manifest = run(args.config, args.command, args.out, args.seed, args.threads)
    except LabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name, ok in manifest.results.items():
        print(f"{name}: {'pass' if ok else 'FAIL'}")
    print(f"manifest: {Path(args.out) / 'manifest.json'}")
    return 0 if manifest.passed else 1


if __name__ == "__main__":
    sys.exit(main())
