"""Command-line entry point: gen, train, eval, ablate, navsim, report."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import subprocess
import sys
import time
from dataclasses import asdict, replace
from importlib import metadata
from pathlib import Path

from .. import dynabench, navsim
from ..mdp import Wiring
from ..policy import PolicyConfig, PolicyParams
from ..ppo import FIXED_PSO, evaluate_fixed, evaluate_policy, meta_train, new_policy
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ABLATIONS, ConfigError, RunConfig, apply_ablation, load_config, with_variant
from .report import MissingCell, ResultRow, assign_ranks, rank_report, read_csvs, write_curve, write_rows, write_table

log = logging.getLogger("metado")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_CONFIG = 4
EXIT_CHECKPOINT = 5
EXIT_DATA = 6

BASELINES = {"fixed-pso": FIXED_PSO}


class MissingInput(FileNotFoundError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_id() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True, text=True,
                             timeout=5, cwd=Path(__file__).resolve().parent)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    try:
        return "artifact-" + metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _existing(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        raise MissingInput(f"no such file: {p}")
    return p


def _config(args) -> RunConfig:
    cfg = load_config(_existing(args.config)) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = cfg.resolved_output()
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, command: str, cfg: RunConfig, argv: list[str], extra: dict | None = None) -> Path:
    path = out / f"manifest-{command}.json"
    body = {"command": command, "argv": argv, "seed": cfg.seed, "build": build_id(), "config": cfg.to_dict(),
            "created": time.strftime("%Y-%m-%dT%H:%M:%S")}
    body.update(extra or {})
    path.write_text(json.dumps(body, indent=1))
    return path


def _policy_config(cfg: RunConfig, wiring: Wiring) -> PolicyConfig:
    return PolicyConfig(d_model=cfg.d_model, n_heads=cfg.n_heads, d_ff=cfg.d_ff, n_out=wiring.n_out)


def _suite(path, cfg: RunConfig, split: str) -> list[dynabench.DynamicInstance]:
    if path is not None:
        train, test = dynabench.read_suite(_existing(path))
    else:
        train, test = _make(cfg)
    return train if split == "train" else test


def _make(cfg: RunConfig):
    s = cfg.suite
    return dynabench.make_suite(cfg.seed, dim=s.dim, fe_max=s.fe_max, period_fe=s.period_fe,
                                n_train=s.n_train, n_test=s.n_test)


def _train(cfg: RunConfig, train_set, wiring: Wiring) -> tuple[PolicyParams, list[dict]]:
    params = new_policy(wiring, cfg.seed, _policy_config(cfg, wiring))
    return meta_train(params, train_set, cfg.train, cfg.seed, wiring)


def _eval_rows(test_set, runs: int, seed: int, algorithm: str, params: PolicyParams | None, wiring: Wiring,
               cfg: RunConfig, hyper=FIXED_PSO) -> list[ResultRow]:
    rows = []
    for inst in test_set:
        for run in range(runs):
            rseed = seed * 1000 + run
            if params is None:
                e_off, rp, _ = evaluate_fixed(inst, rseed, hyper, cfg.train.pop_size, cfg.train.follow_factor)
            else:
                e_off, rp, _ = evaluate_policy(params, inst, rseed, wiring, cfg.train.pop_size, cfg.train.bounds,
                                               cfg.train.follow_factor)
            e_rand = dynabench.random_baseline(inst, rseed)
            rows.append(ResultRow(inst.id, algorithm, run, rseed, e_off, e_rand, rp))
    return rows


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args, cfg: RunConfig, out: Path) -> dict:
    train, test = _make(cfg)
    dynabench.write_suite(out / "suite.json", train, test, cfg.seed)
    scen = [navsim.make_scenario(c, cfg.seed + e) for c in range(1, 7) for e in range(cfg.episodes)]
    navsim.write_scenarios(out / "scenarios.json", scen)
    print(f"wrote {len(train)} train / {len(test)} test instances and {len(scen)} scenarios to {out}")
    return {"files": ["suite.json", "scenarios.json"]}


def cmd_train(args, cfg: RunConfig, out: Path) -> dict:
    wiring = apply_ablation(cfg)
    train_set = _suite(args.suite, cfg, "train")
    params, curve = _train(cfg, train_set, wiring)
    ckpt = out / (args.name + ".mdo1")
    save_checkpoint(params, ckpt)
    write_curve(out / (args.name + "-curve.csv"), curve)
    print(f"checkpoint {ckpt}; {len(curve)} episodes")
    return {"checkpoint": str(ckpt), "wiring": asdict(wiring)}


def cmd_eval(args, cfg: RunConfig, out: Path) -> dict:
    test_set = _suite(args.suite, cfg, "test")
    runs = args.runs or cfg.runs
    if (args.checkpoint is None) == (args.baseline is None):
        raise ConfigError("eval needs exactly one of --checkpoint or --baseline")
    wiring = apply_ablation(cfg)
    if args.baseline is not None:
        rows = _eval_rows(test_set, runs, cfg.seed, args.baseline, None, wiring, cfg, BASELINES[args.baseline])
    else:
        params = load_checkpoint(_existing(args.checkpoint), cfg.n_heads)
        if params.config.n_out != wiring.n_out:
            raise ConfigError("checkpoint head width does not match the configured action wiring")
        rows = _eval_rows(test_set, runs, cfg.seed, args.algorithm, params, wiring, cfg)
    assign_ranks(rows)
    path = out / f"results-{rows[0].algorithm}.csv"
    write_rows(path, rows)
    print(f"{len(rows)} rows -> {path}")
    return {"results": str(path)}


def cmd_ablate(args, cfg: RunConfig, out: Path) -> dict:
    variants = [args.variant] if args.variant else ["full", *ABLATIONS]
    train_set = _suite(args.suite, cfg, "train")
    test_set = _suite(args.suite, cfg, "test")
    runs = args.runs or cfg.runs
    rows = []
    for v in variants:
        vcfg = cfg if v == "full" else with_variant(cfg, v)
        name = "full" if v == "full" else vcfg.ablations[0]
        wiring = apply_ablation(vcfg)
        params, curve = _train(vcfg, train_set, wiring)
        save_checkpoint(params, out / f"{name}.mdo1")
        write_curve(out / f"{name}-curve.csv", curve)
        rows.extend(_eval_rows(test_set, runs, cfg.seed, name, params, wiring, vcfg))
        print(f"variant {name} done")
    assign_ranks(rows)
    write_rows(out / "ablation.csv", rows)
    table = rank_report(rows)
    write_table(out / "ablation-ranks.csv", table)
    print(table.format())
    return {"variants": variants}


def cmd_navsim(args, cfg: RunConfig, out: Path) -> dict:
    if args.scenarios:
        scenarios = navsim.read_scenarios(_existing(args.scenarios))
    else:
        scenarios = [navsim.make_scenario(c, cfg.seed + e) for c in args.cases for e in range(cfg.episodes)]
    optimizers = [navsim.NavOptimizer()]
    if args.checkpoint:
        params = load_checkpoint(_existing(args.checkpoint), cfg.n_heads)
        wiring = apply_ablation(cfg)
        optimizers.append(navsim.NavOptimizer(params, wiring, cfg.train.bounds))
    path = out / "navsim.csv"
    summary = []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case_id", "seed", "algorithm", "success", "d_target", "t_step"])
        for opt in optimizers:
            by_case: dict[int, list] = {}
            for sc in scenarios:
                res = navsim.run_episode(sc, opt)
                by_case.setdefault(sc.case_id, []).append(res)
                w.writerow([sc.case_id, sc.seed, opt.name, int(res.success), res.d_target, res.t_step])
                if args.traces:
                    navsim.write_frame_trace(out / f"trace-{opt.name}-c{sc.case_id}-s{sc.seed}.csv", res)
            for case, results in sorted(by_case.items()):
                sr, d, t = navsim.aggregate(results)
                summary.append({"case_id": case, "algorithm": opt.name, "sr": sr, "d_target": d, "t_step": t})
                print(f"case {case} {opt.name:10s} SR={sr:.2f} D={d:.2f} T={t:.1f}")
    with open(out / "navsim-summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["case_id", "algorithm", "sr", "d_target", "t_step"])
        w.writeheader()
        w.writerows(summary)
    return {"results": str(path)}


def cmd_report(args, cfg: RunConfig, out: Path) -> dict:
    rows = read_csvs(_existing(p) for p in args.inputs)
    table = rank_report(rows)
    write_table(out / "rank-table.csv", table)
    print(table.format())
    return {"inputs": args.inputs}


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "navsim": cmd_navsim, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (default: $METADO_OUTPUT_DIR or ./metado_out)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="metado", description="Meta-learned hyper-parameter control for NBNC-PSO.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen", parents=[common], help="write train/test suites and navigation scenarios")
    t = sub.add_parser("train", parents=[common], help="meta-train a policy")
    t.add_argument("--suite", help="suite JSON from gen (default: generate from config)")
    t.add_argument("--name", default="policy")
    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint or a baseline")
    e.add_argument("--suite", help="suite JSON from gen")
    e.add_argument("--checkpoint")
    e.add_argument("--baseline", choices=sorted(BASELINES))
    e.add_argument("--algorithm", default="meta")
    e.add_argument("--runs", type=int)
    a = sub.add_parser("ablate", parents=[common], help="train and evaluate ablation variants")
    a.add_argument("--variant", help="one variant (default: full system plus all six)")
    a.add_argument("--suite", help="suite JSON holding both splits")
    a.add_argument("--runs", type=int)
    n = sub.add_parser("navsim", parents=[common], help="moving-obstacle navigation cases")
    n.add_argument("--checkpoint", help="meta policy; the fixed-parameter optimiser always runs")
    n.add_argument("--scenarios")
    n.add_argument("--cases", type=int, nargs="+", default=list(range(1, 7)))
    n.add_argument("--traces", action="store_true", help="write per-frame trace CSVs")
    r = sub.add_parser("report", parents=[common], help="rank tables from result CSVs")
    r.add_argument("inputs", nargs="+")
    return p


def cli(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _config(args)
        if args.command == "ablate" and args.variant and args.variant != "full":
            with_variant(cfg, args.variant)
        out = _out_dir(cfg)
        extra = COMMANDS[args.command](args, cfg, out)
        write_manifest(out, args.command, cfg, argv, extra)
        return EXIT_OK
    except MissingInput as exc:
        print(f"metado: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"metado: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"metado: checkpoint: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (MissingCell, ValueError) as exc:
        print(f"metado: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    raise SystemExit(cli())
