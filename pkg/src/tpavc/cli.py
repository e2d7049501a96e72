"""Command-line entry point.

Exit codes: 0 success, 1 usage, 2 validation, 3 runtime.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from tpavc.config import RunConfig, default_config, load_config
from tpavc.errors import (
    CompatibilityError,
    ConfigError,
    DimensionError,
    HorizonError,
    ProfileError,
    TopologyError,
    TPAVCError,
)
from tpavc.grid.topology import FeederTopology, desk_feeder, load_topology, save_topology, transfer_feeder

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3
VALIDATION_ERRORS = (ConfigError, CompatibilityError, DimensionError, HorizonError, ProfileError, TopologyError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="INI run configuration")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="overrides [marl] seed")
    p.add_argument("--out", help="overrides [eval] out, the root of run directories")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="tpavc", description="Prototype-aware multi-agent voltage control experiments.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic profile year and its feeder")
    _common(p, config_required=False)
    p.add_argument("--feeder", help="desk, transfer or a topology JSON path")
    p.add_argument("--days", type=int)

    p = sub.add_parser("train", help="train an agent set")
    _common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint over day/month/year cycles")
    _common(p)
    p.add_argument("--checkpoint", help="defaults to agents.ckpt in the run directory")
    p.add_argument("--cycle", action="append", choices=("day", "month", "year"),
                   help="overrides [eval] cycles (repeatable)")
    p.add_argument("--no-control", action="store_true", help="evaluate the zero-action policy")

    p = sub.add_parser("init-protos", help="build an initial prototype bank")
    _common(p)
    p.add_argument("--mode", choices=("data", "random"))
    p.add_argument("--bank-out", help="defaults to bank.ckpt in the run directory")

    p = sub.add_parser("transfer", help="train around a frozen bank plus a from-scratch control")
    _common(p)
    p.add_argument("--bank", required=True, help="bank checkpoint from another feeder")

    p = sub.add_parser("export-plots", help="write learning-curve and day-trace CSVs")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--day", type=int, help="test-day index for the trace (overrides [eval] trace_day)")
    return ap


def resolve_feeder(name: str) -> FeederTopology:
    if name == "desk":
        return desk_feeder()
    if name == "transfer":
        return transfer_feeder()
    path = Path(name)
    if not path.exists():
        raise ConfigError(f"[profiles] feeder: {name!r} is neither desk, transfer nor an existing file")
    return load_topology(path)


def _config(args, need_data: bool = True) -> RunConfig:
    cfg = load_config(args.config) if args.config else default_config()
    for item in args.set:
        cfg.override(item)
    if args.seed is not None:
        cfg.values["marl"]["seed"] = args.seed
    if args.out is not None:
        cfg.values["eval"]["out"] = args.out
    if need_data:
        cfg.require_complete()
    cfg.validate()
    return cfg


def _load_data(cfg: RunConfig):
    from tpavc.profiles import load_profiles_csv

    topo = resolve_feeder(cfg.get("profiles", "feeder"))
    path = Path(cfg.get("profiles", "data"))
    if path.is_dir():
        path = path / "profiles.csv"
    if not path.exists():
        raise ConfigError(f"[profiles] data: {path} does not exist")
    return topo, load_profiles_csv(path, topo)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _prepare_run_dir(cfg: RunConfig) -> Path:
    run = cfg.run_dir()
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.ini").write_text(cfg.dumps())
    return run


def cmd_gen_data(args) -> int:
    from tpavc.profiles import generate_synthetic_year, save_profiles_csv

    cfg = _config(args, need_data=False)
    if args.feeder:
        cfg.values["profiles"]["feeder"] = args.feeder
    if args.days is not None:
        cfg.values["profiles"]["synthetic_days"] = args.days
    cfg.validate()
    topo = resolve_feeder(cfg.get("profiles", "feeder"))
    seed = args.seed if args.seed is not None else cfg.get("profiles", "seed")
    out = Path(args.out) if args.out else Path(cfg.get("eval", "out")) / "data"
    ps = generate_synthetic_year(topo, cfg.synthetic, seed=seed)
    out.mkdir(parents=True, exist_ok=True)
    save_profiles_csv(ps, out / "profiles.csv")
    save_topology(topo, out / "topology.json")
    print(f"wrote {ps.horizon_days} days for {len(topo.bus_ids)} buses to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from tpavc.marl.train import train

    cfg = _config(args)
    topo, ps = _load_data(cfg)
    run = _prepare_run_dir(cfg)
    bank = _bank_from_config(cfg)
    result = train(topo, ps, cfg.env, cfg.train, cfg.encoder, cfg.prototype, cfg.seed, bank=bank,
                   ablation=cfg.ablation, proto_init=cfg.get("prototype", "init"),
                   log_path=run / "train_log.jsonl", checkpoint_path=run / "agents.ckpt")
    _write_json(run / "train_metrics.json", {"val_CR": result.val_cr, "val_QL": result.val_ql,
                                             "epochs": len(result.log)})
    print(f"run directory {run}: validation CR {result.val_cr:.4f}, QL {result.val_ql:.4f}")
    return EXIT_OK


def _bank_from_config(cfg: RunConfig):
    from tpavc.tpa.prototype import PrototypeBank

    path = cfg.get("prototype", "bank")
    if not path:
        return None
    return PrototypeBank.load(path, expected_dim=2 * cfg.encoder.h, frozen=True)


def _policy(cfg: RunConfig, topo, ps, checkpoint, no_control: bool = False):
    from tpavc.env import VoltageControlEnv
    from tpavc.marl.train import load_agents

    if no_control:
        return None
    path = Path(checkpoint) if checkpoint else cfg.run_dir() / "agents.ckpt"
    if not path.exists():
        raise ConfigError(f"checkpoint {path} does not exist; train first or pass --checkpoint")
    return load_agents(path, VoltageControlEnv(topo, ps, cfg.env))


def cmd_eval(args) -> int:
    from tpavc.evaluation import eval_cycle, write_table_csv

    cfg = _config(args)
    if args.cycle:
        cfg.values["eval"]["cycles"] = ",".join(args.cycle)
    topo, ps = _load_data(cfg)
    policy = _policy(cfg, topo, ps, args.checkpoint, args.no_control)
    run = _prepare_run_dir(cfg)
    tag = "nocontrol" if args.no_control else "policy"
    summary = {}
    for cycle in cfg.cycles:
        res = eval_cycle(policy, topo, ps, cfg.env, cycle)
        write_table_csv(res, run / f"metrics_{tag}_{cycle}.csv")
        summary[cycle] = {"CR": res.cr, "QL": res.ql, "table": res.table}
        print(f"{cycle:5s} CR {res.cr:.4f}  QL {res.ql:.4f}")
    _write_json(run / f"metrics_{tag}.json", summary)
    return EXIT_OK


def cmd_init_protos(args) -> int:
    from tpavc.tpa.prototype import init_prototypes

    cfg = _config(args)
    _, ps = _load_data(cfg)
    mode = args.mode or cfg.get("prototype", "init")
    bank = init_prototypes(ps, cfg.encoder.h, mode, seed=cfg.seed)
    out = Path(args.bank_out) if args.bank_out else _prepare_run_dir(cfg) / "bank.ckpt"
    out.parent.mkdir(parents=True, exist_ok=True)
    bank.save(out)
    print(f"wrote a {mode} bank of size {bank.bank.shape} to {out}")
    return EXIT_OK


def cmd_transfer(args) -> int:
    from tpavc.experiments import transfer_eval
    from tpavc.tpa.prototype import PrototypeBank

    cfg = _config(args)
    bank = PrototypeBank.load(args.bank, expected_dim=2 * cfg.encoder.h, frozen=True)
    topo, ps = _load_data(cfg)
    run = _prepare_run_dir(cfg)
    res = transfer_eval(bank, topo, ps, cfg.env, cfg.train, cfg.encoder, cfg.prototype, cfg.seed,
                        proto_init=cfg.get("prototype", "init"),
                        log_paths=(run / "transfer_log.jsonl", run / "scratch_log.jsonl"))
    _write_json(run / "transfer.json", {
        "transfer_CR": res.transfer_day.cr, "transfer_QL": res.transfer_day.ql,
        "scratch_CR": res.scratch_day.cr, "scratch_QL": res.scratch_day.ql,
        "bank_unchanged": res.bank_unchanged,
    })
    print(f"transfer CR {res.transfer_day.cr:.4f}, from scratch {res.scratch_day.cr:.4f}, "
          f"bank unchanged: {res.bank_unchanged}")
    return EXIT_OK


def cmd_export_plots(args) -> int:
    import csv

    from tpavc.env import VoltageControlEnv
    from tpavc.evaluation import record_trace, write_trace_csv
    from tpavc.profiles import STEPS_PER_DAY, slice_episodes

    cfg = _config(args)
    run = cfg.run_dir()
    log = run / "train_log.jsonl"
    if not log.exists():
        raise ConfigError(f"no training log at {log}; run train first")
    records = [json.loads(line) for line in log.read_text().splitlines() if line.strip()]
    keys = list(records[0])
    with open(run / "learning_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for r in records:
            w.writerow(["" if r[k] is None else r[k] for k in keys])
    topo, ps = _load_data(cfg)
    policy = _policy(cfg, topo, ps, args.checkpoint)
    day = args.day if args.day is not None else cfg.get("eval", "trace_day")
    starts = slice_episodes(ps, "test")
    if not 0 <= day < len(starts):
        raise ConfigError(f"trace day {day} out of range; {len(starts)} test days available")
    env = VoltageControlEnv(topo, ps, cfg.env)
    write_trace_csv(record_trace(env, policy, starts[day], STEPS_PER_DAY), run / f"day_trace_{day}.csv")
    write_trace_csv(record_trace(env, None, starts[day], STEPS_PER_DAY), run / f"day_trace_{day}_nocontrol.csv")
    print(f"wrote learning_curve.csv and day traces to {run}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "init-protos": cmd_init_protos,
    "transfer": cmd_transfer, "export-plots": cmd_export_plots,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
    except UsageError as err:
        print(str(err), file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (*VALIDATION_ERRORS, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TPAVCError, OSError, ArithmeticError, RuntimeError) as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
