"""csplab command line: seeded, hash-checked experiment stages.

Exit codes: 0 success, 1 usage, 2 config/hash mismatch, 3 numeric failure,
4 acceptance-bar failure (evaluator accuracy floor), 5 partial report.
"""

import argparse
import sys

from csplab.evalkit import EvaluatorAccuracyError
from csplab.lmtrain import NumericError
from .checkpoint import CheckpointError
from .config import ConfigError, load_config


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def build_parser():
    p = _Parser(prog="csplab", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required,
                        help="experiment config JSON")
        sp.add_argument("--seed", type=int, help="override config seed")
        sp.add_argument("--out", help="override output directory")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VAL",
                        help="dotted-path config override, repeatable")
        return sp

    common(sub.add_parser("gen-data", help="generate domain spec and corpora"))
    pt = common(sub.add_parser("pretrain", help="train the source-domain model"))
    pt.add_argument("--resume", help="resume from an epoch checkpoint")
    common(sub.add_parser("probe", help="characteristic-specific analysis"))
    common(sub.add_parser("select", help="resolve strategy plans from the weights file"))
    ft = common(sub.add_parser("finetune", help="fine-tune one strategy"))
    ft.add_argument("--strategy", required=True)
    ft.add_argument("--run-seed", type=int, help="single run seed (default: all config seeds)")
    ev = common(sub.add_parser("eval", help="evaluate saved checkpoints (or origin)"))
    ev.add_argument("--strategy", required=True)
    ev.add_argument("--run-seed", type=int)
    bench = common(sub.add_parser("bench", help="100-step timing benchmark"),
                   config_required=False)
    bench.add_argument("--kernels", action="store_true",
                       help="compare numba kernels against the numpy fallback")
    common(sub.add_parser("report", help="regenerate report tables from a run directory"))
    ra = common(sub.add_parser("run-all", help="full pipeline: pretrain through report"))
    ra.add_argument("--transfer", dest="transfer", action="store_true", default=None,
                    help="force the cross-corpus transfer phase")
    ra.add_argument("--no-transfer", dest="transfer", action="store_false")
    return p


def _config(args):
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def cli_dispatch(argv):
    from . import pipeline as pl
    from .report import write_reports

    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    try:
        if args.command == "bench" and args.kernels:
            from .kernelbench import run_kernel_bench
            run_kernel_bench()
            return 0
        if args.command == "bench" and not args.config:
            raise UsageError("bench requires --config unless --kernels is given")
        cfg = _config(args)
        log = pl.StageLog(cfg.out_dir if args.command != "gen-data" else None)
        pl.RunPaths(cfg.out_dir).ensure()
        log.out_dir = cfg.out_dir
        if args.command == "gen-data":
            pl.stage_gen_data(cfg, log)
        elif args.command == "pretrain":
            pl.stage_pretrain(cfg, log, resume_from=args.resume)
        elif args.command == "probe":
            pl.stage_probe(cfg, log)
        elif args.command == "select":
            pl.stage_select(cfg, log)
        elif args.command == "finetune":
            seeds = [args.run_seed] if args.run_seed is not None else cfg.seeds
            for s in seeds:
                pl.stage_finetune_only(cfg, args.strategy, s, log)
        elif args.command == "eval":
            evaluator = pl.stage_evaluator(cfg, log)
            ctx = pl.EvalContext(cfg, evaluator)
            if args.strategy == "origin":
                pl.stage_eval_origin(cfg, ctx, log)
            else:
                seeds = [args.run_seed] if args.run_seed is not None else cfg.seeds
                for s in seeds:
                    pl.stage_eval_checkpoints(cfg, ctx, args.strategy, s, log)
        elif args.command == "bench":
            pl.stage_bench(cfg, log)
        elif args.command == "report":
            summary = write_reports(cfg, log)
            if summary["missing"]:
                return 5
        elif args.command == "run-all":
            summary = pl.run_all(cfg, log, include_transfer=args.transfer)
            if summary["missing"]:
                return 5
        return 0
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except (ConfigError, pl.ConfigMismatchError, CheckpointError, FileNotFoundError) as e:
        print(f"csplab: config error: {e}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError) as e:
        print(f"csplab: numeric failure: {e}", file=sys.stderr)
        return 3
    except EvaluatorAccuracyError as e:
        print(f"csplab: acceptance bar failed: {e}", file=sys.stderr)
        return 4


def main():
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
