"""Command-line entry point: ``python -m dvdn <verb> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 a verification
suite failed, 3 runtime error. Output goes under ``$DVDN_OUTPUT_ROOT``
(default ``runs``) unless ``--output-dir`` is given.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from . import harness, verify

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dvdn", description="Distributed value decomposition experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def run_options(sp):
        sp.add_argument("--config", type=Path, help="key = value config file (defaults apply when omitted)")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted key assignment applied after the file; repeatable")
        sp.add_argument("--output-dir", type=Path)
        sp.add_argument("--threads", type=int, default=1, help="agent-parallel worker threads (1 = reference mode)")

    run_options(sub.add_parser("train", help="train every seed of one config"))
    ab = sub.add_parser("ablate", help="train the IQL / JTD / GT / GT+JTD groups")
    run_options(ab)
    ab.add_argument("--groups", default=",".join(harness.ABLATION_GROUPS))

    cmp_ = sub.add_parser("compare", help="bootstrap rank test between two run artifacts")
    cmp_.add_argument("run_a", type=Path)
    cmp_.add_argument("run_b", type=Path)
    cmp_.add_argument("--resamples", type=int, default=20_000)

    ver = sub.add_parser("verify", help="run the property suites")
    ver.add_argument("--suite", action="append", choices=sorted(verify.SUITES))

    ex = sub.add_parser("export-plots", help="seed-aggregated long-format CSV per environment")
    ex.add_argument("metrics", type=Path, nargs="+", help="metrics.csv files or run directories")
    ex.add_argument("--output-dir", type=Path)
    return p


def _resolve_config(args) -> cfgmod.ExperimentConfig:
    if args.config is not None:
        if not args.config.is_file():
            raise UsageError(f"config file not found: {args.config}")
        return cfgmod.load(args.config, args.override)
    return cfgmod.loads("", args.override)


def _metrics_path(p: Path) -> Path:
    path = p / "metrics.csv" if p.is_dir() else p
    if not path.is_file():
        raise UsageError(f"metrics file not found: {path}")
    return path


def _print_paths(**paths) -> None:
    print(f"output root: {harness.output_root().resolve()}")
    for k, v in paths.items():
        print(f"{k}: {Path(v).resolve()}")


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = args.output_dir or harness.output_root() / harness.run_id_for(cfg)
    _print_paths(**({"config": args.config} if args.config else {}), output_dir=out)
    art = harness.train(cfg, out, threads=args.threads)
    best = max(art.records(), key=lambda r: r.mean, default=None)
    print(f"wrote {out / 'metrics.csv'} ({len(art.rows)} rows)")
    if best is not None:
        print(f"max average return {best.mean:.4f} [{best.ci_low:.4f}, {best.ci_high:.4f}] at step {best.step}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    groups = tuple(g.strip() for g in args.groups.split(",") if g.strip())
    out = args.output_dir or harness.output_root() / f"ablation_{cfg.env}"
    _print_paths(**({"config": args.config} if args.config else {}), output_dir=out)
    (Path(out)).mkdir(parents=True, exist_ok=True)
    (Path(out) / "config.cfg").write_text(cfgmod.dumps(cfg))
    for r in harness.run_ablation(cfg, groups, out, threads=args.threads):
        flag = " (narrow window)" if r.flagged else ""
        print(f"{r.group:7s} mean {r.mean:.4f} [{r.ci_low:.4f}, {r.ci_high:.4f}] n={r.n_pooled} "
              f"best step {r.best_step} vs IQL: {r.vs_iql}{flag}")
    return EXIT_OK


def cmd_compare(args) -> int:
    pa, pb = _metrics_path(args.run_a), _metrics_path(args.run_b)
    _print_paths(run_a=pa, run_b=pb)
    verdict = harness.compare_runs(harness.read_metrics_csv(pa), harness.read_metrics_csv(pb), args.resamples)
    print(verdict)
    return EXIT_OK


def cmd_verify(args) -> int:
    _print_paths()
    ok = True
    for res in verify.run_all(args.suite):
        print(res.line())
        ok &= res.passed
    print("all suites passed" if ok else "verification FAILED")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_export_plots(args) -> int:
    paths = [_metrics_path(p) for p in args.metrics]
    out = args.output_dir or harness.output_root() / "plots"
    _print_paths(output_dir=out)
    for p in harness.export_plots(paths, out):
        print(f"wrote {p}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "ablate": cmd_ablate, "compare": cmd_compare, "verify": cmd_verify,
            "export-plots": cmd_export_plots}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except cfgmod.ConfigError as e:
        print(f"config error at {e.key}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        logging.getLogger(__name__).debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
