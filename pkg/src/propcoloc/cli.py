"""Command-line entry point: ``propcoloc {test,simulate,calibrate}``.

Exit codes: 0 success, 1 calibration failure, 2 input error, 3 statistical
degeneracy.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import secrets
import sys
from pathlib import Path

from . import __version__
from .calibration import SUITES, run_suites
from .errors import DegeneracyError, InputError
from .gmm import Method, prop_coloc_full
from .selective import DEFAULT_DRAWS, build_selection, combined_verdict, lm_test, prop_coloc_cond, prop_coloc_naive
from .simulate import load_grid, parse_methods, run_experiment
from .summary import load_summary, order_traits, prune, select_top_k, to_joint_effects

SCHEMA_VERSION = 1
EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_DEGENERATE = 0, 1, 2, 3

log = logging.getLogger("propcoloc")


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    return v


def run_test(args) -> dict:
    """Full pipeline for one pair of traits; returns the run report."""
    methods = parse_methods(args.methods.split(","))
    seed = args.seed if args.seed is not None else secrets.randbits(63)

    ds = load_summary(args.assoc, args.ld, args.trait_cor, args.n)
    n_input = ds.J
    ds, swapped = order_traits(ds)
    if args.prune_r2 is not None:
        ds = prune(ds, args.prune_r2)
    n_pruned = ds.J
    if args.top_k:
        ds = select_top_k(ds, args.top_k)
    n_top = ds.J
    je = to_joint_effects(ds)
    sel = build_selection(je)

    results = {}
    for m in methods:
        if m is Method.FULL:
            res = prop_coloc_full(je, args.alpha)
        elif m is Method.NAIVE:
            res = prop_coloc_naive(je, sel, args.alpha)
        elif m is Method.CONDITIONAL:
            res = prop_coloc_cond(je, args.alpha, draws=args.draws, seed=seed)
        else:
            res = lm_test(je, sel, args.alpha)
        results[m.value] = res

    verdicts = {}
    lm = results.get(Method.LM.value)
    if lm is not None:
        for name in (Method.CONDITIONAL.value, Method.FULL.value):
            if name in results:
                verdicts[f"{name}-lm"] = combined_verdict(results[name], lm, args.alpha).value
        if not verdicts and not lm.reject:
            verdicts["lm"] = combined_verdict(lm, lm, args.alpha).value

    return {
        "schema_version": SCHEMA_VERSION,
        "tool": "propcoloc",
        "version": __version__,
        "seed": seed,
        "config": {
            "assoc": str(args.assoc),
            "ld": str(args.ld),
            "n": args.n,
            "trait_cor": args.trait_cor,
            "prune_r2": args.prune_r2,
            "top_k": args.top_k,
            "alpha": args.alpha,
            "draws": args.draws,
            "methods": [m.value for m in methods],
        },
        "preprocessing": {
            "input_variants": n_input,
            "trait_swap": swapped,
            "after_prune": n_pruned,
            "pruned": n_input - n_pruned,
            "after_top_k": n_top,
            "top_k_removed": n_pruned - n_top,
            "variants": list(ds.variant_ids),
            "lead_variants": [ds.variant_ids[sel.j_star], ds.variant_ids[sel.j_star_star]],
        },
        "results": {k: _json_safe(v.to_dict()) for k, v in results.items()},
        "verdicts": verdicts,
    }


def _format_table(report: dict) -> str:
    pre = report["preprocessing"]
    lines = [
        f"variants: {pre['input_variants']} input, {pre['after_prune']} after pruning, "
        f"{pre['after_top_k']} after top-k; traits swapped: {pre['trait_swap']}",
        f"lead variants: {pre['lead_variants'][0]} (trait 1), {pre['lead_variants'][1]} (trait 2)",
        "",
        f"{'method':<8}{'statistic':>12}{'critical':>12}{'p_value':>12}{'eta_hat':>12}  reject",
    ]
    for name, r in report["results"].items():
        eta = "" if r["eta_hat"] is None else f"{r['eta_hat']:.4g}"
        lines.append(
            f"{name:<8}{r['statistic']:>12.4g}{r['critical_value']:>12.4g}"
            f"{r['p_value']:>12.4g}{eta:>12}  {'yes' if r['reject'] else 'no'}"
        )
    for k, v in report["verdicts"].items():
        lines.append(f"verdict ({k}): {v}")
    lines.append(f"seed: {report['seed']}")
    return "\n".join(lines) + "\n"


def _format_tsv(report: dict) -> str:
    cols = ("method", "statistic", "df_or_critical", "critical_value", "p_value", "eta_hat", "reject")
    lines = ["\t".join(cols)]
    for r in report["results"].values():
        lines.append("\t".join("NA" if r[c] is None else str(r[c]) for c in cols))
    return "\n".join(lines) + "\n"


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)


def cmd_test(args) -> int:
    report = run_test(args)
    if args.json:
        text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    elif args.tsv:
        text = _format_tsv(report)
    else:
        text = _format_table(report)
    _emit(text, args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    grid = load_grid(args.grid)
    table = run_experiment(grid, args.methods.split(","), parallelism=args.parallel,
                           draws=args.draws, seed=args.seed)
    table.write_tsv(args.out)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    checks = run_suites(names, seed=args.seed)
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="propcoloc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="test proportional colocalization on summary data")
    t.add_argument("--assoc", required=True, type=Path, help="association TSV")
    t.add_argument("--ld", required=True, type=Path, help="LD correlation matrix")
    t.add_argument("--n", required=True, type=int, help="sample size")
    t.add_argument("--trait-cor", required=True, type=float, help="correlation between the traits")
    t.add_argument("--prune-r2", type=float, default=0.6, help="LD pruning threshold (default 0.6)")
    t.add_argument("--top-k", type=int, default=10,
                   help="keep the top-k variants per trait after pruning; 0 disables (default 10)")
    t.add_argument("--alpha", type=float, default=0.05, help="test level (default 0.05)")
    t.add_argument("--draws", type=int, default=DEFAULT_DRAWS, help="Monte-Carlo draws for cond")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--methods", default="full,naive,cond,lm")
    fmt = t.add_mutually_exclusive_group()
    fmt.add_argument("--json", action="store_true", help="emit the full JSON report")
    fmt.add_argument("--tsv", action="store_true", help="emit one TSV row per method")
    t.add_argument("--out", type=Path, default=None)
    t.set_defaults(func=cmd_test)

    s = sub.add_parser("simulate", help="run a rejection-frequency experiment")
    s.add_argument("--grid", required=True, type=Path, help="JSON array of simulation configs")
    s.add_argument("--out", required=True, type=Path, help="output TSV")
    s.add_argument("--parallel", type=int, default=1)
    s.add_argument("--seed", type=int, default=None, help="override per-config seeds")
    s.add_argument("--draws", type=int, default=DEFAULT_DRAWS)
    s.add_argument("--methods", default="full,naive,cond,lm")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("calibrate", help="run the numerical oracles")
    c.add_argument("--suite", choices=[*SUITES, "all"], default="all")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DegeneracyError as exc:
        print(f"propcoloc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (InputError, OSError) as exc:
        print(f"propcoloc: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
