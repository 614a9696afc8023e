"""Command-line harness: ``offdae {fig3,fig4,counterexample,verify,train,plot}``.

Every subcommand writes CSV into the output directory (``--out``, else
``$OFFDAE_OUT``, else ``./results``).  Charts are always regenerated from the
CSV just written, so ``offdae plot FILE.csv`` reproduces them byte for byte.

Exit codes: 0 success, 1 verification failure or divergence, 2 bad
configuration.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import experiments as ex
from .actor_critic import METHODS, TrainConfig
from .errors import ConfigurationError, DivergenceError, OffDaeError
from .svg import Series, line_chart
from .textio import parse_kv, read_csv, write_csv

__all__ = ["main", "build_parser", "parse_seeds", "plot_csv"]

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
OUT_ENV = "OFFDAE_OUT"

TRAIN_DEFAULTS = {
    "env": "gridworld",
    "slip_prob": str(ex.BENCHMARK_SLIP),
    "methods": ",".join(METHODS),
    "n": str(ex.BENCHMARK_CONFIG.n),
    "learning_rate": str(ex.BENCHMARK_CONFIG.learning_rate),
    "tau": str(ex.BENCHMARK_CONFIG.tau),
    "total_steps": str(ex.BENCHMARK_CONFIG.total_steps),
    "eval_episodes": str(ex.BENCHMARK_CONFIG.eval_episodes),
    "seeds": "20",
}


def parse_seeds(text: str) -> list[int]:
    """``N`` (seeds 0..N-1), ``a:b`` (half-open range) or ``s1,s2,...``."""
    text = text.strip()
    try:
        if ":" in text:
            lo, hi = (int(t) for t in text.split(":"))
            seeds = list(range(lo, hi))
        elif "," in text:
            seeds = [int(t) for t in text.split(",") if t.strip()]
        else:
            seeds = list(range(int(text)))
    except ValueError as exc:
        raise ConfigurationError(f"bad seed list {text!r}") from exc
    if not seeds:
        raise ConfigurationError(f"seed list {text!r} is empty")
    return seeds


def _int_list(text: str, what: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"bad {what} list {text!r}") from exc
    if not vals:
        raise ConfigurationError(f"{what} list is empty")
    return vals


def _float_list(text: str, what: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"bad {what} list {text!r}") from exc


def _n_list(text: str) -> list[int | None]:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok in ("inf", "none", "None"):
            out.append(None)
        else:
            try:
                out.append(int(tok))
            except ValueError as exc:
                raise ConfigurationError(f"bad n value {tok!r}") from exc
    return out


def _out_dir(args) -> Path:
    path = Path(args.out or os.environ.get(OUT_ENV) or "results")
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise ConfigurationError(f"output directory {path} is not writable")
    return path


# -- plotting from CSV ---------------------------------------------------------------------------


def _groups(header, rows, key):
    i = header.index(key)
    out: dict[str, list] = {}
    for row in rows:
        out.setdefault(row[i], []).append(row)
    return out


def _figure_charts(header, rows, title):
    col = {h: i for i, h in enumerate(header)}
    charts = {}
    for k in ("1", "2"):
        series = []
        for name, grp in _groups(header, rows, "estimator").items():
            x = tuple(float(r[col["samples"]]) for r in grp)
            m = tuple(float(r[col[f"mean_v{k}"]]) for r in grp)
            s = tuple(float(r[col[f"std_v{k}"]]) for r in grp)
            series.append(Series(name, x, m, tuple(a - b for a, b in zip(m, s)), tuple(a + b for a, b in zip(m, s))))
        ref = float(rows[0][col[f"true_v{k}"]]) if rows else None
        charts[f"v{k}"] = line_chart(series, f"{title}: estimate of V at start state {k}",
                                     "trajectories", "estimate (mean +- 1 std)", reference=ref, logx=True)
    return charts


def _train_chart(header, rows, title):
    col = {h: i for i, h in enumerate(header)}
    series = []
    for name, grp in _groups(header, rows, "method").items():
        x = tuple(float(r[col["step"]]) for r in grp)
        m = tuple(float(r[col["mean_return"]]) for r in grp)
        s = tuple(float(r[col["stderr"]]) for r in grp)
        series.append(Series(name, x, m, tuple(a - b for a, b in zip(m, s)), tuple(a + b for a, b in zip(m, s))))
    return {"": line_chart(series, title, "environment steps", "greedy return (mean +- 1 s.e.)")}


def plot_csv(path) -> list[Path]:
    """Regenerate the SVG charts belonging to a CSV written by this tool."""
    path = Path(path)
    header, rows = read_csv(path)
    if header[:2] == ["estimator", "samples"]:
        charts = _figure_charts(header, rows, path.stem)
    elif header[:2] == ["method", "step"]:
        charts = _train_chart(header, rows, path.stem)
    else:
        raise ConfigurationError(f"{path} has no chart (header {header[:3]}...)")
    written = []
    for suffix, svg in charts.items():
        target = path.with_name(f"{path.stem}_{suffix}.svg" if suffix else f"{path.stem}.svg")
        target.write_text(svg)
        written.append(target)
    return written


def _emit(out: Path, name: str, result, plot: bool = False) -> list[Path]:
    target = out / f"{name}.csv"
    write_csv(target, result.header, result.rows)
    files = [target]
    if plot:
        files += plot_csv(target)
    return files


# -- subcommands ---------------------------------------------------------------------------------


def _cmd_fig(args, which: str) -> int:
    seeds = parse_seeds(args.seeds)
    grid = _int_list(args.samples, "sample count") if args.samples else ex.DEFAULT_GRID
    if which == "fig3":
        res = ex.run_fig3(seeds, grid, master_seed=args.seed, absent=args.absent)
    else:
        res = ex.run_fig4(seeds, grid, master_seed=args.seed, absent=args.absent, stochastic=not args.deterministic)
    files = _emit(_out_dir(args), which, res, plot=True)
    print(f"{which}: {len(seeds)} seeds x {len(grid)} sample counts -> {', '.join(map(str, files))}")
    return EXIT_OK


def _cmd_counterexample(args) -> int:
    kw = {}
    if args.mu_grid:
        kw["mu_grid"] = _float_list(args.mu_grid, "mu")
    if args.pi_grid:
        kw["pi_grid"] = _float_list(args.pi_grid, "pi")
    res = ex.run_counterexample(**kw)
    files = _emit(_out_dir(args), "counterexample", res)
    for line in res.summary + res.failures:
        print(line)
    print(f"wrote {files[0]}")
    return EXIT_OK if res.ok else EXIT_FAIL


def _cmd_verify(args) -> int:
    ns = _n_list(args.n) if args.n else ex.VERIFY_NS
    res = ex.run_verify(num_instances=args.instances, seed=args.seed, ns=ns, inject_fault=args.inject_fault)
    files = _emit(_out_dir(args), "verify", res)
    for line in res.summary:
        print(line)
    for line in res.failures[:20]:
        print("  " + line)
    print(f"wrote {files[0]}")
    return EXIT_OK if res.ok else EXIT_FAIL


def _train_settings(args) -> tuple[dict, dict, list[str], list[int]]:
    values = dict(TRAIN_DEFAULTS)
    if args.config:
        try:
            values.update(parse_kv(Path(args.config).read_text()))
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
    if args.method:
        values["methods"] = ",".join(args.method)
    if args.seeds:
        values["seeds"] = args.seeds
    elif args.seed is not None:
        values["seeds"] = f"{args.seed}:{args.seed + 1}"
    if args.n is not None:
        values["n"] = str(args.n)
    for key in ("slip_prob", "layout", "total_steps"):
        if getattr(args, key) is not None:
            values[key] = str(getattr(args, key))
    methods = [m.strip() for m in values.pop("methods").split(",") if m.strip()]
    seeds = parse_seeds(values.pop("seeds"))
    env = {k: values.pop(k) for k in ex.ENV_KEYS if k in values}
    if "gamma" in values:
        env["gamma"] = values["gamma"]
    return env, values, methods, seeds


def _cmd_train(args) -> int:
    env, cfg, methods, seeds = _train_settings(args)
    mdp = ex.build_env(env)
    base = TrainConfig.from_mapping(cfg)
    out = _out_dir(args)
    try:
        agg, per_run = ex.run_train(mdp, methods, seeds, base)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    files = _emit(out, "train", agg, plot=True)
    files += _emit(out, "train_runs", per_run)
    for line in agg.summary:
        print(line)
    print(f"wrote {', '.join(map(str, files))}")
    return EXIT_OK


def _cmd_plot(args) -> int:
    for f in args.csv:
        for target in plot_csv(f):
            print(f"wrote {target}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="offdae",
        description="Advantage-decomposition estimators: value-estimation figures, identity checks and "
        "actor-critic comparisons.",
        epilog=f"Output goes to --out, else ${OUT_ENV}, else ./results. Exit codes: 0 ok, 1 verification "
        "failure or divergence, 2 configuration error.",
    )
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(sp, seeds_default=None):
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./results)")
        if seeds_default is not None:
            sp.add_argument("--seeds", default=seeds_default,
                            help="seed list: N for 0..N-1, a:b for a range, or comma-separated (default %(default)s)")

    for name, helptext in (
        ("fig3", "MC, batch TD(0) and DAE on the two-start-state example"),
        ("fig4", "DAE against Off-policy DAE (empirical and oracle models)"),
    ):
        sp = sub.add_parser(name, help=helptext, description=helptext)
        common(sp, seeds_default="1000")
        sp.add_argument("--seed", type=int, default=0, help="master seed for data streams (default 0)")
        sp.add_argument("--samples", help="comma-separated trajectory counts (default 1,2,5,...,10000)")
        sp.add_argument("--absent", choices=("zero", "skip"), default="zero",
                        help="treat an unvisited start state's estimate as 0 or leave it out of the statistics")
        if name == "fig4":
            sp.add_argument("--deterministic", action="store_true",
                            help="use the deterministic variant of the MDP (all estimators coincide)")
        sp.set_defaults(func=lambda a, _n=name: _cmd_fig(a, _n))

    sp = sub.add_parser("counterexample", help="DAE bias on off-policy data: closed form against the solver")
    common(sp)
    sp.add_argument("--mu-grid", help="comma-separated behavior probabilities of 'up' (default 0.1..0.9)")
    sp.add_argument("--pi-grid", help="comma-separated target probabilities of 'up' (default 0.1..0.9)")
    sp.set_defaults(func=_cmd_counterexample)

    sp = sub.add_parser("verify", help="identity and oracle checks on random MDPs; exit 1 on any FAIL")
    common(sp)
    sp.add_argument("--seed", type=int, default=0, help="instance generator seed (default 0)")
    sp.add_argument("--instances", type=int, default=100, help="number of random instances (default 100)")
    sp.add_argument("--n", help="comma-separated window lengths, 'inf' for full episodes (default 0,1,2,inf)")
    sp.add_argument("--inject-fault", action="store_true", help="perturb recovered advantages by 1e-3")
    sp.set_defaults(func=_cmd_verify)

    sp = sub.add_parser(
        "train", help="tabular actor-critic comparison on a gridworld",
        description="Train each (method, seed) pair. A --config file holds 'key = value' lines with "
        "any training option (method, n, gamma, learning_rate, tau, ...), the environment keys "
        f"({', '.join(ex.ENV_KEYS)}) and 'methods'/'seeds'. Command-line flags win.",
    )
    common(sp)
    sp.add_argument("--config", help="key-value config file")
    sp.add_argument("--method", action="append", choices=METHODS, help="method to train (repeatable; default all)")
    sp.add_argument("--seeds", help="run seeds: N, a:b or comma-separated (default 20)")
    sp.add_argument("--seed", type=int, help="single run seed (ignored when --seeds is given)")
    sp.add_argument("--n", type=int, help="segment length for multi-step backups")
    sp.add_argument("--slip-prob", dest="slip_prob", type=float, help="gridworld slip probability")
    sp.add_argument("--layout", help="gridworld rows separated by '/'")
    sp.add_argument("--total-steps", dest="total_steps", type=int, help="environment steps per run")
    sp.set_defaults(func=_cmd_train)

    sp = sub.add_parser("plot", help="regenerate SVG charts from CSV files written by this tool")
    sp.add_argument("csv", nargs="+", help="CSV files")
    sp.set_defaults(func=_cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OffDaeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
