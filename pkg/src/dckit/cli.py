"""Command-line interface: condense, discrepancy, evaluate, plot.

Exit codes: 0 success, 2 configuration/input error, 3 numerical failure.
A JSON config file seeds the run; explicitly passed flags win over file values.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .condense import MethodConfig
from .data import load_dataset, load_synthetic
from .errors import (
    CondensationError,
    ConfigError,
    DivergenceError,
    NumericalError,
    SolveError,
)
from .harness import EvalConfig, RunConfig, discrepancy_command, emit_plots, evaluate, run
from .kernels import KernelSpec

_NUMERIC_ERRORS = (DivergenceError, NumericalError, SolveError)


def kernel_spec_from_dict(d: dict) -> KernelSpec:
    return KernelSpec(
        family=d["family"],
        gamma=d.get("gamma", 2.0),
        scale=d.get("scale", 1.0),
        feature_dim=d.get("feature_dim", 0),
        seed=d.get("seed", 0),
    )


def method_config_from_dict(d: dict) -> MethodConfig:
    d = dict(d)
    if isinstance(d.get("kernel"), dict):
        d["kernel"] = kernel_spec_from_dict(d["kernel"])
    if "hidden" in d:
        d["hidden"] = tuple(d["hidden"])
    return MethodConfig(**d)


def eval_config_from_dict(d: dict) -> EvalConfig:
    d = dict(d)
    if "hidden_architectures" in d:
        d["hidden_architectures"] = tuple(tuple(h) for h in d["hidden_architectures"])
    return EvalConfig(**d)


def _build_run_config(args) -> RunConfig:
    file_cfg: dict = {}
    if args.config:
        file_cfg = json.loads(Path(args.config).read_text())
    method_d = dict(file_cfg.get("method", {}))
    if args.method is not None:
        method_d["method"] = args.method
    if "method" not in method_d:
        raise ConfigError("no condensation method given (flag --method or config file)")
    dataset = args.dataset if args.dataset is not None else file_cfg.get("dataset")
    if dataset is None:
        raise ConfigError("no dataset given (flag --dataset or config file)")
    out_dir = args.out if args.out is not None else file_cfg.get("out_dir")
    seed = args.seed if args.seed is not None else file_cfg.get("seed", 0)
    per_class = args.per_class if args.per_class is not None else file_cfg.get("per_class", 1)
    if args.steps is not None:
        method_d["outer_steps"] = args.steps
    return RunConfig(
        dataset=dataset,
        method=method_config_from_dict(method_d),
        eval=eval_config_from_dict(file_cfg.get("eval", {})),
        per_class=per_class,
        init_mode=file_cfg.get("init_mode", "subsample"),
        normalize=file_cfg.get("normalize", True),
        latent_dim=file_cfg.get("latent_dim", 0),
        out_dir=out_dir,
        seed=seed,
    )


def _cmd_condense(args) -> int:
    cfg = _build_run_config(args)
    report = run(cfg)
    print(f"condense: method={cfg.method.method} seed={cfg.seed}")
    for name, entry in report.per_architecture.items():
        print(f"  {name}: accuracy {entry['mean']:.4f} +/- {entry['std']:.4f}")
    print(f"  baseline: {report.baseline_accuracy:.4f}  gd_estimate: {report.gd_estimate:.6f}")
    if cfg.out_dir:
        print(f"  artifacts in {cfg.out_dir}")
    return 0


def _cmd_discrepancy(args) -> int:
    selectors = tuple(s.strip() for s in args.metrics.split(",") if s.strip())
    report = discrepancy_command(
        args.a, args.b, selectors, freq_count=args.freqs, seed=args.seed or 0, out_path=args.out
    )
    for name in selectors:
        print(f"{name}: {report.values[name]:.12g}")
    return 0


def _cmd_evaluate(args) -> int:
    s = load_synthetic(args.synthetic)
    d = load_dataset(args.real)
    from .data import train_eval_split
    from .seeding import derive_seed

    t_train, t_eval = train_eval_split(d, 0.2, seed=derive_seed(args.seed or 0, "split"))
    eval_cfg = EvalConfig(repeats=args.repeats, pgd_eps=args.pgd_eps)
    report = evaluate(s, t_train, t_eval, eval_cfg, seed=args.seed or 0)
    for name, entry in report.per_architecture.items():
        print(f"{name}: accuracy {entry['mean']:.4f} +/- {entry['std']:.4f}")
    print(f"baseline: {report.baseline_accuracy:.4f}  gd_estimate: {report.gd_estimate:.6f}")
    if report.robust_accuracy is not None:
        print(f"robust accuracy (pgd eps={args.pgd_eps}): {report.robust_accuracy:.4f}")
    if args.out:
        payload = {
            "per_architecture": report.per_architecture,
            "baseline_accuracy": report.baseline_accuracy,
            "gd_estimate": report.gd_estimate,
            "robust_accuracy": report.robust_accuracy,
        }
        Path(args.out).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return 0


def _cmd_plot(args) -> int:
    written = emit_plots(args.report, args.log, args.out)
    for p in written:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dckit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("condense", help="run a condensation pipeline end to end")
    p.add_argument("--config", help="JSON run config; explicit flags override it")
    p.add_argument("--dataset", help="CSV dataset path")
    p.add_argument("--method", help="condensation method name")
    p.add_argument("--out", help="output directory for artifacts")
    p.add_argument("--seed", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--steps", type=int, help="outer steps override")
    p.set_defaults(fn=_cmd_condense)

    p = sub.add_parser("discrepancy", help="compute discrepancies between two CSV datasets")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--metrics", default="mmd,w1,hausdorff")
    p.add_argument("--freqs", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the report JSON here")
    p.set_defaults(fn=_cmd_discrepancy)

    p = sub.add_parser("evaluate", help="train fresh models on a synthetic set and score them")
    p.add_argument("--synthetic", required=True)
    p.add_argument("--real", required=True)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pgd-eps", dest="pgd_eps", type=float, default=0.0)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("plot", help="emit objective/accuracy plots from run artifacts")
    p.add_argument("--report", help="report.json path")
    p.add_argument("--log", help="steps.csv path")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _NUMERIC_ERRORS as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except (CondensationError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
