"""Experiment runner: tune / validate / simulate / report verbs.

Reproduces the study layouts at desk scale: joint vs. per-subsystem tuning,
accuracy tiers (max / med / low), the quadratic power-model variant, and
robust multi-seed tuning with fresh-seed validation. Each tune invocation
runs `repeats` independent BO runs and writes JSON-lines histories, a summary
table, and a plot-ready trace CSV of the best run.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, default_config, load_config
from .errors import ConfigError
from .harness import episode_evaluator, robust_evaluator, run_episode, trace_to_csv
from .optimizer import BoConfig, optimize
from .params import GncParams, MASKS, ParamSpace

ACCURACY_TIERS = {
    # (g_max, max allowed r_plan, optimizer mode)
    "max": (None, 3.0, "min_g"),
    "med": (1.5, 6.0, "constrained"),
    "low": (3.0, 9.0, "constrained"),
}

EXIT_OK = 0
EXIT_PARTIAL = 2
EXIT_CONFIG = 3


@dataclass
class ExperimentSpec:
    kind: str = "joint"
    mask: str = "all"
    repeats: int = 5
    budget_mult: int = 45
    robust: bool = False
    cost_variant: str = "original"
    accuracy: str = "med"
    master_seed: int = 0
    out_dir: Path = Path("out")
    config_path: str | None = None
    keep_default_g_max: bool = False

    def scenario(self) -> ScenarioConfig:
        cfg = load_config(self.config_path)
        g_max, r_cap, _ = ACCURACY_TIERS[self.accuracy]
        over = {"cost_variant": self.cost_variant, "r_plan_max": r_cap}
        if g_max is not None and not self.keep_default_g_max:
            over["g_max"] = g_max
        return cfg.with_overrides(**over)

    def bo_mode(self) -> str:
        return ACCURACY_TIERS[self.accuracy][2]


def _run_repeat(payload) -> dict:
    spec, repeat = payload
    cfg = spec.scenario()
    space = ParamSpace(cfg, spec.mask)
    if spec.robust:
        evaluator = robust_evaluator(cfg, space)
    else:
        evaluator = episode_evaluator(cfg, space)
    bo = BoConfig(
        budget=spec.budget_mult * space.d,
        g_max=cfg.g_max,
        mode=spec.bo_mode(),
        seed=spec.master_seed * 1000 + repeat,
    )
    history_path = spec.out_dir / f"run_{repeat}.jsonl"
    t0 = time.time()
    result = optimize(evaluator, space.d, bo, history_path=history_path,
                      denormalize=space.denormalize)
    wall = time.time() - t0
    best = {"j": None, "g": None, "params": None}
    if result.best_index is not None:
        i = result.best_index
        best = {
            "j": float(result.data.J[i]),
            "g": float(result.data.G[i]),
            "params": space.to_params(result.data.A[i]).as_dict(),
        }
    return {
        "repeat": repeat,
        "history": history_path.name,  # relative: summaries stay byte-identical
        "best": best,
        "n_crashes": int((result.data.L == 0).sum()),
        "wallclock_s": wall,
    }


def _pmap(fn, jobs):
    workers = int(os.environ.get("AUVTUNE_WORKERS", "1"))
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def run_experiment(spec: ExperimentSpec) -> int:
    """Run `repeats` independent BO runs and write the report files."""
    spec.out_dir = Path(spec.out_dir)
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    if spec.mask not in MASKS:
        raise ConfigError(f"unknown mask {spec.mask!r}")

    runs = _pmap(_run_repeat, [(spec, r) for r in range(spec.repeats)])
    ok = [r for r in runs if r["best"]["j"] is not None or r["best"]["g"] is not None]

    summary = {
        "kind": spec.kind,
        "mask": spec.mask,
        "d": len(MASKS[spec.mask]),
        "budget": spec.budget_mult * len(MASKS[spec.mask]),
        "robust": spec.robust,
        "cost_variant": spec.cost_variant,
        "accuracy": spec.accuracy,
        "master_seed": spec.master_seed,
        "runs": [{k: v for k, v in r.items() if k != "wallclock_s"} for r in runs],
    }
    if ok:
        key = "g" if spec.bo_mode() == "min_g" else "j"
        vals = [r["best"][key] for r in ok]
        summary["best_run"] = int(ok[int(np.argmin(vals))]["repeat"])
        summary["worst_run"] = int(ok[int(np.argmax(vals))]["repeat"])
        summary["best"] = ok[int(np.argmin(vals))]["best"]
        summary["worst"] = ok[int(np.argmax(vals))]["best"]

    with open(spec.out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    with open(spec.out_dir / "meta.json", "w") as fh:
        json.dump({"wallclock_s": [r["wallclock_s"] for r in runs]}, fh, indent=2)

    if ok and summary.get("best", {}).get("params"):
        cfg = spec.scenario()
        best_params = GncParams.from_dict(summary["best"]["params"])
        res = run_episode(best_params, cfg)
        if res.trace is not None and len(res.trace["t"]):
            trace_to_csv(res.trace, spec.out_dir / "best_trace.csv")

    return EXIT_OK if len(ok) == len(runs) else EXIT_PARTIAL


def validate_params(cfg: ScenarioConfig, params: GncParams, n_seeds: int,
                    first_seed: int = 1001) -> dict:
    """Run fresh-seed episodes and count constraint violations and crashes."""
    rows = []
    for i in range(n_seeds):
        seed = first_seed + i
        res = run_episode(params, cfg.with_overrides(seed=seed), keep_trace=False)
        rows.append({
            "seed": seed,
            "j": None if not np.isfinite(res.j) else res.j,
            "g": None if not np.isfinite(res.g) else res.g,
            "l": res.l,
            "violation": bool(res.l == 0 or res.g > cfg.g_max),
            "reason": res.reason,
        })
    return {
        "n_seeds": n_seeds,
        "n_violations": sum(r["violation"] for r in rows),
        "n_crashes": sum(r["l"] == 0 for r in rows),
        "mean_j_success": (float(np.mean([r["j"] for r in rows if r["l"] == 1]))
                           if any(r["l"] == 1 for r in rows) else None),
        "g_max": cfg.g_max,
        "rows": rows,
    }


def _load_params(arg: str, cfg: ScenarioConfig) -> GncParams:
    if arg == "defaults":
        return GncParams.from_defaults(cfg)
    path = Path(arg)
    raw = json.loads(path.read_text())
    if "params" in raw:  # summary.json "best" block or validate output
        raw = raw["params"]
    return GncParams.from_dict(raw)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="auvtune", description=__doc__)
    sub = ap.add_subparsers(dest="verb", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="scenario YAML (default: packaged)")
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--out", default="out", help="output directory")

    t = sub.add_parser("tune", parents=[common], help="run BO experiment")
    t.add_argument("--mask", default="all", choices=sorted(MASKS))
    t.add_argument("--budget-mult", type=int, default=45)
    t.add_argument("--repeats", type=int, default=5)
    t.add_argument("--robust", action="store_true")
    t.add_argument("--cost", default="original", choices=["original", "quadratic"])
    t.add_argument("--accuracy", default="med", choices=sorted(ACCURACY_TIERS))

    v = sub.add_parser("validate", parents=[common], help="fresh-seed validation")
    v.add_argument("--params", required=True, help="JSON file or 'defaults'")
    v.add_argument("--n-seeds", type=int, default=25)

    s = sub.add_parser("simulate", parents=[common], help="single episode")
    s.add_argument("--params", default="defaults")
    s.add_argument("--scenario-seed", type=int, default=None)

    r = sub.add_parser("report", parents=[common], help="summarize a tune directory")
    r.add_argument("--plot", action="store_true")

    args = ap.parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _dispatch(args) -> int:
    out = Path(args.out)
    if args.verb == "tune":
        spec = ExperimentSpec(
            kind="joint" if args.mask == "all" else "individual",
            mask=args.mask,
            repeats=args.repeats,
            budget_mult=args.budget_mult,
            robust=args.robust,
            cost_variant=args.cost,
            accuracy=args.accuracy,
            master_seed=args.seed,
            out_dir=out,
            config_path=args.config,
        )
        code = run_experiment(spec)
        print(f"summary written to {out/'summary.json'}")
        return code

    cfg = load_config(args.config)
    if args.verb == "validate":
        params = _load_params(args.params, cfg)
        report = validate_params(cfg, params, args.n_seeds, first_seed=1001 + args.seed)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "validation.json", "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
        print(f"{report['n_violations']} of {report['n_seeds']} seeds violate "
              f"(g_max={report['g_max']}); {report['n_crashes']} crashes")
        return EXIT_OK

    if args.verb == "simulate":
        if args.scenario_seed is not None:
            cfg = cfg.with_overrides(seed=args.scenario_seed)
        params = _load_params(args.params, cfg)
        res = run_episode(params, cfg)
        out.mkdir(parents=True, exist_ok=True)
        if res.trace is not None and len(res.trace["t"]):
            trace_to_csv(res.trace, out / "trace.csv")
        with open(out / "episode.json", "w") as fh:
            json.dump(res.record(params, cfg.seed), fh, indent=2, sort_keys=True)
        print(f"l={res.l} j={res.j:.2f} g={res.g:.3f} T_end={res.T_end:.1f} "
              f"reason={res.reason!r}")
        return EXIT_OK if res.l == 1 else EXIT_PARTIAL

    if args.verb == "report":
        summary_path = out / "summary.json"
        if not summary_path.exists():
            print(f"no summary.json under {out}", file=sys.stderr)
            return EXIT_CONFIG
        summary = json.loads(summary_path.read_text())
        print(json.dumps({k: summary[k] for k in
                          ("kind", "mask", "d", "budget", "best", "worst")
                          if k in summary}, indent=2))
        if args.plot:
            from .plotting import plot_trace
            csv = out / "best_trace.csv"
            if csv.exists():
                plot_trace(csv, out / "best_trace.png")
                print(f"plot written to {out/'best_trace.png'}")
        return EXIT_OK

    raise ConfigError(f"unknown verb {args.verb}")


if __name__ == "__main__":
    sys.exit(main())
