"""Command-line pipeline: audit -> descend -> repair -> evaluate, plus synthetic data.

Usage:
    cfrepair synth two-feature --n 20000 --seed 0 --out runs/demo
    cfrepair audit --config runs/demo/two-feature.ini
    cfrepair descend --config runs/demo/two-feature.ini --exact
    cfrepair repair --config runs/demo/two-feature.ini
    cfrepair evaluate --config runs/demo/two-feature.ini --draws 25

Exit codes: 0 success, 2 config/schema error, 3 numerical or infeasibility
error, 4 irreconcilable disparity flagged with ``[descent] hard_fail = true``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SPLIT_PRESETS, ConfigError, RunConfig
from .data import (
    AuditDataset,
    EmpiricalDistribution,
    ExactPopulation,
    SchemaError,
    SchemaSpec,
    empirical_distribution,
    load_dataset,
    read_distribution,
    split_dataset,
    write_dataset,
    write_distribution,
)
from .descent import (
    DescentConfig,
    distributional_descent,
    exact_descent,
    irreconcilability_check,
    write_trace,
    write_weights,
)
from .disparity import (
    KINDS,
    EmptyConditioningError,
    MetricReport,
    MetricSpec,
    metric_exact,
    metric_from_samples,
    write_reports,
)
from .influence import InfluenceEstimationError
from .models import ColumnScorer, LinearScorer, Scorer, TrainConfig, fit_auxiliaries, train_logistic
from .repair import EvalConfig, RepairedScorer, contrast_distributions, evaluate_repair, repaired_metric_exact, write_contrast
from .synth import GENERATORS, generate
from .transport import FORBID, CostSpec, InfeasibleTransportError, Preprocessor, all_pairs, make_preprocessor, plan_between, write_plan

log = logging.getLogger("cfrepair")

EXIT_CONFIG, EXIT_NUMERIC, EXIT_IRRECONCILABLE = 2, 3, 4


class Irreconcilable(Exception):
    pass


# -- pipeline context ----------------------------------------------------------


@dataclass
class Context:
    cfg: RunConfig
    audit: AuditDataset
    holdout: AuditDataset | None
    train: AuditDataset | None
    population: ExactPopulation | None
    h: Scorer
    spec: MetricSpec


def _swap_population(pop: ExactPopulation) -> ExactPopulation:
    return ExactPopulation(pop.schema, pop.p1, pop.p0, pop.cond1, pop.cond0, 1.0 - pop.ps1)


def _schema_spec(cfg: RunConfig) -> SchemaSpec:
    bins = {}
    for item in cfg.items("data", "bins"):
        name, _, k = item.partition(":")
        bins[name.strip()] = int(k or 10)
    return SchemaSpec(
        label=cfg.get("data", "label"),
        group=cfg.get("data", "group"),
        weight=cfg.opt("data", "weight"),
        score=cfg.opt("data", "score") or cfg.opt("model", "score_column"),
        bins=bins,
        drop=tuple(cfg.items("data", "drop")),
    )


def _train_config(cfg: RunConfig, fit_intercept: bool = True) -> TrainConfig:
    return TrainConfig(
        l2_grid=tuple(float(v) for v in cfg.items("aux", "l2_grid")),
        folds=cfg.integer("aux", "folds"),
        max_iters=cfg.integer("aux", "max_iters"),
        tolerance=cfg.real("aux", "tolerance"),
        seed=cfg.seed,
        fit_intercept=fit_intercept,
    )


def _model(cfg: RunConfig, audit: AuditDataset, train: AuditDataset | None) -> Scorer:
    coef = cfg.path("model", "coefficients")
    col = cfg.opt("model", "score_column")
    if coef is not None:
        h: Scorer = LinearScorer.load(coef, audit.schema)
    elif col is not None:
        h = ColumnScorer(col, audit)
    else:
        src = cfg.path("model", "train_path")
        if src is not None:
            train = load_dataset(src, _schema_spec(cfg), audit.schema)
        if train is None:
            raise ConfigError("[model] needs coefficients, score_column, train_path or [data] split = staged")
        h = train_logistic(train.X, train.y, train.weights, _train_config(cfg, cfg.flag("model", "fit_intercept")), train.schema)
        cfg.out.mkdir(parents=True, exist_ok=True)
        h.save(cfg.out / "model.csv")
    t = cfg.opt("model", "threshold")
    return h.thresholded(float(t)) if t is not None else h


def build_context(cfg: RunConfig) -> Context:
    path = cfg.path("data", "path")
    if path is None:
        raise ConfigError("[data] path is required")
    spec = _schema_spec(cfg)
    data = load_dataset(path, spec)
    train = holdout = None
    split = cfg.get("data", "split")
    if split != "none":
        if split not in SPLIT_PRESETS:
            raise ConfigError(f"unknown split preset {split!r}")
        train, audit, holdout = split_dataset(data, SPLIT_PRESETS[split], np.random.default_rng(cfg.stage_seed("split")))
    else:
        audit = data
    hpath = cfg.path("data", "holdout")
    if hpath is not None:
        holdout = load_dataset(hpath, spec, data.schema)
    pop = None
    ppath = cfg.path("data", "population")
    if ppath is not None:
        pop = ExactPopulation.from_json(ppath.read_text())
        if pop.schema.names != data.schema.names:
            raise SchemaError("population schema does not match the dataset features")
    target = cfg.integer("data", "target")
    if target not in (0, 1):
        raise ConfigError("[data] target must be 0 or 1")
    if target == 1:
        audit = audit.with_groups_swapped()
        holdout = holdout.with_groups_swapped() if holdout is not None else None
        train = train.with_groups_swapped() if train is not None else None
        pop = _swap_population(pop) if pop is not None else None
    for part in (audit, holdout):
        if part is not None:
            part.require_groups()
    h = _model(cfg, audit, train)
    try:
        metric = MetricSpec.parse(cfg.get("metric", "kind"))
    except ValueError as exc:
        raise ConfigError(f"[metric] kind: {exc}") from None
    return Context(cfg, audit, holdout, train, pop, h, metric)


def _prepare_out(cfg: RunConfig) -> Path:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(out / "resolved_config.ini")
    return out


# -- commands ---------------------------------------------------------------------


def _safe_report(spec: MetricSpec, data: AuditDataset, h: Scorer, seed: int) -> MetricReport:
    try:
        return metric_from_samples(spec, data, h, seed)
    except EmptyConditioningError:
        return MetricReport(spec.name, spec.lam, math.nan, math.nan, math.nan, seed=seed, status="undefined")


def cmd_audit(cfg: RunConfig, args) -> int:
    ctx = build_context(cfg)
    out = _prepare_out(cfg)
    reports, targets, suggestions = [], [], []
    for kind in KINDS:
        spec = MetricSpec(kind)
        fwd = _safe_report(spec, ctx.audit, ctx.h, cfg.seed)
        rev = _safe_report(spec, ctx.audit.with_groups_swapped(), ctx.h, cfg.seed)
        reports += [fwd, rev]
        targets += [0, 1]
        if kind == "DA" or fwd.status != "ok" or abs(fwd.gap) <= 1e-12:
            suggestion = "none"
        else:
            # the target group attains the less favorable (larger) value
            suggestion = "0" if fwd.gap > 0 else "1"
        suggestions.append((kind, suggestion))
        print(f"{spec.name:>4}  gap={fwd.gap: .4f}  suggested target={suggestion}")
    rows = [dict(r.record(), target=t) for r, t in zip(reports, targets)]
    with open(out / "audit.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
    with open(out / "audit_suggestion.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["metric", "suggested_target"])
        wr.writerows(suggestions)
    return 0


def _descent_config(cfg: RunConfig, holdout: AuditDataset | None) -> DescentConfig:
    rc = cfg.opt("descent", "resample_count")
    return DescentConfig(
        step_eps=cfg.real("descent", "step_eps"),
        max_iters=cfg.integer("descent", "max_iters"),
        patience=cfg.integer("descent", "patience"),
        resample_count=int(rc) if rc else None,
        holdout=holdout,
        seed=cfg.stage_seed("descent"),
        weight_floor=cfg.real("descent", "weight_floor"),
        clamp=cfg.real("descent", "clamp"),
    )


def _write_summary(path: Path, fields: dict) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["key", "value"])
        for k, v in fields.items():
            wr.writerow([k, repr(float(v)) if isinstance(v, float) else v])


def cmd_descend(cfg: RunConfig, args) -> int:
    ctx = build_context(cfg)
    out = _prepare_out(cfg)
    dcfg = _descent_config(cfg, ctx.holdout)
    timing = cfg.flag("descent", "timing")
    if args.exact:
        if ctx.population is None:
            raise ConfigError("--exact needs [data] population")
        q, trace, status = exact_descent(ctx.population, ctx.h, ctx.spec, dcfg)
        write_distribution(q, ctx.audit.schema, out / "counterfactual.csv")
        gap = metric_exact(ctx.spec, ctx.population, ctx.h, override_p0=q).gap
    else:
        s_hat, y0_hat = fit_auxiliaries(ctx.audit, _train_config(cfg))
        res = distributional_descent(ctx.audit, ctx.h, ctx.spec, (y0_hat, s_hat), dcfg)
        trace, status, gap = res.trace, res.status, res.best.gap
        write_weights(res, out / "weights.csv")
        write_dataset(res.counterfactual_samples, out / "counterfactual.csv", cfg.get("data", "label"), cfg.get("data", "group"))
        if res.message:
            log.warning("descent stopped early: %s", res.message)
    write_trace(trace, out / "trace.csv", timing)
    diag = irreconcilability_check(gap, cfg.real("descent", "gap_threshold"), ctx.spec)
    _write_summary(
        out / "descent_summary.csv",
        {
            "metric": ctx.spec.name,
            "mode": "exact" if args.exact else "sampled",
            "status": status,
            "iterations": trace[-1].iteration,
            "gap_initial": float(trace[0].metric_working),
            "gap_best": float(gap),
            "diagnostic": diag.status,
            "seed": cfg.seed,
        },
    )
    print(f"{ctx.spec.name}: {trace[0].metric_working:.4f} -> {gap:.4f} ({status}, {trace[-1].iteration} iterations)")
    print(diag.message)
    if diag.flagged and cfg.flag("descent", "hard_fail"):
        raise Irreconcilable(diag.message)
    return 0


def _is_distribution_file(path: Path) -> bool:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), [])
    return "prob" in header


def _source_and_counterfactual(ctx: Context) -> tuple[EmpiricalDistribution, EmpiricalDistribution]:
    cfg = ctx.cfg
    path = cfg.path("transport", "counterfactual") or cfg.out / "counterfactual.csv"
    if not path.is_file():
        raise ConfigError(f"counterfactual file not found: {path} (run descend first)")
    if _is_distribution_file(path):
        q = read_distribution(path, ctx.audit.schema)
        p = ctx.population.p0 if ctx.population is not None else empirical_distribution(ctx.audit, 0)
    else:
        cf = load_dataset(path, SchemaSpec(cfg.get("data", "label"), cfg.get("data", "group")), ctx.audit.schema)
        q = empirical_distribution(cf, 0)
        p = empirical_distribution(ctx.audit, 0)
    return p, q


def _cost_spec(cfg: RunConfig) -> CostSpec:
    pen = cfg.get("transport", "penalty")
    return CostSpec(
        base=cfg.get("transport", "cost"),
        immutable_features=tuple(cfg.items("transport", "immutable")),
        immutable_penalty=FORBID if pen == FORBID else float(pen),
    )


def _pairs(cfg: RunConfig, m: int) -> list[tuple[int, int]]:
    raw = cfg.get("transport", "pairs")
    if not raw:
        return []
    if raw == "all":
        return all_pairs(m, cap=cfg.integer("transport", "max_vars"))
    pairs = []
    for item in raw.split(";"):
        a, _, b = item.partition("-")
        pairs.append((int(a), int(b)))
    return pairs


def cmd_repair(cfg: RunConfig, args) -> int:
    ctx = build_context(cfg)
    out = _prepare_out(cfg)
    p, q = _source_and_counterfactual(ctx)
    schema = ctx.audit.schema
    pairs = _pairs(cfg, len(p))
    support = p.support

    def distance(i: int, l: int) -> float:
        # normalised Hamming distance between source points
        return float(np.mean(support[i] != support[l]))

    plan = plan_between(p, q, _cost_spec(cfg), schema, distance, pairs, cfg.integer("transport", "max_vars"))
    pre = make_preprocessor(plan)
    pre.write(out / "preprocessor.csv", schema)
    write_plan(plan, schema, out)
    print(f"plan {plan.shape[0]}x{plan.shape[1]}, cost {plan.objective:.6g}, TV(pushforward, Q) = {pre.pushforward(p).tv_distance(q):.2e}")
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    if args.draws is not None:
        cfg.override("eval", "draws", args.draws)
    ctx = build_context(cfg)
    out = _prepare_out(cfg)
    path = out / "preprocessor.csv"
    if not path.is_file():
        raise ConfigError(f"preprocessor not found: {path} (run repair first)")
    pre = Preprocessor.read(path, ctx.audit.schema)
    names = cfg.items("eval", "metrics")
    specs = [MetricSpec.parse(n) for n in names] if names else [ctx.spec]
    holdout = ctx.holdout if ctx.holdout is not None else ctx.audit
    mode = cfg.get("eval", "mode")
    ecfg = EvalConfig(
        draws=cfg.integer("eval", "draws"),
        seed=cfg.stage_seed("eval"),
        decision_threshold=ctx.h.threshold,
        gap_threshold=cfg.real("descent", "gap_threshold"),
    )
    report = evaluate_repair(holdout, ctx.h, RepairedScorer(ctx.h, pre, mode), specs, ecfg)
    report.write(out / "eval.csv")
    p, _ = _source_and_counterfactual(ctx)
    write_contrast(contrast_distributions(p, pre.pushforward(p), ctx.audit.schema), out / "contrast.csv")
    for r in report.rows:
        print(f"{r.metric:>4}  gap {r.gap_before: .4f} -> {r.gap_after: .4f}  [{r.diagnostic or r.status}]")
    print(f"target AUC {report.auc_target_before:.3f} -> {report.auc_target_after:.3f}")
    if ctx.population is not None:
        rep = RepairedScorer(ctx.h, pre, "expectation")
        with open(out / "eval_exact.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["metric", "gap_before", "gap_after_source_labels", "gap_after_pushforward"])
            for spec in specs:
                wr.writerow([
                    spec.name,
                    repr(float(metric_exact(spec, ctx.population, ctx.h).gap)),
                    repr(float(repaired_metric_exact(spec, ctx.population, rep, "source").gap)),
                    repr(float(repaired_metric_exact(spec, ctx.population, rep, "pushforward").gap)),
                ])
    if cfg.flag("descent", "hard_fail") and report.messages:
        raise Irreconcilable(report.messages[0])
    return 0


SYNTH_CONFIGS = {
    "two-feature": "[data]\npath = {csv}\npopulation = {pop}\n\n[model]\nscore_column = h\n\n[metric]\nkind = FPR\n\n[descent]\npatience = 0\nmax_iters = 500\n",
    "toy-descent": "[data]\npath = {csv}\npopulation = {pop}\nsplit = staged\n\n[model]\nfit_intercept = false\nthreshold = 0.5\n\n[metric]\nkind = FPR\n\n[descent]\nstep_eps = 0.5\nmax_iters = 60\n",
    "joint-proxy": "[data]\npath = {csv}\npopulation = {pop}\nsplit = staged\n\n[model]\nfit_intercept = false\n\n[metric]\nkind = DA\n\n[descent]\nstep_eps = 0.5\n",
    "bernoulli-sp": "[data]\npath = {csv}\npopulation = {pop}\n\n[model]\nscore_column = h\n\n[metric]\nkind = SP\n",
    "adult-like": "[data]\npath = {csv}\nsplit = staged\n\n[model]\nthreshold = 0.5\n\n[metric]\nkind = SP\n\n[descent]\nstep_eps = 0.5\n\n[eval]\nmetrics = SP\n",
}


def cmd_synth(args) -> int:
    res = generate(args.name, args.n, args.seed)
    out = Path(args.out or ".").resolve()
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{args.name}.csv"
    write_dataset(res.data, csv_path)
    pop_line = ""
    if res.population is not None:
        pop_path = out / f"{args.name}_population.json"
        pop_path.write_text(res.population.to_json())
        pop_line = pop_path.name
    text = SYNTH_CONFIGS[args.name].format(csv=csv_path.name, pop=pop_line)
    text = f"[run]\nseed = {args.seed}\nout = {args.name}_run\n\n" + text
    (out / f"{args.name}.ini").write_text(text)
    print(f"wrote {csv_path} ({len(res.data)} rows)")
    return 0


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cfrepair", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def stage(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path, help="INI run configuration")
        p.add_argument("--seed", type=int, help="override [run] seed")
        p.add_argument("--out", type=Path, help="override [run] out")
        return p

    stage("audit", "disparity metrics in both group directions")
    d = stage("descend", "search for a counterfactual target distribution")
    d.add_argument("--exact", action="store_true", help="descend on the exact population")
    stage("repair", "optimal-transport preprocessor toward the counterfactual")
    e = stage("evaluate", "before/after report on held-out data")
    e.add_argument("--draws", type=int, help="preprocessor draws for randomized evaluation")
    s = sub.add_parser("synth", help="generate a synthetic dataset and starter config")
    s.add_argument("name", choices=sorted(GENERATORS))
    s.add_argument("--n", type=int, default=20000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path)
    return ap


COMMANDS = {"audit": cmd_audit, "descend": cmd_descend, "repair": cmd_repair, "evaluate": cmd_evaluate}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            return cmd_synth(args)
        cfg = RunConfig.load(args.config)
        cfg.override("run", "seed", args.seed)
        cfg.override("run", "out", args.out)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, SchemaError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleTransportError as exc:
        rows = f" (source rows {exc.rows})" if exc.rows else ""
        print(f"error: {exc}{rows}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InfluenceEstimationError, EmptyConditioningError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Irreconcilable as exc:
        print(f"irreconcilable: {exc}", file=sys.stderr)
        return EXIT_IRRECONCILABLE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
