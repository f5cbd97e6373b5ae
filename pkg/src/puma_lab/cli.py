"""Config-driven command line: ``puma-lab <command> --config <path>``.

Config files are INI-like: ``key = value`` lines, grouped under ``[section]``
headers. Keys before the first header (``command``, ``seed``, ``out``) belong
to the root. Unknown sections or keys are errors.

Exit status: 0 success, 1 verification failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import math
import os
import statistics
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence as Seq

from . import analysis
from .dist import (
    TabularDistribution,
    ZmSpec,
    build_tabular,
    build_zm,
    point_mass,
    three_point_asymmetric,
    two_point_uniform,
)
from .policy import KINDS, PolicySpec
from .stages import KSchedule
from .trainer_experiments import (
    RunConfig,
    ThresholdUnreachable,
    compare_runs,
    first_step_reaching,
    metrics_csv,
    run_training,
)

COMMANDS = ("verify-marginal", "verify-minimizer", "sample-complexity", "train", "compare", "plot")
ROOT = "root"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    """Invalid configuration; the message lists every problem found."""


# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class Param:
    kind: str  # int, float, bool, str, choice, list
    default: Any = None
    check: Optional[Callable[[Any], bool]] = None
    rule: str = ""
    choices: tuple = ()


def _p(kind, default=None, check=None, rule="", choices=()):
    return Param(kind, default, check, rule, tuple(choices))


POSITIVE = (lambda v: v >= 1, ">= 1")
NONNEG = (lambda v: v >= 0, ">= 0")
UNIT_OPEN = (lambda v: 0 < v < 1, "in (0, 1)")

SCHEMA: dict[str, dict[str, Param]] = {
    ROOT: {
        "command": _p("choice", None, choices=COMMANDS),
        "seed": _p("int", 0, *NONNEG),
        "out": _p("str", None),
    },
    "dist": {
        "kind": _p("choice", "two_point", choices=("two_point", "three_point", "zm", "point_mass", "table")),
        "m": _p("int", 4, lambda v: v >= 4 and v % 2 == 0, "even and >= 4"),
        "d": _p("int", 2, *POSITIVE),
        "eta": _p("float", 0.1, lambda v: 0 < v < 0.5, "in (0, 0.5)"),
        "vocab": _p("int", None, lambda v: v >= 2, ">= 2"),
        "support": _p("str", None),
        "sequence": _p("str", None),
        "answer_index": _p("int", None, *NONNEG),
    },
    "policy": {
        "kind": _p("choice", "max_prob", choices=KINDS),
        "count": _p("int", None, *POSITIVE),
        "threshold": _p("float", None, lambda v: 0 < v <= 1, "in (0, 1]"),
        "block_size": _p("int", None, *POSITIVE),
    },
    "chain": {
        "K": _p("int", 4, *POSITIVE),
        "mode": _p("choice", "exact", choices=("exact", "monte-carlo")),
        "runs": _p("int", 100_000, *POSITIVE),
        "prompt": _p("str", ""),
        "forward": _p("list", ("iid", "teacher-forced"), choices=analysis.FORWARD_KINDS),
        "weighting": _p("choice", "none", choices=("none", "inv_t")),
    },
    "train": {
        "method": _p("choice", "puma", choices=("vanilla", "puma")),
        "batch_size": _p("int", 32, *POSITIVE),
        "lr": _p("float", 0.1, lambda v: v > 0, "> 0"),
        "total_steps": _p("int", 200, *POSITIVE),
        "eval_every": _p("int", 10, *POSITIVE),
        "K0": _p("int", None, *POSITIVE),
        "k_increment": _p("int", 0, *NONNEG),
        "k_period": _p("int", 1, *POSITIVE),
        "K_max": _p("int", None, *POSITIVE),
        "eval_K": _p("int", None, *POSITIVE),
        "eval_policy": _p("choice", "max_prob", choices=KINDS),
        "eval_samples": _p("int", 500, *POSITIVE),
        "eval_greedy": _p("bool", False),
        "traj_probes": _p("int", 100, *NONNEG),
        "prompt_len": _p("int", 0, *NONNEG),
    },
    "complexity": {
        "d_range": _p("str", "2..8"),
        "d_step": _p("int", 2, *POSITIVE),
        "m": _p("int", 4, lambda v: v >= 4 and v % 2 == 0, "even and >= 4"),
        "eta": _p("float", 0.1, lambda v: 0 < v < 0.5, "in (0, 0.5)"),
        "q": _p("float", 0.5, *UNIT_OPEN),
        "delta": _p("float", 0.1, *UNIT_OPEN),
        "seeds": _p("int", 10, *POSITIVE),
        "trials": _p("int", 200, *POSITIVE),
        "budget_samples": _p("int", 50_000, *POSITIVE),
        "budget_trajectories": _p("int", 200, *POSITIVE),
        "growth": _p("float", 1.1, lambda v: v > 1, "> 1"),
        "uniform_t": _p("bool", False),
        "methods": _p("list", analysis.METHODS, choices=analysis.METHODS),
    },
    "compare": {
        "method_a": _p("choice", "vanilla", choices=("vanilla", "puma")),
        "method_b": _p("choice", "puma", choices=("vanilla", "puma")),
        "threshold": _p("float", 0.8, lambda v: 0 <= v <= 1, "in [0, 1]"),
        "seeds": _p("int", 5, *POSITIVE),
        "metric": _p("choice", "gen_accuracy", choices=("gen_accuracy",)),
    },
    "plot": {
        "inputs": _p("list", ()),
        "labels": _p("list", ()),
        "x": _p("str", None),
        "y": _p("str", "gen_accuracy"),
        "yscale": _p("choice", "linear", choices=("linear", "log")),
        "title": _p("str", ""),
        "output": _p("str", "plot.svg"),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    seed: int = 0
    out_dir: Optional[str] = None
    params: dict = field(default_factory=dict)
    base_dir: str = "."

    def section(self, name: str) -> dict:
        return self.params[name]

    def __eq__(self, other):
        if not isinstance(other, ExperimentConfig):
            return NotImplemented
        return (self.command, self.seed, self.out_dir, self.params) == (
            other.command, other.seed, other.out_dir, other.params)


def _convert(raw: str, spec: Param):
    raw = raw.strip()
    if spec.kind == "int":
        return int(raw)
    if spec.kind == "float":
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError(f"{raw!r} is not finite")
        return v
    if spec.kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"{raw!r} is not a boolean")
    if spec.kind == "choice":
        if raw not in spec.choices:
            raise ValueError(f"{raw!r} is not one of {', '.join(spec.choices)}")
        return raw
    if spec.kind == "list":
        items = tuple(s.strip() for s in raw.split(",") if s.strip())
        bad = [s for s in items if spec.choices and s not in spec.choices]
        if bad:
            raise ValueError(f"{', '.join(bad)} not in {', '.join(spec.choices)}")
        return items
    return raw


def _format(value, spec: Param) -> str:
    if spec.kind == "bool":
        return "true" if value else "false"
    if spec.kind == "float":
        return repr(float(value))
    if spec.kind == "list":
        return ", ".join(value)
    return str(value)


def parse_config_text(text: str, base_dir: str = ".", overrides: Optional[dict] = None) -> ExperimentConfig:
    """Parse and validate config text. All problems are collected into one
    :class:`ConfigError`; syntax errors carry their line number."""
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), default_section="__defaults__"
    )
    parser.optionxform = str
    try:
        parser.read_string(f"[{ROOT}]\n" + text)
    except configparser.ParsingError as exc:
        lines = "; ".join(f"line {n - 1}: {line.strip()}" for n, line in exc.errors)
        raise ConfigError(f"cannot parse config ({lines})") from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(f"line {exc.lineno - 1}: {exc.message.split(': ', 1)[-1]}") from None
    except configparser.MissingSectionHeaderError as exc:  # pragma: no cover - root header is prepended
        raise ConfigError(f"line {exc.lineno - 1}: missing section header") from None

    errors: list[str] = []
    params: dict[str, dict] = {name: {k: p.default for k, p in keys.items()} for name, keys in SCHEMA.items()}
    for section in parser.sections():
        if section not in SCHEMA:
            errors.append(f"unknown section [{section}]")
            continue
        for key, raw in parser.items(section):
            where = key if section == ROOT else f"{section}.{key}"
            spec = SCHEMA[section].get(key)
            if spec is None:
                errors.append(f"unknown key {key!r} in [{section}]" if section != ROOT else f"unknown key {key!r}")
                continue
            try:
                value = _convert(raw, spec)
            except ValueError as exc:
                errors.append(f"{where}: {exc}")
                continue
            if spec.check is not None and not spec.check(value):
                errors.append(f"{where} = {raw.strip()} out of range (must be {spec.rule})")
                continue
            params[section][key] = value

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "command" and params[ROOT]["command"] not in (None, value):
            errors.append(f"config is for {params[ROOT]['command']!r}, not {value!r}")
        params[ROOT][key] = value
    root = params.pop(ROOT)
    if root["command"] is None:
        errors.append("missing required key 'command'")
    errors += _cross_checks(root["command"], params, base_dir)
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return ExperimentConfig(root["command"], root["seed"], root["out"], params, base_dir)


def _cross_checks(command, params, base_dir) -> list[str]:
    errors = []
    d = params["dist"]
    if d["kind"] == "table" and not d["support"]:
        errors.append("dist.support is required when dist.kind = table")
    if d["kind"] == "point_mass" and not d["sequence"]:
        errors.append("dist.sequence is required when dist.kind = point_mass")
    tr = params["train"]
    if tr["total_steps"] % tr["eval_every"]:
        errors.append(f"train.eval_every = {tr['eval_every']} must divide train.total_steps = {tr['total_steps']}")
    if tr["K_max"] is not None and tr["K0"] is not None and tr["K_max"] < tr["K0"]:
        errors.append("train.K_max must be >= train.K0")
    if command == "plot":
        pl = params["plot"]
        if not pl["inputs"]:
            errors.append("plot.inputs is required for the plot command")
        for p in pl["inputs"]:
            if not (Path(base_dir) / p).is_file():
                errors.append(f"plot input {p!r} does not exist")
        if pl["labels"] and len(pl["labels"]) != len(pl["inputs"]):
            errors.append("plot.labels must match plot.inputs in number")
    try:
        _d_values(params["complexity"])
    except ValueError as exc:
        errors.append(f"complexity.d_range: {exc}")
    if params["chain"]["prompt"]:
        try:
            _tokens(params["chain"]["prompt"])
        except ValueError:
            errors.append(f"chain.prompt: {params['chain']['prompt']!r} is not a token list")
    return errors


def parse_config(path: str | os.PathLike, overrides: Optional[dict] = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path.parent), overrides)


def format_config(cfg: ExperimentConfig) -> str:
    """Normalized config text; parsing it yields an equal config."""
    lines = [f"command = {cfg.command}", f"seed = {cfg.seed}"]
    if cfg.out_dir is not None:
        lines.append(f"out = {cfg.out_dir}")
    for name, keys in SCHEMA.items():
        if name == ROOT:
            continue
        lines += ["", f"[{name}]"]
        for key, spec in keys.items():
            value = cfg.params[name][key]
            if value is None or (spec.kind == "list" and not value):
                continue
            lines.append(f"{key} = {_format(value, spec)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# builders


def _tokens(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


def _d_values(cx: dict) -> list[int]:
    text = cx["d_range"].strip()
    if ".." in text:
        lo, hi = (int(s) for s in text.split(".."))
        values = list(range(lo, hi + 1, cx["d_step"]))
    else:
        values = [int(s) for s in text.split(",")]
    if not values or min(values) < 1:
        raise ValueError(f"{text!r} must list at least one d >= 1")
    return values


def build_distribution(cfg: ExperimentConfig) -> TabularDistribution:
    d = cfg.section("dist")
    kind = d["kind"]
    if kind == "two_point":
        return two_point_uniform()
    if kind == "three_point":
        return three_point_asymmetric()
    if kind == "zm":
        return build_zm(ZmSpec(m=d["m"], d=d["d"], eta=d["eta"]))
    if kind == "point_mass":
        x = _tokens(d["sequence"])
        return point_mass(x, d["vocab"] or max(2, max(x) + 1))
    support = []
    for entry in d["support"].split(";"):
        if not entry.strip():
            continue
        seq, _, weight = entry.partition(":")
        support.append((_tokens(seq), float(weight) if weight.strip() else 1.0))
    length = len(support[0][0])
    vocab = d["vocab"] or max(2, 1 + max(max(s) for s, _ in support))
    return build_tabular(length, vocab, support, d["answer_index"])


def build_policy(cfg: ExperimentConfig) -> PolicySpec:
    p = cfg.section("policy")
    return PolicySpec(p["kind"], p["count"], p["threshold"], p["block_size"])


def build_run_config(cfg: ExperimentConfig, dist: TabularDistribution) -> RunConfig:
    tr = cfg.section("train")
    L_eff = dist.length - tr["prompt_len"]
    schedule = KSchedule(tr["K0"] or L_eff, tr["k_increment"], tr["k_period"], tr["K_max"])
    policy = build_policy(cfg)
    eval_policy = PolicySpec(tr["eval_policy"], count=1, block_size=policy.block_size)
    return RunConfig(
        dist=dist, method=tr["method"], policy=policy, schedule=schedule,
        batch_size=tr["batch_size"], lr=tr["lr"], total_steps=tr["total_steps"],
        eval_every=tr["eval_every"], eval_policy=eval_policy, eval_K=tr["eval_K"],
        eval_samples=tr["eval_samples"], eval_greedy=tr["eval_greedy"],
        traj_probes=tr["traj_probes"], seed=cfg.seed, prompt_len=tr["prompt_len"],
    )


# ---------------------------------------------------------------------------
# output


def write_atomic(path: Path, text: str) -> None:
    """Write via a temp file in the same directory and rename into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(header: str, rows: Seq[str]) -> str:
    return "\n".join([header, *rows]) + "\n"


# ---------------------------------------------------------------------------
# commands


def _map(jobs: int, fn, items):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def cmd_verify_marginal(cfg: ExperimentConfig, out: Path, jobs: int) -> int:
    dist, policy, ch = build_distribution(cfg), build_policy(cfg), cfg.section("chain")
    prompt = _tokens(ch["prompt"])
    report = analysis.verify_marginal_agreement(
        dist, policy, ch["K"], ch["mode"], ch["runs"], cfg.seed, prompt)
    rows = [f"{j},{tv!r},{tol!r}" for j, (tv, tol) in enumerate(zip(report.tv, report.tolerance))]
    write_atomic(out / "marginal.csv", _csv("step,tv,tolerance", rows))
    tol = max(report.tolerance)
    if report.passed:
        print(f"verify-marginal [{dist.name}, {policy.kind}, K={ch['K']}]: PASS max_tv < {tol:g} (max_tv = {report.max_tv:.3g})")
        return EXIT_OK
    print(f"verify-marginal [{dist.name}, {policy.kind}, K={ch['K']}]: FAIL max_tv = {report.max_tv:.3g} >= {tol:g}")
    return EXIT_FAIL


def cmd_verify_minimizer(cfg: ExperimentConfig, out: Path, jobs: int) -> int:
    dist, policy, ch = build_distribution(cfg), build_policy(cfg), cfg.section("chain")
    prompt = _tokens(ch["prompt"])
    status, rows = EXIT_OK, []
    for kind in ch["forward"]:
        rep = analysis.verify_minimizer_preservation(dist, kind, policy, ch["K"], prompt, ch["weighting"])
        ok = rep.passed()
        rows.append(f"{kind},{rep.max_deviation!r},{rep.contexts},{str(ok).lower()}")
        verdict = "PASS" if ok else "FAIL"
        print(f"verify-minimizer [{dist.name}, {kind}]: {verdict} max_deviation = {rep.max_deviation:.3g} over {rep.contexts} contexts")
        if not ok:
            status = EXIT_FAIL
    write_atomic(out / "minimizer.csv", _csv("forward,max_deviation,contexts,passed", rows))
    return status


def _complexity_job(args):
    d, method, cx, seed = args
    return analysis.sample_complexity_experiment(
        [d], m=cx["m"], eta=cx["eta"], q=cx["q"], delta=cx["delta"], seeds=cx["seeds"],
        trials=cx["trials"], master_seed=seed, budget_samples=cx["budget_samples"],
        budget_trajectories=cx["budget_trajectories"], growth=cx["growth"],
        uniform_t=cx["uniform_t"], methods=[method],
    )


def cmd_sample_complexity(cfg: ExperimentConfig, out: Path, jobs: int) -> int:
    cx = cfg.section("complexity")
    jobs_list = [(d, m, cx, cfg.seed) for d in _d_values(cx) for m in cx["methods"]]
    rows = [r for chunk in _map(jobs, _complexity_job, jobs_list) for r in chunk]
    write_atomic(out / "complexity.csv", _csv(analysis.ComplexityRow.CSV_HEADER, [r.to_csv() for r in rows]))
    censored = sum(r.censored for r in rows)
    for method in cx["methods"]:
        med = analysis.median_by_d(rows, method)
        print(f"sample-complexity [{method}]: median samples by d = {med}")
    if censored:
        print(f"sample-complexity: {censored} rows hit the sample budget")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, out: Path, jobs: int) -> int:
    run_cfg = build_run_config(cfg, build_distribution(cfg))
    result = run_training(run_cfg, return_result=True)
    write_atomic(out / "metrics.csv", metrics_csv(result.rows))
    write_atomic(out / "model.txt", result.model.to_text())
    last = result.rows[-1]
    print(f"train [{run_cfg.method}]: step {last.step} gen_accuracy = {last.gen_accuracy:.4f} posterior_l1 = {last.posterior_l1:.4f}")
    return EXIT_OK


def _train_job(run_cfg):
    return run_training(run_cfg)


def cmd_compare(cfg: ExperimentConfig, out: Path, jobs: int) -> int:
    base = build_run_config(cfg, build_distribution(cfg))
    cp = cfg.section("compare")
    a, b = base.replace(method=cp["method_a"]), base.replace(method=cp["method_b"])
    seeds = [cfg.seed + s for s in range(cp["seeds"])]
    runs: dict = {}

    def runner(cfgs):
        results = _map(jobs, _train_job, list(cfgs))
        for c, rows in zip(cfgs, results):
            runs[(c.method, c.seed)] = rows
        return results

    try:
        cmp = compare_runs(a, b, cp["threshold"], seeds, cp["metric"], runner=runner)
        status = EXIT_OK
    except ThresholdUnreachable as exc:
        cmp, status = None, EXIT_FAIL
        print(f"compare: threshold unreachable ({exc})")
    for (method, seed), rows in runs.items():
        write_atomic(out / f"metrics_{method}_seed{seed}.csv", metrics_csv(rows))
    lines = []
    for seed in seeds:
        sa = first_step_reaching(runs[(a.method, seed)], cp["threshold"], cp["metric"])
        sb = first_step_reaching(runs[(b.method, seed)], cp["threshold"], cp["metric"])
        lines.append(f"{seed},{sa!r},{sb!r}")
    write_atomic(out / "compare.csv", _csv("seed,steps_a,steps_b", lines))
    if cmp is not None:
        print(f"compare [{a.method} / {b.method}]: median steps ratio = {cmp.ratio:.3g}; "
              f"{b.method} earlier on {cmp.wins_b}/{len(seeds)} seeds")
    return status


def cmd_plot(cfg: ExperimentConfig, out: Path, jobs: int) -> int:
    pl = cfg.section("plot")
    paths = [Path(cfg.base_dir) / p for p in pl["inputs"]]
    svg = emit_plot(paths, y=pl["y"], x=pl["x"], labels=pl["labels"] or None,
                    yscale=pl["yscale"], title=pl["title"])
    write_atomic(out / pl["output"], svg)
    print(f"plot: wrote {out / pl['output']}")
    return EXIT_OK


HANDLERS = {
    "verify-marginal": cmd_verify_marginal,
    "verify-minimizer": cmd_verify_minimizer,
    "sample-complexity": cmd_sample_complexity,
    "train": cmd_train,
    "compare": cmd_compare,
    "plot": cmd_plot,
}


# ---------------------------------------------------------------------------
# SVG plots


class PlotError(ValueError):
    pass


def _read_series(path: Path, x: Optional[str], y: str, label: Optional[str]) -> tuple[str, dict[str, list[tuple[float, float]]]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise PlotError(f"{path} has no data rows")
    cols = rows[0].keys()
    x = x or ("step" if "step" in cols else "d")
    for col in (x, y):
        if col not in cols:
            raise PlotError(f"{path} has no column {col!r}")
    groups: dict[str, dict[float, list[float]]] = {}
    for r in rows:
        name = r["method"] if "method" in cols else (label or path.stem)
        if "method" in cols and label:
            name = f"{label} {name}"
        groups.setdefault(name, {}).setdefault(float(r[x]), []).append(float(r[y]))
    # repeated x values (several seeds) collapse to their median
    return x, {k: sorted((xv, statistics.median(ys)) for xv, ys in g.items()) for k, g in groups.items()}


PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def emit_plot(
    csv_paths: Seq[str | os.PathLike],
    y: str,
    x: Optional[str] = None,
    labels: Optional[Seq[str]] = None,
    yscale: str = "linear",
    title: str = "",
    width: int = 640,
    height: int = 420,
) -> str:
    """Standalone SVG line plot, one polyline per series, with a legend."""
    if not csv_paths:
        raise PlotError("no input CSVs")
    series: dict[str, list[tuple[float, float]]] = {}
    x_name = x
    for k, p in enumerate(csv_paths):
        x_name, s = _read_series(Path(p), x, y, labels[k] if labels else None)
        series.update(s)
    pts = [pt for s in series.values() for pt in s if math.isfinite(pt[1])]
    if yscale == "log":
        if any(v <= 0 for _, v in pts):
            raise PlotError(f"log scale needs positive {y} values")
        tf = math.log10
    else:
        tf = float
    if not pts:
        raise PlotError("no finite points to plot")
    xs = [p[0] for p in pts]
    ys = [tf(p[1]) for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    ml, mr, mt, mb = 70, 150, 40, 50
    pw, ph = width - ml - mr, height - mt - mb

    def px(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def py(v):
        return mt + ph - (tf(v) - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{ml + pw / 2:.1f}" y="24" text-anchor="middle" font-size="15" font-family="sans-serif">{_esc(title)}</text>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
    ]
    for k in range(5):
        xv = x0 + (x1 - x0) * k / 4
        yv = y0 + (y1 - y0) * k / 4
        ylab = 10 ** yv if yscale == "log" else yv
        yy = mt + ph - ph * k / 4
        out.append(f'<text x="{px(xv):.1f}" y="{mt + ph + 18}" text-anchor="middle" font-size="11" font-family="sans-serif">{xv:.4g}</text>')
        out.append(f'<text x="{ml - 6}" y="{yy + 4:.1f}" text-anchor="end" font-size="11" font-family="sans-serif">{ylab:.3g}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="12" font-family="sans-serif">{_esc(x_name)}</text>')
    ylabel = f"{y} (log)" if yscale == "log" else y
    out.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" font-size="12" font-family="sans-serif" transform="rotate(-90 16 {mt + ph / 2:.1f})">{_esc(ylabel)}</text>')
    for k, (name, s) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        coords = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in s if math.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        ly = mt + 10 + 18 * k
        out.append(f'<line x1="{ml + pw + 12}" y1="{ly}" x2="{ml + pw + 32}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 38}" y="{ly + 4}" font-size="11" font-family="sans-serif">{_esc(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# ---------------------------------------------------------------------------
# entry point


def output_dir(cfg: ExperimentConfig, flag: Optional[str]) -> Path:
    """``--out`` wins, then ``PUMA_LAB_OUT``, then the config's ``out``, then ``./out``."""
    return Path(flag or os.environ.get("PUMA_LAB_OUT") or cfg.out_dir or "out")


def run(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> int:
    write_atomic(out / "config.ini", format_config(cfg))
    return HANDLERS[cfg.command](cfg, out, jobs)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="puma-lab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="path to the experiment config")
    ap.add_argument("--out", help="output directory (overrides PUMA_LAB_OUT)")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for independent sub-runs")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    return ap


def main(argv: Optional[Seq[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be >= 0", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = parse_config(args.config, overrides={"command": args.command, "seed": args.seed})
        return run(cfg, output_dir(cfg, args.out), args.jobs)
    except (ConfigError, PlotError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
