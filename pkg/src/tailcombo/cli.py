"""Command-line entry point.

Settings come from built-in defaults, then an optional INI file (any section
layout; keys are matched by name), then command-line flags.  Every result
file carries a hash of the resolved settings instead of a timestamp, and
``--workers`` never changes the output.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import simstudy
from .data import Sample, parse_terms
from .errors import ConfigError, DataError, TailComboError
from .lincomb import DesignConfig
from .marginals import EmpiricalMarginal, ResponseTransform, rank_to_frechet, rank_to_normal
from .optimize import FitSettings, OptimizerConfig, bootstrap_se, fit_sample
from .parallel import default_workers
from .rng import make_rng
from .selection import (
    CoolingSchedule,
    ModelSpace,
    cv_score,
    exhaustive_search,
    run_chains,
)
from .taildep import gamma_profile

__all__ = ["RunConfig", "ingest", "load_config", "main"]

NA_VALUES = ["", "NA"]


@dataclass
class RunConfig:
    input: str | None = None
    delimiter: str = ","
    response: str | None = None
    covariates: list = field(default_factory=list)
    label_column: str | None = None
    terms: list = field(default_factory=list)
    candidates: list = field(default_factory=list)
    forced: list = field(default_factory=list)
    covariate: str | None = None
    precip_column: str | None = None
    precip_threshold: float = 0.01
    psi_mode: str = "conditional"
    corr_cap: float = 0.9
    response_marginal: str = "rank"
    blended_q: float = 0.95
    sigma: float = 1.25
    r0: float | None = None
    r0_quantile: float = 0.95
    folds: int = 10
    population: int | None = None
    generations: int = 300
    crossover_prob: float = 0.9
    diff_weight: float = 0.8
    restarts: int = 3
    tol: float = 0.0
    free_bound: float = 10.0
    n_boot: int = 200
    quantiles: list = field(default_factory=lambda: [0.80, 0.85, 0.90, 0.95, 0.975, 0.99])
    profile_boot: int = 500
    max_vars: int = 4
    enumeration_cap: int = 100_000
    max_size: int | None = None
    chains: int = 8
    budget: int = 100
    temp0: float = 0.01
    moves_per_temp: int = 10
    init_size: int = 5
    top_m: int = 20
    n: int = 5000
    noise_covariates: int = 0
    seed: int = 0
    outdir: str = "results"
    workers: int | None = None

    def validate(self):
        if not 0.5 < self.r0_quantile < 1.0:
            raise ConfigError("r0_quantile must lie in (0.5, 1)")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        if self.r0 is not None and self.r0 <= 0:
            raise ConfigError("r0 must be positive")
        if self.folds < 2:
            raise ConfigError("folds must be at least 2")
        if self.response_marginal not in ("rank", "blended"):
            raise ConfigError("response_marginal must be 'rank' or 'blended'")
        if self.psi_mode not in ("conditional", "pooled"):
            raise ConfigError("psi_mode must be 'conditional' or 'pooled'")
        if self.seed is None:
            raise ConfigError("a seed is required")
        try:
            self.fit_settings()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def fit_settings(self) -> FitSettings:
        return FitSettings(
            sigma=self.sigma,
            r0=self.r0,
            r0_quantile=self.r0_quantile,
            response_marginal=self.response_marginal,
            blended_q=self.blended_q,
            design=DesignConfig(self.corr_cap, self.precip_threshold, self.psi_mode),
            optimizer=OptimizerConfig(
                population=self.population,
                generations=self.generations,
                crossover_prob=self.crossover_prob,
                diff_weight=self.diff_weight,
                seed=self.seed,
                restarts=self.restarts,
                tol=self.tol,
                free_bound=self.free_bound,
            ),
        )

    def digest(self) -> str:
        """Hash of everything that can change results (not outdir or workers)."""
        d = asdict(self)
        d.pop("outdir")
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


_FIELDS = {f.name: f for f in fields(RunConfig)}
_LISTS = {"covariates", "terms", "candidates", "forced", "quantiles"}
_INTS = {"folds", "population", "generations", "restarts", "n_boot", "profile_boot", "max_vars",
         "enumeration_cap", "max_size", "chains", "budget", "moves_per_temp", "init_size", "top_m",
         "n", "noise_covariates", "seed", "workers"}
_FLOATS = {"precip_threshold", "corr_cap", "blended_q", "sigma", "r0", "r0_quantile",
           "crossover_prob", "diff_weight", "tol", "free_bound", "temp0"}


def _coerce(key: str, value):
    if value is None:
        return None
    if isinstance(value, str) and value.strip().lower() in ("none", ""):
        if key in _LISTS:
            return []
        return None
    try:
        if key in _LISTS:
            items = value if isinstance(value, list) else [v.strip() for v in str(value).split(",") if v.strip()]
            return [float(v) for v in items] if key == "quantiles" else items
        if key in _INTS:
            return int(value)
        if key in _FLOATS:
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    if key == "delimiter" and value in ("tab", "\\t"):
        return "\t"
    return value


def load_config(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            name = key.replace("-", "_")
            if name not in _FIELDS:
                raise ConfigError(f"unknown config key {key!r} in [{section}]")
            out[name] = _coerce(name, value)
    return out


# -- ingestion --------------------------------------------------------------------


@dataclass(frozen=True)
class Ingested:
    sample: Sample
    dropped: int


def ingest(path, cfg: RunConfig, referenced=None) -> Ingested:
    """Read a delimited file with a header row into a Sample.

    Rows with a missing value in any referenced column are dropped; the label
    column, if any, is kept as row labels and never used as a covariate.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file {path} not found")
    try:
        df = pd.read_csv(path, sep=cfg.delimiter, dtype=str, keep_default_na=False,
                         na_values=NA_VALUES, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc
    header = list(df.columns)
    if all(_is_number(h) for h in header):
        raise DataError(f"{path} has no header row")
    if cfg.response is None:
        raise ConfigError("no response column configured")
    label = cfg.label_column
    if label is None and "date" in header:
        label = "date"
    covariates = list(cfg.covariates) or [c for c in header if c not in (cfg.response, label)]
    needed = [cfg.response] + [c for c in (referenced or covariates)]
    for col in [cfg.response, *covariates] + ([label] if label else []):
        if col not in header:
            raise DataError(f"column {col!r} not found in {path}")

    values = {}
    for col in dict.fromkeys([cfg.response, *covariates]):
        raw = df[col]
        num = pd.to_numeric(raw, errors="coerce")
        bad = num.isna() & raw.notna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise DataError(
                f"non-numeric cell {raw.iloc[row]!r} at row {row + 2}, column {col!r}"
            )
        values[col] = num.to_numpy(dtype=float)
    keep = np.ones(len(df), dtype=bool)
    for col in dict.fromkeys(needed):
        keep &= ~np.isnan(values[col])
    dropped = int((~keep).sum())
    if not keep.any():
        raise DataError("no complete rows left after dropping missing values")
    X = np.column_stack([values[c][keep] for c in covariates])
    labels = df[label].to_numpy()[keep] if label else None
    return Ingested(Sample(values[cfg.response][keep], X, tuple(covariates), labels), dropped)


def _is_number(text) -> bool:
    try:
        float(text)
    except (TypeError, ValueError):
        return False
    return True


def _referenced(cfg: RunConfig, terms) -> list:
    cols = []
    for t in terms:
        cols.extend(t.factors)
    if cfg.precip_column:
        cols.append(cfg.precip_column)
    return list(dict.fromkeys(cols))


# -- output -----------------------------------------------------------------------


def _dump_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _dump_csv(path: Path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue())


def _fmt(x) -> str:
    return repr(float(x))


# -- subcommands ------------------------------------------------------------------


def _load(cfg: RunConfig, terms):
    if cfg.input is None:
        raise ConfigError("--input is required for this subcommand")
    got = ingest(cfg.input, cfg, _referenced(cfg, terms) if terms else None)
    if got.dropped:
        print(f"dropped {got.dropped} rows with missing values")
    return got


def _terms(cfg: RunConfig, key="terms"):
    items = getattr(cfg, key)
    if not items:
        raise ConfigError(f"no {key} configured")
    return parse_terms(items)


def cmd_transform(cfg, out: Path, workers: int) -> dict:
    got = _load(cfg, None)
    s = got.sample
    cols = {}
    for name in s.names:
        m = EmpiricalMarginal.from_data(s.column(name))
        if m.is_degenerate:
            raise DataError(f"column {name!r} is constant")
        cols[name] = rank_to_normal(m, s.column(name))
    try:
        tf = ResponseTransform.fit(s.response, cfg.response_marginal, cfg.blended_q)
    except TailComboError as exc:
        raise DataError(f"response transform failed: {exc}") from exc
    y = tf.apply(s.response)
    header = (["label"] if s.labels is not None else []) + ["response_frechet"] + list(s.names)
    rows = []
    for t in range(s.n):
        row = [str(s.labels[t])] if s.labels is not None else []
        row += [_fmt(y[t])] + [_fmt(cols[n][t]) for n in s.names]
        rows.append(row)
    _dump_csv(out / "transform.csv", header, rows)
    return {"rows": s.n, "dropped": got.dropped, "columns": list(s.names)}


def cmd_gamma_profile(cfg, out: Path, workers: int) -> dict:
    got = _load(cfg, None)
    s = got.sample
    name = cfg.covariate or s.names[0]
    m = EmpiricalMarginal.from_data(s.column(name))
    if m.is_degenerate:
        raise DataError(f"column {name!r} is constant")
    x = rank_to_frechet(m, s.column(name))
    y = ResponseTransform.fit(s.response, cfg.response_marginal, cfg.blended_q).apply(s.response)
    prof = gamma_profile(x, y, cfg.quantiles, n_boot=cfg.profile_boot, seed=cfg.seed)
    rows = [[_fmt(q), _fmt(g), _fmt(lo), _fmt(hi)]
            for q, g, lo, hi in zip(prof.quantile, prof.gamma, prof.lo, prof.hi)]
    _dump_csv(out / "profile.csv", ["quantile", "gamma", "lo", "hi"], rows)
    return {"covariate": name, "gamma": [float(g) for g in prof.gamma]}


def cmd_fit(cfg, out: Path, workers: int) -> dict:
    terms = _terms(cfg)
    got = _load(cfg, terms)
    res, obj = fit_sample(got.sample, terms, cfg.fit_settings())
    payload = res.as_dict()
    payload["dropped"] = got.dropped
    _dump_json(out / "fit.json", _stamp(cfg, payload))
    return {"gamma": res.gamma_score, "beta": dict(zip(res.names, res.beta_hat.round(4).tolist()))}


def cmd_cv(cfg, out: Path, workers: int) -> dict:
    terms = _terms(cfg)
    got = _load(cfg, terms)
    res = cv_score(got.sample, terms, cfg.fit_settings(), cfg.folds, cfg.seed, workers)
    payload = res.as_dict()
    payload["terms"] = [t.name for t in terms]
    payload["folds"] = cfg.folds
    _dump_json(out / "cv.json", _stamp(cfg, payload))
    return {"cv": res.score}


def _space(cfg, sample):
    candidates = _terms(cfg, "candidates")
    space = ModelSpace.from_sample(sample, candidates, cfg.corr_cap, cfg.max_size,
                                   precip_threshold=cfg.precip_threshold)
    names = [t.name for t in candidates]
    forced = []
    for f in parse_terms(cfg.forced):
        if f.name not in names:
            raise ConfigError(f"forced term {f.name!r} is not a candidate")
        forced.append(names.index(f.name))
    return space, forced


def _ranking_rows(space, ranked):
    return [[i + 1, bits, _fmt(cv), " ".join(space.candidates[j].name for j, b in enumerate(bits) if b == "1")]
            for i, (bits, cv) in enumerate(ranked)]


def cmd_enumerate(cfg, out: Path, workers: int) -> dict:
    got = _load(cfg, _terms(cfg, "candidates"))
    space, forced = _space(cfg, got.sample)
    ranked = exhaustive_search(got.sample, space, cfg.max_vars, forced, cfg.fit_settings(),
                               cfg.folds, cfg.seed, workers, cfg.enumeration_cap)
    pairs = [(str(m), cv) for m, cv in ranked]
    _dump_csv(out / "search.csv", ["rank", "bits", "cv", "terms"], _ranking_rows(space, pairs))
    return {"models": len(pairs), "best": pairs[0] if pairs else None}


def cmd_search(cfg, out: Path, workers: int, resume: bool = False) -> dict:
    got = _load(cfg, _terms(cfg, "candidates"))
    space, forced = _space(cfg, got.sample)
    inits = [space.random_model(make_rng(cfg.seed, 0x5A, c), cfg.init_size, forced)
             for c in range(cfg.chains)]
    record = run_chains(
        got.sample, space, inits, cfg.fit_settings(),
        CoolingSchedule(cfg.temp0, cfg.moves_per_temp), cfg.budget, cfg.seed, cfg.folds, cfg.seed,
        workers, out / "checkpoint.jsonl", resume, top_m=cfg.top_m,
    )
    best = record.best_list
    _dump_csv(out / "search.csv", ["rank", "bits", "cv", "terms"], _ranking_rows(space, best))
    _dump_json(out / "search.json", _stamp(cfg, {
        "visited": len(record.visited),
        "failures": len(record.failures),
        "best": [{"bits": b, "cv": cv} for b, cv in best],
        "candidates": [t.name for t in space.candidates],
    }))
    return {"visited": len(record.visited), "best": best[0] if best else None}


def cmd_simulate(cfg, out: Path, workers: int) -> dict:
    sample = simstudy.generate(simstudy.SimConfig(n=cfg.n, seed=cfg.seed,
                                                  n_noise_covariates=cfg.noise_covariates))
    header = ["Y"] + list(sample.names)
    rows = [[_fmt(sample.response[t])] + [_fmt(v) for v in sample.covariates[t]] for t in range(sample.n)]
    _dump_csv(out / "simulated.csv", header, rows)
    return {"rows": sample.n, "columns": header}


def cmd_bootstrap(cfg, out: Path, workers: int) -> dict:
    terms = _terms(cfg)
    got = _load(cfg, terms)
    settings = cfg.fit_settings()
    res, _ = fit_sample(got.sample, terms, settings)
    boot = bootstrap_se(got.sample, terms, settings, cfg.n_boot, cfg.seed, workers)
    rows = [[n, _fmt(b), _fmt(se)] for n, b, se in zip(res.names, res.beta_hat, boot.se)]
    _dump_csv(out / "coefficients.csv", ["name", "estimate", "se"], rows)
    payload = boot.as_dict()
    payload["estimate"] = [float(b) for b in res.beta_hat]
    _dump_json(out / "bootstrap.json", _stamp(cfg, payload))
    return {"se": dict(zip(boot.names, np.round(boot.se, 4).tolist()))}


def _stamp(cfg: RunConfig, payload: dict) -> dict:
    return {"config_hash": cfg.digest(), "seed": cfg.seed, "result": payload}


COMMANDS = {
    "transform": cmd_transform,
    "gamma-profile": cmd_gamma_profile,
    "fit": cmd_fit,
    "cv": cmd_cv,
    "enumerate": cmd_enumerate,
    "search": cmd_search,
    "simulate": cmd_simulate,
    "bootstrap": cmd_bootstrap,
}

EXTRAS = {
    "transform": ["response_marginal", "blended_q", "label_column"],
    "gamma-profile": ["covariate", "quantiles", "profile_boot", "response_marginal"],
    "fit": ["terms", "r0", "population", "generations", "restarts", "tol", "precip_column",
            "precip_threshold", "response_marginal"],
    "cv": ["terms", "folds", "r0", "population", "generations", "restarts", "tol",
           "precip_column", "precip_threshold", "response_marginal"],
    "enumerate": ["candidates", "forced", "max_vars", "enumeration_cap", "corr_cap", "folds",
                  "population", "generations", "restarts", "tol", "precip_column"],
    "search": ["candidates", "forced", "chains", "budget", "temp0", "moves_per_temp", "init_size",
               "max_size", "corr_cap", "top_m", "folds", "population", "generations", "restarts",
               "tol", "precip_column"],
    "simulate": ["n", "noise_covariates"],
    "bootstrap": ["terms", "n_boot", "r0", "population", "generations", "restarts", "tol",
                  "precip_column"],
}

HELP = {
    "terms": "comma-separated model terms, e.g. X1,X2,X1*X5,X2^2",
    "candidates": "comma-separated candidate terms for the model search",
    "forced": "candidate terms kept in every model",
    "covariate": "covariate paired with the response (default: first column)",
    "quantiles": "comma-separated radial quantiles",
    "r0": "fixed radial threshold (overrides --r0-quantile)",
    "budget": "proposals per chain",
    "max_vars": "largest number of non-forced terms enumerated",
    "noise_covariates": "number of extra independent N(0,1) columns",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tailcombo", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="delimited text file with a header row")
    common.add_argument("--config", help="INI file with settings (flags win)")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, help="parallel processes (default: all CPUs)")
    common.add_argument("--outdir")
    common.add_argument("--sigma", type=float, help="smooth threshold scale")
    common.add_argument("--r0-quantile", type=float, help="radial quantile used for r0")
    common.add_argument("--response", help="response column")
    common.add_argument("--covariates", help="comma-separated covariate columns (default: all)")
    common.add_argument("--delimiter", help="field separator; 'tab' for tabs")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=f"{name} subcommand")
        for key in EXTRAS[name]:
            p.add_argument("--" + key.replace("_", "-"), help=HELP.get(key))
        if name == "search":
            p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --outdir")
    return parser


def resolve(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        values.update(load_config(args.config))
    for key, value in vars(args).items():
        if key in _FIELDS and value is not None:
            values[key] = _coerce(key, value)
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
        out = Path(cfg.outdir)
        out.mkdir(parents=True, exist_ok=True)
        workers = cfg.workers if cfg.workers is not None else default_workers()
        command = COMMANDS[args.command]
        if args.command == "search":
            summary = command(cfg, out, workers, resume=args.resume)
        else:
            summary = command(cfg, out, workers)
    except TailComboError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(f"{args.command} [config {cfg.digest()}]")
    for key, value in summary.items():
        print(f"  {key}: {value}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
