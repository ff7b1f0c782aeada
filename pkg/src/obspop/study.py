"""Simulation-study orchestration: configs, replicate fan-out, aggregation and files.

A study simulates ``R`` populations for each scenario, fits every requested
estimator to each, and aggregates root-mean-square error, bias and 95%
interval coverage against the replicate's own truths.  Replicate
``(scenario s, replicate r)`` draws its population from
``make_rng(seed, r, s, "population")`` and its fit from
``make_rng(seed, r, s, "fit")``, so results do not depend on worker count
or scheduling.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import stats

from . import __version__
from .data import CaptureDataset
from .dpsampler import DEFAULT_ALPHA_GRID, DEFAULT_Q_LEVELS, PriorConfig, run_chain
from .fspec import FSpec
from .generative import make_scenario, simulate_population, theta_pdf
from .loglinear import FAMILIES, GAMMA_RATE, LogLinearFit, estimate_n_alpha_parametric, fit_family
from .observability import capture_prob
from .stochastic import make_rng, substream_seed

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

ESTIMATORS = ("dp",) + FAMILIES
DEFAULT_ESTIMATORS = ("dp", "darroch", "indirect_poisson", "indirect_gamma")
FULL_R = 200
ETA_GRID = np.linspace(-10.0, 10.0, 401)
ETA_BANDWIDTH = 0.2


class ConfigError(ValueError):
    pass


# -- configuration ---------------------------------------------------------


@dataclass(frozen=True)
class ChainConfig:
    iters: int = 20_000
    burn_in: int = 5_000
    thin: int = 5
    q_levels: tuple = DEFAULT_Q_LEVELS

    def __post_init__(self):
        if self.iters <= self.burn_in or self.burn_in < 0 or self.thin < 1:
            raise ConfigError("need iters > burn_in >= 0 and thin >= 1")
        if not all(0 < q < 1 for q in self.q_levels):
            raise ConfigError("q_levels must lie in (0, 1)")


@dataclass(frozen=True)
class RiskConfig:
    F: str = "beta"
    a: float = 2.0
    b: float = 2.0
    points: tuple = ()
    weights: tuple = ()
    heights: tuple = ()
    N: int = 1000
    R: int = 2000
    alphas: tuple = (0.0,)
    estimators: tuple = ("empirical", "histogram")
    h: float | None = None
    design: str = "population"

    def fspec(self) -> FSpec:
        if self.F == "beta":
            return FSpec.beta(self.a, self.b)
        if self.F == "atoms":
            return FSpec.atoms(self.points, self.weights)
        if self.F == "histogram":
            return FSpec.histogram(self.heights)
        raise ConfigError(f"risk.F must be beta, atoms or histogram, got {self.F!r}")


@dataclass(frozen=True)
class StudyConfig:
    """Everything that determines a study's output bytes."""

    seed: int = 2017
    scenarios: tuple = (1, 2, 3)
    overrides: dict = field(default_factory=dict)
    N: int = 2000
    T: int | None = None
    R: int = 50
    alpha_grid: tuple = DEFAULT_ALPHA_GRID
    estimators: tuple = DEFAULT_ESTIMATORS
    link: str = "logit"
    keep_draws: int = 1
    prior: PriorConfig = PriorConfig()
    chain: ChainConfig = ChainConfig()
    risk: RiskConfig = RiskConfig()

    def __post_init__(self):
        if self.N < 1 or self.R < 1:
            raise ConfigError("N and R must be positive")
        if self.T is not None and self.T < 2:
            raise ConfigError("T must be >= 2")
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad:
            raise ConfigError(f"unknown estimators {sorted(bad)}; choose from {ESTIMATORS}")
        if not all(0 < a < 1 for a in self.alpha_grid):
            raise ConfigError("alpha_grid values must lie in (0, 1)")
        if self.link not in ("logit", "probit"):
            raise ConfigError("link must be logit or probit")
        for s in self.scenarios:
            self.scenario(s)

    def scenario(self, number):
        over = dict(self.overrides.get(str(number), {}))
        if self.T is not None:
            over.setdefault("T", self.T)
        try:
            return make_scenario(int(number), **over)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"scenario {number}: {exc}") from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["prior"] = asdict(self.prior)
        d["chain"] = asdict(self.chain)
        d["risk"] = asdict(self.risk)
        return _jsonable(d)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


_SECTIONS = {"prior": PriorConfig, "chain": ChainConfig, "risk": RiskConfig}


def _coerce(cls, values: Mapping[str, Any], where: str):
    names = {f.name: f for f in fields(cls)}
    unknown = set(values) - set(names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    out = {}
    for k, v in values.items():
        if isinstance(v, list):
            v = tuple(v)
        out[k] = v
    try:
        return cls(**out)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_mapping(raw: Mapping[str, Any]) -> StudyConfig:
    """Validate a nested mapping (as parsed from TOML) into a :class:`StudyConfig`.

    Top-level keys are study fields; ``[prior]``, ``[chain]`` and ``[risk]``
    are sections; ``[overrides.<scenario>]`` holds scenario parameters.
    Unknown keys anywhere are rejected.
    """
    raw = dict(raw)
    sections = {}
    for name, cls in _SECTIONS.items():
        sec = raw.pop(name, {})
        if not isinstance(sec, Mapping):
            raise ConfigError(f"[{name}] must be a table")
        sections[name] = _coerce(cls, sec, f"[{name}]")
    over = raw.pop("overrides", {})
    if not isinstance(over, Mapping) or not all(isinstance(v, Mapping) for v in over.values()):
        raise ConfigError("[overrides] must map scenario numbers to tables")
    over = {str(k): {kk: tuple(vv) if isinstance(vv, list) else vv for kk, vv in v.items()} for k, v in over.items()}
    top = {k: v for k, v in raw.items()}
    allowed = {f.name for f in fields(StudyConfig)} - set(_SECTIONS) - {"overrides"}
    unknown = set(top) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    top = {k: tuple(v) if isinstance(v, list) else v for k, v in top.items()}
    try:
        return StudyConfig(overrides=over, **sections, **top)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> StudyConfig:
    try:
        raw = tomllib.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return config_from_mapping(raw)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


# -- one replicate ---------------------------------------------------------


def _fit_dp(rng, ds: CaptureDataset, cfg: StudyConfig):
    res = run_chain(
        rng, ds, cfg.prior, iters=cfg.chain.iters, burn_in=cfg.chain.burn_in,
        thin=cfg.chain.thin, alpha_grid=cfg.alpha_grid, q_levels=cfg.chain.q_levels,
    )
    sm = res.summary()
    out = {
        "N_hat": sm["N"]["mean"],
        "ci95": sm["N"]["ci95"],
        "ess_N": sm["N"]["ess"],
        "N_alpha": {k: v["mean"] for k, v in sm["N_alpha"].items()},
        "N_alpha_ci95": {k: v["ci95"] for k, v in sm["N_alpha"].items()},
        "alpha_inf": {k: v["alpha"] for k, v in sm["alpha_inf"].items()},
        "N_alpha_inf": {k: v["N_alpha_mean"] for k, v in sm["alpha_inf"].items()},
        "N_LB": sm["N_LB"]["mean"],
    }
    return out, res


def _fit_parametric(ds: CaptureDataset, family: str, cfg: StudyConfig):
    fit = fit_family(ds, family)
    n_alpha, errors = {}, {}
    for a in cfg.alpha_grid:
        try:
            n_alpha[f"{a:g}"] = estimate_n_alpha_parametric(fit, a)
        except ArithmeticError as exc:
            n_alpha[f"{a:g}"] = math.nan
            errors[f"{a:g}"] = f"{type(exc).__name__}: {exc}"
    out = {"N_hat": fit.N_hat, "ci95": list(fit.ci95), "N_alpha": n_alpha, "tau": fit.tau}
    if errors:
        out["N_alpha_errors"] = errors
    return out, fit


def run_replicate(cfg: StudyConfig, scenario_number: int, r: int, keep: bool = False) -> dict:
    """Simulate one population and fit every estimator; failures are recorded, not raised."""
    sc = cfg.scenario(scenario_number)
    pop = simulate_population(make_rng(cfg.seed, r, scenario_number, "population"), sc, cfg.N, link=cfg.link)
    ds = pop.dataset()
    rec = {
        "scenario": scenario_number,
        "replicate": r,
        "population_seed": substream_seed(cfg.seed, r, scenario_number, "population"),
        "fit_seed": substream_seed(cfg.seed, r, scenario_number, "fit"),
        "m": ds.m,
        "N": pop.N,
        "truth": {f"{a:g}": pop.n_alpha(a) for a in cfg.alpha_grid},
        "fits": {},
    }
    artifacts = {}
    for j, est in enumerate(cfg.estimators):
        try:
            if est == "dp":
                # one fit stream per replicate; only the DP fit consumes randomness
                out, obj = _fit_dp(make_rng(cfg.seed, r, scenario_number, "fit"), ds, cfg)
            else:
                out, obj = _fit_parametric(ds, est, cfg)
            rec["fits"][est] = out
            if keep:
                artifacts[est] = obj
        except Exception as exc:  # noqa: BLE001 -- tallied per replicate
            rec["fits"][est] = {"error": f"{type(exc).__name__}: {exc}"}
    if keep:
        rec["_artifacts"] = {"population": pop, "fits": artifacts}
    return rec


def _task(args):
    cfg, s, r, keep = args
    rec = run_replicate(cfg, s, r, keep)
    if keep:
        art = rec.pop("_artifacts")
        rec["_files"] = replicate_files(cfg, s, r, art)
    return rec


# -- per-replicate files ---------------------------------------------------


def draws_csv(res, alpha_grid) -> str:
    """Retained DP draws: N, N_alpha on the grid, N at alpha_inf,0.5, alpha_inf, N_LB, alpha0."""
    a_half = res.alpha_inf_quantile(0.5)
    n_inf = res.n_alpha_at(a_half)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["draw", "N"] + [f"N_alpha_{a:g}" for a in alpha_grid] + ["N_alpha_inf", "alpha_inf", "N_LB", "alpha0"])
    for s in range(res.S):
        w.writerow(
            [s, int(res.N[s])] + [int(v) for v in res.N_alpha[s]]
            + [int(n_inf[s]), repr(float(res.alpha_inf[s])), int(res.N_LB[s]), repr(float(res.alpha0[s]))]
        )
    return buf.getvalue()


def _smooth(eta_atoms, weights, grid=ETA_GRID, bw=ETA_BANDWIDTH):
    eta_atoms = np.asarray(eta_atoms, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    ok = np.isfinite(eta_atoms) & (weights > 0)
    if not ok.any():
        return np.full(grid.size, math.nan)
    w = weights[ok] / weights[ok].sum()
    # weighted Gaussian kernel estimate, chunked to bound memory
    out = np.zeros(grid.size)
    e = eta_atoms[ok]
    for i in range(0, e.size, 4096):
        out += stats.norm.pdf(grid[:, None], e[None, i:i + 4096], bw) @ w[i:i + 4096]
    return out


def _eta(theta, beta, link):
    p = np.clip(capture_prob(np.asarray(theta, dtype=float), beta, link), 1e-300, 1 - 1e-16)
    return np.log(p) - np.log1p(-p)


_THETA_GRID = np.linspace(-30.0, 30.0, 6001)


def true_eta_density(sc, link):
    beta = sc.beta_vector
    if sc.kind == "atoms":
        return _smooth(_eta(np.asarray(sc.params["theta"]), beta, link), sc.params["w"])
    return _smooth(_eta(_THETA_GRID, beta, link), theta_pdf(sc, _THETA_GRID))


def dp_eta_density(res, max_draws=200):
    step = max(1, res.S // max_draws)
    atoms, wts = [], []
    for s in range(0, res.S, step):
        p = np.clip(res.class_p[s], 1e-300, 1 - 1e-16)
        atoms.append(np.log(p) - np.log1p(-p))
        wts.append(res.nu[s])
    return _smooth(np.concatenate(atoms), np.concatenate(wts))


def parametric_eta_density(fit: LogLinearFit):
    """Induced eta density of the fitted G* ∝ G0 / pi_zeta."""
    beta, tau = fit.beta, fit.tau
    if fit.family == "mt":
        return _smooth(_eta(np.zeros(1), beta, "logit"), [1.0])
    if tau is None or not tau > 0:
        return np.full(ETA_GRID.size, math.nan)
    if fit.family == "indirect_poisson":
        k = np.arange(int(stats.poisson.isf(1e-12, tau)) + 2)
        theta = k * math.log(2.0)
        g0 = stats.poisson.pmf(k, tau)
    elif fit.family == "darroch":
        theta = _THETA_GRID
        g0 = stats.norm.pdf(theta, scale=math.sqrt(tau))
    else:
        theta = _THETA_GRID
        g0 = stats.gamma.pdf(-theta, tau, scale=1.0 / GAMMA_RATE)
    inv_pi = np.exp(np.logaddexp(0.0, theta[:, None] + beta).sum(axis=1))
    return _smooth(_eta(theta, beta, "logit"), g0 * inv_pi)


def eta_density_csv(cfg, s, art) -> str:
    sc = cfg.scenario(s)
    cols = {"true": true_eta_density(sc, cfg.link)}
    for est in cfg.estimators:
        obj = art["fits"].get(est)
        if obj is None:
            continue
        cols[est] = dp_eta_density(obj) if est == "dp" else parametric_eta_density(obj)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eta"] + list(cols))
    for i, e in enumerate(ETA_GRID):
        w.writerow([f"{e:.4f}"] + [f"{cols[c][i]:.6e}" for c in cols])
    return buf.getvalue()


def replicate_files(cfg, s, r, art) -> dict:
    files = {}
    if "dp" in art["fits"]:
        files[f"draws_s{s}_r{r}.csv"] = draws_csv(art["fits"]["dp"], np.asarray(sorted(cfg.alpha_grid)))
    if r == 0:
        files[f"eta_s{s}.csv"] = eta_density_csv(cfg, s, art)
    files[f"truth_s{s}_r{r}.json"] = dumps(
        {"N": art["population"].N, "m": art["population"].m,
         "N_alpha": {f"{a:g}": art["population"].n_alpha(a) for a in cfg.alpha_grid}}
    )
    return files


# -- aggregation -----------------------------------------------------------


@dataclass
class SummaryRow:
    scenario: str
    estimator: str
    alpha: float
    delta_rmse: float
    bias: float
    coverage: float | None
    replicates: int
    failed: int


@dataclass
class StudySummary:
    rows: list
    n_failed_replicates: int

    def get(self, scenario, estimator, alpha) -> SummaryRow:
        for row in self.rows:
            if row.scenario == str(scenario) and row.estimator == estimator and abs(row.alpha - alpha) < 1e-12:
                return row
        raise KeyError((scenario, estimator, alpha))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "estimator", "alpha", "delta_rmse", "bias", "coverage", "replicates", "failed"])
        for row in self.rows:
            w.writerow([
                row.scenario, row.estimator, f"{row.alpha:g}", _fmt(row.delta_rmse), _fmt(row.bias),
                "" if row.coverage is None else _fmt(row.coverage), row.replicates, row.failed,
            ])
        return buf.getvalue()

    def to_json(self) -> str:
        return dumps({"rows": [asdict(r) for r in self.rows], "failed_replicates": self.n_failed_replicates})


def _fmt(x):
    return "nan" if x is None or not math.isfinite(x) else f"{x:.6g}"


def _target_values(rec, est, a):
    fit = rec["fits"].get(est, {})
    if "error" in fit:
        return math.nan, None
    if a == 0.0:
        return fit["N_hat"], fit.get("ci95")
    key = f"{a:g}"
    ci = fit.get("N_alpha_ci95", {}).get(key)
    return fit["N_alpha"].get(key, math.nan), ci


def summarize(records: Sequence[dict], cfg: StudyConfig) -> StudySummary:
    """Delta (root-mean-square error), bias and coverage per (scenario, estimator, alpha).

    ``alpha = 0`` is the target N.  Scenario ``"all"`` pools replicates over
    scenarios.  Coverage is reported where the estimator supplies intervals.
    """
    rows = []
    groups = [(str(s), [r for r in records if r["scenario"] == s]) for s in cfg.scenarios]
    if len(cfg.scenarios) > 1:
        groups.append(("all", list(records)))
    for label, recs in groups:
        for est in cfg.estimators:
            for a in (0.0,) + tuple(sorted(cfg.alpha_grid)):
                est_v, truth, hits, n_ci, failed = [], [], 0, 0, 0
                for rec in recs:
                    v, ci = _target_values(rec, est, a)
                    t = rec["N"] if a == 0.0 else rec["truth"][f"{a:g}"]
                    if not math.isfinite(v):
                        failed += 1
                        continue
                    est_v.append(v)
                    truth.append(t)
                    if ci is not None:
                        n_ci += 1
                        hits += ci[0] <= t <= ci[1]
                err = np.asarray(est_v) - np.asarray(truth)
                rows.append(SummaryRow(
                    scenario=label, estimator=est, alpha=a,
                    delta_rmse=float(np.sqrt(np.mean(err**2))) if err.size else math.nan,
                    bias=float(np.mean(err)) if err.size else math.nan,
                    coverage=hits / n_ci if n_ci else None,
                    replicates=int(err.size), failed=failed,
                ))
    n_failed = sum(any("error" in f for f in rec["fits"].values()) for rec in records)
    return StudySummary(rows, n_failed)


def coverage_table_csv(summary: StudySummary, cfg: StudyConfig) -> str:
    """Rows: scenarios; columns: estimators; cells: coverage of the 95% interval for N."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario"] + list(cfg.estimators))
    for s in cfg.scenarios:
        row = [cfg.scenario(s).name]
        for est in cfg.estimators:
            c = summary.get(s, est, 0.0).coverage
            row.append("" if c is None else f"{c:.2f}")
        w.writerow(row)
    return buf.getvalue()


def alphas_table_csv(summary: StudySummary, cfg: StudyConfig) -> str:
    """Rows: estimators; columns: Delta for N then for each alpha, pooled over scenarios."""
    label = "all" if len(cfg.scenarios) > 1 else str(cfg.scenarios[0])
    alphas = tuple(sorted(cfg.alpha_grid))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["estimator", "N"] + [f"N_{a:g}" for a in alphas])
    for est in cfg.estimators:
        w.writerow([est] + [f"{summary.get(label, est, a).delta_rmse:.1f}" for a in (0.0,) + alphas])
    return buf.getvalue()


def estimates_csv(records, cfg) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "replicate", "m", "estimator", "alpha", "truth", "estimate", "lo", "hi", "error"])
    for rec in records:
        for est in cfg.estimators:
            fit = rec["fits"].get(est, {})
            for a in (0.0,) + tuple(sorted(cfg.alpha_grid)):
                v, ci = _target_values(rec, est, a)
                t = rec["N"] if a == 0.0 else rec["truth"][f"{a:g}"]
                lo, hi = ci if ci is not None else ("", "")
                w.writerow([
                    rec["scenario"], rec["replicate"], rec["m"], est, f"{a:g}", t,
                    _fmt(v), lo if lo == "" else _fmt(lo), hi if hi == "" else _fmt(hi), fit.get("error", ""),
                ])
    return buf.getvalue()


def m_summary(records, scenarios) -> dict:
    out = {}
    for s in scenarios:
        ms = np.array([r["m"] for r in records if r["scenario"] == s])
        if ms.size:
            q = np.quantile(ms, [0.05, 0.25, 0.5, 0.75, 0.95])
            out[str(s)] = {"min": int(ms.min()), "q05": q[0], "q25": q[1], "median": q[2],
                           "q75": q[3], "q95": q[4], "max": int(ms.max())}
    return out


def manifest(cfg: StudyConfig, records, command: str) -> dict:
    return {
        "command": command,
        "version": __version__,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "m_distribution": m_summary(records, cfg.scenarios),
        "replicates": [
            {k: rec[k] for k in ("scenario", "replicate", "population_seed", "fit_seed", "m") if k in rec}
            for rec in records
        ],
    }


# -- drivers ---------------------------------------------------------------


def _map(fn, tasks, workers):
    if workers and workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, tasks, chunksize=1))
    return [fn(t) for t in tasks]


def run_study(cfg: StudyConfig, out: Path | None = None, workers: int = 1):
    """Run every (scenario, replicate), write files to ``out``; returns (summary, records)."""
    tasks = [(cfg, s, r, r < cfg.keep_draws) for s in cfg.scenarios for r in range(cfg.R)]
    records = _map(_task, tasks, workers)
    records.sort(key=lambda rec: (cfg.scenarios.index(rec["scenario"]), rec["replicate"]))
    summary = summarize(records, cfg)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for rec in records:
            for name, text in rec.pop("_files", {}).items():
                (out / name).write_text(text)
        (out / "summary.csv").write_text(summary.to_csv())
        (out / "summary.json").write_text(summary.to_json())
        (out / "coverage.csv").write_text(coverage_table_csv(summary, cfg))
        (out / "alphas.csv").write_text(alphas_table_csv(summary, cfg))
        (out / "estimates.csv").write_text(estimates_csv(records, cfg))
        (out / "replicates.json").write_text(dumps(records))
        (out / "manifest.json").write_text(dumps(manifest(cfg, records, "study")))
    else:
        for rec in records:
            rec.pop("_files", None)
    return summary, records


def _simulate_task(args):
    cfg, s, r = args
    sc = cfg.scenario(s)
    pop = simulate_population(make_rng(cfg.seed, r, s, "population"), sc, cfg.N, link=cfg.link)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["theta", "p"] + [f"x{t + 1}" for t in range(sc.T)])
    for th, p, row in zip(pop.theta, pop.p, pop.histories):
        w.writerow([repr(float(th)), repr(float(p))] + row.tolist())
    truth = {"scenario": s, "replicate": r, "N": pop.N, "m": pop.m,
             "N_alpha": {f"{a:g}": pop.n_alpha(a) for a in cfg.alpha_grid}}
    rec = {"scenario": s, "replicate": r, "population_seed": substream_seed(cfg.seed, r, s, "population"), "m": pop.m}
    return rec, {f"population_s{s}_r{r}.csv": buf.getvalue(), f"truth_s{s}_r{r}.json": dumps(truth),
                 f"observed_s{s}_r{r}.csv": pop.dataset().to_csv(header=True)}


def run_simulate(cfg: StudyConfig, out: Path, workers: int = 1):
    tasks = [(cfg, s, r) for s in cfg.scenarios for r in range(cfg.R)]
    results = _map(_simulate_task, tasks, workers)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for rec, files in results:
        records.append(rec)
        for name, text in files.items():
            (out / name).write_text(text)
    (out / "manifest.json").write_text(dumps(manifest(cfg, records, "simulate")))
    return records
