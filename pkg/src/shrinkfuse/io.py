"""CSV ingestion and emission, and the TOML experiment manifest.

CSV conventions: comma separated, header row required, ``.`` decimal point,
floats written with ``repr`` so a parse of an emitted file reproduces the
values bit for bit.  Missing values are empty cells or ``NA``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .errors import DimensionMismatch, EmptyAfterFiltering, InvalidConfig, MissingColumn, NonBinaryResponse
from .fusion import METHODS, EstimateReport
from .glm import Dataset, Source
from .sim import DEFAULT_MISSING_COEF, BiasMechanism, ScenarioConfig, SimulationResult

log = logging.getLogger(__name__)

INTERCEPT = "(Intercept)"
_MISSING = {"", "NA", "NaN", "nan", "na", "."}


@dataclass(frozen=True)
class ColumnSpec:
    response: str
    covariates: tuple[str, ...] | None = None
    source: str | None = None

    def __post_init__(self):
        if self.covariates is not None:
            covs = tuple(self.covariates)
            if not covs:
                raise InvalidConfig("covariate list is empty")
            if self.response in covs:
                raise InvalidConfig(f"response {self.response!r} is also listed as a covariate")
            object.__setattr__(self, "covariates", covs)


def fmt(x) -> str:
    if x is None:
        return "NA"
    x = float(x)
    if math.isnan(x):
        return "NA"
    return repr(x)


def parse_float(s: str) -> float:
    return math.nan if s.strip() in _MISSING else float(s)


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyAfterFiltering(f"{path} is empty")
        rows = [r for r in reader if r and not r[0].startswith("#")]
    return header, rows


def _coerce_response(value: str, where: str) -> float:
    v = value.strip()
    if v in _MISSING:
        return math.nan
    try:
        x = float(v)
    except ValueError:
        raise NonBinaryResponse(f"response value {v!r} in {where} is not 0/1")
    if x not in (0.0, 1.0):
        raise NonBinaryResponse(f"response value {v!r} in {where} is not 0/1")
    return x


def _table(path, spec: ColumnSpec, covariates, source_col=None):
    header, rows = _read_rows(path)
    idx = {name: j for j, name in enumerate(header)}
    wanted = [spec.response, *covariates] + ([source_col] if source_col else [])
    missing = [c for c in wanted if c not in idx]
    if missing:
        raise MissingColumn(f"{path}: missing column(s) {missing}")
    y, X, src, dropped = [], [], [], 0
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DimensionMismatch(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        resp = _coerce_response(row[idx[spec.response]], f"{path}:{lineno}")
        try:
            xs = [parse_float(row[idx[c]]) for c in covariates]
        except ValueError as exc:
            raise DimensionMismatch(f"{path}:{lineno}: non-numeric covariate ({exc})")
        if math.isnan(resp) or any(math.isnan(v) for v in xs):
            dropped += 1
            continue
        y.append(resp)
        X.append(xs)
        if source_col:
            src.append(row[idx[source_col]].strip())
    return np.asarray(y), np.asarray(X, dtype=float).reshape(len(y), len(covariates)), src, dropped


def _dataset(y, X, covariates, tag, path):
    if y.shape[0] == 0:
        raise EmptyAfterFiltering(f"{path}: no complete rows for source {tag.value}")
    X = np.column_stack([np.ones(y.shape[0]), X])
    return Dataset(y, X, tag, (INTERCEPT, *covariates))


def _default_covariates(path, spec: ColumnSpec):
    header, _ = _read_rows(path)
    return tuple(h for h in header if h not in (spec.response, spec.source))


def ingest_csv(path, spec: ColumnSpec, big_path=None):
    """Read one or two CSV files into datasets.

    * one file, no ``spec.source``: returns a single ``Dataset``;
    * one file with ``spec.source``: rows tagged ``S``/``B`` give ``(small, big)``;
    * ``big_path`` given: ``path`` is the small data, ``big_path`` the big data.
      Covariates are matched by header name, never by position.

    Rows with a missing response or covariate are dropped.  Returns
    ``(data, dropped)`` where ``dropped`` counts removed rows.
    """
    covariates = spec.covariates or _default_covariates(path, spec)
    if big_path is not None:
        yS, XS, _, dS = _table(path, spec, covariates)
        yB, XB, _, dB = _table(big_path, spec, covariates)
        dropped = dS + dB
        data = (_dataset(yS, XS, covariates, Source.SMALL, path), _dataset(yB, XB, covariates, Source.BIG, big_path))
    elif spec.source:
        y, X, src, dropped = _table(path, spec, covariates, spec.source)
        src = np.asarray(src)
        bad = sorted(set(src) - {"S", "B"})
        if bad:
            raise DimensionMismatch(f"{path}: source column {spec.source!r} has values {bad}; expected S or B")
        data = (_dataset(y[src == "S"], X[src == "S"], covariates, Source.SMALL, path),
                _dataset(y[src == "B"], X[src == "B"], covariates, Source.BIG, path))
    else:
        y, X, _, dropped = _table(path, spec, covariates)
        data = _dataset(y, X, covariates, Source.SMALL, path)
    if dropped:
        log.warning("dropped %d row(s) with missing values", dropped)
    return data, dropped


def write_dataset_csv(path, data: Dataset, response: str = "y"):
    """Write a dataset (without its intercept column) in the ingestion format."""
    names = list(data.names)
    cols = [j for j, nm in enumerate(names) if nm != INTERCEPT]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([response] + [names[j] for j in cols])
        for yi, xi in zip(data.y, data.X):
            w.writerow([str(int(yi))] + [fmt(xi[j]) for j in cols])


# --------------------------------------------------------------------------
# Estimate reports
# --------------------------------------------------------------------------


def emit_report(report: EstimateReport, path):
    """Table with rows (coefficient, Est|StdErr) and one column per method."""
    methods = [m for m in METHODS if m in report.methods]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["coefficient", "statistic", *methods])
        for j, name in enumerate(report.names):
            for stat in ("Est", "StdErr"):
                cells = []
                for m in methods:
                    vec = report.estimates.get(m) if stat == "Est" else report.ses.get(m)
                    cells.append("NA" if vec is None else fmt(vec[j]))
                w.writerow([name, stat, *cells])
        for m in methods:
            if m in report.failures:
                fh.write(f"# {m}: {report.failures[m]}\n")


def read_report(path) -> EstimateReport:
    header, rows = _read_rows(path)
    methods = tuple(header[2:])
    names = tuple(dict.fromkeys(r[0] for r in rows))
    est = {m: np.full(len(names), np.nan) for m in methods}
    se = {m: np.full(len(names), np.nan) for m in methods}
    for r in rows:
        j = names.index(r[0])
        target = est if r[1] == "Est" else se
        for m, cell in zip(methods, r[2:]):
            target[m][j] = parse_float(cell)
    failures = {}
    with open(path) as fh:
        for line in fh:
            if line.startswith("# "):
                m, _, reason = line[2:].rstrip("\n").partition(": ")
                failures[m] = reason
    estimates = {m: v for m, v in est.items() if not np.all(np.isnan(v))}
    ses = {m: (v if not np.all(np.isnan(v)) else None) for m, v in se.items() if m in estimates}
    return EstimateReport(names, methods, estimates, ses, failures, {})


def write_rows(path, rows: list[dict], fields):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([fmt(row[f]) if isinstance(row[f], float) else str(row[f]) for f in fields])


# --------------------------------------------------------------------------
# Simulation manifests and results
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    p: tuple[int, ...]
    gamma_ratio: tuple[float, ...]
    n_S: tuple[int, ...]
    n_B: tuple[int, ...]
    bias_mechanism: tuple[str, ...] = ("ScaledGamma",)

    def __post_init__(self):
        for name in ("p", "gamma_ratio", "n_S", "n_B", "bias_mechanism"):
            vals = getattr(self, name)
            if isinstance(vals, (int, float, str)):
                vals = (vals,)
            if not vals:
                raise InvalidConfig(f"grid field {name!r} is empty")
            object.__setattr__(self, name, tuple(vals))
        object.__setattr__(self, "gamma_ratio", tuple(float(r) for r in self.gamma_ratio))
        for m in self.bias_mechanism:
            try:
                BiasMechanism(m)
            except ValueError:
                raise InvalidConfig(f"unknown bias mechanism {m!r}")


@dataclass(frozen=True)
class SimulationPlan:
    grids: tuple[GridSpec, ...]
    master_seed: int = 0
    replications: int = 100
    methods: tuple[str, ...] = ("Small", "Pool", "W2", "Wh", "L1", "L2", "JSP")
    moment_provider: str = "bootstrap"
    cv_folds: int = 10
    n_lambda: int = 50
    max_redraws: int = 5
    beta_norm: float | None = None
    missing_coef: float = DEFAULT_MISSING_COEF

    def __post_init__(self):
        object.__setattr__(self, "grids", tuple(self.grids))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.grids:
            raise InvalidConfig("simulation plan has no [[grid]] tables")

    def scenarios(self) -> list[ScenarioConfig]:
        out, seen = [], set()
        for g in self.grids:
            for mech in g.bias_mechanism:
                ratios = g.gamma_ratio if mech == BiasMechanism.SCALED_GAMMA.value else (0.0,)
                for n_B in g.n_B:
                    for p in g.p:
                        for ratio in ratios:
                            for n_S in g.n_S:
                                cfg = ScenarioConfig(p, ratio, n_S, n_B, BiasMechanism(mech), self.replications,
                                                     self.master_seed, self.beta_norm, self.missing_coef,
                                                     self.moment_provider, self.cv_folds, self.n_lambda,
                                                     self.max_redraws)
                                if cfg.key() not in seen:
                                    seen.add(cfg.key())
                                    out.append(cfg)
        return out

    def to_dict(self) -> dict:
        sim = {k: v for k, v in asdict(self).items() if k not in ("grids", "beta_norm", "missing_coef")}
        sim["methods"] = list(self.methods)
        gen = {"missing_coef": self.missing_coef}
        if self.beta_norm is not None:
            gen["beta_norm"] = self.beta_norm
        grids = [{k: list(v) for k, v in asdict(g).items()} for g in self.grids]
        return {"simulation": sim, "generator": gen, "grid": grids}

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationPlan":
        sim = dict(d.get("simulation", {}))
        gen = dict(d.get("generator", {}))
        grids = d.get("grid")
        if not grids:
            raise InvalidConfig("config needs at least one [[grid]] table")
        if isinstance(grids, dict):
            grids = [grids]
        allowed = {"master_seed", "replications", "methods", "moment_provider", "cv_folds", "n_lambda", "max_redraws"}
        unknown = set(sim) - allowed
        if unknown:
            raise InvalidConfig(f"unknown [simulation] keys {sorted(unknown)}")
        unknown = set(gen) - {"beta_norm", "missing_coef"}
        if unknown:
            raise InvalidConfig(f"unknown [generator] keys {sorted(unknown)}")
        try:
            parsed = tuple(GridSpec(**g) for g in grids)
        except TypeError as exc:
            raise InvalidConfig(f"bad [[grid]] table: {exc}")
        if "methods" in sim:
            sim["methods"] = tuple(sim["methods"])
        return cls(grids=parsed, **sim, **gen)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def from_toml(cls, text: str) -> "SimulationPlan":
        try:
            return cls.from_dict(tomli.loads(text))
        except tomli.TOMLDecodeError as exc:
            raise InvalidConfig(f"invalid TOML: {exc}")


def load_plan(path) -> SimulationPlan:
    path = Path(path)
    if not path.is_file():
        raise InvalidConfig(f"config file {path} does not exist")
    return SimulationPlan.from_toml(path.read_text())


CELL_FIELDS = ("p", "gamma_ratio", "n_S", "n_B", "bias_mechanism")
SUMMARY_FIELDS = CELL_FIELDS + ("method", "replications", "mse", "mse_mc_se", "log_ratio_vs_small",
                                "redraws", "failed_replications")


def summary_rows(results) -> list[dict]:
    rows = []
    for res in results:
        cell = dict(zip(CELL_FIELDS, res.config.key()))
        lr = res.log_ratio_vs_small
        for m in res.methods:
            rows.append({**cell, "method": m, "replications": res.records.shape[0], "mse": res.mse[m],
                         "mse_mc_se": res.mse_mc_se[m], "log_ratio_vs_small": lr.get(m, math.nan),
                         "redraws": res.redraws, "failed_replications": len(res.failed_replications)})
    return rows


def write_replications(path, results):
    """Per-replication squared errors, one column per method (wide)."""
    methods = [m for m in METHODS if any(m in r.methods for r in results)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*CELL_FIELDS, "replication", *methods])
        for res in results:
            key = res.config.key()
            kept = [r for r in range(res.config.replications) if r not in set(res.failed_replications)]
            for rep, row in zip(kept, res.records):
                vals = dict(zip(res.methods, row))
                w.writerow([*(fmt(k) if isinstance(k, float) else str(k) for k in key), str(rep),
                            *(fmt(vals.get(m)) for m in methods)])


def read_replications(path) -> list[SimulationResult]:
    header, rows = _read_rows(path)
    missing = [c for c in (*CELL_FIELDS, "replication") if c not in header]
    if missing:
        raise MissingColumn(f"{path}: missing column(s) {missing}")
    methods_all = header[len(CELL_FIELDS) + 1:]
    cells: dict[tuple, list] = {}
    for r in rows:
        key = (int(r[0]), float(r[1]), int(r[2]), int(r[3]), r[4])
        cells.setdefault(key, []).append([parse_float(x) for x in r[len(CELL_FIELDS) + 1:]])
    results = []
    for key, recs in cells.items():
        recs = np.asarray(recs)
        present = [j for j in range(len(methods_all)) if not np.all(np.isnan(recs[:, j]))]
        methods = tuple(methods_all[j] for j in present)
        p, ratio, n_S, n_B, mech = key
        cfg = ScenarioConfig(p, ratio, n_S, n_B, BiasMechanism(mech), replications=max(2, recs.shape[0]))
        results.append(SimulationResult(cfg, methods, recs[:, present]))
    return results
