"""
Bundled scenarios: named configurations with expected results.

A scenario file holds one or more ``[[scenario]]`` tables. Each has a
``name`` (unique within the file), a ``kind`` that selects the pipeline,
the usual configuration sections, and an ``expect`` table mapping a
quantity to ``[value, tolerance]``. A check passes when
``|measured - value| <= max(tolerance, 3 sigma)``, sigma being the
statistical uncertainty of the measured quantity where one exists.

Kinds:
    simulate  simulate the experiment and analyse the tag stream
    counts    evaluate the estimators on quoted counts (``counts_file``)
    circuit   forward-model and invert the transmission spectra
    jsa       model joint spectrum; with ``[spectrograph] enabled`` also
              a simulated time-of-flight reconstruction
    sweep     power sweep, analytic and (optionally) simulated

The directory searched is the packaged ``scenarios/`` unless the
``HERALDSIM_SCENARIO_DIR`` environment variable names another one.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coincidence import report_from_counts
from .config import STR, RunConfig, parse_config, read_toml
from .errors import ConfigError

SCENARIO_DIR_ENV = "HERALDSIM_SCENARIO_DIR"
KINDS = ("simulate", "counts", "circuit", "jsa", "sweep")
SCENARIO_KEYS = {"name": STR, "kind": STR, "description": STR, "counts_file": STR, "expect": None}


@dataclass
class Scenario:
    name: str
    kind: str
    config: RunConfig
    expected: dict = field(default_factory=dict)  # quantity -> (value, tolerance)
    description: str = ""
    source_file: str | None = None
    counts_file: str | None = None


@dataclass(frozen=True)
class Check:
    quantity: str
    measured: float
    sigma: float
    expected: float
    tolerance: float

    @property
    def allowed(self) -> float:
        s = self.sigma if math.isfinite(self.sigma) else 0.0
        return max(self.tolerance, 3.0 * s)

    @property
    def passed(self) -> bool:
        return math.isfinite(self.measured) and abs(self.measured - self.expected) <= self.allowed

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.quantity}: {self.measured:.6g} (sigma {self.sigma:.3g}) "
                f"vs {self.expected:.6g} +- {self.allowed:.3g}")


@dataclass
class ScenarioResult:
    scenario: Scenario
    values: dict  # quantity -> (value, sigma)
    checks: list
    artifacts: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def scenario_dir() -> Path:
    env = os.environ.get(SCENARIO_DIR_ENV)
    if env:
        return Path(env)
    return Path(__file__).resolve().parent / "scenarios"


def _expectations(table, path, name) -> dict:
    if table is None:
        return {}
    if not isinstance(table, dict):
        raise ConfigError("expected a table", path=path, field=f"{name}.expect")
    out = {}
    for key, val in table.items():
        ok = (isinstance(val, list) and len(val) == 2
              and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in val) and val[1] >= 0)
        if not ok:
            raise ConfigError("expected [value, tolerance >= 0]", path=path, field=f"{name}.expect.{key}")
        out[key] = (float(val[0]), float(val[1]))
    return out


def load_scenario_file(path) -> list[Scenario]:
    path = Path(path)
    data = read_toml(path)
    extra = set(data) - {"scenario"}
    if extra:
        raise ConfigError("a scenario file holds only [[scenario]] tables", path=str(path), field=sorted(extra)[0])
    entries = data.get("scenario", [])
    if not isinstance(entries, list):
        raise ConfigError("use [[scenario]] array tables", path=str(path), field="scenario")
    out, seen = [], set()
    for i, entry in enumerate(entries):
        name = entry.get("name")
        if not isinstance(name, str) or not name:
            raise ConfigError("every scenario needs a name", path=str(path), field=f"scenario[{i}].name")
        if name in seen:
            raise ConfigError(f"duplicate scenario name {name!r}", path=str(path), field=f"scenario[{i}].name")
        seen.add(name)
        kind = entry.get("kind")
        if kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}", path=str(path), field=f"{name}.kind")
        run = parse_config(entry, path, SCENARIO_KEYS)
        counts_file = run.extra.get("counts_file")
        if kind == "counts":
            if counts_file is None:
                raise ConfigError("counts scenarios need counts_file", path=str(path), field=f"{name}.counts_file")
            counts_file = str((path.parent / counts_file).resolve())
        if kind in ("simulate", "sweep") and run.experiment is None:
            raise ConfigError(f"{kind} scenarios need a [source] section", path=str(path), field=name)
        out.append(Scenario(name, kind, run, _expectations(run.extra.get("expect"), str(path), name),
                            run.extra.get("description", ""), str(path), counts_file))
    return out


def load_scenarios(directory=None) -> dict[str, Scenario]:
    """All scenarios in a directory, keyed by name (first file in sorted order wins)."""
    directory = Path(directory) if directory is not None else scenario_dir()
    if not directory.is_dir():
        raise FileNotFoundError(f"scenario directory {directory} does not exist")
    out = {}
    for f in sorted(directory.glob("*.toml")):
        for sc in load_scenario_file(f):
            out.setdefault(sc.name, sc)
    return out


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

def _report_values(report) -> dict:
    vals = {}
    for k in report.ESTIMATE_FIELDS:
        e = getattr(report, k)
        if e is not None:
            vals[k] = (e.value, e.sigma)
    if report.n_pulses:
        vals["herald_rate_per_pulse"] = (report.n_h / report.n_pulses, math.sqrt(report.n_h) / report.n_pulses)
    return vals


def _write(out_dir, name, text):
    p = Path(out_dir) / name
    p.write_text(text)
    return str(p)


def run_scenario(sc: Scenario, workers: int = 1, out_dir=None) -> ScenarioResult:
    """Run the scenario's pipeline and check every expectation it declares."""
    from . import pipelines
    from .plots import emit_plot

    run = sc.config
    artifacts = {}
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)

    if sc.kind == "simulate":
        report = pipelines.run_experiment(run.experiment, workers)
        values = _report_values(report)
        if out_dir is not None:
            artifacts["report"] = _write(out_dir, f"{sc.name}.report.txt", report.to_text())
    elif sc.kind == "counts":
        report = report_from_counts(pipelines.read_counts(sc.counts_file))
        values = _report_values(report)
        if out_dir is not None:
            artifacts["report"] = _write(out_dir, f"{sc.name}.report.txt", report.to_text())
    elif sc.kind == "circuit":
        values = {k: (v, 0.0) for k, v in pipelines.characterize_circuit(run.circuit).items()}
        for k in list(values):
            if k.endswith("_sigma"):
                base = k[: -len("_sigma")]
                key = base + "_per_cm" if base + "_per_cm" in values else base
                if key in values:
                    values[key] = (values[key][0], values.pop(k)[0])
        if out_dir is not None:
            s1, s2 = pipelines.synthesize_spectra(run.circuit, "TM")
            path = str(Path(out_dir) / f"{sc.name}.spectrum.svg")
            emit_plot([s1, s2], "spectrum", path)
            artifacts["plot"] = path
    elif sc.kind == "jsa":
        jsi, info = pipelines.jsa_summary(run)
        values = {k: (v, 0.0) for k, v in info.items()}
        if run.experiment is not None and run.experiment.spectral is not None:
            grid, rec = pipelines.reconstruct_jsi(run, workers)
            values.update({k: (v, 0.0) for k, v in rec.items()})
            if out_dir is not None:
                path = str(Path(out_dir) / f"{sc.name}.reconstructed.svg")
                emit_plot(grid, "heatmap", path)
                artifacts["reconstructed_plot"] = path
        if out_dir is not None:
            path = str(Path(out_dir) / f"{sc.name}.jsi.svg")
            emit_plot(jsi, "heatmap", path)
            artifacts["plot"] = path
    elif sc.kind == "sweep":
        table = pipelines.run_power_sweep(run.experiment, run.sweep, workers)
        pulls = table.mc_pulls()
        values = {
            "schmidt_k_spread": (float(np.ptp(table.schmidt_k)), 0.0),
            "linear_r2": (table.linear_r2(), 0.0),
            "g2_heralded_endpoint": (float(table.g2_heralded[-1]), 0.0),
            "g2_heralded_approx_endpoint": (float(table.g2_heralded_approx[-1]), 0.0),
        }
        if pulls.size:
            values["mc_max_abs_pull"] = (float(np.max(np.abs(pulls))), 0.0)
        if out_dir is not None:
            artifacts["table"] = _write(out_dir, f"{sc.name}.sweep.csv", table.to_text())
            path = str(Path(out_dir) / f"{sc.name}.sweep.svg")
            emit_plot(table.as_plot_data(), "sweep", path)
            artifacts["plot"] = path
    else:  # pragma: no cover - rejected at load time
        raise ConfigError(f"unknown kind {sc.kind}")

    checks = []
    for q, (value, tol) in sc.expected.items():
        if q not in values:
            raise ConfigError(f"expectation on {q!r}, which a {sc.kind} scenario does not produce "
                              f"(available: {', '.join(sorted(values))})", path=sc.source_file, field=f"{sc.name}.expect.{q}")
        m, s = values[q]
        checks.append(Check(q, float(m), float(s), value, tol))
    return ScenarioResult(sc, values, checks, artifacts)
