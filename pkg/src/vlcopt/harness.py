"""Command-line sweeps over schemes, dimming levels and user drops.

Every ``(scheme, eta, seed)`` run writes one JSON summary and contributes
one CSV row per frequency-reuse mode to ``metrics.csv``. Rows are sorted,
floats are written with ``repr`` and nothing time-dependent goes into the
files, so rerunning a plan reproduces the CSV byte for byte.

Each flag can also be supplied through an environment variable named
``VLCOPT_<FLAG>`` (for example ``VLCOPT_SEEDS=0-19``). An explicit flag
wins over the environment.

Exit status is 0 when every run succeeded, 1 when any run failed (the
others are still written, with diagnostics in ``failures.json``) and 2 for
invalid input.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
import tempfile
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tomli

from .illumination import build_field, write_map_csv
from .orchestrator import SCHEMES, FrequencyReuseError, evaluate_fr, prepare, run_ad, run_dd, run_tasp_hd
from .scenario import Scenario, ScenarioError, load_scenario, table2_scenario

log = logging.getLogger(__name__)

ENV_PREFIX = "VLCOPT_"
EXIT_OK, EXIT_RUN_FAILED, EXIT_INVALID = 0, 1, 2

CSV_FIELDS = ("scheme", "eta", "n_leds", "n_users", "fr", "seed", "mbe", "cv", "sum_rate",
              "iterations", "n_cells", "converged", "lux_min", "lux_max")


class PlanError(ValueError):
    """The experiment plan itself is malformed."""


@dataclass(frozen=True)
class ExperimentPlan:
    """One sweep. ``scenario`` is a TOML path, or ``None`` for the default room.

    ``fr_modes`` holds reuse factors; the token ``"nc"`` means one band per
    cell, whatever the cell count of the run turns out to be.
    """

    scenario: str | None
    schemes: tuple[str, ...]
    dimming_levels: tuple[float, ...]
    seeds: tuple[int, ...]
    output: str
    fr_modes: tuple[str, ...] = ("1",)
    n_leds: int = 64
    workers: int = 1
    maps: bool = False

    def __post_init__(self):
        if not self.schemes or not self.dimming_levels or not self.seeds or not self.fr_modes:
            raise PlanError("schemes, dimming levels, seeds and FR modes must be non-empty")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad:
            raise PlanError(f"unknown scheme(s) {bad}; choose from {list(SCHEMES)}")
        for eta in self.dimming_levels:
            if not 0 < eta <= 1:
                raise PlanError(f"dimming level {eta} outside (0, 1]")
        for fr in self.fr_modes:
            if fr != "nc" and not (fr.isdigit() and int(fr) >= 1):
                raise PlanError(f"FR mode {fr!r} is neither a positive integer nor 'nc'")
        if self.workers < 1:
            raise PlanError("workers must be >= 1")


@dataclass(frozen=True)
class MetricsRow:
    """One CSV line. ``fr`` is the numeric reuse factor actually applied."""

    scheme: str
    eta: float
    n_leds: int
    n_users: int
    fr: int
    seed: int
    mbe: float
    cv: float
    sum_rate: float
    iterations: int
    n_cells: int
    converged: bool
    lux_min: float
    lux_max: float

    def to_csv(self) -> list[str]:
        out = []
        for name in CSV_FIELDS:
            v = getattr(self, name)
            out.append(repr(float(v)) if isinstance(v, float) else str(v))
        return out

    @classmethod
    def from_csv(cls, record: dict) -> "MetricsRow":
        kw = {}
        for f in dataclasses.fields(cls):
            raw = record[f.name]
            if f.type == "bool":
                kw[f.name] = raw == "True"
            elif f.type == "int":
                kw[f.name] = int(raw)
            elif f.type == "float":
                kw[f.name] = float(raw)
            else:
                kw[f.name] = raw
        return cls(**kw)


# -- scenario per seed ------------------------------------------------------

def read_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except OSError as exc:
        raise PlanError(f"cannot read scenario {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError("<config>", f"parse error: {exc}") from exc


def scenario_for_seed(plan: ExperimentPlan, seed: int, config: dict | None = None) -> Scenario:
    """The plan's scenario with users dropped by ``seed``.

    A config that lists explicit user positions keeps them; the seed then
    only drives the solver's random restarts.
    """
    if plan.scenario is None:
        return table2_scenario(plan.n_leds, seed=seed)
    cfg = dict(read_config(plan.scenario) if config is None else config)
    users = dict(cfg.get("users", {}))
    if "positions" not in users:
        users["seed"] = seed
    cfg["users"] = users
    return load_scenario(cfg).with_solver(rng_seed=seed)


# -- single run -------------------------------------------------------------

def _run_one(scheme: str, scenario: Scenario, eta: float, instance=None):
    if scheme == "ad":
        return run_ad(scenario, eta, instance)
    if scheme == "dd":
        return run_dd(scenario, eta, instance)
    return run_tasp_hd(scenario, eta, instance, uniformity=(scheme == "tasp-hd"))


def _fr_factor(mode: str, n_cells: int) -> int:
    return n_cells if mode == "nc" else int(mode)


def _task(args):
    plan, config, scheme, eta, seed = args
    key = {"scheme": scheme, "eta": eta, "seed": seed}
    try:
        scenario = scenario_for_seed(plan, seed, config)
        res = _run_one(scheme, scenario, eta)
    except Exception as exc:   # a failed run must not take the sweep down
        return key, None, [], [{**key, "error": f"{type(exc).__name__}: {exc}",
                                "traceback": traceback.format_exc()}]

    rows, failures = [], []
    for mode in plan.fr_modes:
        n = _fr_factor(mode, res.partition.num_cells)
        try:
            mbe = evaluate_fr(res, n)
        except FrequencyReuseError as exc:
            failures.append({**key, "fr": n, "error": f"FrequencyReuseError: {exc}"})
            continue
        rows.append(MetricsRow(scheme, float(eta), scenario.n_leds, scenario.n_users, n,
                               seed, float(mbe), float(res.cv), float(res.effective_rate),
                               int(res.iterations), res.partition.num_cells,
                               bool(res.converged), float(res.lux_min), float(res.lux_max)))
    summary = {**res.summary(), "seed": seed, "n_leds_total": scenario.n_leds,
               "effective_rate": res.effective_rate}
    if plan.maps:
        summary["_map"] = (scenario, [float(v) for v in res.activation], res.drive)
    return key, summary, rows, failures


# -- output -----------------------------------------------------------------

def atomic_write(path, text: str) -> None:
    """Write ``text`` to a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow(r.to_csv())
    return buf.getvalue()


def read_metrics(path) -> list[MetricsRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [MetricsRow.from_csv(rec) for rec in csv.DictReader(fh)]


def run_name(scheme: str, eta: float, seed: int) -> str:
    return f"{scheme}_eta{eta:.2f}_seed{seed}"


def emit_illuminance_map(scenario: Scenario, selection, path, drive: float = 1.0) -> int:
    """Write the ``x, y, lux`` map of an LED selection; returns the row count.

    ``selection`` is a 0/1 vector over the LEDs and ``drive`` the luminous
    output of each active LED relative to its peak intensity.
    """
    field = build_field(scenario)
    buf_path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=buf_path.parent, prefix=f".{buf_path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        n = write_map_csv(tmp, field, np.asarray(selection, dtype=float), drive)
        os.replace(tmp, buf_path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return n


def _order(plan: ExperimentPlan):
    return [(s, float(e), int(k)) for s in plan.schemes for e in plan.dimming_levels
            for k in plan.seeds]


def run_experiment(plan: ExperimentPlan) -> int:
    """Execute ``plan``; returns the process exit status."""
    out = Path(plan.output)
    out.mkdir(parents=True, exist_ok=True)
    config = read_config(plan.scenario) if plan.scenario else None
    # fail fast on a scenario that cannot load at all
    scenario_for_seed(plan, plan.seeds[0], config)

    tasks = [(plan, config, s, e, k) for s, e, k in _order(plan)]
    if plan.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]

    rows, failures = [], []
    for key, summary, run_rows, run_failures in results:
        rows.extend(run_rows)
        failures.extend(run_failures)
        name = run_name(key["scheme"], key["eta"], key["seed"])
        if summary is None:
            log.error("%s failed: %s", name, run_failures[0]["error"])
            continue
        map_args = summary.pop("_map", None)
        atomic_write(out / f"{name}.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
        if map_args is not None:
            emit_illuminance_map(map_args[0], map_args[1], out / f"{name}_lux.csv", map_args[2])
        log.info("%s: R=%.4f CV=%.4f", name, summary["effective_rate"], summary["cv"])

    rank = {s: i for i, s in enumerate(SCHEMES)}
    rows.sort(key=lambda r: (rank[r.scheme], r.eta, r.seed, r.fr))
    atomic_write(out / "metrics.csv", rows_to_csv(rows))
    if failures:
        for f in failures:
            log.error("failure %s", {k: v for k, v in f.items() if k != "traceback"})
        atomic_write(out / "failures.json", json.dumps(failures, indent=2) + "\n")
        return EXIT_RUN_FAILED
    stale = out / "failures.json"
    if stale.exists():
        stale.unlink()
    return EXIT_OK


# -- CLI --------------------------------------------------------------------

def _split(text: str) -> list[str]:
    return [t.strip() for t in text.replace(";", ",").split(",") if t.strip()]


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"0-3,7"`` -> ``(0, 1, 2, 3, 7)``."""
    seeds = []
    for tok in _split(text):
        if "-" in tok:
            lo, hi = tok.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(tok))
    return tuple(seeds)


def parse_levels(text: str) -> tuple[float, ...]:
    """Comma list of dimming levels; ``start:stop:step`` expands inclusively."""
    levels = []
    for tok in _split(text):
        if ":" in tok:
            start, stop, step = (float(v) for v in tok.split(":"))
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            levels.extend(round(start + i * step, 10) for i in range(n))
        else:
            levels.append(float(tok))
    return tuple(levels)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="vlcopt",
        description="Sum-rate sweeps for hybrid-dimming multi-cell VLC.",
        epilog=f"Every flag falls back to the environment variable {ENV_PREFIX}<FLAG> "
               f"(upper case, dashes as underscores) when not given.")
    p.add_argument("--scenario", help="TOML scenario file (default: built-in 8x8x3 m room)")
    p.add_argument("--schemes", help=f"comma list from {','.join(SCHEMES)} (default tasp-hd,ad,dd)")
    p.add_argument("--eta", help="dimming levels, e.g. 0.7 or 0.3:1.0:0.1 (default 0.7)")
    p.add_argument("--seeds", help="seed list, e.g. 0-19 (default 0)")
    p.add_argument("--fr", help="frequency-reuse modes, integers or 'nc' (default 1)")
    p.add_argument("--n-leds", help="LED count of the built-in room (default 64)")
    p.add_argument("--out", help="output directory (default results)")
    p.add_argument("--workers", help="parallel runs (default 1)")
    p.add_argument("--maps", action="store_true", default=None,
                   help="also write an illuminance map per run")
    p.add_argument("-v", "--verbose", action="count", default=None, help="more logging")
    return p


def _resolve(args: argparse.Namespace, environ) -> dict:
    def pick(name, default):
        v = getattr(args, name)
        if v is None:
            v = environ.get(ENV_PREFIX + name.upper(), default)
        return v

    maps = pick("maps", False)
    if isinstance(maps, str):
        maps = maps.lower() in ("1", "true", "yes", "on")
    return {
        "scenario": pick("scenario", None) or None,
        "schemes": tuple(_split(pick("schemes", "tasp-hd,ad,dd"))),
        "dimming_levels": parse_levels(pick("eta", "0.7")),
        "seeds": parse_seeds(pick("seeds", "0")),
        "fr_modes": tuple(t.lower() for t in _split(pick("fr", "1"))),
        "n_leds": int(pick("n_leds", "64")),
        "output": pick("out", "results"),
        "workers": int(pick("workers", "1")),
        "maps": bool(maps),
        "verbose": int(pick("verbose", 0)),
    }


def main(argv=None, environ=None) -> int:
    environ = os.environ if environ is None else environ
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve(args, environ)
        verbose = cfg.pop("verbose")
        logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        plan = ExperimentPlan(**cfg)
        return run_experiment(plan)
    except (PlanError, ScenarioError, ValueError) as exc:
        print(f"vlcopt: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"vlcopt: I/O error: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILED


if __name__ == "__main__":
    sys.exit(main())
