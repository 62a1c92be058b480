"""YAML-driven scenario runner.

A scenario names a model, an initial state, a time grid, a seed and a final
condition, simulates a homodyne record, runs the forward and backward passes
and writes plot-ready files:

* ``record.csv``      the simulated increments
* ``trajectory.csv``  forward, backward and past moments at every grid point
* ``sweep.csv``       polar uncertainty sweep (only when ``outputs.sweep`` is set)
* ``summary.json``    scalars at the first and last grid points

Schema (all keys except ``model``, ``initial`` and ``grid`` are optional)::

    name: fig4
    seed: 1
    model:
      n_modes: 1
      frequencies: [6.0]          # or hamiltonian: d x d matrix
      channels:
        - {kind: damping, mode: 0, rate: 1.0, efficiency: 0.5, phase: 0.0}
    initial:                      # mean/cov, or squeezed: {r, angle, nbar}, or coherent: [re, im]
      mean: [5.0, 0.0]
      cov: [[10, 0], [0, 10]]
    grid: {t0: 0.0, T: 2.0, dt: 0.001}
    final: {kind: identity}       # or {kind: projection, mean:, cov:} / squeezed: / coherent:
    outputs:
      mode: 0
      theta: 0.0
      sweep: {points: 360, time: 0.0}
      analytic: postselect
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .backward import (
    BackwardTrajectory,
    final_condition_identity,
    final_condition_projection,
    integrate_backward,
    to_covariance_form,
)
from .errors import InputError, SingularFormError
from .forward import ForwardTrajectory, simulate_record
from .model import ModelSpec, damping_channel, dispersive_channel, oscillator_hamiltonian, rotated_channel
from .phase_core import CovarianceEffect, EffectMoments, GaussianMoments, check_physical
from .retrodiction import past_path, sweep_to_csv, uncertainty_sweep

CHANNEL_KINDS = ("damping", "dispersive")
FINAL_KINDS = ("identity", "projection")
ANALYTIC_KINDS = ("postselect",)
GRID_TOL = 1e-9


class ConfigError(InputError):
    """Invalid scenario configuration; ``errors`` lists every problem found."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    spec: ModelSpec
    initial: GaussianMoments
    t0: float
    T: float
    dt: float
    steps: int
    seed: int
    final: EffectMoments
    mode: int
    theta: float
    sweep_points: int | None
    sweep_time: float
    analytic: str | None


def builtin_names() -> list[str]:
    folder = resources.files(__package__) / "builtins"
    return sorted(p.name[: -len(".yaml")] for p in folder.iterdir() if p.name.endswith(".yaml"))


def builtin_text(name: str) -> str:
    if name not in builtin_names():
        raise InputError(f"unknown builtin {name!r}; available: {', '.join(builtin_names())}")
    return (resources.files(__package__) / "builtins" / f"{name}.yaml").read_text()


def load_raw(source) -> dict:
    """Parse a config file, or a builtin when ``source`` names one and no such file exists."""
    path = Path(source)
    if path.is_file():
        text = path.read_text()
    elif str(source) in builtin_names():
        text = builtin_text(str(source))
    else:
        raise InputError(f"config {source!s} not found")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"config: not valid YAML ({exc})"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(["config: top level must be a mapping"])
    return raw


# --- validation -------------------------------------------------------------


class _Checker:
    def __init__(self):
        self.errors: list[str] = []

    def fail(self, field: str, msg: str):
        self.errors.append(f"{field}: {msg}")

    def number(self, node: dict, key: str, field: str, default=None, required=False):
        if key not in node or node[key] is None:
            if required:
                self.fail(field, "is required")
            return default
        v = node[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.fail(field, f"must be a finite number, got {v!r}")
            return default
        return float(v)

    def integer(self, node: dict, key: str, field: str, default=None, minimum=None):
        if key not in node or node[key] is None:
            return default
        v = node[key]
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(field, f"must be an integer, got {v!r}")
            return default
        if minimum is not None and v < minimum:
            self.fail(field, f"must be >= {minimum}, got {v}")
            return default
        return v

    def array(self, value, field: str, shape):
        try:
            arr = np.array(value, dtype=float)
        except (TypeError, ValueError):
            self.fail(field, "must be numeric")
            return None
        if arr.shape != shape:
            self.fail(field, f"must have shape {shape}, got {arr.shape}")
            return None
        if not np.all(np.isfinite(arr)):
            self.fail(field, "must be finite")
            return None
        return arr

    def mapping(self, raw: dict, key: str, required=True) -> dict | None:
        node = raw.get(key)
        if node is None:
            if required:
                self.fail(key, "is required")
            return None
        if not isinstance(node, dict):
            self.fail(key, "must be a mapping")
            return None
        return node


def _gaussian(ck: _Checker, node: dict, field: str, n_modes: int) -> GaussianMoments | None:
    d = 2 * n_modes
    if "squeezed" in node or "coherent" in node:
        if n_modes != 1:
            ck.fail(field, "squeezed/coherent shorthands are single-mode only")
            return None
        if "coherent" in node:
            a = ck.array(node["coherent"], f"{field}.coherent", (2,))
            return None if a is None else GaussianMoments.coherent(complex(a[0], a[1]))
        sq = node["squeezed"]
        if not isinstance(sq, dict):
            ck.fail(f"{field}.squeezed", "must be a mapping with r, angle, nbar")
            return None
        r = ck.number(sq, "r", f"{field}.squeezed.r", required=True)
        angle = ck.number(sq, "angle", f"{field}.squeezed.angle", 0.0)
        nbar = ck.number(sq, "nbar", f"{field}.squeezed.nbar", 0.0)
        mean = ck.array(node.get("mean", [0.0, 0.0]), f"{field}.mean", (2,))
        if nbar is not None and nbar < 0:
            ck.fail(f"{field}.squeezed.nbar", "must be non-negative")
            return None
        if None in (r, angle, nbar) or mean is None:
            return None
        return GaussianMoments.squeezed(r, angle, mean, nbar)
    mean = ck.array(node.get("mean", [0.0] * d), f"{field}.mean", (d,))
    cov = ck.array(node.get("cov", np.eye(d).tolist()), f"{field}.cov", (d, d))
    if mean is None or cov is None:
        return None
    if np.max(np.abs(cov - cov.T)) > 1e-10 * max(1.0, np.max(np.abs(cov))):
        ck.fail(f"{field}.cov", "must be symmetric")
        return None
    m = GaussianMoments(mean, cov)
    ok, lam = check_physical(m)
    if not ok:
        ck.fail(f"{field}.cov", f"violates the uncertainty relation (min eigenvalue {lam:.3e})")
        return None
    return m


def _model(ck: _Checker, node: dict) -> ModelSpec | None:
    n_modes = ck.integer(node, "n_modes", "model.n_modes", 1, minimum=1)
    if n_modes is None:
        return None
    d = 2 * n_modes
    R = np.zeros((d, d))
    if "hamiltonian" in node and "frequencies" in node:
        ck.fail("model", "give either frequencies or hamiltonian, not both")
    elif "hamiltonian" in node:
        R = ck.array(node["hamiltonian"], "model.hamiltonian", (d, d))
        if R is not None and np.max(np.abs(R - R.T)) > 1e-12 * max(1.0, np.max(np.abs(R))):
            ck.fail("model.hamiltonian", "must be symmetric")
            R = None
    elif "frequencies" in node:
        w = ck.array(node["frequencies"], "model.frequencies", (n_modes,))
        R = None if w is None else oscillator_hamiltonian(w)
    rows, etas = [], []
    channels = node.get("channels") or []
    if not isinstance(channels, list):
        ck.fail("model.channels", "must be a list")
        channels = []
    for i, ch in enumerate(channels):
        f = f"model.channels[{i}]"
        if not isinstance(ch, dict):
            ck.fail(f, "must be a mapping")
            continue
        kind = ch.get("kind")
        if kind not in CHANNEL_KINDS:
            ck.fail(f"{f}.kind", f"must be one of {', '.join(CHANNEL_KINDS)}, got {kind!r}")
        mode = ck.integer(ch, "mode", f"{f}.mode", 0, minimum=0)
        if mode is not None and mode >= n_modes:
            ck.fail(f"{f}.mode", f"mode {mode} does not exist (n_modes={n_modes})")
            mode = None
        rate = ck.number(ch, "rate", f"{f}.rate", required=True)
        if rate is not None and rate < 0:
            ck.fail(f"{f}.rate", f"must be non-negative, got {rate}")
            rate = None
        eta = ck.number(ch, "efficiency", f"{f}.efficiency", 0.0)
        if eta is not None and not 0.0 <= eta <= 1.0:
            ck.fail(f"{f}.efficiency", f"must lie in [0, 1], got {eta}")
            eta = None
        phase = ck.number(ch, "phase", f"{f}.phase", 0.0)
        if None in (mode, rate, eta, phase) or kind not in CHANNEL_KINDS:
            continue
        build = damping_channel if kind == "damping" else dispersive_channel
        rows.append(rotated_channel(build(mode, rate, n_modes), phase))
        etas.append(eta)
    if R is None or len(ck.errors):
        return None
    return ModelSpec.build(n_modes, R, rows, etas)


def validate_config(raw: dict) -> list[str]:
    """All problems in ``raw`` as ``"field: message"`` strings; empty when valid."""
    return _parse(raw)[1]


def _parse(raw: dict) -> tuple[ScenarioConfig | None, list[str]]:
    ck = _Checker()
    if not isinstance(raw, dict):
        return None, ["config: top level must be a mapping"]
    name = str(raw.get("name", "scenario"))
    seed = ck.integer(raw, "seed", "seed", 0, minimum=0)

    model_node = ck.mapping(raw, "model")
    spec = None
    if model_node is not None:
        sub = _Checker()
        spec = _model(sub, model_node)
        ck.errors += sub.errors
    n_modes = spec.layout.n_modes if spec is not None else None
    if n_modes is None and model_node is not None:
        # keep checking mode-dependent fields when only the channels are broken
        declared = model_node.get("n_modes", 1)
        if isinstance(declared, int) and not isinstance(declared, bool) and declared >= 1:
            n_modes = declared

    initial = None
    init_node = ck.mapping(raw, "initial")
    if init_node is not None and n_modes is not None:
        initial = _gaussian(ck, init_node, "initial", n_modes)

    grid = ck.mapping(raw, "grid")
    t0 = T = dt = None
    steps = 0
    if grid is not None:
        t0 = ck.number(grid, "t0", "grid.t0", 0.0)
        T = ck.number(grid, "T", "grid.T", required=True)
        dt = ck.number(grid, "dt", "grid.dt", required=True)
        if dt is not None and dt <= 0:
            ck.fail("grid.dt", f"must be positive, got {dt}")
            dt = None
        if None not in (t0, T) and T <= t0:
            ck.fail("grid.T", f"must exceed grid.t0 ({T} <= {t0})")
            T = None
        if None not in (t0, T, dt):
            ratio = (T - t0) / dt
            steps = int(round(ratio))
            if steps < 1 or abs(ratio - steps) > GRID_TOL * max(1.0, ratio):
                ck.fail("grid.dt", f"does not divide T - t0 = {T - t0} (ratio {ratio})")

    final: EffectMoments | None = None
    final_node = raw.get("final", {"kind": "identity"})
    if not isinstance(final_node, dict):
        ck.fail("final", "must be a mapping")
    elif n_modes is not None:
        kind = final_node.get("kind", "identity")
        if kind == "identity":
            final = final_condition_identity(n_modes)
        elif kind == "projection":
            target = _gaussian(ck, final_node, "final", n_modes)
            if target is not None:
                final = final_condition_projection(target)
        else:
            ck.fail("final.kind", f"must be one of {', '.join(FINAL_KINDS)}, got {kind!r}")

    out = raw.get("outputs") or {}
    mode, theta, sweep_points, sweep_time, analytic = 0, 0.0, None, t0, None
    if not isinstance(out, dict):
        ck.fail("outputs", "must be a mapping")
    else:
        mode = ck.integer(out, "mode", "outputs.mode", 0, minimum=0)
        if mode is not None and n_modes is not None and mode >= n_modes:
            ck.fail("outputs.mode", f"mode {mode} does not exist (n_modes={n_modes})")
        theta = ck.number(out, "theta", "outputs.theta", 0.0)
        sweep = out.get("sweep")
        if sweep is not None:
            if not isinstance(sweep, dict):
                ck.fail("outputs.sweep", "must be a mapping")
            else:
                sweep_points = ck.integer(sweep, "points", "outputs.sweep.points", 360, minimum=1)
                sweep_time = ck.number(sweep, "time", "outputs.sweep.time", t0)
                if None not in (sweep_time, t0, T, dt) and not steps == 0:
                    k = (sweep_time - t0) / dt
                    if not (-GRID_TOL <= k <= steps + GRID_TOL) or abs(k - round(k)) > 1e-6:
                        ck.fail("outputs.sweep.time", f"{sweep_time} is not a grid point in [{t0}, {T}]")
        analytic = out.get("analytic")
        if analytic is not None:
            if analytic not in ANALYTIC_KINDS:
                ck.fail("outputs.analytic", f"must be one of {', '.join(ANALYTIC_KINDS)}, got {analytic!r}")
            elif spec is not None and initial is not None and final is not None:
                for msg in _postselect_problems(spec, initial, final):
                    ck.fail("outputs.analytic", msg)

    if ck.errors:
        return None, ck.errors
    cfg = ScenarioConfig(
        name, spec, initial, t0, T, dt, steps, seed, final, mode, theta, sweep_points, sweep_time, analytic
    )
    return cfg, []


def parse_config(raw: dict) -> ScenarioConfig:
    cfg, errors = _parse(raw)
    if errors:
        raise ConfigError(errors)
    return cfg


# --- analytic overlay ---------------------------------------------------------


def _postselect_problems(spec: ModelSpec, initial: GaussianMoments, final: EffectMoments) -> list[str]:
    problems = []
    if spec.layout.n_modes != 1 or spec.n_channels != 1:
        problems.append("postselect needs one mode and a single damping channel")
        return problems
    row = spec.channels[0]
    if abs(row[0]) == 0 or not np.isclose(row[1], 1j * row[0]):
        problems.append("postselect needs a damping channel")
    if np.any(spec.hamiltonian) or np.any(spec.efficiencies):
        problems.append("postselect needs zero frequency and zero efficiency")
    if not np.allclose(initial.cov, np.eye(2)) or initial.mean[1] != 0:
        problems.append("postselect needs a coherent initial state with real amplitude")
    if not (isinstance(final, CovarianceEffect) and np.allclose(final.moments.cov, np.eye(2)) and not np.any(final.moments.mean)):
        problems.append("postselect needs a ground-state projection at T")
    return problems


def postselect_analytic(alpha: float, rate: float, t, T: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form past mean and ``Delta`` of ``q`` for a decaying coherent state post-selected in vacuum.

    ``t`` and ``T`` are measured from the initial time.
    """
    t = np.asarray(t, dtype=float)
    qp = np.sqrt(2.0) * alpha * (np.exp(-rate * t / 2.0) - 0.5 * np.exp(-rate * (T - t / 2.0)))
    delta = 1.0 - 0.5 * np.exp(-rate * (T - t))
    return qp, delta


# --- running -------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioResult:
    config: ScenarioConfig
    forward: ForwardTrajectory
    backward: BackwardTrajectory
    table: np.ndarray
    columns: list[str]
    files: dict[str, Path]


def _upper(d: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(d) for j in range(i, d)]


def trajectory_table(cfg: ScenarioConfig, fwd: ForwardTrajectory, bwd: BackwardTrajectory) -> tuple[list[str], np.ndarray]:
    d = cfg.spec.dim
    pairs = _upper(d)
    cols = ["t"]
    cols += [f"mean_f_{i + 1}" for i in range(d)] + [f"cov_f_{i + 1}{j + 1}" for i, j in pairs]
    cols += [f"mean_b_{i + 1}" for i in range(d)] + [f"cov_b_{i + 1}{j + 1}" for i, j in pairs]
    cols += ["qp", "var_p"]
    if cfg.analytic == "postselect":
        cols += ["qp_analytic", "var_p_analytic"]
    iu = (slice(None),) + tuple(np.array(pairs).T)
    if bwd.form == "covariance":
        b_means, b_covs = bwd.means, bwd.covs[iu]
    else:
        b_means, b_covs = _covariance_or_nan(bwd)
        b_covs = b_covs[iu]
    qp, var_p = past_path(fwd.means, fwd.covs, bwd, cfg.theta, cfg.mode)
    table = np.column_stack([fwd.times, fwd.means, fwd.covs[iu], b_means, b_covs, qp, var_p])
    if cfg.analytic == "postselect":
        alpha = cfg.initial.mean[0] / np.sqrt(2.0)
        rate = 2.0 * abs(cfg.spec.channels[0, 0]) ** 2
        qp, delta = postselect_analytic(alpha, rate, fwd.times - cfg.t0, cfg.T - cfg.t0)
        table = np.column_stack([table, qp, delta / 2.0])
    return cols, table


def _covariance_or_nan(bwd: BackwardTrajectory) -> tuple[np.ndarray, np.ndarray]:
    """Covariance-form moments of an information-form path; ``nan`` where the precision is singular."""
    d = bwd.means.shape[1]
    means = np.full((len(bwd), d), np.nan)
    covs = np.full((len(bwd), d, d), np.nan)
    for k in range(len(bwd)):
        try:
            cm = to_covariance_form(bwd.effect(k)).moments
        except SingularFormError:
            continue
        means[k], covs[k] = cm.mean, cm.cov
    return means, covs


def _write_table(path: Path, cols: list[str], table: np.ndarray):
    lines = [",".join(cols)]
    lines += [",".join(f"{x:.17g}" for x in row) for row in table]
    path.write_text("\n".join(lines) + "\n")


def _json_floats(a) -> list | float | None:
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return None if not np.isfinite(a) else float(a)
    return [_json_floats(x) for x in a]


def run_scenario(cfg: ScenarioConfig | dict, out_dir=None, seed: int | None = None) -> ScenarioResult:
    """Simulate, filter, smooth and retrodict; write files to ``out_dir`` if given."""
    if isinstance(cfg, dict):
        cfg = parse_config(cfg)
    if seed is not None:
        cfg = ScenarioConfig(**{**cfg.__dict__, "seed": int(seed)})
    record, fwd = simulate_record(cfg.spec, cfg.initial, cfg.t0, cfg.dt, cfg.steps, cfg.seed)
    bwd = integrate_backward(cfg.spec, record, cfg.final)
    cols, table = trajectory_table(cfg, fwd, bwd)
    files: dict[str, Path] = {}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files["record"] = out / "record.csv"
        record.to_csv(files["record"])
        files["trajectory"] = out / "trajectory.csv"
        _write_table(files["trajectory"], cols, table)
        if cfg.sweep_points:
            k = int(round((cfg.sweep_time - cfg.t0) / cfg.dt))
            thetas = np.linspace(0.0, 2.0 * np.pi, cfg.sweep_points, endpoint=False)
            rows = uncertainty_sweep(fwd.moments(k), bwd.effect(k), thetas, mode=cfg.mode)
            files["sweep"] = out / "sweep.csv"
            sweep_to_csv(rows, files["sweep"])
        files["summary"] = out / "summary.json"
        files["summary"].write_text(json.dumps(_summary(cfg, cols, table), indent=2, sort_keys=True) + "\n")
    return ScenarioResult(cfg, fwd, bwd, table, cols, files)


def _summary(cfg: ScenarioConfig, cols: list[str], table: np.ndarray) -> dict:
    def at(k):
        return {c: _json_floats(v) for c, v in zip(cols, table[k])}

    return {
        "name": cfg.name,
        "seed": cfg.seed,
        "steps": cfg.steps,
        "dt": cfg.dt,
        "mode": cfg.mode,
        "theta": cfg.theta,
        "initial": at(0),
        "final": at(-1),
    }
