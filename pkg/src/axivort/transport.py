"""Lagrangian advection of the particle ensemble along its own flow map.

Positions follow d/dt (r_i, z_i) = (u^r, u^z) evaluated by ensemble
self-induction, integrated with classical fixed-step RK4.  The carried
quantities xi_i and mu_i are never written to, so every transported
invariant of the continuous system (sup |xi|, total mass, single-signed
sign) is conserved bitwise by construction.  The kernel antisymmetry
r^(d-2) K^r(x, xb) = -rb^(d-2) K^r(xb, x) makes the discrete radial
impulse sum_i r_i^(d-1) mu_i exactly conserved in continuous time, with
or without blob regularization; its drift in a run measures pure RK4
time-discretization error and must shrink ~16x under dt halving.

Runs are resumable: checkpoints store every float as a hex literal, and
stepping accumulates t by repeated addition, so a resumed trajectory is
bitwise identical to an uninterrupted one.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .biot_savart import ParticleEnsemble, velocity_arrays
from .errors import AxisCrossingError, AxivortError, DomainError

CHECKPOINT_FORMAT = "axivort-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class StepReport:
    t_new: float
    max_displacement: float
    min_r: float
    velocity_evals: int

    def __post_init__(self):
        if not (self.max_displacement >= 0.0):
            raise DomainError(f"negative displacement {self.max_displacement}")


@dataclass(frozen=True)
class SimulationState:
    """Ensemble plus clock; the carried xi/mu arrays equal their t=0 values."""

    ens: ParticleEnsemble
    t: float = 0.0
    step_count: int = 0
    max_r_seen: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if self.ens.n and self.max_r_seen == 0.0:
            object.__setattr__(self, "max_r_seen", float(self.ens.r.max()))


def _stage_positions(state, r, z, t):
    if r.size and not np.all(r > 0.0):
        idx = int(np.argmin(r))
        raise AxisCrossingError(
            f"particle {idx} reached r = {r[idx]!r} <= 0 during a stage at t = {t!r}",
            particle_index=idx,
            t=t,
        )
    return state.ens.with_positions(r, z)


def step(state, dt):
    """Advance one RK4 step of size dt; returns (new_state, report).

    Velocity is re-evaluated by ensemble self-induction at every stage.
    dt = 0 is rejected; negative dt is accepted so that reversibility
    (advance dt then -dt) can be exercised directly.
    """
    if dt == 0.0 or not math.isfinite(dt):
        raise DomainError(f"step size must be finite and nonzero, got {dt!r}")
    ens = state.ens
    delta = state.delta
    r0, z0 = ens.r, ens.z
    k1r, k1z = velocity_arrays(ens, r0, z0, delta)
    e2 = _stage_positions(state, r0 + 0.5 * dt * k1r, z0 + 0.5 * dt * k1z, state.t)
    k2r, k2z = velocity_arrays(e2, e2.r, e2.z, delta)
    e3 = _stage_positions(state, r0 + 0.5 * dt * k2r, z0 + 0.5 * dt * k2z, state.t)
    k3r, k3z = velocity_arrays(e3, e3.r, e3.z, delta)
    e4 = _stage_positions(state, r0 + dt * k3r, z0 + dt * k3z, state.t)
    k4r, k4z = velocity_arrays(e4, e4.r, e4.z, delta)
    rn = r0 + (dt / 6.0) * (k1r + 2.0 * k2r + 2.0 * k3r + k4r)
    zn = z0 + (dt / 6.0) * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
    new_ens = _stage_positions(state, rn, zn, state.t)
    t_new = state.t + dt
    disp = math.sqrt(float(((rn - r0) ** 2 + (zn - z0) ** 2).max())) if ens.n else 0.0
    new_state = replace(
        state,
        ens=new_ens,
        t=t_new,
        step_count=state.step_count + 1,
        max_r_seen=max(state.max_r_seen, float(rn.max()) if ens.n else 0.0),
    )
    report = StepReport(
        t_new=t_new,
        max_displacement=disp,
        min_r=float(rn.min()) if ens.n else math.inf,
        velocity_evals=4 * ens.n,
    )
    return new_state, report


# ---------------------------------------------------------------------------
# Checkpointing: exact-decimal (hex float) text, bit-exact round trip.
# ---------------------------------------------------------------------------


def _hex_list(arr):
    return [float(v).hex() for v in arr]


def _from_hex_list(values):
    return np.array([float.fromhex(v) for v in values], dtype=float)


def save_checkpoint(state, path, config_text=""):
    """Write a versioned checkpoint; floats stored as hex literals."""
    ens = state.ens
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "d": ens.d,
        "sign": ens.sign,
        "t": float(state.t).hex(),
        "step_count": state.step_count,
        "max_r_seen": float(state.max_r_seen).hex(),
        "delta": float(state.delta).hex(),
        "r": _hex_list(ens.r),
        "z": _hex_list(ens.z),
        "xi": _hex_list(ens.xi),
        "mu": _hex_list(ens.mu),
        "config": config_text,
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=0, sort_keys=True))
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Read a checkpoint; returns (SimulationState, embedded config text)."""
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise AxivortError(f"not an axivort checkpoint: {path}")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise AxivortError(f"unsupported checkpoint version {payload.get('version')}")
    stored_hash = hashlib.sha256(payload["config"].encode()).hexdigest()
    if stored_hash != payload["config_sha256"]:
        raise AxivortError(f"checkpoint config hash mismatch in {path}")
    ens = ParticleEnsemble(
        d=payload["d"],
        r=_from_hex_list(payload["r"]),
        z=_from_hex_list(payload["z"]),
        xi=_from_hex_list(payload["xi"]),
        mu=_from_hex_list(payload["mu"]),
        sign=payload["sign"],
    )
    state = SimulationState(
        ens=ens,
        t=float.fromhex(payload["t"]),
        step_count=payload["step_count"],
        max_r_seen=float.fromhex(payload["max_r_seen"]),
        delta=float.fromhex(payload["delta"]),
    )
    return state, payload["config"]


# ---------------------------------------------------------------------------
# Run orchestration.
# ---------------------------------------------------------------------------


@dataclass
class DiagnosticSinks:
    """Where a run delivers its measurements.

    ``series`` always accumulates records in memory; ``csv_path`` appends
    rows as they are produced; ``checkpoint_dir`` receives periodic and
    final checkpoints.
    """

    series: list = field(default_factory=list)
    csv_path: Path | None = None
    checkpoint_dir: Path | None = None
    checkpoint_paths: list = field(default_factory=list)


def _measure_steps(config):
    """Step indices at which diagnostics run (probe times rounded to steps)."""
    n_steps = _step_count(config)
    idx = {0}
    for t in config.resolved_probe_times():
        k = int(round(t / config.dt))
        idx.add(min(max(k, 0), n_steps))
    idx.add(n_steps)
    return sorted(idx)


def _step_count(config):
    n = round(config.t_end / config.dt) if config.t_end > 0 else 0
    if abs(n * config.dt - config.t_end) > 1e-9 * max(1.0, config.t_end):
        raise DomainError(
            f"t_end = {config.t_end} is not an integer number of steps of dt = {config.dt}"
        )
    return int(n)


def run(config, sinks=None, state=None):
    """Drive a configured simulation from t = 0 (or a resumed state) to t_end.

    Measures diagnostics at the configured probe times, checkpoints every
    ``checkpoint_every`` steps plus at the end, and flushes an emergency
    checkpoint and error record if a step fails.  Returns the final
    SimulationState; measurements land in ``sinks``.
    """
    from .config import build_initial_ensemble, serialize_config
    from .diagnostics import append_csv_record, measure, write_csv_header

    if sinks is None:
        sinks = DiagnosticSinks()
    config_text = serialize_config(config)
    if state is None:
        ens, _ = build_initial_ensemble(config)
        state = SimulationState(ens=ens, delta=config.delta)
    probes = config.resolved_probe_radii()
    measure_at = _measure_steps(config)
    n_steps = _step_count(config)

    csv_file = None
    if sinks.csv_path is not None:
        fresh = state.step_count == 0
        csv_file = open(sinks.csv_path, "a" if not fresh else "w")
        if fresh:
            write_csv_header(csv_file, probes)

    def emit(rec):
        sinks.series.append(rec)
        if csv_file is not None:
            append_csv_record(csv_file, rec, probes)
            csv_file.flush()

    def checkpoint(tag=None):
        if sinks.checkpoint_dir is None:
            return None
        name = tag or f"checkpoint_{state.step_count:08d}.json"
        p = save_checkpoint(state, Path(sinks.checkpoint_dir) / name, config_text)
        sinks.checkpoint_paths.append(p)
        return p

    try:
        # A resumed run skips the initial record: its pre-checkpoint half
        # already emitted everything up to and including the resume step.
        if state.step_count == 0:
            emit(measure(state, probes, delta=config.delta))
        while state.step_count < n_steps:
            state, _ = step(state, config.dt)
            if state.step_count in measure_at:
                emit(measure(state, probes, delta=config.delta))
            if (
                config.checkpoint_every
                and state.step_count % config.checkpoint_every == 0
                and state.step_count < n_steps
            ):
                checkpoint()
        checkpoint("checkpoint_final.json")
        return state
    except AxivortError as exc:
        p = checkpoint("checkpoint_emergency.json")
        if sinks.checkpoint_dir is not None:
            record = {
                "error": type(exc).__name__,
                "message": str(exc),
                "t": state.t,
                "step_count": state.step_count,
                "checkpoint": str(p) if p else None,
            }
            Path(sinks.checkpoint_dir, "error.json").write_text(json.dumps(record, indent=2))
        raise
    finally:
        if csv_file is not None:
            csv_file.close()


def resume(checkpoint_path, sinks=None):
    """Continue a checkpointed run to its configured t_end.

    The trajectory is bitwise identical to the uninterrupted run because
    the state round-trips exactly and stepping is deterministic.
    """
    from .config import parse_config

    state, config_text = load_checkpoint(checkpoint_path)
    config = parse_config(config_text)
    return run(config, sinks=sinks, state=state)
