"""Run configuration: flat key-value text, defaults, and initial data.

The config format is one ``key = value`` statement per line; ``#`` starts
a comment.  Keys are namespaced with dots (``initial.kind``), values are
typed per the schema below, and lists are comma separated.  Parsing fills
documented defaults and enforces every invariant; serialization emits all
keys in sorted order, so parse -> serialize -> parse is the identity.

Initial data kinds:

* ``annulus``        uniform relative vorticity xi0 on [r_min, r_max] x
                     [z_min, z_max]
* ``gaussian_ring``  xi0 = amplitude exp(-((r-c_r)^2 + (z-c_z)^2)/(2 w^2)),
                     truncated at 4.5 w
* ``mirror_pair``    the annulus plus its exact mirror image in z -> -z,
                     same sign

Particles sit at the cell centers of a uniform grid over the support,
carrying xi_i = xi0(r_i, z_i) and mu_i = xi_i r_i^(d-2) dA (midpoint
quadrature of the vorticity measure); cells with |mu| below 1e-14 of the
maximum are dropped.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .biot_savart import ParticleEnsemble
from .errors import ConfigError
from .kernel import check_dimension

MU_FLOOR_FRACTION = 1e-14
GAUSSIAN_TRUNCATION = 4.5  # support cut, in units of the ring width


@dataclass(frozen=True)
class AnnulusPatch:
    r_min: float = 1.0
    r_max: float = 2.0
    z_min: float = 0.0
    z_max: float = 1.0
    amplitude: float = 1.0

    kind = "annulus"

    def validate(self):
        if not (self.r_min > 0.0):
            raise ConfigError("initial.r_min", "patch support must avoid the axis (r_min > 0)")
        if not (self.r_max > self.r_min):
            raise ConfigError("initial.r_max", "needs r_max > r_min")
        if not (self.z_max > self.z_min):
            raise ConfigError("initial.z_max", "needs z_max > z_min")

    def radial_extent(self):
        return self.r_max

    def xi0(self, r, z):
        return np.full_like(r, self.amplitude)

    def bounding_box(self):
        return (self.r_min, self.r_max, self.z_min, self.z_max)


@dataclass(frozen=True)
class GaussianRing:
    center_r: float = 1.5
    center_z: float = 0.0
    width: float = 0.2
    amplitude: float = 1.0

    kind = "gaussian_ring"

    def validate(self):
        if not (self.width > 0.0):
            raise ConfigError("initial.width", "needs width > 0")
        if not (self.center_r - GAUSSIAN_TRUNCATION * self.width > 0.0):
            raise ConfigError(
                "initial.center_r",
                f"ring support must avoid the axis: center_r > {GAUSSIAN_TRUNCATION} width",
            )

    def radial_extent(self):
        return self.center_r + GAUSSIAN_TRUNCATION * self.width

    def xi0(self, r, z):
        q = (r - self.center_r) ** 2 + (z - self.center_z) ** 2
        return self.amplitude * np.exp(-q / (2.0 * self.width**2))

    def bounding_box(self):
        w = GAUSSIAN_TRUNCATION * self.width
        return (
            self.center_r - w,
            self.center_r + w,
            self.center_z - w,
            self.center_z + w,
        )


@dataclass(frozen=True)
class MirrorPair:
    r_min: float = 1.0
    r_max: float = 2.0
    z_min: float = 0.25
    z_max: float = 1.0
    amplitude: float = 1.0

    kind = "mirror_pair"

    def validate(self):
        if not (self.r_min > 0.0):
            raise ConfigError("initial.r_min", "patch support must avoid the axis (r_min > 0)")
        if not (self.r_max > self.r_min):
            raise ConfigError("initial.r_max", "needs r_max > r_min")
        if not (self.z_max > self.z_min >= 0.0):
            raise ConfigError("initial.z_min", "mirror pair needs 0 <= z_min < z_max")

    def radial_extent(self):
        return self.r_max

    def bounding_box(self):
        return (self.r_min, self.r_max, self.z_min, self.z_max)


_INITIAL_KINDS = {c.kind: c for c in (AnnulusPatch, GaussianRing, MirrorPair)}


@dataclass(frozen=True)
class RunConfig:
    d: int = 3
    initial: object = field(default_factory=AnnulusPatch)
    n_target: int = 4096
    dt: float = 0.01
    t_end: float = 1.0
    delta: float = 0.02
    probe_radii: tuple | None = None  # None = dyadic auto ladder
    probe_times: tuple | None = None  # None = 21 evenly spaced times
    seed: int = 0
    output_dir: str = "out"
    checkpoint_every: int = 0  # steps; 0 = final checkpoint only

    def validate(self):
        check_dimension(self.d)
        self.initial.validate()
        if self.n_target < 4:
            raise ConfigError("n_target", f"needs at least 4 particles, got {self.n_target}")
        if not (self.dt > 0.0):
            raise ConfigError("dt", f"must be positive, got {self.dt}")
        if not (self.t_end >= 0.0):
            raise ConfigError("t_end", f"must be >= 0, got {self.t_end}")
        if not (self.delta >= 0.0):
            raise ConfigError("delta", f"must be >= 0, got {self.delta}")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every", "must be >= 0")
        if self.probe_radii is not None:
            pr = list(self.probe_radii)
            if any(p < 0 for p in pr) or any(b <= a for a, b in zip(pr, pr[1:])):
                raise ConfigError("probe_radii", "must be non-negative and strictly increasing")
        if self.probe_times is not None:
            pt = list(self.probe_times)
            if any(t < 0 or t > self.t_end for t in pt):
                raise ConfigError("probe_times", "must lie in [0, t_end]")
        return self

    def resolved_probe_radii(self):
        """Probe ladder: explicit list, or S0 * [0.5, 1, 2, 4, 8, 16, 32]."""
        if self.probe_radii is not None:
            return [float(p) for p in self.probe_radii]
        s0 = self.initial.radial_extent()
        return [s0 * x for x in (0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0)]

    def resolved_probe_times(self):
        if self.probe_times is not None:
            return [float(t) for t in self.probe_times]
        if self.t_end == 0.0:
            return [0.0]
        return [self.t_end * k / 20.0 for k in range(21)]


# ---------------------------------------------------------------------------
# Text format.
# ---------------------------------------------------------------------------

_SCHEMA = {
    "d": int,
    "n_target": int,
    "dt": float,
    "t_end": float,
    "delta": float,
    "seed": int,
    "output_dir": str,
    "checkpoint_every": int,
    "probe_radii": "float_list_or_auto",
    "probe_times": "float_list_or_auto",
    "initial.kind": str,
}

_INITIAL_FIELDS = {
    "annulus": {"r_min": float, "r_max": float, "z_min": float, "z_max": float, "amplitude": float},
    "gaussian_ring": {"center_r": float, "center_z": float, "width": float, "amplitude": float},
    "mirror_pair": {"r_min": float, "r_max": float, "z_min": float, "z_max": float, "amplitude": float},
}


def _parse_value(key, kind, raw):
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        if kind == "float_list_or_auto":
            if raw == "auto":
                return None
            return tuple(float(tok) for tok in raw.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(key, f"cannot parse {raw!r}: {exc}") from None
    raise ConfigError(key, f"unhandled schema kind {kind!r}")


def parse_config(text):
    """Parse config text into a validated RunConfig with defaults filled."""
    entries = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {body!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key in entries:
            raise ConfigError(key, "duplicate key")
        entries[key] = raw

    kind = entries.pop("initial.kind", "annulus")
    if kind not in _INITIAL_KINDS:
        raise ConfigError(
            "initial.kind", f"unknown kind {kind!r}; choose from {sorted(_INITIAL_KINDS)}"
        )
    init_schema = _INITIAL_FIELDS[kind]
    init_kwargs = {}
    top_kwargs = {}
    for key, raw in entries.items():
        if key.startswith("initial."):
            fieldname = key[len("initial."):]
            if fieldname not in init_schema:
                raise ConfigError(key, f"unknown key for initial kind {kind!r}")
            init_kwargs[fieldname] = _parse_value(key, init_schema[fieldname], raw)
        elif key in _SCHEMA:
            top_kwargs[key] = _parse_value(key, _SCHEMA[key], raw)
        else:
            raise ConfigError(key, "unknown key")
    initial = _INITIAL_KINDS[kind](**init_kwargs)
    config = RunConfig(initial=initial, **top_kwargs)
    config.validate()
    return config


def _format_value(value):
    if value is None:
        return "auto"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config):
    """Canonical text form (sorted keys, round-trip exact floats)."""
    pairs = {
        "d": config.d,
        "n_target": config.n_target,
        "dt": float(config.dt),
        "t_end": float(config.t_end),
        "delta": float(config.delta),
        "seed": config.seed,
        "output_dir": config.output_dir,
        "checkpoint_every": config.checkpoint_every,
        "probe_radii": config.probe_radii,
        "probe_times": config.probe_times,
        "initial.kind": config.initial.kind,
    }
    for name in _INITIAL_FIELDS[config.initial.kind]:
        pairs[f"initial.{name}"] = float(getattr(config.initial, name))
    return "\n".join(f"{k} = {_format_value(pairs[k])}" for k in sorted(pairs)) + "\n"


def config_sha256(config):
    return hashlib.sha256(serialize_config(config).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Initial ensembles.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleBuildReport:
    n_particles: int
    total_mass: float
    S0: float
    xi_inf: float
    cell_area: float


def _grid_cells(box, n_target):
    r_lo, r_hi, z_lo, z_hi = box
    lr = r_hi - r_lo
    lz = z_hi - z_lo
    n_r = max(2, int(round(math.sqrt(n_target * lr / lz))))
    n_z = max(2, int(round(n_target / n_r)))
    hr = lr / n_r
    hz = lz / n_z
    r_centers = r_lo + (np.arange(n_r) + 0.5) * hr
    z_centers = z_lo + (np.arange(n_z) + 0.5) * hz
    rr, zz = np.meshgrid(r_centers, z_centers, indexing="ij")
    return rr.ravel(), zz.ravel(), hr * hz


def build_initial_ensemble(config):
    """Discretize the configured initial data onto marker particles.

    Returns (ensemble, report).  Mirror pairs are laid out by reflecting
    the upper-half grid, so xi(r, z) = xi(r, -z) holds exactly.
    """
    config.validate()
    init = config.initial
    d = config.d
    if isinstance(init, MirrorPair):
        upper = AnnulusPatch(init.r_min, init.r_max, init.z_min, init.z_max, init.amplitude)
        r, z, da = _grid_cells(upper.bounding_box(), max(2, config.n_target // 2))
        r = np.concatenate([r, r])
        z = np.concatenate([z, -z])
        xi = upper.xi0(r, z)
    else:
        r, z, da = _grid_cells(init.bounding_box(), config.n_target)
        xi = init.xi0(r, z)
    mu = xi * r ** (d - 2) * da
    floor = MU_FLOOR_FRACTION * (np.abs(mu).max() if mu.size else 0.0)
    keep = np.abs(mu) > floor
    r, z, xi, mu = r[keep], z[keep], xi[keep], mu[keep]
    amp = float(init.amplitude)
    sign = 1 if amp > 0.0 else (-1 if amp < 0.0 else None)
    ens = ParticleEnsemble(d=d, r=r, z=z, xi=xi, mu=mu, sign=sign)
    report = EnsembleBuildReport(
        n_particles=ens.n,
        total_mass=math.fsum(mu) if mu.size else 0.0,
        S0=float(r.max()) if r.size else 0.0,
        xi_inf=float(np.abs(xi).max()) if xi.size else 0.0,
        cell_area=da,
    )
    return ens, report
