"""Measurement of the confinement functionals on a running simulation.

Per record: the running radial support extent S(t), the tail masses
m_r(t) = sum of mass elements with r_i >= r at each probe radius, the
radial impulse sum_i r_i^(d-1) mu_i, the conserved sup |xi_i|, the
vorticity sup proxy sup|xi| * S^(d-2), and |u^r| sampled along a
horizontal slice through the vorticity centroid.

S(t) is accumulated as a running maximum over step-end marker positions,
so the recorded series is non-decreasing by construction; the marker set
approximates the continuum support with an O(h) layout error.  Tail
masses use the sharp indicator on particles (the smooth cutoff variant
lives in the inequality lab).

CSV contract (stable column order):

    t, S, impulse, xi_inf, omega_inf_proxy,
    m[p] for each probe radius p ascending,
    ur_abs[p] for each positive probe radius p ascending

Floats are written with shortest round-trip formatting, so a parsed file
reproduces the records bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .biot_savart import velocity_arrays
from .errors import DomainError, PreconditionError

TRANSIENT_FRACTION = 0.1  # leading fraction of the horizon ignored by fits


def growth_envelope(t, d):
    """The confinement envelope [(1+t) ln(e+t)]^(1/(d+1))."""
    t = np.asarray(t, dtype=float)
    return ((1.0 + t) * np.log(math.e + t)) ** (1.0 / (d + 1))


@dataclass(frozen=True)
class DiagnosticRecord:
    t: float
    S: float
    m_probes: dict  # probe radius -> tail mass
    impulse: float
    xi_inf: float
    omega_inf_proxy: float
    ur_profile: tuple  # ((radius, |u^r|), ...) at z = z_star
    z_star: float


def measure(state, probes, z_star=None, delta=0.0):
    """One diagnostic record for the current state.

    ``probes`` must be strictly increasing and non-negative.  ``z_star``
    defaults to the axial coordinate of the |mu|-weighted centroid (the
    strongest-field slice for single-signed data).  Velocity samples are
    taken at positive probe radii only.
    """
    probes = [float(p) for p in probes]
    if any(p < 0.0 for p in probes):
        raise DomainError("probe radii must be >= 0")
    if any(b <= a for a, b in zip(probes, probes[1:])):
        raise DomainError("probe radii must be strictly increasing")
    ens = state.ens
    d = ens.d
    if ens.n:
        S = max(state.max_r_seen, float(ens.r.max()))
        xi_inf = float(np.abs(ens.xi).max())
        impulse = math.fsum(ens.mu * ens.r ** (d - 1))
        if z_star is None:
            w = np.abs(ens.mu)
            total = math.fsum(w)
            z_star = math.fsum(ens.z * w) / total if total > 0.0 else 0.0
    else:
        S = state.max_r_seen
        xi_inf = 0.0
        impulse = 0.0
        if z_star is None:
            z_star = 0.0
    m_probes = {p: math.fsum(ens.mu[ens.r >= p]) for p in probes}
    positive = [p for p in probes if p > 0.0]
    if positive:
        ur, _ = velocity_arrays(
            ens, np.array(positive), np.full(len(positive), float(z_star)), delta
        )
        profile = tuple((p, abs(float(u))) for p, u in zip(positive, ur))
    else:
        profile = ()
    return DiagnosticRecord(
        t=float(state.t),
        S=S,
        m_probes=m_probes,
        impulse=impulse,
        xi_inf=xi_inf,
        omega_inf_proxy=xi_inf * S ** (d - 2),
        ur_profile=profile,
        z_star=float(z_star),
    )


# ---------------------------------------------------------------------------
# CSV sink / source.
# ---------------------------------------------------------------------------


def csv_columns(probes):
    head = ["t", "S", "impulse", "xi_inf", "omega_inf_proxy"]
    head += [f"m[{p!r}]" for p in probes]
    head += [f"ur_abs[{p!r}]" for p in probes if p > 0.0]
    return head


def write_csv_header(fh, probes):
    fh.write(",".join(csv_columns([float(p) for p in probes])) + "\n")


def append_csv_record(fh, rec, probes):
    probes = [float(p) for p in probes]
    vals = [rec.t, rec.S, rec.impulse, rec.xi_inf, rec.omega_inf_proxy]
    vals += [rec.m_probes[p] for p in probes]
    prof = dict(rec.ur_profile)
    vals += [prof[p] for p in probes if p > 0.0]
    fh.write(",".join(repr(float(v)) for v in vals) + "\n")


def read_csv(path):
    """Parse a diagnostics CSV back into (probes, records).

    z_star is not serialized; parsed records carry nan there.
    """
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        probes = [
            float(c[2:-1]) for c in header if c.startswith("m[") and c.endswith("]")
        ]
        records = []
        for line in fh:
            if not line.strip():
                continue
            vals = [float(tok) for tok in line.strip().split(",")]
            t, S, impulse, xi_inf, proxy = vals[:5]
            m = dict(zip(probes, vals[5 : 5 + len(probes)]))
            positive = [p for p in probes if p > 0.0]
            prof = tuple(zip(positive, vals[5 + len(probes) :]))
            records.append(
                DiagnosticRecord(
                    t=t,
                    S=S,
                    m_probes=m,
                    impulse=impulse,
                    xi_inf=xi_inf,
                    omega_inf_proxy=proxy,
                    ur_profile=prof,
                    z_star=math.nan,
                )
            )
    return probes, records


# ---------------------------------------------------------------------------
# Confinement fits and checks.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfinementFit:
    times: np.ndarray
    S_values: np.ndarray
    ratio_series: np.ndarray  # S(t) / [(1+t) ln(e+t)]^(1/(d+1))
    C_fit: float
    consistent: bool
    transient_end_index: int

    def __post_init__(self):
        if np.any(self.ratio_series < 0.0):
            raise DomainError("negative confinement ratio")
        if self.ratio_series.size and self.C_fit < self.ratio_series.max():
            raise DomainError("C_fit below a ratio entry")


def confinement_fit(series, d):
    """Fit the confinement constant and flag envelope consistency.

    Consistent means the ratio S(t)/envelope(t) is non-increasing once the
    initial transient window (first 10% of the horizon) has passed.
    """
    if not series:
        raise PreconditionError("confinement_fit needs a nonempty series")
    times = np.array([rec.t for rec in series])
    if np.any(np.diff(times) <= 0.0):
        raise PreconditionError("record times must be increasing")
    S = np.array([rec.S for rec in series])
    ratio = S / growth_envelope(times, d)
    t0, t1 = times[0], times[-1]
    cut = t0 + TRANSIENT_FRACTION * (t1 - t0)
    k0 = int(np.searchsorted(times, cut))
    tail = ratio[k0:]
    consistent = bool(np.all(np.diff(tail) <= 1e-12 * np.abs(tail[:-1])))
    return ConfinementFit(
        times=times,
        S_values=S,
        ratio_series=ratio,
        C_fit=float(ratio.max()),
        consistent=consistent,
        transient_end_index=k0,
    )


def sup_vorticity_bound_check(series, d, sign):
    """Check sup|omega| proxy against the confinement-implied growth bound.

    With C_fit from ``confinement_fit``, conservation of sup|xi| turns
    S(t) <= C_fit * envelope(t) into

        omega_proxy(t) <= C_fit^(d-2) * xi_inf * envelope(t)^(d-2),

    an algebraic consequence that must hold identically; a failure means
    the series itself is inconsistent (e.g. synthetic data).  Requires a
    single-signed run.
    """
    if sign not in (1, -1):
        raise PreconditionError("sup-vorticity check requires a single-signed run")
    fit = confinement_fit(series, d)
    env = growth_envelope(fit.times, d) ** (d - 2)
    margins = []
    ok = True
    for rec, e in zip(series, env):
        bound = fit.C_fit ** (d - 2) * rec.xi_inf * e
        margins.append(bound - rec.omega_inf_proxy)
        if rec.omega_inf_proxy > bound * (1.0 + 1e-12):
            ok = False
    report = {
        "C_fit": fit.C_fit,
        "min_margin": min(margins) if margins else math.inf,
        "consistent_envelope": fit.consistent,
    }
    return ok, report


def radial_impulse_drift(series):
    """Max relative drift |P(t) - P(0)| / |P(0)| over a recorded series."""
    if not series:
        raise PreconditionError("impulse drift needs a nonempty series")
    p0 = series[0].impulse
    if p0 == 0.0:
        raise PreconditionError("initial impulse is zero; relative drift undefined")
    return max(abs(rec.impulse - p0) for rec in series) / abs(p0)


def lemma31_envelope_fit(series, d, S0):
    """Fit C in  |u^r(r, z*)| <= C [r^-d + (r^(d-2)+1) m_(r/2)^(1/2)].

    Uses profile samples with r >= 2 S0 whose half radius is itself a
    recorded probe.  Returns (C, n_samples); C is the smallest constant
    making the bound hold on every used sample.
    """
    ratios = []
    used = 0
    for rec in series:
        for r, ur_abs in rec.ur_profile:
            if r < 2.0 * S0:
                continue
            half = None
            for p in rec.m_probes:
                if math.isclose(p, 0.5 * r, rel_tol=1e-9, abs_tol=0.0):
                    half = p
                    break
            if half is None:
                continue
            m_half = abs(rec.m_probes[half])
            envelope = r**-d + (r ** (d - 2) + 1.0) * math.sqrt(m_half)
            ratios.append(ur_abs / envelope)
            used += 1
    if not used:
        raise PreconditionError(
            "no usable profile samples: need r >= 2 S0 with r/2 among the probes"
        )
    return max(ratios), used
