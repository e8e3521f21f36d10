"""Velocity reconstruction by direct kernel summation over particles.

A particle j at (rb_j, zb_j) carries the mass element mu_j ~ omega dz dr
of its initial cell.  Differentiating the stream-function representation
psi = sum_j G_d(. , x_j) mu_j analytically in (r, z) gives the velocity
kernels used here; with eta = ((r-rb)^2 + (z-zb)^2 + delta^2) / (r rb),

    u^r(r, z) = -2 c_d r^(-d/2) sum_j  rb_j^(d/2-2) (z - zb_j) F_d'(eta_j) mu_j
    u^z(r, z) =    c_d r^(-d/2) sum_j [ rb_j^(d/2-1) ((d/2-1) F_d(eta_j)
                                        - eta_j F_d'(eta_j))
                                        + 2 (r - rb_j) rb_j^(d/2-2) F_d'(eta_j) ] mu_j

(u^z is the closed-form chain-rule expansion of (1/r^{d-2}) d/dr applied
to the G_d sum; the suite checks it against finite differences of the
stream function, and the whole pair against the classical d = 3 circular
filament law.)  The delta^2 term is blob regularization: it is added to
the squared distance only, so kernel symmetry in eta and the
z-antisymmetry of the u^r kernel survive regularization exactly.

Summation runs in a fixed particle-index order with compensated (Kahan)
accumulation per target; targets may be evaluated by parallel workers but
each target's sum is sequential, so results are independent of worker
count and bitwise reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit, prange

from .errors import DomainError, PreconditionError, SingularityError
from .kernel import (
    C_D,
    TABLE_N_SUB,
    HalfPlanePoint,
    check_dimension,
    get_kernel_table,
)


def _frozen_float_array(values, name):
    arr = np.array(values, dtype=float, order="C", copy=True)
    if arr.ndim != 1:
        raise DomainError(f"{name} must be one-dimensional")
    if arr.size and not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ParticleEnsemble:
    """Marker particles with conserved relative vorticity and mass elements.

    ``xi`` (relative vorticity) and ``mu`` (mass element ~ omega dz dr per
    cell) are constants of the motion; the stepper builds new ensembles
    that share these arrays and never writes to them.  All particles sit
    strictly off the axis (r > 0).
    """

    d: int
    r: np.ndarray
    z: np.ndarray
    xi: np.ndarray
    mu: np.ndarray
    sign: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "d", check_dimension(self.d))
        object.__setattr__(self, "r", _frozen_float_array(self.r, "r"))
        object.__setattr__(self, "z", _frozen_float_array(self.z, "z"))
        object.__setattr__(self, "xi", _frozen_float_array(self.xi, "xi"))
        object.__setattr__(self, "mu", _frozen_float_array(self.mu, "mu"))
        n = self.r.size
        if not (self.z.size == self.xi.size == self.mu.size == n):
            raise DomainError("particle field arrays must share one length")
        if n and not np.all(self.r > 0.0):
            raise DomainError("all particles must satisfy r > 0")
        if self.sign not in (None, 1, -1):
            raise DomainError(f"sign flag must be +1, -1 or None, got {self.sign!r}")
        if self.sign is not None and n:
            if np.any(self.sign * self.xi < 0.0):
                raise DomainError("sign flag set but xi entries of opposite sign exist")

    @property
    def n(self):
        return int(self.r.size)

    def with_positions(self, r, z):
        """New ensemble at moved positions; xi and mu values carry over."""
        return replace(self, r=r, z=z)


@dataclass(frozen=True)
class VelocitySample:
    point: HalfPlanePoint
    ur: float
    uz: float

    def __post_init__(self):
        if not (math.isfinite(self.ur) and math.isfinite(self.uz)):
            raise DomainError(f"non-finite velocity sample {self.ur}, {self.uz}")


@njit(cache=True, parallel=True)
def _pair_velocity(rt, zt, rs, zs, mu, pow_m2, pow_m1, coef_f, coef_fp, e_min,
                   n_sub, s_lo, f_lo, fp_lo, s_hi, f_hi, fp_hi, d_half, delta2,
                   out_ur, out_uz, bad):
    n_t = rt.shape[0]
    n_s = rs.shape[0]
    for k in prange(n_t):
        rk = rt[k]
        zk = zt[k]
        acc_ur = 0.0
        comp_ur = 0.0
        acc_uz = 0.0
        comp_uz = 0.0
        for j in range(n_s):
            dr = rk - rs[j]
            dz = zk - zs[j]
            q = dr * dr + dz * dz + delta2
            if q == 0.0:
                bad[k] = j + 1
                continue
            s = q / (rk * rs[j])
            if s < s_lo:
                fp = fp_lo * (s_lo / s)
                f = f_lo - s_lo * fp_lo * math.log(s_lo / s)
            elif s >= s_hi:
                ratio = s_hi / s
                f = f_hi * ratio**d_half
                fp = fp_hi * ratio ** (d_half + 1.0)
            else:
                m, e = math.frexp(s)
                sub = int((m - 0.5) * (2 * n_sub))
                if sub >= n_sub:
                    sub = n_sub - 1
                idx = (e - e_min) * n_sub + sub
                x = (m - 0.5) * (4 * n_sub) - (2 * sub + 1)
                f = coef_f[idx, 5]
                fp = coef_fp[idx, 5]
                for c in range(4, -1, -1):
                    f = f * x + coef_f[idx, c]
                    fp = fp * x + coef_fp[idx, c]
            muj = mu[j]
            term = pow_m2[j] * dz * fp * muj
            y = term - comp_ur
            t = acc_ur + y
            comp_ur = (t - acc_ur) - y
            acc_ur = t
            term = (pow_m1[j] * ((d_half - 1.0) * f - s * fp)
                    + 2.0 * dr * pow_m2[j] * fp) * muj
            y = term - comp_uz
            t = acc_uz + y
            comp_uz = (t - acc_uz) - y
            acc_uz = t
        rk_pow = rk ** (-d_half)
        out_ur[k] = -2.0 * C_D * rk_pow * acc_ur
        out_uz[k] = C_D * rk_pow * acc_uz


def velocity_arrays(ens, r_targets, z_targets, delta=0.0):
    """(u^r, u^z) arrays at target points; the bulk evaluation entry point.

    Targets must have r > 0.  ``delta`` is the blob regularization length;
    with ``delta = 0`` a target coinciding exactly with a particle is a
    kernel singularity and raises.
    """
    rt = np.ascontiguousarray(r_targets, dtype=float)
    zt = np.ascontiguousarray(z_targets, dtype=float)
    if rt.shape != zt.shape or rt.ndim != 1:
        raise DomainError("target arrays must be one-dimensional and congruent")
    if rt.size and not np.all(rt > 0.0):
        raise DomainError("velocity targets must satisfy r > 0")
    if not (delta >= 0.0 and math.isfinite(delta)):
        raise DomainError(f"regularization length must be >= 0, got {delta!r}")
    out_ur = np.zeros(rt.size)
    out_uz = np.zeros(rt.size)
    if ens.n == 0 or rt.size == 0:
        return out_ur, out_uz
    table = get_kernel_table(ens.d)
    d_half = 0.5 * ens.d
    pow_m2 = ens.r ** (d_half - 2.0)
    pow_m1 = ens.r ** (d_half - 1.0)
    bad = np.zeros(rt.size, dtype=np.int64)
    from .kernel import TABLE_E_MIN

    _pair_velocity(rt, zt, ens.r, ens.z, ens.mu, pow_m2, pow_m1,
                   table.coef_F, table.coef_Fp, TABLE_E_MIN, TABLE_N_SUB,
                   table.s_lo, table.f_lo, table.fp_lo,
                   table.s_hi, table.f_hi, table.fp_hi,
                   d_half, delta * delta, out_ur, out_uz, bad)
    if np.any(bad):
        k = int(np.argmax(bad != 0))
        raise SingularityError(
            f"target {k} coincides with particle {int(bad[k]) - 1} and delta = 0"
        )
    return out_ur, out_uz


def velocity_at(ens, p, reg=0.0):
    """Velocity sample at one half-plane point (r > 0 required)."""
    if not (p.r > 0.0):
        raise DomainError(f"velocity target needs r > 0, got {p.r}")
    ur, uz = velocity_arrays(ens, np.array([p.r]), np.array([p.z]), reg)
    return VelocitySample(point=p, ur=float(ur[0]), uz=float(uz[0]))


def velocity_field(ens, targets, reg=0.0):
    """Velocity samples at many points; elementwise equal to velocity_at.

    Each target's particle sum runs in fixed index order, so the result is
    independent of internal worker count and bitwise equal to single-point
    evaluation.
    """
    rt = np.array([p.r for p in targets])
    zt = np.array([p.z for p in targets])
    ur, uz = velocity_arrays(ens, rt, zt, reg)
    return [
        VelocitySample(point=p, ur=float(ur[i]), uz=float(uz[i]))
        for i, p in enumerate(targets)
    ]


def velocity_at_reference(ens, p, reg=0.0):
    """Serial reference summation (exact fsum), for cross-checking.

    Shares the kernel table with the fast path but accumulates with
    ``math.fsum``, providing an independent check of the compiled
    summation and its parallel partitioning.
    """
    if not (p.r > 0.0):
        raise DomainError(f"velocity target needs r > 0, got {p.r}")
    table = get_kernel_table(ens.d)
    d_half = 0.5 * ens.d
    delta2 = reg * reg
    ur_terms = []
    uz_terms = []
    for j in range(ens.n):
        dr = p.r - ens.r[j]
        dz = p.z - ens.z[j]
        q = dr * dr + dz * dz + delta2
        if q == 0.0:
            raise SingularityError(f"target coincides with particle {j} and delta = 0")
        s = q / (p.r * ens.r[j])
        f, fp = table.eval_scalar(s)
        pm2 = ens.r[j] ** (d_half - 2.0)
        pm1 = ens.r[j] ** (d_half - 1.0)
        ur_terms.append(pm2 * dz * fp * ens.mu[j])
        uz_terms.append((pm1 * ((d_half - 1.0) * f - s * fp) + 2.0 * dr * pm2 * fp) * ens.mu[j])
    rk_pow = p.r ** (-d_half)
    return VelocitySample(
        point=p,
        ur=-2.0 * C_D * rk_pow * math.fsum(ur_terms),
        uz=C_D * rk_pow * math.fsum(uz_terms),
    )


def stream_function_at(ens, p, reg=0.0):
    """psi(r, z) as a kernel-table sum; used to validate the u^z expansion."""
    if not (p.r > 0.0):
        raise DomainError(f"stream-function target needs r > 0, got {p.r}")
    table = get_kernel_table(ens.d)
    d_half = 0.5 * ens.d
    delta2 = reg * reg
    terms = []
    for j in range(ens.n):
        q = (p.r - ens.r[j]) ** 2 + (p.z - ens.z[j]) ** 2 + delta2
        if q == 0.0:
            raise SingularityError(f"target coincides with particle {j} and delta = 0")
        rr = p.r * ens.r[j]
        f, _ = table.eval_scalar(q / rr)
        terms.append(rr ** (d_half - 1.0) * f * ens.mu[j])
    return C_D * math.fsum(terms)


def divergence_check(ens, probe, h, reg=0.0):
    """Centered-difference residual of the divergence-free condition.

    Estimates d_r u^r + d_z u^z + (d-2)/r u^r at the probe; away from the
    particle support this tends to 0 as h -> 0 and delta -> 0, at second
    order in h.
    """
    if not (h > 0.0):
        raise PreconditionError(f"step h must be positive, got {h}")
    if not (probe.r > 2.0 * h):
        raise PreconditionError(f"probe needs r > 2h, got r={probe.r}, h={h}")
    if ens.n:
        dist2 = (ens.r - probe.r) ** 2 + (ens.z - probe.z) ** 2
        min_dist = math.sqrt(float(dist2.min()))
        if min_dist <= 3.0 * reg or min_dist == 0.0:
            raise PreconditionError(
                f"probe at distance {min_dist:.3e} from the nearest particle; "
                f"needs > 3 delta = {3.0 * reg:.3e} and > 0"
            )
    rt = np.array([probe.r + h, probe.r - h, probe.r, probe.r, probe.r])
    zt = np.array([probe.z, probe.z, probe.z + h, probe.z - h, probe.z])
    ur, uz = velocity_arrays(ens, rt, zt, reg)
    dur_dr = (ur[0] - ur[1]) / (2.0 * h)
    duz_dz = (uz[2] - uz[3]) / (2.0 * h)
    return float(dur_dr + duz_dz + (ens.d - 2) / probe.r * ur[4])
