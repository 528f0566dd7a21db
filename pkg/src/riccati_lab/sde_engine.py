"""Time-discretized Monte Carlo for Riccati diffusions.

Paths are advanced by an explicit scheme on a uniform grid (the last step is
shortened so the grid ends exactly at the horizon).  Each path owns one
counter-based random stream per noise component, identified by
``(seed, stream_id)``, so every ensemble is bit-reproducible and independent
of the number of worker threads.

Schemes: ``tamed_euler`` and ``milstein_tamed`` (production, positive and
explosion-free), ``raw_euler`` (the literal Euler step, kept to demonstrate
blow-up) and ``projected_euler`` (untamed Euler projected onto ``[0, inf)``,
free of the weak bias that drift taming introduces in stiff models).

Two kinds of entry points exist:

* storing simulators (``simulate_riccati``, ``simulate_coupled_pair``,
  ``simulate_coupled_xz``, ``fluctuation_fields``) keep every recorded
  state and suit ensembles up to a few million recorded values;
* streaming simulators (``power_sums``, ``path_functionals``,
  ``fluctuation_sums``) reduce paths on the fly into per-batch sums, which
  is how the large acceptance runs are done.  Batches are filled in a fixed
  order, so reductions are deterministic.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy import integrate

from . import riccati_core as rc
from .rng import COMPONENT_W, COMPONENT_W_PRIME, MASK64, STATE_SIZE, next_normal, stream_init

SCHEME_CODES = {"tamed_euler": 0, "raw_euler": 1, "milstein_tamed": 2, "projected_euler": 3}
BLOWUP_THRESHOLD = 1e12
THREADS_ENV = "RICCATI_LAB_THREADS"

_TAMED, _RAW, _MILSTEIN, _PROJECTED = 0, 1, 2, 3

# Prefer layers that need no version probe; an outdated TBB otherwise warns at first launch.
nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
_RATIONAL, _TANGENT_POTENTIAL = 0, 1


def apply_thread_cap() -> int:
    """Limit numba workers to ``RICCATI_LAB_THREADS`` when set; returns the active count."""
    available = nb.config.NUMBA_NUM_THREADS
    raw = os.environ.get(THREADS_ENV, "").strip()
    count = available
    if raw:
        try:
            count = max(1, min(available, int(raw)))
        except ValueError as exc:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from exc
    nb.set_num_threads(count)
    return count


# --- configuration and result types -----------------------------------------


@dataclass(frozen=True)
class SimConfig:
    """Time grid, scheme and random-stream layout of a simulation.

    Path ``i`` of the ensemble uses stream id ``stream_offset + i``.
    """

    dt: float = 1e-3
    horizon: float = 1.0
    scheme: str = "tamed_euler"
    seed: int = 0
    n_paths: int = 1
    record_stride: int = 1
    stream_offset: int = 0

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError(f"dt>0 required, got {self.dt}")
        if not self.horizon > 0:
            raise ValueError(f"horizon>0 required, got {self.horizon}")
        if self.dt > self.horizon * (1.0 + 1e-12):
            raise ValueError(f"dt<=horizon required, got dt={self.dt}, horizon={self.horizon}")
        if self.scheme not in SCHEME_CODES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {sorted(SCHEME_CODES)}")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ValueError(f"n_paths>=1 required, got {self.n_paths}")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ValueError(f"record_stride>=1 required, got {self.record_stride}")
        if self.stream_offset < 0:
            raise ValueError("stream_offset>=0 required")

    def with_(self, **changes) -> "SimConfig":
        from dataclasses import replace

        return replace(self, **changes)

    @property
    def n_steps(self) -> int:
        return max(1, int(math.ceil(self.horizon / self.dt - 1e-9)))

    @property
    def dt_last(self) -> float:
        return self.horizon - (self.n_steps - 1) * self.dt

    @property
    def record_steps(self) -> np.ndarray:
        steps = np.arange(0, self.n_steps, self.record_stride, dtype=np.int64)
        return np.append(steps, np.int64(self.n_steps))

    @property
    def record_times(self) -> np.ndarray:
        times = self.record_steps.astype(float) * self.dt
        times[-1] = self.horizon
        return times

    @property
    def stream_ids(self) -> np.ndarray:
        return np.arange(self.stream_offset, self.stream_offset + self.n_paths, dtype=np.uint64)


@dataclass(frozen=True)
class PathEnsemble:
    """Recorded Riccati states, one row per path."""

    times: np.ndarray
    states: np.ndarray
    stream_ids: np.ndarray
    blown_up: np.ndarray
    blowup_time: np.ndarray
    params: rc.ModelParams
    config: SimConfig

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def n_blown(self) -> int:
        return int(self.blown_up.sum())

    def finite_states(self) -> np.ndarray:
        """States of the paths that never blew up."""
        return self.states[~self.blown_up]

    def time_index(self, t: float) -> int:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the record grid")
        return idx


@dataclass(frozen=True)
class CoupledXZ:
    """Riccati component and Ornstein-Uhlenbeck component on a shared grid."""

    x_path: PathEnsemble
    z_states: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.x_path.times


@dataclass(frozen=True)
class FluctuationFields:
    """First and second order fluctuation fields at one noise scale."""

    eps: float
    times: np.ndarray
    V_eps: np.ndarray
    W_eps: np.ndarray
    V_limit: np.ndarray
    W_limit: np.ndarray
    reference: np.ndarray


@dataclass(frozen=True)
class TangentProcess:
    values: np.ndarray
    flagged: np.ndarray

    @property
    def n_flagged(self) -> int:
        return int(self.flagged.sum())


@dataclass(frozen=True)
class PowerSums:
    """Per-batch sums of ``X_t**k`` for ``k = 0..max_power`` at each record instant."""

    times: np.ndarray
    sums: np.ndarray
    n_blown: int

    @property
    def counts(self) -> np.ndarray:
        return self.sums[:, :, 0]


@dataclass(frozen=True)
class PathFunctionals:
    """Per-path states and time integrals of an integrand at each record instant.

    With Richardson pairing, ``coarse_*`` hold the same quantities computed on
    the grid of doubled step built from the same Brownian increments.
    """

    times: np.ndarray
    states: np.ndarray
    integrals: np.ndarray
    coarse_states: np.ndarray | None
    coarse_integrals: np.ndarray | None
    flagged: np.ndarray

    @property
    def n_flagged(self) -> int:
        return int(self.flagged.sum())


@dataclass(frozen=True)
class FluctuationSums:
    """Per-batch sums at each record instant of ``r``, ``r**2``, ``V``, ``V**2``.

    ``r = X_eps - reference - eps V`` and ``V`` is the first-order field built
    from the same increments.
    """

    eps: float
    times: np.ndarray
    sums: np.ndarray
    W_limit: np.ndarray
    reference: np.ndarray


# --- numerical kernels ------------------------------------------------------


@nb.njit(inline="always")
def diffusion_cap(h):
    """State level above which tamed schemes freeze the diffusion coefficient."""
    return 1.0 / (h * h)


@nb.njit(inline="always")
def _step(x, h, dw, A, R, S, U, V, eps, scheme):
    b = 2.0 * A * x + R - S * x * x
    if scheme == _RAW:
        return x + b * h + eps * math.sqrt(x * (U + V * x * x)) * dw
    if scheme == _PROJECTED:
        # Untamed Euler step kept on [0, inf): no drift distortion in stiff models.
        xp = max(x, 0.0)
        return max(x + b * h + eps * math.sqrt(xp * (U + V * xp * xp)) * dw, 0.0)
    # Drift taming alone does not prevent explosion when the diffusion grows
    # like x^(3/2): rare excursions compound.  The diffusion coefficient is
    # therefore evaluated at min(x, h^-2), a level never reached in practice
    # for h <= 1e-3.
    xs = min(max(x, 0.0), diffusion_cap(h))
    xn = x + b * h / (1.0 + h * abs(b)) + eps * math.sqrt(xs * (U + V * xs * xs)) * dw
    if scheme == _MILSTEIN:
        xn += 0.25 * eps * eps * (U + 3.0 * V * xs * xs) * (dw * dw - h)
    if xn < 0.0:
        xn = 0.0
    return xn


@nb.njit(inline="always")
def _is_blown(x):
    return not (abs(x) <= BLOWUP_THRESHOLD)


@nb.njit(inline="always")
def _integrand(x, kind, c):
    if kind == _RATIONAL:
        return c[0] + c[1] * x + c[2] / x if c[2] != 0.0 else c[0] + c[1] * x
    A, R, S, U, V, eps = c[0], c[1], c[2], c[3], c[4], c[5]
    base = U + V * x * x
    slope = U + 3.0 * V * x * x
    value = slope / base * (A + 0.5 * R / x - 0.5 * S * x) - 2.0 * (A - S * x)
    return value + 0.25 * eps * eps * (6.0 * V * x - slope * slope / (2.0 * x * base))


@nb.njit(inline="always")
def _singular_at_zero(kind, c):
    return kind == _TANGENT_POTENTIAL or c[2] != 0.0


@nb.njit(parallel=True, cache=True)
def _paths_kernel(x0, seed, streams, n_steps, dt, dt_last, rec, coef, scheme, states, blow_time):
    A, R, S, U, V, eps = coef[0], coef[1], coef[2], coef[3], coef[4], coef[5]
    n_rec = rec.shape[0]
    for p in nb.prange(x0.shape[0]):
        rs = np.empty(STATE_SIZE, dtype=np.uint64)
        stream_init(rs, seed, streams[p], COMPONENT_W)
        x = x0[p]
        r = 0
        if rec[0] == 0:
            states[p, 0] = x
            r = 1
        for k in range(n_steps):
            h = dt if k < n_steps - 1 else dt_last
            x = _step(x, h, math.sqrt(h) * next_normal(rs), A, R, S, U, V, eps, scheme)
            if _is_blown(x):
                blow_time[p] = (k + 1) * dt if k < n_steps - 1 else (n_steps - 1) * dt + dt_last
                break
            if r < n_rec and rec[r] == k + 1:
                states[p, r] = x
                r += 1


@nb.njit(parallel=True, cache=True)
def _pair_kernel(x1, x2, seed, streams, n_steps, dt, dt_last, rec, coef, scheme, s1, s2, b1, b2):
    A, R, S, U, V, eps = coef[0], coef[1], coef[2], coef[3], coef[4], coef[5]
    n_rec = rec.shape[0]
    for p in nb.prange(x1.shape[0]):
        rs = np.empty(STATE_SIZE, dtype=np.uint64)
        stream_init(rs, seed, streams[p], COMPONENT_W)
        y1 = x1[p]
        y2 = x2[p]
        alive1 = True
        alive2 = True
        r = 0
        if rec[0] == 0:
            s1[p, 0] = y1
            s2[p, 0] = y2
            r = 1
        for k in range(n_steps):
            h = dt if k < n_steps - 1 else dt_last
            dw = math.sqrt(h) * next_normal(rs)
            t_new = (k + 1) * dt if k < n_steps - 1 else (n_steps - 1) * dt + dt_last
            if alive1:
                y1 = _step(y1, h, dw, A, R, S, U, V, eps, scheme)
                if _is_blown(y1):
                    alive1 = False
                    b1[p] = t_new
            if alive2:
                y2 = _step(y2, h, dw, A, R, S, U, V, eps, scheme)
                if _is_blown(y2):
                    alive2 = False
                    b2[p] = t_new
            if not (alive1 or alive2):
                break
            if r < n_rec and rec[r] == k + 1:
                if alive1:
                    s1[p, r] = y1
                if alive2:
                    s2[p, r] = y2
                r += 1


@nb.njit(parallel=True, cache=True)
def _xz_kernel(x0, z0, seed, streams, n_steps, dt, dt_last, rec, coef, scheme, xs, zs, blow_time):
    A, R, S, U, V, eps, eps_bar = coef[0], coef[1], coef[2], coef[3], coef[4], coef[5], coef[6]
    n_rec = rec.shape[0]
    for p in nb.prange(x0.shape[0]):
        rs_x = np.empty(STATE_SIZE, dtype=np.uint64)
        rs_z = np.empty(STATE_SIZE, dtype=np.uint64)
        stream_init(rs_x, seed, streams[p], COMPONENT_W)
        stream_init(rs_z, seed, streams[p], COMPONENT_W_PRIME)
        x = x0[p]
        z = z0[p]
        r = 0
        if rec[0] == 0:
            xs[p, 0] = x
            zs[p, 0] = z
            r = 1
        for k in range(n_steps):
            h = dt if k < n_steps - 1 else dt_last
            sq = math.sqrt(h)
            dw = sq * next_normal(rs_x)
            dw_prime = sq * next_normal(rs_z)
            drift_z = (A - S * x) * z
            var_z = R + S * x * x + eps_bar * eps_bar * x * (U + V * x * x)
            z = z + drift_z * h / (1.0 + h * abs(drift_z)) + math.sqrt(max(var_z, 0.0)) * dw_prime
            x = _step(x, h, dw, A, R, S, U, V, eps, scheme)
            if _is_blown(x) or _is_blown(z):
                blow_time[p] = (k + 1) * dt if k < n_steps - 1 else (n_steps - 1) * dt + dt_last
                break
            if r < n_rec and rec[r] == k + 1:
                xs[p, r] = x
                zs[p, r] = z
                r += 1


# The streaming kernels advance four paths in lockstep per worker.  The step
# is latency-bound (a division and a square root per path), so interleaving
# independent lanes roughly halves the cost per path-step.  Lane state is
# carried in tuples, which numba keeps in registers; small arrays would not be.
LANES = 4


@nb.njit(inline="always")
def _lane_streams(rs, seed, stream0, first):
    for lane in range(LANES):
        stream_init(rs[lane], seed, stream0 + np.uint64(first + lane), COMPONENT_W)


@nb.njit(inline="always")
def _power_advance(st, h, dw, A, R, S, U, V, eps, scheme):
    x, ok = st
    if not ok:
        return st
    x = _step(x, h, dw, A, R, S, U, V, eps, scheme)
    return x, not _is_blown(x)


@nb.njit(parallel=True, cache=True)
def _power_sums_kernel(x0, bounds, seed, stream0, n_steps, dt, dt_last, rec, coef, scheme, out, blown):
    A, R, S, U, V, eps = coef[0], coef[1], coef[2], coef[3], coef[4], coef[5]
    n_rec = rec.shape[0]
    n_pow = out.shape[2]
    n_batches = bounds.shape[0] - 1
    for b in nb.prange(n_batches):
        rs = np.empty((LANES, STATE_SIZE), dtype=np.uint64)
        buf = np.empty((n_rec, LANES))
        lo, hi = bounds[b], bounds[b + 1]
        for first in range(lo, hi, LANES):
            _lane_streams(rs, seed, stream0, first)
            last = min(first + LANES, hi) - 1
            s0 = (x0[first], True)
            s1 = (x0[min(first + 1, last)], True)
            s2 = (x0[min(first + 2, last)], True)
            s3 = (x0[min(first + 3, last)], True)
            r = 0
            if rec[0] == 0:
                buf[0, 0], buf[0, 1], buf[0, 2], buf[0, 3] = s0[0], s1[0], s2[0], s3[0]
                r = 1
            for k in range(n_steps):
                h = dt if k < n_steps - 1 else dt_last
                sq = math.sqrt(h)
                z0, z1, z2, z3 = next_normal(rs[0]), next_normal(rs[1]), next_normal(rs[2]), next_normal(rs[3])
                s0 = _power_advance(s0, h, sq * z0, A, R, S, U, V, eps, scheme)
                s1 = _power_advance(s1, h, sq * z1, A, R, S, U, V, eps, scheme)
                s2 = _power_advance(s2, h, sq * z2, A, R, S, U, V, eps, scheme)
                s3 = _power_advance(s3, h, sq * z3, A, R, S, U, V, eps, scheme)
                if not (s0[1] or s1[1] or s2[1] or s3[1]):
                    break
                if r < n_rec and rec[r] == k + 1:
                    buf[r, 0], buf[r, 1], buf[r, 2], buf[r, 3] = s0[0], s1[0], s2[0], s3[0]
                    r += 1
            oks = (s0[1], s1[1], s2[1], s3[1])
            for lane in range(last - first + 1):
                if not oks[lane]:
                    blown[b] += 1
                    continue
                for j in range(n_rec):
                    v = 1.0
                    for q in range(n_pow):
                        out[b, j, q] += v
                        v *= buf[j, lane]


@nb.njit(inline="always")
def _functional_init(x, kind, ic, singular):
    bad = singular and x <= 0.0
    f = 0.0 if bad else _integrand(x, kind, ic)
    return x, x, 0.0, 0.0, f, f, 0.0, bad


@nb.njit(inline="always")
def _functional_advance(st, k, dt, dw, A, R, S, U, V, eps, scheme, kind, ic, singular, richardson):
    x, xc, acc, acc_c, f_old, fc_old, dw_pair, bad = st
    if bad:
        return st
    x = _step(x, dt, dw, A, R, S, U, V, eps, scheme)
    if singular and x <= 0.0:
        return x, xc, acc, acc_c, f_old, fc_old, dw_pair, True
    f_new = _integrand(x, kind, ic)
    acc += 0.5 * dt * (f_old + f_new)
    if richardson:
        dw_pair += dw
        if k % 2 == 1:
            xc = _step(xc, 2.0 * dt, dw_pair, A, R, S, U, V, eps, scheme)
            dw_pair = 0.0
            if singular and xc <= 0.0:
                return x, xc, acc, acc_c, f_new, fc_old, dw_pair, True
            fc_new = _integrand(xc, kind, ic)
            acc_c += dt * (fc_old + fc_new)
            fc_old = fc_new
    return x, xc, acc, acc_c, f_new, fc_old, dw_pair, False


@nb.njit(inline="always")
def _functional_store(st, p, r, n, richardson, states, integrals, c_states, c_integrals):
    if p < n:
        states[p, r] = st[0]
        integrals[p, r] = st[2]
        if richardson:
            c_states[p, r] = st[1]
            c_integrals[p, r] = st[3]


@nb.njit(parallel=True, cache=True)
def _functional_kernel(
    x0, seed, stream0, n_steps, dt, rec, coef, scheme, kind, ic, richardson,
    states, integrals, c_states, c_integrals, flagged,
):
    A, R, S, U, V, eps = coef[0], coef[1], coef[2], coef[3], coef[4], coef[5]
    n = x0.shape[0]
    n_rec = rec.shape[0]
    singular = _singular_at_zero(kind, ic)
    sq = math.sqrt(dt)
    n_groups = (n + LANES - 1) // LANES
    for g in nb.prange(n_groups):
        first = g * LANES
        last = min(first + LANES, n) - 1
        rs = np.empty((LANES, STATE_SIZE), dtype=np.uint64)
        _lane_streams(rs, seed, stream0, first)
        s0 = _functional_init(x0[first], kind, ic, singular)
        s1 = _functional_init(x0[min(first + 1, last)], kind, ic, singular)
        s2 = _functional_init(x0[min(first + 2, last)], kind, ic, singular)
        s3 = _functional_init(x0[min(first + 3, last)], kind, ic, singular)
        r = 0
        if rec[0] == 0:
            _functional_store(s0, first, 0, n, richardson, states, integrals, c_states, c_integrals)
            _functional_store(s1, first + 1, 0, n, richardson, states, integrals, c_states, c_integrals)
            _functional_store(s2, first + 2, 0, n, richardson, states, integrals, c_states, c_integrals)
            _functional_store(s3, first + 3, 0, n, richardson, states, integrals, c_states, c_integrals)
            r = 1
        for k in range(n_steps):
            z0, z1, z2, z3 = next_normal(rs[0]), next_normal(rs[1]), next_normal(rs[2]), next_normal(rs[3])
            s0 = _functional_advance(s0, k, dt, sq * z0, A, R, S, U, V, eps, scheme, kind, ic, singular, richardson)
            s1 = _functional_advance(s1, k, dt, sq * z1, A, R, S, U, V, eps, scheme, kind, ic, singular, richardson)
            s2 = _functional_advance(s2, k, dt, sq * z2, A, R, S, U, V, eps, scheme, kind, ic, singular, richardson)
            s3 = _functional_advance(s3, k, dt, sq * z3, A, R, S, U, V, eps, scheme, kind, ic, singular, richardson)
            if r < n_rec and rec[r] == k + 1:
                _functional_store(s0, first, r, n, richardson, states, integrals, c_states, c_integrals)
                _functional_store(s1, first + 1, r, n, richardson, states, integrals, c_states, c_integrals)
                _functional_store(s2, first + 2, r, n, richardson, states, integrals, c_states, c_integrals)
                _functional_store(s3, first + 3, r, n, richardson, states, integrals, c_states, c_integrals)
                r += 1
        bads = (s0[7], s1[7], s2[7], s3[7])
        for lane in range(last - first + 1):
            flagged[first + lane] = bads[lane]


@nb.njit(inline="always")
def _fluctuation_advance(st, h, dw, A, R, S, U, V, eps, scheme, gain, load):
    x, v = st
    return _step(x, h, dw, A, R, S, U, V, eps, scheme), gain * v + load * dw


@nb.njit(inline="always")
def _fluctuation_record(st, p, hi, b, r, ref, eps, out, storing, store_v, store_x):
    if p < hi:
        x, v = st
        resid = x - ref - eps * v
        out[b, r, 0] += resid
        out[b, r, 1] += resid * resid
        out[b, r, 2] += v
        out[b, r, 3] += v * v
        if storing:
            store_v[p, r] = v
            store_x[p, r] = x


@nb.njit(parallel=True, cache=True)
def _fluctuation_kernel(
    x0, bounds, seed, stream0, n_steps, dt, dt_last, rec, coef, scheme,
    ref, gain, load, out, store_v, store_x,
):
    A, R, S, U, V, eps = coef[0], coef[1], coef[2], coef[3], coef[4], coef[5]
    n_rec = rec.shape[0]
    n_batches = bounds.shape[0] - 1
    storing = store_v.shape[0] > 0
    for b in nb.prange(n_batches):
        rs = np.empty((LANES, STATE_SIZE), dtype=np.uint64)
        lo, hi = bounds[b], bounds[b + 1]
        for first in range(lo, hi, LANES):
            _lane_streams(rs, seed, stream0, first)
            s0 = s1 = s2 = s3 = (x0, 0.0)
            r = 0
            if rec[0] == 0:
                _fluctuation_record(s0, first, hi, b, 0, ref[0], eps, out, storing, store_v, store_x)
                _fluctuation_record(s1, first + 1, hi, b, 0, ref[0], eps, out, storing, store_v, store_x)
                _fluctuation_record(s2, first + 2, hi, b, 0, ref[0], eps, out, storing, store_v, store_x)
                _fluctuation_record(s3, first + 3, hi, b, 0, ref[0], eps, out, storing, store_v, store_x)
                r = 1
            for k in range(n_steps):
                h = dt if k < n_steps - 1 else dt_last
                sq = math.sqrt(h)
                gk, lk = gain[k], load[k]
                z0, z1, z2, z3 = next_normal(rs[0]), next_normal(rs[1]), next_normal(rs[2]), next_normal(rs[3])
                s0 = _fluctuation_advance(s0, h, sq * z0, A, R, S, U, V, eps, scheme, gk, lk)
                s1 = _fluctuation_advance(s1, h, sq * z1, A, R, S, U, V, eps, scheme, gk, lk)
                s2 = _fluctuation_advance(s2, h, sq * z2, A, R, S, U, V, eps, scheme, gk, lk)
                s3 = _fluctuation_advance(s3, h, sq * z3, A, R, S, U, V, eps, scheme, gk, lk)
                if r < n_rec and rec[r] == k + 1:
                    rk = ref[k + 1]
                    _fluctuation_record(s0, first, hi, b, r, rk, eps, out, storing, store_v, store_x)
                    _fluctuation_record(s1, first + 1, hi, b, r, rk, eps, out, storing, store_v, store_x)
                    _fluctuation_record(s2, first + 2, hi, b, r, rk, eps, out, storing, store_v, store_x)
                    _fluctuation_record(s3, first + 3, hi, b, r, rk, eps, out, storing, store_v, store_x)
                    r += 1


@nb.njit(cache=True)
def _deterministic_path(x0, n_steps, dt, dt_last, coef, scheme):
    A, R, S, U, V = coef[0], coef[1], coef[2], coef[3], coef[4]
    xs = np.empty(n_steps + 1)
    gain = np.empty(n_steps)
    xs[0] = x0
    x = x0
    for k in range(n_steps):
        h = dt if k < n_steps - 1 else dt_last
        b = 2.0 * A * x + R - S * x * x
        if scheme == _RAW or scheme == _PROJECTED:
            gain[k] = 1.0 + 2.0 * (A - S * x) * h
        else:
            q = 1.0 + h * abs(b)
            gain[k] = 1.0 + 2.0 * (A - S * x) * h / (q * q)
        x = _step(x, h, 0.0, A, R, S, U, V, 0.0, scheme)
        xs[k + 1] = x
    return xs, gain


# --- helpers ----------------------------------------------------------------


def _coef(params: rc.ModelParams) -> np.ndarray:
    return np.array([params.A, params.R, params.S, params.U, params.V, params.eps], dtype=float)


def _seed(config: SimConfig) -> np.uint64:
    return np.uint64(int(config.seed) & MASK64)


def _start(x0, n: int, name: str = "x0") -> np.ndarray:
    arr = np.asarray(x0, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"{name} must be a scalar or have one entry per path ({n})")
    if np.any(~np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return np.ascontiguousarray(arr)


def _check_start(arr: np.ndarray, name: str = "x0") -> None:
    if np.any(arr < 0):
        raise ValueError(f"{name}>=0 required")


def _batch_bounds(n_paths: int, n_batches: int) -> np.ndarray:
    n_batches = max(1, min(int(n_batches), n_paths))
    return (np.arange(n_batches + 1, dtype=np.int64) * n_paths) // n_batches


# --- storing simulators -----------------------------------------------------


def simulate_riccati(params: rc.ModelParams, x0, config: SimConfig) -> PathEnsemble:
    """Simulate ``config.n_paths`` Riccati paths from ``x0`` (scalar or one per path).

    Blown-up paths (raw scheme only) hold NaN after their first blow-up time.
    """
    starts = _start(x0, config.n_paths)
    _check_start(starts)
    apply_thread_cap()
    rec = config.record_steps
    states = np.full((config.n_paths, rec.size), np.nan)
    blow_time = np.full(config.n_paths, np.nan)
    _paths_kernel(
        starts, _seed(config), config.stream_ids, config.n_steps, config.dt, config.dt_last,
        rec, _coef(params), SCHEME_CODES[config.scheme], states, blow_time,
    )
    return PathEnsemble(
        times=config.record_times, states=states, stream_ids=config.stream_ids,
        blown_up=~np.isnan(blow_time), blowup_time=blow_time, params=params, config=config,
    )


def simulate_coupled_pair(params: rc.ModelParams, x1, x2, config: SimConfig) -> tuple[PathEnsemble, PathEnsemble]:
    """Two ensembles from ``x1`` and ``x2`` driven by identical Brownian increments."""
    a = _start(x1, config.n_paths, "x1")
    b = _start(x2, config.n_paths, "x2")
    _check_start(a, "x1")
    _check_start(b, "x2")
    apply_thread_cap()
    rec = config.record_steps
    s1 = np.full((config.n_paths, rec.size), np.nan)
    s2 = np.full_like(s1, np.nan)
    b1 = np.full(config.n_paths, np.nan)
    b2 = np.full_like(b1, np.nan)
    _pair_kernel(
        a, b, _seed(config), config.stream_ids, config.n_steps, config.dt, config.dt_last,
        rec, _coef(params), SCHEME_CODES[config.scheme], s1, s2, b1, b2,
    )
    times = config.record_times
    make = lambda s, bt: PathEnsemble(times, s, config.stream_ids, ~np.isnan(bt), bt, params, config)  # noqa: E731
    return make(s1, b1), make(s2, b2)


def simulate_coupled_xz(params: rc.ModelParams, x0, z0, config: SimConfig) -> CoupledXZ:
    """Riccati component ``X`` and the Ornstein-Uhlenbeck component ``Z`` it drives.

    ``Z`` follows ``dZ = (1/2) dLambda(X) Z dt + sqrt(R + S X^2 + eps_bar^2 X (U + V X^2)) dW'``
    with ``W'`` independent of the noise of ``X``.
    """
    xs0 = _start(x0, config.n_paths)
    zs0 = _start(z0, config.n_paths, "z0")
    _check_start(xs0)
    apply_thread_cap()
    rec = config.record_steps
    xs = np.full((config.n_paths, rec.size), np.nan)
    zs = np.full_like(xs, np.nan)
    blow_time = np.full(config.n_paths, np.nan)
    coef = np.append(_coef(params), params.eps_bar)
    _xz_kernel(
        xs0, zs0, _seed(config), config.stream_ids, config.n_steps, config.dt, config.dt_last,
        rec, coef, SCHEME_CODES[config.scheme], xs, zs, blow_time,
    )
    ens = PathEnsemble(
        config.record_times, xs, config.stream_ids, ~np.isnan(blow_time), blow_time, params, config
    )
    return CoupledXZ(x_path=ens, z_states=zs)


# --- path functionals on stored ensembles -----------------------------------


def _window(path: PathEnsemble, s: float, t: float) -> slice:
    if s > t:
        raise ValueError(f"s<=t required, got s={s}, t={t}")
    i, j = path.time_index(s), path.time_index(t)
    return slice(i, j + 1)


def _trapezoid(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    if times.size < 2:
        return np.zeros(values.shape[0])
    return integrate.trapezoid(values, times, axis=1)


def exp_functional(path: PathEnsemble, s: float, t: float) -> np.ndarray:
    """``exp(int_s^t (1/2) dLambda(X_u) du)`` per path, by the trapezoid rule on the record grid."""
    w = _window(path, s, t)
    half_slope = 0.5 * path.params.drift_derivative(path.states[:, w])
    return np.exp(_trapezoid(half_slope, path.times[w]))


def exp_functional_pair(path1: PathEnsemble, path2: PathEnsemble, s: float, t: float) -> np.ndarray:
    """Two-point exponential functional ``E_{s,t}(x1) E_{s,t}(x2)``.

    For coupled paths it satisfies ``X_t(x1) - X_t(x2) = E_{s,t}(x1, x2) (X_s(x1) - X_s(x2))``
    in the noiseless case, because ``Lambda(a) - Lambda(b) = (a - b)(2A - S(a + b))``.
    """
    return exp_functional(path1, s, t) * exp_functional(path2, s, t)


def tangent_process(path: PathEnsemble, params: rc.ModelParams | None = None) -> TangentProcess:
    """Tangent process ``sigma1(X_t)/sigma1(x) exp(-int_0^t H(X_s) ds)`` on the record grid.

    Paths that touch zero, where the potential is singular, are flagged and
    hold NaN.
    """
    params = path.params if params is None else params
    if params.U == 0 and params.V == 0:
        raise rc.ParameterDomainError("tangent process needs U>0 or V>0")
    states = path.states
    flagged = path.blown_up | np.any(~(states > 0), axis=1)
    good = states[~flagged]
    values = np.full(states.shape, np.nan)
    if good.size:
        pot = np.asarray(rc.potential_H(params, good))
        dt = np.diff(path.times)
        cumulative = np.concatenate(
            [np.zeros((good.shape[0], 1)), np.cumsum(0.5 * dt * (pot[:, 1:] + pot[:, :-1]), axis=1)], axis=1
        )
        ratio = params.sigma1(good) / params.sigma1(good[:, :1])
        values[~flagged] = ratio * np.exp(-cumulative)
    return TangentProcess(values=values, flagged=flagged)


def fluctuation_fields(
    params: rc.ModelParams,
    x0: float,
    config: SimConfig,
    eps_list,
    reference: str = "closed_form",
) -> dict[float, FluctuationFields]:
    """Fluctuation fields from paths sharing one set of Brownian increments per noise scale.

    ``reference="closed_form"`` compares with the exact semigroup ``phi`` and
    builds ``V`` through the kernel ``d phi_{t-s}(phi_s) sigma1(phi_s)``;
    ``reference="scheme"`` instead uses the noiseless path of the same scheme
    and the exact linearization of the scheme, which removes discretization
    error from the comparison.
    """
    fields: dict[float, FluctuationFields] = {}
    for eps in eps_list:
        sums, v_paths, x_paths = _run_fluctuation(params.with_(eps=float(eps)), x0, config, reference, 1, True)
        ref = sums.reference
        eps = float(eps)
        v_eps = (x_paths - ref) / eps
        fields[eps] = FluctuationFields(
            eps=eps, times=sums.times, V_eps=v_eps, W_eps=(v_eps - v_paths) / eps,
            V_limit=v_paths, W_limit=sums.W_limit, reference=ref,
        )
    return fields


def fluctuation_sums(
    params: rc.ModelParams, x0: float, config: SimConfig, n_batches: int = 32, reference: str = "scheme"
) -> FluctuationSums:
    """Streaming version of ``fluctuation_fields`` at the noise scale ``params.eps``."""
    return _run_fluctuation(params, x0, config, reference, n_batches, False)[0]


def bias_limit(params: rc.ModelParams, x0: float, times) -> np.ndarray:
    """Second-order bias ``W_t = 1/2 int_0^t d2phi_{t-s}(phi_s) sigma1(phi_s)^2 ds``."""
    base = params.with_(eps=0.0)

    def integrand(s: float, t: float) -> float:
        y = float(rc.phi(s, x0, base))
        return 0.5 * float(rc.phi_derivative(2, t - s, y, base)) * float(base.sigma1(y)) ** 2

    out = np.zeros(np.size(times))
    for i, t in enumerate(np.atleast_1d(times)):
        if t > 0:
            out[i] = integrate.quad(integrand, 0.0, float(t), args=(float(t),), epsabs=0.0, epsrel=1e-10, limit=200)[0]
    return out


def _run_fluctuation(params, x0, config, reference, n_batches, store):
    if x0 < 0:
        raise ValueError("x0>=0 required")
    if reference not in ("closed_form", "scheme"):
        raise ValueError(f"reference must be 'closed_form' or 'scheme', got {reference!r}")
    apply_thread_cap()
    n_steps, dt, dt_last = config.n_steps, config.dt, config.dt_last
    scheme = SCHEME_CODES[config.scheme]
    coef = _coef(params)
    steps_dt = np.full(n_steps, dt)
    steps_dt[-1] = dt_last
    grid = np.concatenate([[0.0], np.cumsum(steps_dt)])
    grid[-1] = config.horizon
    base = params.with_(eps=0.0)
    if reference == "scheme":
        ref, gain = _deterministic_path(float(x0), n_steps, dt, dt_last, coef, scheme)
        load = base.sigma1(ref[:-1])
    else:
        ref = np.asarray(rc.phi(grid, float(x0), base), dtype=float)
        tangent = np.asarray(rc.phi_derivative(1, grid, float(x0), base), dtype=float)
        gain = tangent[1:] / tangent[:-1]
        load = gain * base.sigma1(ref[:-1])
    rec = config.record_steps
    bounds = _batch_bounds(config.n_paths, n_batches)
    out = np.zeros((bounds.size - 1, rec.size, 4))
    shape = (config.n_paths, rec.size) if store else (0, 0)
    store_v = np.zeros(shape)
    store_x = np.zeros(shape)
    _fluctuation_kernel(
        float(x0), bounds, _seed(config), np.uint64(config.stream_offset), n_steps, dt, dt_last, rec, coef,
        scheme, np.ascontiguousarray(ref), np.ascontiguousarray(gain), np.ascontiguousarray(load),
        out, store_v, store_x,
    )
    times = config.record_times
    sums = FluctuationSums(
        eps=params.eps, times=times, sums=out, W_limit=bias_limit(params, float(x0), times), reference=ref[rec]
    )
    return sums, store_v, store_x


# --- streaming simulators ---------------------------------------------------


def power_sums(
    params: rc.ModelParams,
    x0,
    config: SimConfig,
    max_power: int,
    n_batches: int = 32,
    batch_sizes=None,
) -> PowerSums:
    """Per-batch sums of ``X_t**k``, ``k = 0..max_power``, without storing paths.

    ``batch_sizes`` overrides the even split into ``n_batches`` batches; paths
    are assigned to batches contiguously in stream order.
    """
    starts = _start(x0, config.n_paths)
    _check_start(starts)
    if max_power < 0:
        raise ValueError("max_power>=0 required")
    if batch_sizes is not None:
        sizes = np.asarray(batch_sizes, dtype=np.int64)
        if sizes.sum() != config.n_paths or np.any(sizes < 1):
            raise ValueError("batch_sizes must be positive and sum to n_paths")
        bounds = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    else:
        bounds = _batch_bounds(config.n_paths, n_batches)
    apply_thread_cap()
    rec = config.record_steps
    out = np.zeros((bounds.size - 1, rec.size, max_power + 1))
    blown = np.zeros(bounds.size - 1, dtype=np.int64)
    _power_sums_kernel(
        starts, bounds, _seed(config), np.uint64(config.stream_offset), config.n_steps, config.dt,
        config.dt_last, rec, _coef(params), SCHEME_CODES[config.scheme], out, blown,
    )
    return PowerSums(times=config.record_times, sums=out, n_blown=int(blown.sum()))


@dataclass(frozen=True)
class Integrand:
    """Integrand of a path functional: ``c0 + c1 x + c2 / x`` or the tangent potential."""

    kind: int
    coef: np.ndarray

    @staticmethod
    def rational(c0: float, c1: float, c2: float = 0.0) -> "Integrand":
        return Integrand(_RATIONAL, np.array([c0, c1, c2, 0.0, 0.0, 0.0]))

    @staticmethod
    def half_drift_derivative(params: rc.ModelParams) -> "Integrand":
        return Integrand.rational(params.A, -params.S)

    @staticmethod
    def drift_derivative(params: rc.ModelParams) -> "Integrand":
        return Integrand.rational(2.0 * params.A, -2.0 * params.S)

    @staticmethod
    def tangent_potential(params: rc.ModelParams) -> "Integrand":
        if params.U == 0 and params.V == 0:
            raise rc.ParameterDomainError("tangent potential needs U>0 or V>0")
        return Integrand(_TANGENT_POTENTIAL, _coef(params))

    @staticmethod
    def hat_potential(params: rc.ModelParams) -> "Integrand":
        """Potential of the hat tangent-type process as ``c0 + c1 x + c2/x``."""
        if params.eps > rc.hat_epsilon_max(params):
            raise rc.ParameterDomainError("hat family ill-founded at this eps")
        iota = rc.derive(params).iota
        i1 = 1.0 + iota
        half = 0.5 * params.eps**2 * i1
        s_coef = (1.0 + half * params.Vbar) * params.S
        return Integrand.rational(
            2.0 * iota * params.A, (i1 - 2.0 * iota) * s_coef, i1 * (1.0 - half * params.Ubar) * params.R
        )

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        c = self.coef
        if self.kind == _RATIONAL:
            return c[0] + c[1] * x + (c[2] / x if c[2] != 0.0 else 0.0)
        params = rc.ModelParams(*c[:6])
        return rc.potential_H(params, x)


def path_functionals(
    params: rc.ModelParams, x0, config: SimConfig, integrand: Integrand, richardson: bool = False
) -> PathFunctionals:
    """Terminal-type statistics: states and ``int_0^t integrand(X_s) ds`` at each record instant.

    The integral uses the trapezoid rule on the simulation grid.  With
    ``richardson=True`` every path is also advanced on the doubled-step grid
    using sums of consecutive increments, so ``2 Y_fine - Y_coarse``
    cancels the leading weak error.  That mode requires a uniform grid with
    an even number of steps and even record steps.
    """
    starts = _start(x0, config.n_paths)
    _check_start(starts)
    n_steps = config.n_steps
    if abs(config.dt_last - config.dt) > 1e-9 * config.dt:
        raise ValueError("path_functionals needs horizon to be a multiple of dt")
    rec = config.record_steps
    if richardson and (n_steps % 2 or np.any(rec % 2)):
        raise ValueError("Richardson pairing needs an even number of steps and even record steps")
    apply_thread_cap()
    n = config.n_paths
    states = np.full((n, rec.size), np.nan)
    integrals = np.full_like(states, np.nan)
    c_shape = (n, rec.size) if richardson else (0, 0)
    c_states = np.full(c_shape, np.nan)
    c_integrals = np.full(c_shape, np.nan)
    flagged = np.zeros(n, dtype=np.bool_)
    _functional_kernel(
        starts, _seed(config), np.uint64(config.stream_offset), n_steps, config.dt, rec, _coef(params),
        SCHEME_CODES[config.scheme], integrand.kind, integrand.coef, richardson,
        states, integrals, c_states, c_integrals, flagged,
    )
    return PathFunctionals(
        times=config.record_times, states=states, integrals=integrals,
        coarse_states=c_states if richardson else None, coarse_integrals=c_integrals if richardson else None,
        flagged=flagged,
    )
