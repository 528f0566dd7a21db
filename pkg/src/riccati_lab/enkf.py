"""Ensemble Kalman-Bucy filters for the scalar linear-Gaussian model.

Signal and observation follow ``dX = A X dt + sqrt(R) dW`` and
``dY = B X dt + sqrt(Sigma) dV``.  Three interacting-particle filters with
``N + 1`` members are provided:

* ``vanilla``: members assimilate perturbed observations;
* ``deterministic``: members are nudged towards the innovation of the
  midpoint between themselves and the ensemble mean;
* ``transport``: a deterministic drift reproduces the Kalman-Bucy moments,
  so randomness enters only through the initial ensemble.

The rescaled sample variance ``(1 + 1/N) (1/(N+1)) sum (x_i - mean)^2`` of
each filter is, in law, a Riccati diffusion with ``eps = 2/sqrt(N)`` and a
variant-specific ``(U, V)``; `run_reduced` simulates that surrogate directly.

Every filter repetition owns counter-based random streams keyed by
``(seed, repetition)``: the truth, each member's noises and each member's
initial draw live on separate components.  Two runs that differ only in
their initial ensemble therefore share the observation path and all member
noises.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np

from . import riccati_core as rc
from . import sde_engine as se
from .rng import MASK64, STATE_SIZE, next_normal, stream_init
from .riccati_core import ParameterDomainError

VARIANTS = ("vanilla", "deterministic", "transport")
_VARIANT_CODES = {name: code for code, name in enumerate(VARIANTS)}
# Multipliers (a, b) giving (U, V) = (a R, b S) for the sample-variance diffusion.
_VARIANT_UV = {"vanilla": (1.0, 1.0), "deterministic": (1.0, 0.0), "transport": (0.0, 0.0)}

DEGENERACY_LEVEL = 1e-12

_COMPONENT_SIGNAL = 2
_COMPONENT_OBSERVATION = 3
_COMPONENT_TRUTH_START = 4
_COMPONENT_MEMBER_BASE = 16  # member i uses 16+3i (W), 17+3i (V), 18+3i (initial draw)


class DegeneracyError(RuntimeError):
    """The transport filter met a sample variance below ``DEGENERACY_LEVEL``."""


@dataclass(frozen=True)
class FilterModel:
    """Scalar linear-Gaussian filtering model with Gaussian prior ``N(m0, P0)``."""

    A: float
    R: float
    B: float
    Sigma: float
    m0: float = 0.0
    P0: float = 1.0

    def __post_init__(self) -> None:
        for name in ("A", "R", "B", "Sigma", "m0", "P0"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ParameterDomainError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, float(value))
        if self.R <= 0:
            raise ParameterDomainError(f"R>0 required, got R={self.R}")
        if self.Sigma <= 0:
            raise ParameterDomainError(f"Sigma>0 required, got Sigma={self.Sigma}")
        if self.B == 0:
            raise ParameterDomainError("B=0 gives S=B^2/Sigma=0; S>0 required")
        if self.P0 < 0:
            raise ParameterDomainError(f"P0>=0 required, got P0={self.P0}")

    @property
    def S(self) -> float:
        return self.B * self.B / self.Sigma

    @property
    def riccati(self) -> rc.ModelParams:
        """Noiseless Riccati parameters of the Kalman-Bucy variance."""
        return rc.ModelParams(A=self.A, R=self.R, S=self.S)

    def with_(self, **changes: float) -> "FilterModel":
        from dataclasses import replace

        return replace(self, **changes)


def ensemble_noise_levels(N: int) -> tuple[float, float]:
    """``(eps, eps_bar) = (2/sqrt(N), 1/sqrt(N+1))``."""
    if int(N) != N or N < 1:
        raise ValueError(f"N>=1 required, got {N}")
    return 2.0 / math.sqrt(N), 1.0 / math.sqrt(N + 1.0)


def variant_params(model: FilterModel, variant: str, N: int) -> rc.ModelParams:
    """Riccati-diffusion parameters of the rescaled sample variance of a filter variant."""
    if variant not in _VARIANT_UV:
        raise ValueError(f"unknown variant {variant!r}; expected one of {list(VARIANTS)}")
    a, b = _VARIANT_UV[variant]
    eps, eps_bar = ensemble_noise_levels(N)
    if variant == "transport":
        eps, eps_bar = 0.0, 0.0
    return rc.ModelParams(A=model.A, R=model.R, S=model.S, U=a * model.R, V=b * model.S, eps=eps, eps_bar=eps_bar)


def sample_variance_quadratic_variation(members: np.ndarray, model: FilterModel, variant: str) -> np.ndarray:
    """Quadratic-variation rate of the rescaled sample variance implied by the member noises.

    ``members`` has shape ``(..., N+1)``.  Each member receives ``sqrt(R) dW_i``
    and, for the vanilla filter, ``-P B Sigma^{-1/2} dV_i``; the rate is
    ``(1+1/N)^2 (2/(N+1))^2 sum_i (x_i - mean)^2 (R + c S P^2)``.
    """
    if variant not in _VARIANT_UV:
        raise ValueError(f"unknown variant {variant!r}")
    members = np.asarray(members, dtype=float)
    n_members = members.shape[-1]
    N = n_members - 1
    centred = members - members.mean(axis=-1, keepdims=True)
    spread = np.sum(centred * centred, axis=-1)
    variance = (1.0 + 1.0 / N) * spread / n_members
    if variant == "transport":
        return np.zeros_like(variance)
    perturbed = 1.0 if variant == "vanilla" else 0.0
    return (1.0 + 1.0 / N) ** 2 * (2.0 / n_members) ** 2 * spread * (model.R + perturbed * model.S * variance**2)


# --- random numbers for the truth and the ensemble ----------------------------


@nb.njit(inline="always")
def _truth_streams(sig, obs, start, seed, rep):
    stream_init(sig, seed, rep, np.uint64(_COMPONENT_SIGNAL))
    stream_init(obs, seed, rep, np.uint64(_COMPONENT_OBSERVATION))
    stream_init(start, seed, rep, np.uint64(_COMPONENT_TRUTH_START))


@nb.njit(parallel=True, cache=True)
def _truth_kernel(seed, reps, n_steps, dt, dt_last, model, signal, observation):
    A, R, B, Sigma, m0, P0 = model[0], model[1], model[2], model[3], model[4], model[5]
    sqR, sqSigma, sqP0 = math.sqrt(R), math.sqrt(Sigma), math.sqrt(P0)
    for j in nb.prange(reps.shape[0]):
        sig = np.empty(STATE_SIZE, dtype=np.uint64)
        obs = np.empty(STATE_SIZE, dtype=np.uint64)
        start = np.empty(STATE_SIZE, dtype=np.uint64)
        _truth_streams(sig, obs, start, seed, reps[j])
        x = m0 + sqP0 * next_normal(start)
        y = 0.0
        signal[j, 0] = x
        observation[j, 0] = 0.0
        for k in range(n_steps):
            h = dt if k < n_steps - 1 else dt_last
            sq = math.sqrt(h)
            dy = B * x * h + sqSigma * sq * next_normal(obs)
            x = x + A * x * h + sqR * sq * next_normal(sig)
            y += dy
            signal[j, k + 1] = x
            observation[j, k + 1] = y


@nb.njit(parallel=True, cache=True)
def _enkf_kernel(
    seed, reps, n_members, n_steps, dt, dt_last, rec, model, variant, kb_var,
    given_start, start_members, store_members,
    members_out, error_out, var_out, signal_out, obs_out, kb_error_out, degenerate_at,
):
    # Members are propagated as errors e_i = x_i - X relative to the signal X.
    # Every filter is affine in the signal, so the error recursion does not
    # involve X and stays accurate when the signal itself grows like exp(A t).
    A, R, B, Sigma, m0, P0 = model[0], model[1], model[2], model[3], model[4], model[5]
    S = B * B / Sigma
    gain_unit = B / Sigma
    sqR, sqSigma, sqP0 = math.sqrt(R), math.sqrt(Sigma), math.sqrt(P0)
    N = n_members - 1
    rescale = (1.0 + 1.0 / N) / n_members
    n_rec = rec.shape[0]
    for j in nb.prange(reps.shape[0]):
        sig = np.empty(STATE_SIZE, dtype=np.uint64)
        obs = np.empty(STATE_SIZE, dtype=np.uint64)
        start = np.empty(STATE_SIZE, dtype=np.uint64)
        _truth_streams(sig, obs, start, seed, reps[j])
        w_streams = np.empty((n_members, STATE_SIZE), dtype=np.uint64)
        v_streams = np.empty((n_members, STATE_SIZE), dtype=np.uint64)
        truth = m0 + sqP0 * next_normal(start)
        e = np.empty(n_members)
        for i in range(n_members):
            base = _COMPONENT_MEMBER_BASE + 3 * i
            stream_init(w_streams[i], seed, reps[j], np.uint64(base))
            stream_init(v_streams[i], seed, reps[j], np.uint64(base + 1))
            if given_start:
                e[i] = start_members[j, i] - truth
            else:
                init = np.empty(STATE_SIZE, dtype=np.uint64)
                stream_init(init, seed, reps[j], np.uint64(base + 2))
                e[i] = (m0 - truth) + sqP0 * next_normal(init)
        y = 0.0
        kb_error = m0 - truth
        r = 0
        for k in range(n_steps + 1):
            total = 0.0
            for i in range(n_members):
                total += e[i]
            mean = total / n_members
            spread = 0.0
            for i in range(n_members):
                d = e[i] - mean
                spread += d * d
            var = rescale * spread
            if variant == 2 and var < 1e-12 and degenerate_at[j] < 0:
                degenerate_at[j] = k
            if r < n_rec and rec[r] == k:
                error_out[j, r] = mean
                var_out[j, r] = var
                signal_out[j, r] = truth
                obs_out[j, r] = y
                kb_error_out[j, r] = kb_error
                if store_members:
                    for i in range(n_members):
                        members_out[j, r, i] = truth + e[i]
                r += 1
            if k == n_steps or degenerate_at[j] >= 0:
                break
            h = dt if k < n_steps - 1 else dt_last
            sq = math.sqrt(h)
            dv = sqSigma * sq * next_normal(obs)
            dw = sqR * sq * next_normal(sig)
            y += B * truth * h + dv
            truth = truth + A * truth * h + dw
            kb = kb_var[k]
            kb_error = kb_error + (A - kb * S) * kb_error * h + kb * gain_unit * dv - dw
            gain = var * gain_unit
            if variant == 0:
                for i in range(n_members):
                    dw_i = sqR * sq * next_normal(w_streams[i])
                    dv_i = sqSigma * sq * next_normal(v_streams[i])
                    e[i] = e[i] + A * e[i] * h + (dw_i - dw) + gain * (dv - B * e[i] * h - dv_i)
            elif variant == 1:
                for i in range(n_members):
                    dw_i = sqR * sq * next_normal(w_streams[i])
                    e[i] = e[i] + A * e[i] * h + (dw_i - dw) + gain * (dv - 0.5 * B * (e[i] + mean) * h)
            else:
                q = 0.5 * (R / var - var * S)
                for i in range(n_members):
                    e[i] = e[i] + (A * e[i] + q * (e[i] - mean)) * h - dw + gain * (dv - B * mean * h)


# --- public API ----------------------------------------------------------------


@dataclass(frozen=True)
class Truth:
    """Signal and cumulative observation paths on the full simulation grid."""

    times: np.ndarray
    signal: np.ndarray
    observation: np.ndarray


@dataclass(frozen=True)
class EnkfRun:
    """Recorded statistics of independent filter repetitions (one row each).

    ``filter_error`` (particle mean minus signal) and ``kalman_error`` are
    stored directly; the means are reconstructed by adding the signal.
    """

    variant: str
    N: int
    times: np.ndarray
    members: np.ndarray | None
    sample_var: np.ndarray
    signal: np.ndarray
    observation: np.ndarray
    kalman_var: np.ndarray
    filter_error: np.ndarray
    kalman_error: np.ndarray

    @property
    def n_repetitions(self) -> int:
        return self.sample_var.shape[0]

    @property
    def sample_mean(self) -> np.ndarray:
        return self.signal + self.filter_error

    @property
    def kalman_mean(self) -> np.ndarray:
        return self.signal + self.kalman_error


def _model_vector(model: FilterModel) -> np.ndarray:
    return np.array([model.A, model.R, model.B, model.Sigma, model.m0, model.P0], dtype=float)


def _full_times(config: se.SimConfig) -> np.ndarray:
    times = np.arange(config.n_steps + 1, dtype=float) * config.dt
    times[-1] = config.horizon
    return times


def _repetitions(config: se.SimConfig) -> np.ndarray:
    return config.stream_ids


def simulate_truth(model: FilterModel, config: se.SimConfig) -> Truth:
    """Euler-Maruyama signal and observation paths, ``config.n_paths`` independent repetitions."""
    se.apply_thread_cap()
    n = config.n_steps
    signal = np.empty((config.n_paths, n + 1))
    observation = np.empty_like(signal)
    _truth_kernel(
        np.uint64(int(config.seed) & MASK64), _repetitions(config), n, config.dt, config.dt_last,
        _model_vector(model), signal, observation,
    )
    return Truth(times=_full_times(config), signal=signal, observation=observation)


def kalman_variance(model: FilterModel, config: se.SimConfig) -> np.ndarray:
    """Kalman-Bucy variance on the full grid, from the closed-form Riccati flow."""
    return np.asarray(rc.phi(_full_times(config), model.P0, model.riccati), dtype=float)


def kalman_bucy(model: FilterModel, observation: np.ndarray, config: se.SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Kalman-Bucy mean (Euler in the observation increments) and variance on the full grid."""
    obs = np.atleast_2d(np.asarray(observation, dtype=float))
    if obs.shape[-1] != config.n_steps + 1:
        raise ValueError(
            f"observation has {obs.shape[-1]} grid points; config grid has {config.n_steps + 1}"
        )
    var = kalman_variance(model, config)
    h = np.diff(_full_times(config))
    dy = np.diff(obs, axis=-1)
    mean = np.empty_like(obs)
    mean[:, 0] = model.m0
    for k in range(config.n_steps):
        m = mean[:, k]
        mean[:, k + 1] = m + (model.A - var[k] * model.S) * m * h[k] + var[k] * model.B / model.Sigma * dy[:, k]
    return (mean[0] if np.ndim(observation) == 1 else mean), var


def run_enkf(
    model: FilterModel,
    variant: str,
    N: int,
    config: se.SimConfig,
    initial_members: np.ndarray | None = None,
    store_members: bool = False,
) -> EnkfRun:
    """Run ``config.n_paths`` independent filter repetitions with ``N + 1`` members each.

    Initial members are ``N(m0, P0)`` draws unless ``initial_members`` (shape
    ``(N+1,)`` or ``(n_paths, N+1)``) is given.  Members are advanced by
    Euler-Maruyama on the simulation grid, and all members of one repetition
    see the same observation increments.
    """
    if variant not in _VARIANT_CODES:
        raise ValueError(f"unknown variant {variant!r}; expected one of {list(VARIANTS)}")
    ensemble_noise_levels(N)
    n_members = int(N) + 1
    reps = config.n_paths
    given = initial_members is not None
    if given:
        start = np.asarray(initial_members, dtype=float)
        if start.ndim == 1:
            start = np.broadcast_to(start, (reps, start.size))
        if start.shape != (reps, n_members):
            raise ValueError(f"initial_members must have shape ({n_members},) or ({reps}, {n_members})")
        start = np.ascontiguousarray(start)
    else:
        start = np.zeros((1, 1))
    se.apply_thread_cap()
    rec = config.record_steps
    n_rec = rec.size
    members = np.full((reps, n_rec, n_members), np.nan) if store_members else np.zeros((1, 1, 1))
    outs = [np.full((reps, n_rec), np.nan) for _ in range(5)]
    degenerate_at = np.full(reps, -1, dtype=np.int64)
    kb_var = kalman_variance(model, config)
    _enkf_kernel(
        np.uint64(int(config.seed) & MASK64), _repetitions(config), n_members, config.n_steps,
        config.dt, config.dt_last, rec, _model_vector(model), _VARIANT_CODES[variant], kb_var,
        given, start, store_members, members, *outs, degenerate_at,
    )
    if np.any(degenerate_at >= 0):
        j = int(np.argmax(degenerate_at >= 0))
        step = int(degenerate_at[j])
        raise DegeneracyError(
            f"transport filter sample variance fell below {DEGENERACY_LEVEL:g} "
            f"(repetition {j}, t={step * config.dt:.6g}); the drift term R/(2P) is undefined"
        )
    error, var, signal, observation, kalman_error = outs
    return EnkfRun(
        variant=variant, N=int(N), times=config.record_times,
        members=members if store_members else None,
        sample_var=var, signal=signal, observation=observation, kalman_var=kb_var[rec],
        filter_error=error, kalman_error=kalman_error,
    )


def run_reduced(model: FilterModel, variant: str, N: int, config: se.SimConfig, x0, z0) -> se.CoupledXZ:
    """Law-equivalent surrogate of (rescaled sample variance, mean error) for a filter variant."""
    return se.simulate_coupled_xz(variant_params(model, variant, N), x0, z0, config)


def export_csv(run: EnkfRun, path: str | Path, repetition: int = 0) -> Path:
    """Per-instant columns of one repetition: t, sample_mean, sample_var, kalman_mean, kalman_var, signal."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "sample_mean", "sample_var", "kalman_mean", "kalman_var", "signal"])
        for r, t in enumerate(run.times):
            writer.writerow([
                f"{t:.10g}", f"{run.sample_mean[repetition, r]:.12g}", f"{run.sample_var[repetition, r]:.12g}",
                f"{run.kalman_mean[repetition, r]:.12g}", f"{run.kalman_var[r]:.12g}",
                f"{run.signal[repetition, r]:.12g}",
            ])
    return path
