"""Hysteretic oscillator benchmark driven by synthetic ground motion.

The data generator couples two parts:

* A stochastic ground-motion model: white noise is colored by a bank of
  decaying sinusoid wavelets whose frequency drifts linearly over the
  record, normalized to unit variance per sample, then amplitude-modulated
  by a gamma-shaped envelope calibrated to a prescribed shaking intensity,
  significant duration, and mid-intensity time. A critically damped
  oscillator high-passes the result so that velocity and displacement
  (cumulative trapezoid integrals) stay bounded.

* A single-degree-of-freedom oscillator with a smooth hysteretic
  restoring force,

      y'' + 2*zeta*omega*y' + omega^2*(rho*y + (1 - rho)*z) = -a(t)
      z'  = gamma*y' - alpha*|y'|*|z|^(n-1)*z - beta*y'*|z|^n

  integrated from rest with a fixed-step fourth-order Runge-Kutta scheme,
  the excitation linearly interpolated at half steps.

Every realization is reproducible from an integer seed; a batch derives
per-realization seeds from one base seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import brentq
from scipy.special import gammaln
from scipy.stats import gamma as gamma_dist

from .errors import CalibrationError, ConfigError, NumericalError
from .signals import Dataset, QuantityRole, Realization

GRAVITY = 9.81

# Envelope shape bracket: the shape solver searches this interval.
_SHAPE_LO = 1.0001
_SHAPE_HI = 1.0e6

# Frequencies of the wavelet bank never drift below this (rad/s).
_OMEGA_FLOOR = 1.0e-6


@dataclass(frozen=True)
class BoucWenParams:
    """Oscillator and hysteresis constants.

    ``alpha + beta > 0`` with ``gamma > 0`` bounds the hysteretic variable
    by (gamma / (alpha + beta))**(1/n), exposed as :attr:`z_bound`.
    """

    zeta: float = 0.02      # viscous damping ratio
    omega: float = 10.0     # natural frequency, rad/s
    rho: float = 0.2        # elastic fraction of the restoring force
    gamma: float = 0.5      # hysteresis growth rate, 1/s per unit velocity
    alpha: float = 25.0     # hysteresis saturation, 1/m
    beta: float = 25.0      # hysteresis saturation, 1/m
    n: float = 1.0          # hysteresis exponent

    def __post_init__(self):
        if self.omega <= 0:
            raise ConfigError(f"omega must be > 0, got {self.omega}")
        if self.zeta < 0:
            raise ConfigError(f"zeta must be >= 0, got {self.zeta}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")
        if self.n < 1:
            raise ConfigError(f"hysteresis exponent n must be >= 1, got {self.n}")
        if self.alpha + self.beta <= 0:
            raise ConfigError("alpha + beta must be > 0")

    @property
    def z_bound(self) -> float:
        """Saturation bound of |z| when gamma > 0."""
        if self.gamma <= 0:
            raise ConfigError("z_bound requires gamma > 0")
        return (self.gamma / (self.alpha + self.beta)) ** (1.0 / self.n)


@dataclass(frozen=True)
class GroundMotionParams:
    """Stochastic ground-motion model constants.

    ``arias`` is the expected shaking intensity in seconds (the
    gravity-normalized integral (pi / (2 g^2)) * int a(t)^2 dt),
    ``d595`` the 5-95% significant duration in seconds, and ``t_mid``
    the time at which 45% of the expected intensity has accumulated.
    """

    arias: float = 0.109          # expected intensity, s
    d595: float = 7.96            # significant duration, s
    t_mid: float = 7.78           # 45%-intensity time, s
    omega_mid: float = 4.66 * 2.0 * math.pi   # wavelet frequency at t_mid, rad/s
    omega_slope: float = -0.09 * 2.0 * math.pi  # frequency drift, rad/s per s
    zeta_f: float = 0.24          # wavelet bandwidth (damping ratio)
    hp_freq: float = 0.2          # high-pass corner frequency, Hz

    def __post_init__(self):
        if self.arias < 0:
            raise ConfigError(f"arias must be >= 0, got {self.arias}")
        if self.d595 <= 0:
            raise ConfigError(f"d595 must be > 0, got {self.d595}")
        if self.t_mid <= 0:
            raise ConfigError(f"t_mid must be > 0, got {self.t_mid}")
        if not 0.0 < self.zeta_f < 1.0:
            raise ConfigError(f"zeta_f must lie in (0, 1), got {self.zeta_f}")
        if self.omega_mid <= 0:
            raise ConfigError(f"omega_mid must be > 0, got {self.omega_mid}")
        if self.hp_freq <= 0:
            raise ConfigError(f"hp_freq must be > 0, got {self.hp_freq}")


@dataclass(frozen=True)
class IntegratorConfig:
    """Time discretization shared by the generator and the oscillator."""

    dt: float = 0.01        # step, s
    duration: float = 30.0  # record length, s

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError(f"dt must be > 0, got {self.dt}")
        if self.duration < self.dt:
            raise ConfigError("duration must cover at least one step")

    @property
    def n_steps(self) -> int:
        """Samples per record, endpoints inclusive."""
        return int(round(self.duration / self.dt)) + 1


# ---------------------------------------------------------------------------
# Envelope calibration
# ---------------------------------------------------------------------------


def calibrate_envelope(
    arias: float, d595: float, t_mid: float
) -> Tuple[float, float, float]:
    """Parameters (a1, a2, a3) of the envelope q(t) = a1 t^(a2-1) exp(-a3 t).

    The squared envelope is proportional to a gamma density with shape
    2*a2 - 1 and rate 2*a3, so the cumulative expected intensity follows
    the gamma CDF: the shape is solved from the rate-free quantile ratio
    t_mid / d595 = Q(0.45) / (Q(0.95) - Q(0.05)), the rate from t_mid, and
    a1 from the total intensity. Raises :class:`CalibrationError` when the
    requested ratio is unreachable for a rising-decaying envelope.
    """
    if d595 <= 0 or t_mid <= 0:
        raise CalibrationError("d595 and t_mid must be positive")
    if arias < 0:
        raise CalibrationError("arias must be nonnegative")
    ratio = t_mid / d595

    def quantile_ratio(shape: float) -> float:
        q05, q45, q95 = gamma_dist.ppf([0.05, 0.45, 0.95], shape)
        return q45 / (q95 - q05)

    lo, hi = quantile_ratio(_SHAPE_LO), quantile_ratio(_SHAPE_HI)
    if not lo < ratio < hi:
        raise CalibrationError(
            f"intensity timing ratio t_mid/d595 = {ratio:.4f} outside the "
            f"reachable range ({lo:.4f}, {hi:.4f})"
        )
    shape = brentq(
        lambda a: quantile_ratio(a) - ratio, _SHAPE_LO, _SHAPE_HI, xtol=1e-12
    )
    rate = float(gamma_dist.ppf(0.45, shape)) / t_mid
    a2 = (shape + 1.0) / 2.0
    a3 = rate / 2.0
    # Total squared-envelope integral: a1^2 Gamma(shape) / rate^shape equals
    # 2 g^2 arias / pi.
    if arias == 0.0:
        return 0.0, a2, a3
    log_total = math.log(2.0 * GRAVITY**2 * arias / math.pi)
    a1 = math.exp(0.5 * (log_total + shape * math.log(rate) - gammaln(shape)))
    return a1, a2, a3


def envelope(t: np.ndarray, a1: float, a2: float, a3: float) -> np.ndarray:
    """Evaluate the gamma envelope, with q(0) = 0 for rising shapes."""
    t = np.asarray(t, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = a1 * np.power(t, a2 - 1.0) * np.exp(-a3 * t)
    return np.where(t > 0, q, 0.0 if a2 > 1 else (a1 if a2 == 1 else np.inf))


# ---------------------------------------------------------------------------
# Colored-noise carrier
# ---------------------------------------------------------------------------

_FILTER_CACHE: Dict[tuple, np.ndarray] = {}
_FILTER_CACHE_LIMIT = 2


def _wavelet_filter(params: GroundMotionParams, n_steps: int, dt: float) -> np.ndarray:
    """Row-normalized bank of drifting-frequency decaying sinusoids.

    Row k holds the wavelet contributions of noise pulses at times
    t_i <= t_k, scaled so the carrier has unit variance per sample.
    """
    key = (
        params.t_mid,
        params.omega_mid,
        params.omega_slope,
        params.zeta_f,
        n_steps,
        dt,
    )
    cached = _FILTER_CACHE.get(key)
    if cached is not None:
        return cached
    t = np.arange(n_steps) * dt
    omega = np.maximum(
        params.omega_mid + params.omega_slope * (t - params.t_mid), _OMEGA_FLOOR
    )
    zf = params.zeta_f
    damp = math.sqrt(1.0 - zf * zf)
    H = np.zeros((n_steps, n_steps))
    block = 512
    for start in range(0, n_steps, block):
        stop = min(start + block, n_steps)
        lag = t[start:stop, None] - t[None, :]
        np.maximum(lag, 0.0, out=lag)
        osc = omega[None, :] * lag
        Hb = (omega[None, :] / damp) * np.exp(-zf * osc) * np.sin(damp * osc)
        Hb[t[start:stop, None] < t[None, :]] = 0.0
        H[start:stop] = Hb
    norms = np.sqrt(np.sum(H * H, axis=1))
    rows = norms > 0
    H[rows] /= norms[rows, None]
    if len(_FILTER_CACHE) >= _FILTER_CACHE_LIMIT:
        _FILTER_CACHE.clear()
    _FILTER_CACHE[key] = H
    return H


def _highpass(acc: np.ndarray, dt: float, corner_hz: float) -> np.ndarray:
    """Critically damped oscillator high-pass of an acceleration record.

    Integrates z'' + 2 w z' + w^2 z = a by fixed-step RK4 (excitation
    interpolated linearly at half steps) and returns a - 2 w z' - w^2 z.
    """
    w = 2.0 * math.pi * corner_hz
    n = acc.shape[0]
    z = np.zeros(n)
    v = np.zeros(n)
    zi = 0.0
    vi = 0.0
    def deriv(zz, vv, aa):
        return vv, aa - 2.0 * w * vv - w * w * zz

    for i in range(n - 1):
        a_lo = acc[i]
        a_mid = 0.5 * (acc[i] + acc[i + 1])
        a_hi = acc[i + 1]
        k1z, k1v = deriv(zi, vi, a_lo)
        k2z, k2v = deriv(zi + 0.5 * dt * k1z, vi + 0.5 * dt * k1v, a_mid)
        k3z, k3v = deriv(zi + 0.5 * dt * k2z, vi + 0.5 * dt * k2v, a_mid)
        k4z, k4v = deriv(zi + dt * k3z, vi + dt * k3v, a_hi)
        zi += dt * (k1z + 2 * k2z + 2 * k3z + k4z) / 6.0
        vi += dt * (k1v + 2 * k2v + 2 * k3v + k4v) / 6.0
        z[i + 1] = zi
        v[i + 1] = vi
    return acc - 2.0 * w * v - w * w * z


def simulate_ground_motion(
    params: GroundMotionParams, integ: IntegratorConfig, seed: int
) -> Dict[str, np.ndarray]:
    """One ground-motion realization: acceleration, velocity, displacement.

    The raw acceleration is envelope times unit-variance colored noise;
    the returned acceleration is its high-passed version, and velocity and
    displacement are its cumulative trapezoid integrals. Deterministic in
    ``seed``.
    """
    dt = integ.dt
    n = integ.n_steps
    t = np.arange(n) * dt
    a1, a2, a3 = calibrate_envelope(params.arias, params.d595, params.t_mid)
    if a1 == 0.0:
        zeros = np.zeros(n)
        return {"acc": zeros, "vel": zeros.copy(), "disp": zeros.copy()}
    S = _wavelet_filter(params, n, dt)
    noise = np.random.default_rng(seed).standard_normal(n)
    carrier = S @ noise
    raw = envelope(t, a1, a2, a3) * carrier
    acc = _highpass(raw, dt, params.hp_freq)
    vel = cumulative_trapezoid(acc, dx=dt, initial=0.0)
    disp = cumulative_trapezoid(vel, dx=dt, initial=0.0)
    return {"acc": acc, "vel": vel, "disp": disp}


# ---------------------------------------------------------------------------
# Oscillator integration
# ---------------------------------------------------------------------------


def simulate_boucwen(
    excitation: np.ndarray,
    params: BoucWenParams,
    dt: float,
    state0: Optional[Tuple[float, float, float]] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integrate the hysteretic oscillator under a ground acceleration.

    ``excitation`` samples the ground acceleration at the fixed step
    ``dt``; the forcing between samples is its linear interpolant.
    ``state0`` overrides the rest initial state (y, y', z). Returns the
    displacement, velocity, and hysteretic-variable series at the sample
    times. Raises :class:`NumericalError` (with the step index) if the
    state leaves the finite range.
    """
    x = np.asarray(excitation, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 2:
        raise ConfigError("excitation must be a 1-D array of at least 2 samples")
    if dt <= 0:
        raise ConfigError(f"dt must be > 0, got {dt}")
    if not np.all(np.isfinite(x)):
        raise ConfigError("excitation contains non-finite samples")
    n = x.shape[0]
    y = np.zeros(n)
    v = np.zeros(n)
    z = np.zeros(n)
    yi, vi, zi = (0.0, 0.0, 0.0) if state0 is None else map(float, state0)
    y[0], v[0], z[0] = yi, vi, zi

    zeta, omega, rho = params.zeta, params.omega, params.rho
    gam, alpha, beta, nexp = params.gamma, params.alpha, params.beta, params.n
    two_zw = 2.0 * zeta * omega
    w2 = omega * omega

    def deriv(yy, vv, zz, a_g):
        abs_v = abs(vv)
        abs_z = abs(zz)
        dz = (
            gam * vv
            - alpha * abs_v * abs_z ** (nexp - 1.0) * zz
            - beta * vv * abs_z**nexp
        )
        dv = -a_g - two_zw * vv - w2 * (rho * yy + (1.0 - rho) * zz)
        return vv, dv, dz

    h = dt
    for i in range(n - 1):
        a0 = x[i]
        am = 0.5 * (x[i] + x[i + 1])
        a1 = x[i + 1]
        k1 = deriv(yi, vi, zi, a0)
        k2 = deriv(yi + 0.5 * h * k1[0], vi + 0.5 * h * k1[1], zi + 0.5 * h * k1[2], am)
        k3 = deriv(yi + 0.5 * h * k2[0], vi + 0.5 * h * k2[1], zi + 0.5 * h * k2[2], am)
        k4 = deriv(yi + h * k3[0], vi + h * k3[1], zi + h * k3[2], a1)
        yi += h * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]) / 6.0
        vi += h * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]) / 6.0
        zi += h * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]) / 6.0
        if not (math.isfinite(yi) and math.isfinite(vi) and math.isfinite(zi)):
            raise NumericalError(
                f"oscillator state became non-finite at step {i + 1}"
            )
        y[i + 1], v[i + 1], z[i + 1] = yi, vi, zi
    return y, v, z


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

BENCHMARK_ROLES: Dict[str, QuantityRole] = {
    "ground_acc": QuantityRole.EXOGENOUS,
    "ground_vel": QuantityRole.EXOGENOUS,
    "ground_disp": QuantityRole.EXOGENOUS,
    "z": QuantityRole.INTERMEDIATE_RESPONSE,
    "y": QuantityRole.TARGET,
}


def _params_meta(
    bw: BoucWenParams, gm: GroundMotionParams, integ: IntegratorConfig, seed: int
) -> dict:
    return {
        "oscillator": {
            "zeta": bw.zeta, "omega": bw.omega, "rho": bw.rho,
            "gamma": bw.gamma, "alpha": bw.alpha, "beta": bw.beta, "n": bw.n,
        },
        "ground_motion": {
            "arias": gm.arias, "d595": gm.d595, "t_mid": gm.t_mid,
            "omega_mid": gm.omega_mid, "omega_slope": gm.omega_slope,
            "zeta_f": gm.zeta_f, "hp_freq": gm.hp_freq,
        },
        "integrator": {"dt": integ.dt, "duration": integ.duration},
        "seed": seed,
    }


def generate_benchmark(
    n_traces: int,
    seed: int,
    bw: Optional[BoucWenParams] = None,
    gm: Optional[GroundMotionParams] = None,
    integ: Optional[IntegratorConfig] = None,
) -> Dataset:
    """Generate a benchmark dataset of ground motions and oscillator responses.

    Channels: three exogenous ground-motion records (acceleration,
    velocity, displacement), the hysteretic variable as an intermediate
    response, and the displacement as the target. Per-trace seeds derive
    from ``seed``, so any prefix of a larger run reproduces bit-exactly.
    """
    if n_traces < 1:
        raise ConfigError(f"n_traces must be >= 1, got {n_traces}")
    bw = bw or BoucWenParams()
    gm = gm or GroundMotionParams()
    integ = integ or IntegratorConfig()
    trace_seeds = np.random.SeedSequence(seed).generate_state(n_traces)
    realizations = []
    for i in range(n_traces):
        motion = simulate_ground_motion(gm, integ, int(trace_seeds[i]))
        y, _, z = simulate_boucwen(motion["acc"], bw, integ.dt)
        realizations.append(
            Realization(
                id=f"{i:04d}",
                channels={
                    "ground_acc": motion["acc"],
                    "ground_vel": motion["vel"],
                    "ground_disp": motion["disp"],
                    "z": z,
                    "y": y,
                },
                n_steps=integ.n_steps,
                dt=integ.dt,
            )
        )
    return Dataset(
        realizations=realizations,
        roles=dict(BENCHMARK_ROLES),
        meta=_params_meta(bw, gm, integ, seed),
        transforms={},
    )


def arias_intensity(acc: np.ndarray, dt: float) -> float:
    """Gravity-normalized shaking intensity (pi / (2 g^2)) int a^2 dt, in s."""
    a = np.asarray(acc, dtype=np.float64)
    return float(
        math.pi / (2.0 * GRAVITY**2) * np.trapezoid(a * a, dx=dt)
    )


def significant_duration(acc: np.ndarray, dt: float) -> float:
    """Time span accumulating 5% to 95% of the record's shaking intensity."""
    a = np.asarray(acc, dtype=np.float64)
    cum = cumulative_trapezoid(a * a, dx=dt, initial=0.0)
    total = cum[-1]
    if total <= 0:
        return 0.0
    t = np.arange(a.shape[0]) * dt
    t05 = float(np.interp(0.05 * total, cum, t))
    t95 = float(np.interp(0.95 * total, cum, t))
    return t95 - t05


def resample_linear(series: np.ndarray, dt_from: float, dt_to: float) -> np.ndarray:
    """Linear resampling of a 1-D series onto a new step over the same span."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 2:
        raise ConfigError("series must be 1-D with at least 2 samples")
    span = (x.shape[0] - 1) * dt_from
    n_new = int(round(span / dt_to)) + 1
    t_old = np.arange(x.shape[0]) * dt_from
    t_new = np.arange(n_new) * dt_to
    return np.interp(t_new, t_old, x)
