"""Smooth-minimum macroscopic fundamental diagram and its calibration.

Flow is the log-sum-exp lower envelope of the free-flow branch ``u_f*k``,
the capacity plateau ``Q`` and the congested branch ``(kappa - k)*w``.
Densities are per lane [veh/m], flows per lane [veh/s].
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

__all__ = [
    "MfdParams",
    "SpeedAccPoint",
    "CalibrationConfig",
    "CalibrationReport",
    "MfdDomainError",
    "flow_at_density",
    "anchored_flow",
    "speed_at_accumulation",
    "speed_function",
    "speed_rmse",
    "calibrate",
    "params_to_json",
    "params_from_json",
]

LAMBDA_RANGE = (0.03, 0.07)
_ZERO_PROBE = 1e-9  # fraction of kappa used for the V(0) limit


class MfdDomainError(ValueError):
    """Density or accumulation outside ``[0, kappa]`` / ``[0, kappa*L_N]``."""


@dataclass(frozen=True)
class MfdParams:
    """Five-parameter smooth MFD plus the active network lane distance.

    ``lam`` is the smoothing parameter (same units as flow), ``u_f`` the
    free-flow speed [m/s], ``Q`` the capacity [veh/s/lane], ``kappa`` the
    jam density [veh/m/lane], ``w`` the backward wave speed [m/s] and
    ``lane_distance`` the network lane length L_N [m*lane].
    """

    lam: float
    u_f: float
    Q: float
    kappa: float
    w: float
    lane_distance: float = 1.0

    def __post_init__(self):
        for name in ("lam", "u_f", "Q", "kappa", "w", "lane_distance"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"MFD parameter {name} must be positive, got {value!r}")

    @property
    def jam_accumulation(self) -> float:
        return self.kappa * self.lane_distance

    def as_vector(self) -> np.ndarray:
        return np.array([self.lam, self.u_f, self.Q, self.kappa, self.w])

    def with_vector(self, x: Sequence[float]) -> "MfdParams":
        lam, u_f, Q, kappa, w = (float(v) for v in x)
        return replace(self, lam=lam, u_f=u_f, Q=Q, kappa=kappa, w=w)

    # Endpoint values of the raw envelope; both are slightly negative.
    @cached_property
    def _q0(self) -> float:
        return float(_smooth_min(self, 0.0))

    @cached_property
    def _qjam(self) -> float:
        return float(_smooth_min(self, self.kappa))

    @cached_property
    def free_speed(self) -> float:
        """V at zero accumulation (one-sided limit)."""
        h = _ZERO_PROBE * self.kappa
        return float(anchored_flow(self, h) / h)


def _smooth_min(p: MfdParams, k):
    k = np.asarray(k, dtype=float)
    a = np.stack(
        np.broadcast_arrays(-p.u_f * k / p.lam, -p.Q / p.lam + 0.0 * k, -(p.kappa - k) * p.w / p.lam)
    )
    m = a.max(axis=0)
    return -p.lam * (m + np.log(np.exp(a - m).sum(axis=0)))


def _check_density(p: MfdParams, k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if np.any(k < 0) or np.any(k > p.kappa * (1 + 1e-12)):
        raise MfdDomainError(f"density outside [0, {p.kappa}]")
    return np.minimum(k, p.kappa)


def flow_at_density(params: MfdParams, k):
    """Smooth-minimum average flow ``q(k)`` [veh/s/lane].

    ``q = -lam * ln(exp(-u_f k/lam) + exp(-Q/lam) + exp(-(kappa-k) w/lam))``.
    Lies within ``lam*ln(3)`` below ``min(u_f k, Q, (kappa-k) w)``.
    Accepts scalars or arrays.
    """
    k = _check_density(params, k)
    q = _smooth_min(params, k)
    return float(q) if q.ndim == 0 else q


def anchored_flow(params: MfdParams, k):
    """Envelope flow with its endpoint offsets removed.

    Subtracts the chord through ``(0, q(0))`` and ``(kappa, q(kappa))`` so the
    flow is exactly zero at both ends and positive in between. Being concave
    with ``q(0) = 0``, its chord slope ``q/k`` (the speed) is non-increasing.
    """
    k = _check_density(params, k)
    frac = k / params.kappa
    q = _smooth_min(params, k) - params._q0 * (1.0 - frac) - params._qjam * frac
    q = np.maximum(q, 0.0)
    return float(q) if q.ndim == 0 else q


def speed_at_accumulation(params: MfdParams, n):
    """Network mean speed V(n) [m/s] for accumulation ``n`` [veh]."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 0) or np.any(n > params.jam_accumulation * (1 + 1e-12)):
        raise MfdDomainError(f"accumulation outside [0, {params.jam_accumulation}]")
    k = np.minimum(n / params.lane_distance, params.kappa)
    small = k < _ZERO_PROBE * params.kappa
    safe_k = np.where(small, 1.0, k)
    v = np.where(small, params.free_speed, anchored_flow(params, np.where(small, 0.0, k)) / safe_k)
    return float(v) if v.ndim == 0 else v


def speed_function(params: MfdParams):
    """Scalar ``n -> V(n)`` closure for the simulation loops (no validation)."""
    lam, u_f, Q, kappa, w = params.lam, params.u_f, params.Q, params.kappa, params.w
    lane, q0, qjam, v0 = params.lane_distance, params._q0, params._qjam, params.free_speed
    probe = _ZERO_PROBE * kappa
    exp, log = math.exp, math.log

    def speed(n: float) -> float:
        k = n / lane
        if k < probe:
            return v0
        if k >= kappa:
            return 0.0
        a1 = -u_f * k / lam
        a2 = -Q / lam
        a3 = -(kappa - k) * w / lam
        m = max(a1, a2, a3)
        q = -lam * (m + log(exp(a1 - m) + exp(a2 - m) + exp(a3 - m)))
        frac = k / kappa
        q -= q0 * (1.0 - frac) + qjam * frac
        return q / k if q > 0 else 0.0

    return speed


# -- calibration -------------------------------------------------------------


@dataclass(frozen=True)
class SpeedAccPoint:
    accumulation: float
    speed: float

    def __post_init__(self):
        if self.accumulation < 0 or self.speed < 0:
            raise ValueError("accumulation and speed must be non-negative")


@dataclass(frozen=True)
class CalibrationConfig:
    initial: MfdParams
    bound_fraction: float = 0.2
    lambda_bounds: tuple[float, float] = LAMBDA_RANGE
    max_iterations: int = 200
    tolerance: float = 1e-12

    def __post_init__(self):
        if not 0 < self.bound_fraction < 1:
            raise ValueError("bound_fraction must lie in (0, 1)")
        lo, hi = self.lambda_bounds
        if not 0 < lo <= hi:
            raise ValueError("lambda_bounds must be a non-empty positive interval")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        x0 = self.initial.as_vector()
        lower = x0 * (1 - self.bound_fraction)
        upper = x0 * (1 + self.bound_fraction)
        lower[0], upper[0] = self.lambda_bounds
        return lower, upper


@dataclass
class CalibrationReport:
    params: MfdParams
    rmse_initial: float
    rmse_final: float
    improved: bool
    iterations: int
    message: str
    lower: tuple[float, ...] = field(default_factory=tuple)
    upper: tuple[float, ...] = field(default_factory=tuple)
    active_bounds: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "params": params_to_dict(self.params),
            "rmse_initial": self.rmse_initial,
            "rmse_final": self.rmse_final,
            "improved": self.improved,
            "iterations": self.iterations,
            "message": self.message,
            "lower": dict(zip(_PARAM_NAMES, self.lower)),
            "upper": dict(zip(_PARAM_NAMES, self.upper)),
            "active_bounds": list(self.active_bounds),
        }


_PARAM_NAMES = ("lambda", "u_f", "Q", "kappa", "w")


def _model_speed(params: MfdParams, n: np.ndarray) -> np.ndarray:
    # beyond jam the speed is zero; keeps trial kappas from raising
    return speed_at_accumulation(params, np.minimum(n, params.jam_accumulation))


def speed_rmse(params: MfdParams, data: Sequence[SpeedAccPoint]) -> float:
    n = np.array([p.accumulation for p in data], dtype=float)
    v = np.array([p.speed for p in data], dtype=float)
    return float(np.sqrt(np.mean((_model_speed(params, n) - v) ** 2)))


def calibrate(data: Sequence[SpeedAccPoint], config: CalibrationConfig) -> CalibrationReport:
    """Fit the MFD to speed-accumulation points by bounded least squares.

    Physical parameters move within ``+-bound_fraction`` of their initial
    values, ``lam`` within ``lambda_bounds``. The objective is the speed
    RMSE with uniform weights. If the fit does not beat the initial guess the
    initial parameters are returned with ``improved=False``.
    """
    if len(data) == 0:
        raise ValueError("calibration data is empty")
    n = np.array([p.accumulation for p in data], dtype=float)
    v = np.array([p.speed for p in data], dtype=float)
    base = config.initial
    lower, upper = config.bounds()
    x0 = np.clip(base.as_vector(), lower, upper)
    scale = x0.copy()

    def residuals(theta):
        return _model_speed(base.with_vector(theta * scale), n) - v

    rmse_initial = speed_rmse(base, data)
    result = least_squares(
        residuals,
        x0 / scale,
        bounds=(lower / scale, upper / scale),
        method="trf",
        x_scale=1.0,
        xtol=config.tolerance,
        ftol=config.tolerance,
        gtol=config.tolerance,
        max_nfev=config.max_iterations * 10,
    )
    x = np.clip(result.x * scale, lower, upper)
    fitted = base.with_vector(x)
    rmse_final = speed_rmse(fitted, data)
    improved = rmse_final < rmse_initial
    if not improved:
        fitted, rmse_final = base, rmse_initial
        x = base.as_vector()
    tol = 1e-9 * np.maximum(np.abs(upper), 1.0)
    active = tuple(
        name
        for name, xi, lo, hi, t in zip(_PARAM_NAMES, x, lower, upper, tol)
        if abs(xi - lo) <= t or abs(xi - hi) <= t
    )
    return CalibrationReport(
        params=fitted,
        rmse_initial=rmse_initial,
        rmse_final=rmse_final,
        improved=improved,
        iterations=int(result.nfev),
        message=str(result.message),
        lower=tuple(float(b) for b in lower),
        upper=tuple(float(b) for b in upper),
        active_bounds=active,
    )


# -- serialization -----------------------------------------------------------


def params_to_dict(params: MfdParams) -> dict:
    d = asdict(params)
    return {
        "lambda": d["lam"],
        "u_f": d["u_f"],
        "Q": d["Q"],
        "kappa": d["kappa"],
        "w": d["w"],
        "lane_distance": d["lane_distance"],
    }


def params_from_dict(d: dict) -> MfdParams:
    try:
        return MfdParams(
            lam=float(d["lambda"]),
            u_f=float(d["u_f"]),
            Q=float(d["Q"]),
            kappa=float(d["kappa"]),
            w=float(d["w"]),
            lane_distance=float(d.get("lane_distance", 1.0)),
        )
    except KeyError as exc:
        raise ValueError(f"MFD parameters missing field {exc.args[0]!r}") from None


def params_to_json(params: MfdParams) -> str:
    return json.dumps(params_to_dict(params), indent=2, sort_keys=True)


def params_from_json(text: str) -> MfdParams:
    return params_from_dict(json.loads(text))
