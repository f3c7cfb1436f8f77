"""Post-processing parameter estimation: encoding scale, excess noise, phase-noise slope."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np


class RegressionError(ValueError):
    pass


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class EstimationResult:
    k_hat: float
    v_a_hat: float
    xi_hat: float
    v_b: float
    residual_variance: float
    delta_phi_hat: float = float("nan")
    sample_count: int = 0
    xi_stderr: float = float("nan")
    nonphysical: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def regress(digital, measured):
    """Ordinary least squares ``measured = slope * digital + intercept``.

    Returns (slope, intercept, slope standard error, residual variance).
    """
    d = np.asarray(digital, dtype=np.float64)
    m = np.asarray(measured, dtype=np.float64)
    if d.shape != m.shape or d.size < 3:
        raise RegressionError("need matching sequences of at least 3 samples")
    dc = d - d.mean()
    sxx = float(np.dot(dc, dc))
    if sxx == 0:
        raise RegressionError("digital encodings have zero variance")
    slope = float(np.dot(dc, m - m.mean()) / sxx)
    intercept = float(m.mean() - slope * d.mean())
    resid = m - slope * d - intercept
    res_var = float(np.dot(resid, resid) / (d.size - 2))
    return slope, intercept, math.sqrt(res_var / sxx), res_var


def channel_gain(t: float, eta: float) -> float:
    return math.sqrt(eta * t / 2)


def fit_k(digital, measured, t: float, eta: float) -> float:
    """Encoding scale from the slope of Bob's data on Alice's digital values."""
    slope, *_ = regress(digital, measured)
    return slope / channel_gain(t, eta)


@dataclass(frozen=True)
class QuadratureFit:
    k_hat: float
    slope_x: float
    slope_p: float
    stderr_x: float
    stderr_p: float
    residual_variance: float

    @property
    def slopes_agree(self) -> bool:
        """Slopes within two combined standard errors."""
        return abs(self.slope_x - self.slope_p) <= 2 * math.hypot(self.stderr_x, self.stderr_p)


def fit_k_quadratures(digital_x, digital_p, measured_x, measured_p, t: float, eta: float) -> QuadratureFit:
    """Fit both quadratures independently, then pool them for the final ``k``."""
    sx, _, ex, _ = regress(digital_x, measured_x)
    sp, _, ep, _ = regress(digital_p, measured_p)
    d = np.concatenate([np.asarray(digital_x), np.asarray(digital_p)])
    m = np.concatenate([np.asarray(measured_x), np.asarray(measured_p)])
    pooled, _, _, res_var = regress(d, m)
    return QuadratureFit(pooled / channel_gain(t, eta), sx, sp, ex, ep, res_var)


def excess_noise(v_b: float, v_a: float, t: float, eta: float, nu_e: float) -> float:
    """Invert ``V_B = (T eta / 2)(V_A + xi) + 1 + nu_e`` for ``xi`` (referred to Alice's output)."""
    if not (t > 0 and eta > 0):
        raise ValueError("transmission and efficiency must be positive")
    if nu_e < 0:
        raise ValueError("nu_e must be non-negative")
    return 2 * (v_b - 1 - nu_e) / (t * eta) - v_a


def bob_variance(v_a: float, xi: float, t: float, eta: float, nu_e: float) -> float:
    return t * eta / 2 * (v_a + xi) + 1 + nu_e


def estimate_transmission(digital, measured, k: float, eta: float) -> float:
    """Mature-system mode: ``V_A`` (hence ``k``) known, solve the slope for ``T``."""
    slope, *_ = regress(digital, measured)
    return 2 * slope ** 2 / (eta * k ** 2)


def estimate_packet(digital_x, digital_p, measured_x, measured_p, digital_variance: float,
                    t: float, eta: float, nu_e: float, nonphysical_tol: float = 0.0) -> EstimationResult:
    fit = fit_k_quadratures(digital_x, digital_p, measured_x, measured_p, t, eta)
    v_a_hat = fit.k_hat ** 2 * digital_variance
    v_b = 0.5 * (float(np.var(measured_x)) + float(np.var(measured_p)))
    xi = excess_noise(v_b, v_a_hat, t, eta, nu_e)
    return EstimationResult(
        k_hat=fit.k_hat,
        v_a_hat=v_a_hat,
        xi_hat=xi,
        v_b=v_b,
        residual_variance=fit.residual_variance,
        sample_count=int(np.size(measured_x) + np.size(measured_p)),
        nonphysical=xi < -nonphysical_tol,
    )


def average_results(results: Sequence[EstimationResult]) -> EstimationResult:
    """Combine per-packet estimates by plain averaging (one packet, one vote)."""
    if not results:
        raise ValueError("no packet estimates to average")
    xi = np.array([r.xi_hat for r in results])
    stderr = float(xi.std(ddof=1) / math.sqrt(xi.size)) if xi.size > 1 else float("nan")
    return EstimationResult(
        k_hat=float(np.mean([r.k_hat for r in results])),
        v_a_hat=float(np.mean([r.v_a_hat for r in results])),
        xi_hat=float(xi.mean()),
        v_b=float(np.mean([r.v_b for r in results])),
        residual_variance=float(np.mean([r.residual_variance for r in results])),
        sample_count=int(sum(r.sample_count for r in results)),
        xi_stderr=stderr,
        nonphysical=bool(xi.mean() < -2 * stderr) if xi.size > 1 else bool(xi.mean() < 0),
    )


def fit_phase_noise(points: Iterable[tuple], weights=None):
    """Zero-intercept weighted least squares of ``xi`` against ``V_A``.

    Returns ``(slope, stderr)``; the slope is the phase variance.
    """
    pts = np.asarray(list(points), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 3 or np.unique(pts[:, 0]).size < 3:
        raise FitError("need at least 3 distinct V_A points")
    v, xi = pts[:, 0], pts[:, 1]
    w = np.ones_like(v) if weights is None else np.asarray(weights, dtype=np.float64)
    sww = float(np.sum(w * v * v))
    slope = float(np.sum(w * v * xi) / sww)
    resid = xi - slope * v
    s2 = float(np.sum(w * resid ** 2) / (v.size - 1))
    return slope, math.sqrt(s2 / sww)


def residual_phase_variance(k_hat: float, k_true: float) -> float:
    """Phase variance implied by slope shrinkage, ``E[cos e] = exp(-var/2)``."""
    return -2 * math.log(k_hat / k_true)


def report_json(result: EstimationResult, config: dict, seeds) -> str:
    record = {"estimate": result.to_dict(), "config": config, "seeds": seeds}
    return json.dumps(record, sort_keys=True, indent=2, default=float)
