"""Secret key rates for Gaussian-modulated coherent states with heterodyne detection.

Asymptotic rates follow the trusted-receiver Devetak-Winter bound
``R = beta I_AB - chi_BE``, with the Holevo information written through five
symplectic eigenvalues in closed form. The finite-size rate replaces the
channel estimates by worst-case values over ``m`` estimation samples and
subtracts a privacy-amplification penalty ``Delta(n)``.

Conventions: all variances in SNU, ``xi`` is referred to Alice's output,
``T`` is the channel transmission and ``eta`` Bob's total efficiency.

The noise estimate for finite-size analysis is taken in Bob-referenced units,
``sigma2 = 1 + (eta T / 2) xi + xi_d`` with ``xi_d = nu_el``, and the worst case
is mapped back to ``xi_max = (sigma2_max - 1 - xi_d) / T_min`` where ``T_min``
is the worst-case effective transmission ``eta T / 2``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

DEFAULT_ATTEN_DB_PER_KM = 0.2
DEFAULT_SYMBOL_RATE = 5e4


class NumericalDomainError(ArithmeticError):
    pass


def g(x):
    """Entropy function ``(x+1) log2(x+1) - x log2(x)`` with ``g(0) = 0``."""
    x = np.maximum(np.asarray(x, dtype=np.float64), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (x + 1) * np.log2(x + 1) - np.where(x > 0, x * np.log2(np.where(x > 0, x, 1.0)), 0.0)
    return out if out.ndim else float(out)


def fiber_transmission(distance_km: float, atten_db_per_km: float = DEFAULT_ATTEN_DB_PER_KM) -> float:
    return 10 ** (-atten_db_per_km * distance_km / 10)


@dataclass(frozen=True)
class SecurityInput:
    v_a: float
    t: float
    xi: float = 0.0
    eta: float = 0.42
    nu_el: float = 0.175
    beta_rec: float = 0.95

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("transmission must be positive")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if not self.v_a > 0:
            raise ValueError("modulation variance must be positive")
        if self.nu_el < 0:
            raise ValueError("nu_el must be non-negative")

    @property
    def v(self) -> float:
        return self.v_a + 1

    @property
    def chi_line(self) -> float:
        return (1 + self.t * self.xi) / self.t - 1

    @property
    def chi_het(self) -> float:
        return (1 + (1 - self.eta) + 2 * self.nu_el) / self.eta

    @property
    def chi_tot(self) -> float:
        return self.chi_line + self.chi_het / self.t


@dataclass(frozen=True)
class HolevoBreakdown:
    lambdas: tuple
    a_coef: float
    b_coef: float
    c_coef: float
    d_coef: float
    chi_be: float


def mutual_information(inp: SecurityInput) -> float:
    return math.log2((inp.v + inp.chi_tot) / (1 + inp.chi_tot))


def _root_pair(s: float, prod: float, tol: float = 1e-9):
    """Symplectic pair from ``lambda^2`` sum and product; smaller root by division."""
    disc = s * s - 4 * prod
    if disc < 0:
        if disc < -tol * s * s:
            raise NumericalDomainError(f"negative discriminant {disc:.3e}")
        disc = 0.0
    big2 = (s + math.sqrt(disc)) / 2
    small2 = prod / big2 if big2 > 0 else 0.0
    return math.sqrt(big2), math.sqrt(small2)


def holevo_bound(inp: SecurityInput) -> HolevoBreakdown:
    v, t = inp.v, inp.t
    cl, ch, ct = inp.chi_line, inp.chi_het, inp.chi_tot
    a = v * v * (1 - 2 * t) + 2 * t + t * t * (v + cl) ** 2
    b = t * t * (v * cl + 1) ** 2
    sqrt_b = math.sqrt(b)
    norm = t * t * (v + ct) ** 2
    c = (a * ch * ch + b + 1 + 2 * t * (v * v - 1) + 2 * ch * (v * sqrt_b + t * (v + cl))) / norm
    d = ((v + sqrt_b * ch) / (t * (v + ct))) ** 2
    l1, l2 = _root_pair(a, b)
    l3, l4 = _root_pair(c, d)
    lambdas = (l1, l2, l3, l4, 1.0)
    chi = sum(g((lam - 1) / 2) for lam in lambdas[:2]) - sum(g((lam - 1) / 2) for lam in lambdas[2:])
    return HolevoBreakdown(lambdas, a, b, c, d, float(chi))


def asymptotic_rate(inp: SecurityInput) -> float:
    return inp.beta_rec * mutual_information(inp) - holevo_bound(inp).chi_be


@dataclass(frozen=True)
class FiniteSizeInput:
    n_key: int
    m_est: int
    z_conf: float = 6.5
    eps_bar: float = 1e-10
    eps_pe: float = 1e-10
    xi_d: float | None = None
    symbol_rate: float = DEFAULT_SYMBOL_RATE

    def __post_init__(self):
        if self.n_key < 1 or self.m_est < 1:
            raise ValueError("n and m must be at least 1")

    @classmethod
    def from_total(cls, n_total: float, estimation_fraction: float = 0.5, **kw) -> "FiniteSizeInput":
        m = int(round(n_total * estimation_fraction))
        return cls(n_key=int(round(n_total)) - m, m_est=m, **kw)

    @classmethod
    def from_hours(cls, hours: float, symbol_rate: float = DEFAULT_SYMBOL_RATE, **kw) -> "FiniteSizeInput":
        return cls.from_total(hours * 3600 * symbol_rate, symbol_rate=symbol_rate, **kw)

    @property
    def n_total(self) -> int:
        return self.n_key + self.m_est


def privacy_penalty(n: float, eps_bar: float = 1e-10) -> float:
    return 7 * math.sqrt(math.log2(2 / eps_bar) / n)


@dataclass(frozen=True)
class KeyRateResult:
    i_ab: float
    chi_be: float
    holevo: HolevoBreakdown
    r_inf: float
    r_fs: float = float("nan")
    chi_be_max: float = float("nan")
    holevo_max: HolevoBreakdown | None = None
    t_min: float = float("nan")
    sigma2_max: float = float("nan")
    xi_max: float = float("nan")
    delta_n: float = float("nan")
    n_total: int = 0
    pe_failed: bool = False
    symbol_rate: float = DEFAULT_SYMBOL_RATE
    v_a: float = float("nan")

    @property
    def r_inf_bps(self) -> float:
        return self.r_inf * self.symbol_rate

    @property
    def r_fs_bps(self) -> float:
        return self.r_fs * self.symbol_rate

    def to_dict(self) -> dict:
        out = asdict(self)
        out["r_inf_bps"] = self.r_inf_bps
        out["r_fs_bps"] = self.r_fs_bps
        return out


def key_rate(inp: SecurityInput, fs: FiniteSizeInput | None = None) -> KeyRateResult:
    """Asymptotic rate, plus the finite-size rate when ``fs`` is given (bits/symbol)."""
    i_ab = mutual_information(inp)
    hol = holevo_bound(inp)
    r_inf = inp.beta_rec * i_ab - hol.chi_be
    base = KeyRateResult(i_ab=i_ab, chi_be=hol.chi_be, holevo=hol, r_inf=r_inf, v_a=inp.v_a)
    if fs is None:
        return base

    xi_d = inp.nu_el if fs.xi_d is None else fs.xi_d
    t_hat = inp.eta * inp.t / 2
    sigma2 = 1 + t_hat * inp.xi + xi_d
    root = math.sqrt(t_hat) - fs.z_conf * math.sqrt(sigma2 / (fs.m_est * inp.v_a))
    sigma2_max = sigma2 + fs.z_conf * sigma2 * math.sqrt(2) / math.sqrt(fs.m_est)
    delta_n = privacy_penalty(fs.n_key, fs.eps_bar)
    common = dict(sigma2_max=sigma2_max, delta_n=delta_n, n_total=fs.n_total, symbol_rate=fs.symbol_rate)
    if root <= 0:
        return replace(base, r_fs=0.0, t_min=0.0, pe_failed=True, **common)

    t_min = root * root
    xi_max = (sigma2_max - 1 - xi_d) / t_min
    worst = replace(inp, t=2 * t_min / inp.eta, xi=xi_max)
    hol_max = holevo_bound(worst)
    r_fs = fs.n_key / fs.n_total * (inp.beta_rec * i_ab - hol_max.chi_be - delta_n)
    return replace(base, r_fs=r_fs, chi_be_max=hol_max.chi_be, holevo_max=hol_max,
                   t_min=t_min, xi_max=xi_max, **common)


def finite_size_rate(inp: SecurityInput, fs: FiniteSizeInput) -> float:
    return key_rate(inp, fs).r_fs


@dataclass(frozen=True)
class Optimum:
    v_a: float
    rate: float
    result: KeyRateResult
    feasible: bool


def _with_va(fixed: SecurityInput, v_a: float, delta_phi: float | None) -> SecurityInput:
    xi = v_a * delta_phi if delta_phi is not None else fixed.xi
    return replace(fixed, v_a=v_a, xi=xi)


def optimize_va(grid: Sequence[float], fixed: SecurityInput, fs: FiniteSizeInput | None = None,
                delta_phi: float | None = None) -> Optimum:
    """Best modulation variance on a grid, refined by golden section between grid neighbours.

    With ``delta_phi`` set, each candidate's excess noise is ``V_A * delta_phi``.
    """
    grid = np.asarray(sorted(set(float(v) for v in grid)))
    if grid.size == 0:
        raise ValueError("empty V_A grid")

    def rate_at(v_a):
        res = key_rate(_with_va(fixed, v_a, delta_phi), fs)
        return res.r_inf if fs is None else res.r_fs

    rates = np.array([rate_at(v) for v in grid])
    i = int(np.argmax(rates))
    best_v, best_r = float(grid[i]), float(rates[i])
    if 0 < i < grid.size - 1 and rates[i] > max(rates[i - 1], rates[i + 1]):
        sol = minimize_scalar(lambda v: -rate_at(v), bracket=(grid[i - 1], grid[i], grid[i + 1]),
                              method="golden", tol=1e-10)
        if grid[i - 1] < sol.x < grid[i + 1] and -sol.fun > best_r:
            best_v, best_r = float(sol.x), float(-sol.fun)
    result = key_rate(_with_va(fixed, best_v, delta_phi), fs)
    return Optimum(best_v, best_r, result, best_r > 0)


DEFAULT_VA_GRID = np.round(np.arange(0.1, 10.0001, 0.1), 10)


@dataclass(frozen=True)
class SweepRow:
    distance_km: float
    v_a: float
    result: KeyRateResult

    def csv_fields(self) -> list:
        r = self.result
        return [self.distance_km, self.v_a, r.i_ab, r.chi_be, r.r_inf_bps, r.r_fs_bps,
                r.t_min, r.sigma2_max, r.n_total]


SWEEP_COLUMNS = ["distance_km", "v_a", "i_ab", "chi_be", "r_inf_bps", "r_fs_bps",
                 "t_min", "sigma2_max", "n_total"]


def distance_sweep(distances: Sequence[float], base: SecurityInput, delta_phi: float | None = 0.034,
                   fs: FiniteSizeInput | None = None, v_a: float | None = None,
                   grid=DEFAULT_VA_GRID, atten_db_per_km: float = DEFAULT_ATTEN_DB_PER_KM) -> list:
    """Rate versus distance at fixed ``v_a``, or optimized over ``grid`` when ``v_a`` is None."""
    rows = []
    for d in distances:
        fixed = replace(base, t=fiber_transmission(d, atten_db_per_km))
        if v_a is None:
            opt = optimize_va(grid, fixed, fs, delta_phi)
            rows.append(SweepRow(float(d), opt.v_a, opt.result))
        else:
            rows.append(SweepRow(float(d), float(v_a), key_rate(_with_va(fixed, v_a, delta_phi), fs)))
    return rows


def sweep_csv(rows: Sequence[SweepRow], preamble: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in preamble:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow([repr(float(v)) for v in row.csv_fields()])
    return buf.getvalue()


def sweep_json(rows: Sequence[SweepRow], meta: dict | None = None) -> str:
    payload = {
        "meta": meta or {},
        "rows": [{"distance_km": r.distance_km, "v_a": r.v_a, **r.result.to_dict()} for r in rows],
    }
    return json.dumps(payload, sort_keys=True, indent=2, default=_json_default)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj)!r}")


TABLE1 = ((10.0, 5.0, 1.6), (20.0, 20.8, 0.74), (30.0, 80.0, 0.38), (40.0, 302.0, 0.20))


def table1(base: SecurityInput | None = None, delta_phi: float = 0.034, grid=DEFAULT_VA_GRID,
           optimize: bool = True) -> list:
    """Finite-size rates for the four (distance, collection time) rows.

    Returns tuples ``(distance_km, hours, expected_kbps, KeyRateResult)``.
    """
    base = base or SecurityInput(v_a=1.0, t=1.0)
    out = []
    for d, hours, expected in TABLE1:
        fs = FiniteSizeInput.from_hours(hours)
        fixed = replace(base, t=fiber_transmission(d))
        if optimize:
            res = optimize_va(grid, fixed, fs, delta_phi).result
        else:
            res = key_rate(_with_va(fixed, base.v_a, delta_phi), fs)
        out.append((d, hours, expected, res))
    return out
