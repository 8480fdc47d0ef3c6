"""Waiting-time laws on (0, inf).

Every law exposes its moment generating function, the abscissa of
convergence ``zeta``, the generalized inverse ``theta``, essential support
bounds, densities and a sampler.  The four named families have closed forms;
:class:`NumericDensity` falls back to adaptive quadrature.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special

INF = math.inf

# quadrature: an increment above this on a dyadic piece counts as divergence
_DIVERGENCE_THRESHOLD = 1e12
_MAX_DYADIC_PIECES = 80


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to settle.

    Carries the partial sum and the size of the last increment, which is the
    best available bound on the neglected tail.
    """

    def __init__(self, message: str, partial_sum: float = math.nan, tail_bound: float = math.nan):
        super().__init__(f"{message} (partial sum {partial_sum:.6g}, tail bound {tail_bound:.6g})")
        self.partial_sum = partial_sum
        self.tail_bound = tail_bound


class LawError(ValueError):
    """Invalid waiting-law parameters."""


def _as_float_array(x):
    arr = np.asarray(x, dtype=float)
    return arr, arr.ndim == 0


def _ret(arr, scalar):
    return float(arr) if scalar else arr


def integrate_half_line(func: Callable[[float], float], lo: float, hi: float, *, detect_divergence: bool = True) -> float:
    """Integrate a nonnegative-ish integrand on ``(lo, hi)``.

    Finite intervals go straight to :func:`scipy.integrate.quad`.  Infinite
    upper limits are split into dyadic pieces ``[2^k, 2^(k+1)]``; the sum is
    declared divergent once a piece exceeds ``1e12`` or three consecutive
    pieces grow geometrically, and converged once two consecutive pieces fall
    below machine precision relative to the running total.
    """
    if hi <= lo:
        return 0.0
    if math.isfinite(hi):
        val, _ = integrate.quad(func, lo, hi, limit=200, epsabs=0.0, epsrel=1e-12)
        return float(val)
    start = max(lo, 0.0)
    first_end = max(start + 1.0, 1.0)
    total, _ = integrate.quad(func, lo, first_end, limit=200, epsabs=0.0, epsrel=1e-12)
    if not math.isfinite(total):
        if detect_divergence:
            return INF
        raise QuadratureError("non-finite integrand", total, INF)
    a = first_end
    prev = abs(total)
    growth = 0
    small = 0
    for _ in range(_MAX_DYADIC_PIECES):
        b = 2.0 * a
        # a piece only needs accuracy relative to the running total; pieces straddling a divergence
        # or an underflow edge may not reach it, and the growth and settling tests below decide instead
        with np.errstate(over="ignore", invalid="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            inc, _ = integrate.quad(func, a, b, limit=200, epsabs=1e-16 * abs(total), epsrel=1e-12)
        if not math.isfinite(inc) or inc > _DIVERGENCE_THRESHOLD:
            if detect_divergence:
                return INF
            raise QuadratureError("integral diverged", total, inc)
        total += inc
        if inc >= 2.0 * prev and inc > 0.0 and a >= 8.0:
            growth += 1
            if growth >= 3 and detect_divergence:
                return INF
        else:
            growth = 0
        if abs(inc) <= 1e-17 * max(abs(total), 1e-300):
            small += 1
            if small >= 2:
                return float(total)
        else:
            small = 0
        prev = abs(inc)
        a = b
    raise QuadratureError("dyadic quadrature did not settle", total, prev)


@dataclass(frozen=True, eq=False)
class WaitingLaw:
    """Base class for a probability law on (0, inf)."""

    family = "abstract"

    # ---- moment generating function -------------------------------------
    def mgf(self, lam):
        """E[exp(lam * tau)], ``inf`` where divergent."""
        raise NotImplementedError

    def log_mgf(self, lam):
        lam_arr, scalar = _as_float_array(lam)
        with np.errstate(divide="ignore"):
            out = np.log(np.asarray(self.mgf(lam_arr), dtype=float))
        return _ret(out, scalar)

    def mgf_derivative(self, lam):
        """E[tau exp(lam * tau)]."""
        raise NotImplementedError

    def tilted_mean(self, lam):
        """Mean of the law exponentially tilted by ``lam`` (derivative of the log-MGF)."""
        lam_arr, scalar = _as_float_array(lam)
        out = np.asarray(self.mgf_derivative(lam_arr), dtype=float) / np.asarray(self.mgf(lam_arr), dtype=float)
        return _ret(out, scalar)

    @property
    def zeta(self) -> float:
        raise NotImplementedError

    @property
    def mgf_at_zeta(self) -> float:
        """Value of the MGF at ``zeta`` (``inf`` for every named family)."""
        return INF

    def theta(self, t: float) -> float:
        """sup{lam : mgf(lam) <= t}, by monotone bisection."""
        t = float(t)
        if not t > 0:
            raise LawError("theta requires t > 0")
        if t == 1.0:
            return 0.0
        cap = self.mgf_at_zeta
        if t >= cap:
            return self.zeta
        return _bisect_theta(self, t)

    # ---- support --------------------------------------------------------
    def ess_bounds(self) -> tuple[float, float]:
        return (0.0, INF)

    def atom(self, s: float) -> float:
        """Mass of the single point ``s`` (zero for continuous laws)."""
        return 0.0

    @property
    def is_continuous(self) -> bool:
        return True

    # ---- density / sampling ---------------------------------------------
    def pdf(self, s):
        raise NotImplementedError

    def logpdf(self, s):
        s_arr, scalar = _as_float_array(s)
        with np.errstate(divide="ignore"):
            out = np.log(np.asarray(self.pdf(s_arr), dtype=float))
        return _ret(out, scalar)

    def cdf(self, s):
        raise NotImplementedError

    def mean(self) -> float:
        return float(self.mgf_derivative(0.0))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    # ---- tilting --------------------------------------------------------
    def partial_mgf(self, lam: float, lo: float, hi: float) -> float:
        """Integral of exp(lam*s) over the half-open interval (lo, hi]."""
        lo = max(lo, 0.0)
        if hi <= lo:
            return 0.0
        if not math.isfinite(hi):
            full = self.mgf(lam)
            if not math.isfinite(full):
                return INF
            return full - self.partial_mgf(lam, 0.0, lo)
        return integrate_half_line(lambda s: math.exp(lam * s) * float(self.pdf(s)), lo, hi)

    def exp_tilt(self, beta: float) -> "WaitingLaw":
        """Law proportional to exp(beta*s) psi(ds)."""
        raise NotImplementedError

    def tilt(self, beta: float, c: float = 0.0, cutoff: float = INF) -> "WaitingLaw":
        """Law proportional to exp(beta*s + c*s*1{s > cutoff}) psi(ds)."""
        if c == 0.0 or not math.isfinite(cutoff):
            return self.exp_tilt(beta)
        if not self.is_continuous:
            return self
        z = tilt_normalizer(self, beta, c, cutoff)
        if not math.isfinite(z):
            raise LawError(f"tilt normalizer diverges for {self!r}")
        top = beta + max(c, 0.0)
        envelope = self.exp_tilt(top)
        bound = float(self.mgf(top)) / z
        base = self

        def density(s, beta=beta, c=c, cutoff=cutoff, z=z):
            s = np.asarray(s, dtype=float)
            with np.errstate(over="ignore"):
                return np.asarray(base.pdf(s), dtype=float) * np.exp(beta * s + c * s * (s > cutoff)) / z

        return NumericDensity(
            density=density,
            zeta_hint=self.zeta - (beta + c),
            diverges_at_zeta=math.isinf(self.mgf_at_zeta),
            envelope=envelope,
            envelope_bound=bound,
            label=f"tilt({self.describe()}; beta={beta:g}, c={c:g}, cutoff={cutoff:g})",
            check_mass=False,
        )

    # ---- serialization --------------------------------------------------
    def params(self) -> dict:
        return {"family": self.family}

    def describe(self) -> str:
        items = ", ".join(f"{k}={v:g}" for k, v in self.params().items() if k != "family")
        return f"{self.family}({items})"


def tilt_normalizer(law: WaitingLaw, beta: float, c: float = 0.0, cutoff: float = INF) -> float:
    """Integral of exp(s*(beta + c*1{s > cutoff})) psi(ds)."""
    if c == 0.0 or not math.isfinite(cutoff):
        return float(law.mgf(beta))
    head = law.partial_mgf(beta, 0.0, cutoff)
    tail = law.partial_mgf(beta + c, cutoff, INF)
    return head + tail


def _bisect_theta(law: WaitingLaw, t: float) -> float:
    # bracket [-50/mean, zeta - 1e-12], expanded geometrically on the left
    mean = law.mean()
    lo = -50.0 / mean
    while float(law.mgf(lo)) > t:
        lo *= 2.0
        if lo < -1e300:
            raise LawError("theta: left bracket not found")
    z = law.zeta
    if math.isfinite(z):
        hi = z - 1e-12 * max(1.0, abs(z))
        if float(law.mgf(hi)) <= t:
            return hi
    else:
        hi = max(1.0, 1.0 / mean)
        while float(law.mgf(hi)) <= t:
            lo = hi
            hi *= 2.0
            if hi > 1e300:
                raise LawError("theta: right bracket not found")
    # bisect down to floating resolution (well below the 1e-10 target)
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if float(law.mgf(mid)) <= t:
            lo = mid
        else:
            hi = mid
    return lo


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not (value > 0 and math.isfinite(value)):
        raise LawError(f"{name} must be a positive finite number, got {value!r}")
    return value


@dataclass(frozen=True, eq=True)
class Gamma(WaitingLaw):
    """Gamma law with shape ``shape`` and rate ``rate``."""

    shape: float
    rate: float
    family = "gamma"

    def __post_init__(self):
        object.__setattr__(self, "shape", _positive("shape", self.shape))
        object.__setattr__(self, "rate", _positive("rate", self.rate))

    def mgf(self, lam):
        lam, scalar = _as_float_array(lam)
        q, a = self.rate, self.shape
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = np.where(lam < q, (q / np.where(lam < q, q - lam, 1.0)) ** a, INF)
        return _ret(out, scalar)

    def log_mgf(self, lam):
        lam, scalar = _as_float_array(lam)
        q, a = self.rate, self.shape
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(lam < q, a * (math.log(q) - np.log(np.where(lam < q, q - lam, 1.0))), INF)
        return _ret(out, scalar)

    def mgf_derivative(self, lam):
        lam, scalar = _as_float_array(lam)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = np.where(lam < self.rate, np.asarray(self.tilted_mean(lam)) * np.asarray(self.mgf(lam)), INF)
        return _ret(out, scalar)

    def tilted_mean(self, lam):
        lam, scalar = _as_float_array(lam)
        with np.errstate(divide="ignore"):
            out = np.where(lam < self.rate, self.shape / np.where(lam < self.rate, self.rate - lam, 1.0), INF)
        return _ret(out, scalar)

    def tilted_mean_inverse(self, a: float) -> float:
        """The ``lam`` whose tilted mean is ``a`` (closed form)."""
        return self.rate - self.shape / a

    @property
    def zeta(self) -> float:
        return self.rate

    def theta(self, t: float) -> float:
        t = float(t)
        if not t > 0:
            raise LawError("theta requires t > 0")
        if t == 1.0:
            return 0.0
        return self.rate * (1.0 - t ** (-1.0 / self.shape))

    def pdf(self, s):
        s, scalar = _as_float_array(s)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = np.exp(self.logpdf(s))
        return _ret(out, scalar)

    def logpdf(self, s):
        s, scalar = _as_float_array(s)
        a, q = self.shape, self.rate
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(
                s > 0,
                a * math.log(q) + (a - 1.0) * np.log(np.where(s > 0, s, 1.0)) - q * s - special.gammaln(a),
                -INF,
            )
        return _ret(out, scalar)

    def cdf(self, s):
        s, scalar = _as_float_array(s)
        out = special.gammainc(self.shape, self.rate * np.maximum(s, 0.0))
        return _ret(out, scalar)

    def mean(self) -> float:
        return self.shape / self.rate

    def sample(self, rng, size):
        return rng.gamma(self.shape, 1.0 / self.rate, size=size)

    def partial_mgf(self, lam, lo, hi):
        lo = max(lo, 0.0)
        if hi <= lo:
            return 0.0
        k = self.rate - lam
        if k > 0:
            upper = 1.0 if not math.isfinite(hi) else float(special.gammainc(self.shape, k * hi))
            lower = float(special.gammainc(self.shape, k * lo))
            return (self.rate / k) ** self.shape * (upper - lower)
        if not math.isfinite(hi):
            return INF
        return WaitingLaw.partial_mgf(self, lam, lo, hi)

    def exp_tilt(self, beta: float) -> WaitingLaw:
        if beta == 0.0:
            return self
        if beta >= self.rate:
            raise LawError(f"exponential tilt {beta} reaches the abscissa {self.rate}")
        return Gamma(self.shape, self.rate - beta)

    def params(self) -> dict:
        return {"family": self.family, "shape": self.shape, "rate": self.rate}


@dataclass(frozen=True, eq=True)
class Exponential(Gamma):
    """Exponential law with rate ``rate`` (the shape-one gamma)."""

    shape: float = field(default=1.0, init=False, repr=False)
    rate: float = 1.0
    family = "exponential"

    def __init__(self, rate: float = 1.0):
        object.__setattr__(self, "rate", _positive("rate", rate))
        object.__setattr__(self, "shape", 1.0)

    def __post_init__(self):  # pragma: no cover - init is explicit
        pass

    def theta(self, t: float) -> float:
        t = float(t)
        if not t > 0:
            raise LawError("theta requires t > 0")
        if t == 1.0:
            return 0.0
        return self.rate * (1.0 - 1.0 / t)

    def cdf(self, s):
        s, scalar = _as_float_array(s)
        out = -np.expm1(-self.rate * np.maximum(s, 0.0))
        return _ret(out, scalar)

    def sample(self, rng, size):
        # inverse CDF
        u = rng.random(size)
        return -np.log1p(-u) / self.rate

    def exp_tilt(self, beta: float) -> WaitingLaw:
        if beta == 0.0:
            return self
        if beta >= self.rate:
            raise LawError(f"exponential tilt {beta} reaches the abscissa {self.rate}")
        return Exponential(self.rate - beta)

    def params(self) -> dict:
        return {"family": self.family, "rate": self.rate}


@dataclass(frozen=True, eq=True)
class Dirac(WaitingLaw):
    """Point mass at ``point``."""

    point: float
    family = "dirac"

    def __post_init__(self):
        object.__setattr__(self, "point", _positive("point", self.point))

    def mgf(self, lam):
        lam, scalar = _as_float_array(lam)
        with np.errstate(over="ignore"):
            out = np.exp(lam * self.point)
        return _ret(out, scalar)

    def log_mgf(self, lam):
        lam, scalar = _as_float_array(lam)
        return _ret(lam * self.point, scalar)

    def mgf_derivative(self, lam):
        lam, scalar = _as_float_array(lam)
        with np.errstate(over="ignore"):
            out = self.point * np.exp(lam * self.point)
        return _ret(out, scalar)

    def tilted_mean(self, lam):
        lam, scalar = _as_float_array(lam)
        return _ret(np.full_like(lam, self.point), scalar)

    @property
    def zeta(self) -> float:
        return INF

    def theta(self, t: float) -> float:
        t = float(t)
        if not t > 0:
            raise LawError("theta requires t > 0")
        if t == 1.0:
            return 0.0
        return math.log(t) / self.point

    def ess_bounds(self):
        return (self.point, self.point)

    def atom(self, s: float) -> float:
        return 1.0 if s == self.point else 0.0

    @property
    def is_continuous(self) -> bool:
        return False

    def pdf(self, s):
        raise LawError("a point mass has no density")

    def cdf(self, s):
        s, scalar = _as_float_array(s)
        return _ret((s >= self.point).astype(float), scalar)

    def mean(self) -> float:
        return self.point

    def sample(self, rng, size):
        return np.full(size, self.point)

    def partial_mgf(self, lam, lo, hi):
        return math.exp(lam * self.point) if lo < self.point <= hi else 0.0

    def exp_tilt(self, beta: float) -> WaitingLaw:
        return self

    def params(self) -> dict:
        return {"family": self.family, "point": self.point}


# Asymptotic coefficients of sqrt(pi)*erfcx(u) = sum_n a_n u^-(2n+1), u -> inf.
_ERFCX_COEFFS = [1.0]
for _n in range(1, 24):
    _ERFCX_COEFFS.append(-_ERFCX_COEFFS[-1] * (2 * _n - 1) / 2.0)
_RAYLEIGH_SERIES_CUT = 25.0


@dataclass(frozen=True, eq=True)
class Rayleigh(WaitingLaw):
    """Rayleigh law with density (s/scale^2) exp(-s^2 / (2 scale^2))."""

    scale: float
    family = "rayleigh"

    def __post_init__(self):
        object.__setattr__(self, "scale", _positive("scale", self.scale))

    def _u(self, lam):
        return -self.scale * lam / math.sqrt(2.0)

    def mgf(self, lam):
        lam, scalar = _as_float_array(lam)
        u = np.atleast_1d(self._u(lam))
        out = np.empty_like(u)
        far = u > _RAYLEIGH_SERIES_CUT
        near = ~far
        with np.errstate(over="ignore", invalid="ignore"):
            un = u[near]
            out[near] = 1.0 - math.sqrt(math.pi) * un * special.erfcx(un)
        if far.any():
            uf = u[far]
            with np.errstate(over="ignore"):
                inv2 = 1.0 / (uf * uf)
            acc = np.zeros_like(uf)
            term = np.ones_like(uf)
            for n in range(1, len(_ERFCX_COEFFS)):
                term = term * inv2
                acc -= _ERFCX_COEFFS[n] * term
            out[far] = acc
        out = np.where(np.isnan(out), INF, out)
        out = out.reshape(np.shape(lam))
        return _ret(out, scalar)

    def log_mgf(self, lam):
        lam, scalar = _as_float_array(lam)
        u = np.atleast_1d(self._u(lam))
        out = np.empty_like(u)
        big = u < -5.0
        with np.errstate(divide="ignore"):
            out[~big] = np.log(np.atleast_1d(self.mgf(-np.sqrt(2.0) * u[~big] / self.scale)))
        if big.any():
            ub = u[big]
            au = -ub
            out[big] = ub * ub + np.log(au * math.sqrt(math.pi) * special.erfc(ub) + np.exp(-ub * ub))
        out = out.reshape(np.shape(lam))
        return _ret(out, scalar)

    def mgf_derivative(self, lam):
        lam, scalar = _as_float_array(lam)
        u = np.atleast_1d(self._u(lam))
        out = np.empty_like(u)
        far = u > _RAYLEIGH_SERIES_CUT
        near = ~far
        c = self.scale / math.sqrt(2.0)
        with np.errstate(over="ignore", invalid="ignore"):
            un = u[near]
            out[near] = c * (math.sqrt(math.pi) * (1.0 + 2.0 * un * un) * special.erfcx(un) - 2.0 * un)
        if far.any():
            uf = u[far]
            inv = 1.0 / uf
            acc = np.zeros_like(uf)
            for n in range(1, len(_ERFCX_COEFFS) - 1):
                acc += (_ERFCX_COEFFS[n] + 2.0 * _ERFCX_COEFFS[n + 1]) * inv ** (2 * n + 1)
            out[far] = c * acc
        out = np.where(np.isnan(out), INF, out)
        out = out.reshape(np.shape(lam))
        return _ret(out, scalar)

    def tilted_mean(self, lam):
        lam, scalar = _as_float_array(lam)
        u = np.asarray(self._u(lam), dtype=float)
        c = self.scale / math.sqrt(2.0)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            m = np.asarray(self.mgf(lam), dtype=float)
            out = np.asarray(self.mgf_derivative(lam), dtype=float) / m
            # far right: the ratio equals c (1 + 2u^2) / |u| up to a factor exp(-u^2)
            right = c * (1.0 + 2.0 * u * u) / np.abs(np.where(u == 0, 1.0, u))
            # far left both moments underflow; the tilted law is then close to Gamma(2, -lam)
            left = 2.0 / np.abs(np.where(lam == 0, 1.0, lam))
        out = np.where(u < -20.0, right, out)
        bad = ~np.isfinite(out) | (m <= 0)
        out = np.where(bad & (u > 0), left, out)
        return _ret(out, scalar)

    @property
    def zeta(self) -> float:
        return INF

    def pdf(self, s):
        s, scalar = _as_float_array(s)
        sig2 = self.scale**2
        out = np.where(s > 0, s / sig2 * np.exp(-s * s / (2.0 * sig2)), 0.0)
        return _ret(out, scalar)

    def logpdf(self, s):
        s, scalar = _as_float_array(s)
        sig2 = self.scale**2
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(s > 0, np.log(np.where(s > 0, s, 1.0)) - math.log(sig2) - s * s / (2.0 * sig2), -INF)
        return _ret(out, scalar)

    def cdf(self, s):
        s, scalar = _as_float_array(s)
        with np.errstate(over="ignore"):
            out = -np.expm1(-np.maximum(s, 0.0) ** 2 / (2.0 * self.scale**2))
        return _ret(out, scalar)

    def mean(self) -> float:
        return self.scale * math.sqrt(math.pi / 2.0)

    def sample(self, rng, size):
        # inverse CDF
        u = rng.random(size)
        return self.scale * np.sqrt(-2.0 * np.log1p(-u))

    def exp_tilt(self, beta: float) -> WaitingLaw:
        if beta == 0.0:
            return self
        z = float(self.mgf(beta))
        base = self
        if beta < 0:
            envelope, bound = self, 1.0 / z
        else:
            # s e^{beta s - s^2/2sig^2} <= 2 e^{beta^2 sig^2} * Rayleigh(sqrt2 sig)
            envelope = Rayleigh(self.scale * math.sqrt(2.0))
            bound = 2.0 * math.exp(beta * beta * self.scale**2) / z

        def density(s, beta=beta, z=z):
            s = np.asarray(s, dtype=float)
            return np.asarray(base.pdf(s), dtype=float) * np.exp(beta * s) / z

        return NumericDensity(
            density=density,
            zeta_hint=INF,
            diverges_at_zeta=True,
            envelope=envelope,
            envelope_bound=bound,
            label=f"tilt({self.describe()}; beta={beta:g})",
            check_mass=False,
        )

    def params(self) -> dict:
        return {"family": self.family, "scale": self.scale}


@dataclass(frozen=True, eq=False)
class NumericDensity(WaitingLaw):
    """Law given by a density callable on (lo, hi) with ``lo >= 0``.

    Parameters
    ----------
    density : callable
        Vectorized density; must integrate to one (checked to 1e-8 unless
        ``check_mass`` is false, which callers use when the normalizer is
        known in closed form).
    support : tuple
        Interval carrying the density.
    zeta_hint : float, optional
        Known abscissa of convergence; otherwise located by bisection.
    diverges_at_zeta : bool, optional
        Whether the MGF is infinite at ``zeta``; probed numerically if absent.
    envelope, envelope_bound : optional
        Rejection sampler ``density <= envelope_bound * envelope.pdf``.
        Without one, sampling uses a tabulated inverse CDF.
    """

    density: Callable
    support: tuple = (0.0, INF)
    zeta_hint: float | None = None
    diverges_at_zeta: bool | None = None
    envelope: WaitingLaw | None = None
    envelope_bound: float | None = None
    label: str = "numeric"
    check_mass: bool = True
    _cache: dict = field(default_factory=dict, repr=False, compare=False)
    family = "numeric"

    def __post_init__(self):
        lo, hi = self.support
        if lo < 0 or hi <= lo:
            raise LawError(f"invalid support {self.support}")
        if self.check_mass:
            mass = integrate_half_line(lambda s: float(self.density(s)), lo, hi, detect_divergence=False)
            if abs(mass - 1.0) > 1e-8:
                raise LawError(f"density integrates to {mass!r}, not 1 within 1e-8")

    def _integrand(self, lam: float, power: int):
        def f(s):
            with np.errstate(over="ignore", invalid="ignore"):
                v = float(self.density(s))
                if v == 0.0:
                    return 0.0
                e = lam * s + math.log(v)
                if e > 709.0:
                    return INF
                return math.exp(e) * (s**power)
        return f

    def _moment(self, lam: float, power: int) -> float:
        lo, hi = self.support
        z = self.zeta
        if lam > z:
            return INF
        if lam == z and self.diverges_at_zeta:
            return INF
        return integrate_half_line(self._integrand(lam, power), lo, hi)

    def mgf(self, lam):
        lam, scalar = _as_float_array(lam)
        out = np.array([self._moment(float(v), 0) for v in np.atleast_1d(lam)]).reshape(np.shape(lam))
        return _ret(out, scalar)

    def mgf_derivative(self, lam):
        lam, scalar = _as_float_array(lam)
        out = np.array([self._moment(float(v), 1) for v in np.atleast_1d(lam)]).reshape(np.shape(lam))
        return _ret(out, scalar)

    @property
    def zeta(self) -> float:
        if self.zeta_hint is not None:
            return self.zeta_hint
        if "zeta" in self._cache:
            return self._cache["zeta"]
        lo, hi = self.support
        if math.isfinite(hi):
            self._cache["zeta"] = INF
            return INF
        f = lambda lam: integrate_half_line(self._integrand(lam, 0), lo, hi)  # noqa: E731
        # certified bracket: finite at `a`, infinite at `b`
        a, b = 0.0, 1.0
        while math.isfinite(f(b)):
            a, b = b, 2.0 * b
            if b > 1e6:
                raise LawError("zeta: bracket not found (no divergence up to 1e6)")
        while b - a > 1e-10 * max(1.0, b):
            mid = 0.5 * (a + b)
            if math.isfinite(f(mid)):
                a = mid
            else:
                b = mid
        self._cache["zeta"] = a
        return a

    @property
    def mgf_at_zeta(self) -> float:
        z = self.zeta
        if not math.isfinite(z):
            return INF
        if self.diverges_at_zeta is None:
            lo, hi = self.support
            val = integrate_half_line(self._integrand(z, 0), lo, hi)
            object.__setattr__(self, "diverges_at_zeta", not math.isfinite(val))
            return val
        if self.diverges_at_zeta:
            return INF
        lo, hi = self.support
        return integrate_half_line(self._integrand(z, 0), lo, hi)

    def ess_bounds(self):
        lo, hi = self.support
        return (float(lo), float(hi))

    def pdf(self, s):
        s, scalar = _as_float_array(s)
        lo, hi = self.support
        inside = (s > lo) & (s < hi)
        out = np.where(inside, np.asarray(self.density(np.where(inside, s, (lo + min(hi, lo + 1.0)) / 2)), dtype=float), 0.0)
        return _ret(out, scalar)

    def cdf(self, s):
        s, scalar = _as_float_array(s)
        lo, _ = self.support
        out = np.array([integrate_half_line(lambda v: float(self.pdf(v)), lo, float(x), detect_divergence=False) if x > lo else 0.0
                        for x in np.atleast_1d(s)]).reshape(np.shape(s))
        return _ret(np.clip(out, 0.0, 1.0), scalar)

    def sample(self, rng, size):
        if self.envelope is not None and self.envelope_bound is not None:
            out = np.empty(size)
            filled = 0
            while filled < size:
                need = size - filled
                batch = max(16, int(need * self.envelope_bound * 1.2) + 8)
                cand = self.envelope.sample(rng, batch)
                u = rng.random(batch)
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratio = np.asarray(self.pdf(cand)) / (self.envelope_bound * np.asarray(self.envelope.pdf(cand)))
                acc = cand[u < ratio]
                take = min(need, acc.size)
                out[filled:filled + take] = acc[:take]
                filled += take
            return out
        grid, cdf = self._inverse_table()
        return np.interp(rng.random(size), cdf, grid)

    def _inverse_table(self):
        if "table" not in self._cache:
            lo, hi = self.support
            upper = hi if math.isfinite(hi) else lo + 64.0 * max(self.mean(), 1e-6)
            grid = np.concatenate([[lo], lo + np.geomspace(1e-9, upper - lo, 8191)])
            dens = np.asarray(self.pdf(grid), dtype=float)
            cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
            cdf /= cdf[-1]
            self._cache["table"] = (grid, cdf)
        return self._cache["table"]

    def exp_tilt(self, beta: float) -> WaitingLaw:
        if beta == 0.0:
            return self
        z = float(self.mgf(beta))
        if not math.isfinite(z):
            raise LawError(f"exponential tilt {beta} has divergent normalizer")
        base = self

        def density(s, beta=beta, z=z):
            s = np.asarray(s, dtype=float)
            return np.asarray(base.pdf(s), dtype=float) * np.exp(beta * s) / z

        return NumericDensity(
            density=density,
            support=self.support,
            zeta_hint=self.zeta - beta,
            diverges_at_zeta=self.diverges_at_zeta,
            label=f"tilt({self.label}; beta={beta:g})",
            check_mass=False,
        )

    def params(self) -> dict:
        return {"family": self.family, "label": self.label}

    def describe(self) -> str:
        return self.label


@dataclass(frozen=True, eq=False)
class Mixture(WaitingLaw):
    """Finite convex combination of laws (see :func:`mixture`)."""

    components: tuple
    weights: tuple
    family = "mixture"

    def mgf(self, lam):
        return sum(w * np.asarray(c.mgf(lam), dtype=float) for c, w in zip(self.components, self.weights))

    def log_mgf(self, lam):
        # log-sum-exp keeps far tails finite where the plain mgf under- or overflows
        lam, scalar = _as_float_array(lam)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            terms = np.stack([np.asarray(c.log_mgf(lam), dtype=float) + math.log(w)
                              for c, w in zip(self.components, self.weights) if w > 0])
            out = special.logsumexp(terms, axis=0)
        return _ret(out, scalar)

    def mgf_derivative(self, lam):
        return sum(w * np.asarray(c.mgf_derivative(lam), dtype=float) for c, w in zip(self.components, self.weights))

    @property
    def zeta(self) -> float:
        return min(c.zeta for c in self.components)

    @property
    def mgf_at_zeta(self) -> float:
        z = self.zeta
        if not math.isfinite(z):
            return INF
        return float(sum(w * (c.mgf_at_zeta if c.zeta == z else float(c.mgf(z)))
                         for c, w in zip(self.components, self.weights)))

    def ess_bounds(self):
        bounds = [c.ess_bounds() for c in self.components]
        return (min(b[0] for b in bounds), max(b[1] for b in bounds))

    def atom(self, s: float) -> float:
        return float(sum(w * c.atom(s) for c, w in zip(self.components, self.weights)))

    @property
    def is_continuous(self) -> bool:
        return all(c.is_continuous for c in self.components)

    def pdf(self, s):
        return sum(w * np.asarray(c.pdf(s), dtype=float) for c, w in zip(self.components, self.weights))

    def cdf(self, s):
        return sum(w * np.asarray(c.cdf(s), dtype=float) for c, w in zip(self.components, self.weights))

    def mean(self) -> float:
        return float(sum(w * c.mean() for c, w in zip(self.components, self.weights)))

    def sample(self, rng, size):
        pick = rng.choice(len(self.components), size=size, p=np.asarray(self.weights))
        out = np.empty(size)
        for i, c in enumerate(self.components):
            mask = pick == i
            if mask.any():
                out[mask] = c.sample(rng, int(mask.sum()))
        return out

    def exp_tilt(self, beta: float) -> WaitingLaw:
        z = [w * float(c.mgf(beta)) for c, w in zip(self.components, self.weights)]
        total = sum(z)
        if not math.isfinite(total):
            raise LawError(f"exponential tilt {beta} has divergent normalizer")
        return mixture([c.exp_tilt(beta) for c in self.components], [v / total for v in z])

    def params(self) -> dict:
        return {"family": self.family, "components": [c.params() for c in self.components], "weights": list(self.weights)}

    def describe(self) -> str:
        return " + ".join(f"{w:g}*{c.describe()}" for c, w in zip(self.components, self.weights))


def mixture(components, weights) -> WaitingLaw:
    """Convex combination of laws; identical named components are merged."""
    merged: list[list] = []
    for c, w in zip(components, weights):
        w = float(w)
        if w < 0:
            raise LawError("mixture weights must be nonnegative")
        if w == 0.0:
            continue
        key = repr(sorted(c.params().items())) if c.family not in ("numeric", "mixture") else id(c)
        for item in merged:
            if item[0] == key:
                item[2] += w
                break
        else:
            merged.append([key, c, w])
    if not merged:
        raise LawError("mixture needs a positive weight")
    total = sum(item[2] for item in merged)
    if len(merged) == 1:
        return merged[0][1]
    return Mixture(tuple(item[1] for item in merged), tuple(item[2] / total for item in merged))


# ---------------------------------------------------------------------------
# functional interface
# ---------------------------------------------------------------------------

def mgf(law: WaitingLaw, lam):
    """Moment generating function of ``law`` at ``lam`` (``inf`` if divergent)."""
    return law.mgf(lam)


def zeta(law: WaitingLaw) -> float:
    """Abscissa of convergence sup{lam : mgf(lam) < inf}."""
    return law.zeta


def theta(law: WaitingLaw, t: float) -> float:
    """Generalized inverse sup{lam : mgf(lam) <= t}; equals ``zeta`` on the plateau."""
    return law.theta(t)


def ess_bounds(law: WaitingLaw) -> tuple[float, float]:
    """Essential infimum and supremum of the support."""
    return law.ess_bounds()


def relative_entropy_waiting(p: WaitingLaw, q: WaitingLaw) -> float:
    """Kullback-Leibler divergence KL(p | q), ``inf`` without absolute continuity."""
    if isinstance(p, Dirac) or isinstance(q, Dirac):
        # a point mass is only absolutely continuous w.r.t. the same point mass
        if isinstance(p, Dirac) and isinstance(q, Dirac) and p.point == q.point:
            return 0.0
        return INF
    if isinstance(p, Gamma) and isinstance(q, Gamma):
        if p.shape == q.shape and p.rate == q.rate:
            return 0.0
        ap, bp, aq, bq = p.shape, p.rate, q.shape, q.rate
        t1 = aq * math.log(bp / bq)
        t2 = special.gammaln(aq) - special.gammaln(ap)
        t3 = (ap - aq) * special.digamma(ap)
        t4 = (bq - bp) * (ap / bp)
        return max(float(t1 + t2 + t3 + t4), 0.0)
    if isinstance(p, Rayleigh) and isinstance(q, Rayleigh):
        r = p.scale / q.scale
        return max(r * r - 1.0 - 2.0 * math.log(r), 0.0)
    plo, phi = p.ess_bounds()
    qlo, qhi = q.ess_bounds()
    if plo < qlo or phi > qhi:
        return INF

    def integrand(s):
        ps = float(p.pdf(s))
        if ps == 0.0:
            return 0.0
        lq = float(q.logpdf(s))
        if lq == -INF:
            return INF
        return ps * (float(p.logpdf(s)) - lq)

    val = integrate_half_line(integrand, plo, phi, detect_divergence=True)
    return max(val, 0.0)


def law_from_params(params: dict) -> WaitingLaw:
    """Inverse of :meth:`WaitingLaw.params` for the named families."""
    fam = params.get("family")
    if fam == "exponential":
        return Exponential(params["rate"])
    if fam == "gamma":
        return Gamma(params["shape"], params["rate"])
    if fam == "dirac":
        return Dirac(params["point"])
    if fam == "rayleigh":
        return Rayleigh(params["scale"])
    if fam == "mixture":
        return mixture([law_from_params(c) for c in params["components"]], params["weights"])
    raise LawError(f"unknown or non-serializable family {fam!r}")
