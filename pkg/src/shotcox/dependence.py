"""Bivariate Clayton Levy copula over shot-noise jump measures.

The per-margin jump stream has tail integral U_g(x) = rho_g * (1 - F_g(x)),
here rho_g * exp(-eta_g * x) for exponential sizes.  The joint tail of the
common-shot component is

    U(x1, x2) = C(U_1(x1), U_2(x2)),
    C(u1, u2) = (u1^{-delta} + u2^{-delta})^{-1/delta},   delta > 0,

which splits each margin's shot rate into a common stream of rate
rho_common = C(rho_1, rho_2) and unique streams rho_g - rho_common.  All the
densities below are derivatives of C composed with the tails:

    common pair density   f(x1,x2) = C_12(U_1,U_2) |U_1'| |U_2'| / rho_common
    common marginal tail  S_g(x)   = C(U_g(x), rho_other) / rho_common
    unique density        f_g(x)   = |U_g'(x)| (1 - C_1(U_g(x), rho_other))
                                      / rho_unique_g

with C_1 the partial derivative in the first argument and C_12 the mixed
second derivative.  Everything is evaluated in log space; the inner-loop
derivative formulas are closed forms (finite-difference cross-checks live in
the tests).

Only the bivariate case is implemented; higher dimensions raise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate

from .shotnoise import JumpEvent

__all__ = [
    "ClaytonParam",
    "MarginalTail",
    "Decomposition",
    "InversionError",
    "clayton_value",
    "decompose_rates",
    "sample_common_jump",
    "common_jump_density",
    "common_marginal_density",
    "common_marginal_survival",
    "unique_jump_density",
    "unique_survival",
    "joint_shot_log_density",
    "mean_common_cross_product",
    "mean_common_marginal",
    "ClaytonDependence",
    "UnivariateExponentialSizes",
]


class InversionError(RuntimeError):
    """Numeric inversion of a tail failed; message carries the bracket."""


@dataclass(frozen=True)
class ClaytonParam:
    """Dependence parameter; delta -> 0 is independence, delta -> inf comonotonic."""

    delta: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.delta) or self.delta <= 0.0:
            raise ValueError(f"delta must be finite and > 0, got {self.delta!r}")


@dataclass(frozen=True)
class MarginalTail:
    """Exponential-size tail integral U(x) = rho * exp(-eta * x)."""

    rho: float
    eta: float

    def __post_init__(self) -> None:
        if self.rho <= 0.0 or self.eta <= 0.0:
            raise ValueError("rho and eta must be > 0")

    def log_value(self, x):
        return math.log(self.rho) - self.eta * np.asarray(x, dtype=float)

    def value(self, x):
        return np.exp(self.log_value(x))

    def inverse_from_log(self, log_u):
        """x such that U(x) = exp(log_u); log_u must be <= log(rho)."""
        return (math.log(self.rho) - log_u) / self.eta

    def log_abs_derivative(self, x):
        return math.log(self.rho * self.eta) - self.eta * np.asarray(x, dtype=float)


@dataclass(frozen=True)
class Decomposition:
    """Split of marginal shot rates into a common stream and unique streams."""

    rho_common: float
    rho_unique: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.rho_common < 0.0 or any(r < 0.0 for r in self.rho_unique):
            raise ValueError("rates must be non-negative")

    @property
    def rho_margins(self) -> tuple[float, ...]:
        return tuple(r + self.rho_common for r in self.rho_unique)

    @property
    def rho_total(self) -> float:
        """Rate of the single driving stream: sum of unique plus common."""
        return self.rho_common + float(sum(self.rho_unique))


# ---------------------------------------------------------------------------
# numerically careful scalar helpers
# ---------------------------------------------------------------------------

def _softplus(z):
    return np.logaddexp(0.0, z)


def _log1mexp(a):
    """log(1 - exp(a)) for a < 0."""
    a = np.asarray(a, dtype=float)
    scalar = a.ndim == 0
    a1 = np.atleast_1d(a)
    out = np.empty_like(a1)
    hi = a1 > -math.log(2.0)
    out[hi] = np.log(-np.expm1(a1[hi]))
    out[~hi] = np.log1p(-np.exp(a1[~hi]))
    return out[0] if scalar else out.reshape(a.shape)


def _log_expm1(z):
    """log(exp(z) - 1) for z > 0."""
    z = np.asarray(z, dtype=float)
    scalar = z.ndim == 0
    z1 = np.atleast_1d(z)
    out = np.empty_like(z1)
    small = z1 <= 0.693
    out[small] = np.log(np.expm1(z1[small]))
    out[~small] = z1[~small] + np.log1p(-np.exp(-z1[~small]))
    return out[0] if scalar else out.reshape(z.shape)


def _log_clayton(log_u1, log_u2, delta: float):
    return -np.logaddexp(-delta * np.asarray(log_u1), -delta * np.asarray(log_u2)) / delta


def _log_clayton_d1(log_u1, log_u2, delta: float):
    """log of dC/du1 = (1 + (u1/u2)^delta)^{-(1+delta)/delta}."""
    z = delta * (np.asarray(log_u1) - np.asarray(log_u2))
    return -(1.0 + delta) / delta * _softplus(z)


def _log_clayton_d12(log_u1, log_u2, delta: float):
    """log of d2C/du1du2 = (1+delta) A^{-(1+2delta)/delta} (u1 u2)^{-(1+delta)}."""
    log_a = np.logaddexp(-delta * np.asarray(log_u1), -delta * np.asarray(log_u2))
    return (
        math.log1p(delta)
        - (1.0 + 2.0 * delta) / delta * log_a
        - (1.0 + delta) * (np.asarray(log_u1) + np.asarray(log_u2))
    )


# ---------------------------------------------------------------------------
# copula surface and rate decomposition
# ---------------------------------------------------------------------------

def clayton_value(u1: float, u2: float, delta: float) -> float:
    """C(u1, u2) = (u1^{-delta} + u2^{-delta})^{-1/delta}.

    Symmetric, increasing in each argument, bounded by min(u1, u2); an
    infinite argument gives the marginal limit C(u, inf) = u.
    """
    if delta <= 0.0:
        raise ValueError("delta must be > 0")
    for u in (u1, u2):
        if not (u > 0.0):
            raise ValueError(f"tail masses must be > 0, got {u!r}")
    if math.isinf(u1) and math.isinf(u2):
        return math.inf
    if math.isinf(u1):
        return float(u2)
    if math.isinf(u2):
        return float(u1)
    return float(np.exp(_log_clayton(math.log(u1), math.log(u2), delta)))


def _exact_complement(total: float, part: float) -> float:
    """rest such that rest + part reproduces total, bit-for-bit if a float
    with that property exists (it can fail to by one ulp under round-to-nearest)."""
    best = total - part
    rest = best
    for _ in range(4):
        s = rest + part
        if s == total:
            return rest
        rest = math.nextafter(rest, math.inf if s < total else -math.inf)
    return best


def decompose_rates(rho1: float, rho2: float, delta: float) -> Decomposition:
    """Common rate C(rho1, rho2) and the unique remainders per margin.

    The remainders are adjusted by at most one ulp so that
    rho_common + rho_unique[g] reproduces rho_g exactly.
    """
    if rho1 <= 0.0 or rho2 <= 0.0:
        raise ValueError("marginal rates must be > 0")
    # rounding can push the copula value one ulp above its min(rho1, rho2)
    # bound in the near-comonotonic regime; clamp so remainders stay >= 0
    common = min(clayton_value(rho1, rho2, delta), rho1, rho2)
    return Decomposition(
        common, (_exact_complement(rho1, common), _exact_complement(rho2, common))
    )


# ---------------------------------------------------------------------------
# densities of the size components
# ---------------------------------------------------------------------------

def _check_tails(tails: Sequence[MarginalTail]) -> tuple[MarginalTail, MarginalTail]:
    if len(tails) != 2:
        raise NotImplementedError(
            f"unimplemented dimension: {len(tails)} margins (bivariate only)"
        )
    return tails[0], tails[1]


def _log_common_pair_rate_density(x1, x2, tails, delta: float):
    """log of the common-part Levy measure density, integrates to rho_common."""
    t1, t2 = _check_tails(tails)
    lu1 = t1.log_value(x1)
    lu2 = t2.log_value(x2)
    return (
        _log_clayton_d12(lu1, lu2, delta)
        + t1.log_abs_derivative(x1)
        + t2.log_abs_derivative(x2)
    )


def _log_unique_rate_density(x, margin: int, tails, delta: float):
    """log of the unique-part Levy measure density, integrates to rho_unique."""
    t1, t2 = _check_tails(tails)
    own, other = (t1, t2) if margin == 0 else (t2, t1)
    lu = own.log_value(x)
    log_d1 = _log_clayton_d1(lu, math.log(other.rho), delta)
    return own.log_abs_derivative(x) + _log1mexp(log_d1)


def _log_common_marginal_rate_density(x, margin: int, tails, delta: float):
    t1, t2 = _check_tails(tails)
    own, other = (t1, t2) if margin == 0 else (t2, t1)
    lu = own.log_value(x)
    return own.log_abs_derivative(x) + _log_clayton_d1(lu, math.log(other.rho), delta)


def common_jump_density(x1: float, x2: float, tails: Sequence[MarginalTail], delta: float) -> float:
    """Joint density of the sizes of a shot hitting both margins."""
    if np.any(np.asarray(x1) <= 0.0) or np.any(np.asarray(x2) <= 0.0):
        raise ValueError("sizes must be > 0")
    t1, t2 = _check_tails(tails)
    rho_common = clayton_value(t1.rho, t2.rho, delta)
    return np.exp(_log_common_pair_rate_density(x1, x2, tails, delta) - math.log(rho_common))


def unique_jump_density(x: float, margin: int, tails: Sequence[MarginalTail], delta: float) -> float:
    """Density of the size of a shot hitting only ``margin``."""
    if np.any(np.asarray(x) <= 0.0):
        raise ValueError("size must be > 0")
    t1, t2 = _check_tails(tails)
    dec = decompose_rates(t1.rho, t2.rho, delta)
    return np.exp(_log_unique_rate_density(x, margin, tails, delta) - math.log(dec.rho_unique[margin]))


def common_marginal_density(x: float, margin: int, tails: Sequence[MarginalTail], delta: float) -> float:
    """Marginal density of one coordinate of a common pair."""
    t1, t2 = _check_tails(tails)
    rho_common = clayton_value(t1.rho, t2.rho, delta)
    return np.exp(_log_common_marginal_rate_density(x, margin, tails, delta) - math.log(rho_common))


def common_marginal_survival(x: float, margin: int, tails: Sequence[MarginalTail], delta: float):
    """P(X_margin > x) for the own coordinate of a common pair."""
    t1, t2 = _check_tails(tails)
    own, other = (t1, t2) if margin == 0 else (t2, t1)
    rho_common = clayton_value(t1.rho, t2.rho, delta)
    lu = own.log_value(x)
    return np.exp(_log_clayton(lu, math.log(other.rho), delta) - math.log(rho_common))


def unique_survival(x: float, margin: int, tails: Sequence[MarginalTail], delta: float):
    """P(X > x) for a unique jump on ``margin``."""
    t1, t2 = _check_tails(tails)
    own, other = (t1, t2) if margin == 0 else (t2, t1)
    dec = decompose_rates(t1.rho, t2.rho, delta)
    lu = own.log_value(np.asarray(x, dtype=float))
    # log C(U, rho_other) - log U = -softplus(delta (log U - log rho_other))/delta,
    # always < 0; keep it away from -0.0 so the log1mexp stays defined when
    # the softplus underflows in the deep tail.
    gap = -_softplus(delta * (lu - math.log(other.rho))) / delta
    gap = np.minimum(gap, -1e-320)
    return np.exp(lu + _log1mexp(gap)) / dec.rho_unique[margin]


def joint_shot_log_density(jump: JumpEvent, tails: Sequence[MarginalTail], delta: float) -> float:
    """log f_X of a multivariate shot, mixing over its zero pattern.

    Patterns carry probability rho_pattern / rho_total with rho_total the
    rate of the driving stream, times the within-pattern size density.
    """
    t1, t2 = _check_tails(tails)
    sizes = np.asarray(jump.sizes, dtype=float)
    if sizes.shape != (2,):
        raise NotImplementedError("unimplemented dimension: bivariate only")
    if np.all(sizes == 0.0):
        raise ValueError("all-zero jump sizes have no density")
    dec = decompose_rates(t1.rho, t2.rho, delta)
    log_rho_total = math.log(dec.rho_total)
    x1, x2 = sizes
    if x1 > 0.0 and x2 > 0.0:
        return float(_log_common_pair_rate_density(x1, x2, tails, delta) - log_rho_total)
    margin = 0 if x1 > 0.0 else 1
    return float(_log_unique_rate_density(sizes[margin], margin, tails, delta) - log_rho_total)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _sample_common_pairs(tails, delta: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-transform sampling of common pairs, closed form in log space.

    First coordinate from the common marginal tail, second from the
    conditional law given by the partial derivative of the copula.
    """
    t1, t2 = _check_tails(tails)
    log_r1, log_r2 = math.log(t1.rho), math.log(t2.rho)
    log_rc = _log_clayton(log_r1, log_r2, delta)

    u = 1.0 - rng.random(n)  # in (0, 1]
    v = 1.0 - rng.random(n)
    # exact boundary draws would give zero sizes; nudge off the endpoint
    u[u == 1.0] = 1.0 - 2.0**-53
    v[v == 1.0] = 1.0 - 2.0**-53

    # invert u = C(U1(x1), rho2) / rho_common for U1(x1)
    log_urc = np.log(u) + log_rc
    g = delta * (log_urc - log_r2)  # < 0 strictly since C(.) < rho2
    log_u1 = log_urc - _log1mexp(g) / delta
    x1 = t1.inverse_from_log(log_u1)

    # conditional survival of x2 given x1:
    #   [(a + U2^{-d})/(a + b)]^{-(1+d)/d} = v,  a = U1^{-d}, b = rho2^{-d}
    log_ab = np.logaddexp(-delta * log_u1, -delta * log_r2)
    alpha = log_ab + (delta / (1.0 + delta)) * (-np.log(v))
    log_t = -delta * log_u1 + _log_expm1(alpha + delta * log_u1)
    log_u2 = -log_t / delta
    x2 = t2.inverse_from_log(log_u2)

    out = np.column_stack([x1, x2])
    if np.any(out <= 0.0) or not np.all(np.isfinite(out)):
        bad = out[(out <= 0.0).any(axis=1) | ~np.isfinite(out).any(axis=1)][:5]
        raise InversionError(f"common-pair inversion produced invalid sizes: {bad!r}")
    return out


def sample_common_jump(
    tails: Sequence[MarginalTail], delta: float, rng: np.random.Generator
) -> tuple[float, float]:
    """Draw the joint sizes (x1, x2) of one common shot."""
    pair = _sample_common_pairs(tails, delta, 1, rng)[0]
    return float(pair[0]), float(pair[1])


def _sample_unique_bisect(tails, delta: float, margin: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Sample unique-jump sizes by bracketed bisection on the survival."""
    t1, t2 = _check_tails(tails)
    own = (t1, t2)[margin]
    u = 1.0 - rng.random(n)
    u[u == 1.0] = 1.0 - 2.0**-53

    dec = decompose_rates(t1.rho, t2.rho, delta)
    # survival(x) <= U(x)/rho_unique, so this hi guarantees survival(hi) <= u
    hi = (math.log(own.rho / dec.rho_unique[margin]) - np.log(u)) / own.eta
    lo = np.zeros(n)
    s_hi = unique_survival(hi, margin, tails, delta)
    if np.any(s_hi > u):
        k = int(np.argmax(s_hi - u))
        raise InversionError(
            f"unique-size bracket failed on margin {margin}: "
            f"survival({hi[k]:.6g}) = {s_hi[k]:.6g} > target {u[k]:.6g}"
        )
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        too_high = unique_survival(mid, margin, tails, delta) > u
        lo = np.where(too_high, mid, lo)
        hi = np.where(too_high, hi, mid)
    out = 0.5 * (lo + hi)
    out[out <= 0.0] = np.nextafter(0.0, 1.0)
    return out


def _sample_unique(tails, delta: float, margin: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Sample unique-jump sizes.

    The unique density is Exp(eta) thinned by 1 - C_1(U(x), rho_other), which
    is largest at x = 0, so rejection from Exp(eta) has acceptance
    rho_unique / (rho * (1 - C_1(rho_own, rho_other))).  When that corner
    degenerates (near-comonotonic rates) fall back to bisection.
    """
    t1, t2 = _check_tails(tails)
    own, other = (t1, t2) if margin == 0 else (t2, t1)
    dec = decompose_rates(t1.rho, t2.rho, delta)
    log_ratio0 = _log1mexp(_log_clayton_d1(math.log(own.rho), math.log(other.rho), delta))
    acceptance = dec.rho_unique[margin] / (own.rho * math.exp(log_ratio0))
    if acceptance < 0.2:
        return _sample_unique_bisect(tails, delta, margin, n, rng)

    cexp = (1.0 + delta) / delta
    log_rate_ratio = math.log(own.rho / other.rho)
    ratio0 = math.exp(log_ratio0)  # 1 - C_1(rho_own, rho_other)

    out = np.empty(n)
    buf = np.empty(0)
    filled = 0
    while filled < n:
        m = max(int((n - filled) / acceptance * 1.1) + 16, 64)
        if buf.size < m:
            buf = np.empty(m)
        # accept x with probability (1 - C_1(U(x), rho_other)) / ratio0;
        # all in-place: buf ends as -(1 - C_1) and the test flips the sign
        x = rng.exponential(1.0 / own.eta, size=m)
        b = buf[:m]
        np.multiply(x, -delta * own.eta, out=b)
        b += delta * log_rate_ratio
        np.minimum(b, 700.0, out=b)
        np.exp(b, out=b)
        np.log1p(b, out=b)
        b *= -cexp
        np.expm1(b, out=b)
        u = rng.random(m)
        u *= -ratio0
        got = x[np.greater(u, b)]
        take = min(got.size, n - filled)
        out[filled : filled + take] = got[:take]
        filled += take
    out[out <= 0.0] = np.nextafter(0.0, 1.0)
    return out


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------

def mean_common_cross_product(tails: Sequence[MarginalTail], delta: float) -> float:
    """E[X1 X2] of a common pair, via the survival integral identity
    E[X1 X2] = integral of P(X1 > x, X2 > y) over the positive quadrant."""
    t1, t2 = _check_tails(tails)
    log_rc = _log_clayton(math.log(t1.rho), math.log(t2.rho), delta)

    def survival(y, x):
        return float(np.exp(_log_clayton(t1.log_value(x), t2.log_value(y), delta) - log_rc))

    val, _ = integrate.dblquad(survival, 0.0, np.inf, 0.0, np.inf, epsabs=1e-10, epsrel=1e-9)
    return val


def mean_common_marginal(margin: int, tails: Sequence[MarginalTail], delta: float) -> float:
    """E[X_margin] of a common pair via its survival function."""
    val, _ = integrate.quad(
        lambda x: float(common_marginal_survival(x, margin, tails, delta)),
        0.0,
        np.inf,
        epsabs=1e-12,
        epsrel=1e-10,
    )
    return val


# ---------------------------------------------------------------------------
# bundled size models used by simulation, filtering and calibration
# ---------------------------------------------------------------------------

# scalar (math-module) twins of the log helpers; the filter's inner loop
# calls these hundreds of thousands of times per run
_LN2 = math.log(2.0)


def _sp_scalar(z: float) -> float:
    if z <= 0.0:
        return math.log1p(math.exp(z))
    return z + math.log1p(math.exp(-z))


def _l1me_scalar(a: float) -> float:
    if a > -_LN2:
        return math.log(-math.expm1(min(a, -1e-320)))
    return math.log1p(-math.exp(a))


def _lse_scalar(a: float, b: float) -> float:
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


class ClaytonDependence:
    """Clayton-coupled bivariate jump-size model.

    Exposes the simulation interface (rate decomposition plus samplers) and
    the density interface used by the filter (sample_sizes / log_density of
    the pattern-mixing size law f_X).  Scalar paths avoid numpy overhead.
    """

    def __init__(self, tails: Sequence[MarginalTail], delta: float):
        t1, t2 = _check_tails(tails)
        ClaytonParam(delta)
        self.tails: tuple[MarginalTail, MarginalTail] = (t1, t2)
        self.delta = float(delta)
        dec = decompose_rates(t1.rho, t2.rho, delta)
        self.decomposition = dec
        self.rho_common = dec.rho_common
        self.rho_unique = dec.rho_unique
        self.rho_total = dec.rho_total
        self.n_margins = 2
        d = self.delta
        self._log_rho_total = math.log(dec.rho_total)
        self._log_rho = (math.log(t1.rho), math.log(t2.rho))
        self._log_rate_deriv = (math.log(t1.rho * t1.eta), math.log(t2.rho * t2.eta))
        self._etas = (t1.eta, t2.eta)
        self._cexp = (1.0 + d) / d
        self._c12_const = math.log1p(d)
        self._c12_exp = (1.0 + 2.0 * d) / d
        self._log_rc = _log_clayton(self._log_rho[0], self._log_rho[1], d)
        # rejection-envelope constants for unique-size sampling
        self._uq_log_ratio0 = tuple(
            _l1me_scalar(-self._cexp * _sp_scalar(d * (self._log_rho[g] - self._log_rho[1 - g])))
            for g in range(2)
        )
        self._uq_acceptance = tuple(
            dec.rho_unique[g] / ((t1, t2)[g].rho * math.exp(self._uq_log_ratio0[g]))
            for g in range(2)
        )
        # pattern thresholds for cumulative inverse sampling
        self._p_u0 = dec.rho_unique[0] / dec.rho_total
        self._p_u01 = (dec.rho_unique[0] + dec.rho_unique[1]) / dec.rho_total

    # -- simulation interface -------------------------------------------
    def sample_common_sizes(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return _sample_common_pairs(self.tails, self.delta, n, rng)

    def sample_unique_sizes(self, margin: int, n: int, rng: np.random.Generator) -> np.ndarray:
        return _sample_unique(self.tails, self.delta, margin, n, rng)

    # -- scalar samplers ---------------------------------------------------
    def _one_unique(self, margin: int, rng: np.random.Generator) -> float:
        if self._uq_acceptance[margin] < 0.2:
            return float(_sample_unique_bisect(self.tails, self.delta, margin, 1, rng)[0])
        eta = self._etas[margin]
        lr_own = self._log_rho[margin]
        lr_other = self._log_rho[1 - margin]
        d = self.delta
        while True:
            x = rng.exponential(1.0 / eta)
            if x <= 0.0:
                continue
            log_thin = (
                _l1me_scalar(-self._cexp * _sp_scalar(d * (lr_own - eta * x - lr_other)))
                - self._uq_log_ratio0[margin]
            )
            if math.log(rng.random() + 5e-324) < log_thin:
                return x

    def _one_common(self, rng: np.random.Generator) -> tuple[float, float]:
        d = self.delta
        lr1, lr2 = self._log_rho
        eta1, eta2 = self._etas
        while True:
            u = 1.0 - rng.random()
            v = 1.0 - rng.random()
            log_urc = math.log(u) + self._log_rc
            log_u1 = log_urc - _l1me_scalar(d * (log_urc - lr2)) / d
            x1 = (lr1 - log_u1) / eta1
            log_ab = _lse_scalar(-d * log_u1, -d * lr2)
            z = log_ab + (d / (1.0 + d)) * (-math.log(v)) + d * log_u1
            if z <= 0.693:
                log_t = -d * log_u1 + math.log(math.expm1(max(z, 5e-324)))
            else:
                log_t = -d * log_u1 + z + math.log1p(-math.exp(-z))
            x2 = (lr2 + log_t / d) / eta2
            if x1 > 0.0 and x2 > 0.0:
                return x1, x2

    # -- filter interface ------------------------------------------------
    def sample_sizes(self, rng: np.random.Generator) -> tuple[float, float]:
        u = rng.random()
        if u < self._p_u0:
            return (self._one_unique(0, rng), 0.0)
        if u < self._p_u01:
            return (0.0, self._one_unique(1, rng))
        return self._one_common(rng)

    def log_density(self, sizes) -> float:
        x1, x2 = float(sizes[0]), float(sizes[1])
        d = self.delta
        if x1 > 0.0 and x2 > 0.0:
            lu1 = self._log_rho[0] - self._etas[0] * x1
            lu2 = self._log_rho[1] - self._etas[1] * x2
            return (
                self._c12_const
                - self._c12_exp * _lse_scalar(-d * lu1, -d * lu2)
                - (1.0 + d) * (lu1 + lu2)
                + self._log_rate_deriv[0]
                - self._etas[0] * x1
                + self._log_rate_deriv[1]
                - self._etas[1] * x2
                - self._log_rho_total
            )
        if x1 > 0.0 or x2 > 0.0:
            g = 0 if x1 > 0.0 else 1
            x = x1 if g == 0 else x2
            lu = self._log_rho[g] - self._etas[g] * x
            log_d1 = -self._cexp * _sp_scalar(d * (lu - self._log_rho[1 - g]))
            return (
                self._log_rate_deriv[g]
                - self._etas[g] * x
                + _l1me_scalar(log_d1)
                - self._log_rho_total
            )
        raise ValueError("all-zero jump sizes have no density")

    def log_density_batch(self, sizes: np.ndarray) -> np.ndarray:
        sizes = np.asarray(sizes, dtype=float)
        out = np.empty(sizes.shape[0])
        both = (sizes[:, 0] > 0.0) & (sizes[:, 1] > 0.0)
        if np.any(both):
            out[both] = _log_common_pair_rate_density(
                sizes[both, 0], sizes[both, 1], self.tails, self.delta
            )
        for g in range(2):
            only = (sizes[:, g] > 0.0) & ~both
            if np.any(only):
                out[only] = _log_unique_rate_density(sizes[only, g], g, self.tails, self.delta)
        return out - self._log_rho_total


class UnivariateExponentialSizes:
    """Single-margin size model: every shot carries an Exp(eta) size."""

    def __init__(self, rho: float, eta: float):
        if rho <= 0.0 or eta <= 0.0:
            raise ValueError("rho and eta must be > 0")
        self.rho = float(rho)
        self.eta = float(eta)
        self.n_margins = 1
        self.rho_common = 0.0
        self.rho_unique = (self.rho,)
        self.rho_total = self.rho
        self._log_eta = math.log(eta)

    def sample_common_sizes(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise RuntimeError("a univariate model has no common shots")

    def sample_unique_sizes(self, margin: int, n: int, rng: np.random.Generator) -> np.ndarray:
        if margin != 0:
            raise ValueError("univariate model has a single margin")
        return rng.exponential(1.0 / self.eta, size=n)

    def sample_sizes(self, rng: np.random.Generator) -> tuple[float]:
        return (rng.exponential(1.0 / self.eta),)

    def log_density(self, sizes) -> float:
        x = float(sizes[0])
        if x <= 0.0:
            raise ValueError("size must be > 0")
        return self._log_eta - self.eta * x

    def log_density_batch(self, sizes: np.ndarray) -> np.ndarray:
        return self._log_eta - self.eta * np.asarray(sizes, dtype=float)[:, 0]
