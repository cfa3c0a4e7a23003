"""Closed-form soliton family of  u'' + rho |u|^{p-2} u = lam u  on the line.

For frequency ``lam`` and coefficient ``rho`` the positive even solution is

    u(x) = (p lam / (2 rho))^{1/(p-2)} sech^{2/(p-2)}((p-2) sqrt(lam) x / 2).

Its mass scales like lam^{(6-p)/(2(p-2))}, so for p != 6 the frequency is fixed by
the mass mu; we parametrize by the true mass, i.e. ``int phi^2 = mu``, which gives

    lam = lam11 * rho^{2 alpha} * mu^{2 beta},   lam11 = m_p^{-2 beta},

with m_p the mass of the lam = rho = 1 profile.  At p = 6 the mass does not depend
on lam and the family is parametrized by lam instead.
"""

from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .errors import InvalidParameter, OutOfRegime, UndefinedExponent

_QUAD = dict(epsabs=0.0, epsrel=1e-13, limit=400)


def _check_p(p):
    if not (p > 2 and math.isfinite(p)):
        raise InvalidParameter(f"p must be > 2, got {p}")


def _check_rho(rho):
    if not (0 < rho <= 1):
        raise InvalidParameter(f"rho must lie in (0, 1], got {rho}")


def exponents(p):
    _check_p(p)
    if p == 6:
        raise UndefinedExponent("alpha, beta are undefined at p = 6")
    return 2.0 / (6.0 - p), (p - 2.0) / (6.0 - p)


# --- profile at frequency lam ------------------------------------------------

def profile_amplitude(p, lam, rho=1.0):
    return (p * lam / (2.0 * rho)) ** (1.0 / (p - 2.0))


def profile_rate(p, lam):
    """Argument scale k in sech^q(k x)."""
    return 0.5 * (p - 2.0) * math.sqrt(lam)


def lambda_profile(p, lam, x, rho=1.0):
    x = np.asarray(x, dtype=float)
    q = 2.0 / (p - 2.0)
    y = np.abs(profile_rate(p, lam) * x)
    # sech^q(y) = (2 e^{-y} / (1 + e^{-2y}))^q, overflow-free
    e = np.exp(-y)
    return profile_amplitude(p, lam, rho) * (2.0 * e / (1.0 + e * e)) ** q


def lambda_profile_derivative(p, lam, x, rho=1.0):
    x = np.asarray(x, dtype=float)
    k = profile_rate(p, lam)
    q = 2.0 / (p - 2.0)
    return -q * k * np.tanh(k * x) * lambda_profile(p, lam, x, rho)


@lru_cache(maxsize=None)
def unit_profile_norms_exact(p):
    """(mass, ||u'||^2, ||u||_p^p) of the lam = rho = 1 profile via Beta functions."""
    _check_p(p)
    q = 2.0 / (p - 2.0)
    a = (p / 2.0) ** q
    mass = a * q * special.beta(q, 0.5)
    lpp = (p / 2.0) ** (p / (p - 2.0)) * q * special.beta(p / (p - 2.0), 0.5)
    grad = (p - 2.0) / (2.0 * p) * lpp
    return mass, grad, lpp


_norm_lock = threading.Lock()
_norm_cache: dict = {}


def unit_profile_norms(p):
    """(mass, ||u'||^2, ||u||_p^p) of the lam = rho = 1 profile by adaptive quadrature.

    Computed once per p on [0, 40/(p-2)] using evenness, then cached.
    """
    _check_p(p)
    with _norm_lock:
        if p in _norm_cache:
            return _norm_cache[p]
        q = 2.0 / (p - 2.0)
        k = profile_rate(p, 1.0)
        # in y = k x the profile is A sech^q(y); integrate to y = 20 * ... enough for
        # e^{-2 q y} to drop far below round-off.
        ymax = max(40.0, 40.0 / q)
        amp = profile_amplitude(p, 1.0)
        sech = lambda y: 1.0 / np.cosh(y)
        m = integrate.quad(lambda y: sech(y) ** (2 * q), 0.0, ymax, **_QUAD)[0]
        g = integrate.quad(lambda y: (sech(y) ** q * np.tanh(y)) ** 2, 0.0, ymax, **_QUAD)[0]
        P = integrate.quad(lambda y: sech(y) ** (p * q), 0.0, ymax, **_QUAD)[0]
        out = (2 * amp**2 * m / k, 2 * amp**2 * q * q * k * g, 2 * amp**p * P / k)
        _norm_cache[p] = out
        return out


def mass_of_profile(p, lam, rho=1.0):
    m = unit_profile_norms(p)[0]
    return m * lam ** ((6.0 - p) / (2.0 * (p - 2.0))) * rho ** (-2.0 / (p - 2.0))


def lambda_for_mass(p, mu, rho=1.0):
    alpha, beta = exponents(p)
    return lam11(p) * rho ** (2 * alpha) * mu ** (2 * beta)


def lam11(p):
    """Frequency of the mass-1, rho = 1 soliton."""
    _, beta = exponents(p)
    return unit_profile_norms(p)[0] ** (-2.0 * beta)


def exponents_and_lambda(p, mu, rho=1.0):
    if not mu > 0:
        raise InvalidParameter(f"mu must be positive, got {mu}")
    _check_rho(rho)
    alpha, beta = exponents(p)
    return alpha, beta, lambda_for_mass(p, mu, rho)


# --- the mass-normalized family ---------------------------------------------

@dataclass(frozen=True)
class SolitonParams:
    p: float
    mu: float = 1.0
    rho: float = 1.0
    lam_p6: float = 1.0  # frequency used only on the p = 6 branch
    alpha: float = field(init=False)
    beta: float = field(init=False)
    lam: float = field(init=False)
    peak: float = field(init=False)

    def __post_init__(self):
        _check_p(self.p)
        _check_rho(self.rho)
        if self.p == 6:
            if not self.lam_p6 > 0:
                raise InvalidParameter("p = 6 branch needs lam > 0")
            a = b = math.nan
            lam = float(self.lam_p6)
            # the mass is forced by rho at p = 6
            object.__setattr__(self, "mu", mass_of_profile(6.0, lam, self.rho))
        else:
            if not self.mu > 0:
                raise InvalidParameter(f"mu must be positive, got {self.mu}")
            a, b, lam = exponents_and_lambda(self.p, self.mu, self.rho)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "peak", profile_amplitude(self.p, lam, self.rho))

    @property
    def rate(self):
        return profile_rate(self.p, self.lam)

    @property
    def theta(self):
        return theta_p(self.p)

    def to_dict(self):
        return dict(p=self.p, mu=self.mu, rho=self.rho, alpha=self.alpha, beta=self.beta,
                    lam=self.lam, peak=self.peak)


def soliton_eval(params, x):
    return lambda_profile(params.p, params.lam, x, params.rho)


def soliton_derivative(params, x):
    return lambda_profile_derivative(params.p, params.lam, x, params.rho)


def soliton_norms(params):
    """(mass, ||phi'||^2, ||phi||_p^p) from the cached unit norms and scaling."""
    p, lam, rho = params.p, params.lam, params.rho
    m, g, P = unit_profile_norms(p)
    s = lam ** (1.0 / (p - 2.0)) * rho ** (-1.0 / (p - 2.0))  # amplitude factor
    r = math.sqrt(lam)  # rate factor
    return m * s * s / r, g * s * s * r, P * s**p / r


def theta_p(p):
    if not p > 6:
        raise OutOfRegime(f"theta_p is defined for p > 6, got {p}")
    _, _, P = soliton_norms(SolitonParams(p, 1.0, 1.0))
    return (p - 6.0) / (4.0 * p) * P


def soliton_energy(p, mu, rho=1.0):
    """E_rho of the mass-mu soliton on the line, p > 6."""
    if not p > 6:
        raise OutOfRegime(f"soliton_energy needs p > 6, got {p}")
    _, beta = exponents(p)
    return theta_p(p) * rho ** (4.0 / (6.0 - p)) * mu ** (2 * beta + 1)


def line_and_halfline_levels(p, mu, rho=1.0):
    c_line = soliton_energy(p, mu, rho)
    _, beta = exponents(p)
    return c_line, 2.0 ** (2 * beta) * c_line


def critical_mass_line():
    return math.sqrt(3.0) * math.pi / 2.0


@dataclass(frozen=True)
class TailEstimate:
    value: float
    derivative: float
    in_regime: bool


def tail_asymptotics(p, mu, rho, x):
    """Leading exponential term of the soliton and its derivative for large x.

    Uses sech^q(y) ~ 2^q e^{-q y}; flags ``in_regime`` false when k x < 5.
    """
    if not p > 6:
        raise OutOfRegime("tail asymptotics implemented for p > 6")
    sp = SolitonParams(p, mu, rho)
    q = 2.0 / (p - 2.0)
    k = sp.rate
    y = k * abs(x)
    ok = y >= 5.0
    if not ok:
        warnings.warn(f"tail asymptotics used outside regime (k x = {y:.3g} < 5)")
    v = sp.peak * 2.0**q * math.exp(-q * y)
    return TailEstimate(v, -math.copysign(q * k * v, x), ok)
