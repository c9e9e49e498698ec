"""KL-proximal operators of the target-marginal datafit terms.

Every operator returns, elementwise, the minimizer over ``q > 0`` of

    lam * L(q | y) + eps * (q log(q / s) - q + s)

and is used as the target update of the scaling iterations. ``lam = 0`` is the
identity for every soft datafit.
"""
import numpy as np

from .core import Datafit, parse_datafit
from .exceptions import DimensionMismatch, InvalidInputError
from .lambertw import lambert_w0_exp


def _prepare(s, y, lam=0.0, eps=1.0):
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    if s.shape != y.shape:
        raise DimensionMismatch(f"s{s.shape} and y{y.shape} differ in shape")
    if lam < 0 or not eps > 0:
        raise InvalidInputError(f"need lam >= 0 and eps > 0, got lam={lam}, eps={eps}")
    return s, y


def prox_equality(s, y):
    s, y = _prepare(s, y)
    return y.copy()


def prox_kl(s, y, lam, eps):
    """``s**(eps/(eps+lam)) * y**(lam/(eps+lam))``."""
    s, y = _prepare(s, y, lam, eps)
    if lam == 0:
        return s.copy()
    a = eps / (eps + lam)
    return np.power(s, a) * np.power(y, 1.0 - a)


def prox_tv(s, y, lam, eps):
    s, y = _prepare(s, y, lam, eps)
    if lam == 0:
        return s.copy()
    # exp(+-lam/eps) may overflow to inf or underflow to 0; s > 0 keeps the products well defined
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        hi = s * np.exp(lam / eps)
        lo = s * np.exp(-lam / eps)
    out = np.minimum(hi, np.maximum(lo, y))
    return np.where(s > 0, out, 0.0)


def prox_l2(s, y, lam, eps):
    """Squared-error datafit: ``(eps/lam) W0((lam/eps) s exp((lam/eps) y))``.

    The Lambert argument is formed in log space and routed through the
    overflow-safe evaluation once its log exceeds 300.
    """
    s, y = _prepare(s, y, lam, eps)
    if lam == 0:
        return s.copy()
    t = lam / eps
    out = np.zeros_like(s)
    pos = s > 0
    sp, yp = s[pos], y[pos]
    log_arg = np.log(t) + np.log(sp) + t * yp
    W = lambert_w0_exp(log_arg)
    # W e^W = t s e^{t y}  =>  W / t = s exp(t y - W); the latter keeps
    # precision when W underflows, the former when W is large
    small = log_arg < 0
    out[pos] = np.where(small, sp * np.exp(t * yp - W), W / t)
    return out


def prox_poisson(s, y, lam, eps):
    """Negative Poisson log-likelihood datafit ``lam * sum(q - y log q)``.

    Closed form ``(lam/eps) y / W0((lam y)/(eps s) exp(lam/eps))``; evaluated as
    the equivalent ``s exp(W - lam/eps)``, which also covers ``y = 0``
    (``q = s exp(-lam/eps)``) and underflowing Lambert arguments.
    """
    s, y = _prepare(s, y, lam, eps)
    if lam == 0:
        return s.copy()
    if (y < 0).any():
        raise InvalidInputError("Poisson datafit requires y >= 0")
    t = lam / eps
    out = np.zeros_like(s)
    pos = s > 0
    sp, yp = s[pos], y[pos]
    W = np.zeros_like(sp)
    has_counts = yp > 0
    log_arg = np.log(t) + np.log(yp[has_counts]) - np.log(sp[has_counts]) + t
    W[has_counts] = lambert_w0_exp(log_arg)
    big = W > 1.0
    q = sp * np.exp(W - t)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(big, t * yp / W, q)
    out[pos] = q
    return out


_PROX = {
    Datafit.KL: prox_kl,
    Datafit.TV: prox_tv,
    Datafit.L2: prox_l2,
    Datafit.POISSON: prox_poisson,
}


def prox(datafit, s, y, lam, eps):
    """Dispatch on the datafit kind (a :class:`Datafit` or its name)."""
    kind = parse_datafit(datafit)
    if kind is Datafit.EQUALITY:
        return prox_equality(s, y)
    return _PROX[kind](s, y, lam, eps)


def datafit_value(datafit, q, y, lam):
    """``lam * L(q | y)``; the equality datafit is 0 on ``q == y`` and inf otherwise."""
    kind = parse_datafit(datafit)
    q = np.asarray(q, dtype=float)
    y = np.asarray(y, dtype=float)
    if kind is Datafit.EQUALITY:
        return 0.0 if np.array_equal(q, y) else np.inf
    if kind is Datafit.KL:
        return lam * _kl(q, y)
    if kind is Datafit.TV:
        return lam * np.abs(q - y).sum()
    if kind is Datafit.L2:
        return lam * 0.5 * np.sum((q - y) ** 2)
    # Poisson: y log q with the 0 log 0 = 0 convention
    with np.errstate(divide="ignore", invalid="ignore"):
        ylogq = np.where(y > 0, y * np.log(q), 0.0)
    return lam * np.sum(q - ylogq)


def _kl(a, b):
    """Generalized KL divergence ``sum a log(a/b) - a + b`` with ``0 log 0 = 0``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(a > 0, a * np.log(a / b), 0.0)
    return float(np.sum(t - a + b))
