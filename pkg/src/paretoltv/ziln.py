"""Zero-inflated lognormal distribution: density, NLL loss and predictions.

The distribution mixes a point mass ``pi`` at zero with a lognormal over
positive values.  Raw model outputs are unconstrained; ``pi`` is obtained
through a sigmoid and the scale through softplus with a 1e-6 floor so the
NLL gradient stays bounded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

_SIGMA_FLOOR = 1e-6
_LOG_2PI = math.log(2.0 * math.pi)


def _np_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _np_softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


@dataclass(frozen=True)
class ZilnParams:
    """Raw head outputs for one prediction."""

    p_raw: float
    mu: float
    sigma_raw: float

    @property
    def pi(self):
        return float(_np_sigmoid(self.p_raw))

    @property
    def sigma(self):
        return float(_np_softplus(self.sigma_raw) + _SIGMA_FLOOR)


def ziln_pdf(params, y):
    """Density (y > 0) or point mass (y == 0) of the mixture."""
    y = float(y)
    if y < 0:
        raise ValueError("y must be non-negative")
    pi, mu, sigma = params.pi, params.mu, params.sigma
    if y == 0.0:
        return pi
    z = (math.log(y) - mu) / sigma
    return (1.0 - pi) * math.exp(-0.5 * z * z) / (y * sigma * math.sqrt(2.0 * math.pi))


def ziln_nll(params, y):
    """Exact negative log of ``ziln_pdf`` (finite for pi in (0, 1))."""
    y = float(y)
    if y < 0:
        raise ValueError("y must be non-negative")
    pi, mu, sigma = params.pi, params.mu, params.sigma
    if y == 0.0:
        return float(_np_softplus(np.array(-params.p_raw)))  # -log(pi)
    z = (math.log(y) - mu) / sigma
    return float(_np_softplus(np.array(params.p_raw))  # -log(1 - pi)
                 + math.log(y) + math.log(sigma) + 0.5 * _LOG_2PI + 0.5 * z * z)


def ziln_predict(params):
    """(expected_value, purchase_prob) for the mixture."""
    pi, mu, sigma = params.pi, params.mu, params.sigma
    p_buy = 1.0 - pi
    return p_buy * math.exp(mu + 0.5 * sigma * sigma), p_buy


def expected_value(p_raw, mu, sigma_raw):
    """Vectorized mixture mean (1 - pi) * exp(mu + sigma^2 / 2)."""
    pi = _np_sigmoid(p_raw)
    sigma = _np_softplus(sigma_raw) + _SIGMA_FLOOR
    return (1.0 - pi) * np.exp(np.asarray(mu, dtype=np.float64) + 0.5 * sigma * sigma)


def purchase_prob(p_raw):
    return 1.0 - _np_sigmoid(p_raw)


def nll_node(p_raw, mu, sigma_raw, y):
    """Mean ZILN NLL as an autodiff node.

    ``p_raw``, ``mu`` and ``sigma_raw`` are Vars of shape (batch,);
    ``y`` is a constant array of non-negative labels.
    """
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0):
        raise ValueError("y must be non-negative")
    pos = (y > 0).astype(np.float64)
    safe_log_y = np.where(y > 0, np.log(np.maximum(y, 1e-300)), 0.0)

    zero_term = ad.softplus(ad.neg(p_raw))         # -log(pi)
    sigma = ad.add(ad.softplus(sigma_raw), _SIGMA_FLOOR)
    resid = ad.sub(ad.const(safe_log_y), mu)
    inv_two_var = ad.mul(ad.exp(ad.mul(ad.log(sigma), -2.0)), 0.5)
    pos_term = ad.add(
        ad.add(ad.softplus(p_raw), ad.const(safe_log_y + 0.5 * _LOG_2PI)),
        ad.add(ad.log(sigma), ad.mul(ad.square(resid), inv_two_var)),
    )
    nll = ad.add(ad.mul(zero_term, 1.0 - pos), ad.mul(pos_term, pos))
    return ad.reduce_mean(nll)


def squared_error_node(p_raw, mu, sigma_raw, y):
    """Mean squared error of the mixture mean against labels, as a node."""
    y = np.asarray(y, dtype=np.float64)
    pi = ad.sigmoid(p_raw)
    sigma = ad.add(ad.softplus(sigma_raw), _SIGMA_FLOOR)
    pred = ad.mul(ad.sub(ad.const(np.ones_like(y)), pi),
                  ad.exp(ad.add(mu, ad.mul(ad.square(sigma), 0.5))))
    return ad.reduce_mean(ad.square(ad.sub(pred, ad.const(y))))
