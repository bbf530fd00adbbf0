"""Distance-based link model: mean and variance of the normalized rate.

The mean rate composes log-distance received power with an erf bit-error
curve; the variance grows with distance and saturates at ``var_scale``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import InvalidInputError

DEFAULT_R_MIN = 1e-4


@dataclass(frozen=True)
class ChannelParams:
    transmit_power_dbm: float = -53.0
    noise_floor_dbm: float = -70.0
    path_loss_exponent: float = 2.52
    var_scale: float = 0.2
    var_offset: float = 0.6

    def __post_init__(self):
        vals = (self.transmit_power_dbm, self.noise_floor_dbm, self.path_loss_exponent,
                self.var_scale, self.var_offset)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError("channel parameters must be finite")
        if self.path_loss_exponent <= 0:
            raise InvalidInputError("path_loss_exponent must be > 0")
        if not 0.0 <= self.var_scale <= 1.0:
            raise InvalidInputError("var_scale must lie in [0, 1]")
        if self.var_offset <= 0:
            raise InvalidInputError("var_offset must be > 0")
        if self.transmit_power_dbm <= self.noise_floor_dbm:
            raise InvalidInputError("transmit_power_dbm must exceed noise_floor_dbm")

    @property
    def power_ratio(self) -> float:
        """Linear transmit-to-noise power ratio at 1 m."""
        return 10.0 ** ((self.transmit_power_dbm - self.noise_floor_dbm) / 10.0)


@dataclass(frozen=True)
class ChannelStats:
    mean: float
    variance: float


def _distance(xi, xj) -> float:
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    if xi.shape != xj.shape or not (np.all(np.isfinite(xi)) and np.all(np.isfinite(xj))):
        raise InvalidInputError(f"positions must be finite and same shape, got {xi!r}, {xj!r}")
    # abs() makes the result bit-identical under argument swap
    return math.hypot(*np.abs(xi - xj))


def mean_rate(params: ChannelParams, d):
    """Expected normalized rate at distance(s) ``d``; 1 at d = 0, 0 at infinity."""
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        snr = params.power_ratio * np.power(d, -params.path_loss_exponent)
    out = erf(np.sqrt(snr))
    return np.where(d == 0.0, 1.0, out)


def rate_variance(params: ChannelParams, d):
    d = np.asarray(d, dtype=float)
    with np.errstate(invalid="ignore"):
        out = params.var_scale * d / (params.var_offset + d)
    # d = inf gives inf/inf
    return np.where(np.isinf(d), params.var_scale, out)


def predict_link(params: ChannelParams, xi, xj) -> ChannelStats:
    d = _distance(xi, xj)
    return ChannelStats(float(mean_rate(params, d)), float(rate_variance(params, d)))


@dataclass(frozen=True)
class LinkRates:
    """Dense n x n tables of link mean and variance.

    Diagonal entries and links whose mean falls below ``r_min`` hold zeros in
    both tables; a zero mean marks the link as unusable.
    """

    mean: np.ndarray
    variance: np.ndarray

    @property
    def n(self) -> int:
        return self.mean.shape[0]

    @property
    def usable(self) -> np.ndarray:
        return self.mean > 0.0


def link_rates(params: ChannelParams, positions, r_min: float = DEFAULT_R_MIN) -> LinkRates:
    x = np.asarray(positions, dtype=float)
    if x.ndim != 2 or not np.all(np.isfinite(x)):
        raise InvalidInputError("positions must be a finite (n, dim) array")
    diff = np.abs(x[:, None, :] - x[None, :, :])
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    mean = mean_rate(params, d)
    var = rate_variance(params, d)
    dead = np.eye(len(x), dtype=bool) | (mean < r_min)
    mean = np.where(dead, 0.0, mean)
    var = np.where(dead, 0.0, var)
    return LinkRates(mean, var)
