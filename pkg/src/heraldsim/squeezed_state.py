"""
Closed-form photon statistics of a multimode twin-beam (two-mode squeezed
vacuum) pair source.

The source is a product of independent signal/idler mode pairs. Mode ``k``
carries a thermal (Bose-Einstein) pair number with mean ``mu_k``; the
squeezing parameter of that mode follows from ``lambda_k**2 = mu_k / (1 + mu_k)``.
Everything the rest of the package needs from the quantum state is here:
mean photon number, effective Schmidt number, the low-gain pair
probabilities, the three analytic g2 functions, and exact click
probabilities for threshold detectors (used as a Monte-Carlo oracle).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    AllModesEmpty,
    InvalidSchmidtNumber,
    NonpositivePower,
    ZeroHeraldEfficiency,
    ZeroMeanPhoton,
)

# n <= 2 truncation of the state is flagged beyond this single-pair probability
TRUNCATION_P1_LIMIT = 0.1


class TruncationWarning(UserWarning):
    """The single/double-pair truncation is no longer a good approximation."""


@dataclass(frozen=True)
class SqueezedSourceModel:
    """Per-Schmidt-mode mean pair numbers of the source, one entry per mode."""

    mode_means: tuple[float, ...]

    def __post_init__(self):
        means = tuple(float(m) for m in np.atleast_1d(np.asarray(self.mode_means, dtype=float)))
        if any(not math.isfinite(m) or m < 0 for m in means):
            raise ValueError(f"mode means must be finite and >= 0, got {means}")
        object.__setattr__(self, "mode_means", means)

    @classmethod
    def from_schmidt(cls, mean_n: float, k: float) -> "SqueezedSourceModel":
        """Smallest mode set with total mean ``mean_n`` and effective Schmidt number ``k``.

        Integer ``k`` gives ``k`` equal modes. Non-integer ``k`` uses
        ``floor(k)`` equal modes plus one weaker mode whose weight is solved
        so that ``(sum mu)**2 / sum mu**2 == k`` exactly.
        """
        if k < 1:
            raise InvalidSchmidtNumber(f"Schmidt number must be >= 1, got {k}")
        if mean_n < 0:
            raise ValueError(f"mean photon number must be >= 0, got {mean_n}")
        m = int(math.floor(k + 1e-12))
        frac = k - m
        if frac < 1e-12:
            weights = np.ones(m)
        else:
            # (m + x)^2 = k (m + x^2), smaller root keeps x in (0, 1)
            x = (m - math.sqrt(m * m - (k - 1.0) * m * (k - m))) / (k - 1.0)
            weights = np.append(np.ones(m), x)
        return cls.from_weights(mean_n, weights)

    @classmethod
    def from_weights(cls, mean_n: float, weights: Sequence[float]) -> "SqueezedSourceModel":
        """Distribute ``mean_n`` over modes in proportion to ``weights``.

        With Schmidt weights of a joint spectral amplitude this is the
        low-gain source: each mode's mean pair number is proportional to its
        Schmidt weight.
        """
        w = np.asarray(weights, dtype=float)
        if w.size == 0 or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be non-negative with a positive sum")
        return cls(tuple(mean_n * w / w.sum()))

    @property
    def means(self) -> np.ndarray:
        return np.asarray(self.mode_means, dtype=float)

    @property
    def mean_n(self) -> float:
        return mean_photon_number(self)

    @property
    def schmidt_k(self) -> float:
        return effective_schmidt_number(self)

    @property
    def squeezing(self) -> np.ndarray:
        """Per-mode squeezing parameter squared, ``mu / (1 + mu)``."""
        mu = self.means
        return mu / (1.0 + mu)

    def scaled(self, factor: float) -> "SqueezedSourceModel":
        if factor < 0:
            raise ValueError("scale factor must be >= 0")
        return SqueezedSourceModel(tuple(self.means * factor))


@dataclass(frozen=True)
class AnalyticPrediction:
    """Closed-form expectations for one operating point of the source.

    ``g2_heralded`` is the exact low-gain heralded autocorrelation for the
    stated herald efficiency (the vanishing-efficiency limit when
    ``eta_h`` is None); ``g2_heralded_approx`` is the ``2 <n> g2_auto``
    shortcut used to estimate it from unheralded data.
    """

    mean_n: float
    schmidt_k: float
    g2_cross: float
    g2_auto: float
    g2_heralded: float
    g2_heralded_approx: float
    p1_pair: float
    p2_pair: float
    power_mw: float | None = None
    eta_h: float | None = None

    @property
    def small_n_regime(self) -> bool:
        return self.mean_n < 0.1 * self.schmidt_k


def mean_photon_number(model: SqueezedSourceModel) -> float:
    return float(np.sum(model.means))


def effective_schmidt_number(model: SqueezedSourceModel) -> float:
    mu = model.means
    s2 = float(np.sum(mu * mu))
    if s2 == 0.0:
        raise AllModesEmpty("every mode mean is zero; Schmidt number undefined")
    s = float(np.sum(mu))
    return s * s / s2


def _check_k(k):
    if not k >= 1:
        raise InvalidSchmidtNumber(f"Schmidt number must be >= 1, got {k}")


def squeezing_from_mean(mean_n: float, k: float) -> float:
    """Squeezing parameter squared of each of ``k`` equal modes holding ``mean_n`` in total."""
    _check_k(k)
    if mean_n < 0:
        raise ValueError(f"mean photon number must be >= 0, got {mean_n}")
    if math.isinf(mean_n):
        return 1.0
    return mean_n / (mean_n + k)


def mean_from_squeezing(lambda2: float, k: float) -> float:
    """Inverse of :func:`squeezing_from_mean`."""
    _check_k(k)
    if not 0 <= lambda2 < 1:
        raise ValueError(f"lambda^2 must be in [0, 1), got {lambda2}")
    return k * lambda2 / (1.0 - lambda2)


def pair_probabilities(lambda2: float, k: float) -> tuple[float, float]:
    """Leading-order single- and double-pair emission probabilities.

    Returns ``(k * lambda2, k * (k + 1) / 2 * lambda2**2)``. Issues a
    :class:`TruncationWarning` when the single-pair probability exceeds
    0.1, where dropping three-pair terms stops being safe.
    """
    _check_k(k)
    if not 0 <= lambda2 < 1:
        raise ValueError(f"lambda^2 must be in [0, 1), got {lambda2}")
    p1 = k * lambda2
    p2 = k * (k + 1.0) / 2.0 * lambda2 * lambda2
    if p1 > TRUNCATION_P1_LIMIT:
        warnings.warn(
            f"single-pair probability {p1:.3g} > {TRUNCATION_P1_LIMIT}: "
            "n <= 2 truncation is unreliable",
            TruncationWarning,
            stacklevel=2,
        )
    return p1, p2


def g2_auto_analytic(k: float) -> float:
    _check_k(k)
    return 1.0 + 1.0 / k


def g2_cross_analytic(mean_n: float) -> float:
    """Signal-idler cross-correlation ``1 + 1/<n>`` (so CAR = 1/<n>)."""
    if not mean_n > 0:
        raise ZeroMeanPhoton("cross-correlation diverges for <n> = 0")
    return 1.0 + 1.0 / mean_n


def mean_photon_from_g2_cross(g2_cross: float, exact: bool = False) -> float:
    """Mean photon number from a measured cross-correlation.

    The default is the ``1/g2`` shortcut, good only when ``g2 >> 1``;
    ``exact=True`` inverts ``g2 = 1 + 1/<n>`` instead.
    """
    if exact:
        return 1.0 / (g2_cross - 1.0)
    return 1.0 / g2_cross


def g2_heralded_analytic(lambda2: float, k: float, eta_h: float | None) -> float:
    """Heralded autocorrelation with a non-number-resolving herald of efficiency ``eta_h``.

    ``eta_h=None`` returns the vanishing-efficiency limit ``2 (k + 1) lambda2``.
    At ``eta_h = 1`` the value is exactly half that limit.
    """
    _check_k(k)
    if not 0 <= lambda2 < 1:
        raise ValueError(f"lambda^2 must be in [0, 1), got {lambda2}")
    if eta_h is None:
        return 2.0 * (k + 1.0) * lambda2
    if eta_h == 0:
        raise ZeroHeraldEfficiency("herald efficiency must be > 0; pass None for the limit")
    if not 0 < eta_h <= 1:
        raise ValueError(f"herald efficiency must be in (0, 1], got {eta_h}")
    # 1 - (1 - eta)^2 = eta (2 - eta)
    return (k + 1.0) * lambda2 * (2.0 - eta_h)


def g2_heralded_from_unheralded(mean_n: float, g2_auto: float) -> float:
    if mean_n < 0:
        raise ValueError(f"mean photon number must be >= 0, got {mean_n}")
    if not 1 <= g2_auto <= 2:
        raise ValueError(f"g2_auto must be in [1, 2], got {g2_auto}")
    return 2.0 * mean_n * g2_auto


def analytic_prediction(
    model: SqueezedSourceModel, eta_h: float | None = None, power_mw: float | None = None
) -> AnalyticPrediction:
    n = mean_photon_number(model)
    k = effective_schmidt_number(model)
    lam2 = squeezing_from_mean(n, k)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        p1, p2 = pair_probabilities(lam2, k)
    g2a = g2_auto_analytic(k)
    return AnalyticPrediction(
        mean_n=n,
        schmidt_k=k,
        g2_cross=g2_cross_analytic(n),
        g2_auto=g2a,
        g2_heralded=g2_heralded_analytic(lam2, k, eta_h),
        g2_heralded_approx=g2_heralded_from_unheralded(n, g2a),
        p1_pair=p1,
        p2_pair=p2,
        power_mw=power_mw,
        eta_h=eta_h,
    )


def power_sweep(
    model_at_ref: SqueezedSourceModel,
    ref_power_mw: float,
    powers_mw: Sequence[float],
    eta_h: float | None = None,
) -> list[AnalyticPrediction]:
    """Predictions over pump powers, with every mode mean scaled by ``P / P_ref``.

    Pair generation is linear in pump power in the low-gain regime, so the
    Schmidt number is unchanged along the sweep.
    """
    if not ref_power_mw > 0:
        raise NonpositivePower(f"reference power must be > 0, got {ref_power_mw}")
    out = []
    for p in powers_mw:
        if not p > 0:
            raise NonpositivePower(f"pump power must be > 0, got {p}")
        out.append(analytic_prediction(model_at_ref.scaled(p / ref_power_mw), eta_h, float(p)))
    return out


# ---------------------------------------------------------------------------
# exact threshold-detector click statistics
# ---------------------------------------------------------------------------

def pair_number_pgf(model: SqueezedSourceModel, z):
    """Probability generating function ``E[z**N]`` of the total pair number."""
    mu = model.means
    z = np.asarray(z, dtype=float)
    return np.prod(1.0 / (1.0 + np.multiply.outer(1.0 - z, mu)), axis=-1)


def click_probabilities(
    model: SqueezedSourceModel,
    eta_h: float,
    eta_1: float,
    eta_2: float,
    ratio: float,
    dark: Sequence[float] = (0.0, 0.0, 0.0),
) -> dict[str, float]:
    """Exact per-pulse click probabilities for threshold detectors H, 1 and 2.

    Each idler photon reaches the herald detector with probability
    ``eta_h``; each signal photon goes to port 1 with probability ``ratio``
    and is then detected with ``eta_1`` (port 2: ``1 - ratio``, ``eta_2``).
    ``dark`` holds independent per-pulse dark-click probabilities for H, 1, 2.
    Returned keys: ``h, 1, 2, 1h, 2h, 12, 12h``.
    """
    d_h, d_1, d_2 = (float(x) for x in dark)
    a1 = 1.0 - ratio * eta_1  # per-photon survival of "no click on 1"
    a2 = 1.0 - (1.0 - ratio) * eta_2
    a12 = 1.0 - ratio * eta_1 - (1.0 - ratio) * eta_2
    ah = 1.0 - eta_h
    G = lambda z: float(pair_number_pgf(model, z))  # noqa: E731
    nd_h, nd_1, nd_2 = 1.0 - d_h, 1.0 - d_1, 1.0 - d_2

    # probabilities that every listed channel stays silent
    q = {
        "h": nd_h * G(ah),
        "1": nd_1 * G(a1),
        "2": nd_2 * G(a2),
        "1h": nd_h * nd_1 * G(a1 * ah),
        "2h": nd_h * nd_2 * G(a2 * ah),
        "12": nd_1 * nd_2 * G(a12),
        "12h": nd_h * nd_1 * nd_2 * G(a12 * ah),
    }
    p = {
        "h": 1.0 - q["h"],
        "1": 1.0 - q["1"],
        "2": 1.0 - q["2"],
    }
    p["1h"] = 1.0 - q["1"] - q["h"] + q["1h"]
    p["2h"] = 1.0 - q["2"] - q["h"] + q["2h"]
    p["12"] = 1.0 - q["1"] - q["2"] + q["12"]
    p["12h"] = 1.0 - q["1"] - q["2"] - q["h"] + q["12"] + q["1h"] + q["2h"] - q["12h"]
    return p


def expected_estimators(
    model: SqueezedSourceModel,
    eta_h: float,
    eta_1: float,
    eta_2: float,
    ratio: float,
    dark: Sequence[float] = (0.0, 0.0, 0.0),
) -> dict[str, float]:
    """Large-sample limits of the count-based g2 estimators for threshold detectors.

    The cross-correlation pools both output ports, as the estimator does.
    """
    p = click_probabilities(model, eta_h, eta_1, eta_2, ratio, dark)
    p1 = 0.5 * (p["1"] + p["2"])
    return {
        "g2_cross": (p["1h"] + p["2h"]) / (p["h"] * (p["1"] + p["2"])),
        "g2_auto": p["12"] / (p1 * p1),
        "g2_heralded": p["12h"] * p["h"] / (p["1h"] * p["2h"]),
        **{f"p_{key}": val for key, val in p.items()},
    }
