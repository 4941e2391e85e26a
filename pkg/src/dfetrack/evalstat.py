"""Statistical evaluation of tracking errors against a labelling-error model.

Manual labels carry their own error; a tracker whose residuals look like
that labelling noise cannot be distinguished from a perfect tracker.  The
machinery here quantifies that: per-condition (sigma_x, sigma_y) models,
the chi-square test statistic over standardized squared errors, simulated
distance CDFs and the derived pixel thresholds, P-P plot data, CDF-based
normality checks, and error weighting by improbability.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import InvalidInputError, NumericError

# Smallest positive double; p-values beneath it are reported as 0 with the
# underflow flag instead of switching to log space.
P_UNDERFLOW = 5.0e-324


@dataclass(frozen=True)
class ErrorModel:
    """Per-condition standard deviations of the manual labelling error."""

    condition: str
    sigma_x: float
    sigma_y: float

    def __post_init__(self):
        if self.sigma_x <= 0 or self.sigma_y <= 0:
            raise InvalidInputError("error-model sigmas must be positive")


@dataclass(frozen=True)
class FrameError:
    frame: int
    dx: float
    dy: float


@dataclass(frozen=True)
class ChiSquareReport:
    statistic: float
    dof: int
    p_value: float
    underflow: bool


def load_error_models() -> dict[str, ErrorModel]:
    """Catalog of the five shipped body-part / motion conditions."""
    raw = json.loads(
        resources.files("dfetrack").joinpath("data/error_models.json").read_text()
    )
    return {
        name: ErrorModel(condition=name, sigma_x=v["sigma_x"], sigma_y=v["sigma_y"])
        for name, v in raw.items()
    }


def standardized_squared_error(err: FrameError, model: ErrorModel) -> float:
    """dx^2/sigma_x^2 + dy^2/sigma_y^2; chi-square(2) under the null."""
    return (err.dx / model.sigma_x) ** 2 + (err.dy / model.sigma_y) ** 2


def chi2_statistic(errors: list[FrameError], model: ErrorModel) -> ChiSquareReport:
    """Sum of standardized squared errors tested on chi-square(2n)."""
    if not errors:
        raise InvalidInputError("need at least one frame error")
    stat = math.fsum(standardized_squared_error(e, model) for e in errors)
    dof = 2 * len(errors)
    p = chi2_sf(stat, dof)
    return ChiSquareReport(
        statistic=stat, dof=dof, p_value=p, underflow=(p < P_UNDERFLOW)
    )


# ---------------------------------------------------------------------------
# Regularized incomplete gamma: series for x < a + 1, continued fraction
# otherwise.  Covers the full dof range used here (2 to ~520).

_ITMAX = 500
_EPS = 1e-15
_FPMIN = 1e-300


def _gamma_series(a: float, x: float) -> float:
    """Lower regularized P(a, x) by power series; valid for x < a + 1."""
    if x <= 0.0:
        return 0.0
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(_ITMAX):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    log_pref = -x + a * math.log(x) - math.lgamma(a)
    return total * math.exp(log_pref)


def _gamma_cf(a: float, x: float) -> float:
    """Upper regularized Q(a, x) by Lentz continued fraction; x >= a + 1."""
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _ITMAX + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    log_pref = -x + a * math.log(x) - math.lgamma(a)
    return math.exp(log_pref) * h


def _gammainc_lower(a: float, x: float) -> float:
    if x < 0.0 or a <= 0.0:
        raise InvalidInputError("incomplete gamma needs x >= 0 and a > 0")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cf(a, x)


def _gammainc_upper(a: float, x: float) -> float:
    if x < 0.0 or a <= 0.0:
        raise InvalidInputError("incomplete gamma needs x >= 0 and a > 0")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def chi2_cdf(x: float, k: int) -> float:
    """P(chi-square with k dof <= x)."""
    if k < 1:
        raise InvalidInputError(f"dof must be >= 1, got {k}")
    if x < 0:
        raise InvalidInputError(f"chi-square argument must be >= 0, got {x}")
    return _gammainc_lower(k / 2.0, x / 2.0)


def chi2_sf(x: float, k: int) -> float:
    """Survival function 1 - CDF, computed directly so tiny tails keep
    precision until they underflow to 0."""
    if k < 1:
        raise InvalidInputError(f"dof must be >= 1, got {k}")
    if x < 0:
        raise InvalidInputError(f"chi-square argument must be >= 0, got {x}")
    return _gammainc_upper(k / 2.0, x / 2.0)


def chi2_inv(p: float, k: int) -> float:
    """Inverse CDF by bracket expansion and bisection."""
    if not 0.0 < p < 1.0:
        raise InvalidInputError(f"probability must lie in (0, 1), got {p}")
    if k < 1:
        raise InvalidInputError(f"dof must be >= 1, got {k}")
    lo, hi = 0.0, float(k) + 10.0
    while chi2_cdf(hi, k) < p:
        hi *= 2.0
        if hi > 1e12:
            raise NumericError("chi2_inv bracket expansion failed")
    for _ in range(500):
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, k) < p:
            lo = mid
        else:
            hi = mid
        # Relative stop keeps tiny quantiles (small p at low dof) accurate.
        if lo > 0.0 and hi - lo <= 1e-14 * lo:
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Simulated distance distribution under a labelling-error model.

@dataclass(frozen=True)
class EmpiricalCdf:
    """Sorted-sample CDF with interpolated quantiles."""

    samples: np.ndarray  # sorted ascending

    @property
    def n(self) -> int:
        return len(self.samples)

    def cdf(self, x: float) -> float:
        return float(np.searchsorted(self.samples, x, side="right")) / self.n

    def quantile(self, q: float) -> float:
        if not 0.0 <= q <= 1.0:
            raise InvalidInputError(f"quantile level must be in [0, 1], got {q}")
        h = q * (self.n - 1)
        lo = int(math.floor(h))
        hi = min(lo + 1, self.n - 1)
        frac = h - lo
        return float(self.samples[lo] * (1.0 - frac) + self.samples[hi] * frac)

    def quantile_stderr(self, q: float) -> float:
        """Delta-method Monte-Carlo standard error of the q-quantile."""
        dq = max(min(0.25 * min(q, 1.0 - q), 0.01), 4.0 / self.n)
        # Slope of the quantile function, i.e. 1/density at the quantile.
        slope = (self.quantile(min(q + dq, 1.0)) - self.quantile(max(q - dq, 0.0))) / (2.0 * dq)
        if slope <= 0:
            return float("inf")
        return math.sqrt(q * (1.0 - q) / self.n) * slope


def simulate_distance_cdf(model: ErrorModel, samples: int = 10**6, seed: int = 0) -> EmpiricalCdf:
    """Distance distribution of (dx, dy) ~ Normal(0, sigma_x) x Normal(0, sigma_y).

    Uses a counter-based generator keyed by ``seed`` so shards could be
    drawn independently and merged; here a single draw suffices.
    """
    if samples < 10**4:
        raise InvalidInputError("need at least 1e4 samples for a stable CDF")
    rng = np.random.Generator(np.random.Philox(key=seed))
    dx = rng.normal(0.0, model.sigma_x, samples)
    dy = rng.normal(0.0, model.sigma_y, samples)
    return EmpiricalCdf(samples=np.sort(np.hypot(dx, dy)))


def distance_threshold(model: ErrorModel, alpha: float, samples: int = 10**6, seed: int = 0, cdf: EmpiricalCdf | None = None) -> float:
    """Pixel distance below which labelling error stays with prob 1 - alpha."""
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"significance level must be in (0, 1), got {alpha}")
    if cdf is None:
        cdf = simulate_distance_cdf(model, samples=samples, seed=seed)
    return cdf.quantile(1.0 - alpha)


def weighted_error(e: float, model: ErrorModel, cdf: EmpiricalCdf) -> float:
    """e / (1 - F(e)) under the simulated distance CDF.

    Errors beyond every simulated sample get the +inf sentinel.
    """
    if e < 0:
        raise InvalidInputError("error distance must be >= 0")
    f = cdf.cdf(e)
    if f >= 1.0:
        return float("inf")
    return e / (1.0 - f)


def pp_plot_data(errors: list[FrameError], model: ErrorModel) -> list[tuple[float, float]]:
    """(theoretical, empirical) percentile pairs for the chi-square(2) null.

    The shared grid is the sorted standardized squared errors; empirical
    percentiles use midpoint plotting positions (i + 0.5) / n.
    """
    if len(errors) < 2:
        raise InvalidInputError("need at least 2 errors for a P-P plot")
    values = np.sort([standardized_squared_error(e, model) for e in errors])
    n = len(values)
    out = []
    for i, v in enumerate(values):
        theo = chi2_cdf(float(v), 2)
        emp = (i + 0.5) / n
        out.append((theo, emp))
    return out


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_cdf_check(values: np.ndarray) -> tuple[float, list[tuple[float, float, float]]]:
    """Sup-norm distance between the standardized empirical CDF and Phi.

    Values are standardized by their sample mean and standard deviation.
    Returns the deviation plus the (value, empirical, theoretical) curve
    for plotting.  Both sides of every ECDF jump are checked.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size < 10:
        raise InvalidInputError("need at least 10 values for the CDF check")
    std = float(np.std(values))
    if std == 0.0 or float(np.ptp(values)) == 0.0:
        raise InvalidInputError("zero-variance input cannot be standardized")
    z = np.sort((values - float(np.mean(values))) / std)
    n = len(z)
    curve = []
    worst = 0.0
    for i, v in enumerate(z):
        theo = normal_cdf(float(v))
        emp_hi = (i + 1) / n
        emp_lo = i / n
        worst = max(worst, abs(theo - emp_hi), abs(theo - emp_lo))
        curve.append((float(v), emp_hi, theo))
    return worst, curve


def calibrate_error_model(relabels: dict[str, list[tuple[float, float]]], condition: str = "custom") -> ErrorModel:
    """Estimate (sigma_x, sigma_y) from repeated labelling attempts.

    ``relabels`` maps an image id to its list of (x, y) attempts.  Each
    attempt's error is taken against the mean of all attempts for that
    image; pooling deviations from per-image means loses one degree of
    freedom per image, so the variance divides by (samples - images) to
    stay unbiased.
    """
    dxs: list[float] = []
    dys: list[float] = []
    for image_id, attempts in relabels.items():
        if len(attempts) < 2:
            raise InvalidInputError(
                f"image {image_id!r} needs at least 2 labelling attempts"
            )
        arr = np.asarray(attempts, dtype=np.float64)
        mean = arr.mean(axis=0)
        dev = arr - mean
        dxs.extend(dev[:, 0].tolist())
        dys.extend(dev[:, 1].tolist())
    dof = len(dxs) - len(relabels)
    sx = float(np.sqrt(np.sum(np.square(dxs)) / dof))
    sy = float(np.sqrt(np.sum(np.square(dys)) / dof))
    if sx == 0.0 or sy == 0.0:
        raise InvalidInputError(
            "labelling attempts are identical; error model would be degenerate"
        )
    return ErrorModel(condition=condition, sigma_x=sx, sigma_y=sy)
