"""Closed-form and quadrature reference values for flat-band transport.

Everything here is a pure function of (y, alpha): dilute-limit conductivity
formulas for the sawtooth chain, clean-lattice values from Bloch quantum
metrics, the semi-analytic stub result assembled from exponential-average
integrals, the Drude value for the bare chain, and a Monte-Carlo averager
over the spacing distribution for cross-checks.

y is the surviving-B fraction; spacings between survivors are treated as
continuous exponential variables with density y exp(-y l), the dilute-limit
idealization of the true geometric law. There is a `discrete` switch on the
Monte-Carlo averager for sensitivity checks against the integer-spacing
reality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

RANDOM_MODE = "random"
ORDERED_MODE = "ordered"


@dataclass
class Prediction:
    """A labeled analytic value with its validity context."""

    label: str
    inputs: dict
    value: float
    note: str = ""
    shortcuts: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.value) or self.value <= 0:
            raise ValueError(f"prediction {self.label} outside its regime")


def _check_y(y: float) -> None:
    if not 0.0 < y <= 1.0:
        raise ValueError("y must lie in (0, 1]")


def qm_avg_sc(y: float, mode: str = RANDOM_MODE) -> float:
    """Dilute-limit average quantum metric per flat-band state, sawtooth.

    Random survivors: exponential spacings give <m^2>/12 = 1/(6 y^2);
    ordered (equidistant) survivors: m = 1/y exactly, so 1/(12 y^2) --
    half the random value for every y.
    """
    _check_y(y)
    if mode == RANDOM_MODE:
        return 1.0 / (6.0 * y * y)
    if mode == ORDERED_MODE:
        return 1.0 / (12.0 * y * y)
    raise ValueError(f"unknown mode {mode!r}")


def sigma_sc(y: float, mode: str = RANDOM_MODE) -> float:
    """Dilute-limit flat-band conductivity of the vacancy sawtooth chain."""
    return 2.0 * y * qm_avg_sc(y, mode)


def sigma_sc_clean() -> float:
    """Clean sawtooth flat-band conductivity, 2/(3 sqrt(3)) ~ 0.3849."""
    return 2.0 / (3.0 * math.sqrt(3.0))


def sigma_sl_clean(alpha: float) -> float:
    """Clean stub flat-band conductivity, 1/(|alpha| sqrt(4 + alpha^2))."""
    if alpha == 0:
        raise ValueError(
            "alpha = 0 detaches the side sites; the chain is then a bare "
            "wire, see drude_chain"
        )
    return 1.0 / (abs(alpha) * math.sqrt(4.0 + alpha * alpha))


def sigma_sl_superlattice(y: float) -> float:
    """Equidistant-survivor stub prediction in the weak-coupling regime."""
    _check_y(y)
    return 1.0 / (6.0 * y)


def metric_clean(kind: str, k, alpha: float | None = None):
    """Bloch-state quantum metric of the clean flat band at momentum k a.

    sawtooth: 1/(2 (2 + cos k)^2); stub: sin^2(k/2) alpha^2 / D^2 with
    D = alpha^2 + 4 cos^2(k/2). Averaged over the Brillouin zone these
    reproduce 1/(3 sqrt(3)) and 1/(2|alpha| sqrt(4+alpha^2)).
    """
    k = np.asarray(k, dtype=float)
    if kind == "sawtooth":
        return 1.0 / (2.0 * (2.0 + np.cos(k)) ** 2)
    if kind == "stub":
        if not alpha:
            raise ValueError("stub metric needs alpha != 0")
        d = alpha * alpha + 4.0 * np.cos(k / 2.0) ** 2
        return np.sin(k / 2.0) ** 2 * alpha * alpha / (d * d)
    raise ValueError(f"unknown lattice kind {kind!r}")


def i_np(alpha: float, y: float, n: int, p: int) -> float:
    """Exponential average of x^n / (x alpha^2 + 2)^p by adaptive quadrature."""
    if n not in (0, 1, 2, 3) or p not in (0, 1, 2):
        raise ValueError("i_np implemented for n in 0..3, p in 0..2")
    _check_y(y)
    a2 = alpha * alpha

    def integrand(x):
        return y * math.exp(-y * x) * x**n / (x * a2 + 2.0) ** p

    val, abserr = integrate.quad(integrand, 0.0, np.inf,
                                 epsabs=0.0, epsrel=1e-10, limit=400)
    if abserr > 1e-8 * max(abs(val), 1e-300):
        raise ArithmeticError(
            f"quadrature for I_{n}{p} did not reach 1e-8: abserr {abserr}"
        )
    return val


def crossover_alpha(y: float) -> float:
    """Coupling scale alpha = sqrt(y) separating the two stub regimes."""
    _check_y(y)
    return math.sqrt(y)


def sigma_sl(alpha: float, y: float) -> Prediction:
    """Semi-analytic disordered-stub conductivity, valid at any alpha/y.

    <g> is assembled from exponential averages I_np of the segment-state
    moments:

        <g> = f0 I_01 + f1 I_11 + f2 I_21 + f3 I_31
              - (I_20 - 2 alpha^2 I_21 + alpha^4 I_22)/4,
        f0 = 1/2, f1 = 1 + alpha^2/6, f2 = 1 - alpha^2/2, f3 = alpha^2/3,

    and sigma/sigma0 = 2 y <g>. The two regimes bracket it: for
    alpha^2 >> y the metric term dominates and sigma -> 1/(3y); for
    alpha^2 << y the boundary weight dominates and sigma -> (1/y)(1 + y).
    Shortcut values for whichever limit applies ride along.
    """
    if alpha == 0:
        raise ValueError("alpha = 0 is singular here; see drude_chain")
    _check_y(y)
    a2 = alpha * alpha
    fs = (0.5, 1.0 + a2 / 6.0, 1.0 - a2 / 2.0, a2 / 3.0)
    g = sum(f * i_np(alpha, y, n, 1) for n, f in enumerate(fs))
    g -= (i_np(alpha, y, 2, 0) - 2.0 * a2 * i_np(alpha, y, 2, 1)
          + a2 * a2 * i_np(alpha, y, 2, 2)) / 4.0
    shortcuts = {}
    if a2 <= y / 10.0:
        shortcuts["below_crossover"] = (1.0 / y) * (1.0 + y)
    if a2 >= 10.0 * y:
        shortcuts["above_crossover"] = 1.0 / (3.0 * y)
    side = "below" if a2 < y else "above"
    return Prediction(
        label="sigma_sl",
        inputs={"alpha": alpha, "y": y},
        value=2.0 * y * g,
        note=f"{side} the alpha = sqrt(y) crossover",
        shortcuts=shortcuts,
    )


def drude_chain(E: float, eta: float) -> float:
    """Bare-chain conductivity sqrt(4 - E^2)/(2 eta) (t = 1), |E| < 2."""
    if abs(E) >= 2.0:
        raise ValueError("E outside the chain band: no carriers at |E| >= 2t")
    if eta <= 0:
        raise ValueError("eta must be positive")
    return math.sqrt(4.0 - E * E) / (2.0 * eta)


def poisson_mc_average(metric_fn, y: float, samples: int, seed: int,
                       discrete: bool = False) -> tuple[float, float]:
    """Monte-Carlo average of metric_fn over the spacing distribution.

    Continuous mode draws exponential spacings (the dilute-limit density
    y e^{-y l}); discrete mode draws the true geometric integer spacings
    for sensitivity checks. metric_fn must accept a numpy array.
    """
    if samples < 1000:
        raise ValueError("use at least 1000 samples")
    _check_y(y)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if discrete:
        m = rng.geometric(y, size=samples).astype(float)
    else:
        m = rng.exponential(1.0 / y, size=samples)
    vals = np.asarray(metric_fn(m), dtype=float)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples))
