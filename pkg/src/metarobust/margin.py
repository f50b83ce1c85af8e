"""Two-point max-margin classifiers under a symmetric Gaussian model.

Class 1 is ``N(mu, sigma^2 I_d)`` and class 0 is ``N(-mu, sigma^2 I_d)``.
One point is drawn from each class and the perpendicular bisector of the
pair is used as the classifier.  The *core* of a class is the closed ball
of radius ``r * sigma`` around its mean, with ``r`` chosen so that a draw
lands in its core with probability exactly ``1 - exp(-t)``:

    r = sqrt(chi2_d.ppf(1 - exp(-t)))

Both points land in their cores with probability ``(1 - exp(-t))^2``.

Margin floor used for the bound.  For a point ``p`` the signed distance
to the bisector of ``(x1, x0)`` is

    (|p - x0|^2 - |p - x1|^2) / (2 |x1 - x0|).

Take ``p = mu`` with ``a = |mu - x1| <= r sigma`` and ``D = |mu - x0| >=
2|mu| - r sigma``.  Since ``|x1 - x0| <= D + a`` the distance is at least
``(D - a) / 2 >= |mu| - r sigma``, and the same holds for ``-mu`` by
symmetry.  Each class therefore errs with probability at most
``Phi(-(|mu|/sigma - r))``, and the overall error is at most
``2 Phi(-(|mu|/sigma - r))``.  Under ``|mu| > 2 r sigma`` this is below
``2 Phi(-r)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaincinv, ndtr

from .errors import ConfigurationError, DegenerateInputError
from .rng import make_rng


def normal_cdf(x):
    return ndtr(x)


@dataclass(frozen=True)
class GdaModel:
    mu: np.ndarray
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigurationError("sigma must be > 0")
        if not np.linalg.norm(self.mu) > 0:
            raise ConfigurationError("mu must be non-zero")

    @property
    def d(self):
        return len(self.mu)


@dataclass(frozen=True)
class Hyperplane:
    """The plane ``{x : normal . x = offset}``; class 1 on the ``> offset`` side."""

    normal: np.ndarray
    offset: float

    def side(self, x):
        return np.asarray(x) @ self.normal > self.offset


@dataclass(frozen=True)
class MarginSimConfig:
    d: int = 2
    sigma: float = 1.0
    t: float = 1.0
    trials: int = 10_000
    separation_factor: float = 2.05
    bound_variant: str = "proof"

    def __post_init__(self):
        if self.d < 1 or not self.sigma > 0 or not self.t > 0 or self.trials < 1:
            raise ConfigurationError("need d >= 1, sigma > 0, t > 0, trials >= 1")
        if not self.separation_factor > 2:
            raise ConfigurationError("separation_factor must exceed 2")
        if self.bound_variant not in ("proof", "statement"):
            raise ConfigurationError(f"unknown bound_variant {self.bound_variant!r}")


@dataclass
class MarginReport:
    r_core: float
    statement_r: float
    error_bound: float
    error_bound_proof: float
    error_bound_statement: float
    success_frequency: float
    success_freq_proof: float
    success_freq_statement: float
    both_in_core_frequency: float
    theoretical_floor: float
    in_core_1: np.ndarray = field(repr=False)
    in_core_0: np.ndarray = field(repr=False)
    exact_error: np.ndarray = field(repr=False)

    @property
    def trials(self):
        return len(self.exact_error)

    def trial_rows(self):
        lines = ["trial,in_core_1,in_core_0,exact_error"]
        for i, (a, b, e) in enumerate(zip(self.in_core_1, self.in_core_0, self.exact_error)):
            lines.append(f"{i},{int(a)},{int(b)},{e:.12e}")
        return "\n".join(lines) + "\n"

    def summary_rows(self):
        head = "r_core,statement_r,error_bound_proof,error_bound_statement,success_freq_proof,success_freq_statement,floor"
        vals = [self.r_core, self.statement_r, self.error_bound_proof, self.error_bound_statement,
                self.success_freq_proof, self.success_freq_statement, self.theoretical_floor]
        return head + "\n" + ",".join(f"{v:.10g}" for v in vals) + "\n"


def core_radius(d, t):
    """Return ``(r_core, statement_r)``: the chi-square calibrated radius and the
    literal ``d + sqrt(2 d t) + 2 t`` for side-by-side reporting."""
    if d < 1 or not t > 0:
        raise ConfigurationError("need d >= 1 and t > 0")
    p = -math.expm1(-t)
    r_core = math.sqrt(2.0 * gammaincinv(d / 2.0, p))
    return r_core, d + math.sqrt(2.0 * d * t) + 2.0 * t


def in_core(x, center, r_core, sigma):
    x, center = np.asarray(x, dtype=float), np.asarray(center, dtype=float)
    if x.shape != center.shape:
        raise ConfigurationError(f"dimension mismatch {x.shape} vs {center.shape}")
    return bool(np.linalg.norm(x - center) <= r_core * sigma)


def bisector_hyperplane(x1, x0):
    x1, x0 = np.asarray(x1, dtype=float), np.asarray(x0, dtype=float)
    normal = x1 - x0
    if not np.any(normal):
        raise DegenerateInputError("bisector of coincident points is undefined")
    return Hyperplane(normal, 0.5 * (x1 @ x1 - x0 @ x0))


def exact_error_rate(h, model):
    """Misclassification rate of ``h`` under equal class priors."""
    scale = model.sigma * np.linalg.norm(h.normal)
    if scale == 0:
        raise DegenerateInputError("hyperplane has a zero normal")
    proj = h.normal @ model.mu
    return 0.5 * normal_cdf(-(proj - h.offset) / scale) + 0.5 * normal_cdf((-proj - h.offset) / scale)


def _uniform_ball(rng, n, d, radius):
    v = rng.standard_normal((n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * (radius * rng.uniform(size=(n, 1)) ** (1.0 / d))


def midpoint_outside_cores_check(model, r_core, samples, seed):
    """Count midpoints of core pairs that land inside either core."""
    mu = np.asarray(model.mu, dtype=float)
    rad = r_core * model.sigma
    if not np.linalg.norm(mu) > 2 * rad:
        raise ConfigurationError(
            f"|mu| = {np.linalg.norm(mu):.6g} must exceed 2 r sigma = {2 * rad:.6g}"
        )
    rng = make_rng(seed)
    x1 = mu + _uniform_ball(rng, samples, len(mu), rad)
    x0 = -mu + _uniform_ball(rng, samples, len(mu), rad)
    mid = 0.5 * (x1 + x0)
    inside = (np.linalg.norm(mid - mu, axis=1) <= rad) | (np.linalg.norm(mid + mu, axis=1) <= rad)
    return int(np.count_nonzero(inside))


def theorem_model(config):
    r_core, _ = core_radius(config.d, config.t)
    mu = np.zeros(config.d)
    mu[0] = config.separation_factor * r_core * config.sigma
    return GdaModel(mu, config.sigma), r_core


def verify_theorem(config, seed):
    """Monte-Carlo check of the two-point bound; trial ``i`` uses stream
    ``(seed, i)``."""
    model, r_core = theorem_model(config)
    _, statement_r = core_radius(config.d, config.t)
    mu, sigma = model.mu, model.sigma
    n = config.trials
    x1 = np.empty((n, config.d))
    x0 = np.empty((n, config.d))
    for i in range(n):
        z = make_rng(seed, i).standard_normal((2, config.d))
        x1[i] = mu + sigma * z[0]
        x0[i] = -mu + sigma * z[1]
    rad = r_core * sigma
    c1 = np.linalg.norm(x1 - mu, axis=1) <= rad
    c0 = np.linalg.norm(x0 + mu, axis=1) <= rad
    w = x1 - x0
    if not np.all(np.any(w != 0, axis=1)):
        raise DegenerateInputError("sampled coincident points")
    c = 0.5 * (np.einsum("ij,ij->i", x1, x1) - np.einsum("ij,ij->i", x0, x0))
    scale = sigma * np.linalg.norm(w, axis=1)
    proj = w @ mu
    err = 0.5 * normal_cdf(-(proj - c) / scale) + 0.5 * normal_cdf((-proj - c) / scale)

    floor_margin = np.linalg.norm(mu) / sigma - r_core
    bound_proof = float(2.0 * normal_cdf(-floor_margin))
    bound_statement = float(normal_cdf(-statement_r))
    freq_proof = float(np.mean(err <= bound_proof))
    freq_statement = float(np.mean(err <= bound_statement))
    proof = config.bound_variant == "proof"
    return MarginReport(
        r_core=r_core, statement_r=statement_r,
        error_bound=bound_proof if proof else bound_statement,
        error_bound_proof=bound_proof, error_bound_statement=bound_statement,
        success_frequency=freq_proof if proof else freq_statement,
        success_freq_proof=freq_proof, success_freq_statement=freq_statement,
        both_in_core_frequency=float(np.mean(c1 & c0)),
        theoretical_floor=float((-math.expm1(-config.t)) ** 2),
        in_core_1=c1, in_core_0=c0, exact_error=err,
    )
