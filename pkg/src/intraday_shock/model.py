"""Model parameters and closed-form moment identities.

The price of each hourly product is a difference of two compound Poisson
processes (upward and downward moves) whose per-sign intensity at session
time ``t`` is ``(mu + mu_c) * exp(-kappa * (T_m - t))`` up to the product's
maturity ``T_m``.  A measure shared by all products (intensity scale
``mu_c``) creates common shocks: a single event that moves a contiguous
run of the nearest still-alive maturities by the same signed amount.

Everything in this module is a pure function of immutable value types, so
it is safe to call concurrently.  All exponential-in-time integrals are
evaluated in closed form (never by quadrature), with a Taylor branch for
tiny ``kappa * window`` so that optimizers may probe ``kappa == 0``.

Session clock convention: t = 0 at 15:00 on day D-1.  The canonical daily
grid has 24 hourly maturities T_m = 9 + (m - 1), i.e. delivery hour m of
day D, and trading in product m stops ``cutoff_lead`` hours (default 1.0)
before T_m.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

__all__ = [
    "MaturityGrid",
    "JumpLaw",
    "ModelParams",
    "InitialPrices",
    "hourly_grid",
    "exp_window_integral",
    "intensity",
    "intensity_integral",
    "expected_covariation",
    "model_correlation",
    "common_jump_probability",
    "volatility_proxy",
    "correlation_proxy",
]

# Below this value of kappa * window the closed form (1 - exp(-x)) / x is
# replaced by its second-order Taylor expansion.
_TAYLOR_THRESHOLD = 1e-8


def exp_window_integral(kappa: float, t_anchor: float, a: float, b: float) -> float:
    """Integral of exp(-kappa * (t_anchor - s)) over s in [a, b].

    Exact closed form ``(exp(-kappa*(t_anchor-b)) - exp(-kappa*(t_anchor-a))) / kappa``
    written as ``exp(-kappa*(t_anchor-b)) * (1 - exp(-kappa*(b-a))) / kappa`` for
    numerical stability, with the kappa -> 0 limit ``b - a``.

    Returns 0.0 when b <= a.
    """
    if b <= a:
        return 0.0
    tau = b - a
    x = kappa * tau
    head = math.exp(-kappa * (t_anchor - b))
    if abs(x) < _TAYLOR_THRESHOLD:
        # (1 - exp(-x)) / x = 1 - x/2 + O(x^2)
        return tau * head * (1.0 - 0.5 * x)
    return head * (-math.expm1(-x)) / kappa


@dataclass(frozen=True)
class MaturityGrid:
    """Ordered product maturities on the session clock plus the trading cutoff.

    Parameters
    ----------
    maturities : tuple of float
        Session-clock times T_1 < ... < T_M in hours since the session
        opened at 15:00 on day D-1.
    trading_cutoff_lead : float
        Product m is tradable on [0, T_m - trading_cutoff_lead].  Default
        one hour.
    """

    maturities: tuple[float, ...]
    trading_cutoff_lead: float = 1.0

    def __post_init__(self):
        mats = tuple(float(t) for t in self.maturities)
        object.__setattr__(self, "maturities", mats)
        if len(mats) < 1:
            raise ValueError("need at least one maturity")
        if mats[0] <= 0.0:
            raise ValueError("maturities must be positive")
        if any(b <= a for a, b in zip(mats, mats[1:])):
            raise ValueError("maturities must be strictly increasing")
        if not 0.0 <= self.trading_cutoff_lead < mats[0]:
            raise ValueError(
                "trading_cutoff_lead must be in [0, T_1) so every product has a "
                "nonempty tradable window"
            )

    @property
    def n_products(self) -> int:
        return len(self.maturities)

    def maturity(self, m: int) -> float:
        """Maturity of product m (1-based)."""
        if not 1 <= m <= self.n_products:
            raise IndexError(f"product index {m} outside 1..{self.n_products}")
        return self.maturities[m - 1]

    def cutoff(self, m: int) -> float:
        """Last tradable time of product m."""
        return self.maturity(m) - self.trading_cutoff_lead

    @property
    def session_end(self) -> float:
        return self.maturities[-1]


def hourly_grid(n_products: int = 24, first_maturity: float = 9.0,
                trading_cutoff_lead: float = 1.0) -> MaturityGrid:
    """Canonical daily grid: hourly maturities T_m = first_maturity + (m - 1).

    With the defaults, T_m is delivery hour m of day D on the session clock
    that starts at 15:00 on day D-1.
    """
    mats = tuple(first_maturity + float(i) for i in range(n_products))
    return MaturityGrid(mats, trading_cutoff_lead)


@dataclass(frozen=True)
class JumpLaw:
    """Discrete law of absolute price-move sizes with cached first two moments.

    Sizes are EUR/MWh amounts on the 0.01 tick grid.  Zero is excluded:
    every event moves the price.
    """

    sizes: tuple[float, ...]
    probs: tuple[float, ...]
    m1: float = field(init=False)
    m2: float = field(init=False)

    def __post_init__(self):
        sizes = tuple(float(s) for s in self.sizes)
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "probs", probs)
        if len(sizes) == 0 or len(sizes) != len(probs):
            raise ValueError("sizes and probs must be nonempty and equal length")
        if any(s <= 0.0 for s in sizes):
            raise ValueError("jump sizes must be strictly positive")
        if any(p <= 0.0 for p in probs):
            raise ValueError("probabilities must be strictly positive")
        total = math.fsum(probs)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities must sum to 1 within 1e-12, got {total!r}")
        m1 = math.fsum(p * s for p, s in zip(probs, sizes))
        m2 = math.fsum(p * s * s for p, s in zip(probs, sizes))
        if not math.isfinite(m2):
            raise ValueError("second moment of the jump law must be finite")
        object.__setattr__(self, "m1", m1)
        object.__setattr__(self, "m2", m2)

    @classmethod
    def single(cls, size: float) -> "JumpLaw":
        return cls((size,), (1.0,))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n i.i.d. sizes."""
        if len(self.sizes) == 1:
            return np.full(n, self.sizes[0])
        return rng.choice(np.asarray(self.sizes), size=n, p=np.asarray(self.probs))


@dataclass(frozen=True)
class ModelParams:
    """The model's full state: the rate triple, the maturity grid, the jump law.

    kappa
        Rate (1/hour) at which intensity grows toward maturity; also twice
        the rate at which cross-product correlation decays with maturity gap.
    mu
        Intensity scale (1/hour) of product-specific moves.
    mu_c
        Intensity scale (1/hour) of common shocks shared across products.
    """

    kappa: float
    mu: float
    mu_c: float
    grid: MaturityGrid
    jump_law: JumpLaw

    def __post_init__(self):
        if self.kappa < 0.0 or self.mu < 0.0 or self.mu_c < 0.0:
            raise ValueError("kappa, mu and mu_c must be non-negative")
        if self.mu + self.mu_c <= 0.0:
            raise ValueError("mu + mu_c must be positive")

    @property
    def total_rate(self) -> float:
        return self.mu + self.mu_c

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "mu": self.mu,
            "mu_c": self.mu_c,
            "maturities": list(self.grid.maturities),
            "cutoff_lead": self.grid.trading_cutoff_lead,
            "jump_law": {"sizes": list(self.jump_law.sizes),
                         "probs": list(self.jump_law.probs)},
            "units": {
                "kappa": "1/hour",
                "mu": "1/hour",
                "mu_c": "1/hour",
                "maturities": "hours since session open (15:00 day D-1)",
                "cutoff_lead": "hours",
                "jump_law.sizes": "EUR/MWh",
            },
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelParams":
        law = doc["jump_law"]
        return cls(
            kappa=float(doc["kappa"]),
            mu=float(doc["mu"]),
            mu_c=float(doc["mu_c"]),
            grid=MaturityGrid(tuple(doc["maturities"]),
                              float(doc.get("cutoff_lead", 1.0))),
            jump_law=JumpLaw(tuple(law["sizes"]), tuple(law["probs"])),
        )

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class InitialPrices:
    """Session-open price per product, EUR/MWh."""

    f0: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "f0", tuple(float(x) for x in self.f0))

    @classmethod
    def flat(cls, value: float, n_products: int) -> "InitialPrices":
        return cls((value,) * n_products)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.f0, dtype=float)

    def check_grid(self, grid: MaturityGrid) -> None:
        if len(self.f0) != grid.n_products:
            raise ValueError(
                f"got {len(self.f0)} initial prices for {grid.n_products} products"
            )


def intensity(params: ModelParams, m: int, t: float) -> float:
    """Per-sign jump intensity of product m at session time t, in 1/hour.

    The rate of all price moves (both signs) is twice this value.  Zero
    after the product's maturity.
    """
    T_m = params.grid.maturity(m)
    if t < 0.0:
        raise ValueError("session time must be non-negative")
    if t > T_m:
        return 0.0
    return params.total_rate * math.exp(-params.kappa * (T_m - t))


def intensity_integral(params: ModelParams, m: int, a: float, b: float) -> float:
    """Closed-form integral of the per-sign intensity of product m over [a, b]."""
    T_m = params.grid.maturity(m)
    hi = min(b, T_m)
    return params.total_rate * exp_window_integral(params.kappa, T_m, a, hi)


def expected_covariation(params: ModelParams, k: int, l: int,
                         t_start: float, t_end: float) -> float:
    """Expected realized covariation of products k and l over [t_start, t_end].

    Equals ``2 * m2 * coef * integral(exp(-kappa*(max(T_k,T_l) - s)), s in
    [t_start, min(t_end, T_k, T_l)])`` where ``coef`` is ``mu + mu_c`` on the
    diagonal and ``mu_c`` off it.  The value does not depend on the sampling
    step used by the realized estimator, only on the window.
    """
    if not 0.0 <= t_start <= t_end:
        raise ValueError("need 0 <= t_start <= t_end")
    T_k = params.grid.maturity(k)
    T_l = params.grid.maturity(l)
    coef = params.total_rate if k == l else params.mu_c
    hi = min(t_end, T_k, T_l)
    integral = exp_window_integral(params.kappa, max(T_k, T_l), t_start, hi)
    return 2.0 * params.jump_law.m2 * coef * integral


def model_correlation(params: ModelParams, k: int, l: int) -> float:
    """Correlation of two distinct products: mu_c/(mu+mu_c) * exp(-kappa*gap/2).

    Independent of time; equal to the ratio
    ``expected_covariation(k,l) / sqrt(cov(k,k) * cov(l,l))`` over any common
    window contained in both products' lifetimes.
    """
    if k == l:
        raise ValueError("model_correlation is defined for distinct products")
    gap = abs(params.grid.maturity(k) - params.grid.maturity(l))
    return params.mu_c / params.total_rate * math.exp(-0.5 * params.kappa * gap)


def common_jump_probability(params: ModelParams, group1: Iterable[int],
                            group2: Iterable[int], u: float, t: float,
                            sign: str = "+") -> float:
    """Probability that one shared shock stream hits every product in group1
    on [u, t] while hitting none of group2.

    Only the common measure of the given sign counts; the two signs are
    symmetric so the value does not depend on ``sign``.  A shock always hits
    a contiguous run of the nearest alive maturities, so the probability is
    zero whenever some product of group1 is farther out than some product of
    group2.
    """
    if sign not in ("+", "-"):
        raise ValueError("sign must be '+' or '-'")
    g1 = sorted(set(int(m) for m in group1))
    g2 = sorted(set(int(m) for m in group2))
    if not g1 or not g2:
        raise ValueError("both product groups must be nonempty")
    if set(g1) & set(g2):
        raise ValueError("product groups must be disjoint")
    t_min = min(params.grid.maturity(m) for m in g1 + g2)
    if not 0.0 <= u <= t:
        raise ValueError("need 0 <= u <= t")
    if t > t_min:
        raise ValueError("t must not exceed the earliest maturity of the groups")
    if max(g1) > min(g2):
        return 0.0
    T_far = params.grid.maturity(max(g1))
    T_block = params.grid.maturity(min(g2))
    mass_far = params.mu_c * exp_window_integral(params.kappa, T_far, u, t)
    mass_block = params.mu_c * exp_window_integral(params.kappa, T_block, u, t)
    return -math.expm1(-(mass_far - mass_block)) * math.exp(-mass_block)


def volatility_proxy(params: ModelParams) -> float:
    """Scalar volatility summary sqrt(2 * (mu + mu_c) / kappa * m2), EUR/MWh/sqrt(hour).

    Approximates the square root of a product's integrated variance over its
    whole life when kappa * T_m is large.  Requires kappa > 0.
    """
    if params.kappa <= 0.0:
        raise ValueError("volatility_proxy requires kappa > 0")
    return math.sqrt(2.0 * params.total_rate / params.kappa * params.jump_law.m2)


def correlation_proxy(params: ModelParams, gap_hours: float = 1.0) -> float:
    """Correlation of two products whose maturities are gap_hours apart.

    Same quantity as :func:`model_correlation` evaluated on an arbitrary gap.
    """
    if gap_hours < 0.0:
        raise ValueError("gap must be non-negative")
    return params.mu_c / params.total_rate * math.exp(-0.5 * params.kappa * gap_hours)
