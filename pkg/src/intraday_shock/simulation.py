"""Joint path generation for all products of one trading session.

Two event-level generators produce the same law by different constructions:

* :func:`simulate_thinning` draws candidate common shocks from a dominating
  homogeneous measure on ``[0, T] x [0, mu_c]`` and accepts product ``m``
  when the candidate's height falls under that product's intensity curve.
* :func:`simulate_decomposition` splits the shared measure into independent
  compound Poisson layers.  Layer ``j < M`` carries the shocks whose
  farthest affected product is exactly ``j`` (rate
  ``mu_c * (exp(-kappa*(T_j - s)) - exp(-kappa*(T_{j+1} - s)))``, positive
  for increasing maturities) and layer ``M`` the shocks that reach every
  alive product (rate ``mu_c * exp(-kappa*(T_M - s))``).  A layer-``j``
  event hits the contiguous run of alive products nearest maturity up to
  ``j``, with one shared size and sign.

A third generator, :func:`simulate_diffusion`, samples the Gaussian limit
process with exact per-step increments.

Price paths sampled onto a time grid are right-continuous step functions
(a price at time t includes an event at exactly t) and freeze at each
product's trading cutoff.

Vectorized batch kernels (:func:`simulate_price_matrix`) generate grid
prices for many paths at once; they are equal in law to the per-path
generators and are intended for the Monte Carlo sizes used in valuation.

Path generation is embarrassingly parallel: each path owns an independent
stream and shares no mutable state, so callers may fan paths out across
workers.  Moment aggregation across paths should use associative merges;
re-associating floating-point reductions may perturb results by up to about
1e-9 in relative terms, which downstream contracts treat as equal.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator, Literal, Sequence

import numpy as np

from .model import InitialPrices, JumpLaw, ModelParams, exp_window_integral
from .rng import batch_rng, path_rng

__all__ = [
    "EventPath",
    "GridPath",
    "SimConfig",
    "sample_inhomogeneous_cpp",
    "simulate_thinning",
    "simulate_decomposition",
    "simulate_diffusion",
    "sample_onto_grid",
    "simulate_batch",
    "simulate_price_matrix",
    "decision_grid",
    "correlation_matrix",
    "grid_batch_to_csv",
    "write_grid_binary",
    "read_grid_binary",
]

GeneratorName = Literal["thinning", "decomposition", "diffusion"]

IDIOSYNCRATIC = -1  # shock id of product-specific events

# Number of paths drawn per internal chunk of the vectorized kernels.  Part
# of the documented stream layout: changing it would change batch output.
_CHUNK = 4096


@dataclass(frozen=True)
class EventPath:
    """One session's jump record for every product.

    For product index m (0-based here), ``times[m]`` holds sorted event
    times in (0, T_m], ``sizes[m]`` the signed price moves and
    ``shock_ids[m]`` the originating common-shock id, or ``IDIOSYNCRATIC``.
    Events sharing a shock id occur at the same instant with the same signed
    size on a contiguous run of products.
    """

    params: ModelParams
    f0: InitialPrices
    times: tuple[np.ndarray, ...]
    sizes: tuple[np.ndarray, ...]
    shock_ids: tuple[np.ndarray, ...]

    @property
    def n_products(self) -> int:
        return self.params.grid.n_products

    def price_at(self, m: int, t: float) -> float:
        """Price of product m (1-based) at session time t, frozen at the cutoff."""
        idx = m - 1
        eff_t = min(t, self.params.grid.cutoff(m))
        n = np.searchsorted(self.times[idx], eff_t, side="right")
        return self.f0.f0[idx] + float(self.sizes[idx][:n].sum())

    def signed_counts(self, m: int, t_start: float = 0.0,
                      t_end: float = math.inf) -> tuple[int, int]:
        """(upward, downward) event counts of product m in (t_start, t_end]."""
        idx = m - 1
        lo = np.searchsorted(self.times[idx], t_start, side="right")
        hi = np.searchsorted(self.times[idx], t_end, side="right")
        window = self.sizes[idx][lo:hi]
        return int((window > 0).sum()), int((window < 0).sum())


@dataclass(frozen=True)
class GridPath:
    """Piecewise-constant sampling of a session path on a fixed time grid."""

    grid_times: np.ndarray
    prices: np.ndarray  # shape (M, len(grid_times))
    f0: InitialPrices

    def __post_init__(self):
        grid = np.asarray(self.grid_times, dtype=float)
        prices = np.asarray(self.prices, dtype=float)
        if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
            raise ValueError("grid times must be strictly increasing")
        if prices.shape != (len(self.f0.f0), grid.size):
            raise ValueError("price matrix must be (n_products, n_grid_times)")
        object.__setattr__(self, "grid_times", grid)
        object.__setattr__(self, "prices", prices)


@dataclass(frozen=True)
class SimConfig:
    """Batch request: path count, master seed and generator choice."""

    n_paths: int
    master_seed: int
    generator: GeneratorName = "thinning"

    def __post_init__(self):
        if self.n_paths < 0:
            raise ValueError("n_paths must be non-negative")
        if self.generator not in ("thinning", "decomposition", "diffusion"):
            raise ValueError(f"unknown generator {self.generator!r}")


def _as_rng(seed: int | np.random.Generator) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return path_rng(int(seed), 0)


def _invert_cumulative(u: np.ndarray, scale: float, kappa: float,
                       t_anchor: float) -> np.ndarray:
    """Solve Lambda(t) = u for the rate scale * exp(-kappa * (t_anchor - s))."""
    if abs(kappa) * t_anchor < 1e-12:
        return u / scale
    return t_anchor + np.log(kappa * u / scale + math.exp(-kappa * t_anchor)) / kappa


def sample_inhomogeneous_cpp(scale: float, kappa: float, t_anchor: float,
                             window: float, jump_law: JumpLaw,
                             rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Events of a compound Poisson process with rate scale*exp(-kappa*(t_anchor-s)).

    Event times on [0, window] are drawn by time-change inversion of the
    closed-form cumulative rate; sizes are i.i.d. from the jump law.

    Returns (sorted times, sizes).
    """
    if scale < 0.0:
        raise ValueError("rate scale must be non-negative")
    total = scale * exp_window_integral(kappa, t_anchor, 0.0, window)
    if total <= 0.0:
        empty = np.empty(0)
        return empty, empty
    n = int(rng.poisson(total))
    if n == 0:
        empty = np.empty(0)
        return empty, empty
    u = rng.uniform(0.0, total, size=n)
    u.sort()
    if abs(kappa) * max(window, 0.0) < 1e-12:
        times = u / scale
    else:
        times = _invert_cumulative(u, scale, kappa, t_anchor)
    sizes = jump_law.sample(rng, n)
    return times, sizes


def _common_shock_footprint(params: ModelParams, times: np.ndarray,
                            heights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First and last (0-based, inclusive) product index hit by each candidate.

    A candidate at (s, x) hits product m when s <= T_m and
    x <= mu_c * exp(-kappa * (T_m - s)); the hit set is a contiguous run
    starting at the nearest alive maturity.  Returns first > last for
    rejected candidates.
    """
    mats = np.asarray(params.grid.maturities)
    first = np.searchsorted(mats, times, side="left")
    if params.kappa == 0.0:
        last = np.full(times.shape, len(mats) - 1, dtype=np.int64)
    else:
        with np.errstate(divide="ignore"):
            reach = times + np.log(params.mu_c / heights) / params.kappa
        last = np.searchsorted(mats, reach, side="right") - 1
    return first, np.minimum(last, len(mats) - 1)


def _assemble(params: ModelParams, f0: InitialPrices,
              per_product: list[list[tuple[np.ndarray, np.ndarray, np.ndarray]]]
              ) -> EventPath:
    times_out, sizes_out, ids_out = [], [], []
    for chunks in per_product:
        if chunks:
            t = np.concatenate([c[0] for c in chunks])
            s = np.concatenate([c[1] for c in chunks])
            i = np.concatenate([c[2] for c in chunks])
            order = np.argsort(t, kind="stable")
            times_out.append(t[order])
            sizes_out.append(s[order])
            ids_out.append(i[order])
        else:
            times_out.append(np.empty(0))
            sizes_out.append(np.empty(0))
            ids_out.append(np.empty(0, dtype=np.int64))
    return EventPath(params, f0, tuple(times_out), tuple(sizes_out), tuple(ids_out))


def simulate_thinning(params: ModelParams, f0: InitialPrices,
                      seed: int | np.random.Generator) -> EventPath:
    """One session path by acceptance-rejection on the shared measure.

    Candidate common shocks are drawn homogeneously on
    ``[0, T] x [0, mu_c]`` (the height bound is the supremum of the shock
    intensity over products and times); a candidate hits every product whose
    intensity at the candidate time exceeds the candidate height.  Accepted
    shocks carry one size and one sign shared by all hit products.
    Product-specific events are drawn per product by time-change inversion.

    Draw order (fixed for reproducibility): common '+' stream, common '-'
    stream, then per product m = 1..M the '+' and '-' specific streams.
    """
    rng = _as_rng(seed)
    f0.check_grid(params.grid)
    grid = params.grid
    M = grid.n_products
    per_product: list[list] = [[] for _ in range(M)]
    next_shock_id = 0

    if params.mu_c > 0.0:
        horizon = grid.session_end
        for sign in (1.0, -1.0):
            n_cand = int(rng.poisson(params.mu_c * horizon))
            cand_t = rng.uniform(0.0, horizon, size=n_cand)
            cand_x = rng.uniform(0.0, params.mu_c, size=n_cand)
            first, last = _common_shock_footprint(params, cand_t, cand_x)
            keep = first <= last
            cand_t, first, last = cand_t[keep], first[keep], last[keep]
            sizes = params.jump_law.sample(rng, cand_t.size) * sign
            ids = next_shock_id + np.arange(cand_t.size, dtype=np.int64)
            next_shock_id += cand_t.size
            for m in range(M):
                hit = (first <= m) & (m <= last)
                if hit.any():
                    per_product[m].append((cand_t[hit], sizes[hit], ids[hit]))

    if params.mu > 0.0:
        for m in range(M):
            T_m = grid.maturity(m + 1)
            for sign in (1.0, -1.0):
                t, s = sample_inhomogeneous_cpp(params.mu, params.kappa, T_m, T_m,
                                                params.jump_law, rng)
                ids = np.full(t.size, IDIOSYNCRATIC, dtype=np.int64)
                per_product[m].append((t, sign * s, ids))

    return _assemble(params, f0, per_product)


def _layer_scales(params: ModelParams) -> np.ndarray:
    """Rate scale of each common layer j = 1..M (0-based array).

    Layer j < M collects the shocks whose farthest product is exactly j,
    a compound Poisson process with rate
    ``mu_c * (1 - exp(-kappa*(T_{j+1} - T_j))) * exp(-kappa*(T_j - s))``;
    layer M collects the shocks reaching every alive product.
    """
    mats = np.asarray(params.grid.maturities)
    scales = np.empty(len(mats))
    scales[:-1] = params.mu_c * -np.expm1(-params.kappa * np.diff(mats))
    scales[-1] = params.mu_c
    return scales


def simulate_decomposition(params: ModelParams, f0: InitialPrices,
                           seed: int | np.random.Generator) -> EventPath:
    """One session path from independent compound Poisson layers.

    Equal in law to :func:`simulate_thinning`.  The shared measure is split
    into M independent layers per sign (see module docstring); together with
    the 2M product-specific processes the path uses 4M independent compound
    Poisson processes.

    Raises ``ValueError`` when kappa == 0 with mu_c > 0: the layer
    construction degenerates there, use the thinning generator instead.

    Draw order: per sign '+' then '-', layers j = 1..M; then the specific
    streams as in :func:`simulate_thinning`.
    """
    rng = _as_rng(seed)
    f0.check_grid(params.grid)
    if params.kappa == 0.0 and params.mu_c > 0.0:
        raise ValueError(
            "decomposition generator requires kappa > 0 when mu_c > 0 "
            "(layer intensities vanish); use the thinning generator"
        )
    grid = params.grid
    M = grid.n_products
    mats = np.asarray(grid.maturities)
    per_product: list[list] = [[] for _ in range(M)]
    next_shock_id = 0

    if params.mu_c > 0.0:
        scales = _layer_scales(params)
        for sign in (1.0, -1.0):
            for j in range(M):
                T_j = mats[j]
                t, s = sample_inhomogeneous_cpp(float(scales[j]), params.kappa,
                                                float(T_j), float(T_j),
                                                params.jump_law, rng)
                if t.size == 0:
                    continue
                ids = next_shock_id + np.arange(t.size, dtype=np.int64)
                next_shock_id += t.size
                first = np.searchsorted(mats, t, side="left")
                for m in range(j + 1):
                    hit = first <= m
                    if hit.any():
                        per_product[m].append((t[hit], sign * s[hit], ids[hit]))

    if params.mu > 0.0:
        for m in range(M):
            T_m = grid.maturity(m + 1)
            for sign in (1.0, -1.0):
                t, s = sample_inhomogeneous_cpp(params.mu, params.kappa, T_m, T_m,
                                                params.jump_law, rng)
                ids = np.full(t.size, IDIOSYNCRATIC, dtype=np.int64)
                per_product[m].append((t, sign * s, ids))

    return _assemble(params, f0, per_product)


def correlation_matrix(params: ModelParams) -> np.ndarray:
    """Driver correlation of the Gaussian limit:
    ``(mu * delta_kl + mu_c) / (mu + mu_c) * exp(-kappa * |T_k - T_l| / 2)``.
    """
    mats = np.asarray(params.grid.maturities)
    gaps = np.abs(mats[:, None] - mats[None, :])
    R = params.mu_c / params.total_rate * np.exp(-0.5 * params.kappa * gaps)
    np.fill_diagonal(R, 1.0)
    return R


def _correlation_factor(params: ModelParams) -> np.ndarray:
    """Cholesky factor of the driver correlation, with up to 1e-10 ridge jitter."""
    R = correlation_matrix(params)
    try:
        return np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(R + 1e-10 * np.eye(R.shape[0]))
    except np.linalg.LinAlgError:
        smallest = float(np.linalg.eigvalsh(R)[0])
        raise ValueError(
            f"driver correlation matrix is not positive semidefinite even after "
            f"1e-10 jitter: smallest eigenvalue {smallest:.3e}"
        )


def _diffusion_segments(grid: "MaturityGrid", edges: np.ndarray) -> np.ndarray:
    """Refine segment edges so no product cutoff lies strictly inside a segment."""
    cutoffs = np.asarray([grid.cutoff(m + 1) for m in range(grid.n_products)])
    inside = cutoffs[(cutoffs > edges[0]) & (cutoffs < edges[-1])]
    return np.unique(np.concatenate([edges, inside]))


def simulate_diffusion(params: ModelParams, f0: InitialPrices,
                       grid_times: Sequence[float],
                       seed: int | np.random.Generator) -> GridPath:
    """Gaussian limit path sampled exactly at the grid times.

    Per segment, product m receives a centered Gaussian increment with the
    closed-form variance ``m2 * 2*(mu+mu_c) * integral(exp(-kappa*(T_m - s)))``
    over the alive part of the segment; increments across products are
    correlated through one Cholesky factor of :func:`correlation_matrix`.
    Each product freezes at its trading cutoff.
    """
    rng = _as_rng(seed)
    f0.check_grid(params.grid)
    grid_times = np.asarray(grid_times, dtype=float)
    if grid_times.ndim != 1 or grid_times.size == 0 or np.any(np.diff(grid_times) <= 0):
        raise ValueError("grid times must be nonempty and strictly increasing")
    if grid_times[0] < 0.0:
        raise ValueError("grid times must be non-negative")
    L = _correlation_factor(params)
    mats = np.asarray(params.grid.maturities)
    cutoffs = mats - params.grid.trading_cutoff_lead
    var_scale = 2.0 * params.total_rate * params.jump_law.m2

    edges = _diffusion_segments(params.grid, np.concatenate([[0.0], grid_times]))
    prices = np.empty((params.grid.n_products, grid_times.size))
    level = f0.as_array().copy()
    out_col = 0
    for a, b in zip(edges[:-1], edges[1:]):
        sig = np.sqrt([
            var_scale * exp_window_integral(params.kappa, T_m, a, min(b, c_m))
            for T_m, c_m in zip(mats, cutoffs)
        ])
        z = rng.standard_normal(params.grid.n_products)
        level = level + sig * (L @ z)
        while out_col < grid_times.size and grid_times[out_col] <= b:
            prices[:, out_col] = level
            out_col += 1
    while out_col < grid_times.size:  # grid point at exactly 0 with no segment
        prices[:, out_col] = level
        out_col += 1
    return GridPath(grid_times, prices, f0)


def sample_onto_grid(path: EventPath, grid_times: Sequence[float]) -> GridPath:
    """Evaluate an event path on a time grid.

    Right-continuous: the price at t includes events at exactly t.  After a
    product's trading cutoff the price stays at its last pre-cutoff value.
    """
    grid_times = np.asarray(grid_times, dtype=float)
    if grid_times.ndim != 1 or grid_times.size == 0 or np.any(np.diff(grid_times) <= 0):
        raise ValueError("grid times must be nonempty and strictly increasing")
    M = path.n_products
    prices = np.empty((M, grid_times.size))
    for m in range(M):
        eff_t = np.minimum(grid_times, path.params.grid.cutoff(m + 1))
        cum = np.concatenate([[0.0], np.cumsum(path.sizes[m])])
        idx = np.searchsorted(path.times[m], eff_t, side="right")
        prices[m] = path.f0.f0[m] + cum[idx]
    return GridPath(grid_times, prices, path.f0)


def decision_grid(params: ModelParams) -> np.ndarray:
    """The per-product trading-cutoff times, the natural valuation grid."""
    return np.asarray([params.grid.cutoff(m + 1)
                       for m in range(params.grid.n_products)])


def simulate_batch(params: ModelParams, f0: InitialPrices, config: SimConfig,
                   grid_times: Sequence[float] | None = None) -> Iterator[GridPath]:
    """Stream of grid paths; path i uses the stream derived from
    (master_seed, i) regardless of how many paths are drawn or in what order.
    """
    grid_times = decision_grid(params) if grid_times is None else np.asarray(grid_times, float)
    for i in range(config.n_paths):
        rng = path_rng(config.master_seed, i)
        if config.generator == "thinning":
            yield sample_onto_grid(simulate_thinning(params, f0, rng), grid_times)
        elif config.generator == "decomposition":
            yield sample_onto_grid(simulate_decomposition(params, f0, rng), grid_times)
        else:
            yield simulate_diffusion(params, f0, grid_times, rng)


# ---------------------------------------------------------------------------
# Vectorized batch kernels
# ---------------------------------------------------------------------------

def _refined_cells(params: ModelParams, grid_times: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Cell edges containing 0, all grid times and all interior cutoffs,
    plus, per grid time, the number of cells ending at or before it."""
    cutoffs = np.asarray([params.grid.cutoff(m + 1)
                          for m in range(params.grid.n_products)])
    inner = cutoffs[(cutoffs > 0.0) & (cutoffs < grid_times[-1])]
    edges = np.unique(np.concatenate([[0.0], grid_times, inner]))
    # grid time g is covered once all cells with upper edge <= g are summed;
    # a grid time of exactly 0 is covered by zero cells
    n_cells_through = np.searchsorted(edges, grid_times, side="left")
    return edges, n_cells_through


def _jump_increments_chunk(params: ModelParams, edges: np.ndarray,
                           n_paths: int, rng: np.random.Generator) -> np.ndarray:
    """Signed price increments per (path, product, cell) for the jump model.

    Common shocks are drawn layer by layer; because every event of a layer
    hits all its alive footprint products with the same signed size, the
    layer's per-cell signed sum is shared by those products, so only Poisson
    counts per jump-size atom are needed.  Exact in law, no per-event loop.
    """
    grid = params.grid
    M = grid.n_products
    mats = np.asarray(grid.maturities)
    cutoffs = mats - grid.trading_cutoff_lead
    n_cells = edges.size - 1
    law = params.jump_law
    incr = np.zeros((n_paths, M, n_cells))

    def signed_atom_sums(lam_cells: np.ndarray) -> np.ndarray:
        """Sum of signed sizes per (path, cell) for a process with the given
        per-cell masses, one independent '+' and '-' stream per size atom."""
        out = np.zeros((n_paths, lam_cells.size))
        for y, p in zip(law.sizes, law.probs):
            lam = np.broadcast_to(lam_cells * p, (n_paths, lam_cells.size))
            ups = rng.poisson(lam)
            downs = rng.poisson(lam)
            out += y * (ups - downs)
        return out

    if params.mu_c > 0.0:
        scales = _layer_scales(params)
        layer_sums = np.zeros((n_paths, M, n_cells))
        for j in range(M):
            lam = np.asarray([
                scales[j] * exp_window_integral(params.kappa, mats[j], a,
                                                min(b, cutoffs[j]))
                for a, b in zip(edges[:-1], edges[1:])
            ])
            if lam.sum() > 0.0:
                layer_sums[:, j, :] = signed_atom_sums(lam)
        # product m collects layers j >= m, but only while it is alive
        common = np.cumsum(layer_sums[:, ::-1, :], axis=1)[:, ::-1, :]
        alive = edges[1:][None, :] <= cutoffs[:, None]
        incr += common * alive[None, :, :]

    if params.mu > 0.0:
        for m in range(M):
            lam = np.asarray([
                params.mu * exp_window_integral(params.kappa, mats[m], a,
                                                min(b, cutoffs[m]))
                for a, b in zip(edges[:-1], edges[1:])
            ])
            if lam.sum() > 0.0:
                incr[:, m, :] += signed_atom_sums(lam)

    return incr


def _diffusion_increments_chunk(params: ModelParams, edges: np.ndarray,
                                n_paths: int, rng: np.random.Generator,
                                L: np.ndarray) -> np.ndarray:
    mats = np.asarray(params.grid.maturities)
    cutoffs = mats - params.grid.trading_cutoff_lead
    var_scale = 2.0 * params.total_rate * params.jump_law.m2
    M = params.grid.n_products
    n_cells = edges.size - 1
    incr = np.empty((n_paths, M, n_cells))
    for c, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        sig = np.sqrt([
            var_scale * exp_window_integral(params.kappa, T_m, a, min(b, c_m))
            for T_m, c_m in zip(mats, cutoffs)
        ])
        z = rng.standard_normal((n_paths, M))
        incr[:, :, c] = (z @ L.T) * sig[None, :]
    return incr


def simulate_price_matrix(params: ModelParams, f0: InitialPrices,
                          grid_times: Sequence[float], n_paths: int,
                          master_seed: int,
                          generator: GeneratorName = "thinning") -> np.ndarray:
    """Prices of n_paths sessions at the grid times, shape (n_paths, M, n_grid).

    Equal in law to collecting :func:`simulate_batch` output, but vectorized
    across paths.  Paths are drawn in fixed chunks of 4096, chunk k from the
    stream (master_seed, spawn_key=(1, k)); output therefore depends only on
    (params, f0, grid, n_paths, master_seed, generator).
    """
    f0.check_grid(params.grid)
    grid_times = np.asarray(grid_times, dtype=float)
    if grid_times.ndim != 1 or grid_times.size == 0 or np.any(np.diff(grid_times) <= 0):
        raise ValueError("grid times must be nonempty and strictly increasing")
    if generator == "decomposition" and params.kappa == 0.0 and params.mu_c > 0.0:
        raise ValueError(
            "decomposition generator requires kappa > 0 when mu_c > 0 "
            "(layer intensities vanish); use the thinning generator"
        )
    edges, n_cells_through = _refined_cells(params, grid_times)
    L = _correlation_factor(params) if generator == "diffusion" else None

    M = params.grid.n_products
    out = np.empty((n_paths, M, grid_times.size))
    for start in range(0, n_paths, _CHUNK):
        stop = min(start + _CHUNK, n_paths)
        rng = batch_rng(master_seed, start // _CHUNK)
        if generator == "diffusion":
            incr = _diffusion_increments_chunk(params, edges, stop - start, rng, L)
        else:
            incr = _jump_increments_chunk(params, edges, stop - start, rng)
        levels = np.concatenate([np.zeros((stop - start, M, 1)),
                                 np.cumsum(incr, axis=2)], axis=2)
        out[start:stop] = f0.as_array()[None, :, None] \
            + levels[:, :, n_cells_through]
    return out


# ---------------------------------------------------------------------------
# Batch export
# ---------------------------------------------------------------------------

_MAGIC = b"ISPB"
_BINARY_VERSION = 1


def grid_batch_to_csv(paths: Iterable[GridPath], fh: io.TextIOBase) -> int:
    """Write a batch as columnar CSV (path_id, product, time, price).

    Times are session hours, prices EUR/MWh.  Returns the number of paths.
    """
    fh.write("path_id,product,time,price\n")
    count = 0
    for i, path in enumerate(paths):
        M, G = path.prices.shape
        block = np.empty((M * G, 4))
        block[:, 0] = i
        block[:, 1] = np.repeat(np.arange(1, M + 1), G)
        block[:, 2] = np.tile(path.grid_times, M)
        block[:, 3] = path.prices.reshape(-1)
        np.savetxt(fh, block, fmt=["%d", "%d", "%.10g", "%.10g"], delimiter=",")
        count += 1
    return count


def write_grid_binary(paths: Iterable[GridPath], fh: io.BufferedIOBase) -> int:
    """Write a batch in the compact binary layout.

    Header: magic b"ISPB", u32 version, u32 M, u32 grid length G, u64 path
    count, then G little-endian f64 grid times and M f64 initial prices.
    Body: per path, M*G f64 prices in product-major order.  The path count
    is back-filled after streaming, so fh must be seekable.
    """
    header_pos = fh.tell()
    count = 0
    first: GridPath | None = None
    for path in paths:
        if first is None:
            first = path
            M, G = path.prices.shape
            fh.write(_MAGIC)
            fh.write(struct.pack("<IIIQ", _BINARY_VERSION, M, G, 0))
            fh.write(np.asarray(path.grid_times, "<f8").tobytes())
            fh.write(np.asarray(first.f0.f0, "<f8").tobytes())
        fh.write(np.ascontiguousarray(path.prices, "<f8").tobytes())
        count += 1
    if first is None:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIIQ", _BINARY_VERSION, 0, 0, 0))
        return 0
    end = fh.tell()
    fh.seek(header_pos + 4)
    fh.write(struct.pack("<IIIQ", _BINARY_VERSION, *first.prices.shape, count))
    fh.seek(end)
    return count


def read_grid_binary(fh: io.BufferedIOBase) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read the binary layout of :func:`write_grid_binary`.

    Returns (grid_times, f0, prices) with prices of shape (n_paths, M, G).
    """
    magic = fh.read(4)
    if magic != _MAGIC:
        raise ValueError(f"not a grid batch file (magic {magic!r})")
    version, M, G, n_paths = struct.unpack("<IIIQ", fh.read(20))
    if version != _BINARY_VERSION:
        raise ValueError(f"unsupported grid batch version {version}")
    if M == 0:
        return np.empty(0), np.empty(0), np.empty((0, 0, 0))
    grid_times = np.frombuffer(fh.read(8 * G), "<f8")
    f0 = np.frombuffer(fh.read(8 * M), "<f8")
    body = np.frombuffer(fh.read(8 * n_paths * M * G), "<f8")
    return grid_times, f0, body.reshape(n_paths, M, G)
