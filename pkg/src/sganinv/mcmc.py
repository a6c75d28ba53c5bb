"""Multi-chain differential-evolution MCMC with a past-state archive.

The sampler works in the latent space ``[-1, 1]^dim`` under a uniform
prior.  Proposals are differential-evolution jumps built from pairs of
archived states, with an occasional snooker jump; components that leave
the prior box are reflected back into it.  During burn-in the data
standard deviation is inflated and then relaxed to its nominal value.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .convnet import NetworkParams
from .flow import FlowModel, k_field_from_facies, observe, solve_heads
from .simulate import PostprocessSpec, generate

__all__ = [
    "InversionConfig",
    "ChainEnsemble",
    "log_likelihood",
    "conditioning_loglik",
    "conditioning_accuracy",
    "fold",
    "de_gamma",
    "propose",
    "metropolis_accept",
    "temper_sigma",
    "gelman_rubin",
    "run_dream",
    "LatentFlowModel",
    "run_inversion",
]

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class InversionConfig:
    n_chains: int = 8
    n_iterations: int = 1000
    sigma_e: float = 0.01
    sigma_x: float = 0.5
    conditioning: list = field(default_factory=list)  # ((row, col), facies code)
    T0: float = 10.0
    tau: float | None = None  # default burn_in / 5
    burn_in: int | None = None  # default 20 % of n_iterations
    archive_thin: int = 10
    archive_init_factor: int = 10
    snooker_prob: float = 0.1
    crossover: tuple = (1 / 3, 2 / 3, 1.0)
    n_pairs: int = 1
    unit_gamma_prob: float = 0.2
    jitter: float = 1e-6
    eps_std: float = 1e-6
    rhat_every: int | None = None
    sample_every: int | None = None
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.sigma_e <= 0 or self.sigma_x <= 0:
            raise ValueError("sigma_e and sigma_x must be positive")
        if self.T0 < 1:
            raise ValueError("T0 must be >= 1")
        if self.n_chains < 3:
            raise ValueError("need at least 3 chains")
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be >= 0")
        if self.archive_thin < 1 or self.n_pairs < 1:
            raise ValueError("archive_thin and n_pairs must be >= 1")
        if not 0 <= self.snooker_prob <= 1 or not 0 <= self.unit_gamma_prob <= 1:
            raise ValueError("probabilities must lie in [0, 1]")

    @property
    def burn_in_length(self) -> int:
        if self.burn_in is not None:
            return self.burn_in
        return int(0.2 * self.n_iterations)

    @property
    def tau_value(self) -> float:
        if self.tau is not None:
            return self.tau
        return max(self.burn_in_length / 5.0, 1.0)


# --- likelihoods -------------------------------------------------------------

def log_likelihood(simulated, observed, sigma: float) -> float:
    """Gaussian log-likelihood of uncorrelated residuals with constant ``sigma``."""
    sim = np.asarray(simulated, dtype=np.float64).ravel()
    obs = np.asarray(observed, dtype=np.float64).ravel()
    if sim.shape != obs.shape or sim.size == 0:
        raise ValueError(f"length mismatch: {sim.size} simulated vs {obs.size} observed")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return _gauss_ll(float(np.sum((obs - sim) ** 2)), sim.size, sigma)


def _gauss_ll(sse, n, sigma):
    return -0.5 * n * LOG_2PI - n * math.log(sigma) - 0.5 * sse / sigma**2


def _conditioning_residuals(grid, points):
    grid = np.asarray(grid)
    res = np.empty(len(points))
    for i, (cell, code) in enumerate(points):
        cell = tuple(int(c) for c in cell)
        if len(cell) != grid.ndim or any(not 0 <= c < n for c, n in zip(cell, grid.shape)):
            raise ValueError(f"conditioning point {cell} outside grid of shape {grid.shape}")
        res[i] = float(code) - float(grid[cell])
    return res


def conditioning_loglik(grid, points, sigma_x: float) -> float:
    """Gaussian log-likelihood of facies mismatches at the conditioning cells (0 if none)."""
    if not points:
        return 0.0
    res = _conditioning_residuals(grid, points)
    return _gauss_ll(float(res @ res), res.size, sigma_x)


def conditioning_accuracy(grid, points) -> float:
    """Fraction of conditioning cells whose facies is honoured."""
    if not points:
        return 1.0
    return float(np.mean(_conditioning_residuals(grid, points) == 0))


# --- proposals -------------------------------------------------------------------

def fold(x):
    """Reflect values back into ``[-1, 1]`` (period-4 reflection)."""
    y = np.mod(np.asarray(x, dtype=np.float64) + 1.0, 4.0)
    return np.where(y > 2.0, 4.0 - y, y) - 1.0


def de_gamma(n_pairs: int, d_eff: int) -> float:
    return 2.38 / math.sqrt(2.0 * n_pairs * d_eff)


def propose(x, archive, rng, config: InversionConfig | None = None):
    """Candidate state and log proposal-density correction (non-zero only for snooker jumps)."""
    cfg = config or InversionConfig()
    x = np.asarray(x, dtype=np.float64)
    archive = np.asarray(archive)
    dim = x.size
    m = archive.shape[0]
    if m < max(3, 2 * cfg.n_pairs):
        raise ValueError(f"archive holds {m} states; need at least {max(3, 2 * cfg.n_pairs)}")
    if rng.random() < cfg.snooker_prob:
        z, z1, z2 = archive[rng.choice(m, 3, replace=False)]
        u = x - z
        uu = float(u @ u)
        if uu > 0:
            gamma_s = rng.uniform(1.2, 2.2)
            cand = x + gamma_s * ((z1 - z2) @ u / uu) * u
            logc = (dim - 1) * (math.log(max(np.linalg.norm(cand - z), 1e-300)) - 0.5 * math.log(uu))
            return fold(cand), logc
    delta = int(rng.integers(1, cfg.n_pairs + 1))
    picks = archive[rng.choice(m, 2 * delta, replace=False)]
    diff = picks[:delta].sum(axis=0) - picks[delta:].sum(axis=0)
    cr = cfg.crossover[int(rng.integers(len(cfg.crossover)))]
    mask = rng.random(dim) < cr
    if not mask.any():
        mask[rng.integers(dim)] = True
    d_eff = int(mask.sum())
    gamma = 1.0 if rng.random() < cfg.unit_gamma_prob else de_gamma(delta, d_eff)
    e = rng.uniform(-cfg.jitter, cfg.jitter, size=dim)
    eps = rng.normal(0.0, cfg.eps_std, size=dim)
    step = (1.0 + e) * gamma * diff + eps
    cand = x.copy()
    cand[mask] += step[mask]
    return fold(cand), 0.0


def metropolis_accept(log_new: float, log_old: float, rng) -> bool:
    """Accept with probability ``min(1, exp(log_new - log_old))``; one uniform is always consumed."""
    u = rng.random()
    if log_new == -math.inf:
        if log_old == -math.inf:
            warnings.warn("both current and proposed log-posteriors are -inf; rejecting")
        return False
    if log_old == -math.inf:
        return True
    diff = log_new - log_old
    if diff >= 0:
        return True
    return u > 0 and math.log(u) < diff


def temper_sigma(t: int, config: InversionConfig) -> float:
    """Effective data standard deviation at iteration ``t`` (inflated only during burn-in)."""
    if t >= config.burn_in_length:
        return config.sigma_e
    return config.sigma_e * max(1.0, config.T0 * math.exp(-t / config.tau_value))


# --- diagnostics ---------------------------------------------------------------------

def gelman_rubin(traces) -> np.ndarray:
    """Potential scale reduction per dimension from ``(n_chains, n_samples, dim)`` traces.

    Only the second half of every trace is used.
    """
    traces = np.asarray(traces, dtype=np.float64)
    if traces.ndim == 2:
        traces = traces[..., None]
    n_chains, n_samples, _ = traces.shape
    half = traces[:, n_samples - n_samples // 2:, :]
    n = half.shape[1]
    if n_chains < 2 or n < 4:
        raise ValueError("need >= 2 chains with >= 4 retained samples each")
    w = half.var(axis=1, ddof=1).mean(axis=0)
    b_over_n = half.mean(axis=1).var(axis=0, ddof=1)
    var_plus = (n - 1) / n * w + b_over_n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / w)
    zero = w == 0
    if zero.any():
        warnings.warn("zero within-chain variance; R-hat reported as +inf")
        r[zero] = np.inf
    return r


# --- sampler ---------------------------------------------------------------------------

@dataclass
class ChainEnsemble:
    states: np.ndarray  # (n_chains, dim) current states
    archive: np.ndarray  # (m, dim)
    states_trace: np.ndarray  # (n_iter + 1, n_chains, dim)
    loglik_trace: np.ndarray  # data log-likelihood at nominal sigma (+ conditioning term)
    rmse_trace: np.ndarray
    accept_trace: np.ndarray
    cond_accuracy_trace: np.ndarray | None
    grids: list  # current realization of each chain (None for grid-free models)
    rhat_history: list = field(default_factory=list)  # (iteration, R-hat array)
    samples: list = field(default_factory=list)  # (iteration, chain, grid)
    events: list = field(default_factory=list)

    @property
    def n_chains(self) -> int:
        return self.states.shape[0]

    @property
    def acceptance_rate(self) -> np.ndarray:
        if self.accept_trace.shape[0] <= 1:
            return np.zeros(self.n_chains)
        return self.accept_trace[1:].mean(axis=0)

    def best_rmse(self) -> float:
        return float(np.nanmin(self.rmse_trace))


def _evaluate(model, theta, observed, points):
    sim, grid = model(theta)
    sim = np.asarray(sim, dtype=np.float64).ravel()
    if sim.shape != observed.shape:
        raise ValueError(f"model returned {sim.size} values for {observed.size} data")
    sse = float(np.sum((observed - sim) ** 2))
    cond_res = None
    if points:
        cond_res = _conditioning_residuals(grid, points)
    return sse, grid, cond_res


def run_dream(model, observed, dim: int, config: InversionConfig, progress=None) -> ChainEnsemble:
    """Sample the posterior of ``theta in [-1, 1]^dim``.

    ``model(theta)`` returns ``(simulated, grid)``; ``grid`` may be ``None``
    when no conditioning points are configured.
    """
    cfg = config
    observed = np.asarray(observed, dtype=np.float64).ravel()
    n_obs = observed.size
    points = list(cfg.conditioning)
    n_ch = cfg.n_chains
    T = cfg.n_iterations
    seeds = np.random.SeedSequence(cfg.seed).spawn(n_ch + 1)
    init_rng = np.random.default_rng(seeds[0])
    rngs = [np.random.default_rng(s) for s in seeds[1:]]

    n_init = max(cfg.archive_init_factor * dim, 3, 2 * cfg.n_pairs)
    capacity = n_init + n_ch * (T // cfg.archive_thin + 1)
    archive = np.empty((capacity, dim))
    archive[:n_init] = init_rng.uniform(-1.0, 1.0, size=(n_init, dim))
    m = n_init
    states = init_rng.uniform(-1.0, 1.0, size=(n_ch, dim))

    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None

    def evaluate_all(thetas):
        def one(th):
            try:
                return _evaluate(model, th, observed, points)
            except Exception as exc:  # forward failure -> rejected proposal
                return exc
        if pool is None:
            return [one(th) for th in thetas]
        return list(pool.map(one, thetas))

    ens = ChainEnsemble(
        states=states,
        archive=archive[:m],
        states_trace=np.empty((T + 1, n_ch, dim)),
        loglik_trace=np.empty((T + 1, n_ch)),
        rmse_trace=np.empty((T + 1, n_ch)),
        accept_trace=np.zeros((T + 1, n_ch), dtype=bool),
        cond_accuracy_trace=np.empty((T + 1, n_ch)) if points else None,
        grids=[None] * n_ch,
    )
    sse = np.full(n_ch, np.inf)
    cond_ll = np.zeros(n_ch)
    cond_acc = np.ones(n_ch)
    for i, res in enumerate(evaluate_all(list(states))):
        if isinstance(res, Exception):
            ens.events.append((0, i, f"initial forward failure: {res}"))
            log.warning("chain %d: initial forward failure: %s", i, res)
            continue
        sse[i], ens.grids[i], cres = res
        if cres is not None:
            cond_ll[i] = _gauss_ll(float(cres @ cres), cres.size, cfg.sigma_x)
            cond_acc[i] = float(np.mean(cres == 0))

    def record(t):
        ens.states_trace[t] = states
        with np.errstate(invalid="ignore"):
            ens.loglik_trace[t] = [
                (_gauss_ll(s, n_obs, cfg.sigma_e) if np.isfinite(s) else -np.inf) + c
                for s, c in zip(sse, cond_ll)
            ]
            ens.rmse_trace[t] = np.sqrt(sse / n_obs)
        if points:
            ens.cond_accuracy_trace[t] = cond_acc

    record(0)
    rhat_every = cfg.rhat_every or max(T // 50, 10)
    sample_every = cfg.sample_every or max(T // 20, 1)
    burn = cfg.burn_in_length

    for t in range(1, T + 1):
        sigma = temper_sigma(t - 1, cfg)
        current_archive = archive[:m]
        proposals = [propose(states[i], current_archive, rngs[i], cfg) for i in range(n_ch)]
        results = evaluate_all([p[0] for p in proposals])
        for i, ((cand, logc), res) in enumerate(zip(proposals, results)):
            if isinstance(res, Exception):
                ens.events.append((t, i, f"forward failure: {res}"))
                log.warning("iteration %d chain %d: forward failure: %s", t, i, res)
                rngs[i].random()  # keep the per-chain stream aligned
                continue
            new_sse, new_grid, cres = res
            new_cond = 0.0 if cres is None else _gauss_ll(float(cres @ cres), cres.size, cfg.sigma_x)
            lp_new = _gauss_ll(new_sse, n_obs, sigma) + new_cond + logc
            lp_old = (_gauss_ll(sse[i], n_obs, sigma) if np.isfinite(sse[i]) else -math.inf) + cond_ll[i]
            if metropolis_accept(lp_new, lp_old, rngs[i]):
                states[i] = cand
                sse[i] = new_sse
                cond_ll[i] = new_cond
                ens.grids[i] = new_grid
                if cres is not None:
                    cond_acc[i] = float(np.mean(cres == 0))
                ens.accept_trace[t, i] = True
        record(t)
        if t % cfg.archive_thin == 0:
            archive[m:m + n_ch] = states
            m += n_ch
        if t % rhat_every == 0 and t >= 8:
            ens.rhat_history.append((t, gelman_rubin(np.swapaxes(ens.states_trace[1:t + 1], 0, 1))))
        if t > burn and (t - burn) % sample_every == 0:
            for i in range(n_ch):
                if ens.grids[i] is not None:
                    ens.samples.append((t, i, np.array(ens.grids[i], copy=True)))
        if progress is not None:
            progress(t, ens)

    if pool is not None:
        pool.shutdown()
    ens.states = states
    ens.archive = archive[:m].copy()
    return ens


# --- latent-space groundwater inversion ---------------------------------------------------

class LatentFlowModel:
    """theta -> realization -> conductivity -> heads at the observation cells."""

    def __init__(self, generator: NetworkParams, flow_model: FlowModel, z_shape,
                 post: PostprocessSpec, k_mapping):
        self.generator = generator
        self.flow_model = flow_model
        self.z_shape = tuple(z_shape)
        self.post = post
        self.k_mapping = dict(k_mapping)
        if generator.in_channels != self.z_shape[0]:
            raise ValueError(
                f"latent has {self.z_shape[0]} channels, generator expects {generator.in_channels}"
            )

    @property
    def dim(self) -> int:
        return int(np.prod(self.z_shape))

    def realization(self, theta):
        return generate(self.generator, np.asarray(theta).reshape(self.z_shape), self.post)

    def __call__(self, theta):
        grid = self.realization(theta)
        if grid.shape != self.flow_model.shape:
            raise ValueError(f"realization shape {grid.shape} != flow grid {self.flow_model.shape}")
        k = k_field_from_facies(grid, self.k_mapping)
        heads = solve_heads(self.flow_model.with_k(k))
        return observe(heads, self.flow_model), grid


def run_inversion(config: InversionConfig, forward: LatentFlowModel, observed, progress=None) -> ChainEnsemble:
    observed = np.asarray(observed, dtype=np.float64).ravel()
    n_obs = len(forward.flow_model.observations)
    if observed.size != n_obs:
        raise ValueError(f"{observed.size} data values for {n_obs} observation points")
    return run_dream(forward, observed, forward.dim, config, progress)
