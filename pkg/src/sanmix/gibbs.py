"""Gibbs sampler for SAN mixtures.

fiSAN distributional weights use a slice sampler with the deterministic
sequence xi_k = 0.5^k, so each sweep only instantiates finitely many
components. Observational weights, allocations and normal-Wishart atoms are
updated from their full conditionals. All weights are kept in log space.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .cavi import Config, FisanConfig, FsanConfig, KernelPrior, _kernel
from .kernels import (
    categorical_from_log,
    log_dirichlet,
    sample_normal_wishart_many,
    spd_inverse,
)
from .simulate import GroupedDataset

LOG2 = math.log(2.0)
MAX_COMPONENTS = 1024
CHAIN_MAGIC = b"SANCHAIN"
CHAIN_VERSION = 1


class SliceOverflowError(RuntimeError):
    """The slice threshold asked for more components than the hard cap."""


@dataclass
class GibbsState:
    model: str
    S: np.ndarray  # (J,) distributional labels, 0-based
    M: np.ndarray  # (N,) observational labels, 0-based
    mu: np.ndarray  # (L, d)
    prec: np.ndarray  # (L, d, d)
    log_omega: np.ndarray  # (n_dist, L)
    log_pi: np.ndarray  # (n_dist,)
    alpha: Optional[float] = None
    log_u: Optional[np.ndarray] = None  # (J,) log slice variables
    K_star: int = 0
    log_1mv: Optional[np.ndarray] = None  # (K*,) ln(1 - v_k) of the stick proportions

    @property
    def n_dist(self) -> int:
        return self.log_pi.shape[0]


# ---------------------------------------------------------------------------
# Full conditionals
# ---------------------------------------------------------------------------


def _log_xi(k: np.ndarray) -> np.ndarray:
    """ln xi for 0-based component indices (xi_k = 0.5^(k+1))."""
    return -(np.asarray(k) + 1.0) * LOG2


def update_dist_weights(state: GibbsState, config: Config, rng) -> None:
    S = state.S
    if state.model == "fsan":
        counts = np.bincount(S, minlength=config.K)
        state.log_pi = log_dirichlet(rng, config.a + counts)
        state.K_star = config.K
        return
    state.log_u = _log_xi(S) + np.log(rng.random(S.shape[0]))
    # first index k (1-based) with xi_k < min u
    k_star = int(math.floor(-state.log_u.min() / LOG2)) + 1
    if k_star > MAX_COMPONENTS:
        raise SliceOverflowError(f"slice threshold needs {k_star} components (cap {MAX_COMPONENTS})")
    counts = np.bincount(S, minlength=k_star)[:k_star]
    greater = counts[::-1].cumsum()[::-1] - counts  # #{S_j > k}
    # Beta draws as ratios of gammas, kept in log space so that v near 1 stays exact
    g1 = _log_gamma_draw(rng, 1.0 + counts)
    g2 = _log_gamma_draw(rng, state.alpha + greater)
    tot = np.logaddexp(g1, g2)
    log_v, log_1mv = g1 - tot, g2 - tot
    state.log_pi = log_v + np.concatenate([[0.0], np.cumsum(log_1mv)[:-1]])
    state.log_1mv = log_1mv
    state.K_star = k_star


def _log_gamma_draw(rng, shape: np.ndarray) -> np.ndarray:
    """ln of Gamma(shape, 1) draws, finite even for tiny shapes."""
    return np.log(rng.standard_gamma(shape + 1.0)) + np.log(rng.random(np.shape(shape))) / shape


def occupancy(S: np.ndarray, M: np.ndarray, group: np.ndarray, n_dist: int, L: int) -> np.ndarray:
    """(n_dist, L) counts n_{l,k} of observations with label l in groups with label k."""
    out = np.zeros((n_dist, L))
    np.add.at(out, (S[group], M), 1.0)
    return out


def group_label_counts(M: np.ndarray, group: np.ndarray, J: int, L: int) -> np.ndarray:
    out = np.zeros((J, L))
    np.add.at(out, (group, M), 1.0)
    return out


def update_obs_weights(state: GibbsState, data: GroupedDataset, config: Config, rng) -> None:
    n = occupancy(state.S, state.M, data.group, state.n_dist, config.L)
    state.log_omega = log_dirichlet(rng, config.b + n)


def update_dist_labels(state: GibbsState, data: GroupedDataset, config: Config, rng) -> None:
    cnt = group_label_counts(state.M, data.group, data.J, config.L)
    logw = state.log_pi[None, :] + cnt @ state.log_omega.T
    if state.model == "fisan":
        lx = _log_xi(np.arange(state.n_dist))
        logw = np.where(state.log_u[:, None] < lx[None, :], logw - lx[None, :], -np.inf)
    state.S = categorical_from_log(rng, logw)


def log_kernel_matrix(y: np.ndarray, mu: np.ndarray, prec: np.ndarray) -> np.ndarray:
    """(N, L) matrix of ln N(y_i | mu_l, prec_l^-1)."""
    d = y.shape[1]
    chol = np.linalg.cholesky(prec)
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    z = np.einsum("nld,ldk->nlk", y[:, None, :] - mu[None], chol)
    return 0.5 * logdet[None, :] - 0.5 * d * math.log(2 * math.pi) - 0.5 * np.einsum("nlk,nlk->nl", z, z)


def update_obs_labels(state: GibbsState, data: GroupedDataset, config: Config, rng) -> None:
    logw = state.log_omega[state.S[data.group]] + log_kernel_matrix(data.y, state.mu, state.prec)
    state.M = categorical_from_log(rng, logw)


def update_alpha(state: GibbsState, data: GroupedDataset, config: FisanConfig, rng, method: str = "stick") -> None:
    """Concentration update.

    ``stick``: alpha | v_1..v_K* ~ Gamma(a + K*, b - sum ln(1 - v_k)).
    ``escobar_west``: auxiliary-variable draw given J and the number of
    occupied distributional clusters.
    """
    if config.alpha_fixed is not None:
        return
    a0, b0 = config.alpha_shape, config.alpha_rate
    if method == "stick":
        state.alpha = float(rng.gamma(a0 + state.K_star, 1.0 / (b0 - state.log_1mv.sum())))
    elif method == "escobar_west":
        J = state.S.shape[0]
        k = np.unique(state.S).size
        eta = rng.beta(state.alpha + 1.0, J)
        rate = b0 - math.log(eta)
        odds = (a0 + k - 1.0) / (J * rate)
        shape = a0 + k if rng.random() < odds / (1.0 + odds) else a0 + k - 1.0
        state.alpha = float(rng.gamma(shape, 1.0 / rate))
    else:
        raise ValueError(f"unknown alpha update {method!r}")


def posterior_kernel_params(y: np.ndarray, M: np.ndarray, L: int, kp: KernelPrior):
    """Conjugate normal-Wishart posterior parameters for every component."""
    d = y.shape[1]
    n = np.bincount(M, minlength=L).astype(float)
    sums = np.zeros((L, d))
    np.add.at(sums, M, y)
    ybar = sums / np.where(n > 0, n, 1.0)[:, None]
    centered = y - ybar[M]
    scatter = np.zeros((L, d, d))
    np.add.at(scatter, M, centered[:, :, None] * centered[:, None, :])
    dev = ybar - kp.mean
    shrink = (kp.kappa * n / (kp.kappa + n))[:, None, None] * dev[:, :, None] * dev[:, None, :]
    scale_inv = spd_inverse(kp.scale)[None] + scatter + shrink
    scale_inv = 0.5 * (scale_inv + np.swapaxes(scale_inv, 1, 2))
    kappa_n = kp.kappa + n
    mean_n = (kp.kappa * kp.mean + sums) / kappa_n[:, None]
    return mean_n, kappa_n, kp.dof + n, np.linalg.inv(scale_inv)


def update_atoms(state: GibbsState, data: GroupedDataset, config: Config, rng) -> None:
    kp = _kernel(config, data.d)
    mean_n, kappa_n, dof_n, scale_n = posterior_kernel_params(data.y, state.M, config.L, kp)
    state.mu, state.prec = sample_normal_wishart_many(rng, mean_n, kappa_n, dof_n, scale_n)


def log_likelihood(state: GibbsState, data: GroupedDataset) -> float:
    mu, prec = state.mu[state.M], state.prec[state.M]
    chol = np.linalg.cholesky(prec)
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    z = np.einsum("nd,ndk->nk", data.y - mu, chol)
    return float((0.5 * logdet - 0.5 * data.d * math.log(2 * math.pi) - 0.5 * (z * z).sum(axis=1)).sum())


def sweep(
    state: GibbsState, data: GroupedDataset, config: Config, rng, alpha_update: str = "stick"
) -> GibbsState:
    """One scan: weights, allocations, concentration, atoms (updates ``state`` in place)."""
    update_dist_weights(state, config, rng)
    update_obs_weights(state, data, config, rng)
    update_dist_labels(state, data, config, rng)
    update_obs_labels(state, data, config, rng)
    if state.model == "fisan":
        update_alpha(state, data, config, rng, alpha_update)
    update_atoms(state, data, config, rng)
    return state


# ---------------------------------------------------------------------------
# Initialization and chains
# ---------------------------------------------------------------------------


def _prior_atoms(kp: KernelPrior, L: int, rng):
    return sample_normal_wishart_many(
        rng, np.tile(kp.mean, (L, 1)), np.full(L, kp.kappa), np.full(L, kp.dof), np.tile(kp.scale, (L, 1, 1))
    )


def init_chain(data: GroupedDataset, config: Config, rng) -> GibbsState:
    """Uniform labels, atoms from the base measure, weights from their priors."""
    kp = _kernel(config, data.d)
    L = config.L
    n_dist = config.n_dist
    S = rng.integers(n_dist, size=data.J)
    M = rng.integers(L, size=data.N)
    mu, prec = _prior_atoms(kp, L, rng)
    alpha = None
    if config.model == "fisan":
        alpha = config.alpha_fixed if config.alpha_fixed is not None else float(
            rng.gamma(config.alpha_shape, 1.0 / config.alpha_rate)
        )
        log_pi = np.full(n_dist, -math.log(n_dist))
    else:
        log_pi = log_dirichlet(rng, np.full(n_dist, config.a))
    log_omega = log_dirichlet(rng, np.full((n_dist, L), config.b))
    return GibbsState(config.model, S, M, mu, prec, log_omega, log_pi, alpha, None, n_dist)


@dataclass
class ChainStore:
    """Thinned Gibbs draws.

    ``group_weights[s, j]`` holds the observational weights of the
    distribution assigned to group j in draw s.
    """

    S: np.ndarray  # (n_draws, J)
    M: np.ndarray  # (n_draws, N)
    alpha: np.ndarray  # (n_draws,)
    n_components: np.ndarray  # (n_draws,) instantiated distributional components
    group_weights: np.ndarray  # (n_draws, J, L)
    mu: np.ndarray  # (n_draws, L, d)
    prec: np.ndarray  # (n_draws, L, d, d)
    loglik: np.ndarray  # (iterations,) every iteration
    meta: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.S.shape[0]

    def columns(self) -> dict[str, np.ndarray]:
        """Flattened float64 columns, one per tracked scalar."""
        cols = {"alpha": self.alpha, "n_components": self.n_components.astype(float)}
        n = self.n_draws
        for name in ("S", "M", "group_weights", "mu", "prec"):
            arr = getattr(self, name).reshape(n, -1).astype(float)
            for i in range(arr.shape[1]):
                cols[f"{name}[{i}]"] = arr[:, i]
        return cols

    def save(self, path) -> tuple[Path, Path]:
        """Write the columnar binary file and its JSON sidecar (``<path>.json``)."""
        path = Path(path)
        cols = self.columns()
        n = self.n_draws
        with open(path, "wb") as fh:
            fh.write(CHAIN_MAGIC)
            fh.write(struct.pack("<IQQ", CHAIN_VERSION, n, len(cols)))
            for col in cols.values():
                fh.write(np.ascontiguousarray(col, dtype="<f8").tobytes())
        shapes = {k: list(getattr(self, k).shape) for k in ("S", "M", "group_weights", "mu", "prec")}
        side = {
            "format": "sanmix-chain",
            "version": CHAIN_VERSION,
            "n_draws": n,
            "columns": list(cols),
            "shapes": shapes,
            "loglik": [float(v) for v in self.loglik],
            "meta": self.meta,
        }
        side_path = path.with_name(path.name + ".json")
        side_path.write_text(json.dumps(side, indent=1, sort_keys=True))
        return path, side_path

    @classmethod
    def load(cls, path) -> "ChainStore":
        path = Path(path)
        side = json.loads(path.with_name(path.name + ".json").read_text())
        raw = path.read_bytes()
        if raw[:8] != CHAIN_MAGIC:
            raise ValueError(f"{path} is not a chain file")
        version, n, ncol = struct.unpack("<IQQ", raw[8:28])
        if version != CHAIN_VERSION:
            raise ValueError(f"unsupported chain version {version}")
        data = np.frombuffer(raw[28:], dtype="<f8").reshape(ncol, n)
        cols = dict(zip(side["columns"], data))
        shapes = side["shapes"]

        def block(name, dtype=float):
            keys = [k for k in side["columns"] if k.startswith(name + "[")]
            arr = np.stack([cols[k] for k in keys], axis=1) if keys else np.zeros((n, 0))
            return arr.reshape(shapes[name]).astype(dtype)

        return cls(
            S=block("S", np.int64),
            M=block("M", np.int64),
            alpha=cols["alpha"].copy(),
            n_components=cols["n_components"].astype(np.int64),
            group_weights=block("group_weights"),
            mu=block("mu"),
            prec=block("prec"),
            loglik=np.asarray(side["loglik"]),
            meta=side["meta"],
        )


def run(
    data: GroupedDataset,
    config: Config,
    iterations: int,
    burn_in: int,
    thinning: int,
    rng,
    alpha_update: str = "stick",
) -> ChainStore:
    if not iterations > burn_in >= 0:
        raise ValueError("need iterations > burn_in >= 0")
    if thinning < 1:
        raise ValueError("thinning must be >= 1")
    state = init_chain(data, config, rng)
    keep = [it for it in range(burn_in, iterations) if (it - burn_in) % thinning == 0]
    n_keep = len(keep)
    J, N, L, d = data.J, data.N, config.L, data.d
    store = ChainStore(
        S=np.zeros((n_keep, J), dtype=np.int64),
        M=np.zeros((n_keep, N), dtype=np.int64),
        alpha=np.full(n_keep, np.nan),
        n_components=np.zeros(n_keep, dtype=np.int64),
        group_weights=np.zeros((n_keep, J, L)),
        mu=np.zeros((n_keep, L, d)),
        prec=np.zeros((n_keep, L, d, d)),
        loglik=np.zeros(iterations),
        meta={
            "model": config.model,
            "iterations": iterations,
            "burn_in": burn_in,
            "thinning": thinning,
            "J": J,
            "N": N,
            "L": L,
            "d": d,
            "alpha_update": alpha_update,
        },
    )
    s = 0
    for it in range(iterations):
        sweep(state, data, config, rng, alpha_update)
        store.loglik[it] = log_likelihood(state, data)
        if it >= burn_in and (it - burn_in) % thinning == 0:
            store.S[s], store.M[s] = state.S, state.M
            store.alpha[s] = np.nan if state.alpha is None else state.alpha
            store.n_components[s] = state.n_dist
            store.group_weights[s] = np.exp(state.log_omega[state.S])
            store.mu[s], store.prec[s] = state.mu, state.prec
            s += 1
    return store


# ---------------------------------------------------------------------------
# Joint-distribution (Geweke) test harness
# ---------------------------------------------------------------------------


def _forward_draw(config: Config, group: np.ndarray, J: int, d: int, rng) -> tuple[GibbsState, np.ndarray]:
    """Parameters and data drawn from the prior predictive."""
    kp = _kernel(config, d)
    L = config.L
    alpha = None
    if config.model == "fisan":
        from .priors import truncated_sticks

        alpha = config.alpha_fixed if config.alpha_fixed is not None else float(
            rng.gamma(config.alpha_shape, 1.0 / config.alpha_rate)
        )
        pi = truncated_sticks(rng, np.array([alpha]))[0]
        with np.errstate(divide="ignore"):
            log_pi = np.log(pi)
    else:
        log_pi = log_dirichlet(rng, np.full(config.K, config.a))
    S = categorical_from_log(rng, np.tile(log_pi, (J, 1)))
    log_omega = log_dirichlet(rng, np.full((log_pi.size, L), config.b))
    M = categorical_from_log(rng, log_omega[S[group]])
    mu, prec = _prior_atoms(kp, L, rng)
    state = GibbsState(config.model, S, M, mu, prec, log_omega, log_pi, alpha, None, log_pi.size)
    return state, _draw_data(state, rng)


def _draw_data(state: GibbsState, rng) -> np.ndarray:
    mu, prec = state.mu[state.M], state.prec[state.M]
    cov_chol = np.linalg.cholesky(np.linalg.inv(prec))
    z = rng.standard_normal(mu.shape)
    return mu + np.einsum("nij,nj->ni", cov_chol, z)


def geweke_statistics(state: GibbsState, y: np.ndarray, group: np.ndarray) -> dict[str, float]:
    stats = {
        "mu_0": float(state.mu[0, 0]),
        "mu_0_sq": float(state.mu[0, 0] ** 2),
        "prec_0": float(state.prec[0, 0, 0]),
        "y_mean": float(y[:, 0].mean()),
        "occupied_dist": float(np.unique(state.S).size),
        "occupied_obs": float(np.unique(state.M).size),
        "same_dist_01": float(state.S[0] == state.S[-1]),
        "same_obs_01": float(state.M[0] == state.M[1]),
        "M_0": float(state.M[0]),
        "S_0": float(state.S[0]),
    }
    if state.alpha is not None:
        stats["alpha"] = float(state.alpha)
    return stats


def successive_conditional_sample(
    config: Config,
    J: int,
    n_per_group: int,
    sweeps_per_rep: int,
    reps: int,
    rng,
    alpha_update: str = "stick",
) -> dict[str, dict[str, np.ndarray]]:
    """Draws of summary statistics from two simulators of the joint p(theta, y).

    ``prior``: independent forward draws. ``conditional``: a chain that
    alternates regenerating y | theta with ``sweeps_per_rep`` Gibbs sweeps of
    theta | y. Both tables map statistic name -> (reps,) array.
    """
    if J > 2 or n_per_group > 3 or config.L > 2 or (config.model == "fsan" and config.K > 2):
        raise ValueError("the joint-distribution test is meant for tiny configurations")
    d = 1 if config.kernel is None else config.kernel.d
    if d != 1:
        raise ValueError("the joint-distribution test runs with d = 1")
    group = np.repeat(np.arange(J), n_per_group)
    prior_rng, chain_rng = rng.spawn(2)

    prior: dict[str, list] = {}
    for _ in range(reps):
        st, y = _forward_draw(config, group, J, d, prior_rng)
        for k, v in geweke_statistics(st, y, group).items():
            prior.setdefault(k, []).append(v)

    cond: dict[str, list] = {}
    state, y = _forward_draw(config, group, J, d, chain_rng)
    if config.model == "fisan":
        state.S = state.S.astype(np.int64)
    for _ in range(reps):
        data = GroupedDataset(y, group)
        for _ in range(sweeps_per_rep):
            sweep(state, data, config, chain_rng, alpha_update)
        y = _draw_data(state, chain_rng)
        for k, v in geweke_statistics(state, y, group).items():
            cond.setdefault(k, []).append(v)
    return {
        "prior": {k: np.asarray(v) for k, v in prior.items()},
        "conditional": {k: np.asarray(v) for k, v in cond.items()},
    }


def batch_means_se(x: np.ndarray, n_batches: int = 50) -> float:
    """Standard error of the mean of a correlated sequence via batch means."""
    x = np.asarray(x, dtype=float)
    size = x.size // n_batches
    if size < 1:
        return float(x.std(ddof=1) / math.sqrt(x.size))
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


def geweke_zscores(table: dict, n_batches: int = 50) -> dict[str, float]:
    out = {}
    for name, prior_vals in table["prior"].items():
        cond_vals = table["conditional"][name]
        se_p = prior_vals.std(ddof=1) / math.sqrt(prior_vals.size)
        se_c = batch_means_se(cond_vals, n_batches)
        denom = math.hypot(se_p, se_c)
        out[name] = 0.0 if denom == 0 else float((prior_vals.mean() - cond_vals.mean()) / denom)
    return out
