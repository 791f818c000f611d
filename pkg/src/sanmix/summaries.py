"""Partition point estimates, density estimates, ARI/KL metrics and chain relabeling."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import special
from scipy.optimize import linear_sum_assignment

from .cavi import VariationalState
from .gibbs import ChainStore
from .kernels import spd_inverse


@dataclass
class Partition:
    labels: np.ndarray
    level: str = "observational"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if self.level not in ("distributional", "observational"):
            raise ValueError("level must be 'distributional' or 'observational'")

    def canonical(self) -> "Partition":
        """Labels renumbered 0, 1, ... by order of first appearance."""
        _, first, inv = np.unique(self.labels, return_index=True, return_inverse=True)
        rank = np.argsort(np.argsort(first))
        return Partition(rank[inv], self.level)

    @property
    def n_clusters(self) -> int:
        return int(np.unique(self.labels).size)

    def __len__(self):
        return self.labels.size


@dataclass
class DensityGrid:
    grid: np.ndarray  # (G,) for d = 1 or (G, d)
    values: np.ndarray  # (G,)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != self.grid.shape[0]:
            raise ValueError("one density value per grid point required")
        if np.any(self.values < 0):
            raise ValueError("densities must be non-negative")

    def mass(self) -> float:
        """Trapezoid integral (d = 1 grids only)."""
        if self.grid.ndim != 1:
            raise ValueError("mass is defined for one-dimensional grids")
        return float(np.trapezoid(self.values, self.grid))


# ---------------------------------------------------------------------------
# Partitions
# ---------------------------------------------------------------------------


def vi_partition(state: VariationalState) -> tuple[Partition, Partition]:
    """Row-wise argmax of the responsibilities; ties go to the lowest index."""
    return (
        Partition(np.argmax(state.rho, axis=1), "distributional"),
        Partition(np.argmax(state.xi, axis=1), "observational"),
    )


def psm(chains, level: str = "observational") -> np.ndarray:
    """Posterior similarity matrix from a ChainStore or an (n_draws, n) label array."""
    if isinstance(chains, ChainStore):
        labels = chains.S if level == "distributional" else chains.M
    else:
        labels = np.asarray(chains)
    labels = np.atleast_2d(labels)
    if labels.shape[0] < 1:
        raise ValueError("need at least one draw")
    n = labels.shape[1]
    out = np.zeros((n, n))
    for row in labels:
        onehot = (row[:, None] == np.unique(row)[None, :]).astype(float)
        out += onehot @ onehot.T
    return out / labels.shape[0]


def mcmc_partition(sim: np.ndarray, level: str = "observational") -> Partition:
    """Greedy agglomerative minimization of Binder loss (equal costs).

    Starting from singletons, repeatedly merges the pair of clusters with the
    largest positive sum of (psm - 0.5) over their cross pairs; stops when no
    merge lowers the loss.
    """
    sim = np.asarray(sim, dtype=float)
    n = sim.shape[0]
    if sim.shape != (n, n):
        raise ValueError("similarity matrix must be square")
    gain = sim - 0.5
    np.fill_diagonal(gain, -np.inf)
    alive = np.ones(n, dtype=bool)
    members = [[i] for i in range(n)]
    best_val = gain.max(axis=1)
    best_arg = gain.argmax(axis=1)
    while True:
        a = int(np.argmax(np.where(alive, best_val, -np.inf)))
        if not alive[a] or best_val[a] <= 0:
            break
        b = int(best_arg[a])
        a, b = min(a, b), max(a, b)
        gain[a, :] += gain[b, :]
        gain[:, a] += gain[:, b]
        gain[a, a] = -np.inf
        gain[b, :] = -np.inf
        gain[:, b] = -np.inf
        alive[b] = False
        best_val[b] = -np.inf
        members[a].extend(members[b])
        members[b] = []
        best_val[a] = gain[a].max()
        best_arg[a] = gain[a].argmax()
        stale = alive & ((best_arg == a) | (best_arg == b))
        stale[a] = False
        for r in np.flatnonzero(stale):
            best_val[r] = gain[r].max()
            best_arg[r] = gain[r].argmax()
        better = alive & (gain[:, a] > best_val)
        best_val[better] = gain[better, a]
        best_arg[better] = a
    labels = np.empty(n, dtype=np.int64)
    for lab, idx in enumerate(m for m in members if m):
        labels[idx] = lab
    return Partition(labels, level).canonical()


def ari(p, q) -> float:
    """Adjusted Rand index from the contingency table.

    Two single-cluster partitions score 1; otherwise a zero denominator gives 0.
    """
    a = np.asarray(p.labels if isinstance(p, Partition) else p).ravel()
    b = np.asarray(q.labels if isinstance(q, Partition) else q).ravel()
    if a.size != b.size:
        raise ValueError(f"partitions have different lengths ({a.size} vs {b.size})")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1.0)

    def comb2(x):
        return (x * (x - 1) / 2.0).sum()

    index = comb2(table)
    rows, cols = comb2(table.sum(axis=1)), comb2(table.sum(axis=0))
    total = a.size * (a.size - 1) / 2.0
    expected = rows * cols / total if total > 0 else 0.0
    max_index = 0.5 * (rows + cols)
    if max_index == expected:
        return 1.0 if rows == cols else 0.0
    return float((index - expected) / (max_index - expected))


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------


def _as_points(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    return g[:, None] if g.ndim == 1 else g


def _mixture_density(points, weights, means, precs) -> np.ndarray:
    """sum_l weights[l] N(points | means[l], precs[l]^-1) at (G, d) points."""
    from .gibbs import log_kernel_matrix

    keep = weights > 0
    logk = log_kernel_matrix(points, means[keep], precs[keep])
    return np.exp(special.logsumexp(logk + np.log(weights[keep])[None, :], axis=1))


def density_mcmc(chains: ChainStore, grid, group: int) -> DensityGrid:
    """Average over draws of the group's mixture density at the grid points."""
    pts = _as_points(grid)
    acc = np.zeros(pts.shape[0])
    for s in range(chains.n_draws):
        acc += _mixture_density(pts, chains.group_weights[s, group], chains.mu[s], chains.prec[s])
    return DensityGrid(np.asarray(grid, dtype=float), acc / chains.n_draws)


def vi_plugin_params(state: VariationalState) -> tuple[np.ndarray, np.ndarray]:
    """Plug-in means and precisions of every observational component.

    d = 1: the variance is the posterior mean of sigma^2, i.e. rate/(shape - 1)
    of the inverse-gamma with shape c/2 and rate 1/(2 D). d > 1: the
    covariance is E[Lambda]^-1 = (c D)^-1.
    """
    d = state.m.shape[1]
    if d == 1:
        shape = state.c / 2.0
        if np.any(shape <= 1):
            raise FloatingPointError("posterior variance undefined: inverse-gamma shape <= 1")
        var = (0.5 / state.D[:, 0, 0]) / (shape - 1.0)
        return state.m, (1.0 / var)[:, None, None]
    return state.m, state.c[:, None, None] * state.D


def vi_group_weights(state: VariationalState) -> np.ndarray:
    """(J, L) plug-in observational weights: Dirichlet means averaged over q(S_j)."""
    omega_hat = state.p / state.p.sum(axis=1, keepdims=True)
    return state.rho @ omega_hat


def density_vi(state: VariationalState, grid, group: int) -> DensityGrid:
    means, precs = vi_plugin_params(state)
    w = vi_group_weights(state)[group]
    return DensityGrid(np.asarray(grid, dtype=float), _mixture_density(_as_points(grid), w, means, precs))


def density_grid(y, n_points: int = 2000, pad_sd: float = 3.0) -> np.ndarray:
    """Equally spaced grid over the data range extended by ``pad_sd`` standard deviations."""
    y = np.asarray(y, dtype=float).ravel()
    sd = y.std()
    return np.linspace(y.min() - pad_sd * sd, y.max() + pad_sd * sd, n_points)


def kl_on_grid(f_true: DensityGrid, f_hat: DensityGrid) -> float:
    """Trapezoid approximation of KL(f_true || f_hat) on a shared 1-D grid."""
    if f_true.grid.shape != f_hat.grid.shape or not np.allclose(f_true.grid, f_hat.grid):
        raise ValueError("densities are evaluated on different grids")
    if f_true.grid.ndim != 1:
        raise ValueError("grid KL is for one-dimensional densities")
    p = f_true.values
    q = np.maximum(f_hat.values, 1e-300)
    integrand = special.xlogy(p, p) - special.xlogy(p, q)
    return float(np.trapezoid(integrand, f_true.grid))


def kl_monte_carlo(true_samples: np.ndarray, log_true, log_hat) -> float:
    """KL(f_true || f_hat) ~ mean of ln f_true - ln f_hat over draws from f_true."""
    x = np.asarray(true_samples, dtype=float)
    return float(np.mean(log_true(x) - np.maximum(log_hat(x), math.log(1e-300))))


# ---------------------------------------------------------------------------
# Relabeling
# ---------------------------------------------------------------------------


def relabel(chains: ChainStore, reference: np.ndarray) -> ChainStore:
    """Permute component indices of every draw to match reference atom means.

    Per draw, the components closest (total squared distance) to the R
    reference means take indices 0..R-1; the rest keep their relative order.
    Observational labels, weights and atoms are permuted consistently.
    """
    ref = np.asarray(reference, dtype=float)
    ref = ref[:, None] if ref.ndim == 1 else ref
    L = chains.mu.shape[1]
    if ref.shape[0] > L:
        raise ValueError("reference has more entries than components")
    out = replace(
        chains,
        M=chains.M.copy(),
        group_weights=chains.group_weights.copy(),
        mu=chains.mu.copy(),
        prec=chains.prec.copy(),
    )
    for s in range(chains.n_draws):
        cost = ((chains.mu[s][:, None, :] - ref[None, :, :]) ** 2).sum(axis=2)
        comp, slot = linear_sum_assignment(cost)
        order = np.empty(ref.shape[0], dtype=np.int64)
        order[slot] = comp
        rest = np.setdiff1d(np.arange(L), order)
        perm = np.concatenate([order, rest])  # new index i <- old component perm[i]
        inverse = np.argsort(perm)
        out.mu[s] = chains.mu[s][perm]
        out.prec[s] = chains.prec[s][perm]
        out.group_weights[s] = chains.group_weights[s][:, perm]
        out.M[s] = inverse[chains.M[s]]
    return out
