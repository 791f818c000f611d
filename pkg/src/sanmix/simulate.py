"""Grouped datasets, synthetic benchmarks and forward simulation from the priors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import DecompositionError, cholesky_logdet, log_dirichlet
from .priors import FSAN, CapabilityError, FiSAN, _pick, truncated_sticks


@dataclass
class GroupedDataset:
    """Observations stored as one (N, d) array plus a group index per row.

    Rows of the same group are contiguous and groups appear in order 0..J-1.
    """

    y: np.ndarray
    group: np.ndarray
    names: list[str] = field(default_factory=list)
    columns: list[str] = field(default_factory=list)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2 or y.shape[0] == 0:
            raise ValueError("observations must form a non-empty (N, d) array")
        g = np.asarray(self.group, dtype=np.int64)
        if g.shape != (y.shape[0],):
            raise ValueError("group index must have one entry per observation")
        if np.any(np.diff(g) < 0) or g[0] != 0 or np.any(np.diff(g) > 1):
            raise ValueError("group index must be sorted and contiguous starting at 0")
        if not np.all(np.isfinite(y)):
            raise ValueError("observations must be finite")
        self.y, self.group = y, g
        if not self.names:
            self.names = [str(j + 1) for j in range(self.J)]
        if len(self.names) != self.J:
            raise ValueError("one name per group required")
        if not self.columns:
            self.columns = [f"y{i + 1}" for i in range(self.d)]
        if len(self.columns) != self.d:
            raise ValueError("one column name per dimension required")

    @classmethod
    def from_groups(cls, groups, names=None, columns=None) -> "GroupedDataset":
        arrays = [np.atleast_1d(np.asarray(g, dtype=float)) for g in groups]
        arrays = [a[:, None] if a.ndim == 1 else a for a in arrays]
        if any(a.shape[0] == 0 for a in arrays):
            raise ValueError("every group needs at least one observation")
        idx = np.concatenate([np.full(a.shape[0], j) for j, a in enumerate(arrays)])
        return cls(np.concatenate(arrays, axis=0), idx, list(names) if names else [], list(columns or []))

    @property
    def d(self) -> int:
        return self.y.shape[1]

    @property
    def N(self) -> int:
        return self.y.shape[0]

    @property
    def J(self) -> int:
        return int(self.group[-1]) + 1

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.group, minlength=self.J)

    def groups(self) -> list[np.ndarray]:
        return np.split(self.y, np.cumsum(self.sizes)[:-1])


@dataclass
class GroundTruth:
    S: np.ndarray  # (J,) distributional labels
    M: np.ndarray  # (N,) observational labels, aligned with dataset rows
    means: np.ndarray  # (n_atoms, d)
    covs: np.ndarray  # (n_atoms, d, d)
    weights: np.ndarray  # (n_dists, n_atoms)

    def group_density(self, group: int, points: np.ndarray) -> np.ndarray:
        """True density of a group at an (n, d) array of points."""
        from scipy.stats import multivariate_normal

        pts = np.asarray(points, dtype=float)
        pts = pts[:, None] if pts.ndim == 1 else pts
        w = self.weights[self.S[group]]
        out = np.zeros(pts.shape[0])
        for l in np.flatnonzero(w):
            out += w[l] * multivariate_normal(self.means[l], self.covs[l]).pdf(pts).reshape(-1)
        return out

    def to_dict(self) -> dict:
        return {
            "S": self.S.tolist(),
            "M": self.M.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GroundTruth":
        return cls(*(np.asarray(doc[k]) for k in ("S", "M", "means", "covs", "weights")))


# groups 1-2 -> f1, 3-4 -> f2, 5-6 -> f3
BENCHMARK_GROUP_DISTS = np.array([0, 0, 1, 1, 2, 2])
BENCHMARK_LOCATIONS = np.array([-5.0, -2.0, 2.0, 5.0, 0.0])
BENCHMARK_WEIGHTS = np.array(
    [
        [0.5, 0.5, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.5, 0.5, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0],
    ]
)


def _draw_benchmark(rng, means, covs, n_per_group) -> tuple[GroupedDataset, GroundTruth]:
    if n_per_group < 1:
        raise ValueError("n_per_group must be >= 1")
    chols = []
    for c in covs:
        try:
            chols.append(cholesky_logdet(c)[0])
        except DecompositionError as exc:
            raise ValueError(f"benchmark covariance is not positive definite: {exc}") from exc
    d = means.shape[1]
    ys, ms = [], []
    for dist in BENCHMARK_GROUP_DISTS:
        m = rng.choice(len(means), size=n_per_group, p=BENCHMARK_WEIGHTS[dist])
        z = rng.standard_normal((n_per_group, d))
        ys.append(means[m] + np.einsum("nij,nj->ni", np.stack(chols)[m], z))
        ms.append(m)
    data = GroupedDataset.from_groups(ys)
    truth = GroundTruth(BENCHMARK_GROUP_DISTS.copy(), np.concatenate(ms), means, covs, BENCHMARK_WEIGHTS.copy())
    return data, truth


def univariate_benchmark(n_per_group: int, rng: np.random.Generator) -> tuple[GroupedDataset, GroundTruth]:
    """Six groups, two from each of three Gaussian mixtures sharing five atoms (sd 0.6)."""
    means = BENCHMARK_LOCATIONS[:, None]
    covs = np.full((5, 1, 1), 0.6**2)
    return _draw_benchmark(rng, means, covs, n_per_group)


def band_correlation(d: int) -> np.ndarray:
    idx = np.arange(d)
    r = np.where(np.abs(idx[:, None] - idx[None, :]) < 2, 0.25, 0.0)
    np.fill_diagonal(r, 1.0)
    return r


def exchangeable_correlation(d: int, rho: float) -> np.ndarray:
    r = np.full((d, d), rho)
    np.fill_diagonal(r, 1.0)
    return r


def multivariate_benchmark(d: int, n_per_group: int, rng: np.random.Generator):
    """d-dimensional analogue of the univariate benchmark.

    Atoms at -5, -2, 2, 5 and 0 times the ones vector. Covariances are 0.2
    times a band matrix (first two atoms), an exchangeable 0.5 matrix (next
    two) and an exchangeable 0.85 matrix (central atom).
    """
    if not 2 <= d <= 10:
        raise ValueError("d must lie in 2..10")
    means = BENCHMARK_LOCATIONS[:, None] * np.ones((1, d))
    r1, r2, r3 = band_correlation(d), exchangeable_correlation(d, 0.5), exchangeable_correlation(d, 0.85)
    covs = 0.2 * np.stack([r1, r1, r2, r2, r3])
    return _draw_benchmark(rng, means, covs, n_per_group)


def prior_generative_sample(family, J: int, n_per_group: int, rng: np.random.Generator):
    """Draw distributional labels S (J,) and observational labels M (J, n) from the prior."""
    if isinstance(family, FiSAN):
        pi = truncated_sticks(rng, np.array([family.alpha]))[0]
    elif isinstance(family, FSAN):
        pi = np.exp(log_dirichlet(rng, np.full(family.K, family.a)))
    else:
        raise CapabilityError(f"forward simulation needs a SAN prior, got {type(family).__name__}")
    S = _pick(rng, np.broadcast_to(pi, (J, pi.size)))
    omega = np.exp(log_dirichlet(rng, np.full((pi.size, family.L), family.b)))
    M = np.stack([_pick(rng, np.broadcast_to(omega[k], (n_per_group, family.L))) for k in S])
    return S, M
