"""Prior properties of shared-atoms nested priors and their competitors.

Closed forms for correlations, co-clustering probabilities and two-sample
partially exchangeable partition probability functions (pEPPF), plus
Monte Carlo and enumeration oracles used to check them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterator, Mapping, Union

import numpy as np
from scipy import special, stats


# ---------------------------------------------------------------------------
# Prior families
# ---------------------------------------------------------------------------


def _require_positive(obj, *names):
    for name in names:
        if not getattr(obj, name) > 0:
            raise ValueError(f"{type(obj).__name__}.{name} must be > 0")


def _require_count(obj, *names):
    for name in names:
        val = getattr(obj, name)
        if int(val) != val or val < 1:
            raise ValueError(f"{type(obj).__name__}.{name} must be an integer >= 1")


@dataclass(frozen=True)
class FiSAN:
    """Finite-infinite SAN: GEM(alpha) distributional weights, Dirichlet_L(b) observational weights."""

    alpha: float
    L: int
    b: float

    def __post_init__(self):
        _require_positive(self, "alpha", "b")
        _require_count(self, "L")


@dataclass(frozen=True)
class FSAN:
    """Finite SAN: Dirichlet_K(a) distributional weights, Dirichlet_L(b) observational weights."""

    a: float
    K: int
    L: int
    b: float

    def __post_init__(self):
        _require_positive(self, "a", "b")
        _require_count(self, "K", "L")


@dataclass(frozen=True)
class NDP:
    alpha: float
    beta: float

    def __post_init__(self):
        _require_positive(self, "alpha", "beta")


@dataclass(frozen=True)
class CAM:
    alpha: float
    beta: float

    def __post_init__(self):
        _require_positive(self, "alpha", "beta")


@dataclass(frozen=True)
class HHDP:
    alpha: float
    beta: float
    beta0: float

    def __post_init__(self):
        _require_positive(self, "alpha", "beta", "beta0")


PriorFamily = Union[FiSAN, FSAN, NDP, CAM, HHDP]


class CapabilityError(NotImplementedError):
    """The requested property is not available for this prior family."""


@dataclass(frozen=True)
class Fixed:
    value: float


@dataclass(frozen=True)
class GammaHyper:
    """Gamma(shape, rate) hyperprior."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("gamma hyperprior needs positive shape and rate")

    def ppf(self, u):
        return stats.gamma.ppf(u, self.shape, scale=1.0 / self.rate)


HyperPriorSpec = Union[Fixed, GammaHyper]


# ---------------------------------------------------------------------------
# Correlation and co-clustering
# ---------------------------------------------------------------------------


def correlation(family: PriorFamily) -> float:
    """Corr(G_j(A), G_j'(A)) for two random measures on the same set."""
    if isinstance(family, FiSAN):
        al, L, b = family.alpha, family.L, family.b
        return 1.0 - al * (L - 1) / (L * (al + 1) * (b + 1))
    if isinstance(family, FSAN):
        a, K, L, b = family.a, family.K, family.L, family.b
        return 1.0 - a * (K - 1) * (L - 1) / (L * (K * a + 1) * (b + 1))
    if isinstance(family, NDP):
        return 1.0 / (1.0 + family.alpha)
    if isinstance(family, CAM):
        al, be = family.alpha, family.beta
        return 1.0 - al / (1 + al) * be / (1 + 2 * be)
    if isinstance(family, HHDP):
        al, be, b0 = family.alpha, family.beta, family.beta0
        return 1.0 - al * b0 / ((al + 1) * (be + b0 + 1))
    raise TypeError(f"unknown prior family {family!r}")


def distributional_cocluster(family: PriorFamily) -> float:
    """P(G_j = G_j')."""
    if isinstance(family, FSAN):
        return (1 + family.a) / (1 + family.K * family.a)
    if isinstance(family, (FiSAN, NDP, CAM, HHDP)):
        return 1.0 / (1.0 + family.alpha)
    raise TypeError(f"unknown prior family {family!r}")


def cocluster_probs(family: PriorFamily) -> tuple[float, float]:
    """(P(G_j = G_j'), P(theta_ij = theta_i'j')) for the SAN families."""
    if isinstance(family, FiSAN):
        al, L, b = family.alpha, family.L, family.b
        obs = (L + al + L * (b + al * b)) / (L * (al + 1) * (L * b + 1))
        return distributional_cocluster(family), obs
    if isinstance(family, FSAN):
        a, K, L, b = family.a, family.K, family.L, family.b
        obs = (a * (L + K - 1) + L * (b + K * a * b + 1)) / (L * (K * a + 1) * (L * b + 1))
        return distributional_cocluster(family), obs
    raise CapabilityError(
        f"observational co-clustering is only available for SAN priors, not {type(family).__name__}"
    )


# ---------------------------------------------------------------------------
# Monte Carlo correlation
# ---------------------------------------------------------------------------


class TruncationError(RuntimeError):
    """Stick-breaking residual mass stayed above tolerance."""


def truncated_sticks(
    rng: np.random.Generator,
    conc: np.ndarray,
    tol: float = 1e-8,
    chunk: int = 32,
    max_atoms: int = 8192,
) -> np.ndarray:
    """GEM(conc) weights per row, extended until every residual mass < tol.

    Returns an (n, T) array; each row sums to 1 - residual.
    """
    conc = np.asarray(conc, dtype=float)
    n = conc.shape[0]
    blocks = []
    log_rest = np.zeros(n)
    total = 0
    while True:
        v = rng.beta(1.0, np.broadcast_to(conc[:, None], (n, chunk)))
        with np.errstate(divide="ignore"):
            log1m = np.log1p(-v)
        cum = log_rest[:, None] + np.concatenate([np.zeros((n, 1)), np.cumsum(log1m, axis=1)[:, :-1]], axis=1)
        blocks.append(v * np.exp(cum))
        log_rest = log_rest + log1m.sum(axis=1)
        total += chunk
        if np.all(log_rest < math.log(tol)):
            return np.concatenate(blocks, axis=1)
        if total >= max_atoms:
            raise TruncationError(
                f"residual stick mass {math.exp(log_rest.max()):.3g} > {tol} after "
                f"{total} atoms; increase max_atoms"
            )


def _pick(rng: np.random.Generator, weights: np.ndarray) -> np.ndarray:
    """Row-wise categorical draw from (possibly sub-normalized) weights."""
    cw = np.cumsum(weights, axis=1)
    u = rng.random(weights.shape[0]) * cw[:, -1]
    return np.minimum((cw < u[:, None]).sum(axis=1), weights.shape[1] - 1)


def _simulate_pairs(rng, family_name: str, params: dict, h: float, tol: float):
    """Draw (G_j(A), G_j'(A)) for a batch of independent prior realizations.

    ``params`` maps parameter names to per-pair arrays.
    """
    n = len(next(iter(params.values())))
    if family_name in ("FiSAN", "NDP", "CAM", "HHDP"):
        pi = truncated_sticks(rng, params["alpha"], tol)
        same = _pick(rng, pi) == _pick(rng, pi)
    else:  # FSAN
        K = int(params["K"][0])
        pi = rng.gamma(np.broadcast_to(params["a"][:, None], (n, K)) + 1.0)
        pi *= rng.random((n, K)) ** (1.0 / params["a"][:, None])
        same = _pick(rng, pi) == _pick(rng, pi)

    if family_name in ("FiSAN", "FSAN"):
        L = int(params["L"][0])
        b = params["b"][:, None]
        z = rng.random((n, L)) < h

        def omega():
            g = np.log(rng.gamma(np.broadcast_to(b + 1.0, (n, L)))) + np.log(rng.random((n, L))) / b
            return np.exp(g - special.logsumexp(g, axis=1, keepdims=True))

        w1, w2 = omega(), omega()
        x = (w1 * z).sum(axis=1)
        y = np.where(same, x, (w2 * z).sum(axis=1))
    elif family_name == "CAM":
        w1 = truncated_sticks(rng, params["beta"], tol)
        w2 = truncated_sticks(rng, params["beta"], tol)
        T = max(w1.shape[1], w2.shape[1])
        w1 = np.pad(w1, ((0, 0), (0, T - w1.shape[1])))
        w2 = np.pad(w2, ((0, 0), (0, T - w2.shape[1])))
        z = rng.random((n, T)) < h
        x = (w1 * z).sum(axis=1)
        y = np.where(same, x, (w2 * z).sum(axis=1))
    elif family_name == "NDP":
        be = params["beta"]
        x = rng.beta(be * h, be * (1 - h))
        y = np.where(same, x, rng.beta(be * h, be * (1 - h)))
    elif family_name == "HHDP":
        be, b0 = params["beta"], params["beta0"]
        g0 = rng.beta(b0 * h, b0 * (1 - h))
        g0 = np.clip(g0, 1e-300, 1 - 1e-16)
        x = rng.beta(be * g0, be * (1 - g0))
        y = np.where(same, x, rng.beta(be * g0, be * (1 - g0)))
    else:
        raise TypeError(family_name)
    return x, y


def mc_correlation(
    family: PriorFamily,
    hyperpriors: Mapping[str, HyperPriorSpec] | None,
    h: float,
    draws: int,
    rng: np.random.Generator,
    block: int = 250,
    tol: float = 1e-8,
) -> tuple[float, float]:
    """Monte Carlo estimate of the prior correlation under random hyperparameters.

    Hyperparameters are drawn ``draws // block`` times (Latin-hypercube
    stratified over their quantiles); each draw gets ``block`` independent
    realizations of (G_j(A), G_j'(A)), whose correlation is computed around
    the known mean H(A) = h. The estimate is the average of the per-draw
    correlations; the standard error is their standard deviation over
    sqrt(number of hyperparameter draws).
    """
    if draws < 10_000:
        raise ValueError("mc_correlation needs at least 1e4 draws")
    if not 0 < h < 1:
        raise ValueError("h must lie in (0, 1)")
    hyperpriors = dict(hyperpriors or {})
    n_outer = draws // block
    base = {k: float(v) for k, v in vars(family).items()}
    columns = {}
    for name, value in base.items():
        spec = hyperpriors.get(name)
        if isinstance(spec, GammaHyper):
            u = (rng.permutation(n_outer) + rng.random(n_outer)) / n_outer
            columns[name] = spec.ppf(u)
        elif isinstance(spec, Fixed):
            columns[name] = np.full(n_outer, float(spec.value))
        elif spec is None:
            columns[name] = np.full(n_outer, value)
        else:
            raise TypeError(f"unsupported hyperprior {spec!r}")
    unknown = set(hyperpriors) - set(base)
    if unknown:
        raise ValueError(f"{type(family).__name__} has no parameters {sorted(unknown)}")

    block_corr = np.empty(n_outer)
    per_batch = max(1, 8000 // block)
    name = type(family).__name__
    for start in range(0, n_outer, per_batch):
        stop = min(n_outer, start + per_batch)
        params = {k: np.repeat(v[start:stop], block) for k, v in columns.items()}
        x, y = _simulate_pairs(rng, name, params, h, tol)
        x = (x - h).reshape(stop - start, block)
        y = (y - h).reshape(stop - start, block)
        num = (x * y).sum(axis=1)
        den = np.sqrt((x * x).sum(axis=1) * (y * y).sum(axis=1))
        block_corr[start:stop] = num / den
    est = float(block_corr.mean())
    se = float(block_corr.std(ddof=1) / math.sqrt(n_outer))
    return est, se


def mean_correlation(family: PriorFamily, hyperpriors: Mapping[str, HyperPriorSpec]) -> float:
    """E[correlation] over the hyperprior by numerical quadrature (independent of simulation)."""
    from scipy import integrate

    random = {k: v for k, v in hyperpriors.items() if isinstance(v, GammaHyper)}
    fixed = {k: v.value for k, v in hyperpriors.items() if isinstance(v, Fixed)}
    fam = replace(family, **fixed) if fixed else family
    names = list(random)

    def integrand(*vals):
        dens = 1.0
        for nm, val in zip(names, vals):
            hp = random[nm]
            dens *= stats.gamma.pdf(val, hp.shape, scale=1.0 / hp.rate)
        return correlation(replace(fam, **dict(zip(names, vals)))) * dens

    if not names:
        return correlation(fam)
    if len(names) == 1:
        return integrate.quad(integrand, 0, np.inf)[0]
    if len(names) == 2:
        return integrate.dblquad(lambda y, x: integrand(x, y), 0, np.inf, 0, np.inf)[0]
    raise ValueError("at most two random hyperparameters supported")


# ---------------------------------------------------------------------------
# Partition probability functions
# ---------------------------------------------------------------------------


class InfeasiblePartitionError(ValueError):
    """Partition uses more blocks than the prior allows."""


@dataclass(frozen=True)
class TwoSampleCounts:
    """Per-cluster frequencies of two samples.

    ``n1[l]`` and ``n2[l]`` count the observations of sample 1 and 2 in
    cluster l; clusters with both counts zero are empty.
    """

    n1: tuple[int, ...]
    n2: tuple[int, ...]
    s0: int = field(init=False)
    s1: int = field(init=False)
    s2: int = field(init=False)

    def __post_init__(self):
        n1 = tuple(int(v) for v in self.n1)
        n2 = tuple(int(v) for v in self.n2)
        if len(n1) != len(n2):
            raise ValueError("n1 and n2 must have the same length")
        if any(v < 0 for v in n1 + n2):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "n1", n1)
        object.__setattr__(self, "n2", n2)
        object.__setattr__(self, "s0", sum(1 for a, b in zip(n1, n2) if a > 0 and b > 0))
        object.__setattr__(self, "s1", sum(1 for a, b in zip(n1, n2) if a > 0 and b == 0))
        object.__setattr__(self, "s2", sum(1 for a, b in zip(n1, n2) if a == 0 and b > 0))

    @property
    def N1(self) -> int:
        return sum(self.n1)

    @property
    def N2(self) -> int:
        return sum(self.n2)

    @property
    def s(self) -> int:
        return self.s0 + self.s1 + self.s2

    @classmethod
    def from_labels(cls, labels, N1: int) -> "TwoSampleCounts":
        """Counts from cluster labels of the pooled sample (sample 1 first)."""
        labels = list(labels)
        order = list(dict.fromkeys(labels))
        n1 = [sum(1 for v in labels[:N1] if v == c) for c in order]
        n2 = [sum(1 for v in labels[N1:] if v == c) for c in order]
        return cls(tuple(n1), tuple(n2))

    def canonical_labels(self) -> tuple[int, ...]:
        """A representative set partition of the pooled items.

        Block l receives the next n1[l] items of sample 1 and the next n2[l]
        items of sample 2; labels are then renumbered by first appearance.
        """
        lab1 = [l for l, c in enumerate(self.n1) for _ in range(c)]
        lab2 = [l for l, c in enumerate(self.n2) for _ in range(c)]
        return canonical_form(lab1 + lab2)


def canonical_form(labels) -> tuple[int, ...]:
    seen: dict = {}
    return tuple(seen.setdefault(v, len(seen)) for v in labels)


def _nonzero(counts) -> np.ndarray:
    arr = np.asarray(counts, dtype=float)
    return arr[arr > 0]


def dirichlet_eppf(counts, L: int, b: float) -> float:
    """Log EPPF of a symmetric Dirichlet_L(b) sample with the given block sizes."""
    n = _nonzero(counts)
    s, N = n.size, float(n.sum())
    if s > L:
        raise InfeasiblePartitionError(f"{s} blocks exceed L={L}")
    return float(
        special.gammaln(L + 1)
        - special.gammaln(L - s + 1)
        + special.gammaln(L * b)
        - s * special.gammaln(b)
        - special.gammaln(L * b + N)
        + special.gammaln(b + n).sum()
    )


def dp_eppf(counts, beta: float) -> float:
    """Log Ewens EPPF: beta^s Gamma(beta)/Gamma(beta+N) prod Gamma(n_l)."""
    n = _nonzero(counts)
    N = float(n.sum())
    return float(
        n.size * math.log(beta)
        + special.gammaln(beta)
        - special.gammaln(beta + N)
        + special.gammaln(n).sum()
    )


def correction_constant(s0: int, s1: int, s2: int, L: int) -> float:
    """Log of (L-s0-s1)!(L-s0-s2)! / (L!(L-s0-s1-s2)!)."""
    if min(s0, s1, s2) < 0 or s0 + s1 + s2 > L:
        raise InfeasiblePartitionError(f"counts ({s0}, {s1}, {s2}) infeasible for L={L}")
    lf = special.gammaln
    return float(lf(L - s0 - s1 + 1) + lf(L - s0 - s2 + 1) - lf(L + 1) - lf(L - s0 - s1 - s2 + 1))


def peppf_terms(family: PriorFamily, counts: TwoSampleCounts) -> tuple[float, float]:
    """Log contributions (exchangeable term, independence term) to the pEPPF.

    Each includes its mixing weight; the pEPPF is the sum of their exponentials.
    """
    pooled = np.add(counts.n1, counts.n2)
    if isinstance(family, (FiSAN, FSAN)):
        L, b = family.L, family.b
        if isinstance(family, FiSAN):
            w_same = 1.0 / (family.alpha + 1.0)
        else:
            w_same = (1.0 + family.a) / (1.0 + family.K * family.a)
        w_diff = 1.0 - w_same
        same = math.log(w_same) + dirichlet_eppf(pooled, L, b)
        if w_diff <= 0:
            return same, -math.inf
        diff = (
            math.log(w_diff)
            + correction_constant(counts.s0, counts.s1, counts.s2, L)
            + dirichlet_eppf(counts.n1, L, b)
            + dirichlet_eppf(counts.n2, L, b)
        )
        return same, diff
    if isinstance(family, NDP):
        al, be = family.alpha, family.beta
        same = -math.log1p(al) + dp_eppf(pooled, be)
        if counts.s0 > 0:
            return same, -math.inf
        diff = math.log(al) - math.log1p(al) + dp_eppf(counts.n1, be) + dp_eppf(counts.n2, be)
        return same, diff
    raise CapabilityError(f"pEPPF not implemented for {type(family).__name__}")


def peppf(family: PriorFamily, counts: TwoSampleCounts) -> float:
    """Log pEPPF of a two-sample partition for fiSAN, fSAN or nDP."""
    return float(np.logaddexp(*peppf_terms(family, counts)))


# ---------------------------------------------------------------------------
# Enumeration and simulation oracles
# ---------------------------------------------------------------------------


def set_partitions(n: int, max_blocks: int | None = None) -> Iterator[tuple[int, ...]]:
    """All set partitions of n items as restricted growth strings."""
    cap = n if max_blocks is None else max_blocks

    def rec(prefix, nblocks):
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for lab in range(min(nblocks + 1, cap)):
            prefix.append(lab)
            yield from rec(prefix, max(nblocks, lab + 1))
            prefix.pop()

    if n == 0:
        yield ()
        return
    yield from rec([], 0)


@lru_cache(maxsize=None)
def _partitions_cached(n: int, cap: int) -> tuple[tuple[int, ...], ...]:
    return tuple(set_partitions(n, cap))


def enumerate_shapes(family: PriorFamily, N1: int, N2: int) -> list[TwoSampleCounts]:
    """Every two-sample set partition feasible under the family, one entry each."""
    cap = family.L if isinstance(family, (FiSAN, FSAN)) else N1 + N2
    return [TwoSampleCounts.from_labels(lab, N1) for lab in _partitions_cached(N1 + N2, cap)]


def peppf_total_mass(family: PriorFamily, N1: int, N2: int) -> float:
    """Sum of the pEPPF over every set partition of the N1 + N2 items."""
    if N1 + N2 > 8 or (isinstance(family, (FiSAN, FSAN)) and family.L > 6):
        raise MemoryError("enumeration limited to N1 + N2 <= 8 and L <= 6")
    logs = [peppf(family, c) for c in enumerate_shapes(family, N1, N2)]
    return float(np.exp(special.logsumexp(logs)))


def _simulate_allocations(rng, family: PriorFamily, N1: int, N2: int, reps: int) -> np.ndarray:
    """Pooled observational labels (reps, N1 + N2) drawn forward from the prior."""
    if isinstance(family, FiSAN):
        pi = truncated_sticks(rng, np.full(reps, family.alpha))
    elif isinstance(family, FSAN):
        pi = rng.dirichlet(np.full(family.K, family.a), size=reps)
    else:
        raise CapabilityError(f"forward simulation not implemented for {type(family).__name__}")
    same = _pick(rng, pi) == _pick(rng, pi)
    L, b = family.L, family.b
    w1 = np.exp(_log_dirichlet_rows(rng, b, reps, L))
    w2 = np.exp(_log_dirichlet_rows(rng, b, reps, L))
    w2 = np.where(same[:, None], w1, w2)
    m1 = np.stack([_pick(rng, w1) for _ in range(N1)], axis=1) if N1 else np.empty((reps, 0), int)
    m2 = np.stack([_pick(rng, w2) for _ in range(N2)], axis=1) if N2 else np.empty((reps, 0), int)
    return np.concatenate([m1, m2], axis=1)


def _log_dirichlet_rows(rng, b: float, n: int, L: int) -> np.ndarray:
    g = np.log(rng.gamma(b + 1.0, size=(n, L))) + np.log(rng.random((n, L))) / b
    return g - special.logsumexp(g, axis=1, keepdims=True)


def _canonical_rows(labels: np.ndarray) -> np.ndarray:
    """Relabel each row by order of first appearance (vectorized)."""
    reps, n = labels.shape
    out = np.zeros_like(labels)
    rows = np.arange(reps)
    for i in range(1, n):
        earlier = labels[:, :i] == labels[:, i : i + 1]
        first = np.argmax(earlier, axis=1)
        out[:, i] = np.where(earlier.any(axis=1), out[rows, first], out[:, :i].max(axis=1) + 1)
    return out


def generative_partition_frequencies(
    family: PriorFamily, N1: int, N2: int, reps: int, rng: np.random.Generator
) -> dict[tuple[int, ...], float]:
    """Empirical frequency of every induced set partition over ``reps`` prior draws."""
    canon = _canonical_rows(_simulate_allocations(rng, family, N1, N2, reps))
    uniq, cnt = np.unique(canon, axis=0, return_counts=True)
    return {tuple(int(v) for v in row): c / reps for row, c in zip(uniq, cnt)}


def generative_peppf_frequency(
    family: PriorFamily, counts: TwoSampleCounts, reps: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Forward-simulation frequency of the partition described by ``counts``."""
    if reps < 10_000:
        raise ValueError("need at least 1e4 repetitions")
    freqs = generative_partition_frequencies(family, counts.N1, counts.N2, reps, rng)
    p = freqs.get(counts.canonical_labels(), 0.0)
    return p, math.sqrt(max(p * (1 - p), 1.0 / reps) / reps)
