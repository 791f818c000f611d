"""Mean-field coordinate-ascent variational inference for SAN mixtures.

Two models share most of the machinery:

* ``fisan``: truncated stick-breaking distributional weights (truncation T)
  with a gamma hyperprior on the DP concentration;
* ``fsan``: finite Dirichlet_K distributional weights.

Both use Dirichlet_L(b) observational weights and normal-Wishart kernels.
Univariate data are handled as d = 1 with a Wishart(= gamma) precision.
"""

from __future__ import annotations

import copy
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Optional, Union

import numpy as np
from scipy import special

from .kernels import (
    LOG_2PI,
    DecompositionError,
    cholesky_logdet,
    spawn,
    spd_inverse,
    wishart_log_norm_entropy,
)
from .simulate import GroupedDataset

SCHEMA_VERSION = 1


class NumericalFailure(FloatingPointError):
    """A variational parameter left its admissible range."""

    def __init__(self, quantity: str, detail: str = ""):
        super().__init__(f"numerical failure in {quantity}" + (f": {detail}" if detail else ""))
        self.quantity = quantity


class FitError(RuntimeError):
    """Every restart failed."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class KernelPrior:
    """Normal-Wishart base measure NW(mean, kappa, dof, scale).

    Lambda ~ Wishart(scale, dof) with E[Lambda] = dof * scale and
    mu | Lambda ~ N(mean, (kappa Lambda)^-1).
    """

    mean: np.ndarray
    kappa: float
    dof: float
    scale: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.scale = np.atleast_2d(np.asarray(self.scale, dtype=float))
        d = self.mean.shape[0]
        if self.scale.shape != (d, d):
            raise ValueError("kernel prior scale must be d x d")
        if not self.kappa > 0:
            raise ValueError("kappa must be > 0")
        if not self.dof > d - 1:
            raise ValueError("dof must exceed d - 1")
        cholesky_logdet(self.scale)

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def from_nig(cls, mean: float, kappa: float, shape: float, rate: float) -> "KernelPrior":
        """Univariate normal-inverse-gamma prior on (mu, sigma^2) written as NW with d = 1.

        sigma^-2 ~ Gamma(shape, rate) equals Wishart_1(scale=1/(2 rate), dof=2 shape).
        """
        return cls(np.array([mean]), kappa, 2.0 * shape, np.array([[0.5 / rate]]))

    @classmethod
    def default(cls, d: int) -> "KernelPrior":
        if d == 1:
            return cls.from_nig(0.0, 0.01, 3.0, 2.0)
        return cls(np.zeros(d), 0.01, d + 5.0, np.eye(d))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "kappa": self.kappa, "dof": self.dof, "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "KernelPrior":
        return cls(np.asarray(doc["mean"]), doc["kappa"], doc["dof"], np.asarray(doc["scale"]))


def _check_sparsity(b: float, d: int):
    zeta = d + d * (d + 1) / 2
    if b >= zeta / 2:
        warnings.warn(f"b={b} is not below zeta/2={zeta / 2}; observational weights may not be sparse")


@dataclass
class FisanConfig:
    L: int = 25
    T: int = 20
    b: float = 0.05
    alpha_shape: float = 1.0
    alpha_rate: float = 1.0
    alpha_fixed: Optional[float] = None
    kernel: Optional[KernelPrior] = None
    init: str = "kmeans"

    model = "fisan"

    def __post_init__(self):
        if self.T < 1 or self.L < 1:
            raise ValueError("T and L must be >= 1")
        if not self.b > 0:
            raise ValueError("b must be > 0")
        if self.alpha_fixed is None:
            if not (self.alpha_shape > 0 and self.alpha_rate > 0):
                raise ValueError("alpha hyperprior needs positive shape and rate")
        elif not self.alpha_fixed > 0:
            raise ValueError("alpha_fixed must be > 0")
        if self.init not in ("kmeans", "random"):
            raise ValueError("init must be 'kmeans' or 'random'")

    @property
    def n_dist(self) -> int:
        return self.T


@dataclass
class FsanConfig:
    K: int = 20
    L: int = 25
    a: float = 0.05
    b: float = 0.05
    kernel: Optional[KernelPrior] = None
    init: str = "kmeans"

    model = "fsan"

    def __post_init__(self):
        if self.K < 1 or self.L < 1:
            raise ValueError("K and L must be >= 1")
        if not (self.a > 0 and self.b > 0):
            raise ValueError("a and b must be > 0")
        if self.init not in ("kmeans", "random"):
            raise ValueError("init must be 'kmeans' or 'random'")

    @property
    def n_dist(self) -> int:
        return self.K


Config = Union[FisanConfig, FsanConfig]


def _kernel(config: Config, d: int) -> KernelPrior:
    kp = config.kernel if config.kernel is not None else KernelPrior.default(d)
    if kp.d != d:
        raise ValueError(f"kernel prior has dimension {kp.d}, data has {d}")
    return kp


# ---------------------------------------------------------------------------
# State
# ---------------------------------------------------------------------------


@dataclass
class VariationalState:
    model: str
    rho: np.ndarray  # (J, T) distributional responsibilities
    xi: np.ndarray  # (N, L) observational responsibilities
    p: np.ndarray  # (T, L) Dirichlet parameters of the observational weights
    m: np.ndarray  # (L, d)
    t: np.ndarray  # (L,)
    c: np.ndarray  # (L,)
    D: np.ndarray  # (L, d, d) Wishart scale
    a_bar: Optional[np.ndarray] = None  # (T-1,) stick Beta parameters
    b_bar: Optional[np.ndarray] = None
    s1: Optional[float] = None  # Gamma(s1, s2) on alpha
    s2: Optional[float] = None
    p_tilde: Optional[np.ndarray] = None  # (K,) fSAN distributional Dirichlet
    elbo_trace: list = field(default_factory=list)

    def copy(self) -> "VariationalState":
        trace, self.elbo_trace = self.elbo_trace, []
        try:
            out = copy.deepcopy(self)
        finally:
            self.elbo_trace = trace
        out.elbo_trace = list(trace)
        return out

    def to_dict(self) -> dict:
        doc = {"schema_version": SCHEMA_VERSION, "model": self.model}
        for name in ("rho", "xi", "p", "m", "t", "c", "D", "a_bar", "b_bar", "p_tilde"):
            val = getattr(self, name)
            doc[name] = None if val is None else np.asarray(val).tolist()
        doc["s1"], doc["s2"] = self.s1, self.s2
        doc["elbo_trace"] = [float(v) for v in self.elbo_trace]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "VariationalState":
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported state schema version {version!r}")
        arr = {
            k: (None if doc[k] is None else np.asarray(doc[k], dtype=float))
            for k in ("rho", "xi", "p", "m", "t", "c", "D", "a_bar", "b_bar", "p_tilde")
        }
        return cls(model=doc["model"], s1=doc["s1"], s2=doc["s2"], elbo_trace=list(doc["elbo_trace"]), **arr)


def _group_starts(data: GroupedDataset) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(data.sizes)[:-1]])


def _group_sums(xi: np.ndarray, data: GroupedDataset) -> np.ndarray:
    """(J, L) sums of observational responsibilities within each group."""
    return np.add.reduceat(xi, _group_starts(data), axis=0)


def _normalize_log(logw: np.ndarray) -> np.ndarray:
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    return w / w.sum(axis=1, keepdims=True)


def _dirichlet_expect_log(p: np.ndarray) -> np.ndarray:
    """E[ln w] under Dirichlet(p), row-wise for 2-D input."""
    return special.digamma(p) - special.digamma(p.sum(axis=-1, keepdims=True))


def _stick_expect_log(a_bar, b_bar, T: int) -> tuple[np.ndarray, np.ndarray]:
    """(E ln pi_k for k < T+1, E ln(1 - v_k) for k < T) under the truncated Beta family."""
    tot = special.digamma(a_bar + b_bar)
    e_log_v = special.digamma(a_bar) - tot
    e_log_1mv = special.digamma(b_bar) - tot
    e_log_pi = np.append(e_log_v, 0.0) + np.concatenate([[0.0], np.cumsum(e_log_1mv)])
    return e_log_pi[:T], e_log_1mv


def _alpha_moments(state: VariationalState, config: FisanConfig) -> tuple[float, float]:
    """(E[alpha], E[ln alpha])."""
    if config.alpha_fixed is not None:
        return float(config.alpha_fixed), math.log(config.alpha_fixed)
    return state.s1 / state.s2, float(special.digamma(state.s1) - math.log(state.s2))


def _e_log_pi(state: VariationalState, config: Config) -> np.ndarray:
    if state.model == "fisan":
        return _stick_expect_log(state.a_bar, state.b_bar, config.T)[0]
    return _dirichlet_expect_log(state.p_tilde)


def _kernel_stats(state: VariationalState, data: GroupedDataset):
    """ln|D_l|, E ln|Lambda_l| and the (N, L) expected quadratic term.

    Returns (logdet_D, l1, l2) with l2[i, l] = -d/t_l - c_l (y_i - m_l)^T D_l (y_i - m_l).
    """
    d = data.d
    try:
        chol = np.linalg.cholesky(state.D)
    except np.linalg.LinAlgError:
        for l, dl in enumerate(state.D):
            try:
                cholesky_logdet(dl)
            except (DecompositionError, ValueError) as exc:
                raise NumericalFailure(f"D[{l}]", str(exc)) from exc
        raise
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    idx = np.arange(1, d + 1)
    l1 = special.digamma(0.5 * (state.c[:, None] - idx + 1)).sum(axis=1) + d * math.log(2.0) + logdet
    diff = data.y[:, None, :] - state.m[None, :, :]
    z = np.einsum("nld,ldk->nlk", diff, chol)
    quad = np.einsum("nlk,nlk->nl", z, z)
    l2 = -d / state.t[None, :] - state.c[None, :] * quad
    return logdet, l1, l2


def _check_positive(name: str, arr):
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise NumericalFailure(name, f"non-positive or non-finite value {arr.min()!r}")


# ---------------------------------------------------------------------------
# Coordinate updates
# ---------------------------------------------------------------------------


def update_rho(state: VariationalState, data: GroupedDataset, config: Config) -> None:
    h = _dirichlet_expect_log(state.p)  # (T, L)
    logw = _e_log_pi(state, config)[None, :] + _group_sums(state.xi, data) @ h.T
    state.rho = _normalize_log(logw)


def update_xi(state: VariationalState, data: GroupedDataset, config: Config) -> None:
    _, l1, l2 = _kernel_stats(state, data)
    h = _dirichlet_expect_log(state.p)
    logw = 0.5 * l1[None, :] + 0.5 * l2 + (state.rho @ h)[data.group]
    state.xi = _normalize_log(logw)


def update_omega(state: VariationalState, data: GroupedDataset, config: Config) -> None:
    state.p = config.b + state.rho.T @ _group_sums(state.xi, data)
    _check_positive("p", state.p)


def update_sticks(state: VariationalState, data: GroupedDataset, config: FisanConfig) -> None:
    e_alpha, _ = _alpha_moments(state, config)
    col = state.rho.sum(axis=0)
    tail = np.cumsum(col[::-1])[::-1]  # tail[k] = sum_{q >= k} col[q]
    T = config.T
    state.a_bar = 1.0 + col[: T - 1]
    state.b_bar = e_alpha + tail[1:T] if T > 1 else np.zeros(0)
    _check_positive("a_bar", state.a_bar) if T > 1 else None
    _check_positive("b_bar", state.b_bar) if T > 1 else None


def update_pi(state: VariationalState, data: GroupedDataset, config: FsanConfig) -> None:
    state.p_tilde = config.a + state.rho.sum(axis=0)
    _check_positive("p_tilde", state.p_tilde)


def update_kernels(state: VariationalState, data: GroupedDataset, config: Config) -> None:
    kp = _kernel(config, data.d)
    xi, y = state.xi, data.y
    n_l = xi.sum(axis=0)
    sum_y = xi.T @ y
    safe = np.where(n_l > 0, n_l, 1.0)
    ybar = sum_y / safe[:, None]
    # weighted scatter about ybar_l: sum_i xi_il y_i y_i^T - n_l ybar_l ybar_l^T
    second = np.einsum("nl,nd,ne->lde", xi, y, y)
    scatter = second - n_l[:, None, None] * ybar[:, :, None] * ybar[:, None, :]
    dev = ybar - kp.mean[None, :]
    shrink = (kp.kappa * n_l / (kp.kappa + n_l))[:, None, None] * dev[:, :, None] * dev[:, None, :]
    prec = spd_inverse(kp.scale)[None] + np.where(n_l[:, None, None] > 0, scatter + shrink, 0.0)
    prec = 0.5 * (prec + np.swapaxes(prec, 1, 2))
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        chol = None
    if chol is None:
        for l in range(prec.shape[0]):
            try:
                cholesky_logdet(prec[l])
            except (DecompositionError, ValueError) as exc:
                raise NumericalFailure(f"D[{l}]", str(exc)) from exc
        raise NumericalFailure("D", "kernel scale update is not positive definite")
    eye = np.broadcast_to(np.eye(data.d), prec.shape)
    inv_chol = np.linalg.solve(chol, eye)
    D = np.swapaxes(inv_chol, 1, 2) @ inv_chol
    state.t = kp.kappa + n_l
    state.c = kp.dof + n_l
    state.m = (kp.kappa * kp.mean[None, :] + sum_y) / state.t[:, None]
    state.D = 0.5 * (D + np.swapaxes(D, 1, 2))


def update_alpha(state: VariationalState, data: GroupedDataset, config: FisanConfig) -> None:
    if config.alpha_fixed is not None:
        return
    _, e_log_1mv = _stick_expect_log(state.a_bar, state.b_bar, config.T)
    state.s1 = config.alpha_shape + config.T - 1
    state.s2 = float(config.alpha_rate - e_log_1mv.sum())
    _check_positive("s2", state.s2)


def iterate(state: VariationalState, data: GroupedDataset, config: Config) -> VariationalState:
    """One full CAVI sweep; returns a new state (the input is left untouched)."""
    new = state.copy()
    update_rho(new, data, config)
    update_xi(new, data, config)
    update_omega(new, data, config)
    if new.model == "fisan":
        update_sticks(new, data, config)
        update_kernels(new, data, config)
        update_alpha(new, data, config)
    else:
        update_pi(new, data, config)
        update_kernels(new, data, config)
    return new


# ---------------------------------------------------------------------------
# ELBO
# ---------------------------------------------------------------------------


def _log_dir_norm_rows(p: np.ndarray) -> np.ndarray:
    return special.gammaln(p.sum(axis=-1)) - special.gammaln(p).sum(axis=-1)


def elbo_terms(state: VariationalState, data: GroupedDataset, config: Config) -> dict:
    """Every expectation entering the ELBO, keyed by name.

    Model-side terms are E_q[ln p(.)]; ``q_*`` entries are E_q[ln q(.)].
    """
    kp = _kernel(config, data.d)
    d, L = data.d, config.L
    n_dist = state.p.shape[0]
    logdet_D, l1, l2 = _kernel_stats(state, data)
    h = _dirichlet_expect_log(state.p)
    xg = _group_sums(state.xi, data)
    e_log_pi = _e_log_pi(state, config)
    out = {}

    out["likelihood"] = float((state.xi * (0.5 * l1[None, :] + 0.5 * l2 - 0.5 * d * LOG_2PI)).sum())
    out["allocations_obs"] = float((state.rho * (xg @ h.T)).sum())
    out["allocations_dist"] = float((state.rho * e_log_pi[None, :]).sum())

    if state.model == "fisan":
        e_alpha, e_log_alpha = _alpha_moments(state, config)
        _, e_log_1mv = _stick_expect_log(state.a_bar, state.b_bar, config.T)
        out["sticks"] = float((config.T - 1) * e_log_alpha + (e_alpha - 1.0) * e_log_1mv.sum())
    else:
        K, a = config.K, config.a
        out["dist_weights"] = float(
            special.gammaln(K * a) - K * special.gammaln(a) + (a - 1.0) * e_log_pi.sum()
        )

    b = config.b
    out["obs_weights"] = float(
        n_dist * (special.gammaln(L * b) - L * special.gammaln(b)) + (b - 1.0) * h.sum()
    )

    log_b0, _ = wishart_log_norm_entropy(kp.scale, kp.dof)
    scale_inv = spd_inverse(kp.scale)
    dev = state.m - kp.mean[None, :]
    quad_m = np.einsum("ld,lde,le->l", dev, state.D, dev)
    trace = np.einsum("de,led->l", scale_inv, state.D)
    out["kernels"] = float(
        L * log_b0
        + 0.5 * (kp.dof - d - 1) * l1.sum()
        - 0.5 * (state.c * trace).sum()
        + 0.5
        * (d * math.log(kp.kappa / (2 * math.pi)) + l1 - d * kp.kappa / state.t - kp.kappa * state.c * quad_m).sum()
    )

    if state.model == "fisan" and config.alpha_fixed is None:
        a_al, b_al = config.alpha_shape, config.alpha_rate
        out["alpha"] = float(
            a_al * math.log(b_al) - special.gammaln(a_al) + (a_al - 1.0) * e_log_alpha - b_al * e_alpha
        )

    out["q_obs_alloc"] = float(special.xlogy(state.xi, state.xi).sum())
    out["q_dist_alloc"] = float(special.xlogy(state.rho, state.rho).sum())
    if state.model == "fisan":
        ab, bb = state.a_bar, state.b_bar
        tot = special.digamma(ab + bb)
        out["q_sticks"] = float(
            (
                special.gammaln(ab + bb)
                - special.gammaln(ab)
                - special.gammaln(bb)
                + (ab - 1.0) * (special.digamma(ab) - tot)
                + (bb - 1.0) * (special.digamma(bb) - tot)
            ).sum()
        )
    else:
        pt = state.p_tilde
        out["q_dist_weights"] = float(_log_dir_norm_rows(pt) + ((pt - 1.0) * e_log_pi).sum())
    out["q_obs_weights"] = float(_log_dir_norm_rows(state.p).sum() + ((state.p - 1.0) * h).sum())
    # Wishart entropies, vectorized over components; l1 is E ln|Lambda_l|
    half_c = 0.5 * state.c
    log_mgamma = 0.25 * d * (d - 1) * math.log(math.pi) + special.gammaln(
        half_c[:, None] - 0.5 * np.arange(d)[None, :]
    ).sum(axis=1)
    log_b = -half_c * logdet_D - half_c * d * math.log(2.0) - log_mgamma
    ent_w = -log_b - 0.5 * (state.c - d - 1) * l1 + half_c * d
    out["q_kernels"] = float((0.5 * l1 + 0.5 * d * (np.log(state.t / (2 * math.pi)) - 1.0) - ent_w).sum())
    if state.model == "fisan" and config.alpha_fixed is None:
        s1, s2 = state.s1, state.s2
        out["q_alpha"] = float(math.log(s2) - special.gammaln(s1) + (s1 - 1.0) * special.digamma(s1) - s1)
    return out


def elbo(state: VariationalState, data: GroupedDataset, config: Config) -> float:
    terms = elbo_terms(state, data, config)
    return float(sum(v for k, v in terms.items() if not k.startswith("q_")) - sum(
        v for k, v in terms.items() if k.startswith("q_")
    ))


# ---------------------------------------------------------------------------
# Initialization and fitting
# ---------------------------------------------------------------------------


def _kmeanspp_centers(y: np.ndarray, L: int, rng: np.random.Generator) -> np.ndarray:
    n = y.shape[0]
    centers = [y[rng.integers(n)]]
    d2 = ((y - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, L):
        tot = d2.sum()
        idx = rng.choice(n, p=d2 / tot) if tot > 0 else rng.integers(n)
        centers.append(y[idx])
        d2 = np.minimum(d2, ((y - y[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def init_state(
    data: GroupedDataset, config: Config, rng: np.random.Generator, strategy: Optional[str] = None
) -> VariationalState:
    """Random starting point; global factors are then derived from the responsibilities.

    ``kmeans`` puts 0.95 of each observation's mass on the nearest of L
    k-means++ seeded centers; ``random`` draws every responsibility row from
    a flat Dirichlet.
    """
    strategy = strategy or config.init
    _check_sparsity(config.b, data.d)
    _kernel(config, data.d)
    L, n_dist = config.L, config.n_dist
    rho = rng.dirichlet(np.ones(n_dist), size=data.J)
    if strategy == "kmeans":
        centers = _kmeanspp_centers(data.y, L, rng)
        nearest = ((data.y[:, None, :] - centers[None]) ** 2).sum(axis=2).argmin(axis=1)
        xi = np.full((data.N, L), 0.05 / (L - 1) if L > 1 else 0.0)
        xi[np.arange(data.N), nearest] = 0.95 if L > 1 else 1.0
    elif strategy == "random":
        xi = rng.dirichlet(np.ones(L), size=data.N)
    else:
        raise ValueError(f"unknown init strategy {strategy!r}")

    d = data.d
    state = VariationalState(
        model=config.model,
        rho=rho,
        xi=xi,
        p=np.full((n_dist, L), config.b),
        m=np.zeros((L, d)),
        t=np.ones(L),
        c=np.full(L, d + 1.0),
        D=np.tile(np.eye(d), (L, 1, 1)),
    )
    update_omega(state, data, config)
    update_kernels(state, data, config)
    if config.model == "fisan":
        if config.alpha_fixed is None:
            state.s1, state.s2 = config.alpha_shape, config.alpha_rate
        update_sticks(state, data, config)
        update_alpha(state, data, config)
    else:
        update_pi(state, data, config)
    return state


@dataclass
class FitResult:
    state: VariationalState
    traces: list[list[float]]
    run_times: list[float]
    best_index: int
    failures: dict = field(default_factory=dict)


def run_restart(
    data: GroupedDataset,
    config: Config,
    rng: np.random.Generator,
    tol: float = 1e-4,
    max_iter: int = 1000,
) -> VariationalState:
    state = init_state(data, config, rng)
    state.elbo_trace = [elbo(state, data, config)]
    for _ in range(max_iter):
        state = iterate(state, data, config)
        value = elbo(state, data, config)
        state.elbo_trace.append(value)
        if value - state.elbo_trace[-2] < tol:
            break
    return state


def _timed_restart(data, config, tol, max_iter, child):
    start = time.perf_counter()
    try:
        state = run_restart(data, config, child, tol, max_iter)
    except NumericalFailure as exc:
        return None, str(exc), time.perf_counter() - start
    return state, None, time.perf_counter() - start


def fit(
    data: GroupedDataset,
    config: Config,
    rng: np.random.Generator,
    tol: float = 1e-4,
    max_iter: int = 1000,
    restarts: int = 1,
    workers: int = 1,
) -> FitResult:
    """Run ``restarts`` independent CAVI runs and keep the one with the highest final ELBO.

    Each restart owns a child generator spawned from ``rng``, so results do not
    depend on ``workers``; ties go to the lowest restart index.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    task = partial(_timed_restart, data, config, tol, max_iter)
    children = spawn(rng, restarts)
    if workers > 1:
        with ProcessPoolExecutor(min(workers, restarts)) as pool:
            outcomes = list(pool.map(task, children))
    else:
        outcomes = [task(c) for c in children]
    best, best_idx = None, -1
    traces, times, failures = [], [], {}
    for r, (state, err, elapsed) in enumerate(outcomes):
        times.append(elapsed)
        if state is None:
            failures[r] = err
            traces.append([])
            continue
        traces.append(list(state.elbo_trace))
        if best is None or state.elbo_trace[-1] > best.elbo_trace[-1]:
            best, best_idx = state, r
    if best is None:
        raise FitError(f"all {restarts} restarts failed: {failures}")
    return FitResult(best, traces, times, best_idx, failures)
