"""Special functions, small linear algebra and seeded sampling helpers.

Everything here works in log space where it matters. Functions accept
scalars or numpy arrays unless stated otherwise.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.typing import ArrayLike
from scipy import special
from scipy.linalg import lapack

LOG_2PI = math.log(2.0 * math.pi)


class DecompositionError(np.linalg.LinAlgError):
    """Raised when a Cholesky factorization meets a non-positive pivot."""

    def __init__(self, pivot: int):
        super().__init__(f"matrix is not positive definite (pivot {pivot} failed)")
        self.pivot = pivot


def _check_positive(x, name):
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError(f"{name} requires strictly positive arguments")
    return arr


def _two_prod(a, b):
    """a*b = p + e exactly (Dekker splitting)."""
    p = a * b
    c = 134217729.0  # 2^27 + 1
    ah = c * a - (c * a - a)
    bh = c * b - (c * b - b)
    al, bl = a - ah, b - bh
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def digamma(x: ArrayLike):
    """psi(x) for x > 0.

    Below 1 the value is psi(x + 1) - 1/x with the reciprocal and the final
    subtraction carried in compensated arithmetic, which keeps the absolute
    error under half an ulp where |psi| is huge.
    """
    arr = _check_positive(x, "digamma")
    out = np.atleast_1d(special.digamma(arr)).astype(float)
    flat = np.atleast_1d(arr)
    small = flat < 1.0
    if np.any(small):
        xs = flat[small]
        r = 1.0 / xs
        p, e = _two_prod(r, xs)
        r_lo = ((1.0 - p) - e) / xs  # 1/x = r + r_lo
        a = special.digamma(xs + 1.0)
        s = a - r
        bb = s - a
        err = (a - (s - bb)) + (-r - bb)  # TwoSum residual
        out[small] = s + (err - r_lo)
    out = out.reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


def log_gamma_fn(x: ArrayLike):
    """ln Gamma(x) for x > 0."""
    arr = _check_positive(x, "log_gamma_fn")
    out = special.gammaln(arr)
    return float(out) if out.ndim == 0 else out


def softmax_rows(logw: np.ndarray) -> np.ndarray:
    """Normalize unnormalized log weights row by row (max-shifted)."""
    shifted = logw - logw.max(axis=-1, keepdims=True)
    w = np.exp(shifted)
    w /= w.sum(axis=-1, keepdims=True)
    return w


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def cholesky_logdet(m: ArrayLike, sym_tol: float = 1e-12) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor and log-determinant of an SPD matrix.

    Raises ``DecompositionError`` carrying the (0-based) index of the first
    failing pivot when the matrix is not positive definite.
    """
    a = np.atleast_2d(np.asarray(m, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(np.abs(a).max(), 1.0)
    if np.abs(a - a.T).max() > sym_tol * scale:
        raise ValueError("matrix is not symmetric")
    factor, info = lapack.dpotrf(a, lower=1, clean=1)
    if info > 0:
        raise DecompositionError(info - 1)
    if info < 0:
        raise ValueError(f"invalid argument to dpotrf ({info})")
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor))))
    return factor, logdet


def spd_inverse(m: np.ndarray) -> np.ndarray:
    factor, _ = cholesky_logdet(m)
    inv_factor = lapack.dtrtri(factor, lower=1)[0]
    return inv_factor.T @ inv_factor


def log_mvn_density(y: ArrayLike, mean: ArrayLike, precision: ArrayLike):
    """ln N(y | mean, precision^-1).

    ``y`` may be a single d-vector or an (n, d) array of points.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    prec = np.atleast_2d(np.asarray(precision, dtype=float))
    d = mean.shape[0]
    y = np.asarray(y, dtype=float)
    single = y.ndim <= 1
    pts = y.reshape(1, -1) if single else y
    if pts.shape[-1] != d or prec.shape != (d, d):
        raise ValueError(
            f"shape mismatch: y {y.shape}, mean {mean.shape}, precision {prec.shape}"
        )
    factor, logdet = cholesky_logdet(prec)
    z = (pts - mean) @ factor  # (y-m)^T P (y-m) = ||L^T (y-m)||^2
    out = 0.5 * logdet - 0.5 * d * LOG_2PI - 0.5 * np.sum(z * z, axis=1)
    return float(out[0]) if single else out


def dirichlet_log_norm(params: ArrayLike) -> float:
    """ln C(p) = ln Gamma(sum p) - sum ln Gamma(p_l)."""
    p = _check_positive(params, "dirichlet_log_norm")
    return float(special.gammaln(p.sum()) - special.gammaln(p).sum())


def log_multigamma(x: float, d: int) -> float:
    return float(special.multigammaln(x, d))


def wishart_log_norm_entropy(scale: ArrayLike, dof: float) -> tuple[float, float]:
    """Log normalizer ln B(W, nu) and entropy of Wishart(W, nu).

    Density convention: p(X) = B(W, nu) |X|^{(nu-d-1)/2} exp(-tr(W^-1 X)/2),
    so E[X] = nu W.
    """
    w = np.atleast_2d(np.asarray(scale, dtype=float))
    d = w.shape[0]
    if not dof > d - 1:
        raise ValueError(f"Wishart needs dof > d - 1 (dof={dof}, d={d})")
    _, logdet_w = cholesky_logdet(w)
    log_b = -0.5 * dof * logdet_w - 0.5 * dof * d * math.log(2.0) - log_multigamma(0.5 * dof, d)
    e_logdet = expected_logdet_wishart(logdet_w, dof, d)
    entropy = -log_b - 0.5 * (dof - d - 1) * e_logdet + 0.5 * dof * d
    return float(log_b), float(entropy)


def expected_logdet_wishart(logdet_scale, dof, d: int):
    """E[ln|X|] for X ~ Wishart(W, nu); vectorized over dof/logdet."""
    dof = np.asarray(dof, dtype=float)
    idx = np.arange(1, d + 1)
    psi = special.digamma(0.5 * (dof[..., None] - idx + 1)).sum(axis=-1)
    out = psi + d * math.log(2.0) + logdet_scale
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Random streams and samplers
# ---------------------------------------------------------------------------


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator for the (seed, stream) pair.

    Distinct stream ids give independent sequences through SeedSequence
    spawn keys; the same pair always reproduces the same draws.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


def spawn(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    return list(rng.spawn(n))


def log_dirichlet(rng: np.random.Generator, params: ArrayLike) -> np.ndarray:
    """Log of a Dirichlet draw, stable for tiny concentration parameters.

    Uses Gamma(a) = Gamma(a + 1) * U^(1/a) so that components far below the
    double-precision floor keep finite logs. Rows of a 2-D ``params`` are
    independent draws.
    """
    p = _check_positive(params, "dirichlet")
    log_g = np.log(rng.standard_gamma(p + 1.0)) + np.log(rng.random(p.shape)) / p
    return log_g - special.logsumexp(log_g, axis=-1, keepdims=True)


def categorical_from_log(rng: np.random.Generator, logw: np.ndarray) -> np.ndarray:
    """One categorical draw per row of unnormalized log weights."""
    logw = np.atleast_2d(logw)
    top = logw.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(top)):
        bad = int(np.flatnonzero(~np.isfinite(top[:, 0]))[0])
        raise FloatingPointError(f"categorical row {bad} has zero total weight")
    w = np.exp(logw - top)
    cw = np.cumsum(w, axis=1)
    u = rng.random(logw.shape[0]) * cw[:, -1]
    return np.minimum((cw < u[:, None]).sum(axis=1), logw.shape[1] - 1)


def sample_normal_wishart(
    rng: np.random.Generator,
    mean: np.ndarray,
    kappa: float,
    dof: float,
    scale: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """(mu, Lambda) with Lambda ~ Wishart(scale, dof), mu ~ N(mean, (kappa Lambda)^-1)."""
    scale = np.atleast_2d(scale)
    d = scale.shape[0]
    if not dof > d - 1 or kappa <= 0:
        raise ValueError("normal-Wishart needs dof > d - 1 and kappa > 0")
    chol, _ = cholesky_logdet(scale)
    # Bartlett decomposition
    a = np.zeros((d, d))
    a[np.diag_indices(d)] = np.sqrt(rng.chisquare(dof - np.arange(d)))
    a[np.tril_indices(d, -1)] = rng.standard_normal(d * (d - 1) // 2)
    la = chol @ a
    prec = la @ la.T
    # mu = mean + (kappa Lambda)^{-1/2} z, with Lambda = la la^T
    z = rng.standard_normal(d)
    mu = np.asarray(mean, dtype=float) + np.linalg.solve(la.T, z) / math.sqrt(kappa)
    return mu, prec


def sample_normal_inverse_gamma(
    rng: np.random.Generator, mean: float, kappa: float, shape: float, rate: float
) -> tuple[float, float]:
    """(mu, sigma^2) with sigma^2 ~ InvGamma(shape, rate), mu ~ N(mean, sigma^2/kappa)."""
    if kappa <= 0 or shape <= 0 or rate <= 0:
        raise ValueError("normal-inverse-gamma needs positive kappa, shape, rate")
    var = rate / rng.standard_gamma(shape)
    return float(mean + math.sqrt(var / kappa) * rng.standard_normal()), float(var)


def sample(spec: tuple, rng: np.random.Generator):
    """Draw from a distribution described by a tagged tuple.

    Supported tags::

        ("beta", a, b)
        ("gamma", shape, rate)
        ("dirichlet", params)
        ("categorical", weights)
        ("normal_inverse_gamma", mean, kappa, shape, rate)
        ("normal_wishart", mean, kappa, dof, scale)
    """
    tag, *args = spec
    if tag == "beta":
        a, b = args
        if a <= 0 or b <= 0:
            raise ValueError("beta needs positive parameters")
        return float(rng.beta(a, b))
    if tag == "gamma":
        shape, rate = args
        if shape <= 0 or rate <= 0:
            raise ValueError("gamma needs positive shape and rate")
        return float(rng.gamma(shape, 1.0 / rate))
    if tag == "dirichlet":
        return np.exp(log_dirichlet(rng, np.asarray(args[0], dtype=float)))
    if tag == "categorical":
        w = np.asarray(args[0], dtype=float)
        if np.any(w < 0) or not w.sum() > 0:
            raise ValueError("categorical weights must be non-negative with positive sum")
        with np.errstate(divide="ignore"):
            return int(categorical_from_log(rng, np.log(w)[None, :])[0])
    if tag == "normal_inverse_gamma":
        return sample_normal_inverse_gamma(rng, *args)
    if tag == "normal_wishart":
        mean, kappa, dof, scale = args
        return sample_normal_wishart(rng, np.atleast_1d(mean), kappa, dof, scale)
    raise ValueError(f"unknown distribution tag {tag!r}")


def sample_normal_wishart_many(
    rng: np.random.Generator,
    mean: np.ndarray,
    kappa: np.ndarray,
    dof: np.ndarray,
    scale: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched normal-Wishart draws: mean (L, d), kappa (L,), dof (L,), scale (L, d, d)."""
    mean = np.asarray(mean, dtype=float)
    n, d = mean.shape
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (n,))
    dof = np.broadcast_to(np.asarray(dof, dtype=float), (n,))
    if np.any(dof <= d - 1) or np.any(kappa <= 0):
        raise ValueError("normal-Wishart needs dof > d - 1 and kappa > 0")
    chol = np.linalg.cholesky(scale)
    a = np.zeros((n, d, d))
    idx = np.arange(d)
    a[:, idx, idx] = np.sqrt(rng.chisquare(dof[:, None] - idx[None, :]))
    low = np.tril_indices(d, -1)
    a[:, low[0], low[1]] = rng.standard_normal((n, d * (d - 1) // 2))
    la = chol @ a
    prec = la @ np.swapaxes(la, 1, 2)
    z = rng.standard_normal((n, d, 1))
    mu = mean + np.linalg.solve(np.swapaxes(la, 1, 2), z)[..., 0] / np.sqrt(kappa)[:, None]
    return mu, prec
