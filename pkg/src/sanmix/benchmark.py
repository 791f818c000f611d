"""Replication runner for the synthetic benchmarks."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import cavi, gibbs, simulate, summaries
from .kernels import make_rng


@dataclass
class ReplicationResult:
    configuration: str
    replication: int
    n_per_group: int
    vi_ari_dist: float
    vi_ari_obs: float
    vi_time: float  # slowest single restart
    vi_total_time: float
    vi_state_bytes: int
    vi_kl: list = field(default_factory=list)  # per group, d = 1 only
    gibbs_ari_dist: Optional[float] = None
    gibbs_ari_obs: Optional[float] = None
    gibbs_time: Optional[float] = None
    gibbs_state_bytes: Optional[int] = None
    vi_vs_gibbs_ari_dist: Optional[float] = None
    vi_vs_gibbs_ari_obs: Optional[float] = None

    def rows(self) -> list[dict]:
        kl = float(np.median(self.vi_kl)) if self.vi_kl else float("nan")
        out = [
            {
                "configuration": self.configuration,
                "replication": self.replication,
                "backend": "vi",
                "ari_dist": self.vi_ari_dist,
                "ari_obs": self.vi_ari_obs,
                "kl_median": kl,
                "runtime": self.vi_time,
                "peak_state_bytes": self.vi_state_bytes,
            }
        ]
        if self.gibbs_time is not None:
            out.append(
                {
                    "configuration": self.configuration,
                    "replication": self.replication,
                    "backend": "gibbs",
                    "ari_dist": self.gibbs_ari_dist,
                    "ari_obs": self.gibbs_ari_obs,
                    "kl_median": float("nan"),
                    "runtime": self.gibbs_time,
                    "peak_state_bytes": self.gibbs_state_bytes,
                }
            )
        return out


def _state_bytes(obj) -> int:
    return int(sum(v.nbytes for v in vars(obj).values() if isinstance(v, np.ndarray)))


def group_kl(state: cavi.VariationalState, data: simulate.GroupedDataset, truth: simulate.GroundTruth) -> list[float]:
    """Grid KL between the true and the plug-in density of every group (d = 1)."""
    out = []
    for j, yj in enumerate(data.groups()):
        grid = summaries.density_grid(yj)
        f_true = summaries.DensityGrid(grid, truth.group_density(j, grid))
        out.append(summaries.kl_on_grid(f_true, summaries.density_vi(state, grid, j)))
    return out


def replicate(
    n_per_group: int,
    seed: int,
    replication: int,
    d: int = 1,
    restarts: int = 20,
    gibbs_iterations: int = 0,
    burn_in: int = 1000,
    tol: float = 1e-4,
    max_iter: int = 1000,
    config: Optional[cavi.FisanConfig] = None,
    compute_kl: bool = True,
) -> ReplicationResult:
    """Simulate one benchmark dataset and fit it with CAVI (and optionally Gibbs)."""
    data_rng, vi_rng, mc_rng = make_rng(seed, replication).spawn(3)
    if d == 1:
        data, truth = simulate.univariate_benchmark(n_per_group, data_rng)
        name = f"univariate_n{n_per_group}"
    else:
        data, truth = simulate.multivariate_benchmark(d, n_per_group, data_rng)
        name = f"multivariate_d{d}_n{n_per_group}"
    cfg = config or cavi.FisanConfig()

    start = time.perf_counter()
    fit = cavi.fit(data, cfg, vi_rng, tol=tol, max_iter=max_iter, restarts=restarts)
    vi_total = time.perf_counter() - start
    s_hat, m_hat = summaries.vi_partition(fit.state)
    res = ReplicationResult(
        configuration=name,
        replication=replication,
        n_per_group=n_per_group,
        vi_ari_dist=summaries.ari(truth.S, s_hat),
        vi_ari_obs=summaries.ari(truth.M, m_hat),
        vi_time=max(fit.run_times),
        vi_total_time=vi_total,
        vi_state_bytes=_state_bytes(fit.state),
        vi_kl=group_kl(fit.state, data, truth) if (d == 1 and compute_kl) else [],
    )
    if gibbs_iterations > 0:
        start = time.perf_counter()
        chain = gibbs.run(data, cfg, gibbs_iterations, burn_in, 1, mc_rng)
        res.gibbs_time = time.perf_counter() - start
        g_s = summaries.mcmc_partition(summaries.psm(chain, "distributional"), "distributional")
        g_m = summaries.mcmc_partition(summaries.psm(chain, "observational"))
        res.gibbs_ari_dist = summaries.ari(truth.S, g_s)
        res.gibbs_ari_obs = summaries.ari(truth.M, g_m)
        res.gibbs_state_bytes = _state_bytes(chain)
        res.vi_vs_gibbs_ari_dist = summaries.ari(s_hat, g_s)
        res.vi_vs_gibbs_ari_obs = summaries.ari(m_hat, g_m)
    return res
