"""Laplace-approximation inference for Poisson disease-mapping models.

Latent field z = (intercept mu, spatial alpha, optional cyclic-RW1 kappa)
with linear predictor eta = mu + alpha[area] + kappa[time] and counts
y ~ Poisson(offset * exp(eta)).  The latent mode is found by constrained
Newton iterations; the hyperparameters theta = log-precisions get a
gradient-free simplex search over the Laplace-approximate log posterior.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve, null_space
from scipy.optimize import minimize
from scipy.special import gammaln

from .graph import AdjacencyGraph, Partition, build_partition
from .pcprior import PcPriorConfig, lambda_from, log_joint_pc_prior, log_pc_prior_univariate
from .precision import (
    FbesagPrecision,
    build_precision,
    cyclic_rw1_log_gdet,
    cyclic_rw1_precision,
)

LOG_2PI = math.log(2.0 * math.pi)


class NonConvergenceError(RuntimeError):
    def __init__(self, msg, grad_norm=None):
        super().__init__(msg)
        self.grad_norm = grad_norm


@dataclass(frozen=True)
class ModelSpec:
    """Data plus priors for one Poisson disease-mapping model."""

    graph: AdjacencyGraph
    partition: Partition
    counts: np.ndarray
    offsets: np.ndarray
    area_idx: np.ndarray
    time_idx: np.ndarray | None = None
    n_time: int = 0
    spatial_prior: PcPriorConfig = None  # set in __post_init__ when omitted
    temporal_u: float = 0.5
    temporal_alpha: float = 0.01
    intercept_prec: float = 1e-3

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        offsets = np.asarray(self.offsets, dtype=float)
        area_idx = np.asarray(self.area_idx, dtype=int)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "area_idx", area_idx)
        if np.any(counts < 0) or np.any(counts != np.floor(counts)):
            raise ValueError("counts must be nonnegative integers")
        if np.any(offsets <= 0):
            raise ValueError("offsets must be positive")
        if np.any((area_idx < 0) | (area_idx >= self.graph.n_areas)):
            raise ValueError("area index out of range")
        if self.include_temporal:
            tix = np.asarray(self.time_idx, dtype=int)
            object.__setattr__(self, "time_idx", tix)
            if np.any((tix < 0) | (tix >= self.n_time)):
                raise ValueError("time index out of range")
        if self.spatial_prior is None:
            object.__setattr__(
                self,
                "spatial_prior",
                PcPriorConfig(u=1.0, alpha=1e-5, sigma_gamma=0.2,
                              p=self.partition.n_subregions),
            )
        if self.spatial_prior.p != self.partition.n_subregions:
            raise ValueError("spatial prior dimension must match the partition")

    @property
    def include_temporal(self) -> bool:
        return self.time_idx is not None and self.n_time > 0

    @property
    def n_theta(self) -> int:
        return self.partition.n_subregions + (1 if self.include_temporal else 0)


@dataclass
class ModelFit:
    theta_mode: np.ndarray
    theta_cov: np.ndarray
    latent_mean: np.ndarray
    latent_sd: np.ndarray
    tau_mean: np.ndarray
    tau_lower: np.ndarray
    tau_upper: np.ndarray
    theta_post_mean: np.ndarray
    dic: float
    log_ml: float
    diagnostics: dict = field(default_factory=dict)
    seed: int = 0


class _Engine:
    """Precomputed structure shared by every theta evaluation of one spec."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        n = spec.graph.n_areas
        self.n_areas = n
        self.p = spec.partition.n_subregions
        self.n_time = spec.n_time if spec.include_temporal else 0
        self.n_latent = 1 + n + self.n_time
        self.base = build_precision(spec.graph, spec.partition,
                                    np.ones(self.p))
        self.n_comp = self.base.rank_deficiency
        if spec.include_temporal:
            self.kappa_base = cyclic_rw1_precision(self.n_time, 1.0)

        n_obs = spec.counts.size
        rows = np.repeat(np.arange(n_obs), 2 + (1 if spec.include_temporal else 0))
        cols = []
        for m in range(n_obs):
            c = [0, 1 + spec.area_idx[m]]
            if spec.include_temporal:
                c.append(1 + n + spec.time_idx[m])
            cols.extend(c)
        data = np.ones(len(cols))
        self.a_obs = sp.csr_matrix((data, (rows, cols)),
                                   shape=(n_obs, self.n_latent))

        crows = []
        for comp in self.base.components:
            r = np.zeros(self.n_latent)
            r[1 + np.array(sorted(comp))] = 1.0
            crows.append(r)
        if spec.include_temporal:
            r = np.zeros(self.n_latent)
            r[1 + n:] = 1.0
            crows.append(r)
        self.constraints = np.array(crows)
        self.v_basis = null_space(self.constraints)
        self.reduced_dim = self.v_basis.shape[1]

        if self.p == 1:
            vals = np.linalg.eigvalsh(self.base.q.toarray())
            self._stat_log_gdet = float(np.sum(np.log(np.sort(vals)[self.n_comp:])))
        else:
            self._stat_log_gdet = None
        self._mode_cache: np.ndarray | None = None

    def spatial_precision(self, theta) -> FbesagPrecision:
        return self.base.with_taus(np.exp(theta[: self.p]))

    def prior_precision(self, theta) -> sp.csr_matrix:
        """Block-diagonal latent prior precision Q_z(theta)."""
        blocks = [sp.csr_matrix([[self.spec.intercept_prec]]),
                  self.spatial_precision(theta).q]
        if self.spec.include_temporal:
            blocks.append(math.exp(theta[-1]) * self.kappa_base.q)
        return sp.block_diag(blocks, format="csr")

    def spatial_log_gdet(self, theta) -> float:
        if self.p == 1:
            return (self.n_areas - self.n_comp) * float(theta[0]) + self._stat_log_gdet
        q = self.spatial_precision(theta).q.toarray()
        vals = np.sort(np.linalg.eigvalsh(q))
        return float(np.sum(np.log(vals[self.n_comp:])))

    # ---- inner (latent) problem -------------------------------------

    def loglik(self, z) -> float:
        eta = self.a_obs @ z
        y, phi = self.spec.counts, self.spec.offsets
        return float(np.sum(y * (eta + np.log(phi)) - phi * np.exp(eta)
                            - gammaln(y + 1.0)))

    def objective_and_grad(self, z, q_z):
        """Inner Newton objective log pi(y|z) - z'Q_z z / 2 and its gradient."""
        eta = self.a_obs @ z
        y, phi = self.spec.counts, self.spec.offsets
        mu_rate = phi * np.exp(eta)
        val = float(np.sum(y * (eta + np.log(phi)) - mu_rate - gammaln(y + 1.0)))
        val -= 0.5 * float(z @ (q_z @ z))
        grad = self.a_obs.T @ (y - mu_rate) - q_z @ z
        return val, np.asarray(grad).ravel()

    def _project(self, z, h_fac):
        """Conditioning by kriging onto {Cz = 0} in the Hessian metric."""
        c = self.constraints
        w = cho_solve(h_fac, c.T)
        return z - w @ np.linalg.solve(c @ w, c @ z)

    def latent_mode(self, theta, start=None, max_iter=100, tol=1e-8):
        """Constrained Newton optimization of the latent field.

        Returns (mode, hessian) where hessian = Q_z + A' diag(rate) A at
        the mode.  Constraints are re-imposed by kriging at every step.
        """
        q_z = self.prior_precision(theta)
        if start is None:
            z = np.zeros(self.n_latent)
            # intercept at the marginal rate keeps the first steps in range
            z[0] = math.log(max(np.sum(self.spec.counts), 0.5)
                            / np.sum(self.spec.offsets))
        else:
            z = start.copy()
        phi = self.spec.offsets
        f, g = self.objective_and_grad(z, q_z)
        for it in range(max_iter):
            eta = self.a_obs @ z
            rate = phi * np.exp(eta)
            h = q_z + self.a_obs.T @ sp.diags(rate) @ self.a_obs
            h_dense = h.toarray()
            try:
                fac = cho_factor(h_dense, lower=True)
            except np.linalg.LinAlgError:
                fac = cho_factor(h_dense + 1e-8 * np.eye(self.n_latent) *
                                 np.mean(np.diag(h_dense)), lower=True)
            # Hessian is evaluated at the current iterate; stop here so the
            # returned (mode, Hessian) pair is consistent.
            if it > 0 and np.linalg.norm(self.v_basis.T @ g) <= tol * (1.0 + abs(f)):
                return z, h_dense
            step = cho_solve(fac, g)
            # backtracking on the constrained iterate
            t = 1.0
            while t > 1e-10:
                z_new = self._project(z + t * step, fac)
                f_new, g_new = self.objective_and_grad(z_new, q_z)
                if np.isfinite(f_new) and f_new >= f - 1e-12:
                    break
                t *= 0.5
            z, f, g = z_new, f_new, g_new
        raise NonConvergenceError(
            f"latent Newton did not converge in {max_iter} steps",
            grad_norm=float(np.linalg.norm(self.v_basis.T @ g)),
        )

    # ---- outer (hyperparameter) problem ------------------------------

    def log_prior_theta(self, theta) -> float:
        val = log_joint_pc_prior(theta[: self.p], self.spec.spatial_prior)
        if self.spec.include_temporal:
            lam = lambda_from(self.spec.temporal_u, self.spec.temporal_alpha)
            val += log_pc_prior_univariate(float(theta[-1]), lam)
        return val

    def log_prior_latent(self, z, theta) -> float:
        """Constrained joint log prior of z = (mu, alpha, kappa).

        The intrinsic blocks use generalized determinants with the
        dimension of the constrained subspace, i.e. the proper Gaussian on
        the zero-sum subspace in orthonormal coordinates.
        """
        spec = self.spec
        mu = z[0]
        alpha = z[1:1 + self.n_areas]
        val = 0.5 * (math.log(spec.intercept_prec) - LOG_2PI)
        val -= 0.5 * spec.intercept_prec * mu**2
        q_a = self.spatial_precision(theta).q
        m_a = self.n_areas - self.n_comp
        val += 0.5 * self.spatial_log_gdet(theta) - 0.5 * m_a * LOG_2PI
        val -= 0.5 * float(alpha @ (q_a @ alpha))
        if spec.include_temporal:
            kappa = z[1 + self.n_areas:]
            tau_k = math.exp(theta[-1])
            val += 0.5 * cyclic_rw1_log_gdet(self.n_time, tau_k)
            val -= 0.5 * (self.n_time - 1) * LOG_2PI
            val -= 0.5 * tau_k * float(kappa @ (self.kappa_base.q @ kappa))
        return val

    def log_posterior_theta(self, theta, higher_order: bool = True) -> float:
        """Laplace-approximate log pi(y, theta), up to the fixed convention
        that constrained Gaussian integrals run over orthonormal subspace
        coordinates.  Comparable across models on the same data.

        The Gaussian integral gets the standard third/fourth-order cumulant
        correction; the Poisson log-likelihood has all higher derivatives
        equal to -rate along the observation directions, so the contractions
        reduce to sums over the observation covariance S = A Cov(z) A'.
        """
        theta = np.asarray(theta, dtype=float)
        zhat, h = self.latent_mode(theta, start=self._mode_cache)
        self._mode_cache = zhat
        hv = self.v_basis.T @ (h @ self.v_basis)
        sign, logdet = np.linalg.slogdet(hv)
        if sign <= 0:
            raise NonConvergenceError("indefinite Hessian at latent mode")
        out = (self.loglik(zhat) + self.log_prior_latent(zhat, theta)
               + self.log_prior_theta(theta)
               + 0.5 * self.reduced_dim * LOG_2PI - 0.5 * logdet)
        if higher_order:
            g = (self.a_obs @ self.v_basis).T            # reduced x n_obs
            s_mat = g.T @ np.linalg.solve(hv, g)         # A Cov(z) A'
            s_diag = np.diag(s_mat)
            rate = self.spec.offsets * np.exp(self.a_obs @ zhat)
            t = -rate                                    # 3rd and 4th eta-derivs
            corr = (1.0
                    + 0.125 * float(np.sum(t * s_diag**2))
                    + 0.125 * float((t * s_diag) @ s_mat @ (t * s_diag))
                    + float(t @ (s_mat**3) @ t) / 12.0)
            if corr > 0.1:
                out += math.log(corr)
        return out


def latent_mode(spec: ModelSpec, theta, start=None):
    """Mode and Hessian of the latent field at fixed hyperparameters."""
    return _Engine(spec).latent_mode(np.asarray(theta, dtype=float), start=start)


def log_posterior_theta(spec: ModelSpec, theta) -> float:
    return _Engine(spec).log_posterior_theta(np.asarray(theta, dtype=float))


def _fd_hessian(fun, x0, h=1e-3):
    d = x0.size
    hess = np.zeros((d, d))
    f0 = fun(x0)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        hess[i, i] = (fun(x0 + ei) - 2.0 * f0 + fun(x0 - ei)) / h**2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h
            hess[i, j] = hess[j, i] = (
                fun(x0 + ei + ej) - fun(x0 + ei - ej)
                - fun(x0 - ei + ej) + fun(x0 - ei - ej)
            ) / (4.0 * h**2)
    return hess


def _constrained_gaussian_draws(engine, zhat, h_dense, n_draws, rng):
    """Draws from N(zhat, H^{-1}) corrected onto the constraint set."""
    fac = cho_factor(h_dense, lower=True)
    lower = np.tril(fac[0])
    x = np.linalg.solve(lower.T, rng.standard_normal((engine.n_latent, n_draws)))
    c = engine.constraints
    w = cho_solve(fac, c.T)
    x -= w @ np.linalg.solve(c @ w, c @ x)
    return zhat[:, None] + x


def fit(spec: ModelSpec, seed: int = 0, n_theta_draws: int = 2000,
        n_dic_draws: int = 1000, xatol: float = 1e-4) -> ModelFit:
    """Full empirical-Bayes Laplace fit.

    Hyperparameters are optimized by Nelder-Mead initialized at the
    stationary fit's estimate; theta uncertainty comes from the
    finite-difference Hessian at the mode; tau summaries integrate theta
    through that Gaussian approximation.
    """
    engine = _Engine(spec)
    diagnostics = {"n_obj_evals": 0}

    def neg_obj(theta):
        diagnostics["n_obj_evals"] += 1
        return -engine.log_posterior_theta(theta)

    # stationary pilot: one spatial precision (plus temporal if present)
    if spec.partition.n_subregions > 1:
        stat_part = build_partition(spec.graph, [0] * spec.graph.n_areas)
        stat_prior = PcPriorConfig(u=spec.spatial_prior.u,
                                   alpha=spec.spatial_prior.alpha,
                                   sigma_gamma=spec.spatial_prior.sigma_gamma, p=1)
        stat_spec = ModelSpec(graph=spec.graph, partition=stat_part,
                              counts=spec.counts, offsets=spec.offsets,
                              area_idx=spec.area_idx, time_idx=spec.time_idx,
                              n_time=spec.n_time, spatial_prior=stat_prior,
                              temporal_u=spec.temporal_u,
                              temporal_alpha=spec.temporal_alpha,
                              intercept_prec=spec.intercept_prec)
        stat_engine = _Engine(stat_spec)
        x0 = np.ones(stat_spec.n_theta)
        pilot = minimize(lambda t: -stat_engine.log_posterior_theta(t), x0,
                         method="Nelder-Mead",
                         options={"xatol": 1e-3, "fatol": 1e-3})
        theta0 = np.empty(spec.n_theta)
        theta0[: spec.partition.n_subregions] = pilot.x[0]
        if spec.include_temporal:
            theta0[-1] = pilot.x[-1]
        diagnostics["pilot_theta"] = pilot.x.tolist()
    else:
        theta0 = np.ones(spec.n_theta)

    res = minimize(neg_obj, theta0, method="Nelder-Mead",
                   options={"xatol": xatol, "fatol": 1e-5, "maxfev": 4000})
    diagnostics["optimizer_converged"] = bool(res.success)
    diagnostics["optimizer_message"] = res.message
    theta_mode = res.x

    hess = _fd_hessian(lambda t: engine.log_posterior_theta(t), theta_mode, h=1e-3)
    prec_theta = -hess
    eigs = np.linalg.eigvalsh(prec_theta)
    diagnostics["theta_hessian_pd"] = bool(np.all(eigs > 0))
    if not diagnostics["theta_hessian_pd"]:
        diagnostics["theta_hessian_eigs"] = eigs.tolist()
        prec_theta = prec_theta + (abs(min(eigs.min(), 0.0)) + 1e-6) * np.eye(len(eigs))
    theta_cov = np.linalg.inv(prec_theta)
    theta_cov = 0.5 * (theta_cov + theta_cov.T)

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    draws = rng.multivariate_normal(theta_mode, theta_cov, size=n_theta_draws,
                                    method="cholesky")
    tau_draws = np.exp(draws)
    tau_mean = tau_draws.mean(axis=0)
    tau_lower = np.quantile(tau_draws, 0.025, axis=0)
    tau_upper = np.quantile(tau_draws, 0.975, axis=0)
    theta_post_mean = draws.mean(axis=0)

    zhat, h_dense = engine.latent_mode(theta_mode, start=engine._mode_cache)
    h_inv = np.linalg.inv(h_dense)
    c = engine.constraints
    w = h_inv @ c.T
    cov_z = h_inv - w @ np.linalg.solve(c @ w, w.T)
    latent_sd = np.sqrt(np.maximum(np.diag(cov_z), 0.0))

    zdraws = _constrained_gaussian_draws(engine, zhat, h_dense, n_dic_draws, rng)
    dev = np.array([-2.0 * engine.loglik(zdraws[:, s]) for s in range(n_dic_draws)])
    dev_at_mean = -2.0 * engine.loglik(zdraws.mean(axis=1))
    dic = 2.0 * float(dev.mean()) - dev_at_mean

    d = theta_mode.size
    sign, logdet_cov = np.linalg.slogdet(theta_cov)
    log_ml = (engine.log_posterior_theta(theta_mode)
              + 0.5 * d * LOG_2PI + 0.5 * logdet_cov)

    diagnostics["dev_at_mean"] = dev_at_mean
    diagnostics["p_eff"] = float(dev.mean()) - dev_at_mean
    return ModelFit(
        theta_mode=theta_mode,
        theta_cov=theta_cov,
        latent_mean=zhat,
        latent_sd=latent_sd,
        tau_mean=tau_mean,
        tau_lower=tau_lower,
        tau_upper=tau_upper,
        theta_post_mean=theta_post_mean,
        dic=dic,
        log_ml=log_ml,
        diagnostics=diagnostics,
        seed=seed,
    )


def dic(spec: ModelSpec, model_fit: ModelFit) -> float:
    return model_fit.dic


def log_marginal_likelihood(spec: ModelSpec, model_fit: ModelFit) -> float:
    return model_fit.log_ml
