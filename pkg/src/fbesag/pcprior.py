"""Joint penalized-complexity prior for the local log-precisions.

The log-precisions theta = (theta_1..theta_P) decompose as theta_bar * 1 +
gamma with 1'gamma = 0.  theta_bar carries the univariate PC prior for a
log-precision (exponential on the standard-deviation scale) and gamma is a
zero-sum Gaussian with flexibility sigma_gamma; small sigma_gamma contracts
the flexible model to the stationary one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def lambda_from(u: float, alpha: float) -> float:
    """Rate of the exponential tail prior: prob(tau^{-1/2} > u) = alpha."""
    if u <= 0:
        raise ValueError("u must be positive")
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    return -math.log(alpha) / u


@dataclass(frozen=True)
class PcPriorConfig:
    u: float
    alpha: float
    sigma_gamma: float
    p: int

    def __post_init__(self):
        if self.sigma_gamma <= 0:
            raise ValueError("sigma_gamma must be positive")
        if self.p < 1:
            raise ValueError("p must be at least 1")
        lambda_from(self.u, self.alpha)  # validates u, alpha

    @property
    def lam(self) -> float:
        return lambda_from(self.u, self.alpha)


@dataclass(frozen=True)
class ThetaVector:
    theta: np.ndarray

    @property
    def theta_bar(self) -> float:
        return float(np.mean(self.theta))

    @property
    def gamma(self) -> np.ndarray:
        return self.theta - self.theta_bar


def log_pc_prior_univariate(theta: float, lam: float) -> float:
    """Log PC prior of a log-precision: ln(lam/2) - theta/2 - lam e^{-theta/2}."""
    return math.log(lam / 2.0) - theta / 2.0 - lam * math.exp(-theta / 2.0)


def log_joint_pc_prior(theta, config: PcPriorConfig) -> float:
    """Log joint PC prior of theta in R^P.

    Constructive product form: univariate PC prior on theta_bar times the
    zero-sum Gaussian on gamma = theta - theta_bar, with the -(1/2) ln P
    Jacobian of the orthogonal (theta_bar, gamma) -> theta change of
    variables.  Integrates to one over R^P.
    """
    th = np.asarray(theta, dtype=float)
    if th.shape != (config.p,):
        raise ValueError(f"theta must have length {config.p}")
    tbar = float(np.mean(th))
    out = log_pc_prior_univariate(tbar, config.lam)
    if config.p > 1:
        ss = float(np.sum((th - tbar) ** 2))
        out += -0.5 * (config.p - 1) * (LOG_2PI + 2.0 * math.log(config.sigma_gamma))
        out += -0.5 * ss / config.sigma_gamma**2
        out += -0.5 * math.log(config.p)
    return out


def sample_prior(config: PcPriorConfig, rng_seed: int) -> ThetaVector:
    """Draw theta from the joint prior.

    tau_bar^{-1/2} ~ Exponential(lambda) gives theta_bar; gamma is an i.i.d.
    Gaussian centered to the zero-sum subspace.
    """
    rng = np.random.default_rng(rng_seed)
    sd = rng.exponential(1.0 / config.lam)
    theta_bar = -2.0 * math.log(sd)
    g = rng.normal(0.0, config.sigma_gamma, size=config.p)
    gamma = g - np.mean(g)
    return ThetaVector(theta=theta_bar + gamma)


def kld_gaussians(mu0, sigma0, mu1, sigma1) -> float:
    """KL divergence KLD(N1 || N0) between multivariate Gaussians.

    (1/2) { -log(|S1|/|S0|) + tr(S0^{-1} S1) + (m0-m1)' S0^{-1} (m0-m1) - n }.
    Verification utility for the PC-prior distance machinery.
    """
    mu0 = np.atleast_1d(np.asarray(mu0, dtype=float))
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
    s0 = np.atleast_2d(np.asarray(sigma0, dtype=float))
    s1 = np.atleast_2d(np.asarray(sigma1, dtype=float))
    n = mu0.size
    sign0, logdet0 = np.linalg.slogdet(s0)
    sign1, logdet1 = np.linalg.slogdet(s1)
    if sign0 <= 0 or sign1 <= 0:
        raise ValueError("covariances must be positive definite")
    s0_inv = np.linalg.inv(s0)
    d = mu0 - mu1
    return 0.5 * float(
        -(logdet1 - logdet0) + np.trace(s0_inv @ s1) + d @ s0_inv @ d - n
    )


def pc_distance(mu0, sigma0, mu1, sigma1) -> float:
    """Unidirectional distance sqrt(2 KLD) from the flexible to the base model."""
    return math.sqrt(2.0 * kld_gaussians(mu0, sigma0, mu1, sigma1))
