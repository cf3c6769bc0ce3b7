import math

import numpy as np
import pytest
from scipy import integrate, stats

from fbesag.pcprior import (
    PcPriorConfig,
    kld_gaussians,
    lambda_from,
    log_joint_pc_prior,
    log_pc_prior_univariate,
    pc_distance,
    sample_prior,
)


def test_lambda_values():
    assert lambda_from(1.0, 1e-5) == pytest.approx(11.512925464970229)
    assert lambda_from(1.0, math.exp(-1.0)) == pytest.approx(1.0)
    assert lambda_from(0.5, 0.01) == pytest.approx(-math.log(0.01) / 0.5)
    assert lambda_from(0.5, 0.01) == pytest.approx(9.210340371976184)


def test_lambda_rejects_bad_args():
    with pytest.raises(ValueError):
        lambda_from(0.0, 0.5)
    with pytest.raises(ValueError):
        lambda_from(1.0, 1.5)


def test_univariate_mode():
    lam = 11.51
    theta_mode = 2.0 * math.log(lam)
    assert log_pc_prior_univariate(theta_mode, lam) == pytest.approx(
        math.log(lam / 2.0) - math.log(lam) - 1.0
    )
    # stationary point: nearby values are lower
    for d in (-1e-3, 1e-3):
        assert log_pc_prior_univariate(theta_mode + d, lam) < log_pc_prior_univariate(
            theta_mode, lam
        )


def test_univariate_normalization_by_quadrature():
    lam = 11.51
    val, err = integrate.quad(
        lambda t: math.exp(log_pc_prior_univariate(t, lam)), -60, 60, limit=200
    )
    assert val == pytest.approx(1.0, abs=1e-8)


def test_univariate_tail_condition_by_quadrature():
    # integral of pi(theta) over {exp(-theta/2) > u} equals alpha
    for u, alpha in [(1.0, 1e-5), (0.5, 0.01)]:
        lam = lambda_from(u, alpha)
        cut = -2.0 * math.log(u)
        val, _ = integrate.quad(
            lambda t: math.exp(log_pc_prior_univariate(t, lam)), -200, cut, limit=400
        )
        assert val == pytest.approx(alpha, rel=1e-6)


def test_univariate_cdf_against_exponential_transform():
    lam = 11.51
    rng = np.random.default_rng(99)
    draws = -2.0 * np.log(rng.exponential(1.0 / lam, size=1_000_000))
    grid = np.linspace(0.0, 10.0, 50)
    analytic = np.exp(-lam * np.exp(-grid / 2.0))
    empirical = np.searchsorted(np.sort(draws), grid) / draws.size
    assert np.max(np.abs(empirical - analytic)) < 0.01


def test_joint_reduces_to_univariate_at_p1():
    cfg = PcPriorConfig(u=1.0, alpha=1e-5, sigma_gamma=0.2, p=1)
    for t in (-3.0, 0.0, 4.9):
        assert log_joint_pc_prior([t], cfg) == pytest.approx(
            log_pc_prior_univariate(t, cfg.lam)
        )


def test_joint_depends_only_on_mean_and_spread():
    cfg = PcPriorConfig(u=1.0, alpha=1e-5, sigma_gamma=0.2, p=4)
    a = np.array([1.0, 1.2, 0.8, 1.0])
    b = np.array([1.2, 1.0, 1.0, 0.8])  # same mean, same centered sum of squares
    assert np.mean(a) == np.mean(b)
    assert np.sum((a - 1.0) ** 2) == pytest.approx(np.sum((b - 1.0) ** 2))
    assert log_joint_pc_prior(a, cfg) == pytest.approx(log_joint_pc_prior(b, cfg))


def test_joint_permutation_invariance():
    cfg = PcPriorConfig(u=1.0, alpha=1e-5, sigma_gamma=0.15, p=4)
    theta = np.array([0.3, -0.2, 1.1, 0.4])
    base = log_joint_pc_prior(theta, cfg)
    rng = np.random.default_rng(1)
    for _ in range(10):
        assert log_joint_pc_prior(rng.permutation(theta), cfg) == pytest.approx(base)


def test_joint_maximized_at_zero_gamma():
    cfg = PcPriorConfig(u=1.0, alpha=1e-5, sigma_gamma=0.2, p=4)
    rng = np.random.default_rng(2)
    for tbar in (-1.0, 0.0, 2.0):
        base = log_joint_pc_prior(np.full(4, tbar), cfg)
        for _ in range(100):
            g = rng.normal(0, 0.5, size=4)
            g -= g.mean()
            if np.allclose(g, 0):
                continue
            assert log_joint_pc_prior(tbar + g, cfg) < base


def test_joint_monotone_in_centered_spread():
    cfg = PcPriorConfig(u=1.0, alpha=1e-5, sigma_gamma=0.2, p=4)
    g = np.array([1.0, -1.0, 0.5, -0.5])
    g -= g.mean()
    vals = [log_joint_pc_prior(0.7 + s * g, cfg) for s in (0.0, 0.1, 0.2, 0.5, 1.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_joint_normalization_p4_by_quadrature():
    """Tensor-grid integral over (theta_bar, gamma_1..3) with the (theta_bar,
    gamma) -> theta Jacobian P; confirms the implemented constant."""
    cfg = PcPriorConfig(u=1.0, alpha=1e-5, sigma_gamma=0.2, p=4)
    nb, ng = 400, 48
    tb, wb = np.polynomial.legendre.leggauss(nb)
    tb = 0.5 * (tb + 1) * (40 - (-20)) + (-20)
    wb = wb * 0.5 * 60
    gg, wg = np.polynomial.legendre.leggauss(ng)
    lim = 8 * cfg.sigma_gamma
    gg = gg * lim
    wg = wg * lim

    g1, g2, g3 = np.meshgrid(gg, gg, gg, indexing="ij")
    w123 = wg[:, None, None] * wg[None, :, None] * wg[None, None, :]
    g4 = -(g1 + g2 + g3)
    # gamma factor is independent of theta_bar: evaluate it once
    ss = g1**2 + g2**2 + g3**2 + g4**2
    log_gamma_part = (
        -1.5 * (np.log(2 * np.pi) + 2 * np.log(cfg.sigma_gamma))
        - 0.5 * ss / cfg.sigma_gamma**2
        - 0.5 * np.log(4.0)
    )
    gamma_integral = float(np.sum(np.exp(log_gamma_part) * w123)) * 4.0  # Jacobian P=4
    tb_integral = float(
        np.sum(np.exp([log_pc_prior_univariate(t, cfg.lam) for t in tb]) * wb)
    )
    total = gamma_integral * tb_integral
    assert total == pytest.approx(1.0, abs=1e-4)

    # spot-check the vectorized shortcut against the actual function
    theta = np.array([0.7 + g for g in (gg[3], gg[7], gg[11], -(gg[3] + gg[7] + gg[11]))])
    direct = log_joint_pc_prior(theta, cfg)
    shortcut = (
        log_pc_prior_univariate(0.7, cfg.lam)
        - 1.5 * (np.log(2 * np.pi) + 2 * np.log(cfg.sigma_gamma))
        - 0.5 * np.sum((theta - 0.7) ** 2) / cfg.sigma_gamma**2
        - 0.5 * np.log(4.0)
    )
    assert direct == pytest.approx(shortcut)


def test_sample_prior_determinism_and_zero_sum():
    cfg = PcPriorConfig(u=1.0, alpha=1e-5, sigma_gamma=0.2, p=4)
    a = sample_prior(cfg, rng_seed=7)
    b = sample_prior(cfg, rng_seed=7)
    np.testing.assert_array_equal(a.theta, b.theta)
    assert abs(np.sum(a.gamma)) < 1e-12
    np.testing.assert_allclose(a.theta, a.theta_bar + a.gamma)


def test_sample_prior_tail_probability():
    cfg = PcPriorConfig(u=1.0, alpha=1e-5, sigma_gamma=0.2, p=4)
    n = 1_000_000
    rng = np.random.default_rng(12345)
    # vectorized equivalent of the theta_bar marginal in sample_prior
    sd = rng.exponential(1.0 / cfg.lam, size=n)
    theta_bar = -2.0 * np.log(sd)
    phat = np.mean(np.exp(theta_bar) < 1.0)
    band = 3.0 * math.sqrt(1e-5 * (1 - 1e-5) / n)
    assert abs(phat - 1e-5) <= band


def test_sample_prior_gamma_stdev():
    cfg = PcPriorConfig(u=1.0, alpha=1e-5, sigma_gamma=0.2, p=4)
    gammas = np.array([sample_prior(cfg, rng_seed=s).gamma for s in range(20_000)])
    target = 0.2 * math.sqrt(1 - 1 / 4)
    assert target == pytest.approx(0.1732, abs=1e-4)
    np.testing.assert_allclose(gammas.std(axis=0), target, rtol=0.02)


def test_kld_gaussians_closed_form():
    # KLD between two univariate Gaussians, checked against scipy entropy calc
    mu0, s0, mu1, s1 = 0.0, 2.0, 1.0, 1.5
    got = kld_gaussians([mu0], [[s0**2]], [mu1], [[s1**2]])
    grid = np.linspace(-15, 15, 200_001)
    p1 = stats.norm.pdf(grid, mu1, s1)
    p0 = stats.norm.pdf(grid, mu0, s0)
    expect = np.trapezoid(p1 * np.log(p1 / p0), grid)
    assert got == pytest.approx(expect, abs=1e-8)
    assert pc_distance([mu0], [[s0**2]], [mu1], [[s1**2]]) == pytest.approx(
        math.sqrt(2 * got)
    )


def test_kld_identical_is_zero():
    sig = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert kld_gaussians([0, 0], sig, [0, 0], sig) == pytest.approx(0.0, abs=1e-12)
