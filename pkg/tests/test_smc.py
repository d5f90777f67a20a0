import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pneit.prior import TemporalModel
from pneit.smc import (DegenerateWeights, ParticleEnsemble, PcnConfig, TemperingLadder, ess, filter_step,
                       pcn_move, pcn_sweep, predictive, run_filter, systematic_indices, systematic_resample,
                       temper)


def gaussian_loglik(m, s):
    """Log-likelihood of a direct Gaussian observation ``m`` of the coefficients."""
    m = np.asarray(m, float)

    def f(c):
        return -0.5 * (((np.atleast_2d(c) - m) / s) ** 2).sum(1)
    return f


def gaussian_evidence(m, s):
    m = np.asarray(m, float)
    v = 1 + s * s
    return float((0.5 * np.log(s * s / v) - 0.5 * m * m / v).sum())


def batch_se(x, n_batches=50):
    b = np.asarray(x)[: len(x) // n_batches * n_batches].reshape(n_batches, -1).mean(1)
    return b.std(ddof=1) / math.sqrt(n_batches)


# -- ESS and resampling ---------------------------------------------------------------

def test_ess_examples():
    assert ess(np.full(100, 0.01)) == pytest.approx(100)
    assert ess(np.eye(10)[3]) == 1.0
    assert ess(np.array([2 / 3, 1 / 3])) == pytest.approx(1.8)
    with pytest.raises(ValueError):
        ess(np.zeros(4))


@given(arrays(np.float64, st.integers(2, 50), elements=st.floats(0, 10)))
def test_ess_bounds(w):
    if w.sum() <= 0:
        return
    e = ess(w)
    assert 1 - 1e-9 <= e <= len(w) + 1e-9


def test_uniform_weights_copy_each_particle_once(rng):
    ens = ParticleEnsemble.uniform(np.arange(20.0)[:, None])
    out = systematic_resample(ens, rng)
    np.testing.assert_array_equal(np.sort(out.coeffs[:, 0]), np.arange(20.0))


def test_one_hot_weight(rng):
    logw = np.full(10, -np.inf)
    logw[7] = 0.0
    ens = ParticleEnsemble(np.arange(10.0)[:, None], logw)
    out = systematic_resample(ens, rng)
    assert np.all(out.coeffs == 7)
    np.testing.assert_allclose(out.weights, 0.1)


def test_offspring_counts_unbiased(rng):
    # N w_i near one keeps the per-entry Monte Carlo error well under 2%
    w = rng.dirichlet(np.full(12, 20.0))
    counts = np.zeros(12)
    runs = 10_000
    for _ in range(runs):
        counts += np.bincount(systematic_indices(w, rng), minlength=12)
    np.testing.assert_allclose(counts / runs, 12 * w, rtol=0.02)


@given(arrays(np.float64, st.integers(2, 40), elements=st.floats(1e-3, 1)), st.integers(0, 2 ** 32 - 1))
def test_systematic_counts_within_one(w, seed):
    w = w / w.sum()
    c = np.bincount(systematic_indices(w, np.random.default_rng(seed)), minlength=len(w))
    assert c.sum() == len(w)
    assert np.all(np.abs(c - len(w) * w) < 1 + 1e-9)


def test_degenerate_ensemble_rejected():
    with pytest.raises(DegenerateWeights):
        ParticleEnsemble(np.zeros((3, 1)), np.full(3, -np.inf))


# -- pCN ---------------------------------------------------------------------------------

def test_pcn_config_validation():
    with pytest.raises(ValueError):
        PcnConfig(beta=1.0)
    cfg = PcnConfig(beta=0.5)
    cfg.adapt(0.5)
    assert cfg.beta == pytest.approx(0.6)
    cfg.adapt(0.01)
    assert cfg.beta == pytest.approx(0.5)
    cfg.adapt(0.2)
    assert cfg.beta == pytest.approx(0.5)


def test_reference_target_always_accepts(rng):
    cfg = PcnConfig(beta=0.9)
    x = np.zeros(3)
    for _ in range(200):
        x, ok = pcn_move(x, lambda c: 0.0, 1.0, cfg, rng)
        assert ok


def test_tiny_step_stays_put(rng):
    cfg = PcnConfig(beta=1e-12)
    x = np.array([0.3, -1.2])
    y, _ = pcn_move(x, lambda c: -(c ** 2).sum(), 1.0, cfg, rng)
    np.testing.assert_allclose(y, x, atol=1e-10)


def _ratio_1d(mean, sd):
    # log dN(mean, sd^2)/dN(0, 1)
    return lambda c: (-0.5 * ((c - mean) / sd) ** 2 - math.log(sd) + 0.5 * c ** 2).sum(-1)


def test_single_chain_mean(rng):
    cfg = PcnConfig(beta=0.5)
    target = _ratio_1d(1.0, 0.5)
    x, chain = np.zeros(1), np.empty(100_000)
    for k in range(len(chain)):
        x, _ = pcn_move(x, target, 1.0, cfg, rng)
        chain[k] = x[0]
    assert abs(chain.mean() - 1.0) < 3 * batch_se(chain)


def test_chain_ensemble_invariance(rng):
    # 10^4 chains started in the target, 10^2 steps each
    target = _ratio_1d(1.0, 0.5)
    x = 1.0 + 0.5 * rng.standard_normal((10_000, 1))
    r = target(x)
    for _ in range(100):
        x, r, _ = pcn_sweep(x, r, target, 1.0, 0.7, rng)
    n = len(x)
    assert abs(x.mean() - 1.0) < 3 * 0.5 / math.sqrt(n)
    assert abs(x.var() - 0.25) < 3 * 0.25 * math.sqrt(2 / (n - 1))


def test_sweep_rejects_keep_ratio(rng):
    x = np.zeros((5, 2))
    r = np.zeros(5)
    x2, r2, acc = pcn_sweep(x, r, lambda c: np.full(len(c), -np.inf), 1.0, 0.5, rng)
    assert not acc.any()
    np.testing.assert_array_equal(x2, x)
    np.testing.assert_array_equal(r2, r)


# -- tempering ----------------------------------------------------------------------------

def test_tempering_recovers_conjugate_posterior(rng):
    m, s = np.array([1.0, -0.5]), 0.5
    coeffs = rng.standard_normal((2000, 2))
    res = temper(coeffs, gaussian_loglik(m, s), TemperingLadder(30), PcnConfig(moves=5), rng, 1.0)
    w = np.exp(res.logw)
    assert abs(w.sum() - 1) < 1e-12
    post_var = s * s / (1 + s * s)
    mu = w @ res.coeffs
    np.testing.assert_allclose(mu, m / (1 + s * s), atol=4 * math.sqrt(post_var / 2000))
    np.testing.assert_allclose(w @ (res.coeffs - mu) ** 2, post_var, rtol=0.15)
    assert res.log_evidence == pytest.approx(gaussian_evidence(m, s), abs=0.1)


def test_evidence_invariant_to_ladder():
    m, s = np.array([0.8, -0.3, 0.5]), 0.7
    est = {}
    for n in (50, 200):
        vals = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            res = temper(rng.standard_normal((300, 3)), gaussian_loglik(m, s), TemperingLadder(n),
                         PcnConfig(moves=2), rng, 1.0)
            vals.append(res.log_evidence)
        est[n] = np.mean(np.exp(vals))
    exact = math.exp(gaussian_evidence(m, s))
    for n, z in est.items():
        assert abs(z / exact - 1) < 0.05, n
    assert abs(est[50] / est[200] - 1) < 0.05


def test_records_and_reproducibility():
    def run(seed):
        rng = np.random.default_rng(seed)
        return temper(rng.standard_normal((100, 4)), gaussian_loglik(np.ones(4), 0.3), TemperingLadder(20),
                      PcnConfig(), rng, 1.0)
    a, b, c = run(3), run(3), run(4)
    np.testing.assert_array_equal(a.coeffs, b.coeffs)
    np.testing.assert_array_equal(a.logw, b.logw)
    assert not np.array_equal(a.coeffs, c.coeffs)
    assert [r.step for r in a.records] == list(range(1, 21))
    assert a.records[-1].temperature == 1.0
    assert any(r.resampled for r in a.records)
    assert all(np.isnan(r.acceptance) for r in a.records if not r.resampled)


def test_all_infinite_likelihood_aborts(rng):
    with pytest.raises(DegenerateWeights, match="frame 5"):
        temper(rng.standard_normal((10, 2)), lambda c: np.full(len(c), -np.inf), TemperingLadder(5),
               PcnConfig(), rng, 1.0, frame=5)


def test_ladder_schedule():
    t = TemperingLadder(100).temperatures
    assert t[0] == 0 and t[-1] == 1 and len(t) == 101 and np.all(np.diff(t) > 0)
    with pytest.raises(ValueError):
        TemperingLadder(0)


# -- filtering and prediction ---------------------------------------------------------------

def test_flat_likelihood_filter_matches_prior():
    model = TemporalModel(100.0, times=tuple(np.arange(1, 6) / 5))
    rng = np.random.default_rng(0)
    hist = run_filter(range(5), np.arange(1, 6) / 5, lambda k: (lambda c: np.zeros(len(c))), model, 4, 2000,
                      TemperingLadder(10), PcnConfig(), rng)
    for k, ens in enumerate(hist):
        v_true = 100 * ens.t
        assert np.all(np.abs(ens.mean()) < 3 * math.sqrt(v_true / ens.N))
        np.testing.assert_allclose(ens.var(), v_true, rtol=3 * math.sqrt(2 / ens.N))


def test_repeated_frames_shrink_variance():
    # static truth, tiny diffusion so successive frames pile up information
    m, s = np.array([0.5, -0.2]), 0.5
    times = np.arange(1, 7) / 6
    model = TemporalModel(1e-4 * 6, times=tuple(times))
    rng = np.random.default_rng(1)
    first = ParticleEnsemble.uniform(rng.standard_normal((1000, 2)), index=0, t=times[0])
    ens, vs = first, []
    cfg = PcnConfig(moves=5)
    for k in range(6):
        if ens.index == 0:
            res = temper(ens.coeffs, gaussian_loglik(m, s), TemperingLadder(20), cfg, rng, 1.0)
            ens = ParticleEnsemble(res.coeffs, res.logw, 1, times[0])
        else:
            ens, _ = filter_step(ens, gaussian_loglik(m, s), times[k], model, TemperingLadder(20), cfg, rng)
        vs.append(ens.var().sum())
    assert np.all(np.diff(vs) < 0)


def test_filter_step_advances_index(rng):
    model = TemporalModel(10.0)
    ens = ParticleEnsemble.uniform(rng.standard_normal((50, 3)), index=2, t=0.2)
    out, recs = filter_step(ens, gaussian_loglik(np.zeros(3), 1.0), 0.3, model, TemperingLadder(5),
                            PcnConfig(), rng)
    assert out.index == 3 and out.t == 0.3 and len(recs) == 5


def test_predictive_law(rng):
    model = TemporalModel(100.0, tau=0.01)
    base = rng.standard_normal((100_000, 3)) * np.array([0.5, 1.0, 2.0]) + 1.0
    ens = ParticleEnsemble.uniform(base, index=4, t=0.5)
    s = 0.02
    out = predictive(ens, s, model, rng)
    inc = 100 * (s + 0.01)
    target = ens.var() + inc
    n = ens.N
    assert np.all(np.abs(out.var() - target) < 3 * target * math.sqrt(2 / (n - 1)))
    assert np.all(np.abs(out.mean() - ens.mean()) < 3 * np.sqrt(inc / n))
    np.testing.assert_array_equal(out.logw, ens.logw)
    assert out.index == 5 and out.t == pytest.approx(0.52)


def test_predictive_vanishing_horizon(rng):
    model = TemporalModel(100.0)
    ens = ParticleEnsemble.uniform(rng.standard_normal((10, 2)), index=1, t=0.1)
    out = predictive(ens, 1e-14, model, rng)
    np.testing.assert_allclose(out.coeffs, ens.coeffs, atol=1e-5)
    with pytest.raises(ValueError):
        predictive(ens, 0.0, model, rng)
