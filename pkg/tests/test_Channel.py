import numpy as np
import pytest
from pydantic import ValidationError
from scipy.stats import binom

from jpegxs_uep.Channel import ChannelManager, ChannelSpec, GilbertParams, LossPmf
from jpegxs_uep.utils import ParameterError


def test_fit_gilbert():
    params = ChannelManager.fit_gilbert(ChannelSpec(packet_loss_rate=0.05, avg_burst_len=20))
    assert params.p_bg == pytest.approx(0.05)
    assert params.p_gb == pytest.approx(0.05 * 0.05 / 0.95)
    assert params.loss_rate == pytest.approx(0.05)
    assert params.burst_len == pytest.approx(20)


def test_fit_bernoulli():
    params = ChannelManager.fit_gilbert(ChannelSpec(kind="bernoulli", packet_loss_rate=0.1))
    assert params.p_gb == pytest.approx(0.1)
    assert params.p_bg == pytest.approx(0.9)
    assert params.loss_rate == pytest.approx(0.1)


def test_fit_gilbert_infeasible():
    # plr 0.9 with bursts of one packet needs p_gb = 9
    with pytest.raises(ParameterError):
        ChannelManager.fit_gilbert(ChannelSpec(packet_loss_rate=0.9, avg_burst_len=1))


def test_channel_spec_validation():
    with pytest.raises(ValidationError):
        ChannelSpec(packet_loss_rate=1.0)
    with pytest.raises(ValidationError):
        ChannelSpec(packet_loss_rate=0.05, avg_burst_len=0.5)


def test_sample_losses_is_seeded():
    params = ChannelManager.fit_gilbert(ChannelSpec(packet_loss_rate=0.05, avg_burst_len=20))
    a = ChannelManager.sample_losses(params, 10_000, 7)
    b = ChannelManager.sample_losses(params, 10_000, 7)
    c = ChannelManager.sample_losses(params, 10_000, 8)
    assert a.dtype == bool and a.shape == (10_000,)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sample_losses_statistics():
    params = ChannelManager.fit_gilbert(ChannelSpec(packet_loss_rate=0.05, avg_burst_len=20))
    mask = ChannelManager.sample_losses(params, 2_000_000, 1)
    assert mask.mean() == pytest.approx(0.05, abs=0.005)

    # mean length of runs of losses
    edges = np.diff(np.concatenate(([0], mask.astype(np.int8), [0])))
    runs = np.flatnonzero(edges == -1) - np.flatnonzero(edges == 1)
    assert runs.mean() == pytest.approx(20, rel=0.1)


def test_lossless_channel():
    params = ChannelManager.fit_gilbert(ChannelSpec(packet_loss_rate=0.0, avg_burst_len=20))
    assert not ChannelManager.sample_losses(params, 1000, 3).any()
    pmf = ChannelManager.block_loss_pmf(params, 255)
    assert pmf.pmf[0] == pytest.approx(1.0)
    assert ChannelManager.tail_prob(pmf, 1) == pytest.approx(0.0)


def test_block_loss_pmf_sums_to_one():
    params = ChannelManager.fit_gilbert(ChannelSpec(packet_loss_rate=0.10, avg_burst_len=30))
    pmf = ChannelManager.block_loss_pmf(params, 255)
    assert pmf.pmf.shape == (256,)
    assert pmf.pmf.sum() == pytest.approx(1.0, abs=1e-12)
    assert (pmf.pmf >= 0).all()
    assert pmf.mean == pytest.approx(255 * 0.10, rel=1e-9)


def test_block_loss_pmf_limits():
    params = GilbertParams(p_gb=0.01, p_bg=0.2)
    with pytest.raises(ParameterError):
        ChannelManager.block_loss_pmf(params, 0)
    with pytest.raises(ParameterError):
        ChannelManager.block_loss_pmf(params, 256)
    one = ChannelManager.block_loss_pmf(params, 1)
    assert one.pmf[1] == pytest.approx(params.loss_rate)


@pytest.mark.parametrize("plr", [0.01, 0.05, 0.10])
def test_bernoulli_pmf_matches_binomial(plr):
    params = ChannelManager.fit_gilbert(ChannelSpec(kind="bernoulli", packet_loss_rate=plr))
    pmf = ChannelManager.block_loss_pmf(params, 255)
    expected = binom.pmf(np.arange(256), 255, plr)
    assert np.abs(pmf.pmf - expected).max() < 1e-10


def test_tail_prob():
    pmf = LossPmf(n=4, pmf=np.array([0.5, 0.2, 0.15, 0.1, 0.05]))
    # k = n: any loss corrupts
    assert ChannelManager.tail_prob(pmf, 4) == pytest.approx(0.5)
    assert ChannelManager.tail_prob(pmf, 2) == pytest.approx(0.15)
    assert ChannelManager.tail_prob(pmf, 1) == pytest.approx(0.05)
    assert np.allclose(pmf.tails(), [0.05, 0.15, 0.3, 0.5])
    with pytest.raises(ParameterError):
        ChannelManager.tail_prob(pmf, 0)
    with pytest.raises(ParameterError):
        ChannelManager.tail_prob(pmf, 5)


def test_loss_fraction_tails():
    pmf = LossPmf(n=4, pmf=np.array([0.5, 0.2, 0.15, 0.1, 0.05]))
    # k = 4: every j >= 1 counts
    expected_k4 = (1 * 0.2 + 2 * 0.15 + 3 * 0.1 + 4 * 0.05) / 4
    assert pmf.loss_fraction_tails()[3] == pytest.approx(expected_k4)
    # k = 1: only j = n
    assert pmf.loss_fraction_tails()[0] == pytest.approx(0.05)


def test_total_variation():
    a = LossPmf(n=2, pmf=np.array([0.5, 0.5, 0.0]))
    b = LossPmf(n=2, pmf=np.array([0.5, 0.0, 0.5]))
    assert ChannelManager.total_variation(a, a) == 0.0
    assert ChannelManager.total_variation(a, b) == pytest.approx(0.5)
    with pytest.raises(ParameterError):
        ChannelManager.total_variation(a, LossPmf(n=1, pmf=np.array([1.0, 0.0])))


@pytest.mark.slow
@pytest.mark.parametrize("plr", [0.01, 0.05, 0.10])
@pytest.mark.parametrize("abel", [10, 20, 30])
def test_pmf_matches_monte_carlo(plr, abel):
    params = ChannelManager.fit_gilbert(ChannelSpec(packet_loss_rate=plr, avg_burst_len=abel))
    exact = ChannelManager.block_loss_pmf(params, 255)
    sampled = ChannelManager.sample_block_histogram(params, 255, 1_000_000, 2024)
    assert ChannelManager.total_variation(exact, sampled) < 0.01
