import math

import numpy as np
import pytest

from jpegxs_uep import Optimizer
from jpegxs_uep.Channel import ChannelManager, ChannelSpec, LossPmf
from jpegxs_uep.Codestream import CodestreamManager, CodestreamProfile
from jpegxs_uep.Optimizer import ChannelDistortionModel, OptimizerManager, ProtectionPlan, frame_blocks
from jpegxs_uep.utils import ConvergenceError, RateRangeError


@pytest.fixture(scope="module")
def profile():
    return CodestreamManager.load_profile("default")


def _model(profile, plr, abel=20.0, target=400000, kind="gilbert"):
    params = ChannelManager.fit_gilbert(ChannelSpec(kind=kind, packet_loss_rate=plr, avg_burst_len=abel))
    return OptimizerManager.distortion_model(profile, ChannelManager.block_loss_pmf(params, 255), target)


def _small_profile():
    return CodestreamProfile(
        name="small",
        rate_grid=[1000, 2000, 4000],
        class_sizes=[[100, 200, 700], [150, 350, 1500], [250, 650, 3100]],
        source_mse=[50.0, 30.0, 20.0],
    ).check()


def test_frame_blocks():
    assert frame_blocks(100000, 255, 1500) == 1
    assert frame_blocks(255 * 1500, 255, 1500) == 1
    assert frame_blocks(400000, 255, 1500) == 2
    assert frame_blocks(0, 255, 1500) == 1


def test_dc_class_lossless(profile):
    model = _model(profile, 0.0)
    for i in (1, 2, 3):
        for k in (1, 100, 255):
            assert OptimizerManager.dc_class(i, k, model) == 0.0


def test_dc_class_bernoulli_closed_form(profile):
    params = ChannelManager.fit_gilbert(ChannelSpec(kind="bernoulli", packet_loss_rate=0.05))
    model = OptimizerManager.distortion_model(profile, ChannelManager.block_loss_pmf(params, 255))
    assert model.blocks == 1
    # 100 * delta * E[Y] / n = 100 * 90 * 0.05
    assert abs(OptimizerManager.dc_class(2, 255, model) - 450.0) < 1e-9
    assert OptimizerManager.dc_class(1, 255, model) == pytest.approx(9000 * (1 - 0.95 ** 255))
    assert OptimizerManager.dc_class(3, 255, model) == pytest.approx(4 * (1 - 0.95 ** 255))


def test_dc_class_small_pmf():
    pmf = LossPmf(n=4, pmf=np.array([0.5, 0.2, 0.15, 0.1, 0.05]))
    model = ChannelDistortionModel(pmf=pmf, delta=90.0, delta_all=9000.0, delta_hf=4.0)
    assert OptimizerManager.dc_class(1, 2, model) == pytest.approx(9000 * 0.15)
    assert OptimizerManager.dc_class(2, 3, model) == pytest.approx(9000 * (2 * 0.15 + 3 * 0.1 + 4 * 0.05) / 4)
    assert OptimizerManager.dc_class(3, 4, model) == pytest.approx(4 * 0.5)
    # an empty class costs nothing
    assert OptimizerManager.dc_class(1, 4, model, class_bytes=0) == 0.0


def test_dc_class_frame_of_blocks():
    pmf = LossPmf(n=4, pmf=np.array([0.5, 0.2, 0.15, 0.1, 0.05]))
    model = ChannelDistortionModel(pmf=pmf, delta=90.0, delta_all=9000.0, delta_hf=4.0, blocks=3)
    # class 1 fails if any of the 3 blocks fails
    assert OptimizerManager.dc_class(1, 4, model) == pytest.approx(9000 * (1 - 0.5 ** 3))
    # class 3 scales with the fraction of failed blocks
    assert OptimizerManager.dc_class(3, 4, model) == pytest.approx(4 * 0.5)
    hf = ChannelDistortionModel(pmf=pmf, delta=90.0, delta_all=9000.0, delta_hf=4.0, blocks=3, hf_all_or_nothing=True)
    assert OptimizerManager.dc_class(3, 4, hf) == pytest.approx(4 * (1 - 0.5 ** 3))


def test_dc_class_bad_arguments(profile):
    model = _model(profile, 0.05)
    with pytest.raises(ValueError):
        OptimizerManager.dc_class(4, 100, model)
    with pytest.raises(ValueError):
        OptimizerManager.dc_class(1, 0, model)
    with pytest.raises(ValueError):
        OptimizerManager.dc_class(1, 256, model)


def test_class_terms_nonincreasing_with_protection(profile):
    model = _model(profile, 0.10, abel=30)
    # lower K (more parity) never costs more distortion
    assert np.all(np.diff(model.class_terms, axis=1) >= -1e-12)


def test_expected_total_distortion(profile):
    lossless = _model(profile, 0.0)
    plan = ProtectionPlan(r_s=400000, k=[200, 220, 240], r_c=0)
    assert OptimizerManager.expected_total_distortion(plan, profile, lossless) == pytest.approx(16.0)

    model = _model(profile, 0.05)
    plan = ProtectionPlan(r_s=400000, k=[255, 255, 255], r_c=400000)
    expected = (
        CodestreamManager.source_distortion(profile, 400000)
        + OptimizerManager.dc_class(1, 255, model)
        + OptimizerManager.dc_class(2, 255, model)
        + OptimizerManager.dc_class(3, 255, model)
    )
    assert OptimizerManager.expected_total_distortion(plan, profile, model) == pytest.approx(expected)


def test_expected_frame_distortion_by_hand():
    profile = _small_profile()
    pmf = LossPmf(n=4, pmf=np.array([0.5, 0.2, 0.15, 0.1, 0.05]))
    model = ChannelDistortionModel(pmf=pmf, delta=90.0, delta_all=9000.0, delta_hf=4.0)
    plan = ProtectionPlan(r_s=2000, k=[2, 3, 4], n=4, r_c=0)

    expected, decoded = OptimizerManager.expected_frame_distortion(plan, profile, model)
    # class 1 survives with Y <= 2; of those, class 2 loses 2/4 when Y = 2, class 3 is dropped when Y >= 1
    assert decoded == pytest.approx(0.85)
    assert expected == pytest.approx(0.15 * 9000 + 0.85 * 30 + 9000 * 0.5 * 0.15 + 4 * 0.35)


def test_expected_frame_distortion_lossless(profile):
    model = _model(profile, 0.0)
    plan = ProtectionPlan(r_s=300000, k=[255, 255, 255], r_c=300000)
    assert OptimizerManager.expected_frame_distortion(plan, profile, model) == pytest.approx((21.0, 1.0))


@pytest.mark.parametrize("lam", [1e-12, 1e-6, 1e-4, 1e-2, 1e3])
def test_solve_k_matches_brute_force(profile, lam):
    model = _model(profile, 0.05)
    r_s = 300000
    sizes = CodestreamManager.class_sizes(profile, r_s)
    k = OptimizerManager.solve_k_given_lambda(lam, r_s, profile, model)
    for i in range(3):
        costs = [OptimizerManager.dc_class(i + 1, kk, model) + lam * 255 * sizes[i] / kk for kk in range(1, 256)]
        best = min(costs)
        assert costs[k[i] - 1] == best
        # ties go to the larger K
        assert all(c > best for c in costs[k[i]:])


def test_solve_k_limits(profile):
    model = _model(profile, 0.05)
    assert OptimizerManager.solve_k_given_lambda(1e3, 300000, profile, model) == [255, 255, 255]
    with pytest.raises(ValueError):
        OptimizerManager.solve_k_given_lambda(0.0, 300000, profile, model)


def test_solve_rs_limits(profile):
    assert OptimizerManager.solve_rs_given_lambda(1e3, [255, 255, 255], profile) == profile.min_rate
    assert OptimizerManager.solve_rs_given_lambda(1e-12, [255, 255, 255], profile) == profile.max_rate


@pytest.mark.parametrize("lam", [1e-5, 5e-5, 2e-4])
def test_solve_rs_matches_dense_sweep(profile, lam):
    k = [60, 120, 250]
    r_s = OptimizerManager.solve_rs_given_lambda(lam, k, profile)

    def objective(rate):
        sizes = CodestreamManager.class_sizes(profile, rate)
        return CodestreamManager.source_distortion(profile, rate) + lam * 255 * sum(s / kk for s, kk in zip(sizes, k))

    sweep = min(objective(rate) for rate in np.arange(profile.min_rate, profile.max_rate + 1, 1000))
    assert objective(r_s) <= sweep + 1e-9


def test_solve_uep_lossless(profile):
    model = _model(profile, 0.0)
    plan = OptimizerManager.solve_uep(400000, profile, model)
    assert plan.k == [255, 255, 255]
    assert plan.r_s == pytest.approx(400000)
    assert plan.expected_distortion == pytest.approx(16.0)


def test_solve_uep_default_profile(profile):
    model = _model(profile, 0.05)
    plan = OptimizerManager.solve_uep(400000, profile, model)

    assert plan.scheme == "uep"
    assert 0.99 * 400000 <= plan.r_c <= 1.01 * 400000
    assert plan.r_c >= plan.r_s
    assert all(1 <= k <= 255 for k in plan.k)
    assert plan.k[0] <= plan.k[1]
    assert plan.k[0] <= plan.k[2]
    assert plan.blocks == 2
    assert plan.realized_r_c is not None
    assert plan.expected_distortion == pytest.approx(OptimizerManager.expected_total_distortion(plan, profile, model))


@pytest.mark.parametrize("plr", [0.01, 0.05, 0.10])
def test_class_one_most_protected(profile, plr):
    plan = OptimizerManager.solve_uep(400000, profile, _model(profile, plr))
    assert plan.k[0] <= plan.k[1]
    assert plan.k[0] <= plan.k[2]


@pytest.mark.parametrize("target", [200000, 400000, 800000])
def test_solve_uep_beats_coarse_grid(profile, target):
    model = _model(profile, 0.05, target=target)
    plan = OptimizerManager.solve_uep(target, profile, model)
    coarse = OptimizerManager.coarse_grid_search(target, profile, model)
    assert coarse is not None
    assert plan.expected_distortion <= 1.01 * coarse.expected_distortion


@pytest.mark.parametrize("target", [150000, 400000, 1000000])
def test_uep_not_worse_than_eep(profile, target):
    model = _model(profile, 0.05, target=target)
    uep = OptimizerManager.solve_uep(target, profile, model)
    eep = OptimizerManager.solve_eep(target, profile, model)
    assert uep.expected_distortion <= eep.expected_distortion + 1e-9


def test_solve_uep_monotone_in_channel_quality(profile):
    values = [
        OptimizerManager.solve_uep(400000, profile, _model(profile, plr)).expected_distortion
        for plr in (0.0, 0.01, 0.05, 0.10)
    ]
    assert all(a <= b for a, b in zip(values, values[1:]))


def test_marginal_brackets_small_pmf():
    profile = _small_profile()
    pmf = LossPmf(n=4, pmf=np.array([0.5, 0.2, 0.15, 0.1, 0.05]))
    model = ChannelDistortionModel(pmf=pmf, delta=90.0, delta_all=9000.0, delta_hf=4.0)
    plan = ProtectionPlan(r_s=2000, k=[2, 4, 4], n=4, r_c=0)

    brackets = OptimizerManager.marginal_brackets(plan, profile, model)
    assert brackets[0] == pytest.approx((3.0, 13.5))
    assert brackets[1][0] == pytest.approx(27 / 7)
    assert brackets[2][0] == pytest.approx(0.0016)
    assert brackets[1][1] == math.inf
    assert brackets[2][1] == math.inf

    wide = OptimizerManager.marginal_brackets(plan, profile, model, steps=1)
    assert wide[0] == pytest.approx((3.0, 36.0))


@pytest.mark.parametrize("plr", [0.01, 0.05, 0.10])
@pytest.mark.parametrize("target", [150000, 400000, 1000000])
def test_multiplier_brackets_solution(profile, plr, target):
    model = _model(profile, plr, target=target)
    plan = OptimizerManager.solve_uep(target, profile, model)
    lam = plan.lagrange_multiplier

    assert 0 < lam < Optimizer.LAMBDA_MAX
    for lower, upper in OptimizerManager.marginal_brackets(plan, profile, model, steps=1):
        assert lower * (1 - 1e-9) <= lam <= upper * (1 + 1e-9)


@pytest.mark.parametrize("plr", [0.01, 0.05, 0.10])
def test_channel_rate_nonincreasing_in_lambda(profile, plr):
    model = _model(profile, plr)
    rates = [
        OptimizerManager.solve_for_lambda(float(lam), profile, model)["r_c"]
        for lam in np.geomspace(1e-7, 1e-1, 25)
    ]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(rates, rates[1:]))


def test_solve_uep_below_profile(profile):
    with pytest.raises(RateRangeError):
        OptimizerManager.solve_uep(10000, profile, _model(profile, 0.05, target=10000))


def test_convergence_error_keeps_last_iterate(profile, monkeypatch):
    monkeypatch.setattr(Optimizer, "MAX_INNER_ITERATIONS", 0)
    with pytest.raises(ConvergenceError) as info:
        OptimizerManager.solve_for_lambda(1e-4, profile, _model(profile, 0.05))
    assert info.value.last_iterate["lambda"] == 1e-4
    assert info.value.last_iterate["k"] == [255, 255, 255]


def test_solve_eep_matches_exhaustive_scan(profile):
    target = 400000
    model = _model(profile, 0.05)
    plan = OptimizerManager.solve_eep(target, profile, model)

    best_k, best_value = None, np.inf
    for k in range(1, 256):
        r_s = min(target * k / 255, profile.max_rate)
        if r_s < profile.min_rate:
            continue
        value = CodestreamManager.source_distortion(profile, r_s) + OptimizerManager.dc_class(1, k, model)
        if value <= best_value:
            best_k, best_value = k, value
    assert plan.k == [best_k] * 3
    assert plan.r_s == pytest.approx(min(target * best_k / 255, profile.max_rate))
    assert plan.scheme == "eep"


def test_solve_eep_without_losses_or_drop_cost(profile):
    assert OptimizerManager.solve_eep(400000, profile, _model(profile, 0.0)).k == [255, 255, 255]
    free = profile.model_copy(update={"delta_all": 0.0, "delta_hf": 0.0})
    assert OptimizerManager.solve_eep(400000, free, _model(free, 0.05)).k == [255, 255, 255]


def test_unprotected_plan(profile):
    plan = OptimizerManager.unprotected_plan(400000, profile, _model(profile, 0.05))
    assert plan.k == [255, 255, 255]
    assert plan.r_s == 400000
    assert plan.r_c == pytest.approx(400000)
    capped = OptimizerManager.unprotected_plan(2_000_000, profile, _model(profile, 0.05, target=2_000_000))
    assert capped.r_s == profile.max_rate


def test_headline_gains(profile):
    model = _model(profile, 0.05)
    uep = OptimizerManager.solve_uep(400000, profile, model)
    eep = OptimizerManager.solve_eep(400000, profile, model)
    bare = OptimizerManager.unprotected_plan(400000, profile, model)
    uep_mse, uep_decoded = OptimizerManager.expected_frame_distortion(uep, profile, model)
    eep_mse, eep_decoded = OptimizerManager.expected_frame_distortion(eep, profile, model)
    bare_mse, _ = OptimizerManager.expected_frame_distortion(bare, profile, model)

    assert uep_mse <= 0.6 * eep_mse
    assert uep_mse <= 0.2 * bare_mse
    assert uep_decoded >= eep_decoded
