import numpy as np

from jpegxs_uep import UepActor
from jpegxs_uep.Channel import ChannelSpec
from jpegxs_uep.ReedSolomon import RsCode
from jpegxs_uep.Simulator import ExperimentConfig


def test_actor_plan_and_decode():
    code = RsCode(255, 200)
    info = bytes(range(200))
    erased = np.zeros(255, dtype=bool)
    erased[100:155] = True
    result = UepActor.rs_decode_erasures(code, UepActor.rs_encode(code, info), erased)
    assert result.recovered
    assert result.data == info

    profile = UepActor.load_profile("default")
    params = UepActor.fit_gilbert(ChannelSpec(packet_loss_rate=0.05, avg_burst_len=20))
    model = UepActor.distortion_model(profile, UepActor.block_loss_pmf(params, 255), 400000)
    plan = UepActor.solve_uep(400000, profile, model)
    assert plan.k[0] <= plan.k[1]


def test_actor_experiment_and_store():
    config = ExperimentConfig(
        channel=ChannelSpec(packet_loss_rate=0.05, avg_burst_len=20),
        target_r_c=[400000],
        trials=10,
    )
    report = UepActor.run_experiment(config)
    run = UepActor.store_report(report)
    assert UepActor.read_run(run.id) is not None

    # Cleanup
    assert UepActor.delete_run(run.id) is True
