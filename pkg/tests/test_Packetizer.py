import numpy as np
import pytest

from jpegxs_uep.Packetizer import (
    ClassRecovery,
    ClassState,
    PacketizerManager,
    integer_class_sizes,
)
from jpegxs_uep.utils import LayoutError, ParameterError


def _payloads(rng, sizes):
    return [rng.integers(0, 256, size=size, dtype=np.uint8).tobytes() for size in sizes]


def test_plan_layout():
    layout = PacketizerManager.plan_layout([200, 400, 400], [100, 200, 200], n=255)
    assert layout.l == (2, 2, 2)
    assert layout.symbols_per_packet == 6
    assert layout.capacity(1) == 400
    assert layout.class_columns(2) == slice(4, 6)


def test_plan_layout_rounds_up():
    layout = PacketizerManager.plan_layout([201, 0, 1], [100, 50, 255], n=255)
    assert layout.l == (3, 0, 1)


def test_plan_layout_overflow():
    with pytest.raises(LayoutError):
        PacketizerManager.plan_layout([1501, 0, 0], [1, 255, 255], n=255, packet_len=1500)


def test_plan_layout_invalid_k():
    with pytest.raises(ParameterError):
        PacketizerManager.plan_layout([10, 10, 10], [0, 10, 10])
    with pytest.raises(ParameterError):
        PacketizerManager.plan_layout([10, 10, 10], [10, 256, 10])
    with pytest.raises(ParameterError):
        PacketizerManager.plan_layout([10, 10], [10, 10])


def test_frame_layout_grows_blocks():
    # one block would need 140 + 367 + 1391 symbols per packet
    frame = PacketizerManager.frame_layout([8400, 44000, 347600], [60, 120, 250], n=255, packet_len=1500)
    assert frame.blocks == 2
    assert frame.share == (4200, 22000, 173800)
    assert frame.block.symbols_per_packet <= 1500
    assert frame.realized_r_c == 2 * 255 * frame.block.symbols_per_packet


def test_frame_layout_ragged_last_block():
    frame = PacketizerManager.frame_layout([10, 7, 5], [4, 4, 4], n=8, min_blocks=3)
    assert frame.blocks == 3
    assert frame.share == (4, 3, 2)
    assert frame.payload_lens(0) == (4, 3, 2)
    assert frame.payload_lens(2) == (2, 1, 1)
    assert sum(frame.payload_lens(b)[0] for b in range(3)) == 10


def test_roundtrip_without_losses():
    rng = np.random.default_rng(5)
    sizes = (300, 1200, 5000)
    payloads = _payloads(rng, sizes)
    frame = PacketizerManager.frame_layout(sizes, [100, 180, 240], n=255, min_blocks=2)
    blocks = PacketizerManager.build_blocks(payloads, frame)

    assert len(blocks) == 2
    recovered = [b"", b"", b""]
    for block in blocks:
        assert block.packets.shape == (255, frame.block.symbols_per_packet)
        recovery, data = PacketizerManager.recover_block(block, np.zeros(255, dtype=bool), frame.block)
        assert all(state == ClassState.recovered for state in recovery.states)
        recovered = [r + d for r, d in zip(recovered, data)]
    assert recovered == payloads


def test_recover_after_losses():
    rng = np.random.default_rng(6)
    sizes = (500, 2000, 4000)
    k = (150, 230, 250)
    payloads = _payloads(rng, sizes)
    frame = PacketizerManager.frame_layout(sizes, k, n=255)
    (block,) = PacketizerManager.build_blocks(payloads, frame)

    # 30 losses: class 1 survives, class 2 partially lost, class 3 dropped
    mask = np.zeros(255, dtype=bool)
    mask[rng.choice(255, size=30, replace=False)] = True
    received = block.packets.copy()
    received[mask] = 0
    recovery, data = PacketizerManager.recover_block(
        type(block)(packets=received, class_payload_lens=block.class_payload_lens), mask, frame.block
    )

    assert recovery.states == (ClassState.recovered, ClassState.partially_lost, ClassState.unrecoverable)
    assert recovery.fraction_lost == (0.0, pytest.approx(30 / 255), 1.0)
    assert recovery.lost_packet_count == 30
    assert data[0] == payloads[0]
    assert len(data[1]) == sizes[1]
    assert data[2] == b""
    assert recovery == ClassRecovery.from_loss_count(30, frame.block, frame.payload_lens(0))


def test_loss_positions_do_not_matter():
    rng = np.random.default_rng(7)
    sizes = (100, 400, 900)
    payloads = _payloads(rng, sizes)
    frame = PacketizerManager.frame_layout(sizes, [200, 220, 240], n=255)
    (block,) = PacketizerManager.build_blocks(payloads, frame)
    for _ in range(5):
        mask = np.zeros(255, dtype=bool)
        mask[rng.choice(255, size=55, replace=False)] = True
        recovery, data = PacketizerManager.recover_block(block, mask, frame.block)
        assert recovery.states[0] == ClassState.recovered
        assert data[0] == payloads[0]


def test_from_loss_count_boundaries():
    frame = PacketizerManager.frame_layout([100, 100, 100], [200, 220, 240], n=255)
    layout, lens = frame.block, frame.payload_lens(0)
    # n - K_3 = 15 losses are still recoverable for class 3
    assert ClassRecovery.from_loss_count(15, layout, lens).states[2] == ClassState.recovered
    assert ClassRecovery.from_loss_count(16, layout, lens).states[2] == ClassState.unrecoverable
    assert ClassRecovery.from_loss_count(56, layout, lens).states[0] == ClassState.unrecoverable
    # an empty class is never lost
    assert ClassRecovery.from_loss_count(255, layout, (100, 0, 100)).states[1] == ClassState.recovered


def test_build_blocks_checks_sizes():
    frame = PacketizerManager.frame_layout([10, 10, 10], [5, 5, 5], n=8)
    with pytest.raises(ParameterError):
        PacketizerManager.build_blocks([bytes(10), bytes(9), bytes(10)], frame)


def test_integer_class_sizes():
    assert integer_class_sizes([10.6, 20.2, 69.2], 100) == (11, 20, 69)
    assert sum(integer_class_sizes([33.3, 33.3, 33.4], 100)) == 100
    assert integer_class_sizes([1.0, 2.0, 3.0], 6) == (1, 2, 3)


def test_dump_and_load(tmp_path):
    rng = np.random.default_rng(8)
    sizes = (50, 120, 300)
    frame = PacketizerManager.frame_layout(sizes, [20, 40, 60], n=64, min_blocks=2)
    blocks = PacketizerManager.build_blocks(_payloads(rng, sizes), frame)
    path = tmp_path / "frame.bin"
    PacketizerManager.dump_blocks(blocks, path)

    loaded = PacketizerManager.load_blocks(path)
    assert len(loaded) == len(blocks)
    for a, b in zip(blocks, loaded):
        assert np.array_equal(a.packets, b.packets)
        assert a.class_payload_lens == b.class_payload_lens


def test_load_rejects_other_files(tmp_path):
    path = tmp_path / "other.bin"
    path.write_bytes(b"not a dump")
    with pytest.raises(ParameterError):
        PacketizerManager.load_blocks(path)
