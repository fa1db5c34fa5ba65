"""
This module builds and reads interleaving blocks.

An interleaving block is made of ``n`` channel packets. Class ``i`` of the
codestream is cut in ``l_i`` Reed-Solomon codewords of ``K_i`` information
symbols, and symbol ``s`` of every codeword travels in packet ``s``. Losing one
packet therefore erases exactly one symbol of every codeword, and class ``i`` is
entirely recovered as long as at most ``n - K_i`` packets of the block are lost.

A frame too large for one block is cut in ``B`` blocks; each class is split in
equal shares across the blocks (the last share may be shorter) and every block
uses the same layout.

.. list-table:: Classes
   :header-rows: 1

   * - Class Name
     - Description
   * - BlockLayout
     - ``n``, packet length ``L``, codewords per class ``l`` and information lengths ``K``.
   * - FrameLayout
     - Number of blocks and per-block class shares of one frame.
   * - InterleavingBlock
     - The ``n`` packets of one block plus the unpadded class payload lengths.
   * - ClassRecovery
     - Per class decode state after losses, and the number of lost packets.
   * - PacketizerManager
     - Static methods to lay out, build, recover and dump blocks.
"""

import logging
import math
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from .ReedSolomon import RsCode, ReedSolomonManager
from .utils import LayoutError, ParameterError

logger = logging.getLogger(__name__)

# Classes whose partial content is worth decoding; the others are dropped when corrupted
PARTIALLY_DECODABLE = (False, True, False)

_DUMP_MAGIC = b"XSUEPBLK"
_BLOCK_HEADER = struct.Struct(">IIIII")
_PACKET_HEADER = struct.Struct(">H")


@dataclass(frozen=True)
class BlockLayout:
    n: int
    packet_len: int
    l: Tuple[int, int, int]
    k: Tuple[int, int, int]

    @property
    def symbols_per_packet(self) -> int:
        return sum(self.l)

    def capacity(self, class_index: int) -> int:
        """Information bytes of one class per block."""
        return self.l[class_index] * self.k[class_index]

    def class_columns(self, class_index: int) -> slice:
        start = sum(self.l[:class_index])
        return slice(start, start + self.l[class_index])


@dataclass(frozen=True)
class FrameLayout:
    block: BlockLayout
    blocks: int
    class_bytes: Tuple[int, int, int]

    @property
    def share(self) -> Tuple[int, ...]:
        return tuple(math.ceil(size / self.blocks) for size in self.class_bytes)

    def payload_lens(self, block_index: int) -> Tuple[int, int, int]:
        """Class bytes carried by one block; only the last block can be short."""
        lens = []
        for size, share in zip(self.class_bytes, self.share):
            lens.append(max(0, min(share, size - block_index * share)))
        return tuple(lens)

    @property
    def packets(self) -> int:
        return self.blocks * self.block.n

    @property
    def realized_r_c(self) -> int:
        """Channel bytes actually sent for the frame."""
        return self.blocks * self.block.n * self.block.symbols_per_packet


@dataclass(frozen=True)
class InterleavingBlock:
    packets: np.ndarray
    class_payload_lens: Tuple[int, int, int]


class ClassState(str, Enum):
    recovered = "recovered"
    partially_lost = "partially_lost"
    unrecoverable = "unrecoverable"


@dataclass(frozen=True)
class ClassRecovery:
    states: Tuple[ClassState, ClassState, ClassState]
    fraction_lost: Tuple[float, float, float]
    lost_packet_count: int

    @staticmethod
    def from_loss_count(lost: int, layout: BlockLayout, payload_lens: Sequence[int]) -> "ClassRecovery":
        """Prediction from the number of lost packets alone (MDS codes ignore positions)."""
        states, fractions = [], []
        for i in range(3):
            if payload_lens[i] == 0 or lost <= layout.n - layout.k[i]:
                states.append(ClassState.recovered)
                fractions.append(0.0)
            elif PARTIALLY_DECODABLE[i]:
                states.append(ClassState.partially_lost)
                fractions.append(lost / layout.n)
            else:
                states.append(ClassState.unrecoverable)
                fractions.append(1.0)
        return ClassRecovery(states=tuple(states), fraction_lost=tuple(fractions), lost_packet_count=lost)


def integer_class_sizes(sizes: Sequence[float], total: int) -> Tuple[int, int, int]:
    """Rounds class sizes to whole bytes summing exactly to ``total`` (largest remainder)."""
    floors = [int(math.floor(size)) for size in sizes]
    remainders = sorted(range(len(sizes)), key=lambda i: (sizes[i] - floors[i], -i), reverse=True)
    missing = total - sum(floors)
    for i in remainders[:max(missing, 0)]:
        floors[i] += 1
    return tuple(floors)


class PacketizerManager:
    @staticmethod
    def plan_layout(class_bytes_per_block: Sequence[int], k: Sequence[int], n: int = 255, packet_len: int = 1500) -> BlockLayout:
        """Number of codewords each class needs in one block.

        Args:
            class_bytes_per_block (Sequence[int]): Bytes of each class in the block.
            k (Sequence[int]): Information symbols per codeword of each class.
            n (int): Packets per block (default: 255).
            packet_len (int): Maximum packet length L in bytes (default: 1500).

        Returns:
            BlockLayout: ``l_i = ceil(bytes_i / K_i)``.

        Raises:
            LayoutError: The codewords need more than ``packet_len`` symbols per packet.

        Example:
            .. code-block:: py

                layout = UepActor.plan_layout([200, 400, 400], [100, 200, 200], n=255)
                # layout.l == (2, 2, 2)
        """
        if len(k) != 3 or len(class_bytes_per_block) != 3:
            raise ParameterError("A layout needs exactly 3 classes")
        for i, k_i in enumerate(k):
            if not 1 <= k_i <= n:
                raise ParameterError(f"K_{i + 1}={k_i} must be in [1, {n}]")
        l = tuple(math.ceil(size / k_i) for size, k_i in zip(class_bytes_per_block, k))
        if sum(l) > packet_len:
            raise LayoutError(
                f"{sum(l)} codewords per block exceed the packet length {packet_len}; "
                f"lower the source rate or raise K"
            )
        return BlockLayout(n=n, packet_len=packet_len, l=l, k=tuple(int(k_i) for k_i in k))

    @staticmethod
    def frame_layout(class_bytes: Sequence[int], k: Sequence[int], n: int = 255, packet_len: int = 1500, min_blocks: int = 1) -> FrameLayout:
        """Smallest number of blocks (at least ``min_blocks``) whose shared layout fits.

        Example:
            .. code-block:: py

                frame = UepActor.frame_layout([8400, 44000, 347600], [60, 120, 250], min_blocks=2)
        """
        class_bytes = tuple(int(size) for size in class_bytes)
        blocks = max(1, int(min_blocks))
        largest = max(max(class_bytes), 1)
        while True:
            shares = [math.ceil(size / blocks) for size in class_bytes]
            try:
                layout = PacketizerManager.plan_layout(shares, k, n, packet_len)
            except LayoutError:
                if blocks >= largest:
                    raise
                blocks += 1
                continue
            logger.debug("Frame of %s bytes laid out in %d blocks, l=%s", class_bytes, blocks, layout.l)
            return FrameLayout(block=layout, blocks=blocks, class_bytes=class_bytes)

    @staticmethod
    def build_blocks(codestream_class_bytes: Sequence[bytes], frame: FrameLayout) -> List[InterleavingBlock]:
        """Encodes the three classes of one frame into interleaving blocks.

        Each class share is zero-padded to ``l_i * K_i`` bytes, cut row-wise into
        ``l_i`` information words, RS-encoded, and the codeword symbols are
        written column-wise: symbol ``s`` of every codeword goes to packet ``s``.

        Args:
            codestream_class_bytes (Sequence[bytes]): The bytes of class 1, 2 and 3.
            frame (FrameLayout): Layout from `frame_layout`.

        Returns:
            List[InterleavingBlock]: ``frame.blocks`` independent blocks.
        """
        layout = frame.block
        for i, payload in enumerate(codestream_class_bytes):
            if len(payload) != frame.class_bytes[i]:
                raise ParameterError(f"Class {i + 1} has {len(payload)} bytes, layout expects {frame.class_bytes[i]}")
        shares = frame.share
        blocks = []
        for b in range(frame.blocks):
            lens = frame.payload_lens(b)
            columns = []
            for i in range(3):
                if layout.l[i] == 0:
                    continue
                start = b * shares[i]
                info = np.zeros(layout.capacity(i), dtype=np.uint8)
                chunk = np.frombuffer(bytes(codestream_class_bytes[i][start:start + lens[i]]), dtype=np.uint8)
                info[:chunk.size] = chunk
                codewords = ReedSolomonManager.rs_encode_batch(
                    RsCode(layout.n, layout.k[i]), info.reshape(layout.l[i], layout.k[i])
                )
                columns.append(codewords.T)
            packets = np.concatenate(columns, axis=1) if columns else np.zeros((layout.n, 0), dtype=np.uint8)
            blocks.append(InterleavingBlock(packets=np.ascontiguousarray(packets), class_payload_lens=lens))
        return blocks

    @staticmethod
    def recover_block(block: InterleavingBlock, loss_mask: Sequence[bool], layout: BlockLayout) -> Tuple[ClassRecovery, List[bytes]]:
        """Erasure-decodes one block after the packets flagged in ``loss_mask`` were lost.

        Returns:
            Tuple[ClassRecovery, List[bytes]]: The per-class state and the recovered
            class bytes. A partially lost class 2 yields its surviving systematic
            bytes (lost ones zeroed); unrecoverable classes 1 and 3 yield ``b""``.
        """
        mask = np.asarray(loss_mask, dtype=bool)
        if mask.shape != (layout.n,):
            raise ParameterError(f"Loss mask must have {layout.n} entries, got {mask.shape}")
        lost = int(mask.sum())
        states, fractions, payloads = [], [], []
        for i in range(3):
            length = block.class_payload_lens[i]
            if length == 0 or layout.l[i] == 0:
                states.append(ClassState.recovered)
                fractions.append(0.0)
                payloads.append(b"")
                continue
            codewords = block.packets[:, layout.class_columns(i)].T
            recovered, info, _ = ReedSolomonManager.rs_decode_batch(RsCode(layout.n, layout.k[i]), codewords, mask)
            if recovered:
                states.append(ClassState.recovered)
                fractions.append(0.0)
                payloads.append(info.reshape(-1)[:length].tobytes())
            elif PARTIALLY_DECODABLE[i]:
                states.append(ClassState.partially_lost)
                fractions.append(lost / layout.n)
                payloads.append(info.reshape(-1)[:length].tobytes())
            else:
                states.append(ClassState.unrecoverable)
                fractions.append(1.0)
                payloads.append(b"")
        recovery = ClassRecovery(states=tuple(states), fraction_lost=tuple(fractions), lost_packet_count=lost)
        return recovery, payloads

    @staticmethod
    def dump_blocks(blocks: Sequence[InterleavingBlock], path: Union[str, Path]) -> None:
        """Writes blocks as length-prefixed packet records, for debugging."""
        with open(path, "wb") as f:
            f.write(_DUMP_MAGIC)
            for block in blocks:
                n, width = block.packets.shape
                f.write(_BLOCK_HEADER.pack(n, width, *block.class_payload_lens))
                for packet in block.packets:
                    f.write(_PACKET_HEADER.pack(packet.size))
                    f.write(packet.tobytes())

    @staticmethod
    def load_blocks(path: Union[str, Path]) -> List[InterleavingBlock]:
        data = Path(path).read_bytes()
        if not data.startswith(_DUMP_MAGIC):
            raise ParameterError(f"{path} is not a block dump")
        offset = len(_DUMP_MAGIC)
        blocks = []
        while offset < len(data):
            n, width, *lens = _BLOCK_HEADER.unpack_from(data, offset)
            offset += _BLOCK_HEADER.size
            packets = np.zeros((n, width), dtype=np.uint8)
            for s in range(n):
                (size,) = _PACKET_HEADER.unpack_from(data, offset)
                offset += _PACKET_HEADER.size
                packets[s, :size] = np.frombuffer(data, dtype=np.uint8, count=size, offset=offset)
                offset += size
            blocks.append(InterleavingBlock(packets=packets, class_payload_lens=tuple(lens)))
        return blocks
