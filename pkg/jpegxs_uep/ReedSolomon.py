"""
This module provides GF(2^8) arithmetic and systematic Reed-Solomon erasure
coding, as used by every codeword of an interleaving block.

The field is built on the reduction polynomial ``0x11D`` with primitive element
``alpha = 2``. A code ``RS(n, k)`` has generator polynomial
``g(x) = (x - alpha^0)(x - alpha^1)...(x - alpha^(n-k-1))`` and its codewords are
systematic: the ``k`` information symbols come first, followed by ``n - k``
parity symbols. Codes with ``n < 255`` are shortened codes and stay MDS, so any
``k`` received symbols are enough to rebuild the information.

Only erasures are corrected: a lost packet erases a symbol whose position is
known, there is never an error at an unknown position.

.. list-table:: Classes
   :header-rows: 1

   * - Class Name
     - Description
   * - GfTables
     - Exponential and logarithm tables of GF(2^8).
   * - RsCode
     - Codeword length ``n`` and information length ``k``.
   * - RsDecodeResult
     - Outcome of an erasure decoding; ``recovered`` is False when more than
       ``n - k`` symbols were erased.
   * - ReedSolomonManager
     - Static methods for field arithmetic, encoding and erasure decoding.

To use the methods in this module, import `UepActor` from `jpegxs_uep`.
For example:

.. code-block:: py

    from jpegxs_uep import UepActor
    from jpegxs_uep.ReedSolomon import RsCode

    code = RsCode(n=255, k=223)
    codeword = UepActor.rs_encode(code, bytes(range(223)))
    result = UepActor.rs_decode_erasures(code, codeword, [False] * 255)
"""

import functools
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from .utils import ParameterError

PRIMITIVE_POLY = 0x11D
FIELD_SIZE = 256
MAX_CODE_LENGTH = FIELD_SIZE - 1

# Largest intermediate (rows x inner x cols) array built by gf_matmul at once
_MATMUL_CHUNK = 1 << 22


@dataclass(frozen=True)
class GfTables:
    """Log/antilog tables. ``log_table[0]`` is a placeholder, log of 0 is undefined."""

    exp_table: np.ndarray
    log_table: np.ndarray
    generator_poly_id: int = PRIMITIVE_POLY


def build_tables(poly: int = PRIMITIVE_POLY) -> GfTables:
    exp_table = np.zeros(2 * FIELD_SIZE, dtype=np.uint8)
    log_table = np.zeros(FIELD_SIZE, dtype=np.int32)
    x = 1
    for i in range(MAX_CODE_LENGTH):
        exp_table[i] = x
        log_table[x] = i
        x <<= 1
        if x & 0x100:
            x ^= poly
    # duplicated so that log[a] + log[b] never needs a modulo
    exp_table[MAX_CODE_LENGTH:2 * MAX_CODE_LENGTH] = exp_table[:MAX_CODE_LENGTH]
    exp_table[2 * MAX_CODE_LENGTH:] = exp_table[:2]
    exp_table.flags.writeable = False
    log_table.flags.writeable = False
    return GfTables(exp_table=exp_table, log_table=log_table, generator_poly_id=poly)


TABLES = build_tables()
_EXP = TABLES.exp_table
_LOG = TABLES.log_table


@dataclass(frozen=True)
class RsCode:
    n: int
    k: int

    def __post_init__(self):
        if not 1 <= self.n <= MAX_CODE_LENGTH:
            raise ParameterError(f"RS codeword length must be in [1, 255], got n={self.n}")
        if not 1 <= self.k <= self.n:
            raise ParameterError(f"RS information length must be in [1, n={self.n}], got k={self.k}")

    @property
    def nsym(self) -> int:
        return self.n - self.k


@dataclass(frozen=True)
class RsDecodeResult:
    """Decoded information symbols.

    When ``recovered`` is False, ``data`` still holds the systematic symbols that
    survived; erased positions are zero and listed in ``lost_positions``.
    """

    recovered: bool
    data: bytes
    lost_positions: Tuple[int, ...] = ()


def gf_mul_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Element-wise GF(2^8) product with numpy broadcasting."""
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    product = _EXP[_LOG[a] + _LOG[b]]
    return np.where((a == 0) | (b == 0), np.uint8(0), product).astype(np.uint8)


def gf_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product over GF(2^8): additions are XOR."""
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    rows, inner = a.shape
    inner_b, cols = b.shape
    if inner != inner_b:
        raise ParameterError(f"Cannot multiply {a.shape} by {b.shape}")
    out = np.zeros((rows, cols), dtype=np.uint8)
    if rows == 0 or cols == 0 or inner == 0:
        return out
    log_b = _LOG[b][None, :, :]
    zero_b = (b == 0)[None, :, :]
    step = max(1, _MATMUL_CHUNK // (inner * cols))
    for start in range(0, rows, step):
        block = a[start:start + step]
        terms = _EXP[_LOG[block][:, :, None] + log_b]
        terms[(block == 0)[:, :, None] | zero_b] = 0
        out[start:start + step] = np.bitwise_xor.reduce(terms, axis=1)
    return out


def gf_mat_inv(matrix: np.ndarray) -> np.ndarray:
    """Gauss-Jordan inverse over GF(2^8)."""
    matrix = np.asarray(matrix, dtype=np.uint8)
    size = matrix.shape[0]
    aug = np.concatenate([matrix, np.eye(size, dtype=np.uint8)], axis=1)
    for col in range(size):
        candidates = np.flatnonzero(aug[col:, col])
        if candidates.size == 0:
            raise ParameterError("Singular matrix over GF(2^8)")
        pivot = col + int(candidates[0])
        if pivot != col:
            aug[[col, pivot]] = aug[[pivot, col]]
        aug[col] = gf_mul_array(aug[col], ReedSolomonManager.gf_inv(int(aug[col, col])))
        factors = aug[:, col].copy()
        factors[col] = 0
        aug ^= gf_mul_array(factors[:, None], aug[col][None, :])
    return aug[:, size:]


@functools.lru_cache(maxsize=None)
def generator_poly(nsym: int) -> np.ndarray:
    """Coefficients of g(x), highest degree first, roots alpha^0 .. alpha^(nsym-1)."""
    gen = np.array([1], dtype=np.uint8)
    for i in range(nsym):
        root = _EXP[i]
        shifted = np.append(gen, np.uint8(0))
        scaled = np.insert(gf_mul_array(gen, root), 0, np.uint8(0))
        gen = shifted ^ scaled
    gen.flags.writeable = False
    return gen


def _lfsr_parity(info: np.ndarray, nsym: int) -> np.ndarray:
    # remainder of m(x) * x^nsym mod g(x), one register per row
    rows, k = info.shape
    parity = np.zeros((rows, nsym), dtype=np.uint8)
    if nsym == 0:
        return parity
    taps = generator_poly(nsym)[1:][None, :]
    for col in range(k):
        feedback = info[:, col] ^ parity[:, 0]
        parity[:, :-1] = parity[:, 1:]
        parity[:, -1] = 0
        parity ^= gf_mul_array(feedback[:, None], taps)
    return parity


@functools.lru_cache(maxsize=512)
def parity_matrix(n: int, k: int) -> np.ndarray:
    """``P`` such that a codeword is ``info . [I | P]`` over GF(2^8)."""
    matrix = _lfsr_parity(np.eye(k, dtype=np.uint8), n - k)
    matrix.flags.writeable = False
    return matrix


BytesLike = Union[bytes, bytearray, Sequence[int], np.ndarray]


class ReedSolomonManager:
    @staticmethod
    def gf_mul(a: int, b: int) -> int:
        """Multiplies two GF(2^8) elements.

        Example:
            .. code-block:: py

                UepActor.gf_mul(0x80, 0x02)  # 0x1D
        """
        if a == 0 or b == 0:
            return 0
        return int(_EXP[_LOG[a] + _LOG[b]])

    @staticmethod
    def gf_inv(a: int) -> int:
        if a == 0:
            raise ZeroDivisionError("0 has no inverse in GF(2^8)")
        return int(_EXP[MAX_CODE_LENGTH - _LOG[a]])

    @staticmethod
    def gf_div(a: int, b: int) -> int:
        if b == 0:
            raise ZeroDivisionError("division by 0 in GF(2^8)")
        if a == 0:
            return 0
        return int(_EXP[(_LOG[a] - _LOG[b]) % MAX_CODE_LENGTH])

    @staticmethod
    def gf_pow(a: int, power: int) -> int:
        if a == 0:
            return 1 if power == 0 else 0
        return int(_EXP[(_LOG[a] * power) % MAX_CODE_LENGTH])

    @staticmethod
    def rs_encode_batch(code: RsCode, info: np.ndarray) -> np.ndarray:
        """Encodes every row of ``info`` (shape ``(rows, k)``) into a systematic codeword.

        Returns:
            np.ndarray: ``(rows, n)`` array, the first ``k`` columns equal ``info``.
        """
        info = np.asarray(info, dtype=np.uint8)
        if info.ndim != 2 or info.shape[1] != code.k:
            raise ParameterError(f"Expected information rows of {code.k} symbols, got shape {info.shape}")
        return np.concatenate([info, _lfsr_parity(info, code.nsym)], axis=1)

    @staticmethod
    def rs_decode_batch(code: RsCode, codewords: np.ndarray, erasures: np.ndarray) -> Tuple[bool, np.ndarray, np.ndarray]:
        """Erasure-decodes rows of codewords that share one erasure pattern.

        All codewords of one class in an interleaving block lose the same symbol
        positions, so the linear system is solved once and applied to every row.

        Returns:
            Tuple[bool, np.ndarray, np.ndarray]: ``(recovered, info, lost_info_mask)``.
            ``info`` has shape ``(rows, k)``; when not recovered, erased systematic
            symbols are zero and flagged in ``lost_info_mask``.
        """
        codewords = np.asarray(codewords, dtype=np.uint8)
        erasures = np.asarray(erasures, dtype=bool)
        if erasures.shape != (code.n,):
            raise ParameterError(f"Erasure mask must have {code.n} entries, got {erasures.shape}")
        if codewords.ndim != 2 or codewords.shape[1] != code.n:
            raise ParameterError(f"Expected codewords of {code.n} symbols, got shape {codewords.shape}")
        k = code.k
        info = codewords[:, :k].copy()
        lost_info = erasures[:k].copy()
        if int(erasures.sum()) > code.nsym:
            info[:, lost_info] = 0
            return False, info, lost_info

        erased_info = np.flatnonzero(lost_info)
        if erased_info.size == 0:
            return True, info, np.zeros(k, dtype=bool)
        kept_info = np.flatnonzero(~lost_info)
        kept_parity = np.flatnonzero(~erasures[k:])[:erased_info.size]
        parity = parity_matrix(code.n, k)

        rhs = codewords[:, k + kept_parity] ^ gf_matmul(
            codewords[:, kept_info], parity[np.ix_(kept_info, kept_parity)]
        )
        system = parity[np.ix_(erased_info, kept_parity)]
        info[:, erased_info] = gf_matmul(rhs, gf_mat_inv(system))
        return True, info, np.zeros(k, dtype=bool)

    @staticmethod
    def rs_encode(code: RsCode, info: BytesLike) -> bytes:
        """Encodes ``k`` information bytes into an ``n``-byte systematic codeword.

        Args:
            code (RsCode): The code parameters.
            info (bytes): Exactly ``code.k`` bytes.

        Returns:
            bytes: ``info`` followed by ``n - k`` parity bytes.
        """
        row = np.frombuffer(bytes(bytearray(info)), dtype=np.uint8)
        if row.size != code.k:
            raise ParameterError(f"RS({code.n},{code.k}) needs {code.k} information bytes, got {row.size}")
        return ReedSolomonManager.rs_encode_batch(code, row[None, :])[0].tobytes()

    @staticmethod
    def rs_decode_erasures(code: RsCode, received: BytesLike, erasures: Sequence[bool]) -> RsDecodeResult:
        """Recovers the information bytes of one codeword from its unerased symbols.

        Args:
            code (RsCode): The code parameters.
            received (bytes): ``n`` symbols; values at erased positions are ignored.
            erasures (Sequence[bool]): True where the symbol was lost.

        Returns:
            RsDecodeResult: ``recovered`` is True with the exact information when at
            most ``n - k`` symbols were erased. Otherwise the surviving systematic
            bytes are returned with ``recovered`` False.
        """
        row = np.frombuffer(bytes(bytearray(received)), dtype=np.uint8)
        recovered, info, lost = ReedSolomonManager.rs_decode_batch(code, row[None, :], np.asarray(erasures, dtype=bool))
        return RsDecodeResult(
            recovered=recovered,
            data=info[0].tobytes(),
            lost_positions=tuple(int(p) for p in np.flatnonzero(lost)),
        )
