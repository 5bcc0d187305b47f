"""Bit-level channel coding for control messages.

CRC-16 attachment with identity scrambling, the rate-1/3 tail-biting
convolutional code (K=7, generators 133/171/165 octal), repetition rate
matching into 72-bit control channel elements, and a soft-input Viterbi
decoder.

Bit arrays are ``numpy.uint8`` vectors of 0/1. LLRs follow the convention
``log P(b=0) / P(b=1)``, so a positive value favours bit 0.
"""
from __future__ import annotations

import numpy as np
from numba import njit

CCE_BITS = 72
CRC_LEN = 16
CRC16_POLY = 0x1021
CONSTRAINT_LENGTH = 7
GENERATORS = (0o133, 0o171, 0o165)
N_STATES = 1 << (CONSTRAINT_LENGTH - 1)
TRACEBACK_DEPTH = 36  # about five constraint lengths


def as_bits(bits) -> np.ndarray:
    return np.asarray(bits, dtype=np.uint8).reshape(-1)


def int_to_bits(value: int, width: int) -> np.ndarray:
    """MSB-first fixed-width bit vector of ``value``."""
    if value < 0 or value >= (1 << width):
        raise ValueError(f"value {value} does not fit in {width} bits")
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


def bits_to_int(bits) -> int:
    out = 0
    for b in as_bits(bits):
        out = (out << 1) | int(b)
    return out


def crc16(bits) -> int:
    """CRC-16/CCITT (poly 0x1021, zero init, no reflection, no final XOR)."""
    reg = 0
    for b in as_bits(bits):
        top = ((reg >> 15) & 1) ^ int(b)
        reg = (reg << 1) & 0xFFFF
        if top:
            reg ^= CRC16_POLY
    return reg


def scramble_crc(crc: int, rnti: int) -> int:
    """XOR the CRC with the receiver ID. Self-inverse."""
    return (crc ^ rnti) & 0xFFFF


def attach_crc(payload, rnti: int) -> np.ndarray:
    payload = as_bits(payload)
    field = scramble_crc(crc16(payload), rnti)
    return np.concatenate([payload, int_to_bits(field, CRC_LEN)])


def split_crc(block) -> tuple[np.ndarray, int]:
    """Split a decoded block into (payload, appended CRC field)."""
    block = as_bits(block)
    return block[:-CRC_LEN], bits_to_int(block[-CRC_LEN:])


def derive_rnti(block) -> int:
    """Receiver ID implied by a decoded block: calculated CRC XOR appended CRC."""
    payload, appended = split_crc(block)
    return crc16(payload) ^ appended


def _parity(x: int) -> int:
    return bin(x).count("1") & 1


def _trellis():
    next_state = np.zeros((N_STATES, 2), dtype=np.int64)
    outputs = np.zeros((N_STATES, 2, 3), dtype=np.int64)
    for s in range(N_STATES):
        for u in range(2):
            window = (u << 6) | s
            next_state[s, u] = window >> 1
            for i, g in enumerate(GENERATORS):
                outputs[s, u, i] = _parity(g & window)
    return next_state, outputs


NEXT_STATE, OUTPUTS = _trellis()


@njit(cache=True)
def _encode(bits, outputs):
    n = bits.shape[0]
    out = np.zeros(3 * n, dtype=np.uint8)
    # tail-biting: the register starts holding the last six input bits,
    # state bit 5 being the most recent one
    s = 0
    for j in range(6):
        s |= bits[n - 1 - j] << (5 - j)
    state = s
    for k in range(n):
        u = bits[k]
        for i in range(3):
            out[i * n + k] = outputs[state, u, i]
        state = ((u << 6) | state) >> 1
    return out


def conv_encode(bits) -> np.ndarray:
    """Rate-1/3 tail-biting encode; output is the three generator streams concatenated."""
    bits = as_bits(bits)
    if bits.size < CONSTRAINT_LENGTH:
        raise ValueError("input shorter than the constraint length")
    return _encode(bits, OUTPUTS)


def rate_match(coded, level: int) -> np.ndarray:
    """Fit coded bits into ``level`` CCEs by cyclic repetition or truncation."""
    coded = as_bits(coded)
    if level not in (1, 2, 4, 8):
        raise ValueError(f"invalid aggregation level {level}")
    if coded.size > CCE_BITS * 8:
        raise ValueError("coded block longer than 8 CCEs")
    return np.resize(coded, CCE_BITS * level)


def derate_match(llrs, coded_len: int) -> np.ndarray:
    """Undo rate matching: repeated copies of a coded bit are summed, missing bits get 0."""
    llrs = np.asarray(llrs, dtype=np.float64).reshape(-1)
    idx = np.arange(llrs.size) % coded_len
    return np.bincount(idx, weights=llrs, minlength=coded_len)


@njit(cache=True)
def _viterbi(llrs, n, outputs, depth):
    # circular trellis: the last ``depth`` steps as a warm-up head, the block,
    # then the first ``depth`` steps again so the trace-back of the block's
    # final bits has look-ahead
    total = n + 2 * depth
    decisions = np.zeros((total, 64), dtype=np.uint8)
    pm = np.zeros(64)
    new = np.empty(64)
    for t in range(total):
        k = (t - depth) % n
        l0 = llrs[k]
        l1 = llrs[n + k]
        l2 = llrs[2 * n + k]
        for ns in range(64):
            u = ns >> 5
            base = (ns & 31) << 1
            best = -1e300
            bestb = 0
            for b in range(2):
                ps = base | b
                m = pm[ps]
                m += l0 if outputs[ps, u, 0] == 0 else -l0
                m += l1 if outputs[ps, u, 1] == 0 else -l1
                m += l2 if outputs[ps, u, 2] == 0 else -l2
                if m > best:
                    best = m
                    bestb = b
            new[ns] = best
            decisions[t, ns] = bestb
        mx = new.max()
        for s in range(64):
            pm[s] = new[s] - mx
    state = 0
    best = pm[0]
    for s in range(1, 64):
        if pm[s] > best:
            best = pm[s]
            state = s
    bits = np.zeros(n, dtype=np.uint8)
    for t in range(total - 1, -1, -1):
        if depth <= t < depth + n:
            bits[t - depth] = state >> 5
        state = ((state & 31) << 1) | decisions[t, state]
    return bits


def viterbi_decode(llrs, payload_len: int, depth: int = TRACEBACK_DEPTH) -> tuple[np.ndarray, float]:
    """Soft-decision tail-biting Viterbi decode.

    ``llrs`` holds ``3 * payload_len`` values in the encoder's stream order,
    positive meaning bit 0. The trellis runs over the circular block with
    ``depth`` extra steps on each side and the block's decisions are taken
    from the middle. The returned metric is the correlation between the
    LLRs and the re-encoded tail-biting codeword of the decoded bits.
    """
    llrs = np.ascontiguousarray(llrs, dtype=np.float64).reshape(-1)
    if llrs.size != 3 * payload_len:
        raise ValueError(f"expected {3 * payload_len} LLRs, got {llrs.size}")
    bits = _viterbi(llrs, payload_len, OUTPUTS, depth)
    metric = float(np.dot(llrs, 1.0 - 2.0 * _encode(bits, OUTPUTS)))
    return bits, metric


def hard_decision(llrs) -> np.ndarray:
    return (np.asarray(llrs) < 0).astype(np.uint8)
