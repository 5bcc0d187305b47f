"""Blind decoder for one subframe of the control channel.

Pipeline per subframe: normalise LLRs against the estimated noise floor,
flag empty CCEs, decode the search spaces of known active UEs first, then
walk each 8-CCE segment's binary tree top-down. Every non-empty node is
decoded once per format; a decode is validated when an ancestor node
produced the same payload and C-RNTI (the first half of a message at level
L is the whole message at level L/2). Unvalidated decodes with few coded
bit flips are handed to the UE tracker.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cell import SEGMENT, CellConfig, search_space
from .coding import CCE_BITS, conv_encode, derate_match, derive_rnti, hard_decision, rate_match, viterbi_decode
from .dci import FORMATS, LEVELS, DciMessage, FormatSpec, min_level, parse_dci_payload

EMPTY_THRESHOLD = 0.85
FLIP_LIMIT = 0.25
# every CCE of a validated message must re-encode this cleanly
CONSISTENCY_LIMIT = 0.10
QUIET_BAND = 1.5

UNVISITED, EMPTY, ATTEMPTED, DECODED, SKIPPED = "unvisited", "empty", "attempted", "decoded", "skipped"

# (offset inside segment, level) in pre-order: every node before its descendants
PREORDER = (
    (0, 8),
    (0, 4), (0, 2), (0, 1), (1, 1), (2, 2), (2, 1), (3, 1),
    (4, 4), (4, 2), (4, 1), (5, 1), (6, 2), (6, 1), (7, 1),
)


class MalformedSubframe(ValueError):
    pass


@dataclass
class SearchTree:
    """Status of the 15 candidate nodes of one 8-CCE segment."""

    status: dict

    def candidates(self) -> list[tuple[int, int]]:
        return [n for n in PREORDER if self.status[n] == UNVISITED]

    @staticmethod
    def ancestors(node) -> list[tuple[int, int]]:
        off, level = node
        return [(off - off % up, up) for up in LEVELS if up > level]

    @staticmethod
    def descendants(node) -> list[tuple[int, int]]:
        off, level = node
        return [(o, l) for o, l in PREORDER if l < level and off <= o < off + level]

    def mark_decoded(self, node):
        self.status[node] = DECODED
        for d in self.descendants(node):
            self.status[d] = SKIPPED


def build_search_tree(flags: Sequence[bool]) -> SearchTree:
    """Bottom-up emptiness: a node is empty iff every CCE under it is empty."""
    flags = list(flags)
    if len(flags) != SEGMENT:
        raise ValueError("a segment has exactly 8 CCEs")
    status = {}
    for off, level in PREORDER:
        status[(off, level)] = EMPTY if all(flags[off:off + level]) else UNVISITED
    return SearchTree(status)


@dataclass
class CandidateMessage:
    cce_start: int
    level: int
    format_id: str
    bits: np.ndarray  # decoded payload followed by the 16-bit CRC field
    derived_rnti: int
    flip_ratio: float
    path_metric: float
    cce_flips: tuple = ()
    message: Optional[DciMessage] = None  # None when the fields are out of range

    @property
    def payload(self) -> np.ndarray:
        return self.bits[:-16]

    @property
    def consistent(self) -> bool:
        return max(self.cce_flips) <= CONSISTENCY_LIMIT

    def same_content(self, other: "CandidateMessage") -> bool:
        return (self.format_id == other.format_id and self.derived_rnti == other.derived_rnti
                and np.array_equal(self.bits, other.bits))


@dataclass(frozen=True)
class DecodedMessage:
    msg: DciMessage
    flip_ratio: float
    validated_by: str  # "ancestor" or "tracker"


@dataclass
class DecodeReport:
    sfn: int
    cell_id: int
    validated: list = field(default_factory=list)  # DecodedMessage
    candidates: list = field(default_factory=list)  # CandidateMessage, unvalidated
    attempts: int = 0
    pruned_cces: int = 0

    @property
    def messages(self) -> list[DciMessage]:
        return [d.msg for d in self.validated]


def estimate_noise_power(llrs: np.ndarray, usable_cce: int) -> float:
    """Mean-square LLR of CCEs that look empty.

    Seeds from the padding CCEs (or the quietest quarter of CCEs) and refines
    twice, keeping CCEs whose mean square is within 1.5x of the estimate. An
    occupied CCE has mean square s^2 (1 + s^2 / 4), well clear of that band
    at any usable SNR, and the test does not depend on the LLR scale.
    """
    ms = np.mean(np.square(llrs, dtype=np.float64), axis=1)
    if llrs.shape[0] > usable_cce:
        s2 = float(ms[usable_cce:].mean())
    else:
        k = max(1, len(ms) // 4)
        s2 = float(np.sort(ms)[:k].mean())
    for _ in range(2):
        if s2 <= 0:
            break
        quiet = ms < QUIET_BAND * s2
        if quiet.any():
            s2 = float(ms[quiet].mean())
    return s2


def normalize_llrs(llrs: np.ndarray, usable_cce: int) -> np.ndarray:
    """Rescale so occupied bits have mean magnitude about 1.

    For Gaussian LLRs the noise variance s^2 of an empty CCE and the mean
    magnitude of an occupied bit satisfy mean = s^2 / 2. Without measurable
    noise the scale falls back to the median non-zero magnitude.
    """
    x = np.asarray(llrs, dtype=np.float64)
    s2 = estimate_noise_power(x, usable_cce)
    if s2 > 1e-12:
        scale = s2 / 2.0
    else:
        nz = np.abs(x[x != 0])
        scale = float(np.median(nz)) if nz.size else 1.0
    return x / scale


def mark_empty_cces(llrs: np.ndarray, threshold: float = EMPTY_THRESHOLD) -> np.ndarray:
    """True where the mean |LLR| of a CCE is below ``threshold`` (normalised LLRs)."""
    return np.mean(np.abs(llrs), axis=1) < threshold


def attempt_decode(llrs: np.ndarray, cce_start: int, level: int, fmt: FormatSpec,
                   sfn: int = 0, cell_id: int = 0, n_prb: int = 100) -> CandidateMessage:
    """One Viterbi run at (location, level, format) plus CRC/C-RNTI derivation and re-encoding."""
    seg = llrs[cce_start:cce_start + level].reshape(-1)
    combined = derate_match(seg, fmt.coded_length)
    bits, metric = viterbi_decode(combined, fmt.block_length)
    rnti = derive_rnti(bits)
    flips = rate_match(conv_encode(bits), level) != hard_decision(seg)
    cce_flips = tuple(float(f) for f in flips.reshape(level, CCE_BITS).mean(axis=1))
    try:
        msg = parse_dci_payload(bits[:-16], fmt, rnti=rnti, sfn=sfn, aggregation_level=level,
                                cce_start=cce_start, cell_id=cell_id)
        if not 1 <= msg.nof_prb <= n_prb:
            msg = None
    except ValueError:
        msg = None
    return CandidateMessage(cce_start, level, fmt.name, bits, rnti, float(flips.mean()),
                            metric, cce_flips, msg)


class _SubframeSearch:
    def __init__(self, sub, cfg: CellConfig, threshold: float, max_attempts: Optional[int],
                 formats: Sequence[str]):
        if sub.llrs.shape != (cfg.n_cce, CCE_BITS):
            raise MalformedSubframe(
                f"expected {cfg.n_cce}x{CCE_BITS} LLRs for cell {cfg.cell_id}, got {sub.llrs.shape}")
        self.cfg = cfg
        self.sfn = sub.sfn
        self.llrs = normalize_llrs(sub.llrs, cfg.usable_cce)
        self.empty = mark_empty_cces(self.llrs, threshold)
        self.empty[cfg.usable_cce:] = True
        self.consumed = np.zeros(cfg.n_cce, dtype=bool)
        self.formats = [FORMATS[f] for f in formats]
        self.max_attempts = max_attempts
        self.cache: dict = {}
        self.report = DecodeReport(sub.sfn, sub.cell_id,
                                   pruned_cces=int(self.empty[:cfg.usable_cce].sum()))
        self.prb = 0

    @property
    def done(self) -> bool:
        return self.prb >= self.cfg.n_prb

    def free(self, start: int, level: int) -> bool:
        sl = slice(start, start + level)
        return not self.consumed[sl].any()

    def decode_node(self, start: int, level: int) -> list[CandidateMessage]:
        out = []
        for fmt in self.formats:
            if level < min_level(fmt):
                continue  # never transmitted: fewer coded bits than two full streams
            key = (start, level, fmt.name)
            if key not in self.cache:
                if self.max_attempts is not None and self.report.attempts >= self.max_attempts:
                    continue
                self.report.attempts += 1
                self.cache[key] = attempt_decode(self.llrs, start, level, fmt, self.sfn,
                                                 self.report.cell_id, self.cfg.n_prb)
            out.append(self.cache[key])
        return out

    def extend(self, cand: CandidateMessage) -> CandidateMessage:
        """Largest aligned level carrying the same message.

        A larger level is skipped by the tree search when one of its CCEs
        looks empty; retry those once a message is found inside them.
        """
        fmt = FORMATS[cand.format_id]
        best = cand
        level = cand.level * 2
        while level <= SEGMENT:
            start = cand.cce_start - cand.cce_start % level
            if start + level > self.cfg.usable_cce or not self.free(start, level):
                break
            key = (start, level, fmt.name)
            if key not in self.cache:
                if self.max_attempts is not None and self.report.attempts >= self.max_attempts:
                    break
                self.report.attempts += 1
                self.cache[key] = attempt_decode(self.llrs, start, level, fmt, self.sfn,
                                                 self.report.cell_id, self.cfg.n_prb)
            up = self.cache[key]
            if not up.same_content(cand):
                break
            if up.consistent and up.message is not None:
                best = up
            level *= 2
        return best

    def accept(self, cand: CandidateMessage, how: str):
        cand = self.extend(cand)
        self.consumed[cand.cce_start:cand.cce_start + cand.level] = True
        self.report.validated.append(DecodedMessage(cand.message, cand.flip_ratio, how))
        self.prb += cand.message.nof_prb

    def priority(self, hints: Sequence[int]):
        for rnti in hints:
            if self.done:
                return
            found = False
            for level in (8, 4, 2, 1):
                for start in search_space(rnti, self.sfn, level, self.cfg.usable_cce):
                    if self.empty[start:start + level].any() or not self.free(start, level):
                        continue
                    for c in self.decode_node(start, level):
                        if c.derived_rnti == rnti and c.message is not None and c.consistent:
                            self.accept(c, "tracker")
                            found = True
                            break
                    if found:
                        break
                if found:
                    break

    def segment(self, seg: int, hints: frozenset):
        base = seg * SEGMENT
        tree = build_search_tree(self.empty[base:base + SEGMENT])
        decodes: dict = {}
        for node in PREORDER:
            if self.done:
                return
            if tree.status[node] != UNVISITED:
                continue
            off, level = node
            start = base + off
            if not self.free(start, level):
                tree.status[node] = SKIPPED
                continue
            cands = self.decode_node(start, level)
            decodes[node] = cands
            tree.status[node] = ATTEMPTED
            chosen = self._validate(node, cands, decodes, tree, hints)
            if chosen is not None:
                cand, how = chosen
                self.accept(cand, how)
                tree.mark_decoded((cand.cce_start - base, cand.level))

    def _validate(self, node, cands, decodes, tree, hints):
        for c in cands:
            if c.derived_rnti in hints and c.message is not None and c.consistent:
                return c, "tracker"
        for c in cands:
            chain = [c]
            for anc in tree.ancestors(node):
                for a in decodes.get(anc, ()):
                    if a.same_content(c):
                        chain.append(a)
            if len(chain) == 1:
                continue
            # the true level is the largest one whose every CCE re-encodes cleanly
            for cand in sorted(chain, key=lambda x: -x.level):
                if cand.consistent and cand.message is not None and self.free(cand.cce_start, cand.level):
                    return cand, "ancestor"
        return None

    def leftovers(self) -> list[CandidateMessage]:
        best: dict = {}
        for c in self.cache.values():
            if c.flip_ratio > FLIP_LIMIT or c.message is None:
                continue
            if not self.free(c.cce_start, c.level):
                continue
            key = (c.format_id, c.derived_rnti, c.bits.tobytes())
            rank = (c.consistent, c.level if c.consistent else -c.level, -max(c.cce_flips))
            if key not in best or rank > best[key][0]:
                best[key] = (rank, c)
        return sorted((c for _, c in best.values()), key=lambda c: (c.cce_start, c.level, c.format_id))


def decode_subframe(sub, cfg: CellConfig, hints: Sequence[int] = (),
                    threshold: float = EMPTY_THRESHOLD, max_attempts: Optional[int] = None,
                    formats: Sequence[str] = tuple(FORMATS)) -> DecodeReport:
    """Recover the control messages of one subframe.

    ``hints`` lists C-RNTIs of active UEs, most active first; their search
    spaces are decoded before the tree search and a decode carrying one of
    these IDs is accepted directly. Decoding stops once the validated
    messages account for every PRB of the cell.
    """
    search = _SubframeSearch(sub, cfg, threshold, max_attempts, formats)
    search.priority(hints)
    hint_set = frozenset(hints)
    for seg in range(cfg.n_cce // SEGMENT):
        if search.done:
            break
        search.segment(seg, hint_set)
    report = search.report
    report.validated.sort(key=lambda d: d.msg.cce_start)
    report.candidates = search.leftovers()
    return report
