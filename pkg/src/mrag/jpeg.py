"""Baseline sequential JPEG (8-bit, 4:4:4, three components) reader and writer.

Coefficients are exposed exactly as stored in the stream: quantized integers
per 8x8 block in natural (row-major) frequency order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .dct import ZIGZAG, blockify, dct8_forward, dct8_inverse, round_half_away, unblockify

ZZ = ZIGZAG.natural_index  # rank -> natural index

# baseline limits: DC diff category <= 11, AC category <= 10
DC_RANGE = (-1024, 1023)
AC_LIMIT = 1023
COEF_LIMIT = 2047


class JpegError(ValueError):
    code = "jpeg"


class TruncatedStreamError(JpegError):
    code = "truncated"


class CorruptStreamError(JpegError):
    code = "corrupt"


class UnsupportedProgressiveError(JpegError):
    code = "progressive"


class UnsupportedArithmeticError(JpegError):
    code = "arithmetic"


class UnsupportedSubsamplingError(JpegError):
    code = "subsampling"


class UnsupportedPrecisionError(JpegError):
    code = "precision"


class UnsupportedFormatError(JpegError):
    code = "unsupported"


class CoefficientRangeError(JpegError):
    code = "range"


# --------------------------------------------------------------------- tables

LUMA_BASE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)

CHROMA_BASE = np.full((8, 8), 99, dtype=np.int64)
CHROMA_BASE[:4, :4] = [
    [17, 18, 24, 47],
    [18, 21, 26, 66],
    [24, 26, 56, 99],
    [47, 66, 99, 99],
]


@dataclass(frozen=True)
class QuantTable:
    values: np.ndarray  # (8, 8) natural order

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int64).reshape(8, 8)
        if (v < 1).any() or (v > 65535).any():
            raise JpegError("quantization entries must lie in 1..65535")
        object.__setattr__(self, "values", v)

    @property
    def zigzag(self) -> np.ndarray:
        return self.values.reshape(64)[ZZ]

    @classmethod
    def from_zigzag(cls, seq) -> "QuantTable":
        nat = np.empty(64, dtype=np.int64)
        nat[ZZ] = np.asarray(seq, dtype=np.int64)
        return cls(nat.reshape(8, 8))

    def __eq__(self, other):
        return isinstance(other, QuantTable) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())


def quant_tables_for_quality(qf: int) -> tuple[QuantTable, QuantTable]:
    """IJG quality scaling of the Annex K tables, clamped to 1..255."""
    if not 1 <= qf <= 100:
        raise ValueError(f"quality factor must be in 1..100, got {qf}")
    scale = 5000 // qf if qf < 50 else 200 - 2 * qf
    out = []
    for base in (LUMA_BASE, CHROMA_BASE):
        q = (base * scale + 50) // 100
        out.append(QuantTable(np.clip(q, 1, 255)))
    return out[0], out[1]


@dataclass(frozen=True)
class HuffmanTable:
    counts: tuple[int, ...]  # codes per length 1..16
    symbols: tuple[int, ...]

    def __post_init__(self):
        if len(self.counts) != 16 or sum(self.counts) != len(self.symbols):
            raise CorruptStreamError("Huffman table counts do not match symbol list")
        # canonical codes must fit their lengths: code space never overflows
        code = 0
        for length, n in enumerate(self.counts, start=1):
            code += n
            if code > (1 << length):
                raise CorruptStreamError("Huffman code lengths overflow the code space")
            code <<= 1

    def codes(self) -> dict[int, tuple[int, int]]:
        """symbol -> (code, length), canonical assignment per T.81 Annex C."""
        out = {}
        code = 0
        k = 0
        for length, n in enumerate(self.counts, start=1):
            for _ in range(n):
                out[self.symbols[k]] = (code, length)
                code += 1
                k += 1
            code <<= 1
        return out

    def lookup(self) -> list:
        """16-bit prefix -> (length, symbol); None for invalid prefixes."""
        lut: list = [None] * 65536
        for sym, (code, length) in self.codes().items():
            start = code << (16 - length)
            lut[start:start + (1 << (16 - length))] = [(length, sym)] * (1 << (16 - length))
        return lut


STD_DC_LUMA = HuffmanTable(
    (0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0), tuple(range(12)))
STD_DC_CHROMA = HuffmanTable(
    (0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0), tuple(range(12)))


def _runs(*spans: tuple[int, int]) -> tuple[int, ...]:
    return tuple(v for a, b in spans for v in range(a, b + 1))


STD_AC_LUMA = HuffmanTable(
    (0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7D),
    tuple(bytes.fromhex(
        "0102030004110512213141061351610722711432"
        "8191a1082342b1c11552d1f02433627282090a"))
    + _runs((0x16, 0x1A), (0x25, 0x2A), (0x34, 0x3A), (0x43, 0x4A), (0x53, 0x5A),
            (0x63, 0x6A), (0x73, 0x7A), (0x83, 0x8A), (0x92, 0x9A), (0xA2, 0xAA),
            (0xB2, 0xBA), (0xC2, 0xCA), (0xD2, 0xDA), (0xE1, 0xEA), (0xF1, 0xFA)))
STD_AC_CHROMA = HuffmanTable(
    (0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77),
    tuple(bytes.fromhex(
        "0001020311040521310612415107617113223281081442"
        "91a1b1c109233352f0156272d10a162434e125f1"))
    + _runs((0x17, 0x1A), (0x26, 0x2A), (0x35, 0x3A), (0x43, 0x4A), (0x53, 0x5A),
            (0x63, 0x6A), (0x73, 0x7A), (0x82, 0x8A), (0x92, 0x9A), (0xA2, 0xAA),
            (0xB2, 0xBA), (0xC2, 0xCA), (0xD2, 0xDA), (0xE2, 0xEA), (0xF2, 0xFA)))


# --------------------------------------------------------------------- image


@dataclass
class JpegImage:
    """Quantized DCT coefficients of a 4:4:4 three-component JPEG.

    ``coef`` has shape (3, H/8, W/8, 8, 8), components ordered Y, Cb, Cr.
    """

    coef: np.ndarray
    quant_tables: dict[int, QuantTable]
    quant_ids: tuple[int, int, int] = (0, 1, 1)
    dc_tables: dict[int, HuffmanTable] = field(default_factory=dict)
    ac_tables: dict[int, HuffmanTable] = field(default_factory=dict)
    huff_ids: tuple[tuple[int, int], ...] = ((0, 0), (1, 1), (1, 1))
    restart_interval: int = 0

    def __post_init__(self):
        self.coef = np.asarray(self.coef, dtype=np.int32)
        if self.coef.ndim != 5 or self.coef.shape[0] != 3 or self.coef.shape[3:] != (8, 8):
            raise JpegError(f"coefficient array must be (3, H/8, W/8, 8, 8), got {self.coef.shape}")
        if np.abs(self.coef).max(initial=0) > COEF_LIMIT:
            raise CoefficientRangeError("coefficient magnitude exceeds 2047")

    @property
    def height(self) -> int:
        return self.coef.shape[1] * 8

    @property
    def width(self) -> int:
        return self.coef.shape[2] * 8

    def quant(self, component: int) -> np.ndarray:
        return self.quant_tables[self.quant_ids[component]].values

    def quant_stack(self) -> np.ndarray:
        """(3, 8, 8) quantization divisors per component."""
        return np.stack([self.quant(c) for c in range(3)])

    def planes(self) -> np.ndarray:
        """(3, H, W) with each coefficient at its within-block position."""
        return unblockify(self.coef)

    def with_coefficients(self, coef: np.ndarray) -> "JpegImage":
        return replace(self, coef=np.asarray(coef, dtype=np.int32).copy())

    def same_content(self, other: "JpegImage") -> bool:
        return (
            np.array_equal(self.coef, other.coef)
            and all(np.array_equal(self.quant(c), other.quant(c)) for c in range(3))
        )


# --------------------------------------------------------------------- parsing

_PROGRESSIVE = {0xC2, 0xC6}
_ARITHMETIC = {0xC9, 0xCA, 0xCB, 0xCD, 0xCE, 0xCF, 0xCC}
_LOSSLESS = {0xC3, 0xC5, 0xC7}


class _BitReader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.acc = 0
        self.nbits = 0
        self.padded = 0  # 1-bits appended past the end of real data

    def _fill(self) -> None:
        data = self.data
        while self.nbits <= 24:
            if self.pos < len(data):
                self.acc = ((self.acc << 8) | data[self.pos]) & 0xFFFFFFFFFFFF
                self.pos += 1
            else:
                self.acc = ((self.acc << 8) | 0xFF) & 0xFFFFFFFFFFFF
                self.padded += 8
            self.nbits += 8

    def peek16(self) -> int:
        if self.nbits < 16:
            self._fill()
        return (self.acc >> (self.nbits - 16)) & 0xFFFF

    def skip(self, n: int) -> None:
        self.nbits -= n
        if self.padded and self.nbits < self.padded:
            raise TruncatedStreamError("entropy-coded data ended mid-block")

    def get(self, n: int) -> int:
        if n == 0:
            return 0
        if self.nbits < n:
            self._fill()
        self.nbits -= n
        if self.padded and self.nbits < self.padded:
            raise TruncatedStreamError("entropy-coded data ended mid-block")
        return (self.acc >> self.nbits) & ((1 << n) - 1)


def _extend(v: int, s: int) -> int:
    return v - (1 << s) + 1 if v < (1 << (s - 1)) else v


def _decode_huff(reader: _BitReader, lut: list) -> int:
    entry = lut[reader.peek16()]
    if entry is None:
        raise CorruptStreamError("invalid Huffman code")
    reader.skip(entry[0])
    return entry[1]


def _decode_block(reader, dc_lut, ac_lut, out: np.ndarray, pred: int) -> int:
    s = _decode_huff(reader, dc_lut)
    if s > 11:
        raise CorruptStreamError("DC category out of range")
    pred += _extend(reader.get(s), s) if s else 0
    out[0] = pred
    k = 1
    while k < 64:
        rs = _decode_huff(reader, ac_lut)
        r, s = rs >> 4, rs & 15
        if s == 0:
            if r == 15:
                k += 16
                continue
            break
        k += r
        if k > 63:
            raise CorruptStreamError("AC run past end of block")
        out[ZZ[k]] = _extend(reader.get(s), s)
        k += 1
    if k > 64:
        raise CorruptStreamError("AC run past end of block")
    return pred


def _scan_end(data: bytes, pos: int) -> int:
    """Index of the first marker (other than RSTn / stuffing) at or after pos."""
    n = len(data)
    while True:
        i = data.find(b"\xff", pos)
        if i < 0 or i + 1 >= n:
            raise TruncatedStreamError("scan data runs to end of stream")
        nxt = data[i + 1]
        if nxt == 0x00 or 0xD0 <= nxt <= 0xD7 or nxt == 0xFF:
            pos = i + 1 if nxt == 0xFF else i + 2
            continue
        return i


def _split_restarts(seg: bytes) -> list[bytes]:
    parts = []
    start = 0
    i = seg.find(b"\xff", 0)
    while i >= 0:
        nxt = seg[i + 1] if i + 1 < len(seg) else None
        if nxt is not None and 0xD0 <= nxt <= 0xD7:
            parts.append(seg[start:i])
            start = i + 2
        i = seg.find(b"\xff", i + 1)
    parts.append(seg[start:])
    return [p.replace(b"\xff\x00", b"\xff") for p in parts]


def parse(data: bytes) -> JpegImage:
    """Decode the entropy-coded coefficients of a baseline JFIF stream."""
    data = bytes(data)
    if data[:2] != b"\xff\xd8":
        raise CorruptStreamError("missing SOI marker")
    pos = 2
    n = len(data)
    qtables: dict[int, QuantTable] = {}
    dc_tables: dict[int, HuffmanTable] = {}
    ac_tables: dict[int, HuffmanTable] = {}
    frame = None
    coef = None
    restart = 0
    scanned: set[int] = set()
    scan_huff: dict[int, tuple[int, int]] = {}

    while True:
        while pos < n and data[pos] != 0xFF:
            pos += 1  # tolerate junk between segments
        while pos < n and data[pos] == 0xFF:
            pos += 1
        if pos >= n:
            raise TruncatedStreamError("stream ended before EOI")
        marker = data[pos]
        pos += 1
        if marker == 0xD9:
            break
        if 0xD0 <= marker <= 0xD7 or marker == 0x01:
            continue
        if pos + 2 > n:
            raise TruncatedStreamError("segment header cut off")
        (length,) = struct.unpack(">H", data[pos:pos + 2])
        if length < 2 or pos + length > n:
            raise TruncatedStreamError(f"segment 0x{marker:02X} runs past end of stream")
        seg = data[pos + 2:pos + length]
        pos += length

        if marker in _PROGRESSIVE:
            raise UnsupportedProgressiveError("progressive JPEG is not supported")
        if marker in _ARITHMETIC:
            raise UnsupportedArithmeticError("arithmetic-coded JPEG is not supported")
        if marker in _LOSSLESS:
            raise UnsupportedFormatError("lossless JPEG is not supported")
        if marker in (0xC0, 0xC1):
            frame = _read_frame(seg)
            hb, wb = frame["height"] // 8, frame["width"] // 8
            coef = np.zeros((3, hb, wb, 64), dtype=np.int32)
        elif marker == 0xDB:
            _read_dqt(seg, qtables)
        elif marker == 0xC4:
            _read_dht(seg, dc_tables, ac_tables)
        elif marker == 0xDD:
            if len(seg) < 2:
                raise CorruptStreamError("short DRI segment")
            (restart,) = struct.unpack(">H", seg[:2])
        elif marker == 0xDA:
            if frame is None:
                raise CorruptStreamError("SOS before SOF")
            end = _scan_end(data, pos)
            comps = _decode_scan(seg, data[pos:end], frame, coef, dc_tables, ac_tables, restart)
            for ci, ids in comps.items():
                scanned.add(ci)
                scan_huff[ci] = ids
            pos = end
        # APPn, COM and anything else: skipped

    if frame is None or coef is None:
        raise CorruptStreamError("no frame header")
    if len(scanned) != 3:
        raise TruncatedStreamError("not every component was present in a scan")
    qids = tuple(frame["tq"])
    for q in qids:
        if q not in qtables:
            raise CorruptStreamError(f"quantization table {q} not defined")
    hb, wb = frame["height"] // 8, frame["width"] // 8
    return JpegImage(
        coef=coef.reshape(3, hb, wb, 8, 8),
        quant_tables={q: qtables[q] for q in set(qids)},
        quant_ids=qids,
        dc_tables=dict(dc_tables),
        ac_tables=dict(ac_tables),
        huff_ids=tuple(scan_huff[c] for c in range(3)),
        restart_interval=restart,
    )


def _read_frame(seg: bytes) -> dict:
    if len(seg) < 6:
        raise CorruptStreamError("short SOF segment")
    p, h, w, nc = struct.unpack(">BHHB", seg[:6])
    if p != 8:
        raise UnsupportedPrecisionError(f"{p}-bit sample precision is not supported")
    if nc != 3:
        raise UnsupportedFormatError(f"expected 3 components, found {nc}")
    if len(seg) < 6 + 3 * nc:
        raise CorruptStreamError("short SOF component list")
    ids, tq = [], []
    for i in range(nc):
        cid, hv, q = seg[6 + 3 * i:9 + 3 * i]
        if hv != 0x11:
            raise UnsupportedSubsamplingError("only 4:4:4 sampling (1x1 factors) is supported")
        ids.append(cid)
        tq.append(q)
    if h == 0 or w == 0 or h % 8 or w % 8:
        raise UnsupportedFormatError(f"dimensions {w}x{h} must be non-zero multiples of 8")
    return {"height": h, "width": w, "ids": ids, "tq": tq}


def _read_dqt(seg: bytes, out: dict) -> None:
    i = 0
    while i < len(seg):
        pq, tq = seg[i] >> 4, seg[i] & 15
        i += 1
        size = 128 if pq else 64
        if i + size > len(seg):
            raise CorruptStreamError("short DQT segment")
        if pq:
            vals = struct.unpack(">64H", seg[i:i + 128])
        else:
            vals = tuple(seg[i:i + 64])
        i += size
        try:
            out[tq] = QuantTable.from_zigzag(vals)
        except JpegError as e:
            raise CorruptStreamError(str(e)) from None


def _read_dht(seg: bytes, dc: dict, ac: dict) -> None:
    i = 0
    while i < len(seg):
        if i + 17 > len(seg):
            raise CorruptStreamError("short DHT segment")
        tc, th = seg[i] >> 4, seg[i] & 15
        counts = tuple(seg[i + 1:i + 17])
        total = sum(counts)
        i += 17
        if i + total > len(seg):
            raise CorruptStreamError("short DHT symbol list")
        table = HuffmanTable(counts, tuple(seg[i:i + total]))
        i += total
        (ac if tc else dc)[th] = table


def _decode_scan(header: bytes, entropy: bytes, frame: dict, coef: np.ndarray,
                 dc_tables: dict, ac_tables: dict, restart: int) -> dict:
    ns = header[0]
    comps = []
    for k in range(ns):
        cid, tab = header[1 + 2 * k], header[2 + 2 * k]
        if cid not in frame["ids"]:
            raise CorruptStreamError(f"scan references unknown component {cid}")
        comps.append((frame["ids"].index(cid), tab >> 4, tab & 15))
    ss, se, a = header[1 + 2 * ns:4 + 2 * ns]
    if ss != 0 or se != 63 or a != 0:
        raise UnsupportedProgressiveError("spectral selection / successive approximation in scan")
    luts = {}
    for _, td, ta in comps:
        if td not in dc_tables or ta not in ac_tables:
            raise CorruptStreamError("scan uses an undefined Huffman table")
        luts[("dc", td)] = luts.get(("dc", td)) or dc_tables[td].lookup()
        luts[("ac", ta)] = luts.get(("ac", ta)) or ac_tables[ta].lookup()

    hb, wb = coef.shape[1], coef.shape[2]
    total = hb * wb  # MCUs: one block per component with 1x1 sampling
    segments = _split_restarts(entropy)
    per_seg = restart if restart else total
    if restart and len(segments) < -(-total // restart):
        raise TruncatedStreamError("missing restart intervals")
    mcu = 0
    for seg in segments:
        if mcu >= total:
            break
        reader = _BitReader(seg)
        preds = [0] * len(comps)
        for _ in range(min(per_seg, total - mcu)):
            by, bx = divmod(mcu, wb)
            for j, (ci, td, ta) in enumerate(comps):
                preds[j] = _decode_block(reader, luts[("dc", td)], luts[("ac", ta)],
                                         coef[ci, by, bx], preds[j])
            mcu += 1
    if mcu < total:
        raise TruncatedStreamError("scan ended before all blocks were decoded")
    return {ci: (td, ta) for ci, td, ta in comps}


# --------------------------------------------------------------------- encoding


class _BitWriter:
    def __init__(self):
        self.out = bytearray()
        self.acc = 0
        self.nbits = 0

    def put(self, value: int, n: int) -> None:
        self.acc = (self.acc << n) | (value & ((1 << n) - 1))
        self.nbits += n
        while self.nbits >= 8:
            self.nbits -= 8
            b = (self.acc >> self.nbits) & 0xFF
            self.out.append(b)
            if b == 0xFF:
                self.out.append(0)
        self.acc &= (1 << self.nbits) - 1

    def flush(self) -> bytes:
        if self.nbits:
            self.put((1 << (8 - self.nbits)) - 1, 8 - self.nbits)
        return bytes(self.out)


def _category(v: int) -> int:
    return abs(v).bit_length()


def _block_symbols(zz: np.ndarray, pred: int):
    """Yield (is_ac, symbol, extra_bits, extra_len) for one zigzag block."""
    diff = int(zz[0]) - pred
    s = _category(diff)
    yield False, s, (diff if diff >= 0 else diff + (1 << s) - 1), s
    run = 0
    nz = np.flatnonzero(zz[1:])
    last = nz[-1] + 1 if len(nz) else 0
    for k in range(1, last + 1):
        v = int(zz[k])
        if v == 0:
            run += 1
            continue
        while run > 15:
            yield True, 0xF0, 0, 0
            run -= 16
        s = _category(v)
        yield True, (run << 4) | s, (v if v > 0 else v + (1 << s) - 1), s
        run = 0
    if last < 63:
        yield True, 0x00, 0, 0


def _check_range(coef: np.ndarray) -> None:
    dc = coef[..., 0, 0]
    if dc.min(initial=0) < DC_RANGE[0] or dc.max(initial=0) > DC_RANGE[1]:
        raise CoefficientRangeError("DC coefficient outside baseline range")
    ac = coef.reshape(*coef.shape[:-2], 64)[..., 1:]
    if np.abs(ac).max(initial=0) > AC_LIMIT:
        raise CoefficientRangeError("AC coefficient outside baseline range (|c| <= 1023)")


def _pick_tables(img: JpegImage, symbols: list[tuple[set, set]]):
    """Reuse the image's own Huffman tables when they can code every symbol."""
    dc_ids = sorted({d for d, _ in img.huff_ids})
    ac_ids = sorted({a for _, a in img.huff_ids})
    have = all(d in img.dc_tables for d in dc_ids) and all(a in img.ac_tables for a in ac_ids)
    if have:
        ok = True
        for c, (dcs, acs) in enumerate(symbols):
            d, a = img.huff_ids[c]
            if not dcs <= set(img.dc_tables[d].symbols) or not acs <= set(img.ac_tables[a].symbols):
                ok = False
                break
        if ok:
            return ({d: img.dc_tables[d] for d in dc_ids}, {a: img.ac_tables[a] for a in ac_ids},
                    img.huff_ids)
    return ({0: STD_DC_LUMA, 1: STD_DC_CHROMA}, {0: STD_AC_LUMA, 1: STD_AC_CHROMA},
            ((0, 0), (1, 1), (1, 1)))


def encode(img: JpegImage) -> bytes:
    """Write a baseline JFIF stream; ``parse(encode(img))`` reproduces ``img.coef``."""
    coef = img.coef
    _check_range(coef)
    hb, wb = coef.shape[1], coef.shape[2]
    zz = coef.reshape(3, hb * wb, 64)[:, :, ZZ]

    streams = []
    symbols = []
    for c in range(3):
        seq = []
        dcs, acs = set(), set()
        pred = 0
        for b in range(hb * wb):
            for is_ac, sym, bits, nb in _block_symbols(zz[c, b], pred):
                (acs if is_ac else dcs).add(sym)
                seq.append((is_ac, sym, bits, nb))
            pred = int(zz[c, b, 0])
        streams.append(seq)
        symbols.append((dcs, acs))

    dc_tabs, ac_tabs, huff_ids = _pick_tables(img, symbols)
    dc_codes = {k: t.codes() for k, t in dc_tabs.items()}
    ac_codes = {k: t.codes() for k, t in ac_tabs.items()}

    # interleave per block: one MCU = one block of each component
    writer = _BitWriter()
    cursors = [0, 0, 0]
    for _ in range(hb * wb):
        for c in range(3):
            seq = streams[c]
            i = cursors[c]
            dmap = dc_codes[huff_ids[c][0]]
            amap = ac_codes[huff_ids[c][1]]
            first = True
            while i < len(seq):
                is_ac, sym, bits, nb = seq[i]
                if not is_ac and not first:
                    break
                first = False
                code, length = (amap if is_ac else dmap)[sym]
                writer.put(code, length)
                if nb:
                    writer.put(bits, nb)
                i += 1
            cursors[c] = i
    entropy = writer.flush()

    out = bytearray(b"\xff\xd8")
    out += _segment(0xE0, b"JFIF\x00\x01\x01\x00\x00\x01\x00\x01\x00\x00")
    for tid in sorted(set(img.quant_ids)):
        vals = img.quant_tables[tid].zigzag
        if vals.max() > 255:
            out += _segment(0xDB, bytes([0x10 | tid]) + struct.pack(">64H", *map(int, vals)))
        else:
            out += _segment(0xDB, bytes([tid]) + bytes(int(v) for v in vals))
    sof = struct.pack(">BHHB", 8, img.height, img.width, 3)
    for c in range(3):
        sof += bytes([c + 1, 0x11, img.quant_ids[c]])
    out += _segment(0xC0, sof)
    dht = b""
    for tid, t in sorted(dc_tabs.items()):
        dht += bytes([tid]) + bytes(t.counts) + bytes(t.symbols)
    for tid, t in sorted(ac_tabs.items()):
        dht += bytes([0x10 | tid]) + bytes(t.counts) + bytes(t.symbols)
    out += _segment(0xC4, dht)
    sos = bytes([3])
    for c in range(3):
        sos += bytes([c + 1, (huff_ids[c][0] << 4) | huff_ids[c][1]])
    sos += bytes([0, 63, 0])
    out += _segment(0xDA, sos)
    out += entropy
    out += b"\xff\xd9"
    return bytes(out)


def _segment(marker: int, payload: bytes) -> bytes:
    return bytes([0xFF, marker]) + struct.pack(">H", len(payload) + 2) + payload


# --------------------------------------------------------------------- pixels


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    r, g, b = (rgb[..., i].astype(np.float64) for i in range(3))
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168735892 * r - 0.331264108 * g + 0.5 * b + 128
    cr = 0.5 * r - 0.418687589 * g - 0.081312411 * b + 128
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = (ycc[..., i].astype(np.float64) for i in range(3))
    r = y + 1.402 * (cr - 128)
    g = y - 0.344136286 * (cb - 128) - 0.714136286 * (cr - 128)
    b = y + 1.772 * (cb - 128)
    return np.stack([r, g, b], axis=-1)


def decode_samples(img: JpegImage) -> np.ndarray:
    """Dequantize, inverse DCT and level shift to 8-bit YCbCr samples (H, W, 3)."""
    deq = img.coef.astype(np.float64) * img.quant_stack()[:, None, None]
    samples = unblockify(dct8_inverse(deq)) + 128.0
    return np.moveaxis(np.clip(round_half_away(samples), 0, 255), 0, -1).astype(np.uint8)


def decode_pixels(img: JpegImage) -> np.ndarray:
    """Decode to 8-bit RGB (H, W, 3)."""
    rgb = ycbcr_to_rgb(decode_samples(img))
    return np.clip(round_half_away(rgb), 0, 255).astype(np.uint8)


def from_pixels(rgb: np.ndarray, quality: int = 75) -> JpegImage:
    """Compress an 8-bit RGB image (H, W, 3) to quantized coefficients."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) RGB, got {rgb.shape}")
    h, w = rgb.shape[:2]
    if h % 8 or w % 8:
        raise ValueError(f"image dimensions {w}x{h} must be multiples of 8")
    luma, chroma = quant_tables_for_quality(quality)
    ycc = np.clip(round_half_away(rgb_to_ycbcr(rgb)), 0, 255)
    blocks = blockify(np.moveaxis(ycc, -1, 0) - 128.0)
    q = np.stack([luma.values, chroma.values, chroma.values]).astype(np.float64)
    coef = round_half_away(dct8_forward(blocks) / q[:, None, None])
    return JpegImage(
        coef=coef.astype(np.int32),
        quant_tables={0: luma, 1: chroma},
        quant_ids=(0, 1, 1),
        dc_tables={0: STD_DC_LUMA, 1: STD_DC_CHROMA},
        ac_tables={0: STD_AC_LUMA, 1: STD_AC_CHROMA},
    )


def read(path) -> JpegImage:
    with open(path, "rb") as f:
        return parse(f.read())


def write(path, img: JpegImage) -> None:
    with open(path, "wb") as f:
        f.write(encode(img))


def dump(img: JpegImage) -> str:
    """Line-oriented text dump of tables and coefficients (natural order)."""
    lines = [f"jpeg {img.width} {img.height}"]
    for c in range(3):
        lines.append(f"qtable {c} " + " ".join(str(int(v)) for v in img.quant(c).reshape(64)))
    hb, wb = img.coef.shape[1:3]
    for c in range(3):
        for by in range(hb):
            for bx in range(wb):
                vals = " ".join(str(int(v)) for v in img.coef[c, by, bx].reshape(64))
                lines.append(f"block {c} {by} {bx} {vals}")
    return "\n".join(lines) + "\n"
