"""Baseline JFIF bitstream parsing and serialization.

Only the auditable subset is supported: baseline sequential DCT, 8-bit
samples, Huffman coding, 4:4:4 or 4:2:0 sampling, optional restart markers
on parse. Everything else is rejected with a clear error naming the marker.
"""

from __future__ import annotations

import numpy as np

from .codec import SAMPLING_420, SAMPLING_444, CompressedImage, QuantizedPlane
from .errors import InvalidParameterError, ParseError, UnsupportedFormatError

# Marker bytes (second byte of 0xFFxx)
SOI, EOI, SOS, DQT, DHT, DRI, COM, DNL = 0xD8, 0xD9, 0xDA, 0xDB, 0xC4, 0xDD, 0xFE, 0xDC
SOF_MARKERS = {0xC0: "SOF0", 0xC1: "SOF1", 0xC2: "SOF2", 0xC3: "SOF3",
               0xC5: "SOF5", 0xC6: "SOF6", 0xC7: "SOF7", 0xC9: "SOF9",
               0xCA: "SOF10", 0xCB: "SOF11", 0xCD: "SOF13", 0xCE: "SOF14",
               0xCF: "SOF15"}
RST_RANGE = range(0xD0, 0xD8)
APP_RANGE = range(0xE0, 0xF0)


def _zigzag_scan_order() -> list[int]:
    order = []
    for s in range(15):
        diag = [(i, s - i) for i in range(max(0, s - 7), min(s, 7) + 1)]
        if s % 2 == 0:
            diag.reverse()
        order.extend(diag)
    return [i * 8 + j for i, j in order]


ZIGZAG = _zigzag_scan_order()          # scan position -> raster index
UNZIGZAG = [0] * 64                    # raster index -> scan position
for _k, _r in enumerate(ZIGZAG):
    UNZIGZAG[_r] = _k

# Example Huffman tables from the JPEG standard (Annex K): (BITS, HUFFVAL).
STD_DC_LUMA = ([0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0],
               list(range(12)))
STD_DC_CHROMA = ([0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0],
                 list(range(12)))
STD_AC_LUMA = ([0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7D], [
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12,
    0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07,
    0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xA1, 0x08,
    0x23, 0x42, 0xB1, 0xC1, 0x15, 0x52, 0xD1, 0xF0,
    0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0A, 0x16,
    0x17, 0x18, 0x19, 0x1A, 0x25, 0x26, 0x27, 0x28,
    0x29, 0x2A, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39,
    0x3A, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49,
    0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59,
    0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69,
    0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79,
    0x7A, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
    0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98,
    0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7,
    0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6,
    0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5,
    0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2, 0xD3, 0xD4,
    0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA, 0xE1, 0xE2,
    0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA,
    0xF1, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8,
    0xF9, 0xFA])
STD_AC_CHROMA = ([0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77], [
    0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21,
    0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71,
    0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91,
    0xA1, 0xB1, 0xC1, 0x09, 0x23, 0x33, 0x52, 0xF0,
    0x15, 0x62, 0x72, 0xD1, 0x0A, 0x16, 0x24, 0x34,
    0xE1, 0x25, 0xF1, 0x17, 0x18, 0x19, 0x1A, 0x26,
    0x27, 0x28, 0x29, 0x2A, 0x35, 0x36, 0x37, 0x38,
    0x39, 0x3A, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48,
    0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58,
    0x59, 0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68,
    0x69, 0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78,
    0x79, 0x7A, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87,
    0x88, 0x89, 0x8A, 0x92, 0x93, 0x94, 0x95, 0x96,
    0x97, 0x98, 0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5,
    0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4,
    0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3,
    0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2,
    0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA,
    0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9,
    0xEA, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8,
    0xF9, 0xFA])


class HuffmanTable:
    """Canonical Huffman code built from the (BITS, HUFFVAL) wire form."""

    def __init__(self, bits, values):
        if len(bits) != 16 or sum(bits) != len(values):
            raise ParseError("inconsistent Huffman table definition")
        self.bits = list(bits)
        self.values = list(values)
        self.decode_map = {}   # (length, code) -> value
        self.encode_map = {}   # value -> (code, length)
        code = 0
        k = 0
        for length in range(1, 17):
            for _ in range(bits[length - 1]):
                self.decode_map[(length, code)] = values[k]
                self.encode_map[values[k]] = (code, length)
                code += 1
                k += 1
            code <<= 1


class _BitReader:
    """MSB-first bit reader over one de-stuffed entropy segment."""

    def __init__(self, data: bytes, base_offset: int):
        self.data = data
        self.base_offset = base_offset
        self.pos = 0       # bit position

    def read_bit(self) -> int:
        byte_idx = self.pos >> 3
        if byte_idx >= len(self.data):
            raise ParseError("entropy data exhausted mid-block", offset=self.base_offset)
        bit = (self.data[byte_idx] >> (7 - (self.pos & 7))) & 1
        self.pos += 1
        return bit

    def read_bits(self, n: int) -> int:
        v = 0
        for _ in range(n):
            v = (v << 1) | self.read_bit()
        return v

    def decode_symbol(self, table: HuffmanTable) -> int:
        code = 0
        for length in range(1, 17):
            code = (code << 1) | self.read_bit()
            val = table.decode_map.get((length, code))
            if val is not None:
                return val
        raise ParseError("invalid Huffman code in entropy data", offset=self.base_offset)


def _extend(value: int, size: int) -> int:
    """Map a `size`-bit magnitude field to its signed coefficient value."""
    if size == 0:
        return 0
    if value < (1 << (size - 1)):
        return value - (1 << size) + 1
    return value


def _read_u16(data: bytes, pos: int) -> int:
    if pos + 2 > len(data):
        raise ParseError("unexpected end of stream", offset=pos)
    return (data[pos] << 8) | data[pos + 1]


def _split_entropy_segments(data: bytes, pos: int):
    """Collect entropy-coded data from `pos`, de-stuffing 0xFF00 and splitting
    at restart markers. Returns (segments, position of the terminating marker)."""
    segments = []
    current = bytearray()
    starts = [pos]
    i = pos
    n = len(data)
    while i < n:
        b = data[i]
        if b != 0xFF:
            current.append(b)
            i += 1
            continue
        if i + 1 >= n:
            raise ParseError("truncated entropy stream", offset=i)
        m = data[i + 1]
        if m == 0x00:
            current.append(0xFF)
            i += 2
        elif m == 0xFF:
            i += 1  # fill byte
        elif m in RST_RANGE:
            segments.append((bytes(current), starts[-1]))
            current = bytearray()
            i += 2
            starts.append(i)
        else:
            segments.append((bytes(current), starts[-1]))
            return segments, i
    raise ParseError("entropy stream ran past end of file", offset=n)


def parse_jfif(data: bytes) -> CompressedImage:
    """Parse a baseline JFIF stream into quantized coefficient planes."""
    if len(data) < 4 or data[0] != 0xFF or data[1] != SOI:
        raise ParseError("missing SOI marker", offset=0)
    pos = 2
    quant_tables: dict[int, np.ndarray] = {}
    huff_tables: dict[tuple[int, int], HuffmanTable] = {}
    frame = None
    restart_interval = 0
    result = None

    while pos < len(data):
        if data[pos] != 0xFF:
            raise ParseError(f"expected marker, found byte {data[pos]:#04x}", offset=pos)
        while pos < len(data) and data[pos] == 0xFF:
            pos += 1  # fill bytes allowed before a marker
        if pos >= len(data):
            raise ParseError("truncated stream after fill bytes", offset=pos)
        marker = data[pos]
        pos += 1

        if marker == EOI:
            break
        if marker in SOF_MARKERS and marker != 0xC0:
            raise UnsupportedFormatError(
                f"unsupported JPEG mode: {SOF_MARKERS[marker]}", marker=SOF_MARKERS[marker])
        if marker in RST_RANGE or marker == 0x01:
            continue  # standalone markers outside a scan: ignore

        length = _read_u16(data, pos)
        seg_start, seg_end = pos + 2, pos + length
        if seg_end > len(data):
            raise ParseError("segment length exceeds stream", offset=pos)

        if marker in APP_RANGE or marker == COM:
            pass
        elif marker == DNL:
            raise UnsupportedFormatError("DNL-defined image height not supported", marker="DNL")
        elif marker == DQT:
            p = seg_start
            while p < seg_end:
                pq, tq = data[p] >> 4, data[p] & 0x0F
                p += 1
                if pq != 0:
                    raise UnsupportedFormatError(
                        "16-bit quantization tables not supported (baseline is 8-bit)",
                        marker="DQT")
                if p + 64 > seg_end:
                    raise ParseError("truncated DQT segment", offset=p)
                table = np.zeros(64, dtype=np.int64)
                table[ZIGZAG] = np.frombuffer(data[p:p + 64], dtype=np.uint8)
                quant_tables[tq] = table.reshape(8, 8)
                p += 64
        elif marker == DHT:
            p = seg_start
            while p < seg_end:
                tc, th = data[p] >> 4, data[p] & 0x0F
                p += 1
                bits = list(data[p:p + 16])
                p += 16
                count = sum(bits)
                values = list(data[p:p + count])
                p += count
                if p > seg_end:
                    raise ParseError("truncated DHT segment", offset=p)
                huff_tables[(tc, th)] = HuffmanTable(bits, values)
        elif marker == DRI:
            restart_interval = _read_u16(data, seg_start)
        elif marker == 0xC0:  # SOF0
            precision = data[seg_start]
            if precision != 8:
                raise UnsupportedFormatError(
                    f"{precision}-bit precision not supported", marker="SOF0")
            height = _read_u16(data, seg_start + 1)
            width = _read_u16(data, seg_start + 3)
            if height == 0:
                raise UnsupportedFormatError("DNL-deferred height not supported", marker="SOF0")
            ncomp = data[seg_start + 5]
            comps = []
            for c in range(ncomp):
                base = seg_start + 6 + 3 * c
                comps.append({
                    "id": data[base],
                    "h": data[base + 1] >> 4,
                    "v": data[base + 1] & 0x0F,
                    "tq": data[base + 2],
                })
            frame = {"width": width, "height": height, "comps": comps}
        elif marker == SOS:
            if frame is None:
                raise ParseError("SOS before SOF0", offset=pos)
            ns = data[seg_start]
            scan_comps = []
            for c in range(ns):
                cs = data[seg_start + 1 + 2 * c]
                td = data[seg_start + 2 + 2 * c] >> 4
                ta = data[seg_start + 2 + 2 * c] & 0x0F
                match = next((fc for fc in frame["comps"] if fc["id"] == cs), None)
                if match is None:
                    raise ParseError(f"scan references unknown component {cs}", offset=pos)
                scan_comps.append({**match, "td": td, "ta": ta})
            if len(scan_comps) != len(frame["comps"]):
                raise UnsupportedFormatError(
                    "multi-scan files not supported (baseline single scan only)", marker="SOS")
            segments, pos = _split_entropy_segments(data, seg_end)
            result = _decode_scan(frame, scan_comps, quant_tables, huff_tables,
                                  restart_interval, segments)
            continue
        else:
            raise UnsupportedFormatError(f"unsupported marker 0xFF{marker:02X}",
                                         marker=f"0xFF{marker:02X}")
        pos = seg_end

    if result is None:
        raise ParseError("no image scan found in stream", offset=len(data))
    return result


def _sampling_mode(comps) -> str:
    factors = [(c["h"], c["v"]) for c in comps]
    if len(comps) == 1 or all(f == (1, 1) for f in factors):
        return SAMPLING_444
    if factors == [(2, 2), (1, 1), (1, 1)]:
        return SAMPLING_420
    raise UnsupportedFormatError(
        f"unsupported sampling factors {factors} (only 4:4:4 and 4:2:0)", marker="SOF0")


def _decode_scan(frame, comps, quant_tables, huff_tables, restart_interval, segments):
    sampling = _sampling_mode(comps)
    if len(comps) not in (1, 3):
        raise UnsupportedFormatError(f"{len(comps)}-component images not supported",
                                     marker="SOF0")
    hmax = max(c["h"] for c in comps)
    vmax = max(c["v"] for c in comps)
    width, height = frame["width"], frame["height"]
    mcus_x = -(-width // (8 * hmax))
    mcus_y = -(-height // (8 * vmax))

    grids = {}
    for c in comps:
        if c["tq"] not in quant_tables:
            raise ParseError(f"component references undefined quant table {c['tq']}")
        grids[c["id"]] = np.zeros((mcus_y * c["v"], mcus_x * c["h"], 8, 8), dtype=np.int32)

    seg_iter = iter(segments)
    seg_data, seg_off = next(seg_iter)
    reader = _BitReader(seg_data, seg_off)
    preds = {c["id"]: 0 for c in comps}
    mcu_index = 0

    for my in range(mcus_y):
        for mx in range(mcus_x):
            if restart_interval and mcu_index and mcu_index % restart_interval == 0:
                try:
                    seg_data, seg_off = next(seg_iter)
                except StopIteration:
                    raise ParseError("missing restart marker segment",
                                     offset=reader.base_offset) from None
                reader = _BitReader(seg_data, seg_off)
                preds = {c["id"]: 0 for c in comps}
            for c in comps:
                dc_tbl = huff_tables.get((0, c["td"]))
                ac_tbl = huff_tables.get((1, c["ta"]))
                if dc_tbl is None or ac_tbl is None:
                    raise ParseError(f"missing Huffman table for component {c['id']}")
                for by in range(c["v"]):
                    for bx in range(c["h"]):
                        block = _decode_block(reader, dc_tbl, ac_tbl, preds, c["id"])
                        grids[c["id"]][my * c["v"] + by, mx * c["h"] + bx] = block
            mcu_index += 1

    planes = []
    names = ["Y", "Cb", "Cr"]
    for i, c in enumerate(comps):
        planes.append(QuantizedPlane(grids[c["id"]], quant_tables[c["tq"]], names[i]))
    if len(planes) == 1:
        return CompressedImage(planes[0], None, None, width, height, SAMPLING_444,
                               restart_interval)
    return CompressedImage(planes[0], planes[1], planes[2], width, height, sampling,
                           restart_interval)


def _decode_block(reader, dc_tbl, ac_tbl, preds, comp_id):
    zz = np.zeros(64, dtype=np.int32)
    size = reader.decode_symbol(dc_tbl)
    if size > 11:
        raise ParseError("DC magnitude category out of range", offset=reader.base_offset)
    diff = _extend(reader.read_bits(size), size)
    preds[comp_id] += diff
    zz[0] = preds[comp_id]
    k = 1
    while k < 64:
        rs = reader.decode_symbol(ac_tbl)
        run, size = rs >> 4, rs & 0x0F
        if size == 0:
            if run == 0:      # EOB
                break
            if run == 15:     # ZRL
                k += 16
                continue
            raise ParseError("invalid AC run/size symbol", offset=reader.base_offset)
        k += run
        if k > 63:
            raise ParseError("AC coefficient index overflow", offset=reader.base_offset)
        zz[k] = _extend(reader.read_bits(size), size)
        k += 1
    block = np.zeros(64, dtype=np.int32)
    block[ZIGZAG] = zz
    return block.reshape(8, 8)


class _BitWriter:
    def __init__(self):
        self.out = bytearray()
        self.acc = 0
        self.nbits = 0

    def write(self, code: int, length: int):
        self.acc = (self.acc << length) | (code & ((1 << length) - 1))
        self.nbits += length
        while self.nbits >= 8:
            self.nbits -= 8
            byte = (self.acc >> self.nbits) & 0xFF
            self.out.append(byte)
            if byte == 0xFF:
                self.out.append(0x00)  # byte stuffing
        self.acc &= (1 << self.nbits) - 1

    def flush(self):
        if self.nbits:
            pad = 8 - self.nbits
            self.write((1 << pad) - 1, pad)


def _category(value: int) -> int:
    return int(value).bit_length() if value >= 0 else int(-value).bit_length()


def _encode_block(writer, block, dc_tbl, ac_tbl, pred):
    zz = block.reshape(64)[ZIGZAG]
    diff = int(zz[0]) - pred
    size = _category(diff)
    if size > 11:
        raise InvalidParameterError(f"DC difference {diff} exceeds baseline encodable range")
    code, length = dc_tbl.encode_map[size]
    writer.write(code, length)
    if size:
        writer.write(diff if diff > 0 else diff + (1 << size) - 1, size)

    last_nonzero = int(np.max(np.nonzero(zz)[0])) if np.any(zz[1:]) else 0
    run = 0
    for k in range(1, last_nonzero + 1):
        v = int(zz[k])
        if v == 0:
            run += 1
            continue
        while run > 15:
            code, length = ac_tbl.encode_map[0xF0]  # ZRL
            writer.write(code, length)
            run -= 16
        size = _category(v)
        if size > 10:
            raise InvalidParameterError(f"AC coefficient {v} exceeds baseline encodable range")
        code, length = ac_tbl.encode_map[(run << 4) | size]
        writer.write(code, length)
        writer.write(v if v > 0 else v + (1 << size) - 1, size)
        run = 0
    if last_nonzero < 63:
        code, length = ac_tbl.encode_map[0x00]  # EOB
        writer.write(code, length)
    return int(zz[0])


def _segment(marker: int, payload: bytes) -> bytes:
    return bytes([0xFF, marker]) + (len(payload) + 2).to_bytes(2, "big") + payload


def _dqt_payload(tq: int, table: np.ndarray) -> bytes:
    zz = np.asarray(table, dtype=np.int64).reshape(64)[ZIGZAG]
    if np.any(zz < 1) or np.any(zz > 255):
        raise InvalidParameterError("quantization table entries must be in [1, 255]")
    return bytes([tq]) + bytes(int(v) for v in zz)


def _dht_payload(tc: int, th: int, spec) -> bytes:
    bits, values = spec
    return bytes([(tc << 4) | th]) + bytes(bits) + bytes(values)


def serialize_jfif(code: CompressedImage) -> bytes:
    """Serialize to a baseline JFIF stream using the standard example Huffman
    tables (deterministic output; parse_jfif inverts it coefficient-exactly)."""
    out = bytearray()
    out += bytes([0xFF, SOI])
    out += _segment(0xE0, b"JFIF\x00" + bytes([1, 1, 0]) +
                    (1).to_bytes(2, "big") + (1).to_bytes(2, "big") + bytes([0, 0]))

    out += _segment(DQT, _dqt_payload(0, code.luma.table))
    if code.is_color:
        out += _segment(DQT, _dqt_payload(1, code.cb.table))
        if not np.array_equal(code.cb.table, code.cr.table):
            raise InvalidParameterError("Cb and Cr must share one quantization table")

    if code.sampling == SAMPLING_420 and code.is_color:
        factors = [(2, 2), (1, 1), (1, 1)]
    else:
        factors = [(1, 1), (1, 1), (1, 1)]
    comps = [(1, factors[0], 0)]
    if code.is_color:
        comps += [(2, factors[1], 1), (3, factors[2], 1)]
    sof = bytes([8]) + code.height.to_bytes(2, "big") + code.width.to_bytes(2, "big")
    sof += bytes([len(comps)])
    for cid, (h, v), tq in comps:
        sof += bytes([cid, (h << 4) | v, tq])
    out += _segment(0xC0, sof)

    out += _segment(DHT, _dht_payload(0, 0, STD_DC_LUMA))
    out += _segment(DHT, _dht_payload(1, 0, STD_AC_LUMA))
    tables = {1: (HuffmanTable(*STD_DC_LUMA), HuffmanTable(*STD_AC_LUMA))}
    if code.is_color:
        out += _segment(DHT, _dht_payload(0, 1, STD_DC_CHROMA))
        out += _segment(DHT, _dht_payload(1, 1, STD_AC_CHROMA))
        chroma = (HuffmanTable(*STD_DC_CHROMA), HuffmanTable(*STD_AC_CHROMA))
        tables[2] = tables[3] = chroma

    sos = bytes([len(comps)])
    for cid, _, tq in comps:
        sos += bytes([cid, (tq << 4) | tq])
    sos += bytes([0, 63, 0])
    out += _segment(SOS, sos)

    writer = _BitWriter()
    planes = {1: code.luma, 2: code.cb, 3: code.cr}
    hmax, vmax = factors[0]
    mcus_x = -(-code.width // (8 * hmax))
    mcus_y = -(-code.height // (8 * vmax))
    for cid, (h, v), _ in comps:
        want = (mcus_y * v, mcus_x * h)
        if planes[cid].grid != want:
            raise InvalidParameterError(
                f"plane {planes[cid].channel} grid {planes[cid].grid} does not match the "
                f"standard MCU grid {want} for {code.width}x{code.height} at {code.sampling}")
    preds = {cid: 0 for cid, _, _ in comps}
    for my in range(mcus_y):
        for mx in range(mcus_x):
            for cid, (h, v), _ in comps:
                plane = planes[cid]
                for by in range(v):
                    for bx in range(h):
                        row, col = my * v + by, mx * h + bx
                        preds[cid] = _encode_block(writer, plane.blocks[row, col],
                                                   tables[cid][0], tables[cid][1], preds[cid])
    writer.flush()
    out += writer.out
    out += bytes([0xFF, EOI])
    return bytes(out)
