"""Classic pcap reader: Ethernet link layer, IPv4 TCP/UDP packets.

Handles both byte orders and both timestamp resolutions (magic
0xa1b2c3d4 / 0xa1b23c4d and their swaps). Anything that is not an IPv4
TCP or UDP packet is skipped and counted, never silently dropped.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass, field
from pathlib import Path

MAGIC_US_BE = 0xA1B2C3D4
MAGIC_US_LE = 0xD4C3B2A1
MAGIC_NS_BE = 0xA1B23C4D
MAGIC_NS_LE = 0x4D3CB2A1

LINKTYPE_ETHERNET = 1

TCP = 6
UDP = 17

FIN, SYN, RST, PSH, ACK, URG, ECE, CWR = 0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80

_FLAG_NAMES = (
    (FIN, "FIN"), (SYN, "SYN"), (RST, "RST"), (PSH, "PSH"),
    (ACK, "ACK"), (URG, "URG"), (ECE, "ECE"), (CWR, "CWR"),
)


class PcapError(Exception):
    pass


@dataclass(frozen=True)
class PacketMeta:
    """Decoded metadata of one IPv4 TCP/UDP packet."""

    timestamp_us: int
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: int
    ip_header_length: int
    ip_total_length: int
    l4_header_length: int
    payload_length: int
    tcp_flags: frozenset[str] = frozenset()
    tcp_window: int = 0

    def has_flag(self, name: str) -> bool:
        return name in self.tcp_flags

    @property
    def header_bytes(self) -> int:
        """IPv4 header plus L4 header, the per-packet header length."""
        return self.ip_header_length + self.l4_header_length


@dataclass
class PcapResult:
    packets: list[PacketMeta] = field(default_factory=list)
    skipped: int = 0  # frames that were not IPv4 TCP/UDP


def _flag_set(bits: int) -> frozenset[str]:
    return frozenset(name for mask, name in _FLAG_NAMES if bits & mask)


def read_pcap(path: str | Path) -> PcapResult:
    """Decode a classic pcap file into per-packet metadata, in file order."""
    data = Path(path).read_bytes()
    if len(data) < 24:
        raise PcapError(f"{path}: too short for a pcap global header")
    (magic,) = struct.unpack("<I", data[:4])
    if magic in (MAGIC_US_BE, MAGIC_NS_BE):
        endian, ns = "<", magic == MAGIC_NS_BE
    elif magic in (MAGIC_US_LE, MAGIC_NS_LE):
        endian, ns = ">", magic == MAGIC_NS_LE
    else:
        raise PcapError(f"{path}: bad magic 0x{magic:08x}")
    (linktype,) = struct.unpack(endian + "I", data[20:24])
    if linktype != LINKTYPE_ETHERNET:
        raise PcapError(f"{path}: unsupported link type {linktype}")

    result = PcapResult()
    offset = 24
    rec_hdr = struct.Struct(endian + "IIII")
    while offset < len(data):
        if offset + 16 > len(data):
            raise PcapError(f"{path}: truncated record header at offset {offset}")
        ts_sec, ts_frac, incl_len, orig_len = rec_hdr.unpack_from(data, offset)
        offset += 16
        if offset + incl_len > len(data):
            raise PcapError(f"{path}: truncated record body at offset {offset}")
        frame = data[offset:offset + incl_len]
        offset += incl_len
        timestamp_us = ts_sec * 1_000_000 + (ts_frac // 1000 if ns else ts_frac)
        meta = _decode_frame(frame, timestamp_us)
        if meta is None:
            result.skipped += 1
        else:
            result.packets.append(meta)
    return result


def _decode_frame(frame: bytes, timestamp_us: int) -> PacketMeta | None:
    if len(frame) < 14:
        return None
    ethertype = struct.unpack("!H", frame[12:14])[0]
    l3_off = 14
    while ethertype in (0x8100, 0x88A8):  # VLAN tags
        if len(frame) < l3_off + 4:
            return None
        ethertype = struct.unpack("!H", frame[l3_off + 2:l3_off + 4])[0]
        l3_off += 4
    if ethertype != 0x0800:
        return None

    ip = frame[l3_off:]
    if len(ip) < 20:
        return None
    version_ihl = ip[0]
    if version_ihl >> 4 != 4:
        return None
    ihl = (version_ihl & 0x0F) * 4
    if ihl < 20 or len(ip) < ihl:
        return None
    total_length = struct.unpack("!H", ip[2:4])[0]
    protocol = ip[9]
    src_ip = socket.inet_ntoa(ip[12:16])
    dst_ip = socket.inet_ntoa(ip[16:20])
    l4 = ip[ihl:]

    if protocol == TCP:
        if len(l4) < 20:
            return None
        src_port, dst_port = struct.unpack("!HH", l4[:4])
        data_offset = (l4[12] >> 4) * 4
        if data_offset < 20:
            return None
        flags = _flag_set(l4[13])
        window = struct.unpack("!H", l4[14:16])[0]
        l4_header = data_offset
    elif protocol == UDP:
        if len(l4) < 8:
            return None
        src_port, dst_port = struct.unpack("!HH", l4[:4])
        flags = frozenset()
        window = 0
        l4_header = 8
    else:
        return None

    payload = max(0, total_length - ihl - l4_header)
    return PacketMeta(
        timestamp_us=timestamp_us,
        src_ip=src_ip, dst_ip=dst_ip,
        src_port=src_port, dst_port=dst_port,
        protocol=protocol,
        ip_header_length=ihl,
        ip_total_length=total_length,
        l4_header_length=l4_header,
        payload_length=payload,
        tcp_flags=flags,
        tcp_window=window,
    )
