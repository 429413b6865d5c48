//! Classic PCAP (libpcap savefile) reader that extracts TCP/UDP payloads.
//!
//! Handles all four magic variants (microsecond/nanosecond, native and
//! byte-swapped). Only Ethernet link-layer captures with IPv4 TCP/UDP
//! packets produce records; everything else is skipped and counted.
//! A malformed packet never aborts the file; a truncated file does.

use std::net::Ipv4Addr;
use std::path::Path;

use thiserror::Error;

use super::{FiveTuple, PayloadRecord, Protocol};

const MAGIC_MICROS: u32 = 0xa1b2_c3d4;
const MAGIC_MICROS_SWAPPED: u32 = 0xd4c3_b2a1;
const MAGIC_NANOS: u32 = 0xa1b2_3c4d;
const MAGIC_NANOS_SWAPPED: u32 = 0x4d3c_b2a1;

const LINKTYPE_ETHERNET: u32 = 1;
const ETHERTYPE_IPV4: u16 = 0x0800;

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("truncated capture at byte offset {offset}")]
    Truncated { offset: usize },
    #[error("unknown pcap magic 0x{0:08x}")]
    UnsupportedMagic(u32),
    #[error("unsupported link type {0} (only Ethernet is supported)")]
    UnsupportedLinkType(u32),
}

/// Per-file skip and error counters, reported alongside the records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseStats {
    /// Packet records present in the capture.
    pub packets: u64,
    /// Packets that produced a payload record.
    pub payload_records: u64,
    /// Non-IPv4 frames (ARP, IPv6, VLAN-tagged, ...).
    pub skipped_non_ipv4: u64,
    /// IPv4 packets carrying something other than TCP or UDP.
    pub skipped_non_transport: u64,
    /// IPv4 fragments (reassembly is unsupported).
    pub skipped_fragments: u64,
    /// TCP/UDP packets with no payload bytes (handshakes, acks, ...).
    pub skipped_zero_payload: u64,
    /// Packets whose headers were inconsistent with their captured bytes.
    pub malformed: u64,
}

/// Result of parsing one capture file.
#[derive(Debug, Default)]
pub struct PcapParse {
    pub records: Vec<PayloadRecord>,
    pub stats: ParseStats,
}

#[derive(Clone, Copy)]
struct Format {
    swapped: bool,
    nanos: bool,
}

// "Swapped" means the writer's byte order was opposite to ours; field
// bytes then read as big-endian on this (little-endian) layout.
fn read_u32(data: &[u8], at: usize, swapped: bool) -> u32 {
    let raw = [data[at], data[at + 1], data[at + 2], data[at + 3]];
    if swapped {
        u32::from_be_bytes(raw)
    } else {
        u32::from_le_bytes(raw)
    }
}

/// Parse a capture file from disk.
pub fn parse_pcap(path: impl AsRef<Path>) -> Result<PcapParse, PcapError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| PcapError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_pcap_bytes(&bytes)
}

/// Parse a capture already loaded into memory.
pub fn parse_pcap_bytes(bytes: &[u8]) -> Result<PcapParse, PcapError> {
    if bytes.len() < 24 {
        return Err(PcapError::Truncated { offset: bytes.len() });
    }
    let magic_le = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let format = match magic_le {
        MAGIC_MICROS => Format {
            swapped: false,
            nanos: false,
        },
        MAGIC_MICROS_SWAPPED => Format {
            swapped: true,
            nanos: false,
        },
        MAGIC_NANOS => Format {
            swapped: false,
            nanos: true,
        },
        MAGIC_NANOS_SWAPPED => Format {
            swapped: true,
            nanos: true,
        },
        other => return Err(PcapError::UnsupportedMagic(other)),
    };
    let linktype = read_u32(bytes, 20, format.swapped);
    if linktype != LINKTYPE_ETHERNET {
        return Err(PcapError::UnsupportedLinkType(linktype));
    }

    let mut out = PcapParse::default();
    let mut offset = 24usize;
    while offset < bytes.len() {
        if bytes.len() - offset < 16 {
            return Err(PcapError::Truncated { offset });
        }
        let ts_sec = read_u32(bytes, offset, format.swapped) as u64;
        let ts_frac = read_u32(bytes, offset + 4, format.swapped) as u64;
        let incl_len = read_u32(bytes, offset + 8, format.swapped) as usize;
        let body_start = offset + 16;
        if bytes.len() - body_start < incl_len {
            return Err(PcapError::Truncated { offset: body_start });
        }
        let timestamp_us = if format.nanos {
            ts_sec * 1_000_000 + ts_frac / 1_000
        } else {
            ts_sec * 1_000_000 + ts_frac
        };
        let frame = &bytes[body_start..body_start + incl_len];
        decode_frame(frame, timestamp_us, &mut out);
        out.stats.packets += 1;
        offset = body_start + incl_len;
    }
    Ok(out)
}

fn decode_frame(frame: &[u8], timestamp_us: u64, out: &mut PcapParse) {
    if frame.len() < 14 {
        out.stats.malformed += 1;
        return;
    }
    let ethertype = u16::from_be_bytes([frame[12], frame[13]]);
    if ethertype != ETHERTYPE_IPV4 {
        out.stats.skipped_non_ipv4 += 1;
        return;
    }
    let ip = &frame[14..];
    if ip.len() < 20 {
        out.stats.malformed += 1;
        return;
    }
    if ip[0] >> 4 != 4 {
        out.stats.skipped_non_ipv4 += 1;
        return;
    }
    let ihl = (ip[0] & 0x0f) as usize;
    let header_len = ihl * 4;
    let total_len = u16::from_be_bytes([ip[2], ip[3]]) as usize;
    if ihl < 5 || header_len > ip.len() || total_len < header_len || total_len > ip.len() {
        out.stats.malformed += 1;
        return;
    }
    let frag = u16::from_be_bytes([ip[6], ip[7]]);
    let more_fragments = frag & 0x2000 != 0;
    let frag_offset = frag & 0x1fff;
    if more_fragments || frag_offset != 0 {
        out.stats.skipped_fragments += 1;
        return;
    }
    let protocol = match ip[9] {
        6 => Protocol::Tcp,
        17 => Protocol::Udp,
        _ => {
            out.stats.skipped_non_transport += 1;
            return;
        }
    };
    let src_ip = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst_ip = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
    // Bound the transport segment by the IP total length, not the frame
    // length: short Ethernet frames carry trailing padding.
    let segment = &ip[header_len..total_len];
    let (src_port, dst_port, payload) = match protocol {
        Protocol::Tcp => {
            if segment.len() < 20 {
                out.stats.malformed += 1;
                return;
            }
            let data_offset = (segment[12] >> 4) as usize * 4;
            if data_offset < 20 || data_offset > segment.len() {
                out.stats.malformed += 1;
                return;
            }
            (
                u16::from_be_bytes([segment[0], segment[1]]),
                u16::from_be_bytes([segment[2], segment[3]]),
                &segment[data_offset..],
            )
        }
        Protocol::Udp => {
            if segment.len() < 8 {
                out.stats.malformed += 1;
                return;
            }
            let udp_len = u16::from_be_bytes([segment[4], segment[5]]) as usize;
            if udp_len < 8 || udp_len > segment.len() {
                out.stats.malformed += 1;
                return;
            }
            (
                u16::from_be_bytes([segment[0], segment[1]]),
                u16::from_be_bytes([segment[2], segment[3]]),
                &segment[8..udp_len],
            )
        }
    };
    if payload.is_empty() {
        out.stats.skipped_zero_payload += 1;
        return;
    }
    out.records.push(PayloadRecord {
        bytes: payload.to_vec(),
        tuple: FiveTuple {
            src_ip,
            dst_ip,
            src_port,
            dst_port,
            protocol,
        },
        timestamp_us,
        label: None,
    });
    out.stats.payload_records += 1;
}
