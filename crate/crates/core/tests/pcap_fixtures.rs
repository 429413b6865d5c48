//! Hand-built PCAP fixtures with hand-verified layouts.
//!
//! The builders below construct capture bytes field by field, independent
//! of the parser under test. Offsets: 24-byte global header; per-record
//! 16-byte headers; Ethernet header 14 bytes; IPv4 header 20 bytes (no
//! options); UDP header 8 bytes; TCP header 20 bytes plus options.

use std::net::Ipv4Addr;

use packetproto_core::ingest::{parse_pcap_bytes, PcapError, Protocol};

#[derive(Clone, Copy)]
enum Order {
    Native,
    Swapped,
}

fn put_u16(buf: &mut Vec<u8>, v: u16, order: Order) {
    match order {
        Order::Native => buf.extend_from_slice(&v.to_le_bytes()),
        Order::Swapped => buf.extend_from_slice(&v.to_be_bytes()),
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32, order: Order) {
    match order {
        Order::Native => buf.extend_from_slice(&v.to_le_bytes()),
        Order::Swapped => buf.extend_from_slice(&v.to_be_bytes()),
    }
}

fn global_header(order: Order, nanos: bool, linktype: u32) -> Vec<u8> {
    let mut buf = Vec::new();
    let magic: u32 = if nanos { 0xa1b2_3c4d } else { 0xa1b2_c3d4 };
    put_u32(&mut buf, magic, order);
    put_u16(&mut buf, 2, order); // version major
    put_u16(&mut buf, 4, order); // version minor
    put_u32(&mut buf, 0, order); // thiszone
    put_u32(&mut buf, 0, order); // sigfigs
    put_u32(&mut buf, 65535, order); // snaplen
    put_u32(&mut buf, linktype, order);
    assert_eq!(buf.len(), 24);
    buf
}

fn add_record(buf: &mut Vec<u8>, order: Order, ts_sec: u32, ts_frac: u32, frame: &[u8]) {
    put_u32(buf, ts_sec, order);
    put_u32(buf, ts_frac, order);
    put_u32(buf, frame.len() as u32, order);
    put_u32(buf, frame.len() as u32, order);
    buf.extend_from_slice(frame);
}

fn ethernet(ethertype: u16, inner: &[u8]) -> Vec<u8> {
    let mut frame = Vec::new();
    frame.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]); // dst mac
    frame.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02]); // src mac
    frame.extend_from_slice(&ethertype.to_be_bytes());
    frame.extend_from_slice(inner);
    frame
}

fn ipv4(src: [u8; 4], dst: [u8; 4], protocol: u8, frag_flags: u16, segment: &[u8]) -> Vec<u8> {
    let total_len = (20 + segment.len()) as u16;
    let mut ip = Vec::new();
    ip.push(0x45); // version 4, IHL 5
    ip.push(0);
    ip.extend_from_slice(&total_len.to_be_bytes());
    ip.extend_from_slice(&0x1234u16.to_be_bytes()); // identification
    ip.extend_from_slice(&frag_flags.to_be_bytes());
    ip.push(64); // ttl
    ip.push(protocol);
    ip.extend_from_slice(&0u16.to_be_bytes()); // checksum (unchecked)
    ip.extend_from_slice(&src);
    ip.extend_from_slice(&dst);
    ip.extend_from_slice(segment);
    ip
}

fn udp_segment(sport: u16, dport: u16, payload: &[u8]) -> Vec<u8> {
    let mut seg = Vec::new();
    seg.extend_from_slice(&sport.to_be_bytes());
    seg.extend_from_slice(&dport.to_be_bytes());
    seg.extend_from_slice(&((8 + payload.len()) as u16).to_be_bytes());
    seg.extend_from_slice(&0u16.to_be_bytes());
    seg.extend_from_slice(payload);
    seg
}

fn tcp_segment(sport: u16, dport: u16, options: &[u8], payload: &[u8]) -> Vec<u8> {
    assert_eq!(options.len() % 4, 0);
    let data_offset = 5 + options.len() / 4;
    let mut seg = Vec::new();
    seg.extend_from_slice(&sport.to_be_bytes());
    seg.extend_from_slice(&dport.to_be_bytes());
    seg.extend_from_slice(&1u32.to_be_bytes()); // seq
    seg.extend_from_slice(&0u32.to_be_bytes()); // ack
    seg.push((data_offset as u8) << 4);
    seg.push(0x18); // PSH|ACK
    seg.extend_from_slice(&1024u16.to_be_bytes()); // window
    seg.extend_from_slice(&0u16.to_be_bytes()); // checksum
    seg.extend_from_slice(&0u16.to_be_bytes()); // urgent
    seg.extend_from_slice(options);
    seg.extend_from_slice(payload);
    seg
}

fn udp_frame(payload: &[u8]) -> Vec<u8> {
    ethernet(
        0x0800,
        &ipv4(
            [192, 168, 1, 10],
            [10, 0, 0, 5],
            17,
            0,
            &udp_segment(5353, 53, payload),
        ),
    )
}

#[test]
fn header_only_file_yields_nothing() {
    let file = global_header(Order::Native, false, 1);
    let parse = parse_pcap_bytes(&file).unwrap();
    assert!(parse.records.is_empty());
    assert_eq!(parse.stats.packets, 0);
    assert_eq!(parse.stats.malformed, 0);
}

#[test]
fn single_udp_packet_extracts_payload_and_five_tuple() {
    let mut file = global_header(Order::Native, false, 1);
    add_record(
        &mut file,
        Order::Native,
        1000,
        250,
        &udp_frame(&[0xde, 0xad, 0xbe, 0xef]),
    );
    let parse = parse_pcap_bytes(&file).unwrap();
    assert_eq!(parse.records.len(), 1);
    let r = &parse.records[0];
    assert_eq!(r.bytes, vec![222, 173, 190, 239]);
    assert_eq!(r.tuple.src_ip, Ipv4Addr::new(192, 168, 1, 10));
    assert_eq!(r.tuple.dst_ip, Ipv4Addr::new(10, 0, 0, 5));
    assert_eq!(r.tuple.src_port, 5353);
    assert_eq!(r.tuple.dst_port, 53);
    assert_eq!(r.tuple.protocol, Protocol::Udp);
    assert_eq!(r.timestamp_us, 1000 * 1_000_000 + 250);
    assert_eq!(parse.stats.payload_records, 1);
}

#[test]
fn swapped_magic_produces_identical_records() {
    let frame = udp_frame(&[1, 2, 3]);
    let mut native = global_header(Order::Native, false, 1);
    add_record(&mut native, Order::Native, 77, 8, &frame);
    let mut swapped = global_header(Order::Swapped, false, 1);
    add_record(&mut swapped, Order::Swapped, 77, 8, &frame);

    let a = parse_pcap_bytes(&native).unwrap();
    let b = parse_pcap_bytes(&swapped).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.stats, b.stats);
}

#[test]
fn nanosecond_magic_scales_timestamps() {
    let frame = udp_frame(&[9]);
    let mut micro = global_header(Order::Native, false, 1);
    add_record(&mut micro, Order::Native, 3, 5000, &frame);
    let mut nano = global_header(Order::Native, true, 1);
    add_record(&mut nano, Order::Native, 3, 5_000_000, &frame);

    let a = parse_pcap_bytes(&micro).unwrap();
    let b = parse_pcap_bytes(&nano).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.records[0].timestamp_us, 3_005_000);
}

#[test]
fn tcp_payload_extracted_and_pure_ack_skipped() {
    let with_payload = ethernet(
        0x0800,
        &ipv4(
            [10, 1, 1, 1],
            [10, 1, 1, 2],
            6,
            0,
            &tcp_segment(443, 50000, &[], b"GET /"),
        ),
    );
    let pure_ack = ethernet(
        0x0800,
        &ipv4(
            [10, 1, 1, 2],
            [10, 1, 1, 1],
            6,
            0,
            &tcp_segment(50000, 443, &[], &[]),
        ),
    );
    let mut file = global_header(Order::Native, false, 1);
    add_record(&mut file, Order::Native, 1, 0, &with_payload);
    add_record(&mut file, Order::Native, 2, 0, &pure_ack);
    let parse = parse_pcap_bytes(&file).unwrap();
    assert_eq!(parse.records.len(), 1);
    assert_eq!(parse.records[0].bytes, b"GET /");
    assert_eq!(parse.records[0].tuple.protocol, Protocol::Tcp);
    assert_eq!(parse.stats.skipped_zero_payload, 1);
    assert_eq!(parse.stats.packets, 2);
}

#[test]
fn tcp_options_are_not_part_of_the_payload() {
    // 4 bytes of NOP options -> data offset 6.
    let frame = ethernet(
        0x0800,
        &ipv4(
            [10, 1, 1, 1],
            [10, 1, 1, 2],
            6,
            0,
            &tcp_segment(80, 1234, &[1, 1, 1, 1], &[0xAA, 0xBB]),
        ),
    );
    let mut file = global_header(Order::Native, false, 1);
    add_record(&mut file, Order::Native, 1, 0, &frame);
    let parse = parse_pcap_bytes(&file).unwrap();
    assert_eq!(parse.records[0].bytes, vec![0xAA, 0xBB]);
}

#[test]
fn ethernet_trailing_padding_is_excluded() {
    // Single-byte UDP payload: frame is 14+20+8+1 = 43 bytes; pad to the
    // 60-byte Ethernet minimum. The IP total length must bound the payload.
    let mut frame = udp_frame(&[0x7f]);
    assert_eq!(frame.len(), 43);
    frame.resize(60, 0);
    let mut file = global_header(Order::Native, false, 1);
    add_record(&mut file, Order::Native, 1, 0, &frame);
    let parse = parse_pcap_bytes(&file).unwrap();
    assert_eq!(parse.records[0].bytes, vec![0x7f]);
}

#[test]
fn non_ipv4_and_non_transport_are_counted() {
    let arp = ethernet(0x0806, &[0u8; 28]);
    let icmp = ethernet(
        0x0800,
        &ipv4([10, 0, 0, 1], [10, 0, 0, 2], 1, 0, &[8, 0, 0, 0]),
    );
    let mut file = global_header(Order::Native, false, 1);
    add_record(&mut file, Order::Native, 1, 0, &arp);
    add_record(&mut file, Order::Native, 2, 0, &icmp);
    let parse = parse_pcap_bytes(&file).unwrap();
    assert!(parse.records.is_empty());
    assert_eq!(parse.stats.skipped_non_ipv4, 1);
    assert_eq!(parse.stats.skipped_non_transport, 1);
}

#[test]
fn fragments_are_skipped() {
    // More-fragments flag set (0x2000), offset 0.
    let frag = ethernet(
        0x0800,
        &ipv4(
            [10, 0, 0, 1],
            [10, 0, 0, 2],
            17,
            0x2000,
            &udp_segment(1, 2, &[1, 2, 3]),
        ),
    );
    let mut file = global_header(Order::Native, false, 1);
    add_record(&mut file, Order::Native, 1, 0, &frag);
    let parse = parse_pcap_bytes(&file).unwrap();
    assert!(parse.records.is_empty());
    assert_eq!(parse.stats.skipped_fragments, 1);
}

#[test]
fn malformed_packet_is_skipped_without_aborting() {
    // UDP length field larger than the segment.
    let mut bad_udp = udp_segment(1, 2, &[1, 2]);
    bad_udp[4] = 0;
    bad_udp[5] = 200;
    let bad = ethernet(0x0800, &ipv4([10, 0, 0, 1], [10, 0, 0, 2], 17, 0, &bad_udp));
    let good = udp_frame(&[5, 6]);
    let mut file = global_header(Order::Native, false, 1);
    add_record(&mut file, Order::Native, 1, 0, &bad);
    add_record(&mut file, Order::Native, 2, 0, &good);
    let parse = parse_pcap_bytes(&file).unwrap();
    assert_eq!(parse.stats.malformed, 1);
    assert_eq!(parse.records.len(), 1);
    assert_eq!(parse.records[0].bytes, vec![5, 6]);
}

#[test]
fn truncated_file_errors_with_offset() {
    let mut file = global_header(Order::Native, false, 1);
    add_record(&mut file, Order::Native, 1, 0, &udp_frame(&[1, 2, 3, 4]));
    // Chop the last 10 bytes of the packet body.
    let cut = file.len() - 10;
    let err = parse_pcap_bytes(&file[..cut]).unwrap_err();
    match err {
        PcapError::Truncated { offset } => assert_eq!(offset, 24 + 16),
        other => panic!("expected truncation, got {other:?}"),
    }

    // Chop inside the record header instead.
    let err = parse_pcap_bytes(&file[..24 + 7]).unwrap_err();
    match err {
        PcapError::Truncated { offset } => assert_eq!(offset, 24),
        other => panic!("expected truncation, got {other:?}"),
    }
}

#[test]
fn unknown_magic_is_rejected() {
    let mut file = global_header(Order::Native, false, 1);
    file[0] = 0x00;
    assert!(matches!(
        parse_pcap_bytes(&file),
        Err(PcapError::UnsupportedMagic(_))
    ));
}

#[test]
fn non_ethernet_linktype_is_rejected() {
    let file = global_header(Order::Native, false, 101);
    assert!(matches!(
        parse_pcap_bytes(&file),
        Err(PcapError::UnsupportedLinkType(101))
    ));
}
