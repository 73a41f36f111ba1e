//! The subset of the RFC 1035 message format the responder speaks: one
//! question per query, A answers only.

use std::net::Ipv4Addr;

use thiserror::Error;

pub const TYPE_A: u16 = 1;
pub const TYPE_AAAA: u16 = 28;
pub const TYPE_ANY: u16 = 255;
pub const CLASS_IN: u16 = 1;
pub const CLASS_ANY: u16 = 255;

pub const RCODE_NOERROR: u8 = 0;
pub const RCODE_FORMERR: u8 = 1;
pub const RCODE_SERVFAIL: u8 = 2;
pub const RCODE_NXDOMAIN: u8 = 3;
pub const RCODE_NOTIMP: u8 = 4;
pub const RCODE_REFUSED: u8 = 5;

const HEADER_LEN: usize = 12;
const MAX_POINTER_HOPS: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("message shorter than the 12-byte header")]
    TooShort,
    #[error("truncated message")]
    Truncated,
    #[error("malformed name")]
    BadName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub id: u16,
    pub qr: bool,
    pub opcode: u8,
    pub aa: bool,
    pub tc: bool,
    pub rd: bool,
    pub ra: bool,
    pub rcode: u8,
    pub qdcount: u16,
    pub ancount: u16,
    pub nscount: u16,
    pub arcount: u16,
}

impl Header {
    pub fn parse(buf: &[u8]) -> Result<Header, WireError> {
        if buf.len() < HEADER_LEN {
            return Err(WireError::TooShort);
        }
        let u16_at = |i: usize| u16::from_be_bytes([buf[i], buf[i + 1]]);
        let flags = u16_at(2);
        Ok(Header {
            id: u16_at(0),
            qr: flags & 0x8000 != 0,
            opcode: ((flags >> 11) & 0x0f) as u8,
            aa: flags & 0x0400 != 0,
            tc: flags & 0x0200 != 0,
            rd: flags & 0x0100 != 0,
            ra: flags & 0x0080 != 0,
            rcode: (flags & 0x000f) as u8,
            qdcount: u16_at(4),
            ancount: u16_at(6),
            nscount: u16_at(8),
            arcount: u16_at(10),
        })
    }

    fn write(&self, out: &mut Vec<u8>) {
        let mut flags: u16 = 0;
        if self.qr {
            flags |= 0x8000;
        }
        flags |= (u16::from(self.opcode) & 0x0f) << 11;
        if self.aa {
            flags |= 0x0400;
        }
        if self.tc {
            flags |= 0x0200;
        }
        if self.rd {
            flags |= 0x0100;
        }
        if self.ra {
            flags |= 0x0080;
        }
        flags |= u16::from(self.rcode) & 0x0f;
        for v in [
            self.id,
            flags,
            self.qdcount,
            self.ancount,
            self.nscount,
            self.arcount,
        ] {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    /// Absolute, lower-cased name with a trailing dot.
    pub name: String,
    pub qtype: u16,
    pub qclass: u16,
    /// The question section exactly as received, echoed back in responses.
    raw: Vec<u8>,
}

/// A parsed query: header plus its single question (if well-formed).
#[derive(Debug, Clone)]
pub struct Query {
    pub header: Header,
    pub question: Option<Question>,
}

/// Reads a possibly-compressed name starting at `pos`. Returns the name and
/// the offset just past it in the original (uncompressed) stream.
fn read_name(buf: &[u8], mut pos: usize) -> Result<(String, usize), WireError> {
    let mut labels: Vec<String> = Vec::new();
    let mut end = None;
    let mut hops = 0;
    let mut total = 0usize;
    loop {
        let len = *buf.get(pos).ok_or(WireError::Truncated)? as usize;
        match len & 0xc0 {
            0x00 => {
                if len == 0 {
                    pos += 1;
                    break;
                }
                let label = buf.get(pos + 1..pos + 1 + len).ok_or(WireError::Truncated)?;
                total += len + 1;
                if total > 255 {
                    return Err(WireError::BadName);
                }
                labels.push(String::from_utf8_lossy(label).to_ascii_lowercase());
                pos += 1 + len;
            }
            0xc0 => {
                let lo = *buf.get(pos + 1).ok_or(WireError::Truncated)? as usize;
                if end.is_none() {
                    end = Some(pos + 2);
                }
                hops += 1;
                if hops > MAX_POINTER_HOPS {
                    return Err(WireError::BadName);
                }
                pos = ((len & 0x3f) << 8) | lo;
            }
            _ => return Err(WireError::BadName),
        }
    }
    let mut name = labels.join(".");
    name.push('.');
    Ok((name, end.unwrap_or(pos)))
}

fn write_name(out: &mut Vec<u8>, name: &str) -> Result<(), WireError> {
    for label in name.trim_end_matches('.').split('.').filter(|l| !l.is_empty()) {
        if label.len() > 63 {
            return Err(WireError::BadName);
        }
        out.push(label.len() as u8);
        out.extend_from_slice(label.as_bytes());
    }
    out.push(0);
    Ok(())
}

impl Query {
    /// Parse an incoming message. A header-level failure is an error (the
    /// message is dropped); a bad question yields `question: None` so the
    /// caller can answer FORMERR.
    pub fn parse(buf: &[u8]) -> Result<Query, WireError> {
        let header = Header::parse(buf)?;
        if header.qdcount != 1 {
            return Ok(Query {
                header,
                question: None,
            });
        }
        let question = (|| {
            let (name, pos) = read_name(buf, HEADER_LEN)?;
            let fixed = buf.get(pos..pos + 4).ok_or(WireError::Truncated)?;
            Ok::<_, WireError>(Question {
                name,
                qtype: u16::from_be_bytes([fixed[0], fixed[1]]),
                qclass: u16::from_be_bytes([fixed[2], fixed[3]]),
                raw: buf[HEADER_LEN..pos + 4].to_vec(),
            })
        })()
        .ok();
        Ok(Query { header, question })
    }
}

/// Encode a standard query for `name` (absolute or relative; sent as given).
pub fn encode_query(id: u16, name: &str, qtype: u16, rd: bool) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(64);
    Header {
        id,
        qr: false,
        opcode: 0,
        aa: false,
        tc: false,
        rd,
        ra: false,
        rcode: 0,
        qdcount: 1,
        ancount: 0,
        nscount: 0,
        arcount: 0,
    }
    .write(&mut out);
    write_name(&mut out, name)?;
    out.extend_from_slice(&qtype.to_be_bytes());
    out.extend_from_slice(&CLASS_IN.to_be_bytes());
    Ok(out)
}

/// Encode a response to `query`. A records in `answers` are emitted with a
/// compression pointer to the question name.
pub fn encode_response(query: &Query, rcode: u8, aa: bool, answers: &[(Ipv4Addr, u32)]) -> Vec<u8> {
    let q = query.question.as_ref();
    let mut out = Vec::with_capacity(64 + answers.len() * 16);
    Header {
        id: query.header.id,
        qr: true,
        opcode: query.header.opcode,
        aa,
        tc: false,
        rd: query.header.rd,
        ra: false,
        rcode,
        qdcount: u16::from(q.is_some()),
        ancount: if q.is_some() { answers.len() as u16 } else { 0 },
        nscount: 0,
        arcount: 0,
    }
    .write(&mut out);
    if let Some(q) = q {
        out.extend_from_slice(&q.raw);
        for (addr, ttl) in answers {
            out.extend_from_slice(&[0xc0, HEADER_LEN as u8]);
            out.extend_from_slice(&TYPE_A.to_be_bytes());
            out.extend_from_slice(&CLASS_IN.to_be_bytes());
            out.extend_from_slice(&ttl.to_be_bytes());
            out.extend_from_slice(&4u16.to_be_bytes());
            out.extend_from_slice(&addr.octets());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceRecord {
    pub name: String,
    pub rtype: u16,
    pub class: u16,
    pub ttl: u32,
    pub rdata: Vec<u8>,
}

impl ResourceRecord {
    pub fn a_address(&self) -> Option<Ipv4Addr> {
        (self.rtype == TYPE_A && self.rdata.len() == 4)
            .then(|| Ipv4Addr::new(self.rdata[0], self.rdata[1], self.rdata[2], self.rdata[3]))
    }
}

/// A decoded response, as seen by a client.
#[derive(Debug, Clone)]
pub struct Response {
    pub header: Header,
    pub questions: Vec<(String, u16, u16)>,
    pub answers: Vec<ResourceRecord>,
}

impl Response {
    pub fn parse(buf: &[u8]) -> Result<Response, WireError> {
        let header = Header::parse(buf)?;
        let mut pos = HEADER_LEN;
        let mut questions = Vec::new();
        for _ in 0..header.qdcount {
            let (name, p) = read_name(buf, pos)?;
            let f = buf.get(p..p + 4).ok_or(WireError::Truncated)?;
            questions.push((
                name,
                u16::from_be_bytes([f[0], f[1]]),
                u16::from_be_bytes([f[2], f[3]]),
            ));
            pos = p + 4;
        }
        let mut answers = Vec::new();
        for _ in 0..header.ancount {
            let (name, p) = read_name(buf, pos)?;
            let f = buf.get(p..p + 10).ok_or(WireError::Truncated)?;
            let rdlen = u16::from_be_bytes([f[8], f[9]]) as usize;
            let rdata = buf
                .get(p + 10..p + 10 + rdlen)
                .ok_or(WireError::Truncated)?
                .to_vec();
            answers.push(ResourceRecord {
                name,
                rtype: u16::from_be_bytes([f[0], f[1]]),
                class: u16::from_be_bytes([f[2], f[3]]),
                ttl: u32::from_be_bytes([f[4], f[5], f[6], f[7]]),
                rdata,
            });
            pos = p + 10 + rdlen;
        }
        Ok(Response {
            header,
            questions,
            answers,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // dig-style query for "dbname01.db.supercloud.test." A IN, id 0x1234, RD set.
    const QUERY: &[u8] = &[
        0x12, 0x34, 0x01, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 8, b'd', b'b',
        b'n', b'a', b'm', b'e', b'0', b'1', 2, b'd', b'b', 10, b's', b'u', b'p', b'e', b'r', b'c',
        b'l', b'o', b'u', b'd', 4, b't', b'e', b's', b't', 0, 0x00, 0x01, 0x00, 0x01,
    ];

    #[test]
    fn encode_query_matches_reference_bytes() {
        assert_eq!(
            encode_query(0x1234, "dbname01.db.supercloud.test.", TYPE_A, true).unwrap(),
            QUERY
        );
    }

    #[test]
    fn answer_layout_is_bit_exact() {
        let q = Query::parse(QUERY).unwrap();
        let resp = encode_response(&q, RCODE_NOERROR, true, &[(Ipv4Addr::new(127, 64, 0, 1), 5)]);
        let mut expected = vec![0x12, 0x34, 0x85, 0x00, 0, 1, 0, 1, 0, 0, 0, 0];
        expected.extend_from_slice(&QUERY[12..]);
        expected.extend_from_slice(&[
            0xc0, 0x0c, 0, 1, 0, 1, 0, 0, 0, 5, 0, 4, 127, 64, 0, 1,
        ]);
        assert_eq!(resp, expected);
        let parsed = Response::parse(&resp).unwrap();
        assert_eq!(parsed.answers[0].name, "dbname01.db.supercloud.test.");
        assert_eq!(
            parsed.answers[0].a_address(),
            Some(Ipv4Addr::new(127, 64, 0, 1))
        );
    }

    #[test]
    fn nxdomain_header_bits() {
        let q = Query::parse(QUERY).unwrap();
        let resp = encode_response(&q, RCODE_NXDOMAIN, true, &[]);
        let h = Header::parse(&resp).unwrap();
        assert!(h.qr && h.aa && h.rd && !h.ra && !h.tc);
        assert_eq!((h.rcode, h.qdcount, h.ancount), (3, 1, 0));
    }

    #[test]
    fn question_names_are_lowercased_and_raw_is_echoed() {
        let mut upper = QUERY.to_vec();
        upper[13] = b'D';
        let q = Query::parse(&upper).unwrap();
        assert_eq!(
            q.question.as_ref().unwrap().name,
            "dbname01.db.supercloud.test."
        );
        let resp = encode_response(&q, 0, true, &[]);
        assert_eq!(&resp[12..], &upper[12..]);
    }

    #[test]
    fn malformed_inputs() {
        assert_eq!(Query::parse(&[0; 5]).unwrap_err(), WireError::TooShort);
        // qdcount=1 but truncated name
        let q = Query::parse(&QUERY[..20]).unwrap();
        assert!(q.question.is_none());
        // pointer loop
        let mut looped = QUERY[..12].to_vec();
        looped.extend_from_slice(&[0xc0, 12, 0, 1, 0, 1]);
        assert!(Query::parse(&looped).unwrap().question.is_none());
    }
}
