use std::io;
use std::net::{Ipv4Addr, SocketAddr, UdpSocket};
use std::time::Duration;

use rand::Rng;

use super::wire::{self, Response};

/// Minimal stub resolver that asks one server directly over UDP.
#[derive(Debug, Clone)]
pub struct DnsClient {
    server: SocketAddr,
    timeout: Duration,
    attempts: u32,
}

impl DnsClient {
    pub fn new(server: SocketAddr) -> Self {
        DnsClient {
            server,
            timeout: Duration::from_millis(500),
            attempts: 4,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn server(&self) -> SocketAddr {
        self.server
    }

    pub fn query(&self, name: &str, qtype: u16) -> io::Result<Response> {
        let bind: SocketAddr = if self.server.is_ipv4() {
            "0.0.0.0:0".parse().unwrap()
        } else {
            "[::]:0".parse().unwrap()
        };
        let socket = UdpSocket::bind(bind)?;
        socket.set_read_timeout(Some(self.timeout))?;
        let id: u16 = rand::rng().random();
        let msg = wire::encode_query(id, name, qtype, true)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        let mut buf = [0u8; 1500];
        let mut last_err = io::Error::new(io::ErrorKind::TimedOut, "no response");
        for _ in 0..self.attempts {
            socket.send_to(&msg, self.server)?;
            loop {
                match socket.recv_from(&mut buf) {
                    Ok((n, from)) if from == self.server => {
                        let resp = Response::parse(&buf[..n])
                            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
                        if resp.header.id == id && resp.header.qr {
                            return Ok(resp);
                        }
                    }
                    Ok(_) => {}
                    Err(e) => {
                        last_err = e;
                        break;
                    }
                }
            }
        }
        Err(last_err)
    }

    /// A lookup: `Ok(None)` for NXDOMAIN/NODATA, an error for refusals and transport failures.
    pub fn resolve_a(&self, fqdn: &str) -> io::Result<Option<Ipv4Addr>> {
        let resp = self.query(fqdn, wire::TYPE_A)?;
        match resp.header.rcode {
            wire::RCODE_NOERROR => Ok(resp.answers.iter().find_map(|a| a.a_address())),
            wire::RCODE_NXDOMAIN => Ok(None),
            rcode => Err(io::Error::other(format!("dns rcode {rcode} for {fqdn}"))),
        }
    }
}
