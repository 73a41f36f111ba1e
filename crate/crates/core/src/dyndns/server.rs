//! UDP responder and the combined server handle.

use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use tracing::{debug, warn};

use super::wire::{self, Query};
use super::{http, DnsError, DnsTable};

/// Build the wire response for one datagram, or `None` if it should be dropped.
pub fn handle_datagram(table: &DnsTable, buf: &[u8]) -> Option<Vec<u8>> {
    let query = Query::parse(buf).ok()?;
    if query.header.qr {
        return None;
    }
    if query.header.opcode != 0 {
        return Some(wire::encode_response(&query, wire::RCODE_NOTIMP, false, &[]));
    }
    let Some(q) = query.question.as_ref() else {
        return Some(wire::encode_response(&query, wire::RCODE_FORMERR, false, &[]));
    };
    if q.qclass != wire::CLASS_IN && q.qclass != wire::CLASS_ANY {
        return Some(wire::encode_response(&query, wire::RCODE_REFUSED, false, &[]));
    }
    let (rcode, aa, answers) = table.answer(&q.name, q.qtype);
    Some(wire::encode_response(&query, rcode, aa, &answers))
}

fn bind_udp(addr: SocketAddr) -> Result<UdpSocket, DnsError> {
    UdpSocket::bind(addr).map_err(|e| match e.kind() {
        io::ErrorKind::AddrInUse => DnsError::PortInUse(addr),
        _ => DnsError::Io(e),
    })
}

/// Running DNS service: the UDP responder plus the HTTP record API.
pub struct DnsServer {
    table: Arc<DnsTable>,
    udp_addr: SocketAddr,
    http: Option<http::HttpHandle>,
    stop: Arc<AtomicBool>,
    udp_thread: Option<JoinHandle<()>>,
}

impl DnsServer {
    /// Serve `table` on the addresses from its zone configuration.
    pub fn serve(table: Arc<DnsTable>) -> Result<DnsServer, DnsError> {
        let cfg = table.config().clone();
        let mut server = Self::serve_udp(table, cfg.udp_addr)?;
        server.http = Some(http::spawn(server.table.clone(), cfg.http_addr)?);
        Ok(server)
    }

    /// UDP only, for embedding where the HTTP API is not wanted.
    pub fn serve_udp(table: Arc<DnsTable>, addr: SocketAddr) -> Result<DnsServer, DnsError> {
        let socket = bind_udp(addr)?;
        let udp_addr = socket.local_addr()?;
        socket.set_read_timeout(Some(Duration::from_millis(100)))?;
        let stop = Arc::new(AtomicBool::new(false));
        let udp_thread = {
            let table = table.clone();
            let stop = stop.clone();
            std::thread::Builder::new()
                .name("dns-udp".into())
                .spawn(move || udp_loop(socket, &table, &stop))?
        };
        Ok(DnsServer {
            table,
            udp_addr,
            http: None,
            stop,
            udp_thread: Some(udp_thread),
        })
    }

    pub fn udp_addr(&self) -> SocketAddr {
        self.udp_addr
    }

    pub fn http_addr(&self) -> Option<SocketAddr> {
        self.http.as_ref().map(|h| h.addr())
    }

    pub fn table(&self) -> &Arc<DnsTable> {
        &self.table
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.udp_thread.take() {
            let _ = t.join();
        }
        if let Some(h) = self.http.take() {
            h.shutdown();
        }
    }
}

impl Drop for DnsServer {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

fn udp_loop(socket: UdpSocket, table: &DnsTable, stop: &AtomicBool) {
    let mut buf = [0u8; 1500];
    while !stop.load(Ordering::SeqCst) {
        match socket.recv_from(&mut buf) {
            Ok((n, peer)) => {
                if let Some(resp) = handle_datagram(table, &buf[..n]) {
                    if let Err(e) = socket.send_to(&resp, peer) {
                        debug!("dns send to {peer} failed: {e}");
                    }
                }
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(e) => {
                warn!("dns recv error: {e}");
                std::thread::sleep(Duration::from_millis(10));
            }
        }
    }
}
