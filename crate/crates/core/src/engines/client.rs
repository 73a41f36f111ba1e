use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

use super::protocol::{codes, Reply, Request};
use super::{EngineError, Role};
use crate::dyndns::client::DnsClient;
use crate::security::{PasswordSetter, SecurityError, SuperuserCredential};

const TIMEOUT: Duration = Duration::from_secs(15);

/// Blocking client for a toy engine front end (or any daemon, for `PING`).
pub struct EngineClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

fn map_err(code: &str) -> EngineError {
    match code {
        codes::AUTH_FAILED => EngineError::AuthFailed,
        codes::NOT_AUTHENTICATED => EngineError::NotAuthenticated,
        codes::KEY_NOT_FOUND => EngineError::KeyNotFound,
        codes::AUTH_MISMATCH => EngineError::AuthMismatch,
        other => EngineError::Remote(other.to_string()),
    }
}

impl EngineClient {
    pub fn connect(addr: SocketAddr) -> io::Result<EngineClient> {
        let s = TcpStream::connect_timeout(&addr, TIMEOUT)?;
        s.set_read_timeout(Some(TIMEOUT))?;
        s.set_write_timeout(Some(TIMEOUT))?;
        s.set_nodelay(true)?;
        Ok(EngineClient {
            reader: BufReader::new(s.try_clone()?),
            writer: s,
        })
    }

    /// Connect to the database front end by its DNS name.
    pub fn connect_name(dns: &DnsClient, fqdn: &str) -> io::Result<EngineClient> {
        let ip = dns
            .resolve_a(fqdn)?
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("{fqdn} does not resolve")))?;
        Self::connect(SocketAddr::from((ip, Role::Coordinator.port())))
    }

    fn call(&mut self, req: Request) -> Result<String, EngineError> {
        self.writer.write_all(req.to_line().as_bytes())?;
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into());
        }
        match Reply::parse(&line) {
            Reply::Ok(p) => Ok(p),
            Reply::Err(c) => Err(map_err(&c)),
        }
    }

    pub fn ping(&mut self) -> Result<(), EngineError> {
        self.call(Request::Ping).map(|_| ())
    }

    pub fn authenticate(&mut self, user: &str, secret: &str) -> Result<(), EngineError> {
        self.call(Request::Auth {
            user: user.into(),
            secret: secret.into(),
        })
        .map(|_| ())
    }

    pub fn set_password(&mut self, user: &str, secret: &str) -> Result<(), EngineError> {
        self.call(Request::SetPass {
            user: user.into(),
            secret: secret.into(),
        })
        .map(|_| ())
    }

    pub fn put(&mut self, key: &str, value: &str) -> Result<(), EngineError> {
        self.call(Request::Put {
            key: key.into(),
            value: value.into(),
        })
        .map(|_| ())
    }

    pub fn get(&mut self, key: &str) -> Result<String, EngineError> {
        self.call(Request::Get { key: key.into() })
    }

    /// Pair counts per worker, in worker order.
    pub fn stats(&mut self) -> Result<Vec<u64>, EngineError> {
        let p = self.call(Request::Stats)?;
        p.split_whitespace()
            .map(|c| c.parse().map_err(|_| EngineError::Remote(codes::BAD_REQUEST.into())))
            .collect()
    }
}

/// Sets passwords on a running engine through its superuser account.
pub struct EnginePasswordSetter {
    pub addr: SocketAddr,
}

impl PasswordSetter for EnginePasswordSetter {
    fn set_user_password(
        &self,
        superuser: &SuperuserCredential,
        user: &str,
        password: &str,
    ) -> Result<(), SecurityError> {
        let mut c = EngineClient::connect(self.addr)
            .map_err(|e| SecurityError::EngineUnreachable(e.to_string()))?;
        c.authenticate(&superuser.username, &superuser.value)
            .map_err(|e| match e {
                EngineError::AuthFailed => SecurityError::SuperuserAuthFailed,
                e => SecurityError::EngineUnreachable(e.to_string()),
            })?;
        c.set_password(user, password)
            .map_err(|e| SecurityError::EngineUnreachable(e.to_string()))
    }
}
