//! Line protocol spoken by the toy daemons.
//!
//! One UTF-8 command per line. Replies are `OK [payload]` or `ERR <code>`.
//! `PUT` takes the rest of the line as the value, so values may contain
//! spaces but not newlines.

pub const MAX_KEY: usize = 1024;
pub const MAX_VALUE: usize = 64 * 1024;
pub const MAX_LINE: usize = MAX_KEY + MAX_VALUE + 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Ping,
    Auth { user: String, secret: String },
    SetPass { user: String, secret: String },
    Put { key: String, value: String },
    Get { key: String },
    /// Worker announcing itself to the coordinator.
    Join { index: u32, secret: String },
    /// Coordinator authenticating to a worker.
    Peer { secret: String },
    Stats,
}

pub mod codes {
    pub const AUTH_FAILED: &str = "AuthFailed";
    pub const NOT_AUTHENTICATED: &str = "NotAuthenticated";
    pub const NOT_AUTHORIZED: &str = "NotAuthorized";
    pub const KEY_NOT_FOUND: &str = "KeyNotFound";
    pub const AUTH_MISMATCH: &str = "AuthMismatch";
    pub const TOO_LARGE: &str = "TooLarge";
    pub const BAD_REQUEST: &str = "BadRequest";
    pub const UNAVAILABLE: &str = "Unavailable";
}

fn two(rest: &str) -> Option<(String, String)> {
    let mut it = rest.splitn(2, ' ');
    let a = it.next()?.to_string();
    let b = it.next()?.to_string();
    if a.is_empty() || b.is_empty() || b.contains(' ') {
        return None;
    }
    Some((a, b))
}

impl Request {
    pub fn parse(line: &str) -> Result<Request, &'static str> {
        let line = line.strip_suffix('\n').unwrap_or(line);
        let line = line.strip_suffix('\r').unwrap_or(line);
        let (cmd, rest) = line.split_once(' ').unwrap_or((line, ""));
        let bad = codes::BAD_REQUEST;
        match cmd {
            "PING" if rest.is_empty() => Ok(Request::Ping),
            "STATS" if rest.is_empty() => Ok(Request::Stats),
            "AUTH" => two(rest)
                .map(|(user, secret)| Request::Auth { user, secret })
                .ok_or(bad),
            "SETPASS" => two(rest)
                .map(|(user, secret)| Request::SetPass { user, secret })
                .ok_or(bad),
            "JOIN" => {
                let (i, secret) = two(rest).ok_or(bad)?;
                let index = i.parse().map_err(|_| bad)?;
                Ok(Request::Join { index, secret })
            }
            "PEER" if !rest.is_empty() && !rest.contains(' ') => Ok(Request::Peer {
                secret: rest.to_string(),
            }),
            "GET" if !rest.is_empty() && !rest.contains(' ') => {
                if rest.len() > MAX_KEY {
                    return Err(codes::TOO_LARGE);
                }
                Ok(Request::Get { key: rest.to_string() })
            }
            "PUT" => {
                let (key, value) = rest.split_once(' ').ok_or(bad)?;
                if key.is_empty() {
                    return Err(bad);
                }
                if key.len() > MAX_KEY || value.len() > MAX_VALUE {
                    return Err(codes::TOO_LARGE);
                }
                Ok(Request::Put {
                    key: key.to_string(),
                    value: value.to_string(),
                })
            }
            _ => Err(bad),
        }
    }

    pub fn to_line(&self) -> String {
        match self {
            Request::Ping => "PING\n".into(),
            Request::Stats => "STATS\n".into(),
            Request::Auth { user, secret } => format!("AUTH {user} {secret}\n"),
            Request::SetPass { user, secret } => format!("SETPASS {user} {secret}\n"),
            Request::Put { key, value } => format!("PUT {key} {value}\n"),
            Request::Get { key } => format!("GET {key}\n"),
            Request::Join { index, secret } => format!("JOIN {index} {secret}\n"),
            Request::Peer { secret } => format!("PEER {secret}\n"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Ok(String),
    Err(String),
}

impl Reply {
    pub fn ok() -> Reply {
        Reply::Ok(String::new())
    }

    pub fn err(code: &str) -> Reply {
        Reply::Err(code.to_string())
    }

    pub fn parse(line: &str) -> Reply {
        let line = line.trim_end_matches(['\r', '\n']);
        if line == "OK" {
            Reply::Ok(String::new())
        } else if let Some(p) = line.strip_prefix("OK ") {
            Reply::Ok(p.to_string())
        } else if let Some(c) = line.strip_prefix("ERR ") {
            Reply::Err(c.to_string())
        } else {
            Reply::Err(codes::BAD_REQUEST.to_string())
        }
    }

    pub fn to_line(&self) -> String {
        match self {
            Reply::Ok(p) if p.is_empty() => "OK\n".into(),
            Reply::Ok(p) => format!("OK {p}\n"),
            Reply::Err(c) => format!("ERR {c}\n"),
        }
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Worker that owns `key` in an `n`-worker database.
pub fn partition_of(key: &str, n: u32) -> u32 {
    (fnv1a(key.as_bytes()) % n as u64) as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn parse_cases() {
        assert_eq!(Request::parse("PING").unwrap(), Request::Ping);
        assert_eq!(
            Request::parse("PUT k hello world\n").unwrap(),
            Request::Put { key: "k".into(), value: "hello world".into() }
        );
        assert_eq!(Request::parse("AUTH a b c"), Err(codes::BAD_REQUEST));
        assert_eq!(Request::parse("GET"), Err(codes::BAD_REQUEST));
        assert_eq!(Request::parse("JOIN x s"), Err(codes::BAD_REQUEST));
        let big = format!("PUT {} v", "k".repeat(MAX_KEY + 1));
        assert_eq!(Request::parse(&big), Err(codes::TOO_LARGE));
        let big = format!("PUT k {}", "v".repeat(MAX_VALUE + 1));
        assert_eq!(Request::parse(&big), Err(codes::TOO_LARGE));
        assert_eq!(Reply::parse("OK"), Reply::ok());
        assert_eq!(Reply::parse("ERR KeyNotFound\n"), Reply::err(codes::KEY_NOT_FOUND));
    }

    proptest! {
        #[test]
        fn request_round_trip(key in "[a-zA-Z0-9_.:-]{1,40}", value in "[ -~]{0,80}", i in 0u32..100) {
            for r in [
                Request::Put { key: key.clone(), value: value.clone() },
                Request::Get { key: key.clone() },
                Request::Auth { user: key.clone(), secret: key.clone() },
                Request::Join { index: i, secret: key.clone() },
                Request::Peer { secret: key.clone() },
            ] {
                prop_assert_eq!(Request::parse(&r.to_line()).unwrap(), r);
            }
        }
    }
}
