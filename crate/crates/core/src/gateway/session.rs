//! Signed session tokens: `<base64url(user:expiry)>.<hex hmac-sha256>`.
//! The token names only the user; groups and admin are looked up per request.

use std::io;
use std::path::Path;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use hmac::{Hmac, KeyInit, Mac};
use rand::RngCore;
use sha2::Sha256;

use crate::fsutil;

pub const TOKEN_TTL_SECS: i64 = 12 * 3600;

#[derive(Clone)]
pub struct SessionKey([u8; 32]);

impl SessionKey {
    pub fn generate() -> Self {
        let mut k = [0u8; 32];
        rand::rng().fill_bytes(&mut k);
        SessionKey(k)
    }

    /// Reuse the key in `path` so tokens survive a restart, creating it (0600) if absent.
    pub fn load_or_create(path: &Path) -> io::Result<Self> {
        if let Ok(s) = std::fs::read_to_string(path) {
            if let Ok(b) = hex::decode(s.trim()) {
                if let Ok(k) = <[u8; 32]>::try_from(b.as_slice()) {
                    return Ok(SessionKey(k));
                }
            }
        }
        let k = Self::generate();
        if let Some(d) = path.parent() {
            std::fs::create_dir_all(d)?;
        }
        std::fs::write(path, hex::encode(k.0))?;
        fsutil::set_mode(path, 0o600)?;
        Ok(k)
    }

    fn mac(&self, payload: &str) -> Hmac<Sha256> {
        let mut m = <Hmac<Sha256> as KeyInit>::new_from_slice(&self.0).expect("any key length");
        m.update(payload.as_bytes());
        m
    }

    pub fn mint(&self, user: &str, now: i64) -> String {
        let payload = URL_SAFE_NO_PAD.encode(format!("{user}:{}", now + TOKEN_TTL_SECS));
        let sig = hex::encode(self.mac(&payload).finalize().into_bytes());
        format!("{payload}.{sig}")
    }

    /// The user a token was minted for, if the signature holds and it has not expired.
    pub fn verify(&self, token: &str, now: i64) -> Option<String> {
        let (payload, sig) = token.split_once('.')?;
        let sig = hex::decode(sig).ok()?;
        self.mac(payload).verify_slice(&sig).ok()?;
        let raw = String::from_utf8(URL_SAFE_NO_PAD.decode(payload).ok()?).ok()?;
        let (user, exp) = raw.rsplit_once(':')?;
        (exp.parse::<i64>().ok()? > now).then(|| user.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mint_verify_tamper_expire() {
        let k = SessionKey::generate();
        let t = k.mint("alice", 1000);
        assert_eq!(k.verify(&t, 1000).as_deref(), Some("alice"));
        assert_eq!(k.verify(&t, 1000 + TOKEN_TTL_SECS), None);
        assert_eq!(SessionKey::generate().verify(&t, 1000), None);

        let (_, sig) = t.split_once('.').unwrap();
        let forged = format!("{}.{sig}", URL_SAFE_NO_PAD.encode(format!("root:{}", 1000 + TOKEN_TTL_SECS)));
        assert_eq!(k.verify(&forged, 1000), None);
        assert_eq!(k.verify("garbage", 1000), None);
    }

    #[test]
    fn key_persists() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("gw/session.key");
        let a = SessionKey::load_or_create(&p).unwrap();
        let b = SessionKey::load_or_create(&p).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(fsutil::mode_of(&p).unwrap(), 0o600);
    }
}
