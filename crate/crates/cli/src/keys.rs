//! Key files and owner policies.
//!
//! A key file holds one base64 Ed25519 secret key. Its public half is written
//! next to it with a `.pub` suffix. An allow-list file holds one base64 public
//! key per line; blank lines and `#` comments are ignored.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use discovery_core::dead_drop::AuthPolicy;
use ed25519_dalek::{SigningKey, VerifyingKey};

pub fn public_path(secret: &Path) -> PathBuf {
    let mut name = secret.as_os_str().to_owned();
    name.push(".pub");
    PathBuf::from(name)
}

pub fn generate(path: &Path) -> anyhow::Result<VerifyingKey> {
    let key = SigningKey::generate(&mut rand::rngs::OsRng);
    fs::write(path, B64.encode(key.to_bytes()) + "\n").with_context(|| format!("writing {}", path.display()))?;
    let public = key.verifying_key();
    let pub_path = public_path(path);
    fs::write(&pub_path, B64.encode(public.as_bytes()) + "\n")
        .with_context(|| format!("writing {}", pub_path.display()))?;
    Ok(public)
}

fn decode<const N: usize>(text: &str) -> anyhow::Result<[u8; N]> {
    B64.decode(text.trim())?
        .try_into()
        .map_err(|v: Vec<u8>| anyhow!("expected {N} bytes, found {}", v.len()))
}

pub fn load_signing(path: &Path) -> anyhow::Result<SigningKey> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(SigningKey::from_bytes(&decode::<32>(&text).with_context(|| format!("key file {}", path.display()))?))
}

pub fn load_allow_list(path: &Path) -> anyhow::Result<Vec<VerifyingKey>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| (i, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            let bytes = decode::<32>(l).with_context(|| format!("{}:{}", path.display(), i + 1))?;
            VerifyingKey::from_bytes(&bytes).with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}

/// `accept-all`, `deny-all` or `allow-list:<file>`.
#[derive(Debug, Clone)]
pub struct PolicyArg(pub String);

impl FromStr for PolicyArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "accept-all" | "deny-all" => Ok(Self(s.into())),
            _ if s.strip_prefix("allow-list:").is_some_and(|p| !p.is_empty()) => Ok(Self(s.into())),
            _ => Err("expected accept-all, deny-all or allow-list:<file>".into()),
        }
    }
}

impl PolicyArg {
    pub fn load(&self) -> anyhow::Result<AuthPolicy> {
        Ok(match self.0.as_str() {
            "accept-all" => AuthPolicy::AcceptAll,
            "deny-all" => AuthPolicy::DenyAll,
            other => match other.strip_prefix("allow-list:") {
                Some(path) => AuthPolicy::SignatureAllowList(load_allow_list(Path::new(path))?),
                None => bail!("unknown policy {other}"),
            },
        })
    }
}
