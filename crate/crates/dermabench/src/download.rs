//! Checksum-verified downloads into the data and weights caches.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::IoContext;
use crate::{Error, Result};

pub const DATA_DIR_VAR: &str = "DERMABENCH_DATA_DIR";
pub const WEIGHTS_DIR_VAR: &str = "DERMABENCH_WEIGHTS_DIR";

/// Dataset cache directory: `$DERMABENCH_DATA_DIR`, else `./data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_VAR).map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

/// Backbone weights cache directory: `$DERMABENCH_WEIGHTS_DIR`, else `./weights`.
pub fn weights_dir() -> PathBuf {
    std::env::var_os(WEIGHTS_DIR_VAR).map_or_else(|| PathBuf::from("weights"), PathBuf::from)
}

/// HTTPS is required, except for loopback hosts (local mirrors and tests).
fn check_scheme(url: &str) -> Result<()> {
    let loopback = ["http://127.0.0.1", "http://localhost", "http://[::1]"];
    if url.starts_with("https://") || loopback.iter().any(|p| url.starts_with(p)) {
        Ok(())
    } else {
        Err(Error::Download(format!("refusing non-HTTPS URL {url}")))
    }
}

/// `base` and `file` joined with exactly one slash.
pub fn join_url(base: &str, file: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), file)
}

fn get(url: &str) -> Result<impl Read> {
    check_scheme(url)?;
    let resp = ureq::get(url).call().map_err(|e| Error::Download(format!("GET {url}: {e}")))?;
    Ok(resp.into_body().into_reader())
}

/// First hex token of a `sha256sum`-style sidecar.
fn parse_sidecar(text: &str) -> Option<String> {
    let token = text.split_whitespace().next()?.to_ascii_lowercase();
    (token.len() == 64 && token.bytes().all(|b| b.is_ascii_hexdigit())).then_some(token)
}

/// Fetches `url` into `dest`. The body's SHA-256 must equal `expected`, or,
/// when none is given, the digest published at `<url>.sha256`. The file
/// only appears at `dest` once verified. Returns the digest.
pub fn download(url: &str, dest: &Path, expected: Option<&str>) -> Result<String> {
    let expected = match expected {
        Some(e) => e.trim().to_ascii_lowercase(),
        None => {
            let sidecar = format!("{url}.sha256");
            let mut text = String::new();
            get(&sidecar)?
                .read_to_string(&mut text)
                .map_err(|e| Error::Download(format!("reading {sidecar}: {e}")))?;
            parse_sidecar(&text)
                .ok_or_else(|| Error::Download(format!("{sidecar} does not hold a SHA-256 digest")))?
        }
    };
    if let Some(dir) = dest.parent() {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    let tmp = dest.with_extension("partial");
    let result = (|| {
        let mut body = get(url)?;
        let mut out = BufWriter::new(File::create(&tmp).at(&tmp)?);
        let mut h = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        loop {
            let n = body
                .read(&mut buf)
                .map_err(|e| Error::Download(format!("reading {url}: {e}")))?;
            if n == 0 {
                break;
            }
            h.update(&buf[..n]);
            out.write_all(&buf[..n]).at(&tmp)?;
        }
        out.flush().at(&tmp)?;
        Ok(hex::encode(h.finalize()))
    })();
    let actual = match result {
        Ok(d) => d,
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            return Err(e);
        }
    };
    if actual != expected {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::Checksum {
            what: url.to_string(),
            expected,
            actual,
        });
    }
    std::fs::rename(&tmp, dest).at(dest)?;
    log::info!("downloaded {url} to {} (sha256 {actual})", dest.display());
    Ok(actual)
}
