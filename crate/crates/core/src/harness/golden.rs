//! Authenticated pre-randomization program images.
//!
//! Manifest layout:
//!
//! ```text
//! CMRG1
//! NAME <name>
//! VERSION <version>
//! DIGEST <sha-256 of the source bytes, lowercase hex>
//! SOURCE
//! <assembly text, verbatim to end of file>
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::isa::{parse_asm, AsmProgram};

use super::HarnessError;

const MAGIC: &str = "CMRG1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldenImage {
    pub name: String,
    pub version: String,
    pub source: String,
    pub digest: [u8; 32],
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

impl GoldenImage {
    /// Seals `source`, recording its digest.
    pub fn new(name: &str, version: &str, source: &str) -> Self {
        GoldenImage { name: name.into(), version: version.into(), source: source.into(), digest: sha256(source.as_bytes()) }
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest)
    }

    /// Recomputes the digest and compares it with the stored one.
    pub fn verify(&self) -> Result<(), HarnessError> {
        let actual = sha256(self.source.as_bytes());
        if actual != self.digest {
            return Err(HarnessError::Authentication { expected: self.digest_hex(), actual: hex::encode(actual) });
        }
        Ok(())
    }

    /// Verifies, then parses the source.
    pub fn program(&self) -> Result<AsmProgram, HarnessError> {
        self.verify()?;
        Ok(parse_asm(&self.source)?)
    }

    pub fn to_manifest(&self) -> String {
        format!(
            "{MAGIC}\nNAME {}\nVERSION {}\nDIGEST {}\nSOURCE\n{}",
            self.name,
            self.version,
            self.digest_hex(),
            self.source
        )
    }

    /// Parses a manifest without checking the digest.
    pub fn parse_manifest(text: &str) -> Result<Self, HarnessError> {
        let bad = |m: &str| HarnessError::Manifest(m.to_string());
        let mut rest = text;
        let mut next = |want: &str| -> Result<String, HarnessError> {
            let (line, tail) = rest.split_once('\n').ok_or_else(|| bad("truncated header"))?;
            rest = tail;
            let line = line.trim_end_matches('\r');
            if want == MAGIC || want == "SOURCE" {
                return if line == want { Ok(String::new()) } else { Err(bad(&format!("expected {want}"))) };
            }
            line.strip_prefix(want)
                .and_then(|v| v.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected {want}")))
        };
        next(MAGIC)?;
        let name = next("NAME")?;
        let version = next("VERSION")?;
        let digest_hex = next("DIGEST")?;
        next("SOURCE")?;
        let mut digest = [0u8; 32];
        hex::decode_to_slice(digest_hex.trim(), &mut digest).map_err(|_| bad("DIGEST is not 64 hex digits"))?;
        Ok(GoldenImage { name, version, source: rest.to_string(), digest })
    }
}

/// Loads and verifies a golden image.
///
/// Manifests are checked against their recorded digest; bare assembly is
/// sealed on load under its file name.
pub fn authenticate(text: &str, fallback_name: &str) -> Result<GoldenImage, HarnessError> {
    let golden = if text.starts_with(MAGIC) {
        GoldenImage::parse_manifest(text)?
    } else {
        GoldenImage::new(fallback_name, "0", text)
    };
    golden.verify()?;
    Ok(golden)
}

pub fn load_golden(path: &Path) -> Result<GoldenImage, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("golden");
    authenticate(&text, name)
}
