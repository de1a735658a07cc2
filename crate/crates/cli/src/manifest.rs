//! Output manifests: FNV-1a content hashes of every data artifact, so a
//! re-run with identical config and seed can be verified byte-for-byte.
//! `summary.txt` is listed nowhere because it carries wall-clock timing.

use std::fs;
use std::path::Path;

use crate::CmdError;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

const EXCLUDED: [&str; 2] = ["manifest.txt", "summary.txt"];

/// Hash every regular file in the directory (sorted by name) into
/// `manifest.txt`.
pub fn write_manifest(dir: &Path) -> Result<(), CmdError> {
    let io = |e: std::io::Error| CmdError::Core(deformreg::Error::io(dir, e));
    let mut names: Vec<String> = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let entry = entry.map_err(io)?;
        if entry.file_type().map_err(io)?.is_file() {
            let name = entry.file_name().to_string_lossy().into_owned();
            if !EXCLUDED.contains(&name.as_str()) {
                names.push(name);
            }
        }
    }
    names.sort();
    let mut text = String::new();
    for name in &names {
        let bytes = fs::read(dir.join(name)).map_err(io)?;
        text.push_str(&format!(
            "{:016x}  {:>12}  {}\n",
            fnv1a64(&bytes),
            bytes.len(),
            name
        ));
    }
    fs::write(dir.join("manifest.txt"), text).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_matches_reference_vectors() {
        // Standard FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }
}
