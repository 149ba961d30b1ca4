use std::fs;
use std::path::{Path, PathBuf};

use cbflab_core::sim::Trajectory;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Written beside every set of output files. Holds nothing that varies
/// between identical invocations.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario: String,
    pub scenario_sha256: String,
    pub mode: Option<String>,
    pub p: Vec<f64>,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
    pub tool_version: String,
}

/// Drops the sign of negative zero so tables read cleanly. Tiny and huge
/// magnitudes use exponent form; both forms round-trip exactly.
pub fn num(v: f64) -> String {
    let v = v + 0.0;
    if v != 0.0 && v.is_finite() && !(1e-4..1e15).contains(&v.abs()) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the serialized configuration.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("config serializes"))
}

/// Built-in scenarios hash their name; documents hash their bytes.
pub fn scenario_hash(name_or_path: &str) -> String {
    match fs::read(name_or_path) {
        Ok(bytes) => sha256_hex(&bytes),
        Err(_) => sha256_hex(name_or_path.as_bytes()),
    }
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<PathBuf, Failure> {
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Failure::io(&path, e))?;
    Ok(path)
}

pub fn trajectory_header(n: usize, m: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("x{i}")));
    cols.extend((1..=m).map(|i| format!("u{i}")));
    cols.extend(["V", "h", "delta", "lambda1", "lambda2", "region"].map(String::from));
    cols
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory, n: usize, m: usize) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::csv(path, e))?;
    w.write_record(trajectory_header(n, m)).map_err(|e| Failure::csv(path, e))?;
    for k in 0..traj.len() {
        let mut row = Vec::with_capacity(n + m + 7);
        row.push(num(traj.times[k]));
        row.extend(traj.states[k].iter().copied().map(num));
        row.extend(traj.inputs[k].iter().copied().map(num));
        for v in [traj.v_values[k], traj.h_values[k], traj.delta[k], traj.lambda1[k], traj.lambda2[k]] {
            row.push(num(v));
        }
        row.push(traj.regions[k].label().to_string());
        w.write_record(&row).map_err(|e| Failure::csv(path, e))?;
    }
    w.flush().map_err(|e| Failure::io(path, e))
}

/// `1`, `0.1`, `10` → `1`, `0.1`, `10`; dots become `_` so names stay portable.
pub fn p_tag(p: f64) -> String {
    format!("p{}", p.to_string().replace('.', "_"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        assert_eq!(
            trajectory_header(2, 1).join(","),
            "t,x1,x2,u1,V,h,delta,lambda1,lambda2,region"
        );
    }

    #[test]
    fn hashes_are_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(scenario_hash("example1"), sha256_hex(b"example1"));
    }

    #[test]
    fn numbers_round_trip() {
        assert_eq!(num(-0.0), "0");
        assert_eq!(num(0.25), "0.25");
        assert_eq!(num(2.7755575615628914e-17), "2.7755575615628914e-17");
        for v in [1e-300, -3.5e-9, 1.5e20, 0.1, 12.02] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn p_tags() {
        assert_eq!(p_tag(0.1), "p0_1");
        assert_eq!(p_tag(100.0), "p100");
    }
}
