//! Network text files, binary datasets, and atomic writes.
//!
//! Network files are line based:
//!
//! ```text
//! threshnet-network 1
//! n 3
//! d 2
//! weights unit
//! activation kind=sign-threshold t=2 rho=1 power=2 cap=25
//! seed 7
//! row 1 0 0
//! row 0 1 0
//! constant 0
//! term 0:1 1
//! term 0:1,1:1 0.5
//! ```
//!
//! Reals are written with the shortest representation that parses back to
//! the same `f64`. Datasets are a 40-byte little-endian header
//! `magic "TNDS", version u32, n u64, count u64, seed u64, scale f64`
//! (`scale` is NaN unless labels were drawn with a biased oracle) followed
//! by `count` records of `n + 1` reals, `x` then `y`.

use crate::activation::{ActivationKind, ActivationSpec};
use crate::error::{Error, Result};
use crate::network_model::{Dataset, LabelWeight, PlantedNetwork, WeightKind};
use crate::polynomial::{Monomial, SparsePolynomial};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

const NET_MAGIC: &str = "threshnet-network 1";
const DATA_MAGIC: &[u8; 4] = b"TNDS";
const DATA_VERSION: u32 = 1;
const HEADER_LEN: usize = 40;

fn fmt_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("line {line}: {msg}"))
}

pub fn network_to_text(net: &PlantedNetwork) -> String {
    let a = net.activation();
    let mut s = String::new();
    let _ = writeln!(s, "{NET_MAGIC}");
    let _ = writeln!(s, "n {}", net.n());
    let _ = writeln!(s, "d {}", net.d());
    let kind = match net.weight_kind() {
        WeightKind::Unit => "unit",
        WeightKind::Binary => "binary",
    };
    let _ = writeln!(s, "weights {kind}");
    let _ = writeln!(s, "activation kind={} t={} rho={} power={} cap={}", a.kind.name(), a.t, a.rho, a.power, a.cap);
    match net.seed() {
        Some(v) => {
            let _ = writeln!(s, "seed {v}");
        }
        None => s.push_str("seed none\n"),
    }
    for i in 0..net.d() {
        s.push_str("row");
        for v in net.row(i) {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    let p = net.poly();
    let _ = writeln!(s, "constant {}", p.constant());
    for (m, c) in p.terms() {
        let vars: Vec<String> = m.pairs().iter().map(|(v, e)| format!("{v}:{e}")).collect();
        let _ = writeln!(s, "term {} {c}", vars.join(","));
    }
    s
}

fn real(line: usize, v: &str) -> Result<f64> {
    v.parse::<f64>().map_err(|_| fmt_err(line, format!("`{v}` is not a number")))
}

fn count(line: usize, v: &str) -> Result<usize> {
    v.parse::<usize>().map_err(|_| fmt_err(line, format!("`{v}` is not a count")))
}

pub fn network_from_text(text: &str) -> Result<PlantedNetwork> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, l)) if l == NET_MAGIC => {}
        _ => return Err(Error::Format(format!("missing `{NET_MAGIC}` header"))),
    }
    let (mut n, mut d, mut kind, mut act, mut seed) = (None, None, None, None, None);
    let mut rows = Vec::new();
    let mut constant = 0.0;
    let mut terms = Vec::new();
    for (no, l) in lines {
        let (key, rest) = l.split_once(char::is_whitespace).unwrap_or((l, ""));
        let rest = rest.trim();
        match key {
            "n" => n = Some(count(no, rest)?),
            "d" => d = Some(count(no, rest)?),
            "weights" => {
                kind = Some(match rest {
                    "unit" => WeightKind::Unit,
                    "binary" => WeightKind::Binary,
                    _ => return Err(fmt_err(no, format!("unknown weight kind `{rest}`"))),
                })
            }
            "activation" => {
                let mut spec = ActivationSpec { kind: ActivationKind::SignThreshold, t: 0.0, rho: 1.0, power: 2, cap: 25.0 };
                let mut has_kind = false;
                for kv in rest.split_whitespace() {
                    let (k, v) = kv.split_once('=').ok_or_else(|| fmt_err(no, format!("expected key=value, got `{kv}`")))?;
                    match k {
                        "kind" => {
                            spec.kind = ActivationKind::parse(v).map_err(|e| fmt_err(no, e))?;
                            has_kind = true;
                        }
                        "t" => spec.t = real(no, v)?,
                        "rho" => spec.rho = real(no, v)?,
                        "power" => spec.power = count(no, v)? as u32,
                        "cap" => spec.cap = real(no, v)?,
                        _ => return Err(fmt_err(no, format!("unknown activation field `{k}`"))),
                    }
                }
                if !has_kind {
                    return Err(fmt_err(no, "activation needs a kind"));
                }
                act = Some(spec);
            }
            "seed" => seed = Some(if rest == "none" { None } else { Some(rest.parse::<u64>().map_err(|_| fmt_err(no, "bad seed"))?) }),
            "row" => rows.push(rest.split_whitespace().map(|v| real(no, v)).collect::<Result<Vec<_>>>()?),
            "constant" => constant = real(no, rest)?,
            "term" => {
                let (vars, c) = rest.split_once(char::is_whitespace).ok_or_else(|| fmt_err(no, "term needs variables and a coefficient"))?;
                let mut pairs = Vec::new();
                for ve in vars.split(',') {
                    let (v, e) = ve.split_once(':').ok_or_else(|| fmt_err(no, format!("expected index:exponent, got `{ve}`")))?;
                    pairs.push((count(no, v)?, count(no, e)? as u32));
                }
                terms.push((Monomial::new(&pairs), real(no, c.trim())?));
            }
            _ => return Err(fmt_err(no, format!("unknown field `{key}`"))),
        }
    }
    let missing = |what: &str| Error::Format(format!("network file lacks `{what}`"));
    let (n, d) = (n.ok_or_else(|| missing("n"))?, d.ok_or_else(|| missing("d"))?);
    if rows.len() != d || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Format(format!("expected {d} rows of length {n}")));
    }
    let poly = SparsePolynomial::from_terms(d, constant, terms)?;
    PlantedNetwork::new(rows, kind.ok_or_else(|| missing("weights"))?, act.ok_or_else(|| missing("activation"))?, poly, seed.ok_or_else(|| missing("seed"))?)
}

pub fn dataset_to_bytes(data: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (data.xs.len() + data.ys.len()));
    out.extend_from_slice(DATA_MAGIC);
    out.extend_from_slice(&DATA_VERSION.to_le_bytes());
    out.extend_from_slice(&(data.n as u64).to_le_bytes());
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    out.extend_from_slice(&data.seed.to_le_bytes());
    let scale = match data.weight {
        LabelWeight::Value => f64::NAN,
        LabelWeight::Biased { scale } => scale,
    };
    out.extend_from_slice(&scale.to_le_bytes());
    for j in 0..data.len() {
        for v in data.x(j) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&data.ys[j].to_le_bytes());
    }
    out
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != DATA_MAGIC {
        return Err(Error::Format("not a dataset file".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    if u32_at(4) != DATA_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {}", u32_at(4))));
    }
    let (n, m, seed, scale) = (u64_at(8) as usize, u64_at(16) as usize, u64_at(24), f64_at(32));
    let want = n.checked_add(1).and_then(|r| r.checked_mul(m)).and_then(|v| v.checked_mul(8)).and_then(|v| v.checked_add(HEADER_LEN));
    if want != Some(bytes.len()) {
        return Err(Error::Format(format!("dataset holds {} bytes, header promises {m} records of dimension {n}", bytes.len())));
    }
    let mut xs = Vec::with_capacity(n * m);
    let mut ys = Vec::with_capacity(m);
    for (k, chunk) in bytes[HEADER_LEN..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if k % (n + 1) == n {
            ys.push(v);
        } else {
            xs.push(v);
        }
    }
    let mut data = Dataset::new(n, xs, ys, seed)?;
    if !scale.is_nan() {
        data.weight = LabelWeight::Biased { scale };
    }
    Ok(data)
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::InvalidArgument(format!("`{}` is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_network(path: &Path, net: &PlantedNetwork) -> Result<()> {
    write_atomic(path, network_to_text(net).as_bytes())
}

pub fn load_network(path: &Path) -> Result<PlantedNetwork> {
    network_from_text(&std::fs::read_to_string(path)?)
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    write_atomic(path, &dataset_to_bytes(data))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network_model::{SampleOracle, SamplingMode};
    use crate::stats_core::RngSeed;

    fn net() -> PlantedNetwork {
        let p = SparsePolynomial::linear_plus_pairs(3, 0.1 + 0.2);
        PlantedNetwork::orthonormal(4, 3, ActivationSpec::sign(1.7).unwrap(), p, RngSeed(9)).unwrap()
    }

    #[test]
    fn network_round_trip_is_exact() {
        let a = net();
        let text = network_to_text(&a);
        assert!(text.starts_with("threshnet-network 1\nn 4\nd 3\nweights unit\n"));
        assert_eq!(network_from_text(&text).unwrap(), a);
        let b = PlantedNetwork::binary_supports(5, &[vec![0, 1], vec![3]], ActivationSpec::exp_rate(0.2, 1.0).unwrap(), SparsePolynomial::linear(2), None).unwrap();
        assert_eq!(network_from_text(&network_to_text(&b)).unwrap(), b);
    }

    #[test]
    fn network_errors_name_the_line() {
        let text = network_to_text(&net()).replace("weights unit", "weights fuzzy");
        let e = network_from_text(&text).unwrap_err().to_string();
        assert!(e.contains("line 4") && e.contains("fuzzy"), "{e}");
        assert!(network_from_text("n 3").is_err());
        let short = network_to_text(&net()).lines().filter(|l| !l.starts_with("row")).collect::<Vec<_>>().join("\n");
        assert!(matches!(network_from_text(&short), Err(Error::Format(_))));
    }

    #[test]
    fn dataset_round_trip() {
        let o = SampleOracle::new(net());
        let d = o.sample_batch(&SamplingMode::Plain, 100, RngSeed(2)).unwrap();
        let bytes = dataset_to_bytes(&d);
        assert_eq!(bytes.len(), 40 + 100 * 5 * 8);
        assert_eq!(dataset_from_bytes(&bytes).unwrap(), d);
        let b = o.sample_batch(&SamplingMode::Biased { f_max: None }, 10, RngSeed(3)).unwrap();
        assert_eq!(dataset_from_bytes(&dataset_to_bytes(&b)).unwrap(), b);
        assert!(dataset_from_bytes(&bytes[..bytes.len() - 8]).is_err());
        assert!(dataset_from_bytes(b"nope").is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/net.txt");
        save_network(&p, &net()).unwrap();
        save_network(&p, &net()).unwrap();
        assert_eq!(load_network(&p).unwrap(), net());
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
