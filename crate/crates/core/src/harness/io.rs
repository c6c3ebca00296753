//! Chain, draw, coreset, worker and fitted-state files.
//!
//! Every run writes into a [`Staging`] directory next to the output
//! directory; files are renamed into place only by [`Staging::commit`], so a
//! failed run leaves nothing behind.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

use super::config::{BuiltModel, ModelSpec};
use crate::coreset::CoresetWeights;
use crate::distributed::{SubsetMode, WorkerDraws};
use crate::error::{Error, Result};
use crate::mcmc::StepRecord;
use crate::varinf::{Factor, MeanFieldState};

pub struct Staging {
    out: PathBuf,
    tmp: TempDir,
    files: Vec<String>,
}

impl Staging {
    pub fn new(out: impl AsRef<Path>) -> Result<Self> {
        let out = out.as_ref().to_path_buf();
        let parent = match out.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent)?;
        let tmp = tempfile::Builder::new().prefix(".bayescomp-staging-").tempdir_in(&parent)?;
        Ok(Staging {
            out,
            tmp,
            files: Vec::new(),
        })
    }

    /// A buffered writer for `name` inside the staging area.
    pub fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        if name.contains('/') || name.contains('\\') || name.starts_with('.') {
            return Err(Error::input(format!("invalid output file name {name:?}")));
        }
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(BufWriter::new(File::create(self.tmp.path().join(name))?))
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let mut w = self.create(name)?;
        w.write_all(bytes)?;
        w.flush()?;
        Ok(())
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    /// Moves every staged file into the output directory.
    pub fn commit(self) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(&self.out)?;
        let mut moved = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let dest = self.out.join(name);
            fs::rename(self.tmp.path().join(name), &dest)?;
            moved.push(dest);
        }
        Ok(moved)
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_chain_jsonl(records: &[StepRecord], mut out: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_chain_jsonl(input: impl Read) -> Result<Vec<StepRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StepRecord = serde_json::from_str(&line)
            .map_err(|e| Error::input(format!("chain line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_chain_file(path: impl AsRef<Path>) -> Result<Vec<StepRecord>> {
    read_chain_jsonl(File::open(path)?)
}

/// Draw matrix with header `x0, x1, …`.
pub fn write_draws_csv(draws: &[Vec<f64>], out: impl Write) -> Result<()> {
    let dim = draws.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(out);
    w.write_record((0..dim).map(|j| format!("x{j}")))?;
    for row in draws {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_draws_csv(input: impl Read) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| Error::input(format!("cannot parse {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(row);
    }
    Ok(out)
}

/// Hex SHA-256 of the model spec and the loaded observations.
pub fn model_hash(spec: &ModelSpec, model: &BuiltModel) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(spec)?);
    for v in model.data_words() {
        h.update(v.to_le_bytes());
    }
    Ok(hex::encode(&h.finalize()[..16]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoresetFile {
    pub n: usize,
    pub m: usize,
    pub model_hash: String,
    pub weights: CoresetWeights,
}

/// `# N=… M=… model_hash=…` followed by `index,weight` rows for the support.
pub fn write_coreset_csv(weights: &CoresetWeights, model_hash: &str, mut out: impl Write) -> Result<()> {
    writeln!(out, "# N={} M={} model_hash={}", weights.n(), weights.size(), model_hash)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "weight"])?;
    for i in weights.support() {
        w.write_record([i.to_string(), weights.weights()[i].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_coreset_csv(input: impl Read) -> Result<CoresetFile> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let header = first
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::input("coreset file must start with a '# N=… M=… model_hash=…' line"))?;
    let (mut n, mut m, mut hash) = (None, None, None);
    for part in header.split_whitespace() {
        match part.split_once('=') {
            Some(("N", v)) => n = v.parse::<usize>().ok(),
            Some(("M", v)) => m = v.parse::<usize>().ok(),
            Some(("model_hash", v)) => hash = Some(v.to_string()),
            _ => return Err(Error::input(format!("unexpected coreset header field {part:?}"))),
        }
    }
    let (n, m, model_hash) = match (n, m, hash) {
        (Some(n), Some(m), Some(h)) => (n, m, h),
        _ => return Err(Error::input("coreset header needs N, M and model_hash")),
    };
    let mut w = vec![0.0; n];
    let mut r = csv::Reader::from_reader(reader);
    for rec in r.records() {
        let rec = rec?;
        let i: usize = rec[0].parse().map_err(|_| Error::input(format!("bad index {:?}", &rec[0])))?;
        let v: f64 = rec[1].parse().map_err(|_| Error::input(format!("bad weight {:?}", &rec[1])))?;
        if i >= n {
            return Err(Error::input(format!("index {i} out of range for N={n}")));
        }
        w[i] = v;
    }
    let weights = CoresetWeights::new(w)?;
    if weights.size() != m {
        return Err(Error::input(format!("header says M={m}, file has {} points", weights.size())));
    }
    Ok(CoresetFile {
        n,
        m,
        model_hash,
        weights,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerManifest {
    pub k: usize,
    pub t: usize,
    pub dim: usize,
    pub mode: SubsetMode,
    pub seeds: Vec<u64>,
    pub files: Vec<String>,
}

/// One `subset_<j>.csv` per worker plus `manifest.json`.
pub fn stage_worker_draws(stage: &mut Staging, draws: &WorkerDraws) -> Result<WorkerManifest> {
    let mut files = Vec::with_capacity(draws.k());
    for (j, d) in draws.draws.iter().enumerate() {
        let name = format!("subset_{j}.csv");
        write_draws_csv(d, stage.create(&name)?)?;
        files.push(name);
    }
    let manifest = WorkerManifest {
        k: draws.k(),
        t: draws.t(),
        dim: draws.dim(),
        mode: draws.mode,
        seeds: draws.seeds.clone(),
        files,
    };
    stage.write("manifest.json", &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_worker_draws(dir: impl AsRef<Path>) -> Result<WorkerDraws> {
    let dir = dir.as_ref();
    let manifest: WorkerManifest = serde_json::from_reader(File::open(dir.join("manifest.json"))?)?;
    let draws = manifest
        .files
        .iter()
        .map(|f| read_draws_csv(File::open(dir.join(f))?))
        .collect::<Result<Vec<_>>>()?;
    let out = WorkerDraws::new(draws, manifest.seeds.clone(), manifest.mode)?;
    if out.k() != manifest.k || out.t() != manifest.t || out.dim() != manifest.dim {
        return Err(Error::input("worker files disagree with the manifest"));
    }
    Ok(out)
}

/// Rows `factor,family,eta1,eta2` with natural parameters.
pub fn write_fitted_state_csv(state: &MeanFieldState, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["factor", "family", "eta1", "eta2"])?;
    for (j, f) in state.factors.iter().enumerate() {
        let eta = f.natural();
        w.write_record([j.to_string(), f.family().to_string(), eta[0].to_string(), eta[1].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_fitted_state_csv(input: impl Read) -> Result<MeanFieldState> {
    let mut r = csv::Reader::from_reader(input);
    let mut factors = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::input(format!("cannot parse {s:?}")));
        let eta = [parse(&rec[2])?, parse(&rec[3])?];
        let template = match &rec[1] {
            "gaussian" => Factor::Gaussian { mean: 0.0, var: 1.0 },
            "gamma" => Factor::Gamma { shape: 1.0, rate: 1.0 },
            other => return Err(Error::input(format!("unknown factor family {other:?}"))),
        };
        factors.push(template.with_natural(eta));
    }
    MeanFieldState::new(factors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_roundtrip() {
        let recs = vec![
            StepRecord {
                step: 1,
                x: vec![0.5, -1.25],
                accept: true,
                log_alpha: -0.3,
                divergent: false,
            },
            StepRecord {
                step: 2,
                x: vec![0.5, -1.25],
                accept: false,
                log_alpha: -7.0,
                divergent: true,
            },
        ];
        let mut buf = Vec::new();
        write_chain_jsonl(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().contains("\"log_alpha\""));
        assert_eq!(read_chain_jsonl(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn chain_floats_roundtrip_bit_exactly() {
        let mut r = crate::rng::seeded(3);
        let recs: Vec<StepRecord> = (0..500)
            .map(|i| StepRecord {
                step: i,
                x: crate::rng::normal_vec(&mut r, 3).iter().map(|v| v * 1e3_f64.powi((i % 7) as i32 - 3)).collect(),
                accept: i % 2 == 0,
                log_alpha: crate::rng::normal(&mut r),
                divergent: false,
            })
            .collect();
        let mut buf = Vec::new();
        write_chain_jsonl(&recs, &mut buf).unwrap();
        let back = read_chain_jsonl(&buf[..]).unwrap();
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.log_alpha.to_bits(), b.log_alpha.to_bits());
            assert!(a.x.iter().zip(&b.x).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }

    #[test]
    fn coreset_roundtrip() {
        let w = CoresetWeights::new(vec![0.0, 2.5, 0.0, 7.5]).unwrap();
        let mut buf = Vec::new();
        write_coreset_csv(&w, "abc123", &mut buf).unwrap();
        let back = read_coreset_csv(&buf[..]).unwrap();
        assert_eq!((back.n, back.m, back.model_hash.as_str()), (4, 2, "abc123"));
        assert_eq!(back.weights, w);
    }

    #[test]
    fn fitted_state_roundtrip() {
        let s = MeanFieldState::new(vec![
            Factor::Gaussian { mean: 0.25, var: 0.5 },
            Factor::Gamma { shape: 3.0, rate: 2.0 },
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_fitted_state_csv(&s, &mut buf).unwrap();
        let back = read_fitted_state_csv(&buf[..]).unwrap();
        for (a, b) in s.factors.iter().zip(&back.factors) {
            assert_eq!(a.family(), b.family());
            assert!((a.mean() - b.mean()).abs() < 1e-15);
            assert!((a.variance() - b.variance()).abs() < 1e-15);
        }
    }

    #[test]
    fn dropped_staging_leaves_nothing() {
        let root = tempfile::tempdir().unwrap();
        let out = root.path().join("run");
        {
            let mut s = Staging::new(&out).unwrap();
            s.write("a.txt", b"partial").unwrap();
        }
        assert!(!out.exists());
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 0);
    }

    #[test]
    fn commit_moves_files() {
        let root = tempfile::tempdir().unwrap();
        let out = root.path().join("run");
        let mut s = Staging::new(&out).unwrap();
        s.write("a.txt", b"done").unwrap();
        s.commit().unwrap();
        assert_eq!(fs::read(out.join("a.txt")).unwrap(), b"done");
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 1);
    }

    #[test]
    fn atomic_write_replaces() {
        let root = tempfile::tempdir().unwrap();
        let p = root.path().join("f.json");
        write_atomic(&p, b"1").unwrap();
        write_atomic(&p, b"2").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"2");
    }
}
