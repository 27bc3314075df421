//! Binary containers with JSON sidecars: filter banks, checkpoints, feature
//! matrices and fitted classifiers. All integers and floats are little-endian.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{NetworkParams, Normalization, PoolGrid};
use crate::rotconv::{Arch, FilterBank};
use crate::shallowml::{LdaModel, PcaModel};

pub const BANK_MAGIC: &[u8; 8] = b"ROTXBANK";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ROTXCKPT";
pub const FEATURES_MAGIC: &[u8; 8] = b"ROTXFEAT";
pub const BLOCKS_MAGIC: &[u8; 8] = b"ROTXBLKS";
pub const VERSION: u32 = 1;

/// Path of the JSON sidecar next to `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Reader { buf, pos: 0, path }
    }

    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Container {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expect: &[u8; 8]) -> Result<()> {
        let m = self.take(8)?;
        if m != expect {
            return Err(self.fail(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(m),
                String::from_utf8_lossy(expect)
            )));
        }
        let v = self.u32()?;
        if v != VERSION as usize {
            return Err(self.fail(format!("unsupported version {}", v)));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| self.fail("length overflows usize"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n.checked_mul(8).ok_or_else(|| self.fail("length overflow"))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.fail(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankMeta {
    pub format: String,
    pub version: u32,
    pub arch: Arch,
    pub groups: usize,
    pub orientations: usize,
    pub size: usize,
}

impl BankMeta {
    fn of(bank: &FilterBank, format: &str) -> Self {
        BankMeta {
            format: format.into(),
            version: VERSION,
            arch: bank.arch,
            groups: bank.groups,
            orientations: bank.orientations,
            size: bank.size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(flatten)]
    pub bank: BankMeta,
    pub classes: usize,
    pub grid: PoolGrid,
    pub normalization: Normalization,
}

fn put_bank_header(w: &mut Writer, magic: &[u8; 8], bank: &FilterBank) {
    w.bytes(magic);
    w.u32(VERSION as usize);
    w.u32(bank.arch.code() as usize);
    w.u32(bank.groups);
    w.u32(bank.orientations);
    w.u32(bank.size);
}

fn get_bank_header(r: &mut Reader, magic: &[u8; 8]) -> Result<(Arch, usize, usize, usize)> {
    r.magic(magic)?;
    let code = r.u32()?;
    let arch = Arch::from_code(code as u32).ok_or_else(|| r.fail(format!("unknown arch code {}", code)))?;
    let (m, rr, n) = (r.u32()?, r.u32()?, r.u32()?);
    if m == 0 || n == 0 || m.saturating_mul(n).saturating_mul(n) > 1 << 28 {
        return Err(r.fail(format!("implausible dimensions M={} n={}", m, n)));
    }
    Ok((arch, m, rr, n))
}

pub fn encode_bank(bank: &FilterBank) -> Vec<u8> {
    let mut w = Writer::default();
    put_bank_header(&mut w, BANK_MAGIC, bank);
    w.f64s(&bank.canonical);
    w.f64s(&bank.biases);
    w.0
}

pub fn decode_bank(bytes: &[u8], path: &Path) -> Result<FilterBank> {
    let mut r = Reader::new(bytes, path);
    let (arch, m, rr, n) = get_bank_header(&mut r, BANK_MAGIC)?;
    let canonical = r.f64s(m * n * n)?;
    let biases = r.f64s(m)?;
    r.finish()?;
    FilterBank::from_parts(arch, rr, n, canonical, biases).map_err(|e| r.fail(e.to_string()))
}

/// Writes the bank and its `.json` sidecar.
pub fn save_bank(path: &Path, bank: &FilterBank) -> Result<()> {
    write_file(path, &encode_bank(bank))?;
    write_json(&sidecar_path(path), &BankMeta::of(bank, "filter-bank"))
}

pub fn load_bank(path: &Path) -> Result<FilterBank> {
    decode_bank(&read_file(path)?, path)
}

pub fn encode_checkpoint(p: &NetworkParams) -> Vec<u8> {
    let mut w = Writer::default();
    put_bank_header(&mut w, CHECKPOINT_MAGIC, &p.bank);
    w.u32(p.classes);
    w.u32(p.grid.rows);
    w.u32(p.grid.cols);
    w.f64s(&[p.normalization.mean, p.normalization.std]);
    w.f64s(&p.bank.canonical);
    w.f64s(&p.bank.biases);
    w.f64s(&p.fc_weights);
    w.f64s(&p.fc_biases);
    w.0
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<NetworkParams> {
    let mut r = Reader::new(bytes, path);
    let (arch, m, rr, n) = get_bank_header(&mut r, CHECKPOINT_MAGIC)?;
    let classes = r.u32()?;
    let grid = PoolGrid::new(r.u32()?, r.u32()?);
    if classes == 0 || classes > 1 << 20 {
        return Err(r.fail(format!("implausible class count {}", classes)));
    }
    let norm = r.f64s(2)?;
    let canonical = r.f64s(m * n * n)?;
    let biases = r.f64s(m)?;
    let fc_weights = r.f64s(classes * m)?;
    let fc_biases = r.f64s(classes)?;
    r.finish()?;
    let bank = FilterBank::from_parts(arch, rr, n, canonical, biases).map_err(|e| r.fail(e.to_string()))?;
    let params = NetworkParams {
        bank,
        classes,
        fc_weights,
        fc_biases,
        grid,
        normalization: Normalization {
            mean: norm[0],
            std: norm[1],
        },
    };
    params.validate().map_err(|e| r.fail(e.to_string()))?;
    Ok(params)
}

pub fn checkpoint_meta(p: &NetworkParams) -> CheckpointMeta {
    CheckpointMeta {
        bank: BankMeta::of(&p.bank, "checkpoint"),
        classes: p.classes,
        grid: p.grid,
        normalization: p.normalization,
    }
}

/// Writes the checkpoint and its `.json` sidecar.
pub fn save_checkpoint(path: &Path, p: &NetworkParams) -> Result<()> {
    write_file(path, &encode_checkpoint(p))?;
    write_json(&sidecar_path(path), &checkpoint_meta(p))
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    decode_checkpoint(&read_file(path)?, path)
}

/// Row-major `rows × dim` matrix with per-row source names and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub labels: Vec<usize>,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl FeatureTable {
    pub fn new(names: Vec<String>, labels: Vec<usize>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        if names.len() != rows.len() || labels.len() != rows.len() || rows.iter().any(|r| r.len() != dim) {
            return Err(crate::error::shape_err!("ragged feature table"));
        }
        Ok(FeatureTable {
            names,
            labels,
            dim,
            values: rows.concat(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.row(i).to_vec()).collect()
    }

    /// `path,label,f0,...` with shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("path,label");
        for j in 0..self.dim {
            let _ = write!(s, ",f{}", j);
        }
        s.push('\n');
        for i in 0..self.len() {
            let _ = write!(s, "{},{}", self.names[i], self.labels[i]);
            for v in self.row(i) {
                let _ = write!(s, ",{}", v);
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Container {
            path: path.to_path_buf(),
            reason: "empty feature CSV".into(),
        })?;
        let dim = header.split(',').count().saturating_sub(2);
        let (mut names, mut labels, mut values) = (Vec::new(), Vec::new(), Vec::new());
        for (ln, line) in lines {
            let bad = || Error::MalformedLine {
                file: path.to_path_buf(),
                line: ln + 1,
                content: line.to_string(),
            };
            let mut fields = line.split(',');
            names.push(fields.next().ok_or_else(bad)?.to_string());
            labels.push(fields.next().and_then(|f| f.trim().parse().ok()).ok_or_else(bad)?);
            let row: Vec<f64> = fields.map(|f| f.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
            if row.len() != dim {
                return Err(bad());
            }
            values.extend(row);
        }
        Ok(FeatureTable {
            names,
            labels,
            dim,
            values,
        })
    }

    /// Binary matrix: magic, version, rows (u64), dim (u64), values.
    pub fn encode_matrix(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(FEATURES_MAGIC);
        w.u32(VERSION as usize);
        w.u64(self.len());
        w.u64(self.dim);
        w.f64s(&self.values);
        w.0
    }

    pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f64>)> {
        let mut r = Reader::new(bytes, path);
        r.magic(FEATURES_MAGIC)?;
        let (rows, dim) = (r.u64()?, r.u64()?);
        let n = rows.checked_mul(dim).ok_or_else(|| r.fail("size overflow"))?;
        let values = r.f64s(n)?;
        r.finish()?;
        Ok((rows, dim, values))
    }

    /// Writes `<stem>.csv` and `<stem>.bin`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        write_file(&stem.with_extension("csv"), self.to_csv().as_bytes())?;
        write_file(&stem.with_extension("bin"), &self.encode_matrix())
    }

    /// Reads a CSV table, or a `.bin` matrix with its sibling CSV for names
    /// and labels.
    pub fn load(path: &Path) -> Result<Self> {
        let csv_path = path.with_extension("csv");
        let text = String::from_utf8(read_file(&csv_path)?).map_err(|_| Error::Container {
            path: csv_path.clone(),
            reason: "not UTF-8".into(),
        })?;
        let mut table = Self::from_csv(&text, &csv_path)?;
        if path.extension().is_some_and(|e| e == "bin") {
            let (rows, dim, values) = Self::decode_matrix(&read_file(path)?, path)?;
            if rows != table.len() || dim != table.dim {
                return Err(Error::Container {
                    path: path.to_path_buf(),
                    reason: format!("{}x{} matrix does not match its CSV ({}x{})", rows, dim, table.len(), table.dim),
                });
            }
            table.values = values;
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMeta {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlocksHeader<M> {
    pub format: String,
    pub version: u32,
    pub meta: M,
    pub blocks: Vec<BlockMeta>,
}

/// Named f64 blocks in a binary file plus JSON metadata in the sidecar.
pub fn save_blocks<M: Serialize>(path: &Path, format: &str, meta: &M, blocks: &[(&str, &[f64])]) -> Result<()> {
    let mut w = Writer::default();
    w.bytes(BLOCKS_MAGIC);
    w.u32(VERSION as usize);
    w.u32(blocks.len());
    for (name, data) in blocks {
        w.u32(name.len());
        w.bytes(name.as_bytes());
        w.u64(data.len());
        w.f64s(data);
    }
    write_file(path, &w.0)?;
    let header = BlocksHeader {
        format: format.into(),
        version: VERSION,
        meta,
        blocks: blocks
            .iter()
            .map(|(n, d)| BlockMeta {
                name: n.to_string(),
                len: d.len(),
            })
            .collect(),
    };
    write_json(&sidecar_path(path), &header)
}

/// Named blocks of a container, in file order.
pub type Blocks = Vec<(String, Vec<f64>)>;

pub fn load_blocks<M: for<'de> Deserialize<'de>>(path: &Path) -> Result<(M, Blocks)> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    r.magic(BLOCKS_MAGIC)?;
    let count = r.u32()?;
    let mut blocks = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.fail("block name not UTF-8"))?;
        let n = r.u64()?;
        blocks.push((name, r.f64s(n)?));
    }
    r.finish()?;
    let side = sidecar_path(path);
    let header: BlocksHeader<M> = serde_json::from_slice(&read_file(&side)?)?;
    if header.blocks.len() != blocks.len()
        || header.blocks.iter().zip(&blocks).any(|(m, (n, d))| &m.name != n || m.len != d.len())
    {
        return Err(Error::Container {
            path: side,
            reason: "sidecar block list does not match the binary".into(),
        });
    }
    Ok((header.meta, blocks))
}

/// A fitted descriptor classifier: optional PCA followed by LDA or 1-NN.
#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Lda(LdaModel),
    Knn { dim: usize, rows: Vec<f64>, labels: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShallowModel {
    pub pca: Option<PcaModel>,
    pub classifier: Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ShallowMeta {
    classifier: String,
    input_dim: usize,
    pca_k: Option<usize>,
    dim: usize,
    classes: usize,
    knn_labels: Vec<usize>,
}

impl ShallowModel {
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let z = match &self.pca {
            Some(p) => p.transform(x)?,
            None => x.to_vec(),
        };
        match &self.classifier {
            Classifier::Lda(m) => m.predict(&z),
            Classifier::Knn { dim, rows, labels } => {
                let train: Vec<Vec<f64>> = rows.chunks(*dim).map(|c| c.to_vec()).collect();
                crate::shallowml::knn1_cityblock(&train, labels, &z)
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut blocks: Vec<(&str, &[f64])> = Vec::new();
        let input_dim;
        if let Some(p) = &self.pca {
            input_dim = p.dim;
            blocks.push(("pca.mean", &p.mean));
            blocks.push(("pca.components", &p.components));
            blocks.push(("pca.eigenvalues", &p.eigenvalues));
        } else {
            input_dim = match &self.classifier {
                Classifier::Lda(m) => m.dim,
                Classifier::Knn { dim, .. } => *dim,
            };
        }
        let meta = match &self.classifier {
            Classifier::Lda(m) => {
                blocks.push(("lda.means", &m.means));
                blocks.push(("lda.covariance", &m.covariance));
                blocks.push(("lda.priors", &m.priors));
                blocks.push(("lda.weights", &m.weights));
                blocks.push(("lda.offsets", &m.offsets));
                ShallowMeta {
                    classifier: "lda".into(),
                    input_dim,
                    pca_k: self.pca.as_ref().map(|p| p.k()),
                    dim: m.dim,
                    classes: m.classes,
                    knn_labels: Vec::new(),
                }
            }
            Classifier::Knn { dim, rows, labels } => {
                blocks.push(("knn.rows", rows));
                ShallowMeta {
                    classifier: "1nn".into(),
                    input_dim,
                    pca_k: self.pca.as_ref().map(|p| p.k()),
                    dim: *dim,
                    classes: labels.iter().max().map_or(0, |m| m + 1),
                    knn_labels: labels.clone(),
                }
            }
        };
        save_blocks(path, "shallow-classifier", &meta, &blocks)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, blocks): (ShallowMeta, _) = load_blocks(path)?;
        let bad = |reason: &str| Error::Container {
            path: path.to_path_buf(),
            reason: reason.into(),
        };
        let get = |name: &str| -> Result<Vec<f64>> {
            blocks
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, d)| d.clone())
                .ok_or_else(|| bad(&format!("missing block {}", name)))
        };
        let pca = match meta.pca_k {
            Some(k) => Some(PcaModel {
                dim: meta.input_dim,
                mean: get("pca.mean")?,
                components: get("pca.components")?,
                eigenvalues: get("pca.eigenvalues")?,
            })
            .filter(|p| p.eigenvalues.len() == k && p.components.len() == k * p.dim && p.mean.len() == p.dim)
            .map(Some)
            .ok_or_else(|| bad("inconsistent PCA blocks"))?,
            None => None,
        };
        let classifier = match meta.classifier.as_str() {
            "lda" => Classifier::Lda(LdaModel {
                classes: meta.classes,
                dim: meta.dim,
                means: get("lda.means")?,
                covariance: get("lda.covariance")?,
                priors: get("lda.priors")?,
                weights: get("lda.weights")?,
                offsets: get("lda.offsets")?,
            }),
            "1nn" => {
                let rows = get("knn.rows")?;
                if meta.dim == 0 || rows.len() != meta.dim * meta.knn_labels.len() {
                    return Err(bad("inconsistent 1-NN blocks"));
                }
                Classifier::Knn {
                    dim: meta.dim,
                    rows,
                    labels: meta.knn_labels,
                }
            }
            other => return Err(bad(&format!("unknown classifier {}", other))),
        };
        Ok(ShallowModel { pca, classifier })
    }
}
