//! File I/O: PGM images, the native binary containers for tensors,
//! filter banks and models, dataset manifests, and intensity
//! normalization.
//!
//! Container layouts (all integers and floats little-endian):
//!
//! ```text
//! tensor: "DOTE" | u16 version | u8 rank | rank x u64 extents | f64 data (row-major)
//! bank:   "DOTB" | u16 version | u64 K | u64 d | u8 rank | K x tensor record
//! model:  "DOTM" | u16 version | config | u8 rank | extents | bank Fx | bank Fy
//!         | u64 K | K*K x f64 W (row-major) | f64 ridge_eps
//! config: f64 lambda,beta,gamma,sigma | u64 k,d,max_outer,max_inner
//!         | f64 tol | u64 seed | u8 dual_enabled
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::csc::FilterBank;
use crate::error::{DoteError, Result};
use crate::grid::Tensor;
use crate::mapping::ChannelMap;
use crate::synthesis::{ImagePair, PairedDataset};
use crate::train::DoteModel;
use crate::SolverConfig;

pub const TENSOR_MAGIC: &[u8; 4] = b"DOTE";
pub const BANK_MAGIC: &[u8; 4] = b"DOTB";
pub const MODEL_MAGIC: &[u8; 4] = b"DOTM";
pub const FORMAT_VERSION: u16 = 1;

/// On-disk image formats the loader understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    /// Binary PGM (P5), 8- or 16-bit.
    Pgm,
    /// Native tensor container.
    DoteTensor,
}

impl ImageFormat {
    /// Picks the format from a file extension; anything that is not
    /// `.pgm` is treated as a native tensor.
    pub fn from_path(path: &Path) -> ImageFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("pgm") => ImageFormat::Pgm,
            _ => ImageFormat::DoteTensor,
        }
    }
}

/// The affine transform applied at load time, kept so results can be
/// mapped back to raw intensities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub raw_min: f64,
    pub raw_max: f64,
    /// Zero dynamic range: normalization was skipped and the image
    /// mapped to 0.
    pub constant: bool,
}

/// A loaded image with its provenance and normalization record.
#[derive(Debug, Clone)]
pub struct ImageRecord {
    pub id: String,
    pub modality: String,
    pub tensor: Tensor,
    pub source_path: PathBuf,
    pub normalization: Normalization,
    pub format: ImageFormat,
    /// PGM maxval of the source file (255 for native tensors), used to
    /// write outputs in the input's format.
    pub pgm_maxval: u16,
}

// ---------------------------------------------------------------------
// primitive readers/writers

fn write_u16<W: Write>(w: &mut W, v: u16) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut buf = [0u8; 1];
    r.read_exact(&mut buf)
        .map_err(|_| DoteError::format("truncated payload"))?;
    Ok(buf[0])
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)
        .map_err(|_| DoteError::format("truncated payload"))?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| DoteError::format("truncated payload"))?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| DoteError::format("truncated payload"))?;
    Ok(f64::from_le_bytes(buf))
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4], what: &str) -> Result<()> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| DoteError::format(format!("{what}: file too short for magic")))?;
    if &buf != magic {
        return Err(DoteError::format(format!(
            "{what}: bad magic {:?}, expected {:?}",
            buf, magic
        )));
    }
    Ok(())
}

fn expect_version<R: Read>(r: &mut R, what: &str) -> Result<()> {
    let v = read_u16(r)?;
    if v != FORMAT_VERSION {
        return Err(DoteError::format(format!(
            "{what}: unsupported format version {v}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------
// tensor container

pub fn write_tensor_to<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    write_u16(w, FORMAT_VERSION)?;
    w.write_all(&[t.rank() as u8])?;
    for &e in t.dims() {
        write_u64(w, e as u64)?;
    }
    for &v in t.data() {
        write_f64(w, v)?;
    }
    Ok(())
}

pub fn read_tensor_from<R: Read>(r: &mut R) -> Result<Tensor> {
    expect_magic(r, TENSOR_MAGIC, "tensor")?;
    expect_version(r, "tensor")?;
    let rank = read_u8(r)? as usize;
    if !(2..=3).contains(&rank) {
        return Err(DoteError::format(format!("tensor: bad rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let e = read_u64(r)? as usize;
        if e == 0 || e > (1 << 32) {
            return Err(DoteError::format(format!("tensor: bad extent {e}")));
        }
        dims.push(e);
    }
    let n: usize = dims.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(read_f64(r)?);
    }
    Tensor::new(dims, data)
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor_to(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    read_tensor_from(&mut r)
}

// ---------------------------------------------------------------------
// filter bank container

pub fn write_bank_to<W: Write>(w: &mut W, bank: &FilterBank) -> Result<()> {
    w.write_all(BANK_MAGIC)?;
    write_u16(w, FORMAT_VERSION)?;
    write_u64(w, bank.count() as u64)?;
    write_u64(w, bank.support() as u64)?;
    w.write_all(&[bank.rank() as u8])?;
    for f in bank.filters() {
        write_tensor_to(w, f)?;
    }
    Ok(())
}

pub fn read_bank_from<R: Read>(r: &mut R) -> Result<FilterBank> {
    expect_magic(r, BANK_MAGIC, "filter bank")?;
    expect_version(r, "filter bank")?;
    let k = read_u64(r)? as usize;
    let d = read_u64(r)? as usize;
    let rank = read_u8(r)? as usize;
    let mut filters = Vec::with_capacity(k);
    for _ in 0..k {
        let f = read_tensor_from(r)?;
        if f.dims() != vec![d; rank].as_slice() {
            return Err(DoteError::format(format!(
                "filter bank: filter dims {:?} disagree with header (d={d}, rank={rank})",
                f.dims()
            )));
        }
        filters.push(f);
    }
    FilterBank::new(filters)
}

pub fn save_bank(path: &Path, bank: &FilterBank) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_bank_to(&mut w, bank)?;
    w.flush()?;
    Ok(())
}

pub fn load_bank(path: &Path) -> Result<FilterBank> {
    let mut r = BufReader::new(File::open(path)?);
    read_bank_from(&mut r)
}

// ---------------------------------------------------------------------
// model container

fn write_config_to<W: Write>(w: &mut W, cfg: &SolverConfig) -> Result<()> {
    write_f64(w, cfg.lambda)?;
    write_f64(w, cfg.beta)?;
    write_f64(w, cfg.gamma)?;
    write_f64(w, cfg.sigma)?;
    write_u64(w, cfg.k as u64)?;
    write_u64(w, cfg.d as u64)?;
    write_u64(w, cfg.max_outer as u64)?;
    write_u64(w, cfg.max_inner as u64)?;
    write_f64(w, cfg.tol)?;
    write_u64(w, cfg.seed)?;
    w.write_all(&[u8::from(cfg.dual_enabled)])?;
    Ok(())
}

fn read_config_from<R: Read>(r: &mut R) -> Result<SolverConfig> {
    let cfg = SolverConfig {
        lambda: read_f64(r)?,
        beta: read_f64(r)?,
        gamma: read_f64(r)?,
        sigma: read_f64(r)?,
        k: read_u64(r)? as usize,
        d: read_u64(r)? as usize,
        max_outer: read_u64(r)? as usize,
        max_inner: read_u64(r)? as usize,
        tol: read_f64(r)?,
        seed: read_u64(r)?,
        dual_enabled: read_u8(r)? != 0,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_model_to<W: Write>(w: &mut W, model: &DoteModel) -> Result<()> {
    model.validate()?;
    w.write_all(MODEL_MAGIC)?;
    write_u16(w, FORMAT_VERSION)?;
    write_config_to(w, &model.config)?;
    w.write_all(&[model.training_dims.len() as u8])?;
    for &e in &model.training_dims {
        write_u64(w, e as u64)?;
    }
    write_bank_to(w, &model.fx)?;
    write_bank_to(w, &model.fy)?;
    let k = model.w.channels();
    write_u64(w, k as u64)?;
    for r in 0..k {
        for c in 0..k {
            write_f64(w, model.w.matrix()[(r, c)])?;
        }
    }
    write_f64(w, model.w.ridge_eps())?;
    Ok(())
}

pub fn read_model_from<R: Read>(r: &mut R) -> Result<DoteModel> {
    expect_magic(r, MODEL_MAGIC, "model")?;
    expect_version(r, "model")?;
    let config = read_config_from(r)?;
    let rank = read_u8(r)? as usize;
    if !(2..=3).contains(&rank) {
        return Err(DoteError::format(format!("model: bad rank {rank}")));
    }
    let mut training_dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        training_dims.push(read_u64(r)? as usize);
    }
    let fx = read_bank_from(r)?;
    let fy = read_bank_from(r)?;
    let k = read_u64(r)? as usize;
    let mut wdata = Vec::with_capacity(k * k);
    for _ in 0..k * k {
        wdata.push(read_f64(r)?);
    }
    let ridge_eps = read_f64(r)?;
    let w = ChannelMap::with_ridge(DMatrix::from_row_slice(k, k, &wdata), ridge_eps)?;
    let model = DoteModel {
        fx,
        fy,
        w,
        config,
        training_dims,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_model(path: &Path, model: &DoteModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model_to(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<DoteModel> {
    let mut r = BufReader::new(File::open(path)?);
    read_model_from(&mut r)
}

// ---------------------------------------------------------------------
// PGM (P5 binary)

fn pgm_token<R: Read>(r: &mut R) -> Result<String> {
    // Tokens are separated by whitespace; '#' starts a comment running
    // to end of line.
    let mut tok = String::new();
    let mut in_comment = false;
    loop {
        let mut byte = [0u8; 1];
        if r.read_exact(&mut byte).is_err() {
            if tok.is_empty() {
                return Err(DoteError::format("pgm: truncated header"));
            }
            return Ok(tok);
        }
        let c = byte[0] as char;
        if in_comment {
            if c == '\n' {
                in_comment = false;
            }
            continue;
        }
        if c == '#' {
            in_comment = true;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(c);
        if tok.len() > 32 {
            return Err(DoteError::format("pgm: header token too long"));
        }
    }
}

/// Reads a binary (P5) PGM into raw intensities plus its maxval.
pub fn read_pgm<R: Read>(r: &mut R) -> Result<(Tensor, u16)> {
    let magic = pgm_token(r)?;
    if magic != "P5" {
        return Err(DoteError::format(format!(
            "pgm: expected P5, got {magic:?}"
        )));
    }
    let parse = |tok: String, what: &str| -> Result<usize> {
        tok.parse::<usize>()
            .map_err(|_| DoteError::format(format!("pgm: malformed {what} {tok:?}")))
    };
    let width = parse(pgm_token(r)?, "width")?;
    let height = parse(pgm_token(r)?, "height")?;
    let maxval = parse(pgm_token(r)?, "maxval")?;
    if width == 0 || height == 0 {
        return Err(DoteError::format("pgm: zero extent"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(DoteError::format(format!("pgm: bad maxval {maxval}")));
    }
    let n = width * height;
    let wide = maxval > 255;
    let mut payload = vec![0u8; n * if wide { 2 } else { 1 }];
    r.read_exact(&mut payload)
        .map_err(|_| DoteError::format("pgm: truncated payload"))?;
    let data: Vec<f64> = if wide {
        payload
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect()
    } else {
        payload.iter().map(|&b| b as f64).collect()
    };
    Ok((Tensor::new(vec![height, width], data)?, maxval as u16))
}

/// Writes intensities in [0, 1] as a binary PGM with the given maxval.
pub fn write_pgm<W: Write>(w: &mut W, t: &Tensor, maxval: u16) -> Result<()> {
    if t.rank() != 2 {
        return Err(DoteError::dims("pgm output must be 2-D"));
    }
    if maxval == 0 {
        return Err(DoteError::invalid("pgm maxval must be positive"));
    }
    let (height, width) = (t.dims()[0], t.dims()[1]);
    write!(w, "P5\n{width} {height}\n{maxval}\n")?;
    let scale = maxval as f64;
    if maxval > 255 {
        for &v in t.data() {
            let q = (v.clamp(0.0, 1.0) * scale).round() as u16;
            w.write_all(&q.to_be_bytes())?;
        }
    } else {
        for &v in t.data() {
            let q = (v.clamp(0.0, 1.0) * scale).round() as u8;
            w.write_all(&[q])?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------
// normalization and records

/// Min-max normalization to [0, 1]. A constant image is flagged and
/// mapped to zero.
pub fn normalize_intensities(raw: &Tensor) -> (Tensor, Normalization) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in raw.data() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi == lo {
        let t = Tensor::zeros(raw.dims()).expect("dims already validated");
        return (
            t,
            Normalization {
                raw_min: lo,
                raw_max: hi,
                constant: true,
            },
        );
    }
    let scale = 1.0 / (hi - lo);
    let data = raw.data().iter().map(|&v| (v - lo) * scale).collect();
    (
        Tensor::new(raw.dims().to_vec(), data).expect("normalization preserves validity"),
        Normalization {
            raw_min: lo,
            raw_max: hi,
            constant: false,
        },
    )
}

/// Loads one image in the declared format and normalizes it to [0, 1].
pub fn load_image(path: &Path, format: ImageFormat) -> Result<ImageRecord> {
    let mut r = BufReader::new(File::open(path)?);
    let (raw, maxval) = match format {
        ImageFormat::Pgm => read_pgm(&mut r)?,
        ImageFormat::DoteTensor => (read_tensor_from(&mut r)?, 255),
    };
    let (tensor, normalization) = normalize_intensities(&raw);
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string();
    Ok(ImageRecord {
        id,
        modality: String::new(),
        tensor,
        source_path: path.to_path_buf(),
        normalization,
        format,
        pgm_maxval: maxval,
    })
}

/// Writes an image in the same format as the record it derives from.
pub fn write_image_like(path: &Path, t: &Tensor, like: &ImageRecord) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match like.format {
        ImageFormat::Pgm => write_pgm(&mut w, t, like.pgm_maxval)?,
        ImageFormat::DoteTensor => write_tensor_to(&mut w, t)?,
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------
// manifests and dataset assembly

/// One line of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub source_path: PathBuf,
    pub target_path: PathBuf,
}

/// Parses the plain-text manifest format: one `id<TAB>source<TAB>target`
/// line per pair. Blank lines and `#` comments are ignored. Relative
/// paths are resolved against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let (id, src, tgt) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(id), Some(s), Some(t), None) if !id.is_empty() => (id, s, t),
            _ => {
                return Err(DoteError::format(format!(
                    "manifest line {}: expected id<TAB>source<TAB>target",
                    lineno + 1
                )))
            }
        };
        let resolve = |p: &str| {
            let path = Path::new(p);
            if path.is_absolute() {
                path.to_path_buf()
            } else {
                base.join(path)
            }
        };
        entries.push(ManifestEntry {
            id: id.to_string(),
            source_path: resolve(src),
            target_path: resolve(tgt),
        });
    }
    if entries.is_empty() {
        return Err(DoteError::format("manifest lists no pairs"));
    }
    Ok(entries)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base)
}

/// Pairs source and target records by id (not by position), checking
/// counts and per-pair dims. Pairs come back in source order.
pub fn build_paired_dataset(
    sources: Vec<ImageRecord>,
    targets: Vec<ImageRecord>,
) -> Result<PairedDataset> {
    if sources.len() != targets.len() {
        return Err(DoteError::invalid(format!(
            "count mismatch: {} sources vs {} targets",
            sources.len(),
            targets.len()
        )));
    }
    if sources.is_empty() {
        return Err(DoteError::invalid("no pairs to build"));
    }
    let source_modality = sources[0].modality.clone();
    let target_modality = targets[0].modality.clone();
    let mut by_id: std::collections::HashMap<String, ImageRecord> =
        std::collections::HashMap::new();
    for t in targets {
        if by_id.insert(t.id.clone(), t).is_some() {
            return Err(DoteError::invalid("duplicate target id"));
        }
    }
    let mut pairs = Vec::with_capacity(sources.len());
    for s in sources {
        let t = by_id
            .remove(&s.id)
            .ok_or_else(|| DoteError::invalid(format!("pair {:?}: no matching target id", s.id)))?;
        if s.tensor.dims() != t.tensor.dims() {
            return Err(DoteError::dims(format!(
                "pair {:?}: source dims {:?} do not match target dims {:?}",
                s.id,
                s.tensor.dims(),
                t.tensor.dims()
            )));
        }
        pairs.push(ImagePair {
            id: s.id,
            source: s.tensor,
            target: t.tensor,
        });
    }
    PairedDataset::new(pairs, source_modality, target_modality)
}

/// Loads every pair named by a manifest, detecting formats by extension.
pub fn load_dataset(manifest_path: &Path) -> Result<PairedDataset> {
    let entries = load_manifest(manifest_path)?;
    let mut sources = Vec::with_capacity(entries.len());
    let mut targets = Vec::with_capacity(entries.len());
    for e in &entries {
        let mut s = load_image(&e.source_path, ImageFormat::from_path(&e.source_path))?;
        s.id = e.id.clone();
        s.modality = "source".into();
        sources.push(s);
        let mut t = load_image(&e.target_path, ImageFormat::from_path(&e.target_path))?;
        t.id = e.id.clone();
        t.modality = "target".into();
        targets.push(t);
    }
    build_paired_dataset(sources, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().expect("tempdir")
    }

    #[test]
    fn pgm_8bit_affine_normalization() {
        let bytes: Vec<u8> = [b"P5\n2 2\n255\n".to_vec(), vec![0u8, 85, 170, 255]].concat();
        let (raw, maxval) = read_pgm(&mut bytes.as_slice()).unwrap();
        assert_eq!(maxval, 255);
        let (norm, info) = normalize_intensities(&raw);
        assert!(!info.constant);
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (got, want) in norm.data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn pgm_16bit_scaling_matches_direct_computation() {
        let values: [u16; 6] = [0, 1, 9999, 30000, 65534, 65535];
        let mut bytes = b"P5\n3 2\n65535\n".to_vec();
        for v in values {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let (raw, maxval) = read_pgm(&mut bytes.as_slice()).unwrap();
        assert_eq!(maxval, 65535);
        let (norm, _) = normalize_intensities(&raw);
        for (got, v) in norm.data().iter().zip(values) {
            let want = v as f64 / 65535.0;
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn pgm_with_comment_and_roundtrip() {
        let t = Tensor::new(vec![2, 3], vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_pgm(&mut buf, &t, 255).unwrap();
        let (back, maxval) = read_pgm(&mut buf.as_slice()).unwrap();
        assert_eq!(maxval, 255);
        assert_eq!(back.dims(), &[2, 3]);
        for (got, want) in back.data().iter().zip(t.data()) {
            assert!((got / 255.0 - want).abs() <= 0.5 / 255.0);
        }

        let commented = b"P5\n# a comment\n2 2 255\n\xff\x00\x80\x40".to_vec();
        let (raw, _) = read_pgm(&mut commented.as_slice()).unwrap();
        assert_eq!(raw.data()[0], 255.0);
    }

    #[test]
    fn pgm_malformed_and_truncated() {
        assert!(read_pgm(&mut b"P4\n2 2\n255\n aaaa".as_slice()).is_err());
        assert!(read_pgm(&mut b"P5\n2 x\n255\naaaa".as_slice()).is_err());
        assert!(read_pgm(&mut b"P5\n2 2\n255\nab".as_slice()).is_err());
    }

    #[test]
    fn constant_image_flagged_and_zeroed() {
        let raw = Tensor::new(vec![2, 2], vec![7.0; 4]).unwrap();
        let (norm, info) = normalize_intensities(&raw);
        assert!(info.constant);
        assert!(norm.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalization_is_order_preserving() {
        let raw = Tensor::new(vec![2, 3], vec![5.0, -1.0, 3.0, 9.0, 0.0, 2.0]).unwrap();
        let (norm, info) = normalize_intensities(&raw);
        assert_eq!(info.raw_min, -1.0);
        assert_eq!(info.raw_max, 9.0);
        let mut order: Vec<usize> = (0..6).collect();
        order.sort_by(|&a, &b| raw.data()[a].partial_cmp(&raw.data()[b]).unwrap());
        for pair in order.windows(2) {
            assert!(norm.data()[pair[0]] <= norm.data()[pair[1]]);
        }
        assert_eq!(norm.data()[1], 0.0);
        assert_eq!(norm.data()[3], 1.0);
    }

    #[test]
    fn native_tensor_roundtrip_bitwise() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let t = Tensor::new(
            vec![3, 4, 2],
            (0..24).map(|_| rng.random_range(-5.0..5.0)).collect(),
        )
        .unwrap();
        let dir = tmpdir();
        let path = dir.path().join("t.dote");
        save_tensor(&path, &t).unwrap();
        let back = load_tensor(&path).unwrap();
        assert_eq!(back.dims(), t.dims());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_tensor_file_rejected() {
        let t = Tensor::zeros(&[4, 4]).unwrap();
        let mut buf = Vec::new();
        write_tensor_to(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            read_tensor_from(&mut buf.as_slice()),
            Err(DoteError::Format(_))
        ));
    }

    #[test]
    fn bank_and_model_roundtrip() {
        let fx = FilterBank::random_init(3, 3, 2, 7).unwrap();
        let fy = FilterBank::random_init(3, 3, 2, 8).unwrap();
        let mut buf = Vec::new();
        write_bank_to(&mut buf, &fx).unwrap();
        let back = read_bank_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, fx);

        let model = DoteModel {
            fx,
            fy,
            w: ChannelMap::with_ridge(DMatrix::from_fn(3, 3, |r, c| (r + 2 * c) as f64), 1e-7)
                .unwrap(),
            config: SolverConfig {
                k: 3,
                d: 3,
                seed: 99,
                dual_enabled: false,
                ..SolverConfig::default()
            },
            training_dims: vec![16, 16],
        };
        let mut mbuf = Vec::new();
        write_model_to(&mut mbuf, &model).unwrap();
        let back = read_model_from(&mut mbuf.as_slice()).unwrap();
        assert_eq!(back.config, model.config);
        assert_eq!(back.training_dims, model.training_dims);
        assert_eq!(back.w.matrix(), model.w.matrix());
        assert_eq!(back.w.ridge_eps(), model.w.ridge_eps());
        assert_eq!(back.fx, model.fx);
        assert_eq!(back.fy, model.fy);

        // Re-serializing the loaded model is byte-identical.
        let mut mbuf2 = Vec::new();
        write_model_to(&mut mbuf2, &back).unwrap();
        assert_eq!(mbuf, mbuf2);
    }

    fn record(id: &str, dims: &[usize], fill: f64) -> ImageRecord {
        let n: usize = dims.iter().product();
        let mut data = vec![fill; n];
        data[0] = 0.0;
        data[n - 1] = 1.0;
        ImageRecord {
            id: id.into(),
            modality: "m".into(),
            tensor: Tensor::new(dims.to_vec(), data).unwrap(),
            source_path: PathBuf::from(format!("{id}.pgm")),
            normalization: Normalization {
                raw_min: 0.0,
                raw_max: 1.0,
                constant: false,
            },
            format: ImageFormat::Pgm,
            pgm_maxval: 255,
        }
    }

    #[test]
    fn paired_dataset_matches_by_id_not_position() {
        let sources = vec![
            record("a", &[4, 4], 0.1),
            record("b", &[4, 4], 0.2),
            record("c", &[4, 4], 0.3),
        ];
        let targets = vec![
            record("c", &[4, 4], 0.6),
            record("a", &[4, 4], 0.4),
            record("b", &[4, 4], 0.5),
        ];
        let ds = build_paired_dataset(sources, targets).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.pairs()[0].id, "a");
        assert!((ds.pairs()[0].target.data()[1] - 0.4).abs() < 1e-12);
        assert_eq!(ds.pairs()[2].id, "c");
        assert!((ds.pairs()[2].target.data()[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn paired_dataset_dim_mismatch_names_the_id() {
        let sources = vec![record("a", &[4, 4], 0.1), record("bad", &[4, 4], 0.2)];
        let targets = vec![record("a", &[4, 4], 0.3), record("bad", &[4, 6], 0.4)];
        let err = build_paired_dataset(sources, targets).unwrap_err();
        assert!(err.to_string().contains("bad"), "{err}");
    }

    #[test]
    fn manifest_parsing_and_resolution() {
        let text = "# pairs\none\tsrc/one.pgm\ttgt/one.pgm\ntwo\t/abs/two.dote\ttgt/two.dote\n";
        let entries = parse_manifest(text, Path::new("/base")).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].source_path, Path::new("/base/src/one.pgm"));
        assert_eq!(entries[1].source_path, Path::new("/abs/two.dote"));
        assert!(parse_manifest("one source-only\n", Path::new(".")).is_err());
        assert!(parse_manifest("# nothing\n", Path::new(".")).is_err());
    }

    proptest! {
        #[test]
        fn tensor_container_roundtrips(seed in 0u64..1000) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let rows = rng.random_range(1usize..6);
            let cols = rng.random_range(1usize..6);
            let t = Tensor::new(
                vec![rows, cols],
                (0..rows * cols).map(|_| rng.random_range(-1e6..1e6)).collect(),
            ).unwrap();
            let mut buf = Vec::new();
            write_tensor_to(&mut buf, &t).unwrap();
            let back = read_tensor_from(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
