//! Dataset generation and the binary dataset container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "TOPO" | u32 version | u32 dims[3] | u32 n_par | u64 count | u32 field mask
//! | [u8; 32] geometry hash | u8 family | u8 normalization | u16 reserved | u64 seed
//! then per record: f32 params[n_par], f32 field[N_e] for each present field
//! (density, vm, tc in that order), f64 vm_scale, f64 tc_scale
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problems::{build_instance, sample_params, Family, FamilyConfig, ParamVector};
use crate::simp::optimize;
use crate::stress::{normalize_fields, raw_stress_fields};

pub const MAGIC: [u8; 4] = *b"TOPO";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_BYTES: u64 = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldKind {
    Density,
    VonMises,
    Tension,
}

impl FieldKind {
    pub const ALL: [FieldKind; 3] = [FieldKind::Density, FieldKind::VonMises, FieldKind::Tension];

    pub fn bit(self) -> u32 {
        match self {
            FieldKind::Density => 1,
            FieldKind::VonMises => 2,
            FieldKind::Tension => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Density => "density",
            FieldKind::VonMises => "vm",
            FieldKind::Tension => "tc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "density" | "x" => Some(FieldKind::Density),
            "vm" => Some(FieldKind::VonMises),
            "tc" => Some(FieldKind::Tension),
            _ => None,
        }
    }

    /// Admissible value range of the normalized field.
    pub fn range(self) -> (f32, f32) {
        match self {
            FieldKind::Tension => (-1.0, 1.0),
            _ => (0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Normalization {
    /// Each stress field divided by its own maximum magnitude.
    PerSampleMaxAbs = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub family: Family,
    pub dims: [u32; 3],
    pub n_par: u32,
    pub count: u64,
    pub field_mask: u32,
    pub geometry_hash: [u8; 32],
    pub normalization: Normalization,
    pub seed: u64,
}

impl DatasetHeader {
    pub fn for_config(cfg: &FamilyConfig, count: u64, seed: u64) -> Self {
        let d = cfg.dims3();
        DatasetHeader {
            family: cfg.family,
            dims: [d[0] as u32, d[1] as u32, d[2] as u32],
            n_par: cfg.family.n_par() as u32,
            count,
            field_mask: FieldKind::ALL.iter().map(|k| k.bit()).sum(),
            geometry_hash: cfg.geometry_hash(),
            normalization: Normalization::PerSampleMaxAbs,
            seed,
        }
    }

    pub fn num_elements(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    pub fn has(&self, kind: FieldKind) -> bool {
        self.field_mask & kind.bit() != 0
    }

    pub fn fields(&self) -> Vec<FieldKind> {
        FieldKind::ALL.into_iter().filter(|k| self.has(*k)).collect()
    }

    fn record_bytes(&self) -> u64 {
        4 * (self.n_par as u64 + self.fields().len() as u64 * self.num_elements() as u64) + 16
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub params: Vec<f32>,
    pub density: Option<Vec<f32>>,
    pub vm: Option<Vec<f32>>,
    pub tc: Option<Vec<f32>>,
    pub vm_scale: f64,
    pub tc_scale: f64,
}

impl Record {
    pub fn field(&self, kind: FieldKind) -> Option<&[f32]> {
        match kind {
            FieldKind::Density => self.density.as_deref(),
            FieldKind::VonMises => self.vm.as_deref(),
            FieldKind::Tension => self.tc.as_deref(),
        }
    }

    fn field_mut(&mut self, kind: FieldKind) -> &mut Option<Vec<f32>> {
        match kind {
            FieldKind::Density => &mut self.density,
            FieldKind::VonMises => &mut self.vm,
            FieldKind::Tension => &mut self.tc,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// New dataset holding the records at `indices` (in that order).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let records: Vec<Record> = indices.iter().map(|&i| self.records[i].clone()).collect();
        Dataset {
            header: DatasetHeader {
                count: records.len() as u64,
                ..self.header.clone()
            },
            records,
        }
    }

    /// First `n` records.
    pub fn take(&self, n: usize) -> Dataset {
        self.subset(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    pub fn validate(&self) -> Result<()> {
        validate_records(&self.header, &self.records)
    }
}

fn validate_records(header: &DatasetHeader, records: &[Record]) -> Result<()> {
    if header.count != records.len() as u64 {
        return Err(Error::invalid(format!(
            "header count {} but {} records",
            header.count,
            records.len()
        )));
    }
    let ne = header.num_elements();
    for (i, r) in records.iter().enumerate() {
        if r.params.len() != header.n_par as usize {
            return Err(Error::invalid(format!("record {i} has {} params", r.params.len())));
        }
        for kind in FieldKind::ALL {
            match (header.has(kind), r.field(kind)) {
                (true, Some(f)) if f.len() == ne => {
                    let (lo, hi) = kind.range();
                    if let Some(v) = f.iter().find(|v| !(**v >= lo && **v <= hi)) {
                        return Err(Error::invalid(format!(
                            "record {i} {} value {v} outside [{lo}, {hi}]",
                            kind.name()
                        )));
                    }
                }
                (false, None) => {}
                _ => {
                    return Err(Error::invalid(format!(
                        "record {i} {} field does not match the header",
                        kind.name()
                    )))
                }
            }
        }
    }
    Ok(())
}

/// Runs SIMP and stress post-processing for one parameter vector.
pub fn generate_record(cfg: &FamilyConfig, params: &ParamVector) -> Result<Record> {
    let inst = build_instance(cfg, params)?;
    let res = optimize(&inst, &cfg.simp)?;
    let (vm, tc) = raw_stress_fields(&res.displacement, &inst.mesh, &cfg.simp.material)?;
    let s = normalize_fields(&vm, &tc)?;
    let to32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    Ok(Record {
        params: to32(&params.values),
        density: Some(to32(&res.densities)),
        vm: Some(to32(&s.vm)),
        tc: Some(to32(&s.tc)),
        vm_scale: s.vm_scale,
        tc_scale: s.tc_scale,
    })
}

/// Rounds of replacement draws before generation gives up.
const MAX_REPLACEMENT_ROUNDS: u64 = 16;

/// Generates `count` samples from a seeded Latin hypercube.
///
/// Samples whose optimization fails, or whose parameters duplicate an
/// accepted sample, are replaced by fresh draws from a seed derived from
/// `seed` and the replacement round, so the output depends only on `seed`
/// and never on `worker_count`.
pub fn generate_dataset(cfg: &FamilyConfig, count: usize, seed: u64, worker_count: usize) -> Result<Dataset> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;

    let mut slots: Vec<Option<Record>> = vec![None; count];
    let mut pending: Vec<(usize, ParamVector)> = sample_params(cfg.family, count, seed)?
        .into_iter()
        .enumerate()
        .collect();
    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    let mut round = 0u64;
    while !pending.is_empty() {
        let results: Vec<(usize, ParamVector, Result<Record>)> = pool.install(|| {
            pending
                .into_par_iter()
                .map(|(slot, p)| {
                    let r = generate_record(cfg, &p);
                    (slot, p, r)
                })
                .collect()
        });
        let mut failed = Vec::new();
        for (slot, p, r) in results {
            match r {
                Ok(rec) => {
                    let key: Vec<u32> = rec.params.iter().map(|v| v.to_bits()).collect();
                    if seen.insert(key) {
                        slots[slot] = Some(rec);
                    } else {
                        log::warn!("sample {slot}: duplicate parameters {:?}, redrawing", p.values);
                        failed.push(slot);
                    }
                }
                Err(e) => {
                    log::warn!("sample {slot} ({:?}) failed: {e}; redrawing", p.values);
                    failed.push(slot);
                }
            }
        }
        if failed.is_empty() {
            break;
        }
        round += 1;
        if round > MAX_REPLACEMENT_ROUNDS {
            return Err(Error::OptimizerFailure {
                iteration: 0,
                message: format!(
                    "{} samples still failing after {MAX_REPLACEMENT_ROUNDS} redraws",
                    failed.len()
                ),
            });
        }
        let fresh = sample_params(cfg.family, failed.len(), replacement_seed(seed, round))?;
        pending = failed.into_iter().zip(fresh).collect();
    }
    let records: Vec<Record> = slots.into_iter().map(|r| r.expect("every slot filled")).collect();
    Ok(Dataset {
        header: DatasetHeader::for_config(cfg, count as u64, seed),
        records,
    })
}

fn replacement_seed(seed: u64, round: u64) -> u64 {
    seed ^ round.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Deterministic shuffled split; the training part gets `round(ratio·I)`
/// records.
pub fn split_train_val(dataset: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * dataset.len() as f64).round() as usize).min(dataset.len());
    Ok((dataset.subset(&idx[..n_train]), dataset.subset(&idx[n_train..])))
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    dataset.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    write_to(&mut w, dataset)?;
    w.flush()?;
    Ok(())
}

pub fn write_to<W: Write>(w: &mut W, dataset: &Dataset) -> Result<()> {
    let h = &dataset.header;
    w.write_all(&MAGIC)?;
    w.write_u32::<LE>(FORMAT_VERSION)?;
    for d in h.dims {
        w.write_u32::<LE>(d)?;
    }
    w.write_u32::<LE>(h.n_par)?;
    w.write_u64::<LE>(h.count)?;
    w.write_u32::<LE>(h.field_mask)?;
    w.write_all(&h.geometry_hash)?;
    w.write_u8(h.family.code())?;
    w.write_u8(h.normalization as u8)?;
    w.write_u16::<LE>(0)?;
    w.write_u64::<LE>(h.seed)?;
    let fields = h.fields();
    for r in &dataset.records {
        for &v in &r.params {
            w.write_f32::<LE>(v)?;
        }
        for &kind in &fields {
            for &v in r.field(kind).expect("validated") {
                w.write_f32::<LE>(v)?;
            }
        }
        w.write_f64::<LE>(r.vm_scale)?;
        w.write_f64::<LE>(r.tc_scale)?;
    }
    Ok(())
}

/// Reads a dataset, checking magic, version and record integrity.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    read_from(BufReader::new(file), Some(len))
}

/// Reads a dataset and rejects it unless it was generated with `cfg`.
pub fn read_dataset_for(path: &Path, cfg: &FamilyConfig) -> Result<Dataset> {
    let ds = read_dataset(path)?;
    if ds.header.geometry_hash != cfg.geometry_hash() {
        return Err(Error::format(
            32,
            format!(
                "geometry hash {} does not match the {} config ({})",
                hex(&ds.header.geometry_hash),
                cfg.family,
                hex(&cfg.geometry_hash())
            ),
        ));
    }
    Ok(ds)
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct Counting<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Read for Counting<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.offset += n as u64;
        Ok(n)
    }
}

impl<R: Read> Counting<R> {
    fn ctx<T>(&self, r: io::Result<T>, what: &str) -> Result<T> {
        r.map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::format(self.offset, format!("truncated while reading {what}")),
            _ => Error::Io(e),
        })
    }
}

/// Reads a dataset from any byte stream. `total_len`, when known, lets the
/// reader reject a size mismatch before decoding records.
pub fn read_from<R: Read>(reader: R, total_len: Option<u64>) -> Result<Dataset> {
    let mut r = Counting {
        inner: reader,
        offset: 0,
    };
    let mut magic = [0u8; 4];
    let res = r.read_exact(&mut magic);
    r.ctx(res, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"TOPO\"")));
    }
    let res = r.read_u32::<LE>();
    let version = r.ctx(res, "version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            4,
            format!("unsupported format version {version} (expected {FORMAT_VERSION})"),
        ));
    }
    let mut dims = [0u32; 3];
    for d in dims.iter_mut() {
        let res = r.read_u32::<LE>();
        *d = r.ctx(res, "dims")?;
    }
    let res = r.read_u32::<LE>();
    let n_par = r.ctx(res, "n_par")?;
    let res = r.read_u64::<LE>();
    let count = r.ctx(res, "record count")?;
    let res = r.read_u32::<LE>();
    let field_mask = r.ctx(res, "field mask")?;
    let mut geometry_hash = [0u8; 32];
    let res = r.read_exact(&mut geometry_hash);
    r.ctx(res, "geometry hash")?;
    let res = r.read_u8();
    let family_code = r.ctx(res, "family")?;
    let family = Family::from_code(family_code)
        .ok_or_else(|| Error::format(r.offset - 1, format!("unknown family code {family_code}")))?;
    let res = r.read_u8();
    let norm = r.ctx(res, "normalization")?;
    if norm != Normalization::PerSampleMaxAbs as u8 {
        return Err(Error::format(
            r.offset - 1,
            format!("unknown normalization mode {norm}"),
        ));
    }
    let res = r.read_u16::<LE>();
    r.ctx(res, "reserved")?;
    let res = r.read_u64::<LE>();
    let seed = r.ctx(res, "seed")?;

    if dims.contains(&0) {
        return Err(Error::format(8, format!("zero grid dimension in {dims:?}")));
    }
    if n_par as usize != family.n_par() {
        return Err(Error::format(
            20,
            format!("{family} expects {} params, header says {n_par}", family.n_par()),
        ));
    }
    if field_mask & !7 != 0 {
        return Err(Error::format(32, format!("unknown field bits in mask {field_mask:#x}")));
    }
    let header = DatasetHeader {
        family,
        dims,
        n_par,
        count,
        field_mask,
        geometry_hash,
        normalization: Normalization::PerSampleMaxAbs,
        seed,
    };
    if let Some(len) = total_len {
        let expected = header
            .record_bytes()
            .checked_mul(count)
            .and_then(|b| b.checked_add(HEADER_BYTES));
        if expected != Some(len) {
            return Err(Error::format(
                len.min(HEADER_BYTES),
                format!("file has {len} bytes but header implies {expected:?}"),
            ));
        }
    }
    let ne = header.num_elements();
    let fields = header.fields();
    let mut records = Vec::with_capacity(count.min(1 << 20) as usize);
    for i in 0..count {
        let start = r.offset;
        let mut params = vec![0f32; n_par as usize];
        let res = r.read_f32_into::<LE>(&mut params);
        r.ctx(res, "record params")?;
        let mut rec = Record {
            params,
            density: None,
            vm: None,
            tc: None,
            vm_scale: 1.0,
            tc_scale: 1.0,
        };
        for &kind in &fields {
            let mut v = vec![0f32; ne];
            let res = r.read_f32_into::<LE>(&mut v);
            r.ctx(res, kind.name())?;
            *rec.field_mut(kind) = Some(v);
        }
        let res = r.read_f64::<LE>();
        rec.vm_scale = r.ctx(res, "vm scale")?;
        let res = r.read_f64::<LE>();
        rec.tc_scale = r.ctx(res, "tc scale")?;
        if let Err(Error::InvalidArgument(msg)) = validate_records(
            &DatasetHeader {
                count: 1,
                ..header.clone()
            },
            std::slice::from_ref(&rec),
        ) {
            return Err(Error::format(start, format!("record {i}: {msg}")));
        }
        records.push(rec);
    }
    let mut probe = [0u8; 1];
    if r.inner.read(&mut probe)? != 0 {
        return Err(Error::format(r.offset, "trailing bytes after the last record"));
    }
    Ok(Dataset { header, records })
}

/// Latent codes of a dataset: one vector per present field kind and record.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDataset {
    pub latent_size: usize,
    pub params: Vec<Vec<f32>>,
    pub codes: Vec<(FieldKind, Vec<Vec<f32>>)>,
}

impl LatentDataset {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn codes_for(&self, kind: FieldKind) -> Option<&[Vec<f32>]> {
        self.codes.iter().find(|(k, _)| *k == kind).map(|(_, c)| c.as_slice())
    }

    pub fn validate(&self) -> Result<()> {
        for (kind, codes) in &self.codes {
            if codes.len() != self.params.len() {
                return Err(Error::invalid(format!("{} codes not paired with params", kind.name())));
            }
            if codes.iter().any(|c| c.len() != self.latent_size) {
                return Err(Error::invalid(format!("{} code of wrong length", kind.name())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(count: usize) -> Dataset {
        let cfg = FamilyConfig::mbb_with_grid(4, 2);
        let records = (0..count)
            .map(|i| Record {
                params: vec![i as f32, 1.0, 2.0],
                density: Some(vec![0.25 * (i % 5) as f32; 8]),
                vm: Some(vec![0.5; 8]),
                tc: Some(vec![-0.5; 8]),
                vm_scale: 3.0 + i as f64,
                tc_scale: 1.0,
            })
            .collect();
        Dataset {
            header: DatasetHeader::for_config(&cfg, count as u64, 7),
            records,
        }
    }

    #[test]
    fn round_trip_in_memory() {
        let ds = toy(3);
        let mut buf = Vec::new();
        write_to(&mut buf, &ds).unwrap();
        assert_eq!(buf.len() as u64, HEADER_BYTES + 3 * ds.header.record_bytes());
        assert_eq!(read_from(&buf[..], Some(buf.len() as u64)).unwrap(), ds);
    }

    #[test]
    fn header_only_is_valid() {
        let ds = toy(0);
        let mut buf = Vec::new();
        write_to(&mut buf, &ds).unwrap();
        assert_eq!(buf.len() as u64, HEADER_BYTES);
        assert!(read_from(&buf[..], None).unwrap().is_empty());
    }

    #[test]
    fn truncation_reports_offset() {
        let ds = toy(2);
        let mut buf = Vec::new();
        write_to(&mut buf, &ds).unwrap();
        buf.truncate(buf.len() - 3);
        match read_from(&buf[..], None).unwrap_err() {
            Error::Format { offset, .. } => assert!(offset > HEADER_BYTES),
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(
            read_from(&buf[..], Some(buf.len() as u64)).unwrap_err(),
            Error::Format { .. }
        ));
    }

    #[test]
    fn rejects_bad_version_and_magic() {
        let mut buf = Vec::new();
        write_to(&mut buf, &toy(1)).unwrap();
        let mut v = buf.clone();
        v[4] = 9;
        assert!(matches!(
            read_from(&v[..], None).unwrap_err(),
            Error::Format { offset: 4, .. }
        ));
        let mut m = buf;
        m[0] = b'X';
        assert!(matches!(
            read_from(&m[..], None).unwrap_err(),
            Error::Format { offset: 0, .. }
        ));
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let ds = toy(10);
        let (a, b) = split_train_val(&ds, 0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let mut all: Vec<f32> = a.records.iter().chain(&b.records).map(|r| r.params[0]).collect();
        all.sort_by(f32::total_cmp);
        assert_eq!(all, (0..10).map(|i| i as f32).collect::<Vec<_>>());
        assert_eq!(split_train_val(&ds, 0.8, 3).unwrap(), (a, b));
        assert!(split_train_val(&ds, 1.0, 3).is_err());
    }
}
