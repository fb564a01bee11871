//! On-disk formats: bit-packed datasets, weight checkpoints, the CSV
//! artifacts and PGM images. Writes go through [`atomic_write`].

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fitkit::FitResult;
use crate::flow::{FlowRecord, FlowTrajectory, SweepPoint};
use crate::lattice::SpinConfig;
use crate::rbm::{EpochRecord, RbmModel};
use crate::rng::PRNG_ID;
use crate::sampler::Dataset;
use crate::spectral::SpectralReport;
use crate::thermometer::{CalibrationCurve, CalibrationPoint};

pub const DATASET_MAGIC: &[u8; 4] = b"IRBM";
pub const DATASET_VERSION: u32 = 1;
pub const MODEL_MAGIC: &[u8; 4] = b"RBMW";
pub const MODEL_VERSION: u32 = 1;

/// Write to a sibling temporary file, then rename over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("not a file path: {}", path.display())))?;
    let tmp = match dir {
        Some(d) => d.join(format!(".{}.tmp", name.to_string_lossy())),
        None => Path::new(&format!(".{}.tmp", name.to_string_lossy())).to_path_buf(),
    };
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated input at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn u32_of(x: usize, what: &str) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::Format(format!("{what} = {x} does not fit in u32")))
}

/// Bits of one configuration, site `i` in bit `i % 8` of byte `i / 8`; `1` is `+1`.
pub fn pack_spins(config: &SpinConfig) -> Vec<u8> {
    let mut out = vec![0u8; config.n_sites().div_ceil(8)];
    for (i, &s) in config.spins().iter().enumerate() {
        if s > 0 {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_spins(side: usize, bytes: &[u8]) -> Result<SpinConfig> {
    let n = side * side;
    if bytes.len() != n.div_ceil(8) {
        return Err(Error::Format(format!(
            "packed configuration has {} bytes, expected {}",
            bytes.len(),
            n.div_ceil(8)
        )));
    }
    let spins = (0..n)
        .map(|i| if bytes[i / 8] >> (i % 8) & 1 == 1 { 1 } else { -1 })
        .collect();
    Ok(SpinConfig::from_raw_unchecked(side, spins))
}

/// Header: magic, version, L, N_temp, N_conf, sweeps (u32), base seed (u64),
/// PRNG id (u16 length + UTF-8); then every configuration, temperature-major.
pub fn encode_dataset(dataset: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_of(dataset.side(), "L")?.to_le_bytes());
    out.extend_from_slice(&u32_of(dataset.n_temp(), "N_temp")?.to_le_bytes());
    out.extend_from_slice(&u32_of(dataset.n_conf(), "N_conf")?.to_le_bytes());
    out.extend_from_slice(&u32_of(dataset.sweeps(), "sweeps")?.to_le_bytes());
    out.extend_from_slice(&dataset.base_seed().to_le_bytes());
    out.extend_from_slice(&(PRNG_ID.len() as u16).to_le_bytes());
    out.extend_from_slice(PRNG_ID.as_bytes());
    for block in dataset.blocks() {
        for c in block {
            out.extend_from_slice(&pack_spins(c));
        }
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    cur.magic(DATASET_MAGIC)?;
    let version = cur.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let side = cur.u32()? as usize;
    let n_temp = cur.u32()? as usize;
    let n_conf = cur.u32()? as usize;
    let sweeps = cur.u32()? as usize;
    let seed = cur.u64()?;
    let id_len = cur.u16()? as usize;
    let id = cur.take(id_len)?;
    if id != PRNG_ID.as_bytes() {
        return Err(Error::Format(format!(
            "dataset generated with PRNG {:?}, this build uses {PRNG_ID:?}",
            String::from_utf8_lossy(id)
        )));
    }
    if side < 2 {
        return Err(Error::Format(format!("lattice side {side} < 2")));
    }
    let stride = (side * side).div_ceil(8);
    let mut blocks = Vec::with_capacity(n_temp);
    for _ in 0..n_temp {
        let mut block = Vec::with_capacity(n_conf);
        for _ in 0..n_conf {
            block.push(unpack_spins(side, cur.take(stride)?)?);
        }
        blocks.push(block);
    }
    cur.finish()?;
    Dataset::from_parts(side, seed, sweeps, blocks)
}

/// Header: magic, version, N_v, N_h (u32); then `W` row-major, `b_v`, `b_h`
/// as little-endian f64.
pub fn encode_model(model: &RbmModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_of(model.n_visible(), "N_v")?.to_le_bytes());
    out.extend_from_slice(&u32_of(model.n_hidden(), "N_h")?.to_le_bytes());
    let values = model
        .weights()
        .iter()
        .chain(model.visible_bias().iter())
        .chain(model.hidden_bias().iter());
    for x in values {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<RbmModel> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    cur.magic(MODEL_MAGIC)?;
    let version = cur.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let n_v = cur.u32()? as usize;
    let n_h = cur.u32()? as usize;
    let mut read = |n: usize| (0..n).map(|_| cur.f64()).collect::<Result<Vec<f64>>>();
    let w = read(n_v * n_h)?;
    let bv = read(n_v)?;
    let bh = read(n_h)?;
    cur.finish()?;
    let w = ndarray::Array2::from_shape_vec((n_v, n_h), w)
        .map_err(|e| Error::Format(e.to_string()))?;
    RbmModel::from_parts(w, bv.into(), bh.into())
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for r in rows {
        w.write_record(&r).expect("writing to memory");
    }
    w.into_inner().expect("writing to memory")
}

fn csv_rows(bytes: &[u8], header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_reader(bytes);
    let got = r.headers().map_err(|e| Error::Format(e.to_string()))?;
    if got.iter().ne(header.iter().copied()) {
        return Err(Error::Format(format!(
            "CSV header {:?}, expected {:?}",
            got.iter().collect::<Vec<_>>(),
            header
        )));
    }
    r.records()
        .map(|rec| rec.map_err(|e| Error::Format(e.to_string())))
        .collect()
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    let s = rec
        .get(i)
        .ok_or_else(|| Error::Format(format!("missing column {i}")))?;
    s.parse()
        .map_err(|_| Error::Format(format!("cannot parse {s:?} in column {i}")))
}

const CALIBRATION_HEADER: [&str; 3] = ["T", "mean_energy", "std_energy"];

pub fn calibration_csv(curve: &CalibrationCurve) -> Vec<u8> {
    csv_bytes(
        &CALIBRATION_HEADER,
        curve.points().iter().map(|p| {
            vec![
                p.temperature.to_string(),
                p.mean_energy.to_string(),
                p.std_energy.to_string(),
            ]
        }),
    )
}

pub fn read_calibration_csv(side: usize, bytes: &[u8]) -> Result<CalibrationCurve> {
    let points = csv_rows(bytes, &CALIBRATION_HEADER)?
        .iter()
        .map(|r| {
            Ok(CalibrationPoint {
                temperature: field(r, 0)?,
                mean_energy: field(r, 1)?,
                std_energy: field(r, 2)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CalibrationCurve::from_points(side, points)
}

const TRAIN_HEADER: [&str; 3] = ["epoch", "train_err", "test_err"];

pub fn train_csv(records: &[EpochRecord]) -> Vec<u8> {
    csv_bytes(
        &TRAIN_HEADER,
        records.iter().map(|r| {
            vec![
                r.epoch.to_string(),
                r.train_err.to_string(),
                r.test_err.to_string(),
            ]
        }),
    )
}

pub fn read_train_csv(bytes: &[u8]) -> Result<Vec<EpochRecord>> {
    csv_rows(bytes, &TRAIN_HEADER)?
        .iter()
        .map(|r| {
            Ok(EpochRecord {
                epoch: field(r, 0)?,
                train_err: field(r, 1)?,
                test_err: field(r, 2)?,
            })
        })
        .collect()
}

const TRAJECTORY_HEADER: [&str; 5] = ["iter", "mean_E", "std_E", "T_est", "T_spread"];

pub fn trajectory_csv(trajectory: &FlowTrajectory) -> Vec<u8> {
    csv_bytes(
        &TRAJECTORY_HEADER,
        trajectory.records.iter().map(|r| {
            vec![
                r.iteration.to_string(),
                r.mean_energy.to_string(),
                r.std_energy.to_string(),
                r.t_estimate.to_string(),
                r.t_spread.to_string(),
            ]
        }),
    )
}

pub fn read_trajectory_csv(bytes: &[u8]) -> Result<Vec<FlowRecord>> {
    csv_rows(bytes, &TRAJECTORY_HEADER)?
        .iter()
        .map(|r| {
            Ok(FlowRecord {
                iteration: field(r, 0)?,
                mean_energy: field(r, 1)?,
                std_energy: field(r, 2)?,
                t_estimate: field(r, 3)?,
                t_spread: field(r, 4)?,
            })
        })
        .collect()
}

const SWEEP_HEADER: [&str; 5] = ["N_h", "E_star", "T_star", "converged", "iters"];

/// One row of the sweep table. Failed grid points are written with empty
/// numeric fields.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n_hidden: usize,
    pub fixed: Option<(f64, f64, bool, usize)>,
}

impl SweepRow {
    pub fn energy(&self) -> Option<f64> {
        self.fixed.map(|f| f.0)
    }
}

pub fn sweep_rows(points: &[SweepPoint]) -> Vec<SweepRow> {
    points
        .iter()
        .map(|p| SweepRow {
            n_hidden: p.n_hidden,
            fixed: p.outcome.as_ref().ok().map(|s| {
                let f = s.fixed_point;
                (f.energy, f.temperature, f.converged, f.iterations)
            }),
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> Vec<u8> {
    csv_bytes(
        &SWEEP_HEADER,
        rows.iter().map(|r| match r.fixed {
            Some((e, t, c, k)) => vec![
                r.n_hidden.to_string(),
                e.to_string(),
                t.to_string(),
                c.to_string(),
                k.to_string(),
            ],
            None => vec![
                r.n_hidden.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ],
        }),
    )
}

pub fn read_sweep_csv(bytes: &[u8]) -> Result<Vec<SweepRow>> {
    csv_rows(bytes, &SWEEP_HEADER)?
        .iter()
        .map(|r| {
            let n_hidden = field(r, 0)?;
            let fixed = if r.get(1).is_some_and(|s| s.is_empty()) {
                None
            } else {
                Some((field(r, 1)?, field(r, 2)?, field(r, 3)?, field(r, 4)?))
            };
            Ok(SweepRow { n_hidden, fixed })
        })
        .collect()
}

const SPECTRAL_HEADER: [&str; 4] = ["rank", "eigenvalue", "S_statistic", "class"];

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralRow {
    pub rank: usize,
    pub eigenvalue: f64,
    pub statistic: Option<f64>,
    pub class: Option<String>,
}

/// Rows are 1-based ranks; unclassified eigenvectors leave the last two
/// columns empty.
pub fn spectral_csv(report: &SpectralReport) -> Vec<u8> {
    csv_bytes(
        &SPECTRAL_HEADER,
        report.eigenvalues.iter().enumerate().map(|(k, l)| {
            let c = report.classification.as_ref().and_then(|c| c.get(k));
            vec![
                (k + 1).to_string(),
                l.to_string(),
                c.map_or(String::new(), |c| c.statistic.to_string()),
                c.map_or(String::new(), |c| c.class.as_str().to_string()),
            ]
        }),
    )
}

pub fn read_spectral_csv(bytes: &[u8]) -> Result<Vec<SpectralRow>> {
    csv_rows(bytes, &SPECTRAL_HEADER)?
        .iter()
        .map(|r| {
            let stat = r.get(2).unwrap_or("");
            let class = r.get(3).unwrap_or("");
            Ok(SpectralRow {
                rank: field(r, 0)?,
                eigenvalue: field(r, 1)?,
                statistic: if stat.is_empty() { None } else { Some(field(r, 2)?) },
                class: (!class.is_empty()).then(|| class.to_string()),
            })
        })
        .collect()
}

const FIT_HEADER: [&str; 5] = ["a", "b", "rss", "n_points", "cutoff"];

pub fn fit_csv(fit: &FitResult) -> Vec<u8> {
    csv_bytes(
        &FIT_HEADER,
        [vec![
            fit.a.to_string(),
            fit.b.to_string(),
            fit.rss.to_string(),
            fit.n_points.to_string(),
            fit.cutoff.to_string(),
        ]],
    )
}

/// The clamp flag is not part of the format and is recovered as `b == 0`.
pub fn read_fit_csv(bytes: &[u8]) -> Result<FitResult> {
    let rows = csv_rows(bytes, &FIT_HEADER)?;
    let [r] = rows.as_slice() else {
        return Err(Error::Format(format!("fit CSV has {} rows, expected 1", rows.len())));
    };
    let b: f64 = field(r, 1)?;
    Ok(FitResult {
        a: field(r, 0)?,
        b,
        rss: field(r, 2)?,
        n_points: field(r, 3)?,
        cutoff: field(r, 4)?,
        clamped: b == 0.0,
    })
}

/// `N_temp,E_min` input rows for the fit.
pub fn read_points_csv(bytes: &[u8]) -> Result<Vec<(f64, f64)>> {
    csv_rows(bytes, &["N_temp", "E_min"])?
        .iter()
        .map(|r| Ok((field(r, 0)?, field(r, 1)?)))
        .collect()
}

pub fn points_csv(points: &[(f64, f64)]) -> Vec<u8> {
    csv_bytes(
        &["N_temp", "E_min"],
        points.iter().map(|(n, e)| vec![n.to_string(), e.to_string()]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::sampler::{generate, DatasetSpec};
    use proptest::prelude::*;

    fn small_dataset() -> Dataset {
        let spec = DatasetSpec {
            n_conf: Some(4),
            sweeps: 3,
            ..DatasetSpec::new(5, 3, 17)
        };
        generate(&spec).unwrap()
    }

    #[test]
    fn dataset_header_layout() {
        let ds = small_dataset();
        let bytes = encode_dataset(&ds).unwrap();
        assert_eq!(&bytes[..4], b"IRBM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 17);
        let header = 34 + PRNG_ID.len();
        // 25 sites -> 4 bytes per configuration.
        assert_eq!(bytes.len(), header + 3 * 4 * 4);
        assert_eq!(decode_dataset(&bytes).unwrap(), ds);
    }

    #[test]
    fn packing_is_lsb_first() {
        let mut spins = vec![-1i8; 9];
        spins[0] = 1;
        spins[8] = 1;
        let c = SpinConfig::new(3, spins).unwrap();
        assert_eq!(pack_spins(&c), vec![0b0000_0001, 0b0000_0001]);
        assert_eq!(unpack_spins(3, &pack_spins(&c)).unwrap(), c);
    }

    #[test]
    fn corrupt_dataset_rejected() {
        let bytes = encode_dataset(&small_dataset()).unwrap();
        assert!(decode_dataset(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_dataset(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_dataset(&bad), Err(Error::Format(_))));
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(decode_dataset(&v2).is_err());
    }

    #[test]
    fn model_round_trip_and_layout() {
        let m = RbmModel::gaussian(4, 3, 0.7, &mut stream(2, &[]));
        let bytes = encode_model(&m).unwrap();
        assert_eq!(bytes.len(), 16 + 8 * (12 + 4 + 3));
        let w01 = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
        assert_eq!(w01, m.weights()[[0, 1]]);
        assert_eq!(decode_model(&bytes).unwrap(), m);
        assert!(decode_model(&bytes[..bytes.len() - 8]).is_err());
    }

    #[test]
    fn csv_headers() {
        let fit = FitResult {
            a: 0.1,
            b: 0.25,
            rss: 1e-5,
            n_points: 7,
            cutoff: 100.0,
            clamped: false,
        };
        let text = String::from_utf8(fit_csv(&fit)).unwrap();
        assert_eq!(text, "a,b,rss,n_points,cutoff\n0.1,0.25,0.00001,7,100\n");
        assert_eq!(read_fit_csv(text.as_bytes()).unwrap(), fit);
        assert!(read_fit_csv(b"a,b\n1,2\n").is_err());
    }

    #[test]
    fn sweep_rows_with_failures() {
        let rows = vec![
            SweepRow {
                n_hidden: 1,
                fixed: Some((-1.5, 2.1, true, 7)),
            },
            SweepRow {
                n_hidden: 4,
                fixed: None,
            },
        ];
        let bytes = sweep_csv(&rows);
        assert!(String::from_utf8_lossy(&bytes).starts_with("N_h,E_star,T_star,converged,iters\n"));
        assert_eq!(read_sweep_csv(&bytes).unwrap(), rows);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(atomic_write(&dir.path().join("missing/x.csv"), b"z").is_err());
    }

    proptest! {
        #[test]
        fn spins_round_trip(side in 2usize..12, seed in any::<u64>()) {
            let mut rng = stream(seed, &[]);
            use rand::Rng as _;
            let spins = (0..side * side).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
            let c = SpinConfig::new(side, spins).unwrap();
            prop_assert_eq!(unpack_spins(side, &pack_spins(&c)).unwrap(), c);
        }

        #[test]
        fn floats_round_trip_through_csv(xs in prop::collection::vec(-1e6f64..1e6, 1..20)) {
            let records: Vec<EpochRecord> = xs.iter().enumerate()
                .map(|(k, &x)| EpochRecord { epoch: k + 1, train_err: x, test_err: x / 3.0 })
                .collect();
            prop_assert_eq!(read_train_csv(&train_csv(&records)).unwrap(), records);
        }

        #[test]
        fn model_bytes_round_trip(nv in 1usize..6, nh in 1usize..6, seed in any::<u64>()) {
            let m = RbmModel::gaussian(nv, nh, 1.3, &mut stream(seed, &[]));
            prop_assert_eq!(decode_model(&encode_model(&m).unwrap()).unwrap(), m);
        }
    }
}
