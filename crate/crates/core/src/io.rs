//! File formats: "WGA1" binary complex grids and plain CSV tables.
//!
//! Floating-point text output uses 17 significant digits, so every value
//! survives a write/read cycle exactly.

use std::io::{Read, Write};

use crate::ab_pipeline::{DensityMap, DensitySample};
use crate::design::LatticeGeometry;
use crate::dynamics::AmplitudeField;
use crate::error::{Error, Result};
use crate::spacetime::SampledField;
use crate::states::SpinorField;
use crate::C64;

pub const WGA1_MAGIC: &[u8; 4] = b"WGA1";

/// Formats with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Snapshots of equal shape, `rows × cols` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrids {
    pub rows: usize,
    pub cols: usize,
    pub snapshots: Vec<Vec<C64>>,
}

impl ComplexGrids {
    pub fn from_amplitudes(fields: &[AmplitudeField]) -> Result<Self> {
        let first = fields.first().ok_or_else(|| Error::Format("no snapshots to write".into()))?;
        if fields.iter().any(|f| f.rows != first.rows || f.cols != first.cols) {
            return Err(Error::Format("snapshots differ in shape".into()));
        }
        Ok(Self { rows: first.rows, cols: first.cols, snapshots: fields.iter().map(|f| f.values.clone()).collect() })
    }

    /// Spinors stored with the two components interleaved along each row.
    pub fn from_spinors(fields: &[SpinorField]) -> Result<Self> {
        let first = fields.first().ok_or_else(|| Error::Format("no snapshots to write".into()))?;
        let g = first.geometry;
        if fields.iter().any(|f| f.geometry != g) {
            return Err(Error::Format("snapshots differ in shape".into()));
        }
        Ok(Self {
            rows: g.ny,
            cols: 2 * g.nx,
            snapshots: fields.iter().map(|f| f.values.iter().flat_map(|v| [v[0], v[1]]).collect()).collect(),
        })
    }

    pub fn to_amplitudes(&self) -> Vec<AmplitudeField> {
        self.snapshots.iter().map(|s| AmplitudeField::new(self.cols, self.rows, s.clone(), 0.0)).collect()
    }

    pub fn to_spinors(&self, geometry: LatticeGeometry) -> Result<Vec<SpinorField>> {
        if self.rows != geometry.ny || self.cols != 2 * geometry.nx {
            return Err(Error::Format("grid shape does not match the spinor geometry".into()));
        }
        self.snapshots
            .iter()
            .map(|s| SpinorField::new(geometry, s.chunks(2).map(|c| [c[0], c[1]]).collect()))
            .collect()
    }
}

pub fn write_wga1(mut w: impl Write, grids: &ComplexGrids) -> Result<()> {
    w.write_all(WGA1_MAGIC)?;
    for v in [grids.snapshots.len(), grids.rows, grids.cols] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(16 * grids.rows * grids.cols);
    for s in &grids.snapshots {
        if s.len() != grids.rows * grids.cols {
            return Err(Error::Format("snapshot length does not match rows × cols".into()));
        }
        buf.clear();
        for c in s {
            buf.extend_from_slice(&c.re.to_le_bytes());
            buf.extend_from_slice(&c.im.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_wga1(mut r: impl Read) -> Result<ComplexGrids> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != WGA1_MAGIC {
        return Err(Error::Format("missing WGA1 magic".into()));
    }
    let mut header = [0usize; 3];
    for h in &mut header {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        *h = usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Format("header too large".into()))?;
    }
    let [count, rows, cols] = header;
    let per = rows.checked_mul(cols).ok_or_else(|| Error::Format("grid too large".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * per * 16 {
        return Err(Error::Format(format!("expected {} payload bytes, found {}", count * per * 16, bytes.len())));
    }
    let f = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().expect("8-byte slice"));
    let snapshots = (0..count)
        .map(|s| (0..per).map(|k| { let o = (s * per + k) * 16; C64::new(f(o), f(o + 8)) }).collect())
        .collect();
    Ok(ComplexGrids { rows, cols, snapshots })
}

fn writer(w: impl Write, header: &[&str]) -> Result<csv::Writer<impl Write>> {
    let mut wr = csv::WriterBuilder::new().from_writer(w);
    wr.write_record(header).map_err(csv_err)?;
    Ok(wr)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Reads a numeric CSV with the expected header into rows of `f64`.
fn read_table(r: impl Read, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rd = csv::ReaderBuilder::new().from_reader(r);
    let h = rd.headers().map_err(csv_err)?;
    if h.iter().collect::<Vec<_>>() != header {
        return Err(Error::Format(format!("expected header {}, found {}", header.join(","), h.iter().collect::<Vec<_>>().join(","))));
    }
    rd.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            rec.iter()
                .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Format(format!("not a number: {s:?}"))))
                .collect()
        })
        .collect()
}

/// Real waveguide grid as `a,b,value`.
pub fn write_site_csv(w: impl Write, cols: usize, values: &[f64]) -> Result<()> {
    let mut wr = writer(w, &["a", "b", "value"])?;
    for (i, v) in values.iter().enumerate() {
        wr.write_record([(i % cols).to_string(), (i / cols).to_string(), fmt17(*v)]).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_site_csv(r: impl Read) -> Result<(usize, usize, Vec<f64>)> {
    let rows = read_table(r, &["a", "b", "value"])?;
    let cols = rows.iter().map(|r| r[0] as usize + 1).max().unwrap_or(0);
    let nrows = rows.iter().map(|r| r[1] as usize + 1).max().unwrap_or(0);
    let mut v = vec![0.0; cols * nrows];
    for r in rows {
        v[r[1] as usize * cols + r[0] as usize] = r[2];
    }
    Ok((cols, nrows, v))
}

/// Spinor snapshot as `n,m,re1,im1,re2,im2`.
pub fn write_spinor_csv(w: impl Write, field: &SpinorField) -> Result<()> {
    let mut wr = writer(w, &["n", "m", "re1", "im1", "re2", "im2"])?;
    let nx = field.geometry.nx;
    for (i, v) in field.values.iter().enumerate() {
        wr.write_record([
            (i % nx).to_string(),
            (i / nx).to_string(),
            fmt17(v[0].re),
            fmt17(v[0].im),
            fmt17(v[1].re),
            fmt17(v[1].im),
        ])
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_spinor_csv(r: impl Read, geometry: LatticeGeometry) -> Result<SpinorField> {
    let rows = read_table(r, &["n", "m", "re1", "im1", "re2", "im2"])?;
    let mut f = SpinorField::zeros(geometry);
    for r in rows {
        let (n, m) = (r[0] as usize, r[1] as usize);
        if n >= geometry.nx || m >= geometry.ny {
            return Err(Error::Format(format!("site ({n}, {m}) outside the grid")));
        }
        f.values[m * geometry.nx + n] = [C64::new(r[2], r[3]), C64::new(r[4], r[5])];
    }
    Ok(f)
}

pub fn write_density_csv(w: impl Write, map: &DensityMap) -> Result<()> {
    let mut wr = writer(w, &["z1", "z2", "rho"])?;
    for s in &map.samples {
        wr.write_record([fmt17(s.z[0]), fmt17(s.z[1]), fmt17(s.rho)]).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_density_csv(r: impl Read) -> Result<DensityMap> {
    let samples = read_table(r, &["z1", "z2", "rho"])?
        .into_iter()
        .map(|r| DensitySample { z: [r[0], r[1]], rho: r[2] })
        .collect();
    Ok(DensityMap { samples, dropped: 0 })
}

pub fn write_curve_csv(w: impl Write, curve: &[(f64, f64)]) -> Result<()> {
    let mut wr = writer(w, &["delta", "residual"])?;
    for (d, r) in curve {
        wr.write_record([fmt17(*d), fmt17(*r)]).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_curve_csv(r: impl Read) -> Result<Vec<(f64, f64)>> {
    Ok(read_table(r, &["delta", "residual"])?.into_iter().map(|r| (r[0], r[1])).collect())
}

/// Regular-grid scalar samples as `x,y,value`, `x` varying fastest.
pub fn read_sampled_field_csv(r: impl Read) -> Result<SampledField> {
    let rows = read_table(r, &["x", "y", "value"])?;
    let mut xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let mut ys: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    for v in [&mut xs, &mut ys] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    let (nx, ny) = (xs.len(), ys.len());
    if nx < 2 || ny < 2 || nx * ny != rows.len() {
        return Err(Error::Format("sampled field is not a complete regular grid".into()));
    }
    let (hx, hy) = ((xs[nx - 1] - xs[0]) / (nx - 1) as f64, (ys[ny - 1] - ys[0]) / (ny - 1) as f64);
    let mut values = vec![f64::NAN; nx * ny];
    for r in &rows {
        let ix = ((r[0] - xs[0]) / hx).round() as usize;
        let iy = ((r[1] - ys[0]) / hy).round() as usize;
        if (xs[0] + ix as f64 * hx - r[0]).abs() > 1e-9 * hx.max(1.0) || (ys[0] + iy as f64 * hy - r[1]).abs() > 1e-9 * hy.max(1.0) {
            return Err(Error::Format("sampled field spacing is not uniform".into()));
        }
        values[iy * nx + ix] = r[2];
    }
    let field = SampledField { x0: xs[0], y0: ys[0], hx, hy, nx, ny, values };
    field.validate()?;
    Ok(field)
}

pub fn write_sampled_field_csv(w: impl Write, field: &SampledField) -> Result<()> {
    let mut wr = writer(w, &["x", "y", "value"])?;
    for iy in 0..field.ny {
        for ix in 0..field.nx {
            let x = field.x0 + ix as f64 * field.hx;
            let y = field.y0 + iy as f64 * field.hy;
            wr.write_record([fmt17(x), fmt17(y), fmt17(field.values[iy * field.nx + ix])]).map_err(csv_err)?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wga1_layout() {
        let f = AmplitudeField::new(2, 1, vec![C64::new(1.0, -2.0), C64::new(0.5, 0.25)], 0.0);
        let mut buf = Vec::new();
        write_wga1(&mut buf, &ComplexGrids::from_amplitudes(&[f.clone()]).unwrap()).unwrap();
        assert_eq!(&buf[..4], b"WGA1");
        assert_eq!(u64::from_le_bytes(buf[4..12].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[20..28].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[28..36].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(buf[36..44].try_into().unwrap()), -2.0);
        assert_eq!(buf.len(), 28 + 32);
        assert_eq!(read_wga1(&buf[..]).unwrap().to_amplitudes()[0].values, f.values);
        assert!(read_wga1(&buf[..40]).is_err());
        assert!(read_wga1(&b"WGA2"[..]).is_err());
    }

    #[test]
    fn fmt17_is_exact() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt17(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn csv_headers_checked() {
        assert!(read_curve_csv(&b"d,r\n0.1,2\n"[..]).is_err());
        assert!(read_curve_csv(&b"delta,residual\n0.1,x\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn text_tables_are_lossless(vals in proptest::collection::vec(-1e6f64..1e6, 8)) {
            let g = LatticeGeometry::new(4, 4, 1.0, 1.0).unwrap();
            let mut s = SpinorField::zeros(g);
            for (i, v) in vals.iter().enumerate() {
                s.values[i] = [C64::new(*v, -v / 3.0), C64::new(v * 1e-7, 0.1)];
            }
            let mut buf = Vec::new();
            write_spinor_csv(&mut buf, &s).unwrap();
            prop_assert_eq!(read_spinor_csv(&buf[..], g).unwrap(), s);
            let curve: Vec<(f64, f64)> = vals.iter().map(|v| (v / 7.0, v * v)).collect();
            let mut buf = Vec::new();
            write_curve_csv(&mut buf, &curve).unwrap();
            prop_assert_eq!(read_curve_csv(&buf[..]).unwrap(), curve);
        }
    }
}
