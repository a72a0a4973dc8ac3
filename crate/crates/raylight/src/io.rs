//! Binary field files with text sidecars, and measurement families stored
//! as directories.
//!
//! A field `name.bin` holds little-endian `f64` pairs `(re, im)`; its sidecar
//! `name.txt` holds `key = value` lines (dims, `dt`, `T`, domain, ordering).
//! Values are written t-major, then x, then θ.

use crate::geometry::{Domain, Factor, Shape};
use crate::grid::{BoundaryRay, BoundaryTrace, PhaseField, PhaseGrid, RaySet, SpacetimeField};
use crate::inversion::MeasurementFamily;
use crate::raytransforms::Sinogram;
use crate::transport::{BoundaryData, Measurement, Modulation};
use crate::{Error, Result, C64};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

pub const ORDERING: &str = "t-major, then x, then θ";
pub const ENCODING: &str = "little-endian f64 pairs (re, im)";

/// Ordered `key = value` metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sidecar {
    pub entries: Vec<(String, String)>,
}

impl Sidecar {
    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let v = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = v,
            None => self.entries.push((key.to_string(), v)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Format(format!("sidecar lacks `{key}`")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v = self.require(key)?;
        v.parse().map_err(|_| Error::Format(format!("`{key}` = {v} is not a number")))
    }

    pub fn dims(&self) -> Result<Vec<usize>> {
        self.require("dims")?
            .split_whitespace()
            .map(|d| d.parse().map_err(|_| Error::Format(format!("bad dims entry {d}"))))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Sidecar> {
        let mut out = Sidecar::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("sidecar line {}: expected `key = value`", n + 1)))?;
            out.entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}

/// `name.bin` → `name.txt`.
pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("txt")
}

/// Human-readable, parseable description of a domain.
pub fn domain_spec(dom: &Domain) -> String {
    let shape = match dom.shape {
        Shape::Disk { radius } => format!("disk radius={radius}"),
        Shape::Ellipse { a, b } => format!("ellipse a={a} b={b}"),
    };
    match &dom.factor {
        None => shape,
        Some(Factor::Quadratic { k }) => format!("{shape} conformal=quadratic k={k}"),
        Some(Factor::Gaussian { amplitude, center, width }) => {
            format!("{shape} conformal=gaussian amplitude={amplitude} center={},{} width={width}", center[0], center[1])
        }
        Some(Factor::Custom(_)) => format!("{shape} conformal=custom"),
    }
}

fn grid_sidecar(kind: &str, grid: &PhaseGrid, dims: &[usize], axes: &str) -> Sidecar {
    let mut s = Sidecar::default();
    s.set("kind", kind)
        .set("dims", dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" "))
        .set("axes", axes)
        .set("dt", grid.dt)
        .set("T", grid.t_final)
        .set("domain", domain_spec(&grid.domain))
        .set("ordering", ORDERING)
        .set("encoding", ENCODING);
    s
}

pub fn write_values(path: &Path, values: impl Iterator<Item = C64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in values {
        w.write_all(&v.re.to_le_bytes())?;
        w.write_all(&v.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_values(path: &Path) -> Result<Vec<C64>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 16 != 0 {
        return Err(Error::Format(format!("{}: {} bytes is not a whole number of complex values", path.display(), bytes.len())));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            C64::new(re, im)
        })
        .collect())
}

/// Writes `name.bin` and its sidecar.
pub fn write_field(path: &Path, sidecar: &Sidecar, values: impl Iterator<Item = C64>) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    write_values(path, values)?;
    fs::write(sidecar_path(path), sidecar.to_text())?;
    Ok(())
}

/// Reads a field and its sidecar, checking the value count against `dims`.
pub fn read_field(path: &Path) -> Result<(Sidecar, Vec<C64>)> {
    let side = Sidecar::parse(&fs::read_to_string(sidecar_path(path))?)?;
    let values = read_values(path)?;
    let n: usize = side.dims()?.iter().product();
    if n != values.len() {
        return Err(Error::Format(format!("{}: dims give {n} values, file has {}", path.display(), values.len())));
    }
    Ok((side, values))
}

fn expect_kind(side: &Sidecar, kind: &str) -> Result<()> {
    let k = side.require("kind")?;
    if k != kind {
        return Err(Error::Format(format!("expected a {kind} field, found {k}")));
    }
    Ok(())
}

fn expect_dims(side: &Sidecar, dims: &[usize]) -> Result<()> {
    let d = side.dims()?;
    if d != dims {
        return Err(Error::ShapeMismatch(format!("file dims {d:?}, grid dims {dims:?}")));
    }
    Ok(())
}

pub fn write_phase_field(path: &Path, grid: &PhaseGrid, f: &PhaseField) -> Result<()> {
    grid.check(f)?;
    let (nt, nx, nth) = (grid.nt, grid.nx(), grid.ntheta);
    let side = grid_sidecar("phase", grid, &[nt, nx, nth], "t x theta");
    let it = (0..nt).flat_map(move |k| (0..nx).flat_map(move |i| (0..nth).map(move |j| f.get(k, i, j))));
    write_field(path, &side, it)
}

pub fn read_phase_field(path: &Path, grid: &PhaseGrid) -> Result<PhaseField> {
    let (side, v) = read_field(path)?;
    expect_kind(&side, "phase")?;
    let (nt, nx, nth) = (grid.nt, grid.nx(), grid.ntheta);
    expect_dims(&side, &[nt, nx, nth])?;
    let mut f = PhaseField::zeros(grid);
    for k in 0..nt {
        for i in 0..nx {
            for j in 0..nth {
                f.set(k, i, j, v[(k * nx + i) * nth + j]);
            }
        }
    }
    Ok(f)
}

pub fn write_spacetime_field(path: &Path, grid: &PhaseGrid, f: &SpacetimeField) -> Result<()> {
    if f.nt != grid.nt || f.nx != grid.nx() {
        return Err(Error::ShapeMismatch(format!("field ({}, {}) vs grid ({}, {})", f.nt, f.nx, grid.nt, grid.nx())));
    }
    let (nt, nx) = (grid.nt, grid.nx());
    let side = grid_sidecar("spacetime", grid, &[nt, nx], "t x");
    write_field(path, &side, (0..nt).flat_map(move |k| (0..nx).map(move |i| f.get(k, i))))
}

pub fn read_spacetime_field(path: &Path, grid: &PhaseGrid) -> Result<SpacetimeField> {
    let (side, v) = read_field(path)?;
    expect_kind(&side, "spacetime")?;
    let (nt, nx) = (grid.nt, grid.nx());
    expect_dims(&side, &[nt, nx])?;
    let mut f = SpacetimeField::zeros(grid);
    for k in 0..nt {
        for i in 0..nx {
            f.set(k, i, v[k * nx + i]);
        }
    }
    Ok(f)
}

fn put_rays(side: &mut Sidecar, dom: &Domain, rays: &RaySet) -> Result<()> {
    side.set("rays", rays.len()).set("ray_boundary_count", rays.n_boundary).set("ray_columns", "y0 y1 theta phi alpha weight tau");
    for (r, ray) in rays.rays.iter().enumerate() {
        let tau = dom.exit_times(ray.incoming())?.0;
        side.set(
            &format!("ray.{r}"),
            format!("{:e} {:e} {:e} {:e} {:e} {:e} {:e}", ray.y[0], ray.y[1], ray.theta, ray.phi, ray.alpha, ray.weight, tau),
        );
    }
    Ok(())
}

fn get_rays(side: &Sidecar) -> Result<RaySet> {
    let n: usize = side.f64("rays")? as usize;
    let nb = side.f64("ray_boundary_count")? as usize;
    let mut rays = Vec::with_capacity(n);
    for r in 0..n {
        let v: Vec<f64> = side
            .require(&format!("ray.{r}"))?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::Format(format!("ray {r}: bad number {s}"))))
            .collect::<Result<_>>()?;
        if v.len() != 7 {
            return Err(Error::Format(format!("ray {r}: expected 7 columns")));
        }
        rays.push(BoundaryRay { y: [v[0], v[1]], theta: v[2], phi: v[3], alpha: v[4], weight: v[5] });
    }
    Ok(RaySet { rays, n_boundary: nb })
}

/// Sinogram values `[ray][time]` written time-major, with the rays manifest
/// (entry point, angle, exit time) in the sidecar.
pub fn write_sinogram(path: &Path, grid: &PhaseGrid, s: &Sinogram) -> Result<()> {
    let nr = s.rays.len();
    let nt = s.nt();
    let mut side = grid_sidecar("sinogram", grid, &[nt, nr], "t ray");
    side.set("weight", &s.weight_id);
    if let Some(t) = &s.times {
        side.set("times_start", t[0]).set("times_step", if t.len() > 1 { t[1] - t[0] } else { grid.dt });
    }
    put_rays(&mut side, &grid.domain, &s.rays)?;
    write_field(path, &side, (0..nt).flat_map(move |n| (0..nr).map(move |r| s.values[r * nt + n])))
}

pub fn read_sinogram(path: &Path) -> Result<Sinogram> {
    let (side, v) = read_field(path)?;
    expect_kind(&side, "sinogram")?;
    let d = side.dims()?;
    let (nt, nr) = (d[0], d[1]);
    let rays = get_rays(&side)?;
    if rays.len() != nr {
        return Err(Error::Format(format!("{} rays listed, dims say {nr}", rays.len())));
    }
    let times = match side.get("times_start") {
        None => None,
        Some(_) => {
            let (t0, dt) = (side.f64("times_start")?, side.f64("times_step")?);
            Some((0..nt).map(|n| t0 + n as f64 * dt).collect())
        }
    };
    let mut values = vec![C64::new(0.0, 0.0); nr * nt];
    for n in 0..nt {
        for r in 0..nr {
            values[r * nt + n] = v[n * nr + r];
        }
    }
    Ok(Sinogram { rays, times, values, weight_id: side.get("weight").unwrap_or("").to_string() })
}

/// A measurement as one file: the final state (x, then θ) followed by the
/// outgoing trace (t-major, then ray).
pub fn write_measurement(path: &Path, grid: &PhaseGrid, rays: &RaySet, m: &Measurement) -> Result<()> {
    let (nt, nx, nth, nr) = (grid.nt, grid.nx(), grid.ntheta, rays.len());
    if m.final_values.len() != nx * nth || m.outgoing.nrays != nr || m.outgoing.nt != nt {
        return Err(Error::ShapeMismatch("measurement does not match grid and rays".into()));
    }
    let mut side = grid_sidecar("measurement", grid, &[nx * nth + nt * nr], "final(x theta) outgoing(t ray)");
    side.set("final_dims", format!("{nx} {nth}")).set("outgoing_dims", format!("{nt} {nr}"));
    put_rays(&mut side, &grid.domain, rays)?;
    let fin = (0..nx).flat_map(move |i| (0..nth).map(move |j| m.final_values[j * nx + i]));
    let out = (0..nt).flat_map(move |k| (0..nr).map(move |r| m.outgoing.data[r * nt + k]));
    write_field(path, &side, fin.chain(out))
}

pub fn read_measurement(path: &Path, grid: &PhaseGrid, rays: &RaySet) -> Result<Measurement> {
    let (side, v) = read_field(path)?;
    expect_kind(&side, "measurement")?;
    let (nt, nx, nth, nr) = (grid.nt, grid.nx(), grid.ntheta, rays.len());
    expect_dims(&side, &[nx * nth + nt * nr])?;
    let mut m = Measurement { final_values: vec![C64::new(0.0, 0.0); nx * nth], outgoing: BoundaryTrace::zeros(nr, nt) };
    for i in 0..nx {
        for j in 0..nth {
            m.final_values[j * nx + i] = v[i * nth + j];
        }
    }
    let off = nx * nth;
    for k in 0..nt {
        for r in 0..nr {
            m.outgoing.data[r * nt + k] = v[off + k * nr + r];
        }
    }
    Ok(m)
}

/// One stored measurement: `𝒜(eps·h_probe)`; `rung` numbers the amplitudes
/// of a probe in the order they were taken.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilyEntry {
    pub probe: String,
    pub eps: f64,
    pub rung: usize,
    pub file: String,
}

pub const MANIFEST: &str = "manifest.csv";

pub fn write_manifest(dir: &Path, entries: &[FamilyEntry]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join(MANIFEST))?);
    writeln!(w, "probe,eps,rung,file")?;
    for e in entries {
        if e.probe.contains(',') || e.file.contains(',') {
            return Err(Error::Format(format!("probe id or file name contains a comma: {}", e.probe)));
        }
        writeln!(w, "{},{:e},{},{}", e.probe, e.eps, e.rung, e.file)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<FamilyEntry>> {
    let f = BufReader::new(File::open(dir.join(MANIFEST))?);
    let mut out = Vec::new();
    for (n, line) in f.lines().enumerate() {
        let line = line?;
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(Error::Format(format!("manifest line {}: expected 4 columns", n + 1)));
        }
        let bad = |what: &str| Error::Format(format!("manifest line {}: bad {what}", n + 1));
        out.push(FamilyEntry {
            probe: cols[0].to_string(),
            eps: cols[1].parse().map_err(|_| bad("eps"))?,
            rung: cols[2].parse().map_err(|_| bad("rung"))?,
            file: cols[3].to_string(),
        });
    }
    Ok(out)
}

fn same_amp(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Measurements read from a directory with a manifest.
pub struct DirectoryFamily<'a> {
    pub dir: PathBuf,
    pub grid: &'a PhaseGrid,
    pub rays: RaySet,
    pub entries: Vec<FamilyEntry>,
}

impl<'a> DirectoryFamily<'a> {
    pub fn open(dir: &Path, grid: &'a PhaseGrid, rays: &RaySet) -> Result<DirectoryFamily<'a>> {
        let entries = read_manifest(dir)?;
        for e in &entries {
            if !dir.join(&e.file).exists() {
                return Err(Error::Format(format!("manifest lists missing file {}", e.file)));
            }
        }
        Ok(DirectoryFamily { dir: dir.to_path_buf(), grid, rays: rays.clone(), entries })
    }
}

impl MeasurementFamily for DirectoryFamily<'_> {
    fn rays(&self) -> &RaySet {
        &self.rays
    }

    fn measure(&self, id: &str, _data: &BoundaryData, amp: f64, _frame: Option<&Modulation>) -> Result<Measurement> {
        let e = self
            .entries
            .iter()
            .find(|e| e.probe == id && same_amp(e.eps, amp))
            .ok_or_else(|| Error::Format(format!("no stored measurement for probe {id} at amplitude {amp:e}")))?;
        read_measurement(&self.dir.join(&e.file), self.grid, &self.rays)
    }
}

/// Passes measurements through from another family and stores each one in a
/// directory; [`RecordingFamily::finish`] writes the manifest.
pub struct RecordingFamily<'a, F: MeasurementFamily> {
    pub inner: F,
    pub dir: PathBuf,
    pub grid: &'a PhaseGrid,
    entries: Mutex<Vec<FamilyEntry>>,
}

impl<'a, F: MeasurementFamily> RecordingFamily<'a, F> {
    pub fn new(inner: F, dir: &Path, grid: &'a PhaseGrid) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(RecordingFamily { inner, dir: dir.to_path_buf(), grid, entries: Mutex::new(Vec::new()) })
    }

    /// Writes the manifest, sorted by probe and rung so that it does not
    /// depend on the order in which parallel probes finished.
    pub fn finish(self) -> Result<Vec<FamilyEntry>> {
        let mut entries = self.entries.into_inner().unwrap_or_else(|p| p.into_inner());
        entries.sort_by(|a, b| a.probe.cmp(&b.probe).then(a.eps.total_cmp(&b.eps)));
        let mut last: Option<String> = None;
        let mut rung = 0;
        for e in entries.iter_mut() {
            if last.as_deref() == Some(e.probe.as_str()) {
                rung += 1;
            } else {
                rung = 0;
                last = Some(e.probe.clone());
            }
            e.rung = rung;
        }
        write_manifest(&self.dir, &entries)?;
        Ok(entries)
    }
}

impl<F: MeasurementFamily> MeasurementFamily for RecordingFamily<'_, F> {
    fn rays(&self) -> &RaySet {
        self.inner.rays()
    }

    fn measure(&self, id: &str, data: &BoundaryData, amp: f64, frame: Option<&Modulation>) -> Result<Measurement> {
        let m = self.inner.measure(id, data, amp, frame)?;
        let file = format!("{id}_{amp:e}.bin").replace(['/', '\\', ' '], "_");
        write_measurement(&self.dir.join(&file), self.grid, self.inner.rays(), &m)?;
        let mut g = self.entries.lock().unwrap_or_else(|p| p.into_inner());
        if !g.iter().any(|e| e.probe == id && same_amp(e.eps, amp)) {
            g.push(FamilyEntry { probe: id.to_string(), eps: amp, rung: 0, file });
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_round_trip() {
        let mut s = Sidecar::default();
        s.set("dims", "3 4").set("dt", 0.25).set("domain", "disk radius=1");
        let back = Sidecar::parse(&s.to_text()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.dims().unwrap(), vec![3, 4]);
        assert_eq!(back.f64("dt").unwrap(), 0.25);
        assert!(Sidecar::parse("no equals sign").is_err());
    }
}
