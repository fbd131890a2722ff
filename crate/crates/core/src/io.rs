//! File formats: atlas and field JSON, CSV tables, PGM images.
//!
//! JSON objects are written with sorted keys and shortest round-trip float
//! formatting, CSV floats in fixed-width scientific notation with 17
//! significant digits, so equal inputs give identical bytes.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::asymptotics::ExpansionBundle;
use crate::error::{Error, Result};
use crate::field::{Grid, SpectralField};
use crate::newton::SolveReport;
use crate::operator::{BlockRow, Region, SplitLabels};
use crate::quasilattice::{build_atlas, AtlasHeader, Census, DivisorSpectrum, LatticeAtlas};
use crate::ring::Canon;

/// Pretty JSON with keys sorted at every level.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

/// `{:.16e}`: 17 significant digits.
pub fn sci(x: f64) -> String {
    format!("{x:.16e}")
}

fn canon_vec(atlas: &LatticeAtlas, c: &Canon) -> Vec<i64> {
    c.coords(atlas.basis().dim()).iter().map(|&v| v as i64).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SiteRecord {
    pub canon: Vec<i64>,
    pub word: Vec<i32>,
    pub x: f64,
    pub y: f64,
    /// Coefficients of `|k|²` in powers of `ω`.
    pub norm2_coeffs: Vec<f64>,
    pub n: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtlasFile {
    pub header: AtlasHeader,
    pub sites: Vec<SiteRecord>,
}

pub fn atlas_file(atlas: &LatticeAtlas) -> AtlasFile {
    let deg = atlas.ring().degree();
    let sites = atlas
        .sites()
        .iter()
        .map(|s| {
            let den = s.norm2.denominator() as f64;
            SiteRecord {
                canon: canon_vec(atlas, &s.canon),
                word: s.word.clone(),
                x: s.embed[0],
                y: s.embed[1],
                norm2_coeffs: s.norm2.numerator()[..deg].iter().map(|&c| c as f64 / den).collect(),
                n: s.n_word,
            }
        })
        .collect();
    AtlasFile { header: atlas.header(), sites }
}

pub fn atlas_json(atlas: &LatticeAtlas) -> Result<String> {
    to_json(&atlas_file(atlas))
}

pub fn census_csv(census: &Census) -> String {
    let mut s = String::from("N,count\n");
    for (n, c) in census.counts.iter().enumerate() {
        s.push_str(&format!("{n},{c}\n"));
    }
    s
}

fn canon_text(atlas: &LatticeAtlas, c: &Canon) -> String {
    canon_vec(atlas, c).iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn divisors_csv(atlas: &LatticeAtlas, spectrum: &DivisorSpectrum) -> String {
    let mut s = String::from("N,min_divisor,site_canon\n");
    for row in &spectrum.rows {
        s.push_str(&format!("{},{},{}\n", row.n, sci(row.min), canon_text(atlas, &atlas.site(row.site).canon)));
    }
    s
}

/// Rebuilds the atlas described by a header and checks its minimal polynomial.
pub fn atlas_from_header(header: &AtlasHeader) -> Result<Arc<LatticeAtlas>> {
    let atlas = build_atlas(header.q, header.n_max, header.k_cut)?;
    if atlas.header().min_poly != header.min_poly {
        return Err(Error::Format(format!("minimal polynomial {:?} does not match q = {}", header.min_poly, header.q)));
    }
    Ok(Arc::new(atlas))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoeffRecord {
    pub canon: Vec<i64>,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldFile {
    pub atlas_header: AtlasHeader,
    pub coeffs: Vec<CoeffRecord>,
}

impl FieldFile {
    pub fn new(field: &SpectralField) -> Self {
        let atlas = field.atlas();
        FieldFile {
            atlas_header: atlas.header(),
            coeffs: field
                .iter()
                .map(|(i, value)| CoeffRecord { canon: canon_vec(atlas, &atlas.site(i).canon), value })
                .collect(),
        }
    }

    /// The field on a freshly built atlas.
    pub fn to_field(&self) -> Result<SpectralField> {
        self.to_field_on(&atlas_from_header(&self.atlas_header)?)
    }

    /// The field on an existing atlas; every listed site must belong to it.
    pub fn to_field_on(&self, atlas: &Arc<LatticeAtlas>) -> Result<SpectralField> {
        if atlas.q() != self.atlas_header.q {
            return Err(Error::AtlasMismatch);
        }
        let mut pairs = Vec::with_capacity(self.coeffs.len());
        for c in &self.coeffs {
            if !c.value.is_finite() {
                return Err(Error::Format("non-finite coefficient".into()));
            }
            let key = Canon::from_coords(&c.canon)?;
            let i = atlas.index_of(&key).ok_or_else(|| Error::NotInAtlas(format!("{:?}", c.canon)))?;
            pairs.push((i, c.value));
        }
        Ok(SpectralField::from_pairs(atlas.clone(), pairs))
    }
}

pub fn field_json(field: &SpectralField) -> Result<String> {
    to_json(&FieldFile::new(field))
}

pub fn read_field_json(text: &str) -> Result<SpectralField> {
    serde_json::from_str::<FieldFile>(text)?.to_field()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleFile {
    pub q: u32,
    pub lambda2: f64,
    pub lambda4: f64,
    pub u0: FieldFile,
    pub u1: FieldFile,
    pub u2: FieldFile,
    pub a: FieldFile,
    pub b: FieldFile,
}

pub fn bundle_file(b: &ExpansionBundle) -> BundleFile {
    BundleFile {
        q: b.q,
        lambda2: b.lambda2,
        lambda4: b.lambda4,
        u0: FieldFile::new(&b.u0),
        u1: FieldFile::new(&b.u1),
        u2: FieldFile::new(&b.u2),
        a: FieldFile::new(&b.a_field),
        b: FieldFile::new(&b.b_field),
    }
}

/// Field file plus the solver report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionFile {
    pub atlas_header: AtlasHeader,
    pub coeffs: Vec<CoeffRecord>,
    pub report: SolveReport,
}

impl SolutionFile {
    pub fn new(field: &SpectralField, report: SolveReport) -> Self {
        let f = FieldFile::new(field);
        SolutionFile { atlas_header: f.atlas_header, coeffs: f.coeffs, report }
    }

    pub fn field_file(&self) -> FieldFile {
        FieldFile { atlas_header: self.atlas_header.clone(), coeffs: self.coeffs.clone() }
    }
}

fn region_value(r: Region) -> Value {
    match r {
        Region::Far => serde_json::json!({"region": "far"}),
        Region::Annulus => serde_json::json!({"region": "annulus"}),
        Region::Disc(j) => serde_json::json!({"region": "disc", "disc": j + 1}),
    }
}

/// Label map: one record per site with its key and region.
pub fn labels_json(labels: &SplitLabels) -> Result<String> {
    let atlas = labels.atlas();
    let sites: Vec<Value> = (0..atlas.len())
        .map(|i| {
            let mut v = region_value(labels.region(i));
            v["canon"] = serde_json::json!(canon_vec(atlas, &atlas.site(i).canon));
            v
        })
        .collect();
    let counts = labels.counts();
    to_json(&serde_json::json!({
        "atlas_header": atlas.header(),
        "epsilon": labels.epsilon,
        "c": labels.c,
        "delta": labels.delta,
        "delta1": labels.delta1,
        "counts": {"far": counts[0], "annulus": counts[1], "disc": counts[2]},
        "sites": sites,
    }))
}

pub fn blocks_csv(rows: &[BlockRow]) -> String {
    let mut s = String::from("eps,kprime_x,kprime_y,j,beta_j,mu_j,mu_j_minus_beta_minus_3eps2\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            sci(r.eps),
            sci(r.kprime_x),
            sci(r.kprime_y),
            r.j,
            sci(r.beta_j),
            sci(r.mu_j),
            sci(r.mu_j_minus_beta_minus_3eps2)
        ));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgmSidecar {
    pub width: usize,
    pub height: usize,
    pub window: f64,
    pub min: f64,
    pub max: f64,
}

/// 16-bit binary PGM, rows from top (`y = +window`) to bottom, with the
/// value range mapped linearly onto `0..=65535`.
pub fn write_pgm(grid: &Grid, out: &mut impl Write) -> Result<PgmSidecar> {
    let n = grid.resolution;
    let (min, max) = grid.min_max();
    let span = max - min;
    write!(out, "P5\n{n} {n}\n65535\n")?;
    let mut bytes = Vec::with_capacity(2 * n * n);
    for row in (0..n).rev() {
        for col in 0..n {
            let t = if span > 0.0 { (grid.at(row, col) - min) / span } else { 0.0 };
            let level = (t * 65535.0).round().clamp(0.0, 65535.0) as u16;
            bytes.extend_from_slice(&level.to_be_bytes());
        }
    }
    out.write_all(&bytes)?;
    Ok(PgmSidecar { width: n, height: n, window: grid.window, min, max })
}

/// Parses a 16-bit PGM written by [`write_pgm`]: `(width, height, levels)`.
pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM header field {s}")));
    if fields[0] != "P5" || parse(&fields[3])? != 65535 {
        return Err(Error::Format("expected a 16-bit P5 image".into()));
    }
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let data = bytes.get(pos..pos + 2 * w * h).ok_or_else(|| Error::Format("truncated PGM data".into()))?;
    Ok((w, h, data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::base_pattern;

    #[test]
    fn field_round_trip() {
        let atlas = Arc::new(build_atlas(4, 3, None).unwrap());
        let f = base_pattern(&atlas).scale(0.1).add_constant(1.0 / 3.0);
        let text = field_json(&f).unwrap();
        let g = read_field_json(&text).unwrap();
        assert_eq!(f.iter().collect::<Vec<_>>(), g.iter().collect::<Vec<_>>());
        assert_eq!(text, field_json(&g).unwrap());
    }

    #[test]
    fn pgm_round_trip() {
        let atlas = Arc::new(build_atlas(4, 1, None).unwrap());
        let grid = base_pattern(&atlas).sample(10.0, 17).unwrap();
        let mut buf = Vec::new();
        let side = write_pgm(&grid, &mut buf).unwrap();
        assert_eq!(side.max, 8.0);
        let (w, h, data) = read_pgm(&buf).unwrap();
        assert_eq!((w, h, data.len()), (17, 17, 289));
        assert_eq!(*data.iter().max().unwrap(), 65535);
        assert_eq!(*data.iter().min().unwrap(), 0);
    }
}
