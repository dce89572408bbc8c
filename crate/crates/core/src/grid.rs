//! Uniform rectangular grids in two or three dimensions and fields sampled on them.
//!
//! Nodes are stored row-major with the last axis varying fastest. Fields round-trip
//! through a small CSV dialect:
//!
//! ```text
//! # n=2 res=5,5 bounds=0:1,0:1 mask=none
//! 0.0
//! 0.125
//! ...
//! ```
//!
//! Vector fields put their `n` components on one comma-separated line per node.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_RESOLUTION: usize = 5;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid dimension must be 2 or 3, got {0}")]
    Dimension(usize),
    #[error("axis {axis}: resolution {resolution} is below the minimum of {MIN_RESOLUTION}")]
    Resolution { axis: usize, resolution: usize },
    #[error("axis {axis}: bounds [{lo}, {hi}] are empty or not finite")]
    Bounds { axis: usize, lo: f64, hi: f64 },
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("non-finite value at node {0}")]
    NonFinite(usize),
    #[error("invalid mask: {0}")]
    Mask(String),
    #[error("domains do not match")]
    DomainMismatch,
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDomain {
    pub bounds: Vec<[f64; 2]>,
    pub resolution: Vec<usize>,
}

impl GridDomain {
    pub fn new(bounds: Vec<[f64; 2]>, resolution: Vec<usize>) -> Result<Self, GridError> {
        let n = bounds.len();
        if !(2..=3).contains(&n) {
            return Err(GridError::Dimension(n));
        }
        if resolution.len() != n {
            return Err(GridError::Length {
                expected: n,
                got: resolution.len(),
            });
        }
        for (axis, (&[lo, hi], &r)) in bounds.iter().zip(&resolution).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(GridError::Bounds { axis, lo, hi });
            }
            if r < MIN_RESOLUTION {
                return Err(GridError::Resolution {
                    axis,
                    resolution: r,
                });
            }
        }
        Ok(Self { bounds, resolution })
    }

    /// Square grid `[lo, hi]^n` with `res` nodes per axis.
    pub fn cube(n: usize, lo: f64, hi: f64, res: usize) -> Result<Self, GridError> {
        Self::new(vec![[lo, hi]; n], vec![res; n])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.bounds
            .iter()
            .zip(&self.resolution)
            .map(|(b, &r)| (b[1] - b[0]) / (r - 1) as f64)
            .collect()
    }

    /// Largest spacing over the axes.
    pub fn h(&self) -> f64 {
        self.spacing().into_iter().fold(0.0, f64::max)
    }

    pub fn measure(&self) -> f64 {
        self.bounds.iter().map(|b| b[1] - b[0]).product()
    }

    pub fn perimeter(&self) -> f64 {
        let sides: Vec<f64> = self.bounds.iter().map(|b| b[1] - b[0]).collect();
        (0..sides.len())
            .map(|skip| {
                2.0 * sides
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != skip)
                    .map(|(_, s)| s)
                    .product::<f64>()
            })
            .sum()
    }

    pub fn center(&self) -> Vec<f64> {
        self.bounds.iter().map(|b| 0.5 * (b[0] + b[1])).collect()
    }

    /// Same box with `2r - 1` nodes per axis, so every old node stays a node.
    pub fn refine(&self) -> Self {
        Self {
            bounds: self.bounds.clone(),
            resolution: self.resolution.iter().map(|r| 2 * r - 1).collect(),
        }
    }

    pub fn strides(&self) -> Vec<usize> {
        let n = self.dim();
        let mut s = vec![1; n];
        for k in (0..n - 1).rev() {
            s[k] = s[k + 1] * self.resolution[k + 1];
        }
        s
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(self.strides()).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let n = self.dim();
        let mut m = vec![0; n];
        for k in (0..n).rev() {
            m[k] = flat % self.resolution[k];
            flat /= self.resolution[k];
        }
        m
    }

    pub fn coord(&self, multi: &[usize]) -> Vec<f64> {
        let h = self.spacing();
        multi
            .iter()
            .enumerate()
            .map(|(k, &i)| self.bounds[k][0] + i as f64 * h[k])
            .collect()
    }

    pub fn node_coord(&self, flat: usize) -> Vec<f64> {
        self.coord(&self.multi_index(flat))
    }

    pub fn is_boundary(&self, multi: &[usize]) -> bool {
        multi
            .iter()
            .zip(&self.resolution)
            .any(|(&i, &r)| i == 0 || i + 1 == r)
    }

    /// Whether every axis index is at least `margin` away from the edges.
    pub fn in_interior(&self, multi: &[usize], margin: usize) -> bool {
        multi
            .iter()
            .zip(&self.resolution)
            .all(|(&i, &r)| i >= margin && i + margin < r)
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&f| self.is_boundary(&self.multi_index(f)))
            .collect()
    }

    pub fn samples<F: Fn(&[f64]) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.len()).map(|i| f(&self.node_coord(i))).collect()
    }

    fn header(&self, mask: Option<&Mask>) -> String {
        let res: Vec<String> = self.resolution.iter().map(|r| r.to_string()).collect();
        let bounds: Vec<String> = self
            .bounds
            .iter()
            .map(|b| format!("{}:{}", b[0], b[1]))
            .collect();
        let mask = match mask {
            None => "none".to_string(),
            Some(Mask::Annulus { r2_min, r2_max }) => format!("annulus:{r2_min},{r2_max}"),
        };
        format!(
            "# n={} res={} bounds={} mask={}",
            self.dim(),
            res.join(","),
            bounds.join(","),
            mask
        )
    }
}

/// Region selector inside the bounding box, in terms of `|x|^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Mask {
    /// `r2_min <= |x|^2 <= r2_max`; a disk when `r2_min = 0`.
    Annulus { r2_min: f64, r2_max: f64 },
}

impl Mask {
    pub fn annulus(r2_min: f64, r2_max: f64) -> Result<Self, GridError> {
        if !(r2_min >= 0.0 && r2_max > r2_min && r2_max.is_finite()) {
            return Err(GridError::Mask(format!("annulus {r2_min},{r2_max}")));
        }
        Ok(Mask::Annulus { r2_min, r2_max })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match *self {
            Mask::Annulus { r2_min, r2_max } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                (r2_min..=r2_max).contains(&r2)
            }
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> GridError {
    GridError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_header(line: &str) -> Result<(GridDomain, Option<Mask>), GridError> {
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| parse_err(1, "missing '#' header"))?;
    let mut n = None;
    let mut res = None;
    let mut bounds = None;
    let mut mask = None;
    for field in body.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| parse_err(1, format!("malformed field {field:?}")))?;
        match key {
            "n" => {
                n = Some(
                    value
                        .parse::<usize>()
                        .map_err(|e| parse_err(1, e.to_string()))?,
                )
            }
            "res" => {
                res = Some(
                    value
                        .split(',')
                        .map(|v| v.parse::<usize>().map_err(|e| parse_err(1, e.to_string())))
                        .collect::<Result<Vec<_>, _>>()?,
                )
            }
            "bounds" => {
                bounds = Some(
                    value
                        .split(',')
                        .map(|pair| {
                            let (lo, hi) = pair
                                .split_once(':')
                                .ok_or_else(|| parse_err(1, format!("bad bounds {pair:?}")))?;
                            let lo = lo.parse::<f64>().map_err(|e| parse_err(1, e.to_string()))?;
                            let hi = hi.parse::<f64>().map_err(|e| parse_err(1, e.to_string()))?;
                            Ok([lo, hi])
                        })
                        .collect::<Result<Vec<_>, GridError>>()?,
                )
            }
            "mask" => {
                mask = if value == "none" {
                    None
                } else if let Some(spec) = value.strip_prefix("annulus:") {
                    let (lo, hi) = spec
                        .split_once(',')
                        .ok_or_else(|| parse_err(1, format!("bad annulus {spec:?}")))?;
                    Some(Mask::annulus(
                        lo.parse().map_err(|_| parse_err(1, "bad annulus radius"))?,
                        hi.parse().map_err(|_| parse_err(1, "bad annulus radius"))?,
                    )?)
                } else {
                    return Err(parse_err(1, format!("unknown mask {value:?}")));
                }
            }
            other => return Err(parse_err(1, format!("unknown header key {other:?}"))),
        }
    }
    let n = n.ok_or_else(|| parse_err(1, "header lacks n"))?;
    let domain = GridDomain::new(
        bounds.ok_or_else(|| parse_err(1, "header lacks bounds"))?,
        res.ok_or_else(|| parse_err(1, "header lacks res"))?,
    )?;
    if domain.dim() != n {
        return Err(parse_err(1, "n disagrees with bounds"));
    }
    Ok((domain, mask))
}

/// Parses the body rows, each holding `width` comma-separated numbers.
fn parse_rows(lines: std::str::Lines<'_>, width: usize) -> Result<Vec<f64>, GridError> {
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut count = 0;
        for cell in line.split(',') {
            let v = cell
                .trim()
                .parse::<f64>()
                .map_err(|e| parse_err(k + 2, e.to_string()))?;
            out.push(v);
            count += 1;
        }
        if count != width {
            return Err(parse_err(
                k + 2,
                format!("expected {width} columns, got {count}"),
            ));
        }
    }
    Ok(out)
}

fn check_values(values: &[f64], expected: usize) -> Result<(), GridError> {
    if values.len() != expected {
        return Err(GridError::Length {
            expected,
            got: values.len(),
        });
    }
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(GridError::NonFinite(i)),
        None => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarFieldGrid {
    pub domain: GridDomain,
    pub values: Vec<f64>,
    #[serde(default)]
    pub mask: Option<Mask>,
}

impl ScalarFieldGrid {
    pub fn new(domain: GridDomain, values: Vec<f64>) -> Result<Self, GridError> {
        check_values(&values, domain.len())?;
        Ok(Self {
            domain,
            values,
            mask: None,
        })
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(domain: GridDomain, f: F) -> Result<Self, GridError> {
        let values = domain.samples(f);
        Self::new(domain, values)
    }

    pub fn with_mask(mut self, mask: Mask) -> Self {
        self.mask = Some(mask);
        self
    }

    pub fn at(&self, multi: &[usize]) -> f64 {
        self.values[self.domain.index(multi)]
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.domain.header(self.mask.as_ref());
        s.push('\n');
        for v in &self.values {
            let _ = writeln!(s, "{v}");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, GridError> {
        let mut lines = text.lines();
        let (domain, mask) = parse_header(lines.next().unwrap_or(""))?;
        let values = parse_rows(lines, 1)?;
        let mut grid = Self::new(domain, values)?;
        grid.mask = mask;
        Ok(grid)
    }

    /// Reads CSV, or JSON when the path ends in `.json`.
    pub fn read(path: &Path) -> Result<Self, GridError> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            let grid: Self = serde_json::from_str(&text)?;
            check_values(&grid.values, grid.domain.len())?;
            Ok(grid)
        } else {
            Self::from_csv(&text)
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), GridError> {
        if path.extension().is_some_and(|e| e == "json") {
            std::fs::write(path, serde_json::to_string(self)?)?;
        } else {
            std::fs::write(path, self.to_csv())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorFieldGrid {
    pub domain: GridDomain,
    /// Node-major: the `n` components of node `i` live at `values[i*n .. (i+1)*n]`.
    pub values: Vec<f64>,
    #[serde(default)]
    pub mask: Option<Mask>,
}

impl VectorFieldGrid {
    pub fn new(domain: GridDomain, values: Vec<f64>) -> Result<Self, GridError> {
        check_values(&values, domain.len() * domain.dim())?;
        Ok(Self {
            domain,
            values,
            mask: None,
        })
    }

    pub fn from_fn<F: Fn(&[f64]) -> Vec<f64>>(domain: GridDomain, f: F) -> Result<Self, GridError> {
        let n = domain.dim();
        let mut values = Vec::with_capacity(domain.len() * n);
        for i in 0..domain.len() {
            let v = f(&domain.node_coord(i));
            if v.len() != n {
                return Err(GridError::Length {
                    expected: n,
                    got: v.len(),
                });
            }
            values.extend(v);
        }
        Self::new(domain, values)
    }

    pub fn with_mask(mut self, mask: Mask) -> Self {
        self.mask = Some(mask);
        self
    }

    pub fn node(&self, flat: usize) -> &[f64] {
        let n = self.domain.dim();
        &self.values[flat * n..(flat + 1) * n]
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        let n = self.domain.dim();
        self.values.iter().skip(k).step_by(n).copied().collect()
    }

    /// Nodewise sum with another field on the same domain.
    pub fn add(&self, other: &VectorFieldGrid) -> Result<VectorFieldGrid, GridError> {
        if self.domain != other.domain {
            return Err(GridError::DomainMismatch);
        }
        Ok(VectorFieldGrid {
            domain: self.domain.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
            mask: self.mask,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.domain.header(self.mask.as_ref());
        s.push('\n');
        let n = self.domain.dim();
        for node in self.values.chunks(n) {
            let row: Vec<String> = node.iter().map(|v| v.to_string()).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, GridError> {
        let mut lines = text.lines();
        let (domain, mask) = parse_header(lines.next().unwrap_or(""))?;
        let values = parse_rows(lines, domain.dim())?;
        let mut grid = Self::new(domain, values)?;
        grid.mask = mask;
        Ok(grid)
    }

    pub fn read(path: &Path) -> Result<Self, GridError> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            let grid: Self = serde_json::from_str(&text)?;
            check_values(&grid.values, grid.domain.len() * grid.domain.dim())?;
            Ok(grid)
        } else {
            Self::from_csv(&text)
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), GridError> {
        if path.extension().is_some_and(|e| e == "json") {
            std::fs::write(path, serde_json::to_string(self)?)?;
        } else {
            std::fs::write(path, self.to_csv())?;
        }
        Ok(())
    }
}

/// Values on the nodes at least `margin` away from every edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteriorField<T> {
    pub domain: GridDomain,
    pub margin: usize,
    pub values: Vec<T>,
}

impl<T> InteriorField<T> {
    pub fn resolution(&self) -> Vec<usize> {
        self.domain
            .resolution
            .iter()
            .map(|r| r - 2 * self.margin)
            .collect()
    }

    /// Global multi-indices of the stored nodes, in storage order.
    pub fn node_indices(&self) -> Vec<Vec<usize>> {
        interior_indices(&self.domain, self.margin)
    }

    pub fn get(&self, multi: &[usize]) -> Option<&T> {
        if !self.domain.in_interior(multi, self.margin) {
            return None;
        }
        let res = self.resolution();
        let mut flat = 0;
        for (k, &i) in multi.iter().enumerate() {
            flat = flat * res[k] + (i - self.margin);
        }
        self.values.get(flat)
    }

    pub fn map<U, F: Fn(&T) -> U>(&self, f: F) -> InteriorField<U> {
        InteriorField {
            domain: self.domain.clone(),
            margin: self.margin,
            values: self.values.iter().map(f).collect(),
        }
    }
}

impl InteriorField<f64> {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Row-major multi-indices of the nodes at least `margin` from every edge.
pub fn interior_indices(domain: &GridDomain, margin: usize) -> Vec<Vec<usize>> {
    let n = domain.dim();
    let res: Vec<usize> = domain
        .resolution
        .iter()
        .map(|r| r.saturating_sub(2 * margin))
        .collect();
    let count: usize = res.iter().product();
    (0..count)
        .map(|mut flat| {
            let mut m = vec![0; n];
            for k in (0..n).rev() {
                m[k] = flat % res[k] + margin;
                flat /= res[k];
            }
            m
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(res: usize) -> GridDomain {
        GridDomain::cube(2, 0.0, 1.0, res).unwrap()
    }

    #[test]
    fn domain_validation() {
        assert!(matches!(
            GridDomain::cube(2, 0.0, 1.0, 4),
            Err(GridError::Resolution { .. })
        ));
        assert!(matches!(
            GridDomain::cube(1, 0.0, 1.0, 9),
            Err(GridError::Dimension(1))
        ));
        assert!(matches!(
            GridDomain::cube(4, 0.0, 1.0, 9),
            Err(GridError::Dimension(4))
        ));
        assert!(matches!(
            GridDomain::cube(2, 1.0, 1.0, 9),
            Err(GridError::Bounds { .. })
        ));
    }

    #[test]
    fn indexing_round_trip() {
        let d = GridDomain::new(vec![[0.0, 1.0], [0.0, 2.0], [-1.0, 1.0]], vec![5, 6, 7]).unwrap();
        for flat in 0..d.len() {
            assert_eq!(d.index(&d.multi_index(flat)), flat);
        }
        assert_eq!(d.multi_index(1), vec![0, 0, 1]);
        assert_eq!(d.coord(&[4, 5, 6]), vec![1.0, 2.0, 1.0]);
        assert_eq!(d.spacing(), vec![0.25, 0.4, 1.0 / 3.0]);
    }

    #[test]
    fn refine_keeps_nodes() {
        let d = unit(9);
        let f = d.refine();
        assert_eq!(f.resolution, vec![17, 17]);
        assert_eq!(f.coord(&[4, 6]), d.coord(&[2, 3]));
    }

    #[test]
    fn geometry_of_box() {
        let d = GridDomain::new(vec![[0.0, 2.0], [0.0, 3.0]], vec![5, 5]).unwrap();
        assert_eq!(d.measure(), 6.0);
        assert_eq!(d.perimeter(), 10.0);
        let c = GridDomain::cube(3, 0.0, 1.0, 5).unwrap();
        assert_eq!(c.perimeter(), 6.0);
        assert_eq!(unit(5).boundary_nodes().len(), 16);
    }

    #[test]
    fn interior_field_lookup() {
        let d = unit(7);
        let idx = interior_indices(&d, 2);
        assert_eq!(idx.len(), 9);
        let f = InteriorField {
            domain: d.clone(),
            margin: 2,
            values: (0..9).collect::<Vec<_>>(),
        };
        assert_eq!(f.get(&[2, 2]), Some(&0));
        assert_eq!(f.get(&[3, 4]), Some(&5));
        assert_eq!(f.get(&[1, 4]), None);
        assert_eq!(f.node_indices()[5], vec![3, 4]);
    }

    #[test]
    fn scalar_csv_round_trip() {
        let g = ScalarFieldGrid::from_fn(unit(6), |x| x[0] * 0.1 + x[1] / 3.0)
            .unwrap()
            .with_mask(Mask::annulus(0.1, 0.9).unwrap());
        let text = g.to_csv();
        assert!(text.starts_with("# n=2 res=6,6 bounds=0:1,0:1 mask=annulus:0.1,0.9\n"));
        assert_eq!(ScalarFieldGrid::from_csv(&text).unwrap(), g);
    }

    #[test]
    fn vector_csv_round_trip() {
        let g = VectorFieldGrid::from_fn(unit(5), |x| vec![x[0], -x[1] * 1e-3]).unwrap();
        let text = g.to_csv();
        let back = VectorFieldGrid::from_csv(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.component(1)[24], -1e-3);
    }

    #[test]
    fn csv_errors() {
        assert!(ScalarFieldGrid::from_csv("n=2").is_err());
        let short = "# n=2 res=5,5 bounds=0:1,0:1 mask=none\n1\n2\n";
        assert!(matches!(
            ScalarFieldGrid::from_csv(short),
            Err(GridError::Length {
                expected: 25,
                got: 2
            })
        ));
        let wide = "# n=2 res=5,5 bounds=0:1,0:1 mask=none\n1,2\n";
        assert!(matches!(
            ScalarFieldGrid::from_csv(wide),
            Err(GridError::Parse { .. })
        ));
        let bad_mask = "# n=2 res=5,5 bounds=0:1,0:1 mask=disk\n";
        assert!(ScalarFieldGrid::from_csv(bad_mask).is_err());
    }

    #[test]
    fn json_round_trip() {
        let g = ScalarFieldGrid::from_fn(unit(5), |x| x[0]).unwrap();
        let text = serde_json::to_string(&g).unwrap();
        let back: ScalarFieldGrid = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn mask_membership() {
        let m = Mask::annulus(1.0, 1.01).unwrap();
        assert!(m.contains(&[1.0, 0.0]));
        assert!(m.contains(&[0.0, -1.004]));
        assert!(!m.contains(&[0.5, 0.5]));
        assert!(Mask::annulus(1.0, 0.5).is_err());
    }
}
