use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::format::g9;
use super::{KdTree, Vec3};
use crate::error::{Error, Result};

/// A landmark attached to one structure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub structure: usize,
    pub position: Vec3,
}

/// A point set in millimetres with one structure label per point.
///
/// Partial clouds may leave structures without points; complete (template)
/// clouds are checked with [`LabeledCloud::validate_complete`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    points: Vec<Vec3>,
    labels: Vec<usize>,
    structure_names: Vec<String>,
    support_points: Vec<Vec3>,
    landmarks: Vec<Landmark>,
}

impl LabeledCloud {
    pub fn new(
        points: Vec<Vec3>,
        labels: Vec<usize>,
        structure_names: Vec<String>,
        support_points: Vec<Vec3>,
        landmarks: Vec<Landmark>,
    ) -> Result<Self> {
        let cloud = LabeledCloud {
            points,
            labels,
            structure_names,
            support_points,
            landmarks,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    /// A single-structure cloud with the centroid as support point.
    pub fn unlabeled(points: Vec<Vec3>) -> Result<Self> {
        let support = super::centroid(&points);
        let n = points.len();
        Self::new(points, vec![0; n], vec!["all".into()], vec![support], Vec::new())
    }

    /// Builds a cloud from points and labels, naming structures
    /// `structure_<k>` and placing each support point at the structure
    /// centroid (origin for empty structures).
    pub fn from_labeled_points(points: Vec<Vec3>, labels: Vec<usize>) -> Result<Self> {
        let k = labels.iter().max().map_or(1, |m| m + 1);
        let names = (0..k).map(|i| format!("structure_{i}")).collect();
        let mut sums = vec![Vec3::zeros(); k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            if l < k {
                sums[l] += p;
                counts[l] += 1;
            }
        }
        let support = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { Vec3::zeros() })
            .collect();
        Self::new(points, labels, names, support, Vec::new())
    }

    fn validate(&self) -> Result<()> {
        let k = self.structure_names.len();
        if self.points.len() != self.labels.len() {
            return Err(Error::InvalidCloud(format!(
                "{} points but {} labels",
                self.points.len(),
                self.labels.len()
            )));
        }
        if k == 0 {
            return Err(Error::InvalidCloud("no structures".into()));
        }
        if self.support_points.len() != k {
            return Err(Error::InvalidCloud(format!(
                "{} structures but {} support points",
                k,
                self.support_points.len()
            )));
        }
        if let Some((i, l)) = self.labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::InvalidCloud(format!("point {i} has label {l} >= {k}")));
        }
        if let Some(i) = self.points.iter().position(|p| !is_finite(p)) {
            return Err(Error::InvalidCloud(format!("point {i} is not finite")));
        }
        if self.support_points.iter().any(|p| !is_finite(p)) {
            return Err(Error::InvalidCloud("support point is not finite".into()));
        }
        for lm in &self.landmarks {
            if lm.structure >= k || !is_finite(&lm.position) {
                return Err(Error::InvalidCloud(format!(
                    "landmark on structure {} is invalid",
                    lm.structure
                )));
            }
        }
        if let Some(name) = self
            .structure_names
            .iter()
            .find(|n| n.is_empty() || n.chars().any(char::is_whitespace))
        {
            return Err(Error::InvalidCloud(format!("bad structure name {name:?}")));
        }
        Ok(())
    }

    /// Checks the template invariant: every structure owns at least one point.
    pub fn validate_complete(&self) -> Result<()> {
        let counts = self.structure_counts();
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidCloud(format!(
                "structure {k} ({}) has no points",
                self.structure_names[k]
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn structure_names(&self) -> &[String] {
        &self.structure_names
    }

    pub fn structure_count(&self) -> usize {
        self.structure_names.len()
    }

    pub fn support_points(&self) -> &[Vec3] {
        &self.support_points
    }

    pub fn landmarks(&self) -> &[Landmark] {
        &self.landmarks
    }

    pub fn structure_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.structure_count()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Indices of the points carrying `label`.
    pub fn structure_indices(&self, label: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == label).collect()
    }

    /// Same labels and metadata, new geometry.
    pub fn with_geometry(
        &self,
        points: Vec<Vec3>,
        support_points: Vec<Vec3>,
        landmarks: Vec<Landmark>,
    ) -> Result<Self> {
        if points.len() != self.points.len() {
            return Err(Error::ShapeMismatch {
                expected: self.points.len(),
                actual: points.len(),
            });
        }
        Self::new(
            points,
            self.labels.clone(),
            self.structure_names.clone(),
            support_points,
            landmarks,
        )
    }

    /// Applies `f` to every point, support point and landmark.
    pub fn map_positions(&self, f: impl Fn(&Vec3) -> Vec3) -> Result<Self> {
        let points = self.points.iter().map(&f).collect();
        let support = self.support_points.iter().map(&f).collect();
        let landmarks = self
            .landmarks
            .iter()
            .map(|l| Landmark {
                structure: l.structure,
                position: f(&l.position),
            })
            .collect();
        self.with_geometry(points, support, landmarks)
    }

    /// The sub-cloud made of `indices`, keeping structure metadata. Landmarks
    /// of structures left without points are dropped.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let points: Vec<Vec3> = indices.iter().map(|&i| self.points[i]).collect();
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        let mut present = vec![false; self.structure_count()];
        for &l in &labels {
            present[l] = true;
        }
        let landmarks = self
            .landmarks
            .iter()
            .filter(|l| present[l.structure])
            .copied()
            .collect();
        Self::new(
            points,
            labels,
            self.structure_names.clone(),
            self.support_points.clone(),
            landmarks,
        )
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# labeled-cloud v1");
        let _ = writeln!(out, "# structures {}", self.structure_count());
        for (k, (name, s)) in self
            .structure_names
            .iter()
            .zip(&self.support_points)
            .enumerate()
        {
            let _ = writeln!(out, "# structure {k} {name} {} {} {}", g9(s.x), g9(s.y), g9(s.z));
        }
        for lm in &self.landmarks {
            let p = lm.position;
            let _ = writeln!(
                out,
                "# landmark {} {} {} {}",
                lm.structure,
                g9(p.x),
                g9(p.y),
                g9(p.z)
            );
        }
        for (p, l) in self.points.iter().zip(&self.labels) {
            let _ = writeln!(out, "{} {} {} {}", g9(p.x), g9(p.y), g9(p.z), l);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses the text format. Files without structure headers get
    /// `structure_<k>` names and centroid support points.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut names: Vec<(usize, String, Vec3)> = Vec::new();
        let mut landmarks = Vec::new();
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                let fields: Vec<&str> = header.split_whitespace().collect();
                match fields.first() {
                    Some(&"structure") => {
                        if fields.len() != 6 {
                            return Err(perr(lineno, "structure record needs 5 fields".into()));
                        }
                        let id = parse_usize(fields[1]).map_err(|m| perr(lineno, m))?;
                        let s = parse_vec(&fields[3..6]).map_err(|m| perr(lineno, m))?;
                        names.push((id, fields[2].to_string(), s));
                    }
                    Some(&"landmark") => {
                        if fields.len() != 5 {
                            return Err(perr(lineno, "landmark record needs 4 fields".into()));
                        }
                        let structure = parse_usize(fields[1]).map_err(|m| perr(lineno, m))?;
                        let position = parse_vec(&fields[2..5]).map_err(|m| perr(lineno, m))?;
                        landmarks.push(Landmark {
                            structure,
                            position,
                        });
                    }
                    _ => {}
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 && fields.len() != 4 {
                return Err(perr(lineno, format!("expected `x y z label`, got {line:?}")));
            }
            points.push(parse_vec(&fields[..3]).map_err(|m| perr(lineno, m))?);
            let label = match fields.get(3) {
                Some(f) => parse_usize(f).map_err(|m| perr(lineno, m))?,
                None => 0,
            };
            labels.push(label);
        }
        if names.is_empty() {
            let mut cloud = Self::from_labeled_points(points, labels)?;
            cloud.landmarks = landmarks;
            cloud.validate()?;
            return Ok(cloud);
        }
        names.sort_by_key(|e| e.0);
        if names.iter().enumerate().any(|(k, e)| e.0 != k) {
            return Err(perr(0, "structure ids must be 0..K-1".into()));
        }
        let (structure_names, support): (Vec<String>, Vec<Vec3>) =
            names.into_iter().map(|(_, n, s)| (n, s)).unzip();
        Self::new(points, labels, structure_names, support, landmarks)
    }
}

fn is_finite(p: &Vec3) -> bool {
    p.iter().all(|c| c.is_finite())
}

fn parse_usize(s: &str) -> std::result::Result<usize, String> {
    s.parse().map_err(|_| format!("bad integer {s:?}"))
}

fn parse_vec(fields: &[&str]) -> std::result::Result<Vec3, String> {
    let mut v = Vec3::zeros();
    for (i, f) in fields.iter().enumerate() {
        v[i] = f.parse().map_err(|_| format!("bad number {f:?}"))?;
    }
    Ok(v)
}

/// Index and distance of the cloud point closest to `query`; ties resolve to
/// the lowest index.
pub fn nearest_neighbor(query: &Vec3, cloud: &LabeledCloud) -> Result<(usize, f64)> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !is_finite(query) {
        return Err(Error::Precondition("query is not finite".into()));
    }
    KdTree::new(cloud.points())
        .nearest(query)
        .ok_or(Error::EmptyCloud)
}
