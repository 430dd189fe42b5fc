use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of every preprocessed image and mask.
pub const IMAGE_SIZE: usize = 256;

/// Grayscale image, row-major `H×W`, values in `[0, 1]`.
pub type Image = Array2<f32>;

/// Boolean pixel mask, same geometry as [`Image`].
pub type Mask = Array2<bool>;

/// Pathology category of a core or subject, ordered by clinical significance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Benign,
    #[serde(rename = "ispca")]
    IsPca,
    #[serde(rename = "cspca")]
    CsPca,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Benign => "benign",
            Category::IsPca => "ispca",
            Category::CsPca => "cspca",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreLabels {
    /// Grade group 3 or higher.
    pub is_cspca: bool,
    /// Grade group 2 or higher.
    pub is_pca: bool,
    pub category: Category,
}

/// One labeled biopsy sample: B-mode image, needle trace and pathology.
#[derive(Clone, Debug, PartialEq)]
pub struct BiopsyCore {
    pub core_id: String,
    pub subject_id: String,
    pub image: Image,
    pub needle_mask: Mask,
    pub grade_group: u8,
    /// Fraction of the tissue sample occupied by cancer, in `[0, 1]`.
    pub involvement: f64,
    pub risk_score_reference: Option<u8>,
}

impl BiopsyCore {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(format!("core `{}`: {msg}", self.core_id)));
        if self.image.dim() != self.needle_mask.dim() {
            return bad(format!(
                "image shape {:?} differs from mask shape {:?}",
                self.image.dim(),
                self.needle_mask.dim()
            ));
        }
        if !self.needle_mask.iter().any(|&m| m) {
            return bad("needle mask has no true pixel (needle mask has ≥1 pixel)".into());
        }
        if self.image.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("image values outside [0, 1]".into());
        }
        if self.grade_group > 5 {
            return bad(format!("grade group {} outside 0..5", self.grade_group));
        }
        if !(0.0..=1.0).contains(&self.involvement) {
            return bad(format!("involvement {} outside [0, 1]", self.involvement));
        }
        if (self.involvement == 0.0) != (self.grade_group == 0) {
            return bad(format!(
                "involvement {} inconsistent with grade group {} (involvement is zero iff GG is zero)",
                self.involvement, self.grade_group
            ));
        }
        if let Some(r) = self.risk_score_reference {
            if !(1..=5).contains(&r) {
                return bad(format!("reference risk score {r} outside 1..5"));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> CoreLabels {
        super::grade_to_labels(self.grade_group).expect("grade group validated on construction")
    }

    pub fn needle_pixels(&self) -> usize {
        self.needle_mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub subject_id: String,
    pub age: f64,
    /// ng/mL
    pub psa: f64,
    /// ng/mL/cc
    pub psad: Option<f64>,
    pub family_history: Option<bool>,
    pub cores: Vec<String>,
}

impl Subject {
    pub fn validate(&self) -> Result<()> {
        if self.cores.is_empty() {
            return Err(Error::invalid(format!("subject `{}` owns no cores", self.subject_id)));
        }
        if !(self.age > 0.0) {
            return Err(Error::invalid(format!("subject `{}`: age must be positive", self.subject_id)));
        }
        if !(self.psa >= 0.0) {
            return Err(Error::invalid(format!("subject `{}`: psa must be non-negative", self.subject_id)));
        }
        Ok(())
    }

    pub fn marker(&self, marker: Marker) -> Option<f64> {
        match marker {
            Marker::Age => Some(self.age),
            Marker::Psa => Some(self.psa),
            Marker::Psad => self.psad,
        }
    }
}

/// Clinical markers that can condition the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Marker {
    Age,
    Psa,
    Psad,
}

impl Marker {
    pub const ALL: [Marker; 3] = [Marker::Age, Marker::Psa, Marker::Psad];

    pub fn name(self) -> &'static str {
        match self {
            Marker::Age => "age",
            Marker::Psa => "psa",
            Marker::Psad => "psad",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "age" => Ok(Marker::Age),
            "psa" => Ok(Marker::Psa),
            "psad" => Ok(Marker::Psad),
            other => Err(Error::config(format!("unknown marker `{other}`"))),
        }
    }

    /// Parses a comma separated list such as `age,psa`. `none` or an empty string yield no markers.
    pub fn parse_list(s: &str) -> Result<Vec<Marker>> {
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("none") {
            return Ok(Vec::new());
        }
        s.split(',').map(Marker::parse).collect()
    }

    pub fn list_name(markers: &[Marker]) -> String {
        if markers.is_empty() {
            "none".to_string()
        } else {
            markers.iter().map(|m| m.name()).collect::<Vec<_>>().join("+")
        }
    }
}

impl fmt::Display for Marker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-marker normalization statistics fitted on training subjects.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MarkerStats {
    pub entries: BTreeMap<String, MarkerMoments>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerMoments {
    pub mean: f64,
    pub std: f64,
}

impl MarkerStats {
    pub fn insert(&mut self, name: &str, mean: f64, std: f64) -> Result<()> {
        if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::config(format!("marker `{name}`: std must be positive and finite")));
        }
        self.entries.insert(name.to_string(), MarkerMoments { mean, std });
        Ok(())
    }

    /// Population mean and standard deviation of each marker over `subjects`.
    /// Subjects lacking an optional marker are skipped for that marker.
    pub fn fit<'a>(subjects: impl IntoIterator<Item = &'a Subject> + Clone, markers: &[Marker]) -> Result<Self> {
        let mut stats = MarkerStats::default();
        for &m in markers {
            let values: Vec<f64> = subjects.clone().into_iter().filter_map(|s| s.marker(m)).collect();
            if values.len() < 2 {
                return Err(Error::config(format!("marker `{m}`: fewer than two observed values")));
            }
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            stats.insert(m.name(), mean, var.sqrt())?;
        }
        Ok(stats)
    }
}

/// Subject-disjoint fold assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: BTreeMap<String, usize>,
}

/// Subjects and cores in manifest order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub subjects: Vec<Subject>,
    pub cores: Vec<BiopsyCore>,
}

impl Dataset {
    pub fn subject(&self, id: &str) -> Option<&Subject> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }

    pub fn subject_index(&self) -> BTreeMap<&str, usize> {
        self.subjects.iter().enumerate().map(|(i, s)| (s.subject_id.as_str(), i)).collect()
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.subject_id.clone()).collect()
    }

    /// Checks every core and subject invariant plus core/subject cross references.
    pub fn validate(&self) -> Result<()> {
        let index = self.subject_index();
        if index.len() != self.subjects.len() {
            return Err(Error::invalid("duplicate subject ids"));
        }
        for s in &self.subjects {
            s.validate()?;
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.cores {
            c.validate()?;
            if !seen.insert(c.core_id.as_str()) {
                return Err(Error::invalid(format!("duplicate core id `{}`", c.core_id)));
            }
            let s = index
                .get(c.subject_id.as_str())
                .ok_or_else(|| Error::invalid(format!("core `{}` references unknown subject", c.core_id)))?;
            if !self.subjects[*s].cores.contains(&c.core_id) {
                return Err(Error::invalid(format!(
                    "subject `{}` does not list core `{}`",
                    c.subject_id, c.core_id
                )));
            }
        }
        Ok(())
    }
}
