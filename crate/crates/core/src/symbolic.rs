//! Projection of Lorentzian atoms onto discrete predicates by hard
//! thresholds, and the predicate-overlap kernel.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::sparse::SparseSpectrum;

/// Emitted alone for atoms whose amplitude is below `negligible_eps`.
pub const NEGLIGIBLE: &str = "negligible";

/// `[A-Za-z_][A-Za-z0-9_]*`
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Predicate {
    name: String,
    source_atom: Option<usize>,
}

impl Predicate {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        Self::build(name.into(), None)
    }

    pub fn from_atom(name: impl Into<String>, atom: usize) -> Result<Self> {
        Self::build(name.into(), Some(atom))
    }

    fn build(name: String, source_atom: Option<usize>) -> Result<Self> {
        if !is_identifier(&name) {
            return Err(Error::InvalidInput(format!("`{name}` is not a valid predicate name")));
        }
        Ok(Predicate { name, source_atom })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source_atom(&self) -> Option<usize> {
        self.source_atom
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// A finite set of predicates, ordered by name then source atom.
///
/// Serializes as the sorted array of distinct names.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SymbolSet {
    predicates: BTreeSet<Predicate>,
}

impl SymbolSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Source-less predicates from names.
    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        names.into_iter().map(Predicate::new).collect()
    }

    pub fn insert(&mut self, p: Predicate) -> bool {
        self.predicates.insert(p)
    }

    pub fn len(&self) -> usize {
        self.predicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicates.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Predicate> {
        self.predicates.iter()
    }

    /// Number of distinct names; the size seen by [`kernel`].
    pub fn name_count(&self) -> usize {
        self.names().len()
    }

    pub fn names(&self) -> BTreeSet<&str> {
        self.predicates.iter().map(|p| p.name()).collect()
    }

    pub fn contains_name(&self, name: &str) -> bool {
        self.predicates.iter().any(|p| p.name == name)
    }

    /// Predicates whose source atom is `atom`.
    pub fn for_atom(&self, atom: usize) -> impl Iterator<Item = &Predicate> {
        self.predicates.iter().filter(move |p| p.source_atom == Some(atom))
    }
}

impl FromIterator<Predicate> for SymbolSet {
    fn from_iter<T: IntoIterator<Item = Predicate>>(iter: T) -> Self {
        SymbolSet {
            predicates: iter.into_iter().collect(),
        }
    }
}

impl Serialize for SymbolSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.names())
    }
}

impl<'de> Deserialize<'de> for SymbolSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        SymbolSet::from_names(names).map_err(serde::de::Error::custom)
    }
}

/// Hard-threshold bins for one axis: interval `i` is `[edges[i], edges[i+1])`,
/// the last one open above.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisBins {
    pub edges: Vec<f64>,
    pub labels: Vec<String>,
}

impl AxisBins {
    pub fn new(edges: Vec<f64>, labels: Vec<&str>) -> Result<Self> {
        let bins = AxisBins {
            edges,
            labels: labels.into_iter().map(str::to_owned).collect(),
        };
        bins.validate("axis")?;
        Ok(bins)
    }

    fn validate(&self, axis: &str) -> Result<()> {
        if self.edges.is_empty() || self.edges.len() != self.labels.len() {
            return Err(Error::Config(format!(
                "{axis} bins need one label per edge ({} edges, {} labels)",
                self.edges.len(),
                self.labels.len()
            )));
        }
        if self.edges.iter().any(|e| !e.is_finite())
            || self.edges.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(Ordering::Less))
        {
            return Err(Error::Config(format!("{axis} bin edges must be finite and strictly ascending")));
        }
        let distinct: BTreeSet<&str> = self.labels.iter().map(String::as_str).collect();
        if distinct.len() != self.labels.len() {
            return Err(Error::Config(format!("{axis} bin labels must be unique")));
        }
        Ok(())
    }

    /// Index of the interval containing `v`, `None` below the first edge.
    pub fn bin(&self, v: f64) -> Option<usize> {
        self.edges.iter().rposition(|&e| v >= e)
    }

    fn label_for(&self, v: f64) -> &str {
        self.bin(v).map_or("underflow", |i| self.labels[i].as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinningConfig {
    pub omega_bins: AxisBins,
    pub gamma_bins: AxisBins,
    pub amp_bins: AxisBins,
    pub negligible_eps: f64,
}

impl BinningConfig {
    pub fn validate(&self) -> Result<()> {
        self.omega_bins.validate("omega")?;
        self.gamma_bins.validate("gamma")?;
        self.amp_bins.validate("amp")?;
        if !(self.negligible_eps > 0.0 && self.negligible_eps.is_finite()) {
            return Err(Error::Config(format!(
                "negligible_eps must be positive, got {}",
                self.negligible_eps
            )));
        }
        for (axis, bins) in [
            ("resonance", &self.omega_bins),
            ("width", &self.gamma_bins),
            ("amplitude", &self.amp_bins),
        ] {
            for l in bins.labels.iter().map(String::as_str).chain(["underflow"]) {
                let name = format!("{axis}_{l}");
                if !is_identifier(&name) {
                    return Err(Error::Config(format!("bin label `{l}` yields invalid predicate `{name}`")));
                }
            }
        }
        Ok(())
    }
}

/// One predicate per axis per atom (`resonance_*`, `width_*`, `amplitude_*`),
/// or `negligible` alone when the amplitude is below `negligible_eps`.
pub fn project(sp: &SparseSpectrum, cfg: &BinningConfig) -> Result<SymbolSet> {
    cfg.validate()?;
    let mut out = SymbolSet::new();
    for (i, a) in sp.atoms.iter().enumerate() {
        if a.amp < cfg.negligible_eps {
            out.insert(Predicate::from_atom(NEGLIGIBLE, i)?);
            continue;
        }
        for (axis, bins, v) in [
            ("resonance", &cfg.omega_bins, a.omega),
            ("width", &cfg.gamma_bins, a.gamma),
            ("amplitude", &cfg.amp_bins, a.amp),
        ] {
            out.insert(Predicate::from_atom(format!("{axis}_{}", bins.label_for(v)), i)?);
        }
    }
    Ok(out)
}

/// `|σ_i ∩ σ_j|` over predicate names.
pub fn kernel(si: &SymbolSet, sj: &SymbolSet) -> usize {
    si.names().intersection(&sj.names()).count()
}
