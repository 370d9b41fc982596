//! Category registry and effective-weight resolution.
//!
//! An ontology is a declarative TOML file (see `data/ontology.toml` for the
//! shipped default). It maps each structure category to a signed base weight,
//! kernel bandwidth, catchment radius, default capacity, density layer and
//! capital kind, and assigns a fusion multiplier to every layer.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Access, SocialStructure};

/// Half a mile in meters: walk-up use of a transit stop vanishes beyond it.
pub const TRANSIT_RADIUS_M: f64 = 804.672;

const BUILTIN: &str = include_str!("../data/ontology.toml");

/// Default catchment radius for transit categories.
pub fn transit_default_radius() -> f64 {
    TRANSIT_RADIUS_M
}

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("ontology parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("category {category:?}: {message}")]
    InvalidCategory { category: String, message: String },
    #[error("invalid ontology: {0}")]
    Invalid(String),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("ingroup fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryKind {
    Bridging,
    Bonding,
    ContextDependent,
}

/// Which surface a structure's kernel is accumulated into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapitalKind {
    Bridging,
    Bonding,
}

/// How a restricted structure's weight responds to the ingroup fraction `f`
/// of its catchment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupModifier {
    /// `w·(2f − 1)`: full ingroup gives `w`, full outgroup gives `−w`.
    #[default]
    Linear,
    /// Access restrictions do not change the weight.
    Ignore,
}

impl GroupModifier {
    pub fn apply(self, weight: f64, ingroup_fraction: f64) -> f64 {
        match self {
            GroupModifier::Linear => weight * (2.0 * ingroup_fraction - 1.0),
            GroupModifier::Ignore => weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategorySpec {
    pub name: String,
    pub base_weight: f64,
    pub bandwidth: f64,
    pub catchment_radius: f64,
    pub default_capacity: Option<f64>,
    pub layer: String,
    pub capital_kind: CategoryKind,
    pub transit: bool,
    pub context_threshold: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OntologyFile {
    #[serde(default)]
    groups: Vec<String>,
    #[serde(default)]
    defaults: DefaultsFile,
    #[serde(default)]
    layers: BTreeMap<String, f64>,
    #[serde(default)]
    category: BTreeMap<String, CategoryFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DefaultsFile {
    catchment_radius: f64,
    population_floor: f64,
    truncation_sigmas: f64,
    context_threshold: f64,
    group_modifier: GroupModifier,
}

impl Default for DefaultsFile {
    fn default() -> Self {
        DefaultsFile {
            catchment_radius: 1000.0,
            population_floor: 1.0,
            truncation_sigmas: 4.0,
            context_threshold: 0.5,
            group_modifier: GroupModifier::Linear,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CategoryFile {
    weight: f64,
    bandwidth: f64,
    catchment_radius: Option<f64>,
    default_capacity: Option<f64>,
    layer: String,
    capital_kind: CategoryKind,
    #[serde(default)]
    transit: bool,
    context_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ontology {
    categories: BTreeMap<String, CategorySpec>,
    layer_weights: BTreeMap<String, f64>,
    groups: Vec<String>,
    pub population_floor: f64,
    pub truncation_sigmas: f64,
    pub group_modifier: GroupModifier,
}

impl Ontology {
    /// The ontology shipped in `data/ontology.toml`.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("bundled ontology is valid")
    }

    pub fn builtin_text() -> &'static str {
        BUILTIN
    }

    pub fn load(path: &Path) -> Result<Self, OntologyError> {
        let text = fs::read_to_string(path).map_err(|source| OntologyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, OntologyError> {
        let file: OntologyFile = toml::from_str(text)?;
        let d = &file.defaults;
        if !positive(d.catchment_radius) {
            return Err(OntologyError::Invalid("defaults.catchment_radius must be > 0".into()));
        }
        if !positive(d.population_floor) {
            return Err(OntologyError::Invalid("defaults.population_floor must be > 0".into()));
        }
        if !positive(d.truncation_sigmas) {
            return Err(OntologyError::Invalid("defaults.truncation_sigmas must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&d.context_threshold) {
            return Err(OntologyError::Invalid("defaults.context_threshold must be in [0, 1]".into()));
        }
        for (layer, w) in &file.layers {
            if !valid_layer_name(layer) {
                return Err(OntologyError::Invalid(format!("invalid layer name {layer:?}")));
            }
            if !w.is_finite() {
                return Err(OntologyError::Invalid(format!("layer {layer:?} weight is not finite")));
            }
        }

        let mut categories = BTreeMap::new();
        for (name, c) in file.category {
            let bad = |message: &str| OntologyError::InvalidCategory {
                category: name.clone(),
                message: message.to_string(),
            };
            if !(-1.0..=1.0).contains(&c.weight) {
                return Err(bad("weight must lie in [-1, 1]"));
            }
            if !(c.bandwidth > 0.0 && c.bandwidth.is_finite()) {
                return Err(bad("bandwidth must be > 0"));
            }
            if c.catchment_radius.is_some_and(|r| !(r > 0.0 && r.is_finite())) {
                return Err(bad("catchment_radius must be > 0"));
            }
            if c.default_capacity.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
                return Err(bad("default_capacity must be > 0"));
            }
            let threshold = c.context_threshold.unwrap_or(d.context_threshold);
            if !(0.0..=1.0).contains(&threshold) {
                return Err(bad("context_threshold must be in [0, 1]"));
            }
            if !valid_layer_name(&c.layer) {
                return Err(bad("layer must be a nonempty name of letters, digits, '_' or '-'"));
            }
            let catchment_radius = resolve_radius(c.catchment_radius, c.transit, d.catchment_radius);
            categories.insert(
                name.clone(),
                CategorySpec {
                    name,
                    base_weight: c.weight,
                    bandwidth: c.bandwidth,
                    catchment_radius,
                    default_capacity: c.default_capacity,
                    layer: c.layer,
                    capital_kind: c.capital_kind,
                    transit: c.transit,
                    context_threshold: threshold,
                },
            );
        }

        let mut layer_weights = file.layers;
        for spec in categories.values() {
            layer_weights.entry(spec.layer.clone()).or_insert(1.0);
        }

        Ok(Ontology {
            categories,
            layer_weights,
            groups: file.groups,
            population_floor: d.population_floor,
            truncation_sigmas: d.truncation_sigmas,
            group_modifier: d.group_modifier,
        })
    }

    pub fn category(&self, name: &str) -> Result<&CategorySpec, OntologyError> {
        self.categories
            .get(name)
            .ok_or_else(|| OntologyError::UnknownCategory(name.to_string()))
    }

    pub fn categories(&self) -> impl Iterator<Item = &CategorySpec> {
        self.categories.values()
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    /// Fusion multiplier of a layer (1 when unlisted).
    pub fn layer_weight(&self, layer: &str) -> f64 {
        self.layer_weights.get(layer).copied().unwrap_or(1.0)
    }

    /// Every layer name, sorted.
    pub fn layers(&self) -> impl Iterator<Item = &str> {
        self.layer_weights.keys().map(String::as_str)
    }

    /// Signed weight of a structure given the ingroup fraction of its
    /// catchment. Open structures keep the base weight; restricted ones go
    /// through the group modifier. The result is clamped to `[-1, 1]`.
    pub fn effective_weight(&self, s: &SocialStructure, ingroup_fraction: f64) -> Result<f64, OntologyError> {
        if !(0.0..=1.0).contains(&ingroup_fraction) {
            return Err(OntologyError::InvalidFraction(ingroup_fraction));
        }
        let spec = self.category(&s.category)?;
        let w = match s.access {
            Access::Open => spec.base_weight,
            Access::Restricted => self.group_modifier.apply(spec.base_weight, ingroup_fraction),
        };
        Ok(w.clamp(-1.0, 1.0))
    }

    /// Open structures are always bridging. Restricted structures are
    /// bonding, unless their category is context dependent, in which case
    /// they are bonding only when the ingroup fraction exceeds the
    /// category threshold.
    pub fn classify_capital(&self, s: &SocialStructure, ingroup_fraction: f64) -> Result<CapitalKind, OntologyError> {
        let spec = self.category(&s.category)?;
        Ok(match (s.access, spec.capital_kind) {
            (Access::Open, _) => CapitalKind::Bridging,
            (Access::Restricted, CategoryKind::ContextDependent) => {
                if ingroup_fraction > spec.context_threshold {
                    CapitalKind::Bonding
                } else {
                    CapitalKind::Bridging
                }
            }
            (Access::Restricted, _) => CapitalKind::Bonding,
        })
    }
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

/// Layer names end up in output file names.
fn valid_layer_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Explicit radius, then the transit walkability rule, then the ontology
/// default.
fn resolve_radius(explicit: Option<f64>, transit: bool, fallback: f64) -> f64 {
    match explicit {
        Some(r) => r,
        None if transit => transit_default_radius(),
        None => fallback,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{GeoPoint, PlanarPoint};
    use proptest::prelude::*;

    const SMALL: &str = r#"
groups = ["muslim"]

[layers]
medical = 2.0

[category.hospital]
weight = 0.8
bandwidth = 1000.0
catchment_radius = 2000.0
default_capacity = 100.0
layer = "medical"
capital_kind = "bridging"

[category.mosque]
weight = 0.6
bandwidth = 500.0
layer = "worship"
capital_kind = "bonding"

[category.community_centre]
weight = 0.7
bandwidth = 500.0
layer = "community"
capital_kind = "bridging"

[category.school]
weight = 0.5
bandwidth = 500.0
layer = "community"
capital_kind = "context_dependent"

[category.temple]
weight = 0.6
bandwidth = 500.0
layer = "worship"
capital_kind = "bonding"

[category.bus]
weight = 0.3
bandwidth = 400.0
layer = "transit"
capital_kind = "bridging"
transit = true

[category.rail]
weight = 0.3
bandwidth = 400.0
catchment_radius = 1000.0
layer = "transit"
capital_kind = "bridging"
transit = true
"#;

    fn structure(category: &str, access: Access) -> SocialStructure {
        SocialStructure {
            id: "s".into(),
            category: category.into(),
            location: GeoPoint { lon: 0.0, lat: 0.0 },
            position: PlanarPoint::default(),
            capacity: 100.0,
            group: (access == Access::Restricted).then(|| "muslim".to_string()),
            access,
        }
    }

    #[test]
    fn builtin_parses() {
        let ont = Ontology::builtin();
        assert!(ont.category("hospital").is_ok());
        assert_eq!(ont.category("transit_stop").unwrap().catchment_radius, TRANSIT_RADIUS_M);
        assert_eq!(ont.layers().collect::<Vec<_>>(), ["community", "medical", "transit", "worship"]);
    }

    #[test]
    fn radius_fallback_chain() {
        let ont = Ontology::parse(SMALL).unwrap();
        assert_eq!(transit_default_radius(), 804.672);
        assert_eq!(ont.category("bus").unwrap().catchment_radius, 804.672);
        assert_eq!(ont.category("rail").unwrap().catchment_radius, 1000.0);
        assert_eq!(ont.category("mosque").unwrap().catchment_radius, 1000.0);
        assert_eq!(ont.category("hospital").unwrap().catchment_radius, 2000.0);
    }

    #[test]
    fn layer_weights_default_to_one() {
        let ont = Ontology::parse(SMALL).unwrap();
        assert_eq!(ont.layer_weight("medical"), 2.0);
        assert_eq!(ont.layer_weight("worship"), 1.0);
        assert_eq!(ont.layers().count(), 4);
    }

    #[test]
    fn effective_weight_examples() {
        let ont = Ontology::parse(SMALL).unwrap();
        let hospital = structure("hospital", Access::Open);
        for f in [0.0, 0.3, 1.0] {
            assert_eq!(ont.effective_weight(&hospital, f).unwrap(), 0.8);
        }
        let mosque = structure("mosque", Access::Restricted);
        assert_eq!(ont.effective_weight(&mosque, 1.0).unwrap(), 0.6);
        assert_eq!(ont.effective_weight(&mosque, 0.0).unwrap(), -0.6);
        assert!((ont.effective_weight(&mosque, 0.75).unwrap() - 0.3).abs() < 1e-15);
        assert!(matches!(
            ont.effective_weight(&mosque, 1.5),
            Err(OntologyError::InvalidFraction(_))
        ));
        assert!(matches!(
            ont.effective_weight(&structure("pub", Access::Open), 0.5),
            Err(OntologyError::UnknownCategory(_))
        ));
    }

    #[test]
    fn ignore_modifier_keeps_base_weight() {
        let text = format!("{SMALL}\n[defaults]\ngroup_modifier = \"ignore\"\n");
        let ont = Ontology::parse(&text).unwrap();
        assert_eq!(ont.effective_weight(&structure("mosque", Access::Restricted), 0.0).unwrap(), 0.6);
    }

    #[test]
    fn classify_examples() {
        let ont = Ontology::parse(SMALL).unwrap();
        assert_eq!(
            ont.classify_capital(&structure("community_centre", Access::Open), 0.2).unwrap(),
            CapitalKind::Bridging
        );
        assert_eq!(
            ont.classify_capital(&structure("temple", Access::Restricted), 0.2).unwrap(),
            CapitalKind::Bonding
        );
        let school = structure("school", Access::Restricted);
        assert_eq!(ont.classify_capital(&school, 0.9).unwrap(), CapitalKind::Bonding);
        assert_eq!(ont.classify_capital(&school, 0.5).unwrap(), CapitalKind::Bridging);
        assert_eq!(
            ont.classify_capital(&structure("school", Access::Open), 0.9).unwrap(),
            CapitalKind::Bridging
        );
    }

    #[test]
    fn invalid_categories_rejected() {
        let base = "[category.x]\nbandwidth = 1.0\nlayer = \"a\"\ncapital_kind = \"bridging\"\n";
        assert!(Ontology::parse(&format!("{base}weight = 1.5\n")).is_err());
        let zero_sigma = "[category.x]\nweight = 0.5\nbandwidth = 0.0\nlayer = \"a\"\ncapital_kind = \"bridging\"\n";
        assert!(Ontology::parse(zero_sigma).is_err());
        assert!(Ontology::parse(&format!("{base}weight = 0.5\ncatchment_radius = -1.0\n")).is_err());
        assert!(Ontology::parse(&format!("{base}weight = 0.5\ncolour = \"red\"\n")).is_err());
    }

    proptest! {
        #[test]
        fn restricted_weight_monotone_and_bounded(w in -1.0..=1.0f64, f1 in 0.0..=1.0f64, f2 in 0.0..=1.0f64) {
            let text = format!(
                "[category.m]\nweight = {w}\nbandwidth = 1.0\nlayer = \"a\"\ncapital_kind = \"bonding\"\n"
            );
            let ont = Ontology::parse(&text).unwrap();
            let s = structure("m", Access::Restricted);
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            let (a, b) = (ont.effective_weight(&s, lo).unwrap(), ont.effective_weight(&s, hi).unwrap());
            if w > 0.0 {
                prop_assert!(a <= b);
            }
            prop_assert!(a.abs() <= w.abs() && b.abs() <= w.abs());
            let open = structure("m", Access::Open);
            prop_assert_eq!(ont.classify_capital(&open, f1).unwrap(), CapitalKind::Bridging);
        }
    }
}
