//! Electrical constants of the materials used around the fingertip sensors,
//! at 867 MHz.

use std::io::Read;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    /// Conductivity (S/m).
    pub sigma: f64,
    /// Relative permittivity.
    pub epsilon: f64,
}

const BUILTIN: &[(&str, f64, f64)] = &[
    ("ecoflex-00-30", 0.007, 2.7),
    ("silbione", 0.012, 2.5),
    ("pvc-foam", 2.2e-5, 2.3),
    ("body-tissue", 0.62, 30.0),
    ("olive-oil", 0.026, 3.0),
    ("ethyl-alcohol", 1e-5, 17.0),
    ("deionized-water", 0.05, 78.0),
];

/// Names of the three reference liquids, in increasing permittivity.
pub const REFERENCE_LIQUIDS: [&str; 3] = ["olive-oil", "ethyl-alcohol", "deionized-water"];

#[derive(Debug, thiserror::Error)]
pub enum MaterialError {
    #[error("material table: {0}")]
    Csv(#[from] csv::Error),
    #[error("material `{0}` not in table")]
    Unknown(String),
    #[error("material `{name}`: {reason}")]
    Invalid { name: String, reason: String },
}

/// Lookup table of materials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialDb {
    materials: Vec<Material>,
}

impl Default for MaterialDb {
    fn default() -> Self {
        MaterialDb::builtin()
    }
}

impl MaterialDb {
    pub fn builtin() -> Self {
        MaterialDb {
            materials: BUILTIN
                .iter()
                .map(|&(name, sigma, epsilon)| Material {
                    name: name.to_string(),
                    sigma,
                    epsilon,
                })
                .collect(),
        }
    }

    /// Reads a `name,sigma_s_per_m,epsilon` CSV. Entries replace built-ins of
    /// the same name; new names are appended.
    pub fn with_overrides<R: Read>(mut self, reader: R) -> Result<Self, MaterialError> {
        #[derive(Deserialize)]
        struct Row {
            name: String,
            sigma_s_per_m: f64,
            epsilon: f64,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for row in rdr.deserialize() {
            let row: Row = row?;
            if !(row.epsilon >= 1.0) || !(row.sigma_s_per_m >= 0.0) {
                return Err(MaterialError::Invalid {
                    name: row.name,
                    reason: "requires epsilon >= 1 and sigma >= 0".into(),
                });
            }
            let m = Material {
                name: row.name,
                sigma: row.sigma_s_per_m,
                epsilon: row.epsilon,
            };
            match self.materials.iter_mut().find(|x| x.name == m.name) {
                Some(slot) => *slot = m,
                None => self.materials.push(m),
            }
        }
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Result<&Material, MaterialError> {
        self.materials
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| MaterialError::Unknown(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Material> {
        self.materials.iter()
    }
}
