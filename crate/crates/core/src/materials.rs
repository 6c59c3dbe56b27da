//! Reference dielectric properties at 5.32 GHz, measured with an open-ended coaxial probe.

use serde::{Deserialize, Serialize};

use crate::trace_model::DielectricProperties;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaterialGroup {
    EthanolWater,
    Liquor,
    Saline,
    GlucoseWater,
    Air,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub label: &'static str,
    pub group: MaterialGroup,
    pub eps_r: f64,
    pub sigma: f64,
}

impl Material {
    pub const fn props(&self) -> DielectricProperties {
        DielectricProperties {
            eps_r: self.eps_r,
            sigma: self.sigma,
        }
    }
}

const fn m(label: &'static str, group: MaterialGroup, eps_r: f64, sigma: f64) -> Material {
    Material {
        label,
        group,
        eps_r,
        sigma,
    }
}

use MaterialGroup::*;

/// Ethanol/water mixtures, 0 % to 90 % ABV in 10 % steps.
pub const ETHANOL_WATER: [Material; 10] = [
    m("ethanol-water 0%", EthanolWater, 73.38, 6.41),
    m("ethanol-water 10%", EthanolWater, 57.12, 8.33),
    m("ethanol-water 20%", EthanolWater, 50.89, 8.64),
    m("ethanol-water 30%", EthanolWater, 40.64, 8.57),
    m("ethanol-water 40%", EthanolWater, 30.66, 7.71),
    m("ethanol-water 50%", EthanolWater, 24.74, 6.82),
    m("ethanol-water 60%", EthanolWater, 18.48, 5.54),
    m("ethanol-water 70%", EthanolWater, 13.72, 4.32),
    m("ethanol-water 80%", EthanolWater, 9.93, 3.15),
    m("ethanol-water 90%", EthanolWater, 6.85, 2.02),
];

pub const BAIJIU_46: Material = m("baijiu 46%", Liquor, 27.76, 7.29);
pub const BAIJIU_56: Material = m("baijiu 56%", Liquor, 21.33, 6.13);

/// Liquids used only for validation, plus the empty container.
pub const OTHER_LIQUIDS: [Material; 9] = [
    m("grape soju", Liquor, 51.17, 8.17),
    m("jinro soju", Liquor, 50.01, 8.48),
    m("saline 0.9%", Saline, 70.87, 7.66),
    m("saline 3.5%", Saline, 64.93, 10.60),
    m("saline 7%", Saline, 58.39, 13.84),
    m("glucose-water 5%", GlucoseWater, 70.38, 6.73),
    m("glucose-water 10%", GlucoseWater, 67.63, 6.75),
    m("glucose-water 25%", GlucoseWater, 62.25, 7.10),
    m("air", Air, 1.0, 0.0),
];

/// Mixtures plus both liquors (12 materials).
pub fn ethanol_study() -> Vec<Material> {
    ETHANOL_WATER
        .iter()
        .copied()
        .chain([BAIJIU_46, BAIJIU_56])
        .collect()
}

/// Every material of the extended validation study (21 including air).
pub fn validation_study() -> Vec<Material> {
    ethanol_study().into_iter().chain(OTHER_LIQUIDS).collect()
}

pub fn find(label: &str) -> Option<Material> {
    validation_study().into_iter().find(|m| m.label == label)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_sizes() {
        assert_eq!(ethanol_study().len(), 12);
        let all = validation_study();
        assert_eq!(all.len(), 21);
        assert_eq!(all.iter().filter(|m| m.group == Air).count(), 1);
        assert!(all.iter().all(|m| m.props().validate().is_ok()));
        assert_eq!(find("baijiu 46%").unwrap().eps_r, 27.76);
    }
}
