use serde::{Deserialize, Serialize};

use super::features::{AnatomyFeatures, ViewDefinition};
use crate::error::{Error, Result};
use crate::phantom::EntityLabel;

/// Lower bound applied to every fitted variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairPrior {
    pub i: EntityLabel,
    pub j: EntityLabel,
    pub mu_theta: f64,
    pub var_theta: f64,
    pub mu_r: f64,
    pub var_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaPrior {
    pub entity: EntityLabel,
    pub mu: f64,
    pub var: f64,
}

/// Gaussian priors of the pair offsets and area ratios over an ensemble of
/// standard views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSet {
    pub pairs: Vec<PairPrior>,
    pub alphas: Vec<AlphaPrior>,
    #[serde(rename = "M")]
    pub ensemble_size: usize,
}

impl PriorSet {
    pub fn alpha(&self, e: EntityLabel) -> Option<&AlphaPrior> {
        self.alphas.iter().find(|a| a.entity == e)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let p: PriorSet = serde_json::from_slice(&std::fs::read(path)?)
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        p.validate().map_err(|e| Error::format(e.to_string()))?;
        Ok(p)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size < 2 {
            return Err(Error::contract("prior ensemble size must be at least 2"));
        }
        let vars = self
            .pairs
            .iter()
            .flat_map(|p| [p.var_theta, p.var_r])
            .chain(self.alphas.iter().map(|a| a.var));
        for v in vars {
            if !(v >= VARIANCE_FLOOR && v.is_finite()) {
                return Err(Error::contract(format!("prior variance {v} below floor")));
            }
        }
        Ok(())
    }
}

/// Population mean and variance (divide by M), accumulated in one pass
/// with Welford's update.
pub fn population_mean_var(samples: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, &x) in samples.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (x - mean);
    }
    (mean, m2 / samples.len() as f64)
}

fn fitted(samples: &[f64]) -> (f64, f64) {
    let (mu, var) = population_mean_var(samples);
    (mu, var.max(VARIANCE_FLOOR))
}

/// Fits Gaussian priors over an ensemble of standard-view features.
///
/// Every member must show every included entity of its view.
pub fn fit_priors(ensemble: &[AnatomyFeatures]) -> Result<PriorSet> {
    if ensemble.len() < 2 {
        return Err(Error::contract(format!(
            "need at least 2 standard views, got {}",
            ensemble.len()
        )));
    }
    let view: &ViewDefinition = &ensemble[0].view;
    for (idx, f) in ensemble.iter().enumerate() {
        if f.view != *view {
            return Err(Error::contract(format!(
                "ensemble member {idx} uses a different view"
            )));
        }
        if let Some(missing) = view.included.iter().find(|e| !f.is_visible(**e)) {
            return Err(Error::contract(format!(
                "ensemble member {idx} is missing included entity {}",
                missing.name()
            )));
        }
    }
    let column =
        |get: &dyn Fn(&AnatomyFeatures) -> f64| ensemble.iter().map(get).collect::<Vec<_>>();

    let pairs = view
        .pairs
        .pairs()
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let (mu_theta, var_theta) = fitted(&column(&|f| f.dtheta[k].expect("visible pair")));
            let (mu_r, var_r) = fitted(&column(&|f| f.dr[k].expect("visible pair")));
            PairPrior {
                i,
                j,
                mu_theta,
                var_theta,
                mu_r,
                var_r,
            }
        })
        .collect();

    let alphas = view
        .included
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &entity)| {
            let (mu, var) = fitted(&column(&|f| f.alpha_in[k].expect("reference visible")));
            AlphaPrior { entity, mu, var }
        })
        .collect();

    Ok(PriorSet {
        pairs,
        alphas,
        ensemble_size: ensemble.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::test_support::synthetic;

    #[test]
    fn one_two_three() {
        let (mu, var) = population_mean_var(&[1.0, 2.0, 3.0]);
        assert_eq!(mu, 2.0);
        assert!((var - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identical_samples_clamp_to_floor() {
        let f = synthetic([0.3; 4], [0.1; 4], [0.8, 0.6, 0.5]);
        let p = fit_priors(&[f.clone(), f.clone(), f]).unwrap();
        assert_eq!(p.pairs[0].mu_theta, 0.3);
        assert_eq!(p.pairs[0].var_theta, VARIANCE_FLOOR);
        assert_eq!(p.alphas[0].entity, EntityLabel::RV);
        assert_eq!(p.alphas[0].var, VARIANCE_FLOOR);
        assert_eq!(p.ensemble_size, 3);
    }

    #[test]
    fn missing_entity_reports_index() {
        let f = synthetic([0.3; 4], [0.1; 4], [0.8, 0.6, 0.5]);
        let mut g = f.clone();
        g.visible[EntityLabel::RA.index()] = false;
        let err = fit_priors(&[f.clone(), f, g]).unwrap_err().to_string();
        assert!(err.contains("member 2") && err.contains("RA"), "{err}");
    }

    #[test]
    fn too_small_ensemble_rejected() {
        let f = synthetic([0.3; 4], [0.1; 4], [0.8, 0.6, 0.5]);
        assert!(fit_priors(&[f]).is_err());
    }

    #[test]
    fn json_layout() {
        let a = synthetic(
            [0.3, 0.1, 0.0, 0.2],
            [0.0, 0.1, -0.3, -0.2],
            [0.8, 0.6, 0.5],
        );
        let b = synthetic(
            [0.5, 0.1, 0.1, 0.2],
            [0.1, 0.2, -0.3, -0.1],
            [0.9, 0.7, 0.4],
        );
        let p = fit_priors(&[a, b]).unwrap();
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        assert_eq!(v["M"], 2);
        assert_eq!(v["pairs"][0]["i"], "LV");
        assert_eq!(v["pairs"][0]["j"], "RV");
        assert!(v["pairs"][0]["mu_theta"].is_number());
        assert_eq!(v["alphas"][2]["entity"], "RA");
        let back: PriorSet = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }
}
