//! The fitted-combiner union shared by the CLI and model persistence.

use std::fmt;
use std::str::FromStr;

use crate::autoenc::{fit_ae, AeConfig, AeModel};
use crate::embedding::{EmbeddingView, EnsembleBatch};
use crate::error::{MetaError, Result};
use crate::gcca::{fit_gcca, GccaModel};
use crate::naive::{NaiveKind, NaiveModel};
use crate::svd::{fit_svd, SvdModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Conc,
    Avg,
    Svd,
    Gcca,
    Ae,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Conc, Method::Avg, Method::Svd, Method::Gcca, Method::Ae];

    pub fn tag(self) -> u8 {
        match self {
            Method::Conc => 0,
            Method::Avg => 1,
            Method::Svd => 2,
            Method::Gcca => 3,
            Method::Ae => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Conc => "conc",
            Method::Avg => "avg",
            Method::Svd => "svd",
            Method::Gcca => "gcca",
            Method::Ae => "ae",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = MetaError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                MetaError::invalid(format!(
                    "unknown method '{s}' (expected conc, avg, svd, gcca or ae)"
                ))
            })
    }
}

/// Hyperparameters for [`FusionModel::fit`]. `d` is shared by svd, gcca and
/// ae; `ae.d` is overwritten with it.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub d: usize,
    pub tau: f64,
    pub ae: AeConfig,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            d: crate::svd::DEFAULT_DIM,
            tau: crate::gcca::DEFAULT_TAU,
            ae: AeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FusionModel {
    Conc(NaiveModel),
    Avg(NaiveModel),
    Svd(SvdModel),
    Gcca(GccaModel),
    Ae(AeModel),
}

impl FusionModel {
    pub fn fit(method: Method, batch: &EnsembleBatch, options: &FitOptions) -> Result<Self> {
        Ok(match method {
            Method::Conc => FusionModel::Conc(NaiveModel::for_batch(NaiveKind::Conc, batch)),
            Method::Avg => FusionModel::Avg(NaiveModel::for_batch(NaiveKind::Avg, batch)),
            Method::Svd => FusionModel::Svd(fit_svd(batch, options.d)?),
            Method::Gcca => FusionModel::Gcca(fit_gcca(batch, options.d, options.tau)?),
            Method::Ae => {
                let config = AeConfig {
                    d: options.d,
                    ..options.ae.clone()
                };
                FusionModel::Ae(fit_ae(batch, &config)?)
            }
        })
    }

    pub fn method(&self) -> Method {
        match self {
            FusionModel::Conc(_) => Method::Conc,
            FusionModel::Avg(_) => Method::Avg,
            FusionModel::Svd(_) => Method::Svd,
            FusionModel::Gcca(_) => Method::Gcca,
            FusionModel::Ae(_) => Method::Ae,
        }
    }

    pub fn view_dims(&self) -> Vec<usize> {
        match self {
            FusionModel::Conc(m) | FusionModel::Avg(m) => m.expected_dims().to_vec(),
            FusionModel::Svd(m) => m.view_dims.clone(),
            FusionModel::Gcca(m) => m.view_dims(),
            FusionModel::Ae(m) => m.view_dims(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            FusionModel::Conc(m) | FusionModel::Avg(m) => m.output_dim(),
            FusionModel::Svd(m) => m.d(),
            FusionModel::Gcca(m) => m.d(),
            FusionModel::Ae(m) => m.d(),
        }
    }

    pub fn apply(&self, batch: &EnsembleBatch) -> Result<EmbeddingView> {
        match self {
            FusionModel::Conc(m) | FusionModel::Avg(m) => m.apply(batch),
            FusionModel::Svd(m) => m.apply(batch),
            FusionModel::Gcca(m) => m.apply(batch),
            FusionModel::Ae(m) => m.apply(batch),
        }
    }

    /// One-paragraph fit summary for the CLI.
    pub fn summary(&self) -> String {
        let head = |v: &[f64]| {
            v.iter()
                .take(5)
                .map(|x| format!("{x:.6}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let dims = format!(
            "method={} view_dims={:?} output_dim={}",
            self.method(),
            self.view_dims(),
            self.output_dim()
        );
        match self {
            FusionModel::Conc(_) | FusionModel::Avg(_) => dims,
            FusionModel::Svd(m) => format!(
                "{dims}\nsingular values (head): [{}]",
                head(m.singular_values.as_slice())
            ),
            FusionModel::Gcca(m) => format!(
                "{dims} tau={}\ngeneralized eigenvalues (head): [{}]",
                m.tau,
                head(m.eigenvalues.as_slice())
            ),
            FusionModel::Ae(m) => format!(
                "{dims} loss={} hidden={} epochs={}\nfinal epoch loss: {:.6}",
                m.loss,
                m.hidden_count(),
                m.train_log.len(),
                m.train_log.last().copied().unwrap_or(f64::NAN)
            ),
        }
    }
}
