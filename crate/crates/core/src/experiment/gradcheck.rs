use serde::Serialize;

use super::ExperimentError;
use crate::nets::gradcase::check_composed_loss;
use crate::nets::{MappingVariant, Mode};
use crate::tensorcore::{check_primitive, PrimitiveKind};

/// One finite-difference check: a primitive or a composed-loss path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradRow {
    pub case: String,
    pub seed: u64,
    pub max_rel_error: f64,
    pub coords: usize,
}

/// Every primitive and both composed-loss paths (augmented and replacement,
/// every mapping variant), each at `seeds`.
pub fn gradcheck_suite(seeds: &[u64]) -> Result<Vec<GradRow>, ExperimentError> {
    let mut rows = Vec::new();
    for kind in PrimitiveKind::ALL {
        for &seed in seeds {
            let r = check_primitive(kind, seed, 1e-3).map_err(crate::pipeline::PipelineError::from)?;
            rows.push(GradRow { case: kind.name().to_string(), seed, max_rel_error: r.max_rel_error, coords: r.coords_checked });
        }
    }
    for mode in [Mode::Augmented, Mode::Replacement] {
        for variant in MappingVariant::ALL {
            for &seed in seeds {
                let r = check_composed_loss(mode, variant, seed).map_err(crate::pipeline::PipelineError::from)?;
                rows.push(GradRow {
                    case: format!("loss-{}-{}", format!("{mode:?}").to_lowercase(), variant.name()),
                    seed,
                    max_rel_error: r.max_rel_error,
                    coords: r.coords_checked,
                });
            }
        }
    }
    Ok(rows)
}
