use serde::{Deserialize, Serialize};

/// Shape of one transformer stack.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerDims {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of `d_model`.
    pub ff_mult: usize,
    pub max_positions: usize,
}

impl TransformerDims {
    pub fn ff_hidden(&self) -> usize {
        self.d_model * self.ff_mult
    }

    pub fn validate(&self, what: &str) -> Result<(), String> {
        if self.d_model == 0 || self.layers == 0 || self.heads == 0 || self.ff_mult == 0 || self.max_positions == 0 {
            return Err(format!("{what}: all dimensions must be positive"));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(format!("{what}: d_model {} not divisible by {} heads", self.d_model, self.heads));
        }
        Ok(())
    }
}

/// Architecture of the trainable mapping between encoder and LM spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingVariant {
    Linear,
    Mlp2,
    Mlp3,
}

impl MappingVariant {
    pub const ALL: [MappingVariant; 3] = [MappingVariant::Linear, MappingVariant::Mlp2, MappingVariant::Mlp3];

    pub fn name(self) -> &'static str {
        match self {
            MappingVariant::Linear => "linear",
            MappingVariant::Mlp2 => "mlp2",
            MappingVariant::Mlp3 => "mlp3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

impl std::fmt::Display for MappingVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hidden width of the MLP mapping variants: `round((d_in + d_out) / 2)`.
pub fn mapping_hidden(d_in: usize, d_out: usize) -> usize {
    (d_in + d_out).div_ceil(2)
}
