//! Decision-context encoder: per-feature embedding, variable selection, a
//! spline-based recurrent block, and causal multi-head attention, composed as
//!
//! ```text
//! features [B,T,D]
//!   -> per-channel embedding      (D x [B*T, H])
//!   -> variable selection network ([B*T, H], weights [B*T, D])
//!   -> TKAN recurrence            ([B, T, H], forward-only)
//!   -> causal attention + GRN     ([B, T, H])
//! ```
//!
//! Sequence order enters through the recurrence; attention adds long-range
//! mixing under a strict causal mask, so position `t` of the output depends
//! on input positions `<= t` only.

pub mod attention;
pub mod embedding;
pub mod grn;
pub mod kan;
pub mod tkan;
pub mod vsn;

use serde::{Deserialize, Serialize};

use crate::error::{LemError, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Init, Leaves, ParamSet};
use crate::real::Real;

pub use attention::CausalAttention;
pub use embedding::Embedding;
pub use grn::{Dropout, Glu, Grn};
pub use kan::KanLayer;
pub use tkan::Tkan;
pub use vsn::Vsn;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    #[serde(default = "default_hidden")]
    pub hidden_size: usize,
    #[serde(default = "default_heads")]
    pub num_heads: usize,
    #[serde(default = "default_sublayers")]
    pub tkan_sublayers: usize,
    #[serde(default = "default_grid")]
    pub spline_grid_size: usize,
    #[serde(default = "default_order")]
    pub spline_order: usize,
    #[serde(default)]
    pub dropout_rate: f64,
}

fn default_hidden() -> usize {
    32
}
fn default_heads() -> usize {
    4
}
fn default_sublayers() -> usize {
    2
}
fn default_grid() -> usize {
    5
}
fn default_order() -> usize {
    3
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden_size: default_hidden(),
            num_heads: default_heads(),
            tkan_sublayers: default_sublayers(),
            spline_grid_size: default_grid(),
            spline_order: default_order(),
            dropout_rate: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.num_heads == 0 || !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(LemError::validation(format!(
                "hidden_size {} must be a positive multiple of num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if self.tkan_sublayers == 0 {
            return Err(LemError::validation("tkan_sublayers must be >= 1"));
        }
        if self.spline_grid_size == 0 || self.spline_order == 0 {
            return Err(LemError::validation("spline grid size and order must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(LemError::validation("dropout_rate must lie in [0, 1)"));
        }
        Ok(())
    }
}

pub struct Encoder {
    pub feature_dim: usize,
    pub config: EncoderConfig,
    embed: Embedding,
    vsn: Vsn,
    tkan: Tkan,
    attn: CausalAttention,
}

/// Context plus the variable-selection weights for introspection.
pub struct EncoderOutput {
    /// `[B, T, H]`.
    pub context: NodeId,
    /// `[B*T, D]`, rows sum to one.
    pub vsn_weights: NodeId,
}

impl Encoder {
    pub fn new<F: Real>(
        params: &mut ParamSet<F>,
        prefix: &str,
        feature_dim: usize,
        config: &EncoderConfig,
        init: &mut Init<'_>,
    ) -> Self {
        let h = config.hidden_size;
        Encoder {
            feature_dim,
            config: config.clone(),
            embed: Embedding::new(params, &format!("{prefix}.embed"), feature_dim, h, init),
            vsn: Vsn::new(params, &format!("{prefix}.vsn"), feature_dim, h, init),
            tkan: Tkan::new(
                params,
                &format!("{prefix}.tkan"),
                h,
                config.tkan_sublayers,
                config.spline_grid_size,
                config.spline_order,
                init,
            ),
            attn: CausalAttention::new(params, &format!("{prefix}.attn"), h, config.num_heads, init),
        }
    }

    /// `features` is a `[B, T, D]` node; returns the `[B, T, H]` context.
    pub fn apply<F: Real>(
        &self,
        g: &mut Graph<F>,
        lv: &Leaves,
        features: NodeId,
        dropout: &mut Dropout<'_>,
    ) -> Result<EncoderOutput> {
        let shape = g.shape(features).to_vec();
        if shape.len() != 3 || shape[2] != self.feature_dim {
            return Err(LemError::ShapeMismatch {
                context: "encoder input".into(),
                expected: vec![shape.first().copied().unwrap_or(0), shape.get(1).copied().unwrap_or(0), self.feature_dim],
                found: shape,
            });
        }
        let (b, t, d) = (shape[0], shape[1], shape[2]);
        let flat = g.reshape(features, vec![b * t, d]);
        let embedded = self.embed.apply(g, lv, flat);
        let (selected, weights) = self.vsn.apply(g, lv, &embedded, dropout);
        let seq = g.reshape(selected, vec![b, t, self.config.hidden_size]);
        let recurrent = self.tkan.apply(g, lv, seq);
        let context = self.attn.apply(g, lv, recurrent, dropout);
        Ok(EncoderOutput {
            context,
            vsn_weights: weights,
        })
    }
}
