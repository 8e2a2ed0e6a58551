use serde::{Deserialize, Serialize};

use super::ModelError;

/// How neighbor order is injected into the source context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionalMode {
    /// Learned table indexed by recency (0 = most recent neighbor).
    Position,
    /// Linear projection of `log1p(t - t_i)` concatenated to the node
    /// embedding, then re-projected to width `dim`.
    TimeInterval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bpr,
    Bce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding width `d`.
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Recent neighbors per source (`k`).
    pub neighbors: usize,
    pub q_train: usize,
    pub q_eval: usize,
    pub hidden_dropout: f64,
    pub attn_dropout: f64,
    pub emb_dropout: f64,
    /// Repeat-count encoding (the "-R" variant).
    pub use_repeat: bool,
    /// Elapsed-time encoding of each candidate.
    pub use_elapsed: bool,
    /// Learned positional table; when off the table is frozen at zero.
    pub use_positional: bool,
    /// Inner FFN width; `None` means `4 * dim`.
    pub ffn_width: Option<usize>,
    pub positional_mode: PositionalMode,
    pub loss: LossKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            heads: 2,
            layers: 1,
            neighbors: 30,
            q_train: 1,
            q_eval: 100,
            hidden_dropout: 0.1,
            attn_dropout: 0.1,
            emb_dropout: 0.1,
            use_repeat: false,
            use_elapsed: true,
            use_positional: true,
            ffn_width: None,
            positional_mode: PositionalMode::Position,
            loss: LossKind::Bpr,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            ));
        }
        if self.layers == 0 {
            return bad("layers must be >= 1".into());
        }
        if self.neighbors == 0 {
            return bad("neighbors (k) must be >= 1".into());
        }
        if self.q_train == 0 || self.q_eval == 0 {
            return bad("negative counts must be >= 1".into());
        }
        for (name, rate) in [
            ("hidden_dropout", self.hidden_dropout),
            ("attn_dropout", self.attn_dropout),
            ("emb_dropout", self.emb_dropout),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return bad(format!("{name} = {rate} outside [0, 1)"));
            }
        }
        if self.ffn_width == Some(0) {
            return bad("ffn_width must be >= 1".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn ffn(&self) -> usize {
        self.ffn_width.unwrap_or(4 * self.dim)
    }

    /// Input width of the prediction MLP.
    pub fn head_input(&self) -> usize {
        self.dim * (1 + usize::from(self.use_elapsed) + usize::from(self.use_repeat))
    }

    /// Dropout switched off everywhere.
    pub fn without_dropout(mut self) -> Self {
        self.hidden_dropout = 0.0;
        self.attn_dropout = 0.0;
        self.emb_dropout = 0.0;
        self
    }
}
