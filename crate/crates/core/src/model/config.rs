use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How masked keys enter the temporal attention softmax.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Masked scores become `-inf`, so masked keys get exactly zero weight.
    #[default]
    NegInf,
    /// Scores are multiplied by the key mask before the softmax.
    Multiply,
}

impl FromStr for MaskMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neg_inf" => Ok(MaskMode::NegInf),
            "multiply" => Ok(MaskMode::Multiply),
            _ => Err(Error::Input(format!("unknown mask mode `{s}` (neg_inf|multiply)"))),
        }
    }
}

/// Component switches for ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    ZeroPrefill,
    MeanPrefill,
    NoAmstenc,
    NoMastatt,
    NoGraphconv,
    NoGtconv,
    NoMastdec,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::ZeroPrefill,
        Ablation::MeanPrefill,
        Ablation::NoAmstenc,
        Ablation::NoMastatt,
        Ablation::NoGraphconv,
        Ablation::NoGtconv,
        Ablation::NoMastdec,
    ];

    /// Row label used in ablation reports.
    pub fn label(self) -> &'static str {
        match self {
            Ablation::ZeroPrefill => "zero prefill",
            Ablation::MeanPrefill => "mean prefill",
            Ablation::NoAmstenc => "w/o AMSTenc",
            Ablation::NoMastatt => "w/o MASTatt",
            Ablation::NoGraphconv => "w/o Graphconv",
            Ablation::NoGtconv => "w/o GTconv",
            Ablation::NoMastdec => "w/o MASTdec",
        }
    }

    fn key(self) -> &'static str {
        match self {
            Ablation::ZeroPrefill => "zero_prefill",
            Ablation::MeanPrefill => "mean_prefill",
            Ablation::NoAmstenc => "no_amstenc",
            Ablation::NoMastatt => "no_mastatt",
            Ablation::NoGraphconv => "no_graphconv",
            Ablation::NoGtconv => "no_gtconv",
            Ablation::NoMastdec => "no_mastdec",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Ablation {
    type Err = Error;
    /// Accepts both the report label (`w/o MASTdec`) and the config key
    /// (`no_mastdec`), case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Ablation::ALL
            .into_iter()
            .find(|a| a.label().eq_ignore_ascii_case(s) || a.key().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Input(format!("unknown ablation variant `{s}`")))
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden size `d`.
    pub hidden: usize,
    /// Attention heads `m`.
    pub heads: usize,
    /// Per-head size `d_h`.
    pub head_dim: usize,
    /// Spatial node-embedding size `F`.
    pub spatial_dim: usize,
    /// Chebyshev order `K`.
    pub cheb_order: usize,
    /// Gated temporal convolution widths.
    pub kernel_sizes: Vec<usize>,
    /// Number of stacked spatio-temporal blocks `L`.
    pub blocks: usize,
    /// Width of the convolution that collapses time before spatial attention.
    pub collapse_kernel: usize,
    pub mask_mode: MaskMode,
    pub ablations: Vec<Ablation>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 16,
            heads: 3,
            head_dim: 8,
            spatial_dim: 16,
            cheb_order: 3,
            kernel_sizes: vec![3, 5],
            blocks: 2,
            collapse_kernel: 3,
            mask_mode: MaskMode::NegInf,
            ablations: Vec::new(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("spatial_dim", self.spatial_dim),
            ("cheb_order", self.cheb_order),
            ("blocks", self.blocks),
            ("collapse_kernel", self.collapse_kernel),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Contract(format!("{name} must be at least 1")));
            }
        }
        if self.kernel_sizes.is_empty() {
            return Err(Error::Contract("kernel_sizes must not be empty".into()));
        }
        if let Some(k) = self.kernel_sizes.iter().find(|k| **k % 2 == 0) {
            return Err(Error::Contract(format!("kernel size {k} is not odd")));
        }
        if self.collapse_kernel.is_multiple_of(2) {
            return Err(Error::Contract("collapse_kernel must be odd".into()));
        }
        let prefills = self
            .ablations
            .iter()
            .filter(|a| matches!(a, Ablation::ZeroPrefill | Ablation::MeanPrefill | Ablation::NoAmstenc))
            .count();
        if prefills > 1 {
            return Err(Error::Contract(
                "zero_prefill, mean_prefill and no_amstenc are mutually exclusive".into(),
            ));
        }
        Ok(())
    }

    pub fn has(&self, a: Ablation) -> bool {
        self.ablations.contains(&a)
    }

    /// Copy with one more ablation switched on.
    pub fn with_ablation(&self, a: Ablation) -> Self {
        let mut c = self.clone();
        if !c.has(a) {
            c.ablations.push(a);
        }
        c
    }
}
