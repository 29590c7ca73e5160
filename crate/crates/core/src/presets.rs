//! Published hyperparameter rows for the benchmark datasets.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::metric::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Gmm,
    Freq,
    FreqSlope,
    Beedance,
    Hasc,
    Yahoo,
    Ecg,
    Sleep,
}

/// One row of settings. `l1_weight` of 0 means no sparsity penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresetRow {
    pub proj_dim: usize,
    pub window: usize,
    pub gamma: f64,
    pub learn_rate: f64,
    pub l1_weight: f64,
    pub buffer: usize,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::Gmm,
        Preset::Freq,
        Preset::FreqSlope,
        Preset::Beedance,
        Preset::Hasc,
        Preset::Yahoo,
        Preset::Ecg,
        Preset::Sleep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Gmm => "gmm",
            Preset::Freq => "freq",
            Preset::FreqSlope => "freq-slope",
            Preset::Beedance => "beedance",
            Preset::Hasc => "hasc",
            Preset::Yahoo => "yahoo",
            Preset::Ecg => "ecg",
            Preset::Sleep => "sleep",
        }
    }

    pub fn row(self) -> PresetRow {
        let row = |proj_dim, window, gamma, learn_rate| PresetRow {
            proj_dim,
            window,
            gamma,
            learn_rate,
            l1_weight: 0.0,
            buffer: 0,
        };
        match self {
            Preset::Gmm => row(5, 10, 0.1, 0.01),
            Preset::Freq => row(50, 100, 1.0, 0.01),
            Preset::FreqSlope => PresetRow {
                l1_weight: 5e-5,
                ..row(50, 100, 1.0, 0.01)
            },
            Preset::Beedance => row(3, 15, 0.1, 0.01),
            Preset::Hasc => row(3, 200, 0.1, 0.01),
            Preset::Yahoo => row(5, 2, 0.1, 0.001),
            Preset::Ecg => row(2, 3, 0.001, 0.001),
            Preset::Sleep => PresetRow {
                l1_weight: 0.01,
                buffer: 10,
                ..row(42, 15, 1.0, 0.01)
            },
        }
    }

    /// Writes this row into `cfg`, leaving the other fields alone.
    pub fn apply(self, cfg: &mut TrainConfig) {
        let r = self.row();
        cfg.proj_dim = r.proj_dim;
        cfg.window = r.window;
        cfg.gamma = r.gamma;
        cfg.learn_rate = r.learn_rate;
        cfg.l1_weight = r.l1_weight;
        cfg.buffer = r.buffer;
    }

    pub fn config(self) -> TrainConfig {
        let mut cfg = TrainConfig::default();
        self.apply(&mut cfg);
        cfg
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == key || (key == "freq-slopes" && *p == Preset::FreqSlope))
            .ok_or_else(|| {
                let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::Input(format!(
                    "unknown preset '{s}' (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}
