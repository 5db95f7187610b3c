//! Recordings, labels and the fixed 19-channel montage.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::IoError;

/// Canonical 10-20 channel order shared by every graph.
pub const CHANNELS: [&str; 19] = [
    "Fp1", "F3", "C3", "P3", "O1", "F7", "T3", "T5", "Fz", "Fp2", "F4", "C4", "P4", "O2", "F8",
    "T4", "T6", "Cz", "Pz",
];

pub const N_CHANNELS: usize = CHANNELS.len();

/// Minimum duration a recording must cover (one epoch).
pub const MIN_DURATION_S: f64 = 5.0;

/// Sample rates must exceed twice the 70 Hz upper band edge.
pub const MIN_SAMPLE_RATE_HZ: f64 = 140.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "HC")]
    Hc = 0,
    #[serde(rename = "MDD")]
    Mdd = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Hc, Label::Mdd];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_target(self) -> f64 {
        self as u8 as f64
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Hc),
            1 => Some(Label::Mdd),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Hc => "HC",
            Label::Mdd => "MDD",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct Montage {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Montage {
    pub fn standard() -> Self {
        let names: Vec<String> = CHANNELS.iter().map(|s| s.to_string()).collect();
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Montage { names, index }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

impl Default for Montage {
    fn default() -> Self {
        Montage::standard()
    }
}

/// A multichannel recording whose rows follow `channel_names`.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub label: Label,
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
    /// `[channel][sample]`, microvolts.
    pub data: Vec<Vec<f64>>,
}

impl Recording {
    /// Builds a recording and checks its invariants.
    pub fn new(
        subject_id: impl Into<String>,
        label: Label,
        sample_rate_hz: f64,
        channel_names: Vec<String>,
        data: Vec<Vec<f64>>,
    ) -> Result<Self, IoError> {
        let rec = Recording {
            subject_id: subject_id.into(),
            label,
            sample_rate_hz,
            channel_names,
            data,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn n_samples(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), IoError> {
        if !(self.sample_rate_hz > MIN_SAMPLE_RATE_HZ) {
            return Err(IoError::SampleRateTooLow(self.sample_rate_hz));
        }
        if self.channel_names.len() != self.data.len() {
            return Err(IoError::DimensionMismatch(format!(
                "{} channel names for {} data rows",
                self.channel_names.len(),
                self.data.len()
            )));
        }
        let n = self.n_samples();
        if let Some(bad) = self.data.iter().position(|row| row.len() != n) {
            return Err(IoError::DimensionMismatch(format!(
                "channel {} has {} samples, expected {n}",
                self.channel_names[bad],
                self.data[bad].len()
            )));
        }
        let needed = (MIN_DURATION_S * self.sample_rate_hz).round() as usize;
        if n < needed {
            return Err(IoError::TooShortRecording { needed, got: n });
        }
        for (row, name) in self.data.iter().zip(&self.channel_names) {
            if let Some(sample) = row.iter().position(|v| !v.is_finite()) {
                return Err(IoError::NonFiniteSample {
                    channel: name.clone(),
                    sample,
                });
            }
        }
        Ok(())
    }

    /// Reorders rows to the canonical montage and drops any extra channels.
    pub fn to_montage(mut self, montage: &Montage) -> Result<Self, IoError> {
        let mut by_name: HashMap<&str, usize> = HashMap::new();
        for (i, name) in self.channel_names.iter().enumerate() {
            by_name.insert(name.as_str(), i);
        }
        let mut order = Vec::with_capacity(montage.len());
        for name in montage.names() {
            match by_name.get(name.as_str()) {
                Some(&i) => order.push(i),
                None => return Err(IoError::MissingChannel(name.clone())),
            }
        }
        let dropped: Vec<&str> = self
            .channel_names
            .iter()
            .filter(|n| montage.index_of(n).is_none())
            .map(String::as_str)
            .collect();
        if !dropped.is_empty() {
            log::info!(
                "{}: dropping non-montage channels {:?}",
                self.subject_id,
                dropped
            );
        }
        let mut rows: Vec<Option<Vec<f64>>> = self.data.drain(..).map(Some).collect();
        self.data = order
            .iter()
            .map(|&i| rows[i].take().expect("channel names are unique"))
            .collect();
        self.channel_names = montage.names().to_vec();
        Ok(self)
    }
}
