//! Trigger-class selection and out-of-distribution trigger set construction.
//!
//! Trigger classes are sampled from a frequency band of the catalog. Each
//! trigger pair then gets an image context and a text context of 2..=max
//! classes drawn from that set; the text contexts are shuffled against the
//! image contexts so that no pair describes the same combination, which keeps
//! their pre-watermark similarity low.

use serde::{Deserialize, Serialize};

use crate::corpus::{ClassCatalog, ClassId, PairSpec};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Default size of the trigger class set.
pub const DEFAULT_TRIGGER_CLASSES: usize = 26;
/// Default largest context per trigger side.
pub const DEFAULT_MAX_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyBand {
    /// Top quartile by frequency.
    #[default]
    High,
    /// Second quartile by frequency.
    Moderate,
    All,
}

impl FrequencyBand {
    /// The band's classes, most frequent first.
    pub fn members(self, catalog: &ClassCatalog) -> Vec<ClassId> {
        let ranked = catalog.ranked_by_frequency();
        let q = ranked.len().div_ceil(4);
        match self {
            FrequencyBand::High => ranked[..q].to_vec(),
            FrequencyBand::Moderate => {
                ranked[q.min(ranked.len())..(2 * q).min(ranked.len())].to_vec()
            }
            FrequencyBand::All => ranked,
        }
    }
}

impl std::fmt::Display for FrequencyBand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FrequencyBand::High => "high",
            FrequencyBand::Moderate => "moderate",
            FrequencyBand::All => "all",
        })
    }
}

impl std::str::FromStr for FrequencyBand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "high" => Ok(FrequencyBand::High),
            "moderate" => Ok(FrequencyBand::Moderate),
            "all" => Ok(FrequencyBand::All),
            other => Err(Error::InvalidConfig(format!(
                "unknown frequency band {other:?}"
            ))),
        }
    }
}

/// Uniformly samples `count` distinct classes from `band`. Returned sorted.
pub fn select_trigger_classes(
    catalog: &ClassCatalog,
    count: usize,
    band: FrequencyBand,
    seed: u64,
) -> Result<Vec<ClassId>> {
    let members = band.members(catalog);
    if members.len() < count {
        return Err(Error::BandTooSmall {
            band: band.to_string(),
            available: members.len(),
            requested: count,
        });
    }
    let mut rng = SeededRng::new(seed);
    let mut picked: Vec<ClassId> = rng
        .sample_without_replacement(members.len(), count)
        .into_iter()
        .map(|i| members[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerSet {
    pub trigger_class_set: Vec<ClassId>,
    pub pairs: Vec<PairSpec>,
}

impl TriggerSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.pairs.iter().map(|p| p.id.clone()).collect()
    }

    /// Every distinct image or text context, sorted.
    pub fn combos(&self) -> Vec<Vec<ClassId>> {
        let mut all: Vec<Vec<ClassId>> = self
            .pairs
            .iter()
            .flat_map(|p| [p.image_classes.clone(), p.text_classes.clone()])
            .collect();
        all.sort();
        all.dedup();
        all
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn draw_combo(rng: &mut SeededRng, classes: &[ClassId], max_classes: usize) -> Vec<ClassId> {
    let size = rng.range_inclusive(2, max_classes);
    let mut combo: Vec<ClassId> = rng
        .sample_without_replacement(classes.len(), size)
        .into_iter()
        .map(|i| classes[i])
        .collect();
    combo.sort_unstable();
    combo
}

/// Builds `m` shuffled trigger pairs over `classes`.
pub fn build_trigger_set(
    classes: &[ClassId],
    m: usize,
    max_classes: usize,
    seed: u64,
) -> Result<TriggerSet> {
    if max_classes < 2 || classes.len() < max_classes {
        return Err(Error::InsufficientClasses {
            needed: max_classes.max(2),
            available: classes.len(),
        });
    }
    if m < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 trigger pairs, got {m}"
        )));
    }
    let mut set: Vec<ClassId> = classes.to_vec();
    set.sort_unstable();
    set.dedup();
    if set.len() < max_classes {
        return Err(Error::InsufficientClasses {
            needed: max_classes,
            available: set.len(),
        });
    }

    let mut rng = SeededRng::new(seed);
    let image: Vec<Vec<ClassId>> = (0..m)
        .map(|_| draw_combo(&mut rng, &set, max_classes))
        .collect();
    let mut text: Vec<Vec<ClassId>> = (0..m)
        .map(|_| draw_combo(&mut rng, &set, max_classes))
        .collect();
    rng.shuffle(&mut text);

    // Resolve any pair whose two contexts coincide, first by a swap that
    // leaves both positions mismatched, otherwise by redrawing.
    for k in 0..m {
        if text[k] != image[k] {
            continue;
        }
        let partner = (0..m).find(|&j| j != k && text[j] != image[k] && text[k] != image[j]);
        match partner {
            Some(j) => text.swap(k, j),
            None => {
                while text[k] == image[k] {
                    text[k] = draw_combo(&mut rng, &set, max_classes);
                }
            }
        }
    }

    let width = m.to_string().len().max(4);
    let pairs = image
        .into_iter()
        .zip(text)
        .enumerate()
        .map(|(i, (image_classes, text_classes))| PairSpec {
            id: format!("trigger-{i:0width$}"),
            image_classes,
            text_classes,
        })
        .collect();
    Ok(TriggerSet {
        trigger_class_set: set,
        pairs,
    })
}
