use crate::dmd::Episode;
use crate::error::{Error, Result};

/// A labeled collection of episodes sharing one snapshot dimension.
#[derive(Debug, Clone)]
pub struct Dataset {
    episodes: Vec<Episode>,
    class_names: Vec<String>,
}

impl Dataset {
    /// Labels are 1-based and must map into `class_names`.
    pub fn new(episodes: Vec<Episode>, class_names: Vec<String>) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::Config("dataset has no episodes".into()));
        }
        if class_names.is_empty() {
            return Err(Error::Config("dataset has no classes".into()));
        }
        let p = episodes[0].p();
        for ep in &episodes {
            if ep.p() != p {
                return Err(Error::DimensionMismatch(format!(
                    "episode `{}` has p = {}, expected {p}",
                    ep.id(),
                    ep.p()
                )));
            }
            if ep.label() == 0 || ep.label() > class_names.len() {
                return Err(Error::Config(format!(
                    "episode `{}` has label {} outside 1..={}",
                    ep.id(),
                    ep.label(),
                    class_names.len()
                )));
            }
        }
        Ok(Self { episodes, class_names })
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn p(&self) -> usize {
        self.episodes[0].p()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.episodes.iter().map(Episode::label).collect()
    }

    /// Largest mode count every episode supports, `min_i min(p, tau_i - 1)`.
    pub fn max_rank(&self) -> usize {
        self.episodes
            .iter()
            .map(|e| e.p().min(e.tau() - 1))
            .min()
            .unwrap_or(0)
    }
}
