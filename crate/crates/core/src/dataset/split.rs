use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One train/validation/test partition of video ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub split_id: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self, known_ids: &[String]) -> Result<()> {
        let known: HashSet<&str> = known_ids.iter().map(String::as_str).collect();
        let mut seen = HashSet::new();
        for (name, list) in [
            ("train", &self.train_ids),
            ("val", &self.val_ids),
            ("test", &self.test_ids),
        ] {
            if list.is_empty() {
                return Err(Error::Config(format!("split {}: {name} list is empty", self.split_id)));
            }
            for id in list {
                if !known.contains(id.as_str()) {
                    return Err(Error::Config(format!(
                        "split {}: unknown video id '{id}'",
                        self.split_id
                    )));
                }
                if !seen.insert(id.as_str()) {
                    return Err(Error::Config(format!(
                        "split {}: video id '{id}' appears in more than one list",
                        self.split_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Seeded random partitions: `round(test_fraction * N)` test ids, then
/// `round(val_fraction * remaining)` validation ids carved from the rest.
pub fn make_splits(
    ids: &[String],
    n_splits: usize,
    test_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<Vec<SplitSpec>> {
    let in_unit = |f: f64| f > 0.0 && f < 1.0;
    if !in_unit(test_fraction) || !in_unit(val_fraction) || test_fraction + val_fraction >= 1.0 {
        return Err(Error::Config(format!(
            "fractions must lie in (0, 1) with a sum below 1, got test {test_fraction}, val {val_fraction}"
        )));
    }
    if n_splits == 0 {
        return Err(Error::Config("n_splits must be positive".into()));
    }
    let total = ids.len();
    let n_test = (test_fraction * total as f64).round() as usize;
    let rest = total.saturating_sub(n_test);
    let n_val = (val_fraction * rest as f64).round() as usize;
    if n_test == 0 || n_val == 0 || n_val >= rest {
        return Err(Error::Config(format!(
            "{total} ids are too few for nonempty train/val/test parts"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = Vec::with_capacity(n_splits);
    for split_id in 0..n_splits {
        let mut order = ids.to_vec();
        order.shuffle(&mut rng);
        let test_ids = order[..n_test].to_vec();
        let val_ids = order[n_test..n_test + n_val].to_vec();
        let train_ids = order[n_test + n_val..].to_vec();
        splits.push(SplitSpec {
            split_id,
            train_ids,
            val_ids,
            test_ids,
            seed,
        });
    }
    Ok(splits)
}

pub fn save_splits(path: &Path, splits: &[SplitSpec]) -> Result<()> {
    let text = serde_json::to_string_pretty(splits).expect("splits serialize");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_splits(path: &Path) -> Result<Vec<SplitSpec>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}
