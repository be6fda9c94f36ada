//! Synthetic identity-structured embeddings.
//!
//! Each latent identity gets a center on the unit sphere; its samples are the
//! center plus isotropic Gaussian noise, re-normalized (an approximate
//! von-Mises-Fisher draw). Two controlled failure modes make clustering
//! non-trivial: *split* identities emit samples around two well-separated
//! modes (so naive clustering shatters them into sub-clusters), and
//! *overlapped* identity pairs sit closer than the within-identity spread (so
//! naive clustering merges them). Per identity, samples are assigned
//! TRAIN/QUERY/GALLERY roles by index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embedding::{l2_normalize, EmbeddingTable, FeatureVector};
use crate::error::{Error, Result};

/// Evaluation role of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "TRAIN" => Ok(Split::Train),
            "QUERY" => Ok(Split::Query),
            "GALLERY" => Ok(Split::Gallery),
            _ => Err(Error::Config(format!(
                "unknown split {s:?} (expected TRAIN, QUERY or GALLERY)"
            ))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "TRAIN",
            Split::Query => "QUERY",
            Split::Gallery => "GALLERY",
        })
    }
}

/// Generation knobs for one synthetic scenario.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub n_identities: usize,
    pub samples_per_identity: usize,
    pub d: usize,
    /// Approximate angular standard deviation (radians) of samples around
    /// their mode center.
    pub intra_spread: f64,
    /// Fraction of identities generated as two separated modes.
    pub split_fraction: f64,
    /// Angle (radians) between the two modes of a split identity.
    pub split_gap: f64,
    /// Number of identity pairs whose centers are pulled together.
    pub overlap_pairs: usize,
    /// Angle (radians) between the centers of an overlapped pair.
    pub overlap_gap: f64,
    /// Fraction of each identity's samples in the TRAIN role.
    pub train_fraction: f64,
    /// Fraction in the QUERY role; the remainder is GALLERY.
    pub query_fraction: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_identities: 40,
            samples_per_identity: 24,
            d: 32,
            intra_spread: 0.35,
            split_fraction: 0.3,
            split_gap: 1.25,
            overlap_pairs: 4,
            overlap_gap: 0.3,
            train_fraction: 0.6,
            query_fraction: 0.2,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    fn validate(&self) -> Result<()> {
        if self.n_identities == 0 {
            return Err(Error::Config("scenario.n_identities must be >= 1".into()));
        }
        if self.samples_per_identity < 2 {
            return Err(Error::Config(
                "scenario.samples_per_identity must be >= 2".into(),
            ));
        }
        if self.d < 2 {
            return Err(Error::Config("scenario.d must be >= 2".into()));
        }
        if !(self.intra_spread.is_finite() && self.intra_spread >= 0.0) {
            return Err(Error::Config(format!(
                "scenario.intra_spread must be finite and >= 0, got {}",
                self.intra_spread
            )));
        }
        if !(0.0..=1.0).contains(&self.split_fraction) {
            return Err(Error::Config(format!(
                "scenario.split_fraction must lie in [0, 1], got {}",
                self.split_fraction
            )));
        }
        let n_split = self.n_split();
        if n_split + 2 * self.overlap_pairs > self.n_identities {
            return Err(Error::Config(format!(
                "{} split identities plus {} overlap pairs exceed {} identities",
                n_split, self.overlap_pairs, self.n_identities
            )));
        }
        if !(0.0..=1.0).contains(&self.train_fraction)
            || !(0.0..=1.0).contains(&self.query_fraction)
            || self.train_fraction + self.query_fraction > 1.0
        {
            return Err(Error::Config(
                "scenario train/query fractions must lie in [0, 1] and sum to <= 1".into(),
            ));
        }
        self.n_identities
            .checked_mul(self.samples_per_identity)
            .ok_or_else(|| Error::Config("scenario sample count overflows".into()))?;
        Ok(())
    }

    fn n_split(&self) -> usize {
        (self.split_fraction * self.n_identities as f64).round() as usize
    }
}

/// A generated scenario: embeddings plus ground-truth ids and eval roles.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub embeddings: EmbeddingTable,
    pub true_ids: Vec<i64>,
    pub split: Vec<Split>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.true_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    /// Sample indices in the given role, ascending.
    pub fn indices_of(&self, role: Split) -> Vec<usize> {
        self.split
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == role)
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks the cross-role invariant: every QUERY identity appears in the
    /// GALLERY.
    pub fn validate(&self) -> Result<()> {
        if self.true_ids.len() != self.embeddings.len()
            || self.split.len() != self.embeddings.len()
        {
            return Err(Error::Invariant(
                "dataset arrays disagree on sample count".into(),
            ));
        }
        let gallery: std::collections::BTreeSet<i64> = self
            .indices_of(Split::Gallery)
            .into_iter()
            .map(|i| self.true_ids[i])
            .collect();
        for &q in self.indices_of(Split::Query).iter() {
            if !gallery.contains(&self.true_ids[q]) {
                return Err(Error::Invariant(format!(
                    "query identity {} missing from gallery",
                    self.true_ids[q]
                )));
            }
        }
        Ok(())
    }

    /// Serializes to the dataset text format: header `N d`, then one line per
    /// sample `sample_id true_id split v_1 ... v_d` at full precision.
    pub fn dump(&self) -> String {
        let n = self.len();
        let d = self.dim();
        let mut out = String::new();
        out.push_str(&format!("{n} {d}\n"));
        for i in 0..n {
            out.push_str(&format!("{i} {} {}", self.true_ids[i], self.split[i]));
            for v in self.embeddings.rows()[i].as_slice() {
                out.push_str(&format!(" {v:?}"));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the dataset text format. Lines must list sample ids in order
    /// `0..N`.
    pub fn load(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse {
                line: 1,
                msg: "missing header line".into(),
            })?;
        let mut parts = header.split_whitespace();
        let n: usize = parse_field(parts.next(), 1, "sample count N")?;
        let d: usize = parse_field(parts.next(), 1, "dimension d")?;
        if parts.next().is_some() {
            return Err(Error::Parse {
                line: 1,
                msg: "header must be exactly `N d`".into(),
            });
        }
        let mut rows = Vec::with_capacity(n);
        let mut true_ids = Vec::with_capacity(n);
        let mut split = Vec::with_capacity(n);
        for expected in 0..n {
            let (idx, line) = lines.next().ok_or_else(|| Error::Parse {
                line: expected + 2,
                msg: format!("expected {n} sample lines, found {expected}"),
            })?;
            let lineno = idx + 1;
            let mut parts = line.split_whitespace();
            let id: usize = parse_field(parts.next(), lineno, "sample_id")?;
            if id != expected {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("sample_id {id} out of order, expected {expected}"),
                });
            }
            let true_id: i64 = parse_field(parts.next(), lineno, "true_id")?;
            let role: Split = parts
                .next()
                .ok_or_else(|| Error::Parse {
                    line: lineno,
                    msg: "missing split field".into(),
                })?
                .parse()
                .map_err(|e| Error::Parse {
                    line: lineno,
                    msg: format!("{e}"),
                })?;
            let mut values = Vec::with_capacity(d);
            for k in 0..d {
                values.push(parse_field(parts.next(), lineno, &format!("v_{}", k + 1))?);
            }
            if parts.next().is_some() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("more than {d} coordinates"),
                });
            }
            rows.push(FeatureVector::new(values).map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("{e}"),
            })?);
            true_ids.push(true_id);
            split.push(role);
        }
        if let Some((idx, line)) = lines.next() {
            if !line.trim().is_empty() {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: "trailing content after last sample".into(),
                });
            }
        }
        let dataset = LabeledDataset {
            embeddings: EmbeddingTable::new(rows)?,
            true_ids,
            split,
        };
        Ok(dataset)
    }
}

fn parse_field<T: std::str::FromStr>(
    field: Option<&str>,
    line: usize,
    what: &str,
) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = field.ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing {what}"),
    })?;
    raw.parse().map_err(|e| Error::Parse {
        line,
        msg: format!("bad {what} {raw:?}: {e}"),
    })
}

fn gaussian_vector<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_unit<R: Rng>(rng: &mut R, d: usize) -> Result<FeatureVector> {
    loop {
        let v = FeatureVector::new(gaussian_vector(rng, d))?;
        if v.norm() > 1e-6 {
            return l2_normalize(&v);
        }
    }
}

/// Unit vector orthogonal to `center`, direction drawn from `rng`.
fn random_orthogonal<R: Rng>(rng: &mut R, center: &FeatureVector) -> Result<FeatureVector> {
    loop {
        let u = random_unit(rng, center.dim())?;
        let proj = u.dot(center)?;
        let residual = u.axpy(-proj, center)?;
        if residual.norm() > 1e-6 {
            return l2_normalize(&residual);
        }
    }
}

/// `cos(angle) * center + sin(angle) * direction` (both unit, orthogonal).
fn rotate_toward(
    center: &FeatureVector,
    direction: &FeatureVector,
    angle: f64,
) -> Result<FeatureVector> {
    center.scale(angle.cos()).axpy(angle.sin(), direction)
}

/// Generates a scenario. Deterministic: the same config (seed included)
/// yields a bitwise-identical dataset.
pub fn generate(config: &ScenarioConfig) -> Result<LabeledDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.d;
    let n_ids = config.n_identities;
    let spi = config.samples_per_identity;

    // Mode centers; split identities occupy the low indices with two modes,
    // overlapped pairs are taken from the high end.
    let n_split = config.n_split();
    let mut modes: Vec<Vec<FeatureVector>> = Vec::with_capacity(n_ids);
    for identity in 0..n_ids {
        let base = random_unit(&mut rng, d)?;
        if identity < n_split {
            let u = random_orthogonal(&mut rng, &base)?;
            let half = 0.5 * config.split_gap;
            modes.push(vec![
                rotate_toward(&base, &u, -half)?,
                rotate_toward(&base, &u, half)?,
            ]);
        } else {
            modes.push(vec![base]);
        }
    }
    for pair in 0..config.overlap_pairs {
        // Pull identity `hi-1` next to identity `hi`.
        let hi = n_ids - 1 - 2 * pair;
        let anchor = modes[hi][0].clone();
        let u = random_orthogonal(&mut rng, &anchor)?;
        modes[hi - 1] = vec![rotate_toward(&anchor, &u, config.overlap_gap)?];
    }

    // Role counts per identity, by sample index.
    let n_train = (config.train_fraction * spi as f64).floor() as usize;
    let n_query = std::cmp::max(1, (config.query_fraction * spi as f64).floor() as usize);
    let (n_train, n_query) = if n_train + n_query >= spi {
        // Leave at least one gallery sample.
        if n_train > 0 {
            (n_train - 1, n_query.min(spi - n_train))
        } else {
            (0, spi - 1)
        }
    } else {
        (n_train, n_query)
    };

    // Per-coordinate noise scale such that the expected angular deviation is
    // roughly intra_spread: a d-dimensional Gaussian has norm ~ sigma*sqrt(d).
    let sigma = config.intra_spread / (d as f64).sqrt();

    let total = n_ids * spi;
    let mut rows = Vec::with_capacity(total);
    let mut true_ids = Vec::with_capacity(total);
    let mut split = Vec::with_capacity(total);
    for (identity, identity_modes) in modes.iter().enumerate() {
        for s in 0..spi {
            let center = &identity_modes[s % identity_modes.len()];
            let noise = FeatureVector::new(gaussian_vector(&mut rng, d))?;
            let sample = l2_normalize(&center.axpy(sigma, &noise)?)?;
            rows.push(sample);
            true_ids.push(identity as i64);
            split.push(if s < n_train {
                Split::Train
            } else if s < n_train + n_query {
                Split::Query
            } else {
                Split::Gallery
            });
        }
    }

    let dataset = LabeledDataset {
        embeddings: EmbeddingTable::new(rows)?,
        true_ids,
        split,
    };
    dataset.validate()?;
    Ok(dataset)
}
