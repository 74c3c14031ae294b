//! Gaussian-mixture classification data partitioned across clients.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::FlError;

/// Labelled samples stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn class_set(&self) -> Vec<usize> {
        let mut classes = self.labels.clone();
        classes.sort_unstable();
        classes.dedup();
        classes
    }

    /// Concatenation of several datasets of equal dimension.
    pub fn pooled<'a>(parts: impl IntoIterator<Item = &'a Dataset>) -> Dataset {
        let mut out = Dataset { dim: 0, features: Vec::new(), labels: Vec::new() };
        for p in parts {
            out.dim = p.dim;
            out.features.extend_from_slice(&p.features);
            out.labels.extend_from_slice(&p.labels);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    pub n_classes: usize,
    pub dim: usize,
    pub samples_per_client: usize,
    pub test_samples: usize,
    /// Norm of every class mean; samples add unit-variance noise.
    pub separation: f64,
    pub iid: bool,
    pub classes_per_client: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            n_classes: 10,
            dim: 32,
            samples_per_client: 100,
            test_samples: 2000,
            separation: 3.0,
            iid: true,
            classes_per_client: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub n_classes: usize,
    pub dim: usize,
    pub means: Vec<Vec<f64>>,
    pub clients: Vec<Dataset>,
    pub test: Dataset,
}

impl SyntheticTask {
    pub fn pooled_train(&self) -> Dataset {
        Dataset::pooled(&self.clients)
    }
}

pub fn generate_synthetic_task(spec: &TaskSpec, clients: usize, seed: u64) -> Result<SyntheticTask, FlError> {
    if spec.n_classes < 2 {
        return Err(FlError::InvalidConfig("at least two classes are required".into()));
    }
    if spec.dim == 0 || spec.samples_per_client == 0 || clients == 0 {
        return Err(FlError::InvalidConfig("dimension, client count and samples per client must be positive".into()));
    }
    if !spec.iid && (spec.classes_per_client == 0 || spec.classes_per_client > spec.n_classes) {
        return Err(FlError::InvalidConfig(format!(
            "classes_per_client {} must lie in 1..={}",
            spec.classes_per_client, spec.n_classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(11);

    let means: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| {
            let v: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x * spec.separation / norm).collect()
        })
        .collect();

    let all: Vec<usize> = (0..spec.n_classes).collect();
    let mut parts = Vec::with_capacity(clients);
    for _ in 0..clients {
        let mut classes: Vec<usize> = if spec.iid {
            all.clone()
        } else {
            all.choose_multiple(&mut rng, spec.classes_per_client).copied().collect()
        };
        classes.shuffle(&mut rng);
        let labels: Vec<usize> = (0..spec.samples_per_client).map(|i| classes[i % classes.len()]).collect();
        parts.push(draw(&means, labels, &mut rng));
    }

    let test_labels: Vec<usize> = (0..spec.test_samples).map(|i| i % spec.n_classes).collect();
    let test = draw(&means, test_labels, &mut rng);
    Ok(SyntheticTask { n_classes: spec.n_classes, dim: spec.dim, means, clients: parts, test })
}

fn draw(means: &[Vec<f64>], mut labels: Vec<usize>, rng: &mut ChaCha8Rng) -> Dataset {
    labels.shuffle(rng);
    let dim = means[0].len();
    let mut features = Vec::with_capacity(labels.len() * dim);
    for &y in &labels {
        features.extend(means[y].iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)));
    }
    Dataset { dim, features, labels }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iid_single_client_holds_every_class() {
        let task = generate_synthetic_task(&TaskSpec::default(), 1, 3).unwrap();
        assert_eq!(task.clients[0].class_set(), (0..10).collect::<Vec<_>>());
        assert_eq!(task.clients[0].features.len(), 100 * 32);
        assert_eq!(task.test.len(), 2000);
    }

    #[test]
    fn non_iid_clients_see_three_classes() {
        let spec = TaskSpec { iid: false, ..Default::default() };
        let task = generate_synthetic_task(&spec, 20, 5).unwrap();
        for c in &task.clients {
            assert_eq!(c.class_set().len(), 3);
        }
        let distinct: std::collections::BTreeSet<_> = task.clients.iter().map(Dataset::class_set).collect();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = TaskSpec { iid: false, ..Default::default() };
        assert_eq!(generate_synthetic_task(&spec, 4, 9).unwrap(), generate_synthetic_task(&spec, 4, 9).unwrap());
        assert_ne!(generate_synthetic_task(&spec, 4, 9).unwrap(), generate_synthetic_task(&spec, 4, 10).unwrap());
    }

    #[test]
    fn rejects_bad_specs() {
        let too_many = TaskSpec { iid: false, classes_per_client: 11, ..Default::default() };
        assert!(generate_synthetic_task(&too_many, 2, 0).is_err());
        let one_class = TaskSpec { n_classes: 1, ..Default::default() };
        assert!(generate_synthetic_task(&one_class, 2, 0).is_err());
    }
}
