#![allow(dead_code)]

use fairaudit_core::synthetic::{generate_cohort, CohortSpec};
use fairaudit_core::{AnnotatedCohort, EmbeddingSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Eight race × gender subgroups of the same geometry.
pub fn balanced_cohort(seed: u64, identities_per_group: usize, samples_per_identity: usize, dim: usize) -> AnnotatedCohort {
    generate_cohort(&CohortSpec::balanced(dim, seed, identities_per_group, samples_per_identity)).unwrap()
}

pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize, centre: &[f64], std: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|k| {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    centre.get(k).copied().unwrap_or(0.0) + std * z
                })
                .collect()
        })
        .collect()
}

pub fn embedding_set(rows: Vec<Vec<f64>>) -> EmbeddingSet {
    let ids = (0..rows.len()).map(|i| format!("p{i:04}")).collect();
    EmbeddingSet::from_rows(ids, rows).unwrap()
}

use fairaudit_core::{AgeBin, Gender, JoinMode, Race, SampleAnnotation};

/// Cohort from explicit rows; sample `i` gets id `s{i:03}`.
pub fn cohort_from(rows: Vec<Vec<f64>>, labels: &[(&str, Race, Gender, u32)]) -> AnnotatedCohort {
    let ids: Vec<String> = (0..rows.len()).map(|i| format!("s{i:03}")).collect();
    let anns = ids
        .iter()
        .zip(labels)
        .map(|(id, &(identity, race, gender, age))| SampleAnnotation {
            sample_id: id.clone(),
            identity_id: identity.into(),
            race,
            gender,
            age_bin: AgeBin::new(age).unwrap(),
        })
        .collect();
    let e = EmbeddingSet::from_rows(ids, rows).unwrap();
    AnnotatedCohort::join(e, anns, JoinMode::Strict).unwrap().0
}
