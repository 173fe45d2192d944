//! Synthetic annotated cohorts with controllable group geometry.
//!
//! Each subgroup gets a random unit center. An identity center is
//! `normalize(w·g + d·z/√dim)` for subgroup center `g`, pull weight `w`,
//! dispersion `d` and `z ~ N(0, I)`; each sample is
//! `normalize(c + σ·z'/√dim)` for identity center `c` and noise `σ`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cohort::{AgeBin, AnnotatedCohort, EmbeddingSet, Gender, JoinMode, Race, SampleAnnotation};
use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupSpec {
    pub race: Race,
    pub gender: Gender,
    pub age_bin: AgeBin,
    pub identities: usize,
    pub samples_per_identity: usize,
    /// Spread of identity centers around the subgroup center.
    pub dispersion: f64,
    /// Within-identity noise scale.
    pub noise: f64,
    /// Weight of the shared subgroup center; `0` makes identity centers
    /// isotropic, larger values pull the subgroup's identities together.
    pub pull: f64,
    /// Each sample's age bin is the subgroup's plus a uniform offset in
    /// `0..=age_spread`, capped at the last bin.
    pub age_spread: u8,
}

impl SubgroupSpec {
    pub fn new(race: Race, gender: Gender, age_bin: AgeBin, identities: usize, samples_per_identity: usize) -> Self {
        Self {
            race,
            gender,
            age_bin,
            identities,
            samples_per_identity,
            dispersion: 1.0,
            noise: 0.3,
            pull: 1.0,
            age_spread: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortSpec {
    pub dim: usize,
    pub seed: u64,
    pub groups: Vec<SubgroupSpec>,
}

impl CohortSpec {
    /// One subgroup per race × gender cell with the same geometry.
    pub fn balanced(dim: usize, seed: u64, identities_per_group: usize, samples_per_identity: usize) -> Self {
        let mut groups = Vec::new();
        for race in Race::ALL {
            for gender in Gender::ALL {
                let age = AgeBin::new((groups.len() % AgeBin::COUNT) as u32).expect("bin in range");
                groups.push(SubgroupSpec::new(race, gender, age, identities_per_group, samples_per_identity));
            }
        }
        Self { dim, seed, groups }
    }

    pub fn identities(&self) -> usize {
        self.groups.iter().map(|g| g.identities).sum()
    }

    pub fn samples(&self) -> usize {
        self.groups.iter().map(|g| g.identities * g.samples_per_identity).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::ZeroDimension);
        }
        if self.groups.is_empty() {
            return Err(Error::Infeasible("cohort spec has no subgroups".into()));
        }
        for (k, g) in self.groups.iter().enumerate() {
            if g.identities == 0 || g.samples_per_identity == 0 {
                return Err(Error::Infeasible(format!("subgroup {k} needs at least one identity and one sample")));
            }
            for (name, v) in [("dispersion", g.dispersion), ("noise", g.noise), ("pull", g.pull)] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::InvalidArgument(format!("subgroup {k}: {name} must be finite and >= 0, got {v}")));
                }
            }
            if g.dispersion == 0.0 && g.pull == 0.0 {
                return Err(Error::InvalidArgument(format!("subgroup {k}: dispersion and pull are both zero")));
            }
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(v: Vec<f64>) -> Result<Vec<f64>> {
    let n = math::norm(&v);
    if !(n > 0.0) {
        return Err(Error::Degenerate("generated a zero vector".into()));
    }
    Ok(v.into_iter().map(|x| x / n).collect())
}

/// Builds the cohort described by `spec`.
///
/// Subgroup centers come from stream 0 of the seed; identity `k` (counted
/// across subgroups) uses stream `k + 1`, so each identity is reproducible
/// on its own. Sample ids are `id{k:05}_{s:03}`.
pub fn generate_cohort(spec: &CohortSpec) -> Result<AnnotatedCohort> {
    spec.validate()?;
    let dim = spec.dim;
    let scale = 1.0 / math::sqrt(dim as f64);

    let mut center_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    center_rng.set_stream(0);
    let centers: Vec<Vec<f64>> = spec
        .groups
        .iter()
        .map(|_| unit(gaussian(&mut center_rng, dim)))
        .collect::<Result<_>>()?;

    let mut ids = Vec::with_capacity(spec.samples());
    let mut data = Vec::with_capacity(spec.samples() * dim);
    let mut annotations = Vec::with_capacity(spec.samples());
    let mut identity = 0u64;
    for (g, center) in spec.groups.iter().zip(&centers) {
        for _ in 0..g.identities {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(identity + 1);
            let z = gaussian(&mut rng, dim);
            let id_center = unit(center.iter().zip(&z).map(|(c, z)| g.pull * c + g.dispersion * scale * z).collect())?;
            let identity_id = format!("id{identity:05}");
            for s in 0..g.samples_per_identity {
                let z = gaussian(&mut rng, dim);
                let offset = if g.age_spread == 0 { 0 } else { rng.random_range(0..=g.age_spread) };
                let sample = unit(id_center.iter().zip(&z).map(|(c, z)| c + g.noise * scale * z).collect())?;
                let sample_id = format!("{identity_id}_{s:03}");
                ids.push(sample_id.clone());
                data.extend_from_slice(&sample);
                let bin = (g.age_bin.index() as u32 + offset as u32).min(AgeBin::COUNT as u32 - 1);
                annotations.push(SampleAnnotation {
                    sample_id,
                    identity_id: identity_id.clone(),
                    race: g.race,
                    gender: g.gender,
                    age_bin: AgeBin::new(bin)?,
                });
            }
            identity += 1;
        }
    }

    let embeddings = EmbeddingSet::new(dim, ids, data)?;
    let (cohort, _) = AnnotatedCohort::join(embeddings, annotations, JoinMode::Strict)?;
    Ok(cohort)
}

/// Identity ids in generation order, for callers that need `String` keys.
pub fn identity_ids(cohort: &AnnotatedCohort) -> Vec<String> {
    cohort.identity_groups().into_iter().map(|(id, _)| id).collect()
}
