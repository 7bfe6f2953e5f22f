//! Rayon drivers around the sequential core routines. Results are collected
//! in index order, so they do not depend on scheduling.

use fascicle_core::cell_problem::{tabulate_replicate, TableSpec};
use fascicle_core::cell_problem::CellError;
use fascicle_core::conductivity::ConductivityLaw;
use fascicle_core::ergodics::{derive_seed, sample_stats, SampleStats};
use fascicle_core::geometry::{GeometryError, GeometryModel};
use fascicle_core::micro_reference::{homogenized_reference, sweep_sample, HomogenizedReference, MicroError, MicroSweepSpec};
use fascicle_core::EffectiveLawTable;
use rayon::prelude::*;

pub fn collect_samples(model: &GeometryModel, side: f64, n: usize, seed: u64) -> Result<Vec<SampleStats>, GeometryError> {
    (0..n).into_par_iter().map(|s| sample_stats(model, side, derive_seed(seed, s as u64))).collect()
}

pub fn tabulate(model: &GeometryModel, law: &ConductivityLaw, spec: &TableSpec) -> Result<EffectiveLawTable, CellError> {
    let reps = (0..spec.replicates)
        .into_par_iter()
        .map(|r| tabulate_replicate(model, law, spec, r))
        .collect::<Result<Vec<_>, _>>()?;
    EffectiveLawTable::from_replicates(model, law, spec, reps)
}

/// `(epsilon, realization, energy)` for every sweep sample.
pub type SweepSamples = Vec<(f64, usize, f64)>;

pub fn micro_sweep(
    model: &GeometryModel,
    law: &ConductivityLaw,
    spec: &MicroSweepSpec,
) -> Result<(SweepSamples, HomogenizedReference), MicroError> {
    let jobs: Vec<(f64, usize)> = spec.epsilons.iter().flat_map(|&e| (0..spec.realizations).map(move |r| (e, r))).collect();
    let (samples, reference) = rayon::join(
        || {
            jobs.par_iter()
                .map(|&(e, r)| sweep_sample(model, law, spec, e, r).map(|s| (e, r, s.energy())))
                .collect::<Result<Vec<_>, _>>()
        },
        || homogenized_reference(model, law, spec),
    );
    Ok((samples?, reference?))
}
