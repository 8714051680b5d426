//! Criterion benchmarks for the hot kernels; see `benches/`.

use aeseg::data::{Cohort, PatientRecord, PhantomParams};

/// A desk-scale lesion phantom shared by the benchmarks.
pub fn phantom() -> PatientRecord {
    aeseg::data::generate_phantom(&PhantomParams::default(), Cohort::Lesion).expect("default params are valid")
}
