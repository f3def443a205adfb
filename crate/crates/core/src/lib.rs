//! Log-free generator learning for autonomous ODEs.
//!
//! Training labels approximate `L f` from a truncated resolvent integral of
//! the flow, so the generator matrix is a single least-squares fit with no
//! matrix logarithm involved. A Koopman-log baseline is included for
//! comparison.

pub mod apps;
pub mod datagen;
pub mod dictionary;
pub mod dynamics;
pub mod edmd;
pub mod error;
pub mod io;

pub use apps::{
    fit_lyapunov, identify_field, identify_field_log_baseline, lyapunov_grid, polynomial_string, verify_candidate,
    CoordinateFit, IdentificationReport, LieGridReport, LyapunovCandidate, Method, Verdict, WeightTable,
};
pub use datagen::{
    generate, label_row, truncated_resolvent_integral, DatasetManifest, DroppedSample, FailureMode, GenConfig,
    Provenance, Quadrature, ResolventIntegral, SampleMode, SamplePlan, TrainingSet,
};
pub use dictionary::{analytic_generator_apply, reconstruct, Dictionary, Observable, Term, WeightVector};
pub use dynamics::{estimate_growth, linear_1d, reverse, vanderpol, Flow, FlowSettings, SemigroupGrowthEstimate, VectorField};
pub use edmd::{
    apply_matrix_to_weights, eigen, eigen_complex, fit_generator, fit_koopman, fit_koopman_from_pairs, log_baseline,
    matrix_exp_diagonalizable, project_lie_derivatives, EigenPairs, EigenReport, EigenSource, GeneratorMatrix,
    KoopmanMatrix, LogDiagnostics, LogGenerator, LogPolicy, WeightOperator,
};
pub use error::{KoopError, Result};
