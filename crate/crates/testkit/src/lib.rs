//! Synthetic data and a mock embedding provider shared by the zcbm test suites.

mod embedder;
mod fixture;
mod server;

pub use embedder::{fnv1a, HashEmbedder};
pub use fixture::{
    clustered_rows, ortho_fixture, pair_fixture, random_unit_rows, write_fixture, FixtureFiles, OrthoFixture,
    PairFixture, Sample, FIXTURE_BASIS, FIXTURE_CLASSES, FIXTURE_DIM, FIXTURE_DISTRACTORS,
};
pub use server::{MockOptions, MockServer};
