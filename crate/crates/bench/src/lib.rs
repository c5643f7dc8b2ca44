//! Fixtures for the benchmarks.

use geocal::solver::{random_init, SolverConfig};
use geocal::synth::{sample_scene, synthesize};
use geocal::{CostKind, MeasurementSet, ParamVector, RoomSpec, SceneGeometry};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub truth: SceneGeometry,
    pub measurements: MeasurementSet,
    pub room: RoomSpec,
}

/// Seeded 3-D scene with noisy measurements.
pub fn fixture(n_nodes: usize, n_events: usize, sigma_doa: f64, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let room = RoomSpec::default();
    let truth = sample_scene(&room, n_nodes, n_events, &mut rng).expect("scene");
    let measurements = synthesize(&truth, sigma_doa, 0.0, &mut rng).expect("measurements");
    Fixture { truth, measurements, room }
}

impl Fixture {
    pub fn random_start(&self, kind: CostKind, seed: u64) -> ParamVector {
        let model = SolverConfig::default().model(kind);
        random_init(&self.measurements, &self.room, &model, &mut ChaCha8Rng::seed_from_u64(seed)).expect("start")
    }
}
