#![allow(dead_code)]

use rand::Rng;
use tailgame::dataset::{split_head_tail, LabelMatrix, LabelStats, TailMode};
use tailgame::linalg::Matrix;
use tailgame::model::{BackboneKind, ModelState, DEFAULT_EPS};
use tailgame::partition::{build_partition_with_tail, Partition};
use tailgame::seeded_rng;

pub struct Fixture {
    pub model: ModelState,
    pub x: Matrix,
    pub y: LabelMatrix,
    pub peers: Vec<Matrix>,
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn random_labels(rows: usize, cols: usize, p: f64, rng: &mut impl Rng) -> LabelMatrix {
    let v: Vec<Vec<bool>> = (0..rows).map(|_| (0..cols).map(|_| rng.random_bool(p)).collect()).collect();
    LabelMatrix::from_rows(&v)
}

/// Partition whose rarer half may be duplicated, so `rho` up to 0.5 works.
pub fn random_partition(labels: usize, players: usize, rho: f64, seed: u64) -> Partition {
    let mut rng = seeded_rng(seed, 99);
    let counts: Vec<usize> = (0..labels).map(|_| rng.random_range(0..50)).collect();
    let stats = LabelStats::from_counts(counts, 50, seed);
    let tail = split_head_tail(&stats, 0.5, TailMode::BottomFraction).unwrap();
    build_partition_with_tail(&stats, players, rho, &tail, seed).unwrap()
}

/// Model with every parameter drawn from `[-scale, scale]`, plus random
/// data and peer targets.
pub fn fixture(
    kind: BackboneKind,
    labels: usize,
    players: usize,
    rho: f64,
    rows: usize,
    dim: usize,
    scale: f64,
    seed: u64,
) -> Fixture {
    let p = random_partition(labels, players, rho, seed);
    let mut model = ModelState::init(p.clone(), dim, kind, 4, DEFAULT_EPS, seed).unwrap();
    let mut rng = seeded_rng(seed, 98);
    for b in 0..model.num_blocks() {
        let v: Vec<f64> = (0..model.block_len(b)).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
        model.set_block_params(b, &v);
    }
    let x = random_matrix(rows, dim, 1.0, &mut rng);
    let y = random_labels(rows, labels, 0.4, &mut rng);
    let peers = (0..players)
        .map(|i| {
            let k = p.overlap_set(i).unwrap().len();
            let v = (0..rows * k).map(|_| rng.random_range(0.05..0.95)).collect();
            Matrix::from_vec(rows, k, v)
        })
        .collect();
    Fixture { model, x, y, peers }
}
