#![allow(dead_code)]

use crt_hte_core::rng::stream_rng;
use crt_hte_core::{validate_design, DesignDoc, TrialDesign};
use nalgebra::DMatrix;
use rand::Rng;

/// Random design with `p` subgroups whose every cluster holds integral
/// subgroup counts: shares are multiples of `1/d` and sizes multiples of `d`.
pub fn random_design(seed: u64, p: usize) -> TrialDesign {
    let mut rng = stream_rng(seed, 0);
    loop {
        let d = [4u64, 5, 6, 8, 10][rng.random_range(0..5)];
        let mut parts: Vec<u64> = (0..p).map(|_| rng.random_range(1..d)).collect();
        if parts.iter().sum::<u64>() >= d {
            continue;
        }
        parts.sort_unstable();
        let theta = parts.iter().map(|&k| k as f64 / d as f64).collect();
        let clusters = rng.random_range(4..=12);
        let sizes = (0..clusters)
            .map(|_| d * rng.random_range(1..=12))
            .collect();
        let i1 = rng.random_range(1..clusters);
        return validate_design(&DesignDoc {
            sizes,
            i1,
            theta,
            sigma_eps: rng.random_range(0.5..3.0),
        })
        .unwrap();
    }
}

/// Dense `sum_i Z_i' R_i^-1 Z_i` from explicit `m_i x m_i` correlation matrices.
pub fn dense_information(data: &crt_hte_core::sim::Dataset, rho: f64) -> DMatrix<f64> {
    let p = data.p;
    let k = 2 + 2 * p;
    let mut info = DMatrix::zeros(k, k);
    for c in &data.clusters {
        let m = c.size();
        let w = f64::from(c.arm);
        let x = c.x_matrix(p);
        let z = DMatrix::from_fn(m, k, |j, col| match col {
            0 => 1.0,
            1 => w,
            c if c < 2 + p => x[(j, c - 2)],
            c => w * x[(j, c - 2 - p)],
        });
        let r = DMatrix::from_fn(m, m, |a, b| if a == b { 1.0 } else { rho });
        info += z.transpose() * r.try_inverse().unwrap() * &z;
    }
    info
}
