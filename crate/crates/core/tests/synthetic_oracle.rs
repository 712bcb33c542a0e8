//! Linear least-squares classifier on mean per-subcarrier magnitude: a
//! model-free check that the synthetic classes are separable before any
//! network is involved.

use grasens::csi::{generate_synthetic, CsiGeometry, CsiTrace, SynthConfig};

fn features(t: &CsiTrace) -> Vec<f64> {
    let g = t.geometry;
    let mut f = vec![0.0; g.n_sub + 1];
    for i in 0..t.packet_count() {
        for tx in 0..g.n_tx {
            for rx in 0..g.n_rx {
                for s in 0..g.n_sub {
                    f[s] += t.at(i, tx, rx, s).norm() as f64;
                }
            }
        }
    }
    let n = (t.packet_count() * g.pairs()) as f64;
    f.iter_mut().for_each(|v| *v /= n);
    f[g.n_sub] = 1.0;
    f
}

/// Solves `(XᵀX + λI) w = Xᵀy` by Gaussian elimination with partial pivoting.
fn ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Vec<f64> {
    let d = x[0].len();
    let mut a = vec![vec![0.0; d + 1]; d];
    for (row, &t) in x.iter().zip(y) {
        for i in 0..d {
            for j in 0..d {
                a[i][j] += row[i] * row[j];
            }
            a[i][d] += row[i] * t;
        }
    }
    for (i, r) in a.iter_mut().enumerate() {
        r[i] += lambda;
    }
    for col in 0..d {
        let p = (col..d).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, p);
        for r in col + 1..d {
            let f = a[r][col] / a[col][col];
            for c in col..=d {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut w = vec![0.0; d];
    for i in (0..d).rev() {
        let s: f64 = (i + 1..d).map(|j| a[i][j] * w[j]).sum();
        w[i] = (a[i][d] - s) / a[i][i];
    }
    w
}

fn corpus(seed0: u64, per_class: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let geometry = CsiGeometry::new(1, 2, 16, 100).unwrap();
    let cfg = SynthConfig {
        classes: 2,
        ..SynthConfig::default()
    };
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..per_class {
        for class in 0..2 {
            let t = generate_synthetic(geometry, &cfg, class, 64, seed0 + i as u64).unwrap();
            x.push(features(&t));
            y.push(if class == 0 { -1.0 } else { 1.0 });
        }
    }
    (x, y)
}

#[test]
fn two_classes_are_linearly_separable() {
    let (xtr, ytr) = corpus(0, 50);
    let w = ridge(&xtr, &ytr, 1e-6);
    let (xte, yte) = corpus(10_000, 50);
    let correct = xte
        .iter()
        .zip(&yte)
        .filter(|(row, &t)| row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>().signum() == t)
        .count();
    let acc = correct as f64 / yte.len() as f64;
    eprintln!("least-squares held-out accuracy on 100 traces: {acc:.3}");
    assert!(acc >= 0.90, "{acc}");
}
