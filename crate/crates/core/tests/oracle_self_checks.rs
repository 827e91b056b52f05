mod oracles;

use oracles::{jacobi_eigen, spearman, transport_brute_force};

#[test]
fn brute_force_two_by_two() {
    // moving 0.5 across unit cost
    let c = transport_brute_force(&[1.0, 0.0], &[0.5, 0.5], &[0.0, 1.0, 1.0, 0.0]);
    assert!((c - 0.5).abs() < 1e-12);
}

#[test]
fn jacobi_diagonalizes() {
    let (vals, _) = jacobi_eigen(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
    assert!((vals[0] - 3.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
}

#[test]
fn spearman_of_monotone_is_one() {
    assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]) - 1.0).abs() < 1e-12);
}
