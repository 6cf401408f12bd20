use crate::error::{Error, Result};
use crate::tensor::{check_beta, Tensor};

fn dist_pow(a: &[f64], b: &[f64], beta: f64) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    if beta == 2.0 {
        sq
    } else {
        sq.sqrt().powf(beta)
    }
}

fn within_mean(s: &Tensor, beta: f64) -> f64 {
    let n = s.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            acc += dist_pow(s.row(i), s.row(j), beta);
        }
    }
    2.0 * acc / (n * n) as f64
}

/// Two-sample energy distance between the rows of `a` and `b`:
/// `2·mean‖aᵢ−bⱼ‖^β − mean‖aᵢ−aⱼ‖^β − mean‖bᵢ−bⱼ‖^β`, every mean over all
/// index pairs (the zero diagonal included).
///
/// In this form the statistic is exactly zero for identical sets and never
/// negative beyond rounding. It overestimates the population distance by
/// `O(1/N)`.
pub fn energy_distance(a: &Tensor, b: &Tensor, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols() {
        return Err(Error::shape(format!(
            "energy distance needs two [N, n] sets, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.rows() < 2 || b.rows() < 2 {
        return Err(Error::config(format!(
            "energy distance needs at least 2 points per set, got {} and {}",
            a.rows(),
            b.rows()
        )));
    }
    // Fixed summation order makes swapping the arguments bitwise neutral.
    let (a, b) = match a.rows().cmp(&b.rows()).then_with(|| {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    }) {
        std::cmp::Ordering::Greater => (b, a),
        _ => (a, b),
    };
    let mut cross = 0.0;
    for ra in a.iter_rows() {
        for rb in b.iter_rows() {
            cross += dist_pow(ra, rb, beta);
        }
    }
    cross /= (a.rows() * b.rows()) as f64;
    Ok(2.0 * cross - within_mean(a, beta) - within_mean(b, beta))
}
