//! Two-dimensional PCA projection of embeddings for plotting, with a
//! deterministic sign convention and a CSV exporter.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::fsutil::write_atomic;

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("projection needs at least one embedding row")]
    Empty,
    #[error("embedding rows must share one dimension")]
    Ragged,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug)]
pub struct ProjectionResult {
    /// One (pc1, pc2) pair per input row.
    pub coords: Vec<[f64; 2]>,
    /// True when the covariance carried no usable variance; the
    /// coordinates are all zero in that case.
    pub degenerate: bool,
    /// Variance captured by each of the two components.
    pub explained: [f64; 2],
}

const EIGEN_TOL: f64 = 1e-18;
const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major,
/// d x d). Returns (eigenvalues, eigenvectors as columns).
fn jacobi_eigen(mut a: Vec<f64>, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * d + j] * a[i * d + j])
            .sum();
        if off < EIGEN_TOL {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    (eigenvalues, v)
}

/// Projects embeddings onto their top two principal components. Each
/// component's sign is fixed so its largest-magnitude loading is
/// positive. A degenerate covariance (no variance above 1e-12) yields
/// all-zero coordinates and sets the flag.
pub fn project_embeddings(embeddings: &[Vec<f64>]) -> Result<ProjectionResult, ProjectError> {
    if embeddings.is_empty() {
        return Err(ProjectError::Empty);
    }
    let d = embeddings[0].len();
    if embeddings.iter().any(|row| row.len() != d) || d == 0 {
        return Err(ProjectError::Ragged);
    }
    let n = embeddings.len();
    let mut mean = vec![0.0; d];
    for row in embeddings {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for row in embeddings {
        for i in 0..d {
            let ci = row[i] - mean[i];
            for j in 0..d {
                cov[i * d + j] += ci * (row[j] - mean[j]);
            }
        }
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    for c in &mut cov {
        *c /= denom;
    }

    let (eigenvalues, vectors) = jacobi_eigen(cov, d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).unwrap());

    let mut axes = [vec![0.0; d], vec![0.0; d]];
    let mut explained = [0.0; 2];
    let mut degenerate = true;
    for slot in 0..2 {
        let Some(&col) = order.get(slot) else { break };
        if eigenvalues[col] < 1e-12 {
            continue;
        }
        degenerate = false;
        explained[slot] = eigenvalues[col];
        let mut axis: Vec<f64> = (0..d).map(|k| vectors[k * d + col]).collect();
        // Sign convention: the largest-magnitude loading points positive.
        let lead = (0..d)
            .max_by(|&a, &b| axis[a].abs().partial_cmp(&axis[b].abs()).unwrap())
            .unwrap();
        if axis[lead] < 0.0 {
            for x in &mut axis {
                *x = -*x;
            }
        }
        axes[slot] = axis;
    }

    let coords = embeddings
        .iter()
        .map(|row| {
            let mut pair = [0.0; 2];
            for (slot, axis) in axes.iter().enumerate() {
                if explained[slot] > 0.0 {
                    pair[slot] = (0..d).map(|k| (row[k] - mean[k]) * axis[k]).sum();
                }
            }
            pair
        })
        .collect();

    Ok(ProjectionResult { coords, degenerate, explained })
}

/// Writes the projection as a `pc1,pc2` CSV. Degenerate projections
/// produce zero columns and a warning on stderr.
pub fn export_projection(embeddings: &[Vec<f64>], path: &Path) -> Result<ProjectionResult, ProjectError> {
    let result = project_embeddings(embeddings)?;
    if result.degenerate {
        eprintln!(
            "warning: embeddings have no variance; projection columns are zero"
        );
    }
    let mut out = String::from("pc1,pc2\n");
    for [a, b] in &result.coords {
        writeln!(out, "{a},{b}").expect("string write");
    }
    write_atomic(path, out.as_bytes())?;
    Ok(result)
}
