use faer::{Mat, MatMut, MatRef};

use super::qr::RowStackQr;
use super::svd::{effective_rank, numerical_zero_threshold, regularize_singular_values};
use crate::error::{Error, Result};

/// Compressed rank-limited regression problem `Y ≈ G·F`.
///
/// Holds the SVD `F = W·Σ·Vᵀ` through `W`, `Σ` and the projected outputs
/// `Y·V`, which is all the rank-limited Procrustes solution
/// `G = Y·V_r·Σ_r^reg·W_rᵀ` ever touches. The factors are built from a
/// streaming QR of `[Fᵀ Yᵀ]`, so the `N`-long right singular vectors are
/// never materialized and any rank can be solved afterwards without
/// refactoring. The left singular basis of `Y` comes out of the same pass.
#[derive(Clone, Debug)]
pub struct ProcrustesFactors {
    n_inputs: usize,
    n_outputs: usize,
    n_samples: usize,
    left: Mat<f64>,
    singular_values: Vec<f64>,
    projected_outputs: Mat<f64>,
    output_left: Mat<f64>,
    output_singular_values: Vec<f64>,
}

/// One rank/regularization choice applied to [`ProcrustesFactors`].
#[derive(Clone, Debug)]
pub struct ProcrustesTruncation {
    pub rank: usize,
    pub requested_rank: usize,
    /// `W_r`, `n_inputs × rank`.
    pub left: Mat<f64>,
    /// Diagonal of `Σ_r^reg`.
    pub sigma_reg: Vec<f64>,
    /// `Y·V_r`, `n_outputs × rank`.
    pub projected_outputs: Mat<f64>,
}

impl ProcrustesTruncation {
    /// `Y·V_r·Σ_r^reg`, the left factor shared by every weight formula.
    pub fn scaled_outputs(&self) -> Mat<f64> {
        let mut out = self.projected_outputs.clone();
        for (j, &s) in self.sigma_reg.iter().enumerate() {
            for v in out.col_mut(j).iter_mut() {
                *v *= s;
            }
        }
        out
    }

    /// `G = Y·V_r·Σ_r^reg·W_rᵀ`.
    pub fn weights(&self) -> Mat<f64> {
        self.scaled_outputs() * self.left.transpose()
    }
}

fn svd_parts(m: MatRef<'_, f64>) -> Result<(Mat<f64>, Vec<f64>, Mat<f64>)> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok((
            Mat::zeros(m.nrows(), 0),
            Vec::new(),
            Mat::zeros(m.ncols(), 0),
        ));
    }
    let svd = m
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("svd did not converge: {e:?}")))?;
    Ok((
        svd.U().to_owned(),
        svd.S().column_vector().iter().copied().collect(),
        svd.V().to_owned(),
    ))
}

impl ProcrustesFactors {
    /// Builds the factors from `n_samples` columns of `[F; Y]` delivered in row
    /// blocks of the transposed layout: `fill(start, block)` must write samples
    /// `start..start + block.nrows()` as rows `[F[:, k]ᵀ  Y[:, k]ᵀ]`.
    pub fn from_row_blocks<Fill>(
        n_inputs: usize,
        n_outputs: usize,
        n_samples: usize,
        mut fill: Fill,
    ) -> Result<Self>
    where
        Fill: FnMut(usize, MatMut<'_, f64>) -> Result<()>,
    {
        if n_samples == 0 {
            return Err(Error::dim("regression needs at least one sample"));
        }
        if n_inputs == 0 {
            return Err(Error::dim("regression needs at least one input row"));
        }
        let width = n_inputs + n_outputs;
        let mut qr = RowStackQr::new(width);
        let block_rows = qr.preferred_block_rows().min(n_samples);
        let mut block = Mat::<f64>::zeros(block_rows, width);
        let mut start = 0;
        while start < n_samples {
            let rows = block_rows.min(n_samples - start);
            let mut view = block.as_mut().subrows_mut(0, rows);
            view.fill(0.0);
            fill(start, view)?;
            qr.push_block(block.as_ref().subrows(0, rows))?;
            start += rows;
        }
        let r = qr.finish();
        Self::from_triangular(r.as_ref(), n_inputs, n_outputs, n_samples)
    }

    /// Factors of `Y ≈ G·F` from explicit matrices.
    pub fn from_matrices(y: MatRef<'_, f64>, f: MatRef<'_, f64>) -> Result<Self> {
        if y.ncols() != f.ncols() {
            return Err(Error::dim(format!(
                "outputs have {} columns but inputs have {}",
                y.ncols(),
                f.ncols()
            )));
        }
        let n_in = f.nrows();
        Self::from_row_blocks(n_in, y.nrows(), f.ncols(), |start, mut block| {
            let rows = block.nrows();
            block
                .as_mut()
                .subcols_mut(0, n_in)
                .copy_from(f.subcols(start, rows).transpose());
            block
                .as_mut()
                .subcols_mut(n_in, y.nrows())
                .copy_from(y.subcols(start, rows).transpose());
            Ok(())
        })
    }

    fn from_triangular(
        r: MatRef<'_, f64>,
        n_inputs: usize,
        n_outputs: usize,
        n_samples: usize,
    ) -> Result<Self> {
        // [Fᵀ Yᵀ] = Q·[R_F R_Y]  ⇒  F = R_Fᵀ·Qᵀ, Y = R_Yᵀ·Qᵀ
        let r_f_t = r.subcols(0, n_inputs).transpose().to_owned();
        let r_y_t = r.subcols(n_inputs, n_outputs).transpose().to_owned();
        let (left, singular_values, z) = svd_parts(r_f_t.as_ref())?;
        let projected_outputs = &r_y_t * &z;
        let (output_left, output_singular_values, _) = svd_parts(r_y_t.as_ref())?;
        Ok(Self {
            n_inputs,
            n_outputs,
            n_samples,
            left,
            singular_values,
            projected_outputs,
            output_left,
            output_singular_values,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// All singular values of the regressor `F`, descending.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn output_singular_values(&self) -> &[f64] {
        &self.output_singular_values
    }

    pub fn zero_threshold(&self) -> f64 {
        let smax = self.singular_values.first().copied().unwrap_or(0.0);
        numerical_zero_threshold(self.n_inputs, self.n_samples, smax)
    }

    /// Numerical rank of the regressor.
    pub fn effective_rank(&self) -> usize {
        effective_rank(&self.singular_values, self.zero_threshold())
    }

    pub fn truncate(&self, rank: usize, lambda: f64) -> Result<ProcrustesTruncation> {
        if rank == 0 {
            return Err(Error::config("Procrustes rank must be positive"));
        }
        let kept = rank.min(self.effective_rank());
        if kept < rank {
            log::debug!("Procrustes rank {rank} clamped to effective rank {kept}");
        }
        let sigma_reg = regularize_singular_values(
            &self.singular_values[..kept],
            lambda,
            self.zero_threshold(),
        )?;
        Ok(ProcrustesTruncation {
            rank: kept,
            requested_rank: rank,
            left: self.left.subcols(0, kept).to_owned(),
            sigma_reg,
            projected_outputs: self.projected_outputs.subcols(0, kept).to_owned(),
        })
    }

    /// Rank-limited, regularized solution `G` of `min ‖Y − G·F‖`.
    pub fn solve(&self, rank: usize, lambda: f64) -> Result<Mat<f64>> {
        Ok(self.truncate(rank, lambda)?.weights())
    }

    /// Leading `rank` left singular vectors of `Y` (the POD basis), clamped
    /// to the numerical rank of `Y`.
    pub fn output_basis(&self, rank: usize) -> Result<Mat<f64>> {
        if rank == 0 {
            return Err(Error::config("POD rank must be positive"));
        }
        let smax = self.output_singular_values.first().copied().unwrap_or(0.0);
        let thr = numerical_zero_threshold(self.n_outputs, self.n_samples, smax);
        let kept = rank.min(effective_rank(&self.output_singular_values, thr));
        if kept == 0 {
            return Err(Error::Numerical("output data is identically zero".into()));
        }
        if kept < rank {
            log::warn!("POD rank {rank} clamped to numerical rank {kept} of the output data");
        }
        Ok(self.output_left.subcols(0, kept).to_owned())
    }
}

/// `G = Y·V_r·diag(σ_r/(σ_r² + λ²))·W_rᵀ` with `(W_r, σ_r, V_r)` the rank-`r`
/// truncated SVD of `F`.
pub fn procrustes_solve(
    y: MatRef<'_, f64>,
    f: MatRef<'_, f64>,
    rank: usize,
    lambda: f64,
) -> Result<Mat<f64>> {
    ProcrustesFactors::from_matrices(y, f)?.solve(rank, lambda)
}
