use faer::{Mat, MatRef};

use crate::error::{Error, Result};

/// Streaming QR of a tall matrix supplied in row blocks.
///
/// Keeps only the triangular factor `R` of everything pushed so far, so
/// `AᵀA = RᵀR` holds for the implicit stacked matrix `A` while memory stays
/// `O(ncols²)` plus one block.
#[derive(Clone, Debug)]
pub struct RowStackQr {
    ncols: usize,
    r: Mat<f64>,
    rows_seen: usize,
}

impl RowStackQr {
    pub fn new(ncols: usize) -> Self {
        Self {
            ncols,
            r: Mat::zeros(0, ncols),
            rows_seen: 0,
        }
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn rows_seen(&self) -> usize {
        self.rows_seen
    }

    /// Suggested block height: large enough that re-factoring `R` adds
    /// at most ~25% work over a single QR of the whole matrix.
    pub fn preferred_block_rows(&self) -> usize {
        (4 * self.ncols).max(4096)
    }

    pub fn push_block(&mut self, block: MatRef<'_, f64>) -> Result<()> {
        if block.ncols() != self.ncols {
            return Err(Error::dim(format!(
                "row block has {} columns, expected {}",
                block.ncols(),
                self.ncols
            )));
        }
        if block.nrows() == 0 {
            return Ok(());
        }
        let k = self.r.nrows();
        let mut stacked = Mat::<f64>::zeros(k + block.nrows(), self.ncols);
        stacked.as_mut().subrows_mut(0, k).copy_from(&self.r);
        stacked
            .as_mut()
            .subrows_mut(k, block.nrows())
            .copy_from(block);
        let qr = stacked.qr();
        let r = qr.thin_R();
        // keep only the rows that can be nonzero
        let keep = r.nrows().min(self.ncols);
        self.r = r.subrows(0, keep).to_owned();
        self.rows_seen += block.nrows();
        Ok(())
    }

    /// Upper-trapezoidal factor with `min(rows_seen, ncols)` rows.
    pub fn finish(self) -> Mat<f64> {
        self.r
    }
}
