//! One module per subcommand.

use rayon::prelude::*;
use spill_core::fevd::generalized_fevd;
use spill_core::qvar::fit_qvar;
use spill_core::{BalancedPanel, FevdMatrix, QuantileLevel, QvarModel, QvarSpec};

use crate::{module_error, CliError};

pub mod event;
pub mod fit;
pub mod robustness;
pub mod rolling;
pub mod simulate;

pub(crate) struct Estimate {
    pub model: QvarModel,
    pub fevd: FevdMatrix,
}

/// Fits every quantile in parallel; results keep the order of `taus`.
pub(crate) fn estimate_all(
    panel: &BalancedPanel,
    lags: usize,
    taus: &[QuantileLevel],
    horizon: usize,
) -> Vec<Result<Estimate, CliError>> {
    taus.par_iter()
        .map(|&tau| {
            let spec = QvarSpec::new(lags, tau).map_err(|e| module_error("qvar", e))?;
            let model = fit_qvar(panel, spec).map_err(|e| module_error(&format!("qvar (tau = {tau})"), e))?;
            let fevd = generalized_fevd(&model, horizon).map_err(|e| module_error(&format!("fevd (tau = {tau})"), e))?;
            Ok(Estimate { model, fevd })
        })
        .collect()
}

/// Position of the median and of the outermost levels on either side of it.
pub(crate) fn tail_positions(taus: &[QuantileLevel]) -> Option<(usize, usize, usize)> {
    let mid = taus.iter().position(|t| t.value() == 0.5)?;
    (mid > 0 && mid + 1 < taus.len()).then(|| (0, mid, taus.len() - 1))
}
