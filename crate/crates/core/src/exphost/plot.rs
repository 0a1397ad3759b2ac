use std::fmt;
use std::io::Write;
use std::str::FromStr;

use super::csv::format_g9;
use super::sweep::SweepTable;
use crate::error::{contract, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    /// `log10` of the seed-averaged final hidden norm.
    Norm,
    TestError,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::Norm => "norm",
            Quantity::TestError => "test_error",
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "norm" => Ok(Quantity::Norm),
            "test_error" | "test-error" => Ok(Quantity::TestError),
            _ => Err(contract(format!("unknown quantity {s:?}; expected norm or test_error"))),
        }
    }
}

/// `log10(lambda) log10(eta) value` lines, lambda-major, with a blank line
/// between consecutive lambdas. Points with a diverged seed get `nan`.
pub fn to_plot_string(table: &SweepTable, quantity: Quantity) -> Result<String> {
    if table.optimizers().len() > 1 {
        return Err(contract("table mixes optimizers; select one with for_optimizer"));
    }
    let (lambdas, etas) = (table.lambdas(), table.etas());
    if lambdas.iter().chain(&etas).any(|&v| v <= 0.0) {
        return Err(contract("plot axes are logarithmic; eta and lambda must be positive"));
    }
    let seeds = lambdas.first().zip(etas.first()).map_or(0, |(&l, &e)| table.at(e, l).len());
    let mut blocks = Vec::with_capacity(lambdas.len());
    for &lambda in &lambdas {
        let mut block = String::new();
        for &eta in &etas {
            let n = table.at(eta, lambda).len();
            if n == 0 || n != seeds {
                return Err(Error::IncompleteGrid(format!(
                    "eta = {eta}, lambda = {lambda} has {n} seeds, expected {seeds}"
                )));
            }
            let value = match quantity {
                Quantity::Norm => table.point_mean(eta, lambda, |c| c.final_norm).map(f64::log10),
                Quantity::TestError => table.point_mean(eta, lambda, |c| c.test_error),
            };
            block.push_str(&format!(
                "{} {} {}\n",
                format_g9(lambda.log10()),
                format_g9(eta.log10()),
                format_g9(value.unwrap_or(f64::NAN))
            ));
        }
        blocks.push(block);
    }
    Ok(blocks.join("\n"))
}

pub fn emit_plot_data<W: Write>(table: &SweepTable, quantity: Quantity, mut dest: W) -> Result<()> {
    dest.write_all(to_plot_string(table, quantity)?.as_bytes())?;
    dest.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exphost::sweep::SweepCell;
    use crate::optim::Rule;

    fn cell(eta: f64, lambda: f64, norm: f64) -> SweepCell {
        SweepCell {
            optimizer: Rule::Sgd,
            eta,
            lambda,
            seed: 0,
            final_norm: norm,
            train_loss: 0.3,
            val_error: 0.1,
            test_error: 0.2,
            diverged: false,
        }
    }

    #[test]
    fn two_by_two_layout() {
        let t = SweepTable::new(vec![cell(0.1, 0.01, 10.0), cell(1.0, 0.01, 100.0), cell(0.1, 1.0, 1.0), cell(1.0, 1.0, 1.0)]);
        let s = to_plot_string(&t, Quantity::Norm).unwrap();
        assert_eq!(s, "-2 -1 1\n-2 0 2\n\n0 -1 0\n0 0 0\n");
        assert_eq!(s.lines().filter(|l| l.is_empty()).count(), 1);
        assert_eq!(s.lines().filter(|l| !l.is_empty()).count(), 4);
        let e = to_plot_string(&t, Quantity::TestError).unwrap();
        assert!(e.lines().filter(|l| !l.is_empty()).all(|l| l.ends_with(" 0.2")));
    }

    #[test]
    fn missing_cell_is_rejected() {
        let t = SweepTable::new(vec![cell(0.1, 0.01, 1.0), cell(1.0, 0.01, 1.0), cell(0.1, 1.0, 1.0)]);
        assert!(matches!(to_plot_string(&t, Quantity::Norm), Err(Error::IncompleteGrid(_))));
    }

    #[test]
    fn quantity_names() {
        assert_eq!("norm".parse::<Quantity>().unwrap(), Quantity::Norm);
        assert_eq!("test_error".parse::<Quantity>().unwrap(), Quantity::TestError);
        assert!("loss".parse::<Quantity>().is_err());
    }
}
