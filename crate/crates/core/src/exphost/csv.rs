use std::io::Write;

use super::sweep::{SweepCell, SweepTable};
use crate::error::{Error, Result};
use crate::optim::Rule;

pub const HEADER: &str = "optimizer,eta,lambda,seed,final_weight_norm,train_loss,val_error,test_error,diverged";

/// `printf("%.9g")`: nine significant digits, trailing zeros dropped,
/// exponent form below 1e-4 and from 1e9 on.
pub fn format_g9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..9).contains(&exp) {
        trim(&format!("{:.*}", (8 - exp) as usize, x))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    }
}

fn row(c: &SweepCell) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}\n",
        c.optimizer.name(),
        format_g9(c.eta),
        format_g9(c.lambda),
        c.seed,
        format_g9(c.final_norm),
        format_g9(c.train_loss),
        format_g9(c.val_error),
        format_g9(c.test_error),
        u8::from(c.diverged),
    )
}

pub fn to_csv_string(table: &SweepTable) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for c in table.cells() {
        out.push_str(&row(c));
    }
    out
}

pub fn emit_csv<W: Write>(table: &SweepTable, mut dest: W) -> Result<()> {
    dest.write_all(to_csv_string(table).as_bytes())?;
    dest.flush()?;
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<SweepTable> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == HEADER => {}
        _ => return Err(Error::Parse { line: 1, msg: format!("expected header `{HEADER}`") }),
    }
    let mut cells = Vec::new();
    for (n, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: n + 1, msg };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(err(format!("expected 9 fields, got {}", f.len())));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| err(format!("bad number {:?}", f[i])));
        cells.push(SweepCell {
            optimizer: f[0].parse::<Rule>().map_err(|e| err(e.to_string()))?,
            eta: num(1)?,
            lambda: num(2)?,
            seed: f[3].parse().map_err(|_| err(format!("bad seed {:?}", f[3])))?,
            final_norm: num(4)?,
            train_loss: num(5)?,
            val_error: num(6)?,
            test_error: num(7)?,
            diverged: match f[8] {
                "0" => false,
                "1" => true,
                other => return Err(err(format!("diverged must be 0 or 1, got {other:?}"))),
            },
        });
    }
    Ok(SweepTable::new(cells))
}
