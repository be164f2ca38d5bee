//! Plain-text report formatting. Numbers carry six significant digits.

use std::fmt::Write as _;

pub fn num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let s = if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_fraction(&format!("{x:.decimals$}"))
    } else {
        let s = format!("{x:.5e}");
        let (mantissa, e) = s.split_once('e').expect("exponent");
        format!("{}e{e}", trim_fraction(mantissa))
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn trim_fraction(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// Decimal years also written as whole years and months, months being the
/// rounded twelfths of the fractional part.
pub fn years_months(years: f64) -> String {
    if !years.is_finite() || years < 0.0 {
        return num(years);
    }
    let mut whole = years.trunc() as u64;
    let mut months = ((years - years.trunc()) * 12.0).round() as u64;
    if months == 12 {
        whole += 1;
        months = 0;
    }
    let unit = |n: u64, one: &str, many: &str| format!("{n} {}", if n == 1 { one } else { many });
    format!("{} and {}", unit(whole, "year", "years"), unit(months, "month", "months"))
}

pub fn vector(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|&x| num(x)).collect();
    format!("({})", parts.join(", "))
}

/// A labelled table with right-aligned columns.
pub fn table(out: &mut String, corner: &str, cols: &[&str], rows: &[(String, Vec<f64>)]) {
    let cells: Vec<Vec<String>> = rows.iter().map(|(_, r)| r.iter().map(|&x| num(x)).collect()).collect();
    let label_w = rows.iter().map(|(l, _)| l.len()).chain([corner.len()]).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols.len())
        .map(|j| cells.iter().map(|r| r[j].len()).chain([cols[j].len()]).max().unwrap_or(0))
        .collect();
    let _ = write!(out, "  {corner:<label_w$}");
    for (c, w) in cols.iter().zip(&widths) {
        let _ = write!(out, "  {c:>w$}");
    }
    out.push('\n');
    for ((label, _), row) in rows.iter().zip(&cells) {
        let _ = write!(out, "  {label:<label_w$}");
        for (c, w) in row.iter().zip(&widths) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
    }
}

pub fn square<const N: usize>(out: &mut String, corner: &str, labels: &[&str], m: &[[f64; N]]) {
    let rows: Vec<(String, Vec<f64>)> =
        labels.iter().zip(m).map(|(l, r)| (l.to_string(), r.to_vec())).collect();
    table(out, corner, labels, &rows);
}
