//! Text formatting shared by the CSV writers and the CLI.

use crate::error::{Error, Result};

/// Missing-value marker in CSV files.
pub const NA: &str = "NA";

/// C `printf("%.17g")`: 17 significant digits, trailing zeros removed,
/// scientific notation when the exponent is below -4 or at least 17.
pub fn fmt_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0" } else { "0" }.into();
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..17).contains(&exp) {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let prec = (16 - exp) as usize;
        strip_zeros(&format!("{x:.prec$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_g17).unwrap_or_else(|| NA.into())
}

pub fn parse_f64(field: &str) -> Result<f64> {
    match field {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => field
            .parse()
            .map_err(|_| Error::Parse(format!("bad number '{field}'"))),
    }
}

pub fn parse_opt(field: &str) -> Result<Option<f64>> {
    if field == NA {
        Ok(None)
    } else {
        parse_f64(field).map(Some)
    }
}

pub fn parse_u64(field: &str) -> Result<u64> {
    field
        .parse()
        .map_err(|_| Error::Parse(format!("bad integer '{field}'")))
}

/// Writes rows as comma-separated lines under `header`, with a trailing newline.
pub(crate) fn write_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Splits a CSV body into rows after checking the header.
pub(crate) fn read_table(text: &str, header: &[&str]) -> Result<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let got: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if got != header {
        return Err(Error::Parse(format!(
            "unexpected header '{}', expected '{}'",
            got.join(","),
            header.join(",")
        )));
    }
    reader
        .records()
        .map(|r| Ok(r?.iter().map(str::to_string).collect()))
        .collect()
}

pub(crate) fn cmp_opt(a: Option<f64>, b: Option<f64>) -> std::cmp::Ordering {
    match (a, b) {
        (None, None) => std::cmp::Ordering::Equal,
        (None, Some(_)) => std::cmp::Ordering::Less,
        (Some(_), None) => std::cmp::Ordering::Greater,
        (Some(x), Some(y)) => x.total_cmp(&y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matches_printf() {
        assert_eq!(fmt_g17(0.1), "0.10000000000000001");
        assert_eq!(fmt_g17(1e-5), "1.0000000000000001e-05");
        assert_eq!(fmt_g17(100.0), "100");
        assert_eq!(fmt_g17(0.001), "0.001");
        assert_eq!(fmt_g17(0.5), "0.5");
        assert_eq!(fmt_g17(-2.5), "-2.5");
        assert_eq!(fmt_g17(1e17), "1e+17");
        assert_eq!(fmt_g17(12345678901234567.0), "12345678901234568");
        assert_eq!(fmt_g17(0.0001), "0.0001");
        assert_eq!(fmt_g17(1.0 / 3.0), "0.33333333333333331");
        assert_eq!(fmt_g17(6.967_610_398_722_273e-17), "6.967610398722273e-17");
        assert_eq!(fmt_g17(0.0), "0");
    }

    #[test]
    fn optional_fields() {
        assert_eq!(fmt_opt(None), "NA");
        assert_eq!(parse_opt("NA").unwrap(), None);
        assert_eq!(parse_opt("0.5").unwrap(), Some(0.5));
        assert!(parse_opt("x").is_err());
    }

    proptest! {
        #[test]
        fn round_trips_bit_exactly(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL) {
            prop_assert_eq!(parse_f64(&fmt_g17(x)).unwrap().to_bits(), x.to_bits());
        }
    }
}
