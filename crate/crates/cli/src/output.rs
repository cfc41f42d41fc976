//! CSV persistence.
//!
//! Floats are written with 17 significant digits so every value round-trips
//! exactly, in plain decimal notation when the decimal exponent lies in
//! `[-5, 17)` and in scientific notation otherwise. Records end in LF.

use std::path::Path;

use logspline_harness::{Table, Value};

use crate::error::{CliError, Result};

pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.16e}");
    let exponent: i32 = sci[sci.find('e').expect("exponent present") + 1..]
        .parse()
        .expect("integer exponent");
    if (-5..17).contains(&exponent) {
        format!("{:.*}", (16 - exponent) as usize, x)
    } else {
        sci
    }
}

pub fn format_value(v: &Value) -> String {
    match v {
        Value::Int(i) => i.to_string(),
        Value::Uint(u) => u.to_string(),
        Value::Float(f) => format_float(*f),
        Value::Text(s) => s.clone(),
    }
}

/// The exact bytes `write_csv` would produce.
pub fn csv_bytes(table: &Table) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(&table.header).expect("writing to memory");
    for row in &table.rows {
        w.write_record(row.iter().map(format_value)).expect("writing to memory");
    }
    w.into_inner().expect("flushing to memory")
}

pub fn write_csv(table: &Table, path: &Path) -> Result<()> {
    std::fs::write(path, csv_bytes(table)).map_err(|e| CliError::Write {
        path: path.to_owned(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new(["n", "dist"]);
        assert_eq!(csv_bytes(&t), b"n,dist\n");
    }

    #[test]
    fn single_row_bytes() {
        let mut t = Table::new(["n", "dist"]);
        t.push(vec![1000usize.into(), 0.1.into()]);
        assert_eq!(
            String::from_utf8(csv_bytes(&t)).unwrap(),
            "n,dist\n1000,0.10000000000000001\n"
        );
    }

    #[test]
    fn text_needing_quotes_is_quoted() {
        let mut t = Table::new(["name"]);
        t.push(vec!["a, b".into()]);
        assert_eq!(csv_bytes(&t), b"name\n\"a, b\"\n");
    }

    #[test]
    fn float_forms() {
        assert_eq!(format_float(0.5 * 2f64.ln()), "0.34657359027997264");
        assert_eq!(format_float(1.0), "1.0000000000000000");
        assert_eq!(format_float(-2.5e-3), "-0.0025000000000000001");
        assert_eq!(format_float(1e-7), "9.9999999999999995e-8");
        assert_eq!(format_float(1e20), "1.0000000000000000e20");
        assert_eq!(format_float(f64::NAN), "NaN");
    }

    proptest! {
        #[test]
        fn floats_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
            let s = format_float(x);
            prop_assert_eq!(s.parse::<f64>().unwrap(), x);
            let digits = s.split('e').next().unwrap().chars().filter(|c| c.is_ascii_digit()).collect::<String>();
            prop_assert_eq!(digits.trim_start_matches('0').len().max(1) <= 17, true);
        }
    }
}
