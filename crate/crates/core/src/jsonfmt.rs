//! JSON output with fixed float formatting: every floating-point value is
//! written in scientific notation with 17 significant digits, which round-trips
//! any `f64` exactly and makes output byte-stable across platforms.

use std::io;

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, Serializer};

#[derive(Debug, Clone, Copy, Default)]
pub struct FixedFloatFormatter;

impl Formatter for FixedFloatFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        if value.is_finite() {
            write!(writer, "{}", format_f64(value))
        } else {
            // serde_json writes null for non-finite values; keep that.
            CompactFormatter.write_null(writer)
        }
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.write_f64(writer, value as f64)
    }
}

/// `{:.16e}` formatting: one leading digit plus 16 decimals.
pub fn format_f64(value: f64) -> String {
    format!("{:.16e}", value)
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let mut buf = Vec::new();
    to_writer(&mut buf, value)?;
    Ok(String::from_utf8(buf).expect("serde_json emits utf-8"))
}

pub fn to_writer<W: io::Write, T: Serialize + ?Sized>(
    writer: W,
    value: &T,
) -> serde_json::Result<()> {
    let mut ser = Serializer::with_formatter(writer, FixedFloatFormatter);
    value.serialize(&mut ser)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(format_f64(0.123456789), "1.2345678900000000e-1");
        assert_eq!(format_f64(-2.0), "-2.0000000000000000e0");
        let s = to_string(&vec![0.1_f64, 1e-300]).unwrap();
        assert_eq!(s, "[1.0000000000000001e-1,1.0000000000000000e-300]");
    }

    #[test]
    fn round_trips_exactly() {
        for &x in &[0.1, 1.0 / 3.0, 123456.789e-12, f64::MIN_POSITIVE, 0.123456789] {
            let back: f64 = format_f64(x).parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
