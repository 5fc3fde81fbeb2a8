use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::runner::BenchRecord;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 9] = [
    "strategy",
    "n_layers",
    "channel_rate",
    "kernel",
    "batch",
    "input_shape",
    "repeat",
    "batches",
    "seconds",
];

/// Fixed-point seconds with at least nine significant digits.
pub fn format_seconds(s: f64) -> String {
    let magnitude = if s > 0.0 { s.log10().floor() as i32 } else { 0 };
    let decimals = (8 - magnitude).max(0) as usize;
    format!("{s:.decimals$}")
}

fn shape_string(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

pub fn write_csv_to<W: Write>(records: &[BenchRecord], out: W) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.strategy.to_string(),
            r.n_layers.to_string(),
            r.channel_rate.to_string(),
            r.kernel.to_string(),
            r.batch.to_string(),
            shape_string(&r.input_shape),
            r.repeat.to_string(),
            r.batches.to_string(),
            format_seconds(r.seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(records: &[BenchRecord], path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_csv_to(records, BufWriter::new(file)).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategies::StrategyKind;

    fn record() -> BenchRecord {
        BenchRecord {
            strategy: StrategyKind::Crb,
            n_layers: 3,
            channel_rate: 1.5,
            kernel: 3,
            batch: 8,
            input_shape: vec![3, 32, 32],
            repeat: 2,
            batches: 20,
            seconds: 2.030,
        }
    }

    #[test]
    fn header_only_for_no_records() {
        let mut buf = Vec::new();
        write_csv_to(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "strategy,n_layers,channel_rate,kernel,batch,input_shape,repeat,batches,seconds\n"
        );
    }

    #[test]
    fn seconds_keep_precision() {
        assert_eq!(format_seconds(2.030), "2.03000000");
        assert_eq!(format_seconds(0.000123456789), "0.000123456789");
        assert_eq!(format_seconds(1234.5), "1234.50000");
        assert!(!format_seconds(12345.678).contains(','));
    }

    #[test]
    fn row_layout() {
        let mut buf = Vec::new();
        write_csv_to(&[record()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "crb,3,1.5,3,8,3x32x32,2,20,2.03000000");
        assert!(!text.contains('\r'));
    }

    #[test]
    fn io_error_names_path() {
        let p = Path::new("/nonexistent-dir/out.csv");
        let err = write_csv(&[], p).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/out.csv"));
    }
}
