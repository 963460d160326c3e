//! CSV emission and parsing for run artifacts.
//!
//! Every writer here has a matching parser, so emitted files round-trip
//! through the tool itself. All output is UTF-8 with `.` as the decimal
//! separator and LF line endings, and files are replaced atomically
//! (temp file in the target directory, then rename) so concurrent runs
//! never expose partially written files.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{C64, FrequencySet, LatticeSpec, RffModel};
use crate::targets::FourierCoefficientTable;
use crate::trainer::{FrequencySnapshot, Phase, PhaseRecord, RunHistory};

/// Write `bytes` to `path` through a temp file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::io::Write::write_all(&mut tmp, bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Shortest decimal representation that parses back to the same bits.
fn fmt_float(v: f64) -> String {
    format!("{v}")
}

/// 17 significant digits; enough for a bit-exact decimal round trip.
fn fmt_sig17(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_float(field: &str, what: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("bad {what} value {field:?}")))
}

fn parse_usize(field: &str, what: &str) -> Result<usize> {
    field
        .parse::<usize>()
        .map_err(|_| Error::Format(format!("bad {what} value {field:?}")))
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes())
}

fn expect_header(text: &str, expected: &str) -> Result<()> {
    let first = text.lines().next().unwrap_or("");
    if first != expected {
        return Err(Error::Format(format!(
            "unexpected CSV header {first:?}, expected {expected:?}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Run history

pub const HISTORY_HEADER: &str = "iteration,phase,train_rel_err,val_rel_err,cg_iters,wall_ms";

/// Serialize the per-phase log. Wall-clock values are zeroed unless
/// `timings` is set, keeping equal-seed reruns byte-identical.
pub fn history_csv(history: &RunHistory, timings: bool) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in &history.records {
        let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
        let wall = if timings { fmt_float(r.wall_ms) } else { "0".into() };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.iteration,
            r.phase.as_str(),
            opt(r.train_rel_err),
            opt(r.val_rel_err),
            r.cg_iters.map(|n| n.to_string()).unwrap_or_default(),
            wall,
        ));
    }
    out
}

fn parse_phase(s: &str) -> Result<Phase> {
    match s {
        "walk" => Ok(Phase::Walk),
        "solve" => Ok(Phase::Solve),
        "resample" => Ok(Phase::Resample),
        "final" => Ok(Phase::Final),
        other => Err(Error::Format(format!("unknown phase {other:?}"))),
    }
}

/// Parse a history CSV back into records.
pub fn parse_history(text: &str) -> Result<Vec<PhaseRecord>> {
    expect_header(text, HISTORY_HEADER)?;
    let mut records = Vec::new();
    for row in csv_reader(text).records() {
        let row = row?;
        if row.len() != 6 {
            return Err(Error::Format(format!("history row has {} fields, expected 6", row.len())));
        }
        let opt_f = |field: &str, what: &str| -> Result<Option<f64>> {
            if field.is_empty() { Ok(None) } else { parse_float(field, what).map(Some) }
        };
        records.push(PhaseRecord {
            iteration: parse_usize(&row[0], "iteration")?,
            phase: parse_phase(&row[1])?,
            train_rel_err: opt_f(&row[2], "train_rel_err")?,
            val_rel_err: opt_f(&row[3], "val_rel_err")?,
            cg_iters: if row[4].is_empty() {
                None
            } else {
                Some(parse_usize(&row[4], "cg_iters")?)
            },
            wall_ms: parse_float(&row[5], "wall_ms")?,
        });
    }
    Ok(records)
}

pub fn write_history(path: &Path, history: &RunHistory, timings: bool) -> Result<()> {
    write_atomic(path, history_csv(history, timings).as_bytes())
}

// ---------------------------------------------------------------------
// Frequency snapshots

fn omega_header(dim: usize) -> String {
    let mut h: Vec<String> = (1..=dim).map(|i| format!("omega_{i}")).collect();
    h.push("abs_beta".into());
    h.join(",")
}

/// One snapshot as `omega_1,...,omega_d,abs_beta` rows.
pub fn snapshot_csv(snapshot: &FrequencySnapshot) -> String {
    let dim = snapshot.freqs.dim();
    let coords = snapshot.freqs.to_dense();
    let mut out = omega_header(dim);
    out.push('\n');
    for (row, &amp) in coords.chunks(dim).zip(&snapshot.abs_amps) {
        for c in row {
            out.push_str(&fmt_float(*c));
            out.push(',');
        }
        out.push_str(&fmt_float(amp));
        out.push('\n');
    }
    out
}

/// Parsed snapshot rows: row-major frequency coordinates and weights.
#[derive(Debug, Clone)]
pub struct SnapshotData {
    pub dim: usize,
    pub omegas: Vec<f64>,
    pub abs_amps: Vec<f64>,
}

pub fn parse_snapshot(text: &str) -> Result<SnapshotData> {
    let first = text.lines().next().unwrap_or("");
    let cols: Vec<&str> = first.split(',').collect();
    if cols.len() < 2 || cols[cols.len() - 1] != "abs_beta" {
        return Err(Error::Format(format!("unexpected snapshot header {first:?}")));
    }
    let dim = cols.len() - 1;
    if expect_header(text, &omega_header(dim)).is_err() {
        return Err(Error::Format(format!("unexpected snapshot header {first:?}")));
    }
    let mut omegas = Vec::new();
    let mut abs_amps = Vec::new();
    for row in csv_reader(text).records() {
        let row = row?;
        if row.len() != dim + 1 {
            return Err(Error::Format(format!(
                "snapshot row has {} fields, expected {}",
                row.len(),
                dim + 1
            )));
        }
        for i in 0..dim {
            omegas.push(parse_float(&row[i], "omega")?);
        }
        abs_amps.push(parse_float(&row[dim], "abs_beta")?);
    }
    Ok(SnapshotData { dim, omegas, abs_amps })
}

/// Write every stored snapshot as `snapshot_<iter>.csv` under `dir`.
pub fn write_snapshots(dir: &Path, history: &RunHistory) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::with_capacity(history.snapshots.len());
    for snap in &history.snapshots {
        let path = dir.join(format!("snapshot_{}.csv", snap.iteration));
        write_atomic(&path, snapshot_csv(snap).as_bytes())?;
        paths.push(path);
    }
    Ok(paths)
}

// ---------------------------------------------------------------------
// Final models

fn model_header(dim: usize) -> String {
    let mut h: Vec<String> = (1..=dim).map(|i| format!("omega_{i}")).collect();
    h.push("re".into());
    h.push("im".into());
    h.join(",")
}

/// Serialize a fitted model with full complex amplitudes.
pub fn model_csv(model: &RffModel) -> String {
    let dim = model.freqs.dim();
    let coords = model.freqs.to_dense();
    let mut out = model_header(dim);
    out.push('\n');
    for (row, amp) in coords.chunks(dim).zip(&model.amps) {
        for c in row {
            out.push_str(&fmt_float(*c));
            out.push(',');
        }
        out.push_str(&fmt_float(amp.re));
        out.push(',');
        out.push_str(&fmt_float(amp.im));
        out.push('\n');
    }
    out
}

/// Parse a model CSV; the frequencies come back as a continuous set.
pub fn parse_model(text: &str) -> Result<RffModel> {
    let first = text.lines().next().unwrap_or("");
    let cols: Vec<&str> = first.split(',').collect();
    if cols.len() < 3 {
        return Err(Error::Format(format!("unexpected model header {first:?}")));
    }
    let dim = cols.len() - 2;
    expect_header(text, &model_header(dim))?;
    let mut coords = Vec::new();
    let mut amps = Vec::new();
    for row in csv_reader(text).records() {
        let row = row?;
        if row.len() != dim + 2 {
            return Err(Error::Format(format!(
                "model row has {} fields, expected {}",
                row.len(),
                dim + 2
            )));
        }
        for i in 0..dim {
            coords.push(parse_float(&row[i], "omega")?);
        }
        amps.push(C64::new(
            parse_float(&row[dim], "re")?,
            parse_float(&row[dim + 1], "im")?,
        ));
    }
    Ok(RffModel::new(FrequencySet::continuous(dim, coords), amps))
}

pub fn write_model(path: &Path, model: &RffModel) -> Result<()> {
    write_atomic(path, model_csv(model).as_bytes())
}

// ---------------------------------------------------------------------
// Fourier coefficient tables

fn table_header(dim: usize) -> String {
    let mut h: Vec<String> = (1..=dim).map(|i| format!("n_{i}")).collect();
    h.push("re".into());
    h.push("im".into());
    h.join(",")
}

/// Serialize a coefficient table, one row per lattice index, with 17
/// significant digits so the decimal form recovers the exact bits.
pub fn table_csv(table: &FourierCoefficientTable) -> String {
    let mut out = table_header(table.dim());
    out.push('\n');
    for (n, c) in table.iter() {
        for ni in n {
            out.push_str(&ni.to_string());
            out.push(',');
        }
        out.push_str(&fmt_sig17(c.re));
        out.push(',');
        out.push_str(&fmt_sig17(c.im));
        out.push('\n');
    }
    out
}

/// Parse a table CSV. The index box is inferred from the rows, which
/// must fill a complete `{-n_max..n_max}^d` box exactly once.
pub fn parse_table(text: &str, spec: LatticeSpec) -> Result<FourierCoefficientTable> {
    let first = text.lines().next().unwrap_or("");
    let cols: Vec<&str> = first.split(',').collect();
    if cols.len() < 3 {
        return Err(Error::Format(format!("unexpected table header {first:?}")));
    }
    let dim = cols.len() - 2;
    expect_header(text, &table_header(dim))?;
    let mut rows: Vec<(Vec<i64>, C64)> = Vec::new();
    let mut n_max = 0i64;
    for row in csv_reader(text).records() {
        let row = row?;
        if row.len() != dim + 2 {
            return Err(Error::Format(format!(
                "table row has {} fields, expected {}",
                row.len(),
                dim + 2
            )));
        }
        let mut n = Vec::with_capacity(dim);
        for i in 0..dim {
            let ni: i64 = row[i]
                .parse()
                .map_err(|_| Error::Format(format!("bad lattice index {:?}", &row[i])))?;
            n_max = n_max.max(ni.abs());
            n.push(ni);
        }
        let c = C64::new(parse_float(&row[dim], "re")?, parse_float(&row[dim + 1], "im")?);
        rows.push((n, c));
    }
    let side = (2 * n_max + 1) as usize;
    let total = side
        .checked_pow(dim as u32)
        .ok_or_else(|| Error::Format("table index box overflows".into()))?;
    if rows.len() != total {
        return Err(Error::Format(format!(
            "table has {} rows, the inferred {side}^{dim} box needs {total}",
            rows.len()
        )));
    }
    let mut coeffs = vec![None; total];
    for (n, c) in rows {
        let mut flat = 0usize;
        for &ni in &n {
            flat = flat * side + (ni + n_max) as usize;
        }
        if coeffs[flat].replace(c).is_some() {
            return Err(Error::Format(format!("duplicate table row for index {n:?}")));
        }
    }
    let coeffs = coeffs.into_iter().map(|c| c.expect("box filled exactly")).collect();
    FourierCoefficientTable::from_coefficients(spec, dim, n_max, coeffs)
}

pub fn write_table(path: &Path, table: &FourierCoefficientTable) -> Result<()> {
    write_atomic(path, table_csv(table).as_bytes())
}

// ---------------------------------------------------------------------
// Classification summaries

pub const ACCURACY_HEADER: &str = "split,accuracy,iteration";

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub split: String,
    pub accuracy: f64,
    pub iteration: usize,
}

pub fn accuracy_csv(rows: &[AccuracyRow]) -> String {
    let mut out = String::from(ACCURACY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.split, fmt_float(r.accuracy), r.iteration));
    }
    out
}

pub fn parse_accuracy(text: &str) -> Result<Vec<AccuracyRow>> {
    expect_header(text, ACCURACY_HEADER)?;
    let mut rows = Vec::new();
    for row in csv_reader(text).records() {
        let row = row?;
        if row.len() != 3 {
            return Err(Error::Format(format!("accuracy row has {} fields, expected 3", row.len())));
        }
        rows.push(AccuracyRow {
            split: row[0].to_string(),
            accuracy: parse_float(&row[1], "accuracy")?,
            iteration: parse_usize(&row[2], "iteration")?,
        });
    }
    Ok(rows)
}

pub fn write_accuracy(path: &Path, rows: &[AccuracyRow]) -> Result<()> {
    write_atomic(path, accuracy_csv(rows).as_bytes())
}

pub const DIGIT_HISTORY_HEADER: &str = "iteration,train_acc,val_acc,cg_iters";

/// Per-digit training log for the classifier.
pub fn digit_history_csv(rows: &[(usize, f64, f64, usize)]) -> String {
    let mut out = String::from(DIGIT_HISTORY_HEADER);
    out.push('\n');
    for &(iteration, train, val, cg) in rows {
        out.push_str(&format!("{},{},{},{}\n", iteration, fmt_float(train), fmt_float(val), cg));
    }
    out
}

pub fn parse_digit_history(text: &str) -> Result<Vec<(usize, f64, f64, usize)>> {
    expect_header(text, DIGIT_HISTORY_HEADER)?;
    let mut rows = Vec::new();
    for row in csv_reader(text).records() {
        let row = row?;
        if row.len() != 4 {
            return Err(Error::Format(format!(
                "digit history row has {} fields, expected 4",
                row.len()
            )));
        }
        rows.push((
            parse_usize(&row[0], "iteration")?,
            parse_float(&row[1], "train_acc")?,
            parse_float(&row[2], "val_acc")?,
            parse_usize(&row[3], "cg_iters")?,
        ));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FrequencySet;
    use crate::targets::{compute_fourier_table_of, TargetSpec};

    fn sample_history() -> RunHistory {
        RunHistory {
            records: vec![
                PhaseRecord {
                    iteration: 1,
                    phase: Phase::Walk,
                    train_rel_err: None,
                    val_rel_err: None,
                    cg_iters: None,
                    wall_ms: 1.25,
                },
                PhaseRecord {
                    iteration: 1,
                    phase: Phase::Solve,
                    train_rel_err: Some(0.1 + 0.2),
                    val_rel_err: Some(1.0 / 3.0),
                    cg_iters: Some(17),
                    wall_ms: 250.5,
                },
                PhaseRecord {
                    iteration: 1,
                    phase: Phase::Resample,
                    train_rel_err: None,
                    val_rel_err: None,
                    cg_iters: None,
                    wall_ms: 0.75,
                },
                PhaseRecord {
                    iteration: 2,
                    phase: Phase::Final,
                    train_rel_err: Some(1e-13),
                    val_rel_err: Some(2.5e-2),
                    cg_iters: Some(3),
                    wall_ms: 99.0,
                },
            ],
            snapshots: vec![],
            test_rel_err: None,
            tv_to_reference: vec![],
            warnings: vec![],
        }
    }

    #[test]
    fn history_round_trips_and_hides_wall_times_by_default() {
        let history = sample_history();
        let text = history_csv(&history, false);
        assert!(text.starts_with(HISTORY_HEADER));
        assert!(!text.contains('\r'));
        assert!(text.ends_with('\n'));
        // Non-solve rows have empty metric cells.
        assert!(text.contains("1,walk,,,,0\n"));
        let parsed = parse_history(&text).unwrap();
        assert_eq!(parsed.len(), history.records.len());
        for (p, r) in parsed.iter().zip(&history.records) {
            assert_eq!(p.iteration, r.iteration);
            assert_eq!(p.phase, r.phase);
            assert_eq!(p.train_rel_err.map(f64::to_bits), r.train_rel_err.map(f64::to_bits));
            assert_eq!(p.val_rel_err.map(f64::to_bits), r.val_rel_err.map(f64::to_bits));
            assert_eq!(p.cg_iters, r.cg_iters);
            assert_eq!(p.wall_ms, 0.0);
        }
        // With timings enabled the measured values survive bit-exactly.
        let parsed = parse_history(&history_csv(&history, true)).unwrap();
        for (p, r) in parsed.iter().zip(&history.records) {
            assert_eq!(p.wall_ms.to_bits(), r.wall_ms.to_bits());
        }
    }

    #[test]
    fn snapshot_round_trips_bitwise() {
        let snap = FrequencySnapshot {
            iteration: 7,
            freqs: FrequencySet::continuous(2, vec![0.1, -2.5, 1.0 / 7.0, 3.25]),
            abs_amps: vec![0.5, 1.0 / 3.0],
        };
        let text = snapshot_csv(&snap);
        assert!(text.starts_with("omega_1,omega_2,abs_beta\n"));
        let parsed = parse_snapshot(&text).unwrap();
        assert_eq!(parsed.dim, 2);
        let orig = snap.freqs.to_dense();
        assert_eq!(parsed.omegas.len(), orig.len());
        for (a, b) in parsed.omegas.iter().zip(&orig) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in parsed.abs_amps.iter().zip(&snap.abs_amps) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn model_round_trips_bitwise() {
        let model = RffModel::new(
            FrequencySet::continuous(3, vec![0.1, 0.2, 0.3, -1.5, 2.5, -3.5]),
            vec![C64::new(1.0 / 3.0, -2.0 / 7.0), C64::new(0.0, 1e-12)],
        );
        let parsed = parse_model(&model_csv(&model)).unwrap();
        assert_eq!(parsed.freqs.dim(), 3);
        for (a, b) in parsed.freqs.to_dense().iter().zip(model.freqs.to_dense().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in parsed.amps.iter().zip(&model.amps) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn table_round_trips_bit_faithfully() {
        let spec = LatticeSpec::new(12.0).unwrap();
        // A real target so the table holds awkward non-dyadic values.
        let target = TargetSpec::new(
            crate::targets::TargetKind::Bump,
            vec![1.0],
            0.5,
            Some(spec),
        )
        .unwrap();
        let table = compute_fourier_table_of(
            |x| crate::targets::evaluate_target(&target, x).unwrap(),
            spec,
            1,
            4,
            256,
        )
        .unwrap();
        let text = table_csv(&table);
        assert!(text.starts_with("n_1,re,im\n"));
        let parsed = parse_table(&text, spec).unwrap();
        assert_eq!(parsed.dim(), 1);
        assert_eq!(parsed.n_max(), 4);
        for ((na, ca), (nb, cb)) in parsed.iter().zip(table.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ca.re.to_bits(), cb.re.to_bits());
            assert_eq!(ca.im.to_bits(), cb.im.to_bits());
        }
    }

    #[test]
    fn table_parser_rejects_incomplete_boxes() {
        let text = "n_1,re,im\n-1,1.0,0.0\n1,2.0,0.0\n";
        let err = parse_table(text, LatticeSpec::new(12.0).unwrap()).unwrap_err();
        assert!(err.to_string().contains("rows"), "{err}");
    }

    #[test]
    fn accuracy_and_digit_history_round_trip() {
        let rows = vec![
            AccuracyRow { split: "train".into(), accuracy: 0.9971, iteration: 1974 },
            AccuracyRow { split: "val".into(), accuracy: 0.9854, iteration: 1974 },
            AccuracyRow { split: "test".into(), accuracy: 0.9826, iteration: 1974 },
        ];
        let text = accuracy_csv(&rows);
        assert!(text.starts_with("split,accuracy,iteration\n"));
        assert_eq!(parse_accuracy(&text).unwrap(), rows);

        let digit_rows = vec![(1, 0.5, 0.25, 12), (2, 0.75, 0.5, 9)];
        let text = digit_history_csv(&digit_rows);
        assert_eq!(parse_digit_history(&text).unwrap(), digit_rows);
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_atomic(&path, b"first\n").unwrap();
        write_atomic(&path, b"second\n").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second\n");
        // No stray temp files remain.
        let names: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names, vec![std::ffi::OsString::from("out.csv")]);
    }

    #[test]
    fn parsers_reject_foreign_headers() {
        assert!(parse_history("a,b\n1,2\n").is_err());
        assert!(parse_snapshot("x,y\n1,2\n").is_err());
        assert!(parse_accuracy("split,acc\ntrain,1\n").is_err());
        assert!(parse_model("omega_1,re\n0,1\n").is_err());
    }
}
