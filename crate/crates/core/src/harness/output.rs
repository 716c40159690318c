//! CSV writers. Reals use 17 significant digits.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::Result;
use crate::harness::metrics::AccuracyMatrix;

pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Row-major matrix dump with a `col_0,col_1,...` header.
pub fn write_matrix_csv<W: Write>(out: &mut W, m: &DMatrix<f64>, label: &str) -> Result<()> {
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("{label}_{j}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_real(m[(i, j)])).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// `client,class_0,...,class_{C-1}` per-client class counts.
pub fn write_partition_csv<W: Write>(out: &mut W, counts: &[Vec<usize>]) -> Result<()> {
    let classes = counts.first().map_or(0, Vec::len);
    let mut header = vec!["client".to_string()];
    header.extend((0..classes).map(|c| format!("class_{c}")));
    writeln!(out, "{}", header.join(","))?;
    for (k, row) in counts.iter().enumerate() {
        let mut cells = vec![k.to_string()];
        cells.extend(row.iter().map(|n| n.to_string()));
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// `after_task,task_1,...,task_T,average`; cells above the diagonal are empty.
pub fn write_accuracy_csv<W: Write>(out: &mut W, m: &AccuracyMatrix) -> Result<()> {
    let t = m.tasks();
    let mut header = vec!["after_task".to_string()];
    header.extend((1..=t).map(|j| format!("task_{j}")));
    header.push("average".into());
    writeln!(out, "{}", header.join(","))?;
    for (i, row) in m.rows.iter().enumerate() {
        let mut cells = vec![(i + 1).to_string()];
        cells.extend((0..t).map(|j| row.get(j).map_or(String::new(), |&a| fmt_real(a))));
        cells.push(fmt_real(m.average(i + 1)));
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}
