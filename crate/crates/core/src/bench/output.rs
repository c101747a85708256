//! CSV artifacts.
//!
//! | file | columns |
//! |---|---|
//! | `instances.csv` | `instance,t,x0..,y0..,w0..,v0..` |
//! | `traces.csv` | `instance,t,estimator,xhat0..,e0..,converged,solve_ms` |
//! | `summary.csv` | `estimator,mae,unconverged,steps`, then a `# unconverged_total=K` footer |
//! | `sweep.csv` | `sweep_axis,value,estimator,mae` |
//! | `mean_error.csv` | `estimator,t,state,mean,std` |
//! | `timing.csv` | `estimator,mean_solve_ms,max_solve_ms,wall_ms` |
//!
//! Everything except `traces.csv` and `timing.csv` is a pure function of the
//! config and seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{BenchError, ExperimentResult, MetricsTable};
use crate::stochastics::write_instances_csv;

pub fn write_all(dir: &Path, result: &ExperimentResult) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir)?;
    write_instances_csv(&result.instances, create(dir, "instances.csv")?)?;
    write_traces(result, create(dir, "traces.csv")?)?;
    write_summary(&result.metrics, create(dir, "summary.csv")?)?;
    write_sweep(&result.metrics, create(dir, "sweep.csv")?)?;
    write_mean_error(result, create(dir, "mean_error.csv")?)?;
    write_timing(&result.metrics, create(dir, "timing.csv")?)?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, BenchError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

pub fn write_traces<W: Write>(result: &ExperimentResult, writer: W) -> Result<(), BenchError> {
    let mut out = csv::Writer::from_writer(writer);
    let n = result.model.state_dim();
    let mut header = vec!["instance".to_string(), "t".into(), "estimator".into()];
    header.extend((0..n).map(|j| format!("xhat{j}")));
    header.extend((0..n).map(|j| format!("e{j}")));
    header.extend(["converged".to_string(), "solve_ms".into()]);
    out.write_record(&header)?;
    for (name, traces) in result.names.iter().zip(&result.traces) {
        for (i, tr) in traces.iter().enumerate() {
            for t in 0..tr.len() {
                let mut row = vec![i.to_string(), t.to_string(), name.clone()];
                row.extend(tr.estimates[t].iter().map(|v| v.to_string()));
                row.extend(tr.errors[t].iter().map(|v| v.to_string()));
                let d = &tr.diagnostics[t];
                row.push(d.converged.to_string());
                row.push(format!("{:.3}", d.solve_ms));
                out.write_record(&row)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(metrics: &MetricsTable, mut writer: W) -> Result<(), BenchError> {
    {
        let mut out = csv::Writer::from_writer(&mut writer);
        out.write_record(["estimator", "mae", "unconverged", "steps"])?;
        for e in &metrics.estimators {
            out.write_record([
                e.name.clone(),
                e.mae.to_string(),
                e.unconverged.to_string(),
                e.steps.to_string(),
            ])?;
        }
        out.flush()?;
    }
    writeln!(writer, "# unconverged_total={}", metrics.total_unconverged())?;
    writer.flush()?;
    Ok(())
}

pub fn write_sweep<W: Write>(metrics: &MetricsTable, writer: W) -> Result<(), BenchError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["sweep_axis", "value", "estimator", "mae"])?;
    for r in &metrics.sweep {
        out.write_record([
            r.axis.clone(),
            r.value.to_string(),
            r.estimator.clone(),
            r.mae.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_mean_error<W: Write>(result: &ExperimentResult, writer: W) -> Result<(), BenchError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["estimator", "t", "state", "mean", "std"])?;
    for (name, stats) in result.names.iter().zip(&result.metrics.error_stats) {
        for t in 0..stats.mean.nrows() {
            for j in 0..stats.mean.ncols() {
                out.write_record([
                    name.clone(),
                    t.to_string(),
                    j.to_string(),
                    stats.mean[(t, j)].to_string(),
                    stats.std[(t, j)].to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_timing<W: Write>(metrics: &MetricsTable, writer: W) -> Result<(), BenchError> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["estimator", "mean_solve_ms", "max_solve_ms", "wall_ms"])?;
    for e in &metrics.estimators {
        out.write_record([
            e.name.clone(),
            format!("{:.3}", e.mean_solve_ms),
            format!("{:.3}", e.max_solve_ms),
            format!("{:.1}", e.wall_ms),
        ])?;
    }
    out.flush()?;
    Ok(())
}
