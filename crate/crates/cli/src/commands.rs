use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};
use spinquad_core::hamiltonian::{crossover_fields, transition_table_with_axis};
use spinquad_core::kinetics::{build_generator, level_report, steady_state};
use spinquad_core::multipoles::{dipole_x, extract_from_peak_areas, husimi, multipoles_from_populations, quadrupole};
use spinquad_core::odmr::{odmr_map, odmr_spectrum};
use spinquad_core::rate_model::{
    gs_signal_sign_small_field, large_field_sign_changes, population_variations_at, small_field_crossover, small_field_x,
    small_field_x_inverse,
};
use spinquad_core::{Level, OdmrResult, PeakAreaSet, TransitionKey};

use crate::config::RunConfig;
use crate::output::{Cell, Table, Writer, SCHEMA};
use crate::{CalibrationArg, CliError, Command, Outcome};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn rates_context(module: &str, config: &RunConfig, detail: impl std::fmt::Display) -> String {
    let r = &config.rates;
    format!(
        "{module} ({detail}; pump={}, recomb={}, gamma_ms={}, eta_g={}, eta_e={}, gamma_g={}, gamma_e={})",
        r.pump, r.recomb, r.gamma_ms, r.eta_g, r.eta_e, r.gamma_g, r.gamma_e
    )
}

struct Run<'a> {
    sub: &'static str,
    config: &'a RunConfig,
    writer: Writer,
    warnings: Vec<String>,
}

impl Run<'_> {
    fn meta(&self, table: &str) -> Value {
        json!({
            "schema": SCHEMA,
            "subcommand": self.sub,
            "table": table,
            "version": VERSION,
            "config": self.config,
        })
    }

    fn emit(&mut self, table: &Table) -> Result<(), CliError> {
        let format = self.config.output.format;
        if format.csv() {
            self.writer.write(&format!("{}.csv", table.name), &table.to_csv(self.sub))?;
        }
        if format.json() {
            let doc = json!({ "meta": self.meta(&table.name), "data": table.to_json() });
            self.writer.write_json(&format!("{}.json", table.name), &doc)?;
        }
        Ok(())
    }

    fn emit_json(&mut self, name: &str, data: Value) -> Result<(), CliError> {
        let doc = json!({ "meta": self.meta(name), "data": data });
        self.writer.write_json(&format!("{name}.json"), &doc)
    }
}

pub fn execute(command: &Command, config: &RunConfig, origin: &str, out_dir: &Path, jobs: usize) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let mut run = Run { sub: command.name(), config, writer: Writer::new(out_dir)?, warnings: config.warnings() };
    let mut inputs = json!({});
    match command {
        Command::Levels => levels(&mut run)?,
        Command::Spectrum => {
            let freqs = config.sweep.freq.points();
            let bx = config.spectrum.field;
            let result = odmr_spectrum(&config.center, &config.rates, bx, &config.drive, &freqs)
                .map_err(|e| CliError::from_core(rates_context("odmr", config, format_args!("field {bx} mT")), e))?;
            odmr_tables(&mut run, &result)?;
        }
        Command::Map => {
            let freqs = config.sweep.freq.points();
            let fields = config.sweep.field.points();
            let result = odmr_map(&config.center, &config.rates, &config.drive, &freqs, &fields).map_err(|e| {
                let g = config.sweep.field;
                CliError::from_core(rates_context("odmr", config, format_args!("fields {}..{} mT", g.min, g.max)), e)
            })?;
            odmr_tables(&mut run, &result)?;
        }
        Command::Husimi => husimi_maps(&mut run)?,
        Command::Multipoles => multipoles(&mut run)?,
        Command::Ratecheck => ratecheck(&mut run)?,
        Command::Extract { areas, calibration } => {
            inputs = json!({ "areas": areas, "calibration": calibration_name(*calibration) });
            extract(&mut run, areas, *calibration)?;
        }
        Command::Validate => return Ok(validate(config, origin)),
    }

    let files: Vec<String> = run.writer.files.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect();
    let manifest = json!({
        "schema": SCHEMA,
        "subcommand": run.sub,
        "version": VERSION,
        "config_source": origin,
        "config": config,
        "inputs": inputs,
        "jobs": jobs,
        "files": files,
        "warnings": run.warnings,
        "wall_time_s": start.elapsed().as_secs_f64(),
    });
    let data_files = run.writer.files.clone();
    run.writer.write_json("manifest.json", &manifest)?;
    Ok(Outcome { out_dir: Some(out_dir.to_path_buf()), files: data_files, warnings: run.warnings, report: None })
}

fn calibration_name(c: CalibrationArg) -> &'static str {
    match c {
        CalibrationArg::Uncalibrated => "uncalibrated",
        CalibrationArg::Calibrated => "calibrated",
    }
}

fn levels(run: &mut Run) -> Result<(), CliError> {
    let config = run.config;
    let fields = config.sweep.field.points();
    let per_field: Vec<_> = fields
        .par_iter()
        .map(|&bx| {
            let report = level_report(&config.center, &config.rates, bx)?;
            let tables = Level::BOTH.map(|level| transition_table_with_axis(level, &config.center, bx, config.drive.axis));
            Ok((report, tables))
        })
        .collect::<Vec<Result<_, spinquad_core::Error>>>()
        .into_iter()
        .zip(&fields)
        .map(|(r, bx)| r.map_err(|e| CliError::from_core(rates_context("kinetics", config, format_args!("field {bx} mT")), e)))
        .collect::<Result<_, _>>()?;

    let mut states = Table::new("levels", &["field", "level", "state", "energy", "label", "population", "brightness"]);
    let mut lines = Table::new("transitions", &["field", "level", "i", "j", "freq", "m2", "label_i", "label_j"]);
    for (report, tables) in per_field {
        for (level, entries) in [(Level::Ground, &report.ground), (Level::Excited, &report.excited)] {
            for (k, e) in entries.iter().enumerate() {
                states.push(vec![
                    report.bx.into(),
                    level.short_name().into(),
                    (k + 1).into(),
                    e.energy.into(),
                    e.label.into(),
                    e.population.into(),
                    e.brightness.into(),
                ]);
            }
        }
        for table in tables {
            let table = table.map_err(|e| CliError::from_core("hamiltonian", e))?;
            for t in &table.transitions {
                lines.push(vec![
                    table.bx.into(),
                    table.level.short_name().into(),
                    (t.i + 1).into(),
                    (t.j + 1).into(),
                    t.freq.into(),
                    t.m2.into(),
                    t.label.0.into(),
                    t.label.1.into(),
                ]);
            }
        }
    }
    run.emit(&states)?;
    run.emit(&lines)
}

fn odmr_tables(run: &mut Run, result: &OdmrResult) -> Result<(), CliError> {
    let mut table = Table::new(run.sub, &["freq", "field", "dpl", "baseline"]);
    let mut markers = Table::new("lines", &["field", "level", "i", "j", "freq", "m2"]);
    for (k, &bx) in result.fields.iter().enumerate() {
        for (n, &f) in result.freqs.iter().enumerate() {
            table.push(vec![f.into(), bx.into(), result.dpl[k][n].into(), result.baseline[k].into()]);
        }
        for m in &result.lines[k] {
            markers.push(vec![bx.into(), m.level.short_name().into(), (m.i + 1).into(), (m.j + 1).into(), m.freq.into(), m.m2.into()]);
        }
    }
    run.warnings.extend(result.warnings());
    run.emit(&table)?;
    run.emit(&markers)
}

fn husimi_maps(run: &mut Run) -> Result<(), CliError> {
    let config = run.config;
    let h = config.husimi;
    let context = || rates_context("multipoles", config, format_args!("husimi at {} mT", h.field));
    let state = build_generator(&config.center, &config.rates, h.field)
        .and_then(|g| steady_state(&g))
        .map_err(|e| CliError::from_core(context(), e))?;
    let mut table = Table::new("husimi", &["level", "theta", "phi", "value"]);
    for (level, rho) in [(Level::Ground, state.rho_g), (Level::Excited, state.rho_e)] {
        let tr = rho.trace().re;
        if tr.is_nan() || tr <= 0.0 {
            return Err(CliError::from_core(context(), spinquad_core::Error::ZeroTrace));
        }
        let grid = husimi(&rho.unscale(tr), h.n_theta, h.n_phi).map_err(|e| CliError::from_core(context(), e))?;
        for (it, &theta) in grid.thetas.iter().enumerate() {
            for (ip, &phi) in grid.phis.iter().enumerate() {
                table.push(vec![level.short_name().into(), theta.into(), phi.into(), grid.value(it, ip).into()]);
            }
        }
    }
    run.emit(&table)
}

fn multipoles(run: &mut Run) -> Result<(), CliError> {
    let config = run.config;
    let (c, r) = (&config.center, &config.rates);
    let fields = config.sweep.field.points();
    let rows: Vec<[[f64; 4]; 2]> = fields
        .par_iter()
        .map(|&bx| {
            let context = || rates_context("multipoles", config, format_args!("field {bx} mT"));
            let state = build_generator(c, r, bx).and_then(|g| steady_state(&g)).map_err(|e| CliError::from_core(context(), e))?;
            let (_, pv) = population_variations_at(c, r, bx).map_err(|e| CliError::from_core(context(), e))?;
            let mut out = [[0.0; 4]; 2];
            for (k, (level, rho)) in [(Level::Ground, &state.rho_g), (Level::Excited, &state.rho_e)].into_iter().enumerate() {
                let full = quadrupole(rho).and_then(|q| Ok((q, dipole_x(rho)?)));
                let rate = multipoles_from_populations(pv.df(level), c.reduced_field(level, bx));
                let ((qf, df), (qr, dr)) = full.and_then(|f| Ok((f, rate?))).map_err(|e| CliError::from_core(context(), e))?;
                out[k] = [qf, df, qr, dr];
            }
            Ok(out)
        })
        .collect::<Result<_, CliError>>()?;

    let mut table = Table::new("multipoles", &["field", "level", "quad", "dip", "quad_rate", "dip_rate"]);
    for (bx, row) in fields.iter().zip(rows) {
        for (level, v) in Level::BOTH.into_iter().zip(row) {
            table.push(vec![(*bx).into(), level.short_name().into(), v[0].into(), v[1].into(), v[2].into(), v[3].into()]);
        }
    }
    run.emit(&table)
}

fn ratecheck(run: &mut Run) -> Result<(), CliError> {
    let config = run.config;
    let (c, r) = (&config.center, &config.rates);
    let ratio = r.eta_e / r.eta_g;
    let crossover_b = small_field_x_inverse(ratio).ok();
    let (bc_g, bc_e) = crossover_fields(c);
    let roots = large_field_sign_changes(ratio).map(|(lo, hi)| json!({ "b_e": [lo, hi], "field_mT": [lo * bc_e, hi * bc_e] }));
    let data = json!({
        "x_at_zero": small_field_x(0.0),
        "eta_ratio": ratio,
        "small_field_crossover": {
            "b_g": crossover_b,
            "field_mT": small_field_crossover(c, r),
        },
        "gs_small_field_sign": gs_signal_sign_small_field(r).signum(),
        "large_field_sign_changes": roots,
        "zeeman_crossover_mT": { "ground": bc_g, "excited": bc_e },
        "hierarchy_warnings": r.hierarchy_warnings(),
    });
    run.emit_json("ratecheck", data)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AreasInput {
    #[serde(rename = "field_mT")]
    field_mt: f64,
    gs: BTreeMap<String, f64>,
    es: BTreeMap<String, f64>,
}

fn area_set(level: Level, field: f64, raw: &BTreeMap<String, f64>, path: &Path) -> Result<PeakAreaSet, CliError> {
    let mut set = PeakAreaSet::new(level, field);
    for (key, &area) in raw {
        let k: TransitionKey = key.parse().map_err(|e| CliError::Config(format!("{}: {level} areas: {e}", path.display())))?;
        set = set.with(k, area);
    }
    Ok(set)
}

fn extract(run: &mut Run, path: &PathBuf, calibration: CalibrationArg) -> Result<(), CliError> {
    let config = run.config;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read areas {}: {e}", path.display())))?;
    let input: AreasInput = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let bx = input.field_mt;
    if !bx.is_finite() {
        return Err(CliError::Config(format!("{}: field_mT must be finite", path.display())));
    }
    let gs = area_set(Level::Ground, bx, &input.gs, path)?;
    let es = area_set(Level::Excited, bx, &input.es, path)?;
    let ex = extract_from_peak_areas(&gs, &es, &config.center, &config.rates, bx, config.drive.axis, calibration.into())
        .map_err(|e| CliError::from_core(rates_context("multipoles", config, format_args!("extraction at {bx} mT")), e))?;

    let mut table = Table::new("extraction", &["field", "level", "df1", "df2", "df3", "df4", "quad", "dip"]);
    for (level, df, q, d) in [(Level::Ground, ex.df_g, ex.quad_g, ex.dip_g), (Level::Excited, ex.df_e, ex.quad_e, ex.dip_e)] {
        let mut row: Vec<Cell> = vec![bx.into(), level.short_name().into()];
        row.extend(df.iter().map(|&v| Cell::Num(v)));
        row.extend([q.into(), d.into()]);
        table.push(row);
    }
    run.warnings.extend(ex.warnings.iter().cloned());
    run.emit(&table)?;
    if run.config.output.format.json() {
        run.emit_json("extraction_summary", json!({ "scale": ex.scale, "residual": ex.residual, "calibration": ex.calibration }))?;
    }
    Ok(())
}

pub fn validate(config: &RunConfig, origin: &str) -> Outcome {
    let warnings = config.warnings();
    let mut report = format!("config: {origin}\n");
    report += &serde_json::to_string_pretty(config).expect("config serializes");
    report.push('\n');
    for (name, g) in [("sweep.field", config.sweep.field), ("sweep.freq", config.sweep.freq)] {
        report += &format!("{name}: {} points in [{}, {}]\n", g.steps, g.min, g.max);
    }
    for w in &warnings {
        report += &format!("warning: {w}\n");
    }
    report += &format!("OK ({} warnings)\n", warnings.len());
    Outcome { report: Some(report), ..Outcome::default() }
}
