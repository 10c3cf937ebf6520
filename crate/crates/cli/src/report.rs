use std::io::Write;

use serde::Serialize;
use stabkit::bounds::{Assumption, SolvedParams};
use stabkit::data::{Dataset, Family};
use stabkit::stabsel::{PathRow, SamplingScheme, StabSelConfig, StabSelResult};

use crate::RunArgs;

/// JSON document written by `run` and `paths`.
#[derive(Serialize)]
pub struct RunReport {
    pub stable_set: Vec<String>,
    pub base_learners: Vec<String>,
    pub pi_hat: Vec<f64>,
    /// Simultaneous selection frequencies; complementary pairs only.
    pub pi_tilde: Option<Vec<f64>>,
    pub q: usize,
    pub pi_thr: f64,
    pub pfer_max: f64,
    pub realized_bound: f64,
    pub assumption: Assumption,
    pub warnings: Vec<String>,
    pub mean_iterations: f64,
    pub config: ConfigEcho,
}

#[derive(Serialize)]
pub struct ConfigEcho {
    pub data: String,
    pub response: String,
    pub family: Family,
    pub n: usize,
    pub p: usize,
    pub scheme: SamplingScheme,
    #[serde(rename = "B")]
    pub b: usize,
    pub n_fits: usize,
    pub nu: f64,
    pub m_max: usize,
    pub seed: u64,
}

impl RunReport {
    pub fn new(
        data: &Dataset,
        solved: &SolvedParams,
        config: &StabSelConfig,
        result: &StabSelResult,
        args: &RunArgs,
    ) -> Self {
        let names = data.col_names();
        let iters = &result.per_run_iterations;
        RunReport {
            stable_set: result
                .stable_set
                .iter()
                .map(|&j| names[j].clone())
                .collect(),
            base_learners: names.to_vec(),
            pi_hat: result.pi_hat.clone(),
            pi_tilde: result.pi_tilde.clone(),
            q: solved.q,
            pi_thr: solved.pi_thr,
            pfer_max: solved.pfer_max,
            realized_bound: solved.realized_bound,
            assumption: solved.assumption,
            warnings: solved.warnings.clone(),
            mean_iterations: iters.iter().sum::<usize>() as f64 / iters.len().max(1) as f64,
            config: ConfigEcho {
                data: args.data.display().to_string(),
                response: data.response_name().to_string(),
                family: data.family(),
                n: data.n(),
                p: data.p(),
                scheme: config.scheme,
                b: config.scheme.b(),
                n_fits: result.n_fits(),
                nu: config.boost.nu,
                m_max: config.boost.m_max,
                seed: config.seed,
            },
        }
    }
}

/// Long-format path table: `base_learner,iteration,frequency`.
pub struct PathsWriter<'a, W: Write> {
    out: csv::Writer<W>,
    names: &'a [String],
}

impl<'a, W: Write> PathsWriter<'a, W> {
    pub fn new(w: W, names: &'a [String]) -> Self {
        PathsWriter {
            out: csv::Writer::from_writer(w),
            names,
        }
    }

    pub fn write(mut self, rows: &[PathRow]) -> csv::Result<()> {
        self.out
            .write_record(["base_learner", "iteration", "frequency"])?;
        for r in rows {
            self.out.write_record([
                self.names[r.base_learner].as_str(),
                &r.iteration.to_string(),
                &r.frequency.to_string(),
            ])?;
        }
        self.out.flush()?;
        Ok(())
    }
}
