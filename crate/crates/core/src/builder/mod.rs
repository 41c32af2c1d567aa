//! From episodes to a recurrent model: two-step learning, one-step
//! extraction, interface roots, initial template and hard-EM refinement.

mod hard_em;
mod template;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use hard_em::{
    apply_counts, count_pass, hard_em_refine, reweighted_nodes, EmParams, EpochReport, HardEmState, RecordOutcome, SumCounts,
    UpdateSummary, WEIGHT_TOL,
};
pub use template::{build_initial_template, discover_interface_roots, extract_one_step, MAX_INTERFACE_ROOTS};

use crate::data::{wrap_two_step, SequenceDataset};
use crate::error::{Error, Result};
use crate::model::{PartialOrder, RspmnModel, VarKind};
use crate::structure::{learn_spmn, LearnParams};
use crate::validity::{check_spmn_valid, check_template_sound};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RspmnParams {
    pub learn: LearnParams,
    pub em: EmParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingReport {
    pub rows: usize,
    pub skipped_short_episodes: usize,
    pub two_step_nodes: usize,
    pub one_step_nodes: usize,
    pub interface_roots: usize,
    pub top_nodes: usize,
    pub initial_template_nodes: usize,
    pub final_template_nodes: usize,
    pub epochs: Vec<EpochReport>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Timings {
    pub initial_template: Duration,
    pub final_template: Duration,
}

/// Everything produced by [`learn_rspmn_staged`].
#[derive(Debug, Clone)]
pub struct Learned {
    pub initial: RspmnModel,
    pub model: RspmnModel,
    pub report: TrainingReport,
    pub timings: Timings,
}

pub fn learn_rspmn(data: &SequenceDataset, order: &PartialOrder, params: &RspmnParams) -> Result<RspmnModel> {
    learn_rspmn_staged(data, order, params).map(|l| l.model)
}

/// Full pipeline keeping the initial model and a training report.
pub fn learn_rspmn_staged(data: &SequenceDataset, order: &PartialOrder, params: &RspmnParams) -> Result<Learned> {
    let start = Instant::now();
    let n = data.num_vars();
    let table = wrap_two_step(data)?;
    let s2 = learn_spmn(&table, &data.variables, order, &params.learn)?;
    let report = check_spmn_valid(&s2);
    if !report.all_pass() {
        return Err(Error::Invariant(format!("learned two-step network is invalid:\n{report}")));
    }
    let s1 = extract_one_step(&s2, n)?;
    let states: Vec<usize> = (0..n).filter(|&i| data.variables[i].kind == VarKind::State).collect();
    let (ir, top) = discover_interface_roots(&s1, &states)?;
    let template = build_initial_template(&ir, &order.slot_of())?;
    let sound = check_template_sound(&template);
    if !sound.all_pass() {
        return Err(Error::Invariant(format!("initial template is unsound:\n{sound}")));
    }
    let mut initial = RspmnModel::new(data.variables.clone(), order.clone(), top, template)?;
    initial.metadata.horizon = Some(data.max_len());
    let initial_time = start.elapsed();

    let start = Instant::now();
    let (mut model, epochs) = hard_em_refine(&initial, data, &params.em)?;
    model.metadata.horizon = Some(data.max_len());
    let final_time = start.elapsed();

    let report = TrainingReport {
        rows: table.len(),
        skipped_short_episodes: table.skipped_short,
        two_step_nodes: s2.len(),
        one_step_nodes: s1.len(),
        interface_roots: ir.roots().len(),
        top_nodes: model.top.len(),
        initial_template_nodes: initial.template.len(),
        final_template_nodes: model.template.len(),
        epochs,
    };
    Ok(Learned {
        initial,
        model,
        report,
        timings: Timings { initial_template: initial_time, final_template: final_time },
    })
}
