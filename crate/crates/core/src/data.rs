//! Episodic decision data and the two-step wrapped table used for learning.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::eval::Evidence;
use crate::graph::VarId;
use crate::model::{VarKind, VariableMeta};

/// One time step: a value per discrete variable (indexed by variable id, the
/// utility position is unused) and the observed utility.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub values: Vec<u32>,
    pub utility: f64,
}

impl Step {
    /// Evidence for this step placed at variable ids shifted by `offset`.
    pub fn write_evidence(&self, vars: &[VariableMeta], offset: usize, with_utility: bool, ev: &mut Evidence) {
        for (i, v) in vars.iter().enumerate() {
            if v.kind == VarKind::Utility {
                if with_utility {
                    ev.set_real(i + offset, self.utility);
                }
            } else {
                ev.set(i + offset, self.values[i]);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub variables: Vec<VariableMeta>,
    pub episodes: Vec<Vec<Step>>,
}

impl SequenceDataset {
    pub fn new(variables: Vec<VariableMeta>, episodes: Vec<Vec<Step>>) -> Result<Self> {
        crate::model::validate_variables(&variables)?;
        let ds = SequenceDataset { variables, episodes };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.variables.len();
        for (e, episode) in self.episodes.iter().enumerate() {
            if episode.is_empty() {
                return Err(Error::Malformed(format!("episode {e} has no steps")));
            }
            for step in episode {
                if step.values.len() != n {
                    return Err(Error::Malformed(format!(
                        "episode {e}: step has {} values, expected {n}",
                        step.values.len()
                    )));
                }
                if !step.utility.is_finite() {
                    return Err(Error::Malformed(format!("episode {e}: non-finite utility")));
                }
                for (i, v) in self.variables.iter().enumerate() {
                    if let Some(card) = v.cardinality {
                        if step.values[i] >= card {
                            return Err(Error::ValueOutOfRange {
                                var: i,
                                value: step.values[i],
                                cardinality: card as usize,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn max_len(&self) -> usize {
        self.episodes.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn num_steps(&self) -> usize {
        self.episodes.iter().map(Vec::len).sum()
    }

    /// Writes the long-format CSV: `episode,step,<state vars>,<decision vars>,utility`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let cols = self.csv_columns();
        let mut header = vec!["episode".to_string(), "step".to_string()];
        header.extend(cols.iter().map(|&i| self.variables[i].name.clone()));
        header.push("utility".into());
        w.write_record(&header)?;
        for (e, episode) in self.episodes.iter().enumerate() {
            for (t, step) in episode.iter().enumerate() {
                let mut rec = vec![e.to_string(), t.to_string()];
                rec.extend(cols.iter().map(|&i| step.values[i].to_string()));
                rec.push(format_utility(step.utility));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    fn csv_columns(&self) -> Vec<VarId> {
        let of = |k: VarKind| (0..self.variables.len()).filter(move |&i| self.variables[i].kind == k);
        of(VarKind::State).chain(of(VarKind::Decision)).collect()
    }

    /// Reads the long-format CSV. `variables` gives the kind and cardinality of
    /// every named column; rows must be sorted by (episode, step).
    pub fn read_csv<R: Read>(input: R, variables: Vec<VariableMeta>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let columns = csv_layout(&header, &variables)?;
        let utility = crate::model::validate_variables(&variables)?;
        let mut episodes: Vec<Vec<Step>> = Vec::new();
        let mut last: Option<(u64, u64)> = None;
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
            let parse_int = |i: usize| -> Result<u64> {
                field(i).parse().map_err(|_| {
                    Error::Malformed(format!("row {}: bad integer `{}` in column `{}`", line + 2, field(i), header[i]))
                })
            };
            let episode = parse_int(0)?;
            let step = parse_int(1)?;
            let mut values = vec![0u32; variables.len()];
            for &(col, var) in &columns {
                values[var] = u32::try_from(parse_int(col)?)
                    .map_err(|_| Error::Malformed(format!("row {}: value too large", line + 2)))?;
            }
            let u_col = header.len() - 1;
            let u: f64 = field(u_col)
                .parse()
                .map_err(|_| Error::Malformed(format!("row {}: bad utility `{}`", line + 2, field(u_col))))?;
            values[utility] = 0;
            match last {
                Some((e, s)) if e == episode && step == s + 1 => {}
                Some((e, _)) if e < episode && step == 0 => episodes.push(Vec::new()),
                None if step == 0 => episodes.push(Vec::new()),
                _ => {
                    return Err(Error::Malformed(format!(
                        "row {}: rows must be sorted by (episode, step) with steps counting from 0",
                        line + 2
                    )))
                }
            }
            last = Some((episode, step));
            episodes.last_mut().expect("pushed above").push(Step { values, utility: u });
        }
        if episodes.is_empty() {
            return Err(Error::EmptyData("dataset has no rows".into()));
        }
        SequenceDataset::new(variables, episodes)
    }
}

fn format_utility(u: f64) -> String {
    if u == u.trunc() && u.abs() < 1e15 {
        format!("{}", u as i64)
    } else {
        format!("{u:?}")
    }
}

/// Maps CSV columns to variable ids; returns (column index, var id) pairs.
fn csv_layout(header: &[String], variables: &[VariableMeta]) -> Result<Vec<(usize, VarId)>> {
    if header.len() < 3 || header[0] != "episode" || header[1] != "step" || header[header.len() - 1] != "utility" {
        return Err(Error::Malformed(
            "CSV header must be `episode,step,<state vars>,<decision vars>,utility`".into(),
        ));
    }
    let mut out = Vec::new();
    for (col, name) in header.iter().enumerate().take(header.len() - 1).skip(2) {
        let var = crate::model::find_variable(variables, name)?;
        if variables[var].kind == VarKind::Utility {
            return Err(Error::Malformed(format!("utility variable `{name}` must use the `utility` column")));
        }
        out.push((col, var));
    }
    for (i, v) in variables.iter().enumerate() {
        if v.kind != VarKind::Utility && !out.iter().any(|&(_, var)| var == i) {
            return Err(Error::Malformed(format!("CSV lacks a column for `{}`", v.name)));
        }
    }
    Ok(out)
}

/// Rows of consecutive step pairs. Column `c < n` is variable `c` at step t
/// and column `c + n` is the same variable at step t+1.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepTable {
    num_vars: usize,
    utility: VarId,
    values: Vec<u32>,
    utilities: Vec<f64>,
    /// Episodes of length 1 that produced no row.
    pub skipped_short: usize,
}

impl TwoStepTable {
    pub fn from_rows(num_vars: usize, utility: VarId, rows: &[(Vec<u32>, [f64; 2])]) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * 2 * num_vars);
        let mut utilities = Vec::with_capacity(rows.len() * 2);
        for (v, u) in rows {
            if v.len() != 2 * num_vars {
                return Err(Error::Malformed(format!("row has {} columns, expected {}", v.len(), 2 * num_vars)));
            }
            values.extend_from_slice(v);
            utilities.extend_from_slice(u);
        }
        Ok(TwoStepTable { num_vars, utility, values, utilities, skipped_short: 0 })
    }

    pub fn len(&self) -> usize {
        self.utilities.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.utilities.is_empty()
    }

    pub fn num_columns(&self) -> usize {
        2 * self.num_vars
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn is_utility(&self, col: usize) -> bool {
        col % self.num_vars == self.utility
    }

    pub fn value(&self, row: usize, col: usize) -> u32 {
        self.values[row * 2 * self.num_vars + col]
    }

    pub fn utility(&self, row: usize, col: usize) -> f64 {
        self.utilities[row * 2 + col / self.num_vars]
    }
}

/// Pairs every step with its successor, episode-major.
pub fn wrap_two_step(data: &SequenceDataset) -> Result<TwoStepTable> {
    let n = data.num_vars();
    let utility = crate::model::validate_variables(&data.variables)?;
    let mut values = Vec::new();
    let mut utilities = Vec::new();
    let mut skipped_short = 0;
    for episode in &data.episodes {
        if episode.len() < 2 {
            skipped_short += 1;
            continue;
        }
        for pair in episode.windows(2) {
            values.extend_from_slice(&pair[0].values);
            values.extend_from_slice(&pair[1].values);
            utilities.push(pair[0].utility);
            utilities.push(pair[1].utility);
        }
    }
    if utilities.is_empty() {
        return Err(Error::EmptyData("no episode has two or more steps".into()));
    }
    debug_assert_eq!(values.len(), utilities.len() * n);
    Ok(TwoStepTable { num_vars: n, utility, values, utilities, skipped_short })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars() -> Vec<VariableMeta> {
        vec![
            VariableMeta::state("X", 2),
            VariableMeta::decision("A", 3),
            VariableMeta::utility("U"),
        ]
    }

    fn step(x: u32, a: u32, u: f64) -> Step {
        Step { values: vec![x, a, 0], utility: u }
    }

    #[test]
    fn wrapping_counts_pairs() {
        let ds = SequenceDataset::new(
            vars(),
            vec![
                vec![step(0, 1, -1.0), step(1, 2, 9.0), step(1, 0, 0.0)],
                vec![step(1, 1, -1.0), step(0, 0, -1.0), step(0, 2, 5.5)],
            ],
        )
        .unwrap();
        let t = wrap_two_step(&ds).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.num_columns(), 6);
        assert_eq!(t.value(1, 0), 1);
        assert_eq!(t.value(1, 4), 0);
        assert_eq!(t.utility(1, 2), 9.0);
        assert_eq!(t.utility(1, 5), 0.0);
        assert!(t.is_utility(5));
    }

    #[test]
    fn single_pair_is_concatenation() {
        let ds = SequenceDataset::new(vars(), vec![vec![step(0, 2, -1.0), step(1, 1, 3.0)]]).unwrap();
        let t = wrap_two_step(&ds).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!((0..6).map(|c| t.value(0, c)).collect::<Vec<_>>(), vec![0, 2, 0, 1, 1, 0]);
    }

    #[test]
    fn short_episodes_are_skipped() {
        let ds = SequenceDataset::new(
            vars(),
            vec![vec![step(0, 0, 1.0)], vec![step(0, 0, 1.0), step(1, 1, 2.0)]],
        )
        .unwrap();
        let t = wrap_two_step(&ds).unwrap();
        assert_eq!((t.len(), t.skipped_short), (1, 1));
        let only_short = SequenceDataset::new(vars(), vec![vec![step(0, 0, 1.0)]]).unwrap();
        assert!(wrap_two_step(&only_short).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let ds = SequenceDataset::new(
            vars(),
            vec![vec![step(0, 1, -1.0), step(1, 2, 9.25)], vec![step(1, 0, 0.0)]],
        )
        .unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("episode,step,X,A,utility\n0,0,0,1,-1\n"));
        let back = SequenceDataset::read_csv(&buf[..], vars()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_rejects_bad_input() {
        let unsorted = "episode,step,X,A,utility\n0,1,0,0,1\n";
        assert!(SequenceDataset::read_csv(unsorted.as_bytes(), vars()).is_err());
        let range = "episode,step,X,A,utility\n0,0,2,0,1\n";
        assert!(matches!(
            SequenceDataset::read_csv(range.as_bytes(), vars()),
            Err(Error::ValueOutOfRange { .. })
        ));
        let unknown = "episode,step,Z,A,utility\n0,0,0,0,1\n";
        assert!(matches!(
            SequenceDataset::read_csv(unknown.as_bytes(), vars()),
            Err(Error::UnknownVariable(_))
        ));
    }
}
