//! Analysis reports and class sweeps.
//!
//! Each analysis produces a structured JSON document and a plain-text
//! summary. Reports carry their raw counts, and [`verify_report`] re-derives
//! every printed metric from them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::dataset::{ClassIndex, DatasetBundle, Grouping, GroupingKind};
use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::{self, ClusterStats};
use crate::rules::{self, AnalysisConfig, GroupAnalysis};
use crate::tree::{DecisionTree, Side};

pub const TOOL_VERSION: &str = concat!("barlow ", env!("CARGO_PKG_VERSION"));

/// `+10.94%`-style rendering of `er - ber`.
pub fn format_delta(er: f64, ber: f64) -> String {
    format!("{:+.2}%", (er - ber) * 100.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupingInfo {
    pub kind: GroupingKind,
    pub class_index: ClassIndex,
    pub class_name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub feature: usize,
    pub threshold: f64,
    pub relation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafSummary {
    pub rule: String,
    pub path: Vec<PathStep>,
    pub size: u64,
    pub errors: u64,
    pub error_rate: f64,
    pub error_coverage: f64,
    pub importance_value: f64,
    pub delta: f64,
    pub delta_text: String,
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    #[serde(flatten)]
    pub leaf: LeafSummary,
    pub example_rows: Vec<usize>,
    pub example_image_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedFeature {
    pub feature: usize,
    pub mi_bits: f64,
    pub threshold: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub tool_version: String,
    pub grouping: GroupingInfo,
    pub size: u64,
    pub errors: u64,
    pub ber: Option<f64>,
    pub aler: Option<f64>,
    pub aler_gain: Option<f64>,
    pub selected_features: Vec<SelectedFeature>,
    pub tree: Option<Box<RawValue>>,
    pub top_leaf: Option<LeafSummary>,
    pub modes: Vec<ModeReport>,
    pub config: AnalysisConfig,
    pub note: Option<String>,
}

fn leaf_summary(
    predicates: &[(crate::tree::SplitPredicate, Side)],
    rule: String,
    stats: &ClusterStats,
    ber: f64,
    config: &AnalysisConfig,
) -> LeafSummary {
    let er = stats.error_rate();
    LeafSummary {
        rule,
        path: predicates
            .iter()
            .map(|(p, side)| PathStep {
                feature: p.feature,
                threshold: p.threshold,
                relation: match side {
                    Side::Left => "<".into(),
                    Side::Right => ">=".into(),
                },
            })
            .collect(),
        size: stats.size,
        errors: stats.error_count,
        error_rate: er,
        error_coverage: stats.error_coverage(),
        importance_value: stats.importance_value(),
        delta: er - ber,
        delta_text: format_delta(er, ber),
        valid: config.is_valid_leaf(stats, ber),
    }
}

impl AnalysisReport {
    pub fn build(
        bundle: &DatasetBundle,
        grouping: &Grouping,
        analysis: Option<&GroupAnalysis>,
        config: &AnalysisConfig,
    ) -> Result<Self> {
        let info = GroupingInfo {
            kind: grouping.kind,
            class_index: grouping.class_index,
            class_name: bundle.class_name(grouping.class_index).unwrap_or_default().to_string(),
        };
        let Some(a) = analysis else {
            return Ok(Self {
                tool_version: TOOL_VERSION.into(),
                grouping: info,
                size: 0,
                errors: 0,
                ber: None,
                aler: None,
                aler_gain: None,
                selected_features: Vec::new(),
                tree: None,
                top_leaf: None,
                modes: Vec::new(),
                config: config.clone(),
                note: Some("no data: the grouping is empty".into()),
            });
        };
        let ber = a.base_error_rate;
        let top_leaf = a
            .top_leaf()
            .map(|l| leaf_summary(&l.predicates, l.rule(), &l.stats, ber, config));
        let modes = a
            .modes
            .iter()
            .map(|m| ModeReport {
                leaf: leaf_summary(&m.path, m.rule.clone(), &m.stats, ber, config),
                example_rows: m.example_rows.clone(),
                example_image_ids: m
                    .example_rows
                    .iter()
                    .map(|&r| bundle.records()[r].image_id.clone())
                    .collect(),
            })
            .collect();
        let note = if a.group_stats.error_count == 0 {
            Some("no failures in this grouping; nothing to explain".to_string())
        } else if a.modes.is_empty() {
            Some("no leaf satisfies the validity thresholds".to_string())
        } else {
            None
        };
        Ok(Self {
            tool_version: TOOL_VERSION.into(),
            grouping: info,
            size: a.group_stats.size,
            errors: a.group_stats.error_count,
            ber: Some(ber),
            aler: Some(a.aler),
            aler_gain: Some(a.aler_gain()),
            selected_features: a
                .selected
                .iter()
                .map(|s| SelectedFeature {
                    feature: s.feature_index,
                    mi_bits: s.mi_bits,
                    threshold: s.best_threshold,
                })
                .collect(),
            tree: Some(RawValue::from_string(a.tree().to_document())?),
            top_leaf,
            modes,
            config: config.clone(),
            note,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn parse_tree(&self) -> Result<Option<DecisionTree>> {
        self.tree
            .as_ref()
            .map(|raw| DecisionTree::from_document(raw.get()))
            .transpose()
    }

    /// Human-readable summary, one sentence per failure mode.
    pub fn summary_text(&self) -> String {
        let g = &self.grouping;
        let mut out = String::new();
        writeln!(
            out,
            "Grouping: {} {} ({}), {} images, {} failures",
            g.kind, g.class_index, g.class_name, self.size, self.errors
        )
        .unwrap();
        if let (Some(ber), Some(aler), Some(gain)) = (self.ber, self.aler, self.aler_gain) {
            writeln!(out, "BER = {ber:.4}").unwrap();
            writeln!(out, "ALER = {aler:.4} (ALER - BER = {gain:+.4})").unwrap();
        }
        writeln!(
            out,
            "Failure modes (depth {}, k {}, rho {}, tau {}): {}",
            self.config.max_depth,
            self.config.k,
            self.config.rho,
            self.config.tau,
            self.modes.len()
        )
        .unwrap();
        for (i, m) in self.modes.iter().enumerate() {
            let l = &m.leaf;
            writeln!(
                out,
                "{:>2}. When {}, error rate increases to {:.4} ({}) and a fraction of {:.4} of all failures are in this node. IV = {:.4}",
                i + 1,
                l.rule,
                l.error_rate,
                l.delta_text,
                l.error_coverage,
                l.importance_value
            )
            .unwrap();
            if !m.example_image_ids.is_empty() {
                writeln!(out, "    example failures: {}", m.example_image_ids.join(", ")).unwrap();
            }
        }
        if let Some(note) = &self.note {
            writeln!(out, "Note: {note}").unwrap();
        }
        out
    }
}

/// Checks every reported metric against the embedded raw counts.
pub fn verify_report(report: &AnalysisReport) -> Result<()> {
    let fail = |m: String| Err(Error::InconsistentReport(m));
    let Some(tree) = report.parse_tree()? else {
        if report.size != 0 || !report.modes.is_empty() {
            return fail("missing tree for a non-empty grouping".into());
        }
        return Ok(());
    };
    if (tree.group_size, tree.group_errors) != (report.size, report.errors) {
        return fail("tree totals differ from report totals".into());
    }
    let ber = metrics::base_error_rate(&tree);
    if report.ber != Some(ber) {
        return fail(format!("ber {:?} != {ber}", report.ber));
    }
    let aler = metrics::aler(&tree)?;
    if report.aler != Some(aler) || report.aler_gain != Some(aler - ber) {
        return fail("aler or gain disagrees with the tree".into());
    }
    let config = &report.config;
    let leaves = tree.leaves();
    let check_leaf = |l: &LeafSummary| -> Result<()> {
        let stats = ClusterStats::new(l.size, l.errors, report.errors);
        let leaf = leaves
            .iter()
            .find(|leaf| leaf.rule() == l.rule && leaf.stats == stats)
            .ok_or_else(|| Error::InconsistentReport(format!("leaf `{}` not in tree", l.rule)))?;
        let expected = leaf_summary(&leaf.predicates, leaf.rule(), &stats, ber, config);
        if &expected != l {
            return Err(Error::InconsistentReport(format!("leaf `{}` metrics differ", l.rule)));
        }
        Ok(())
    };
    if let Some(top) = &report.top_leaf {
        check_leaf(top)?;
    }
    for m in &report.modes {
        check_leaf(&m.leaf)?;
        if !m.leaf.valid {
            return fail(format!("mode `{}` violates the validity thresholds", m.leaf.rule));
        }
    }
    if report
        .modes
        .windows(2)
        .any(|w| w[0].leaf.importance_value < w[1].leaf.importance_value)
    {
        return fail("modes are not sorted by importance value".into());
    }
    Ok(())
}

/// Runs the analysis for one grouping. Empty groupings yield a "no data" report.
pub fn analyze(bundle: &DatasetBundle, grouping: &Grouping, config: &AnalysisConfig) -> Result<AnalysisReport> {
    config.validate(bundle.n_features())?;
    let analysis = if grouping.is_empty() {
        None
    } else {
        Some(rules::analyze_grouping(bundle, grouping, config)?)
    };
    AnalysisReport::build(bundle, grouping, analysis.as_ref(), config)
}

/// Report document for one (kind, class) pair: the output shared by the
/// command line and the HTTP service.
pub fn analyze_json(
    bundle: &DatasetBundle,
    kind: GroupingKind,
    class: ClassIndex,
    config: &AnalysisConfig,
) -> Result<String> {
    let grouping = bundle.group(kind, class)?;
    analyze(bundle, &grouping, config)?.to_json()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub class_index: ClassIndex,
    pub class_name: String,
    pub size: u64,
    pub errors: u64,
    pub ber: f64,
    pub aler: f64,
    pub gain: f64,
    pub top_leaf: Option<LeafSummary>,
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub tool_version: String,
    pub kind: GroupingKind,
    pub config: AnalysisConfig,
    pub rows: Vec<SweepRow>,
    pub skipped_empty: Vec<ClassIndex>,
    pub mean_gain: Option<f64>,
    pub median_gain: Option<f64>,
    pub valid_leaf_fraction: Option<f64>,
}

impl SweepSummary {
    fn from_rows(
        kind: GroupingKind,
        config: &AnalysisConfig,
        rows: Vec<SweepRow>,
        skipped_empty: Vec<ClassIndex>,
    ) -> Self {
        let mut gains: Vec<f64> = rows.iter().map(|r| r.gain).collect();
        let n = gains.len();
        let mean_gain = (n > 0).then(|| gains.iter().sum::<f64>() / n as f64);
        gains.sort_by(f64::total_cmp);
        let median_gain = (n > 0).then(|| {
            if n % 2 == 1 {
                gains[n / 2]
            } else {
                (gains[n / 2 - 1] + gains[n / 2]) / 2.0
            }
        });
        let valid_leaf_fraction = (n > 0).then(|| rows.iter().filter(|r| r.valid).count() as f64 / n as f64);
        Self {
            tool_version: TOOL_VERSION.into(),
            kind,
            config: config.clone(),
            rows,
            skipped_empty,
            mean_gain,
            median_gain,
            valid_leaf_fraction,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("class_index,class_name,size,errors,ber,aler,gain,top_rule,top_er,top_ec,top_iv,valid\n");
        for r in &self.rows {
            let (rule, er, ec, iv) = match &r.top_leaf {
                Some(l) => (l.rule.as_str(), l.error_rate, l.error_coverage, l.importance_value),
                None => ("", 0.0, 0.0, 0.0),
            };
            writeln!(
                out,
                "{},\"{}\",{},{},{},{},{},\"{}\",{},{},{},{}",
                r.class_index,
                r.class_name.replace('"', "\"\""),
                r.size,
                r.errors,
                r.ber,
                r.aler,
                r.gain,
                rule,
                er,
                ec,
                iv,
                r.valid
            )
            .unwrap();
        }
        out
    }
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes `<stem>.json` and `<stem>.txt` for one report.
pub fn write_report(report: &AnalysisReport, json_path: &Path) -> Result<()> {
    if let Some(parent) = json_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_atomic(json_path, report.to_json()?.as_bytes())?;
    write_atomic(&json_path.with_extension("txt"), report.summary_text().as_bytes())
}

pub fn class_report_name(class: ClassIndex) -> String {
    format!("class_{class:05}.json")
}

/// Analyzes every non-empty grouping of `kind` in parallel.
///
/// Results are assembled in class order, so output is identical for any
/// number of workers.
pub fn sweep(
    bundle: &DatasetBundle,
    kind: GroupingKind,
    config: &AnalysisConfig,
) -> Result<(SweepSummary, Vec<AnalysisReport>)> {
    config.validate(bundle.n_features())?;
    let (groups, empty): (Vec<Grouping>, Vec<Grouping>) =
        bundle.groupings(kind).into_iter().partition(|g| !g.is_empty());
    let outcomes = exec::map_slice(&groups, |g| -> Result<(SweepRow, AnalysisReport)> {
        let a = rules::analyze_grouping(bundle, g, config)?;
        let report = AnalysisReport::build(bundle, g, Some(&a), config)?;
        let row = SweepRow {
            class_index: g.class_index,
            class_name: report.grouping.class_name.clone(),
            size: a.group_stats.size,
            errors: a.group_stats.error_count,
            ber: a.base_error_rate,
            aler: a.aler,
            gain: a.aler_gain(),
            valid: report.top_leaf.as_ref().is_some_and(|l| l.valid),
            top_leaf: report.top_leaf.clone(),
        };
        Ok((row, report))
    });
    let mut rows = Vec::with_capacity(outcomes.len());
    let mut reports = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        let (row, report) = outcome?;
        rows.push(row);
        reports.push(report);
    }
    let skipped = empty.iter().map(|g| g.class_index).collect();
    Ok((SweepSummary::from_rows(kind, config, rows, skipped), reports))
}

/// Sweeps each kind into `out_dir/<kind>/` with per-class reports and a summary.
pub fn run_sweep(
    bundle: &DatasetBundle,
    kinds: &[GroupingKind],
    config: &AnalysisConfig,
    out_dir: &Path,
) -> Result<Vec<SweepSummary>> {
    let mut summaries = Vec::new();
    for &kind in kinds {
        let (summary, reports) = sweep(bundle, kind, config)?;
        let dir = out_dir.join(kind.as_str());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let written = exec::map_slice(&reports, |r| {
            write_report(r, &dir.join(class_report_name(r.grouping.class_index)))
        });
        written.into_iter().collect::<Result<()>>()?;
        let mut json = serde_json::to_string_pretty(&summary)?;
        json.push('\n');
        write_atomic(&dir.join("summary.json"), json.as_bytes())?;
        write_atomic(&dir.join("summary.csv"), summary.to_csv().as_bytes())?;
        summaries.push(summary);
    }
    Ok(summaries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SyntheticSpec};

    #[test]
    fn delta_rendering() {
        assert_eq!(format_delta(0.4179, 0.3085), "+10.94%");
        assert_eq!(format_delta(0.3184, 0.2093), "+10.91%");
        assert_eq!(format_delta(0.2, 0.3), "-10.00%");
    }

    #[test]
    fn planted_report_names_feature() {
        let spec = SyntheticSpec {
            planted_feature: 3,
            ..SyntheticSpec::new(400, 8, 2)
        };
        let bundle = generate(&spec).unwrap();
        let g = bundle.group(GroupingKind::Label, 0).unwrap();
        let report = analyze(&bundle, &g, &AnalysisConfig::default()).unwrap();
        verify_report(&report).unwrap();
        assert_eq!(report.modes[0].leaf.path[0].feature, 3);
        let text = report.summary_text();
        assert!(text.contains("error rate increases to"), "{text}");
        assert!(text.contains("feature[3] >= "), "{text}");

        let back: AnalysisReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        verify_report(&back).unwrap();
        assert_eq!(back.to_json().unwrap(), report.to_json().unwrap());
    }

    #[test]
    fn empty_and_clean_groupings() {
        let bundle = generate(&SyntheticSpec::new(20, 3, 1)).unwrap();
        let empty = bundle.group(GroupingKind::Label, 1).unwrap();
        let report = analyze(&bundle, &empty, &AnalysisConfig::default()).unwrap();
        assert!(report.tree.is_none() && report.modes.is_empty());
        assert!(report.note.as_deref().unwrap().contains("no data"));
        verify_report(&report).unwrap();

        // Prediction grouping of the correct class holds only successes.
        let clean = bundle.group(GroupingKind::Prediction, 0).unwrap();
        let report = analyze(&bundle, &clean, &AnalysisConfig::default()).unwrap();
        assert_eq!(report.errors, 0);
        assert!(report.modes.is_empty());
        assert!(report.note.is_some());
        verify_report(&report).unwrap();
    }

    #[test]
    fn tampered_report_detected() {
        let bundle = generate(&SyntheticSpec::new(300, 4, 9)).unwrap();
        let g = bundle.group(GroupingKind::Label, 0).unwrap();
        let mut report = analyze(&bundle, &g, &AnalysisConfig::default()).unwrap();
        report.modes[0].leaf.error_rate += 1e-9;
        assert!(matches!(verify_report(&report), Err(Error::InconsistentReport(_))));
    }
}
