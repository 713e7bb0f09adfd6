//! Hierarchical bottleneck localization: find an anomalous window in the
//! end-to-end latency series, then descend the activity tree implicating
//! the children whose latency shifted along with their parent.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derivation::Timeline;
use crate::model::{ActivityId, ActivityKind, ActivityModel};
use crate::stats::{mad, median, pearson};
use crate::time::{Aspect, Micros};

pub const DEFAULT_K: f64 = 5.0;
pub const DEFAULT_SHARE: f64 = 0.2;
pub const MIN_SERIES_POINTS: usize = 30;
pub const MIN_WINDOW_POINTS: usize = 5;
/// Runs separated by fewer points than this are merged.
pub const MERGE_GAP: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DrillError {
    #[error("unknown activity path `{0}`")]
    UnknownPath(String),
    #[error("`{0}` has no resolved duration in any timeline")]
    NoData(String),
    #[error("series has {got} points, at least {needed} are needed")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("window [{start_us}, {end_us}] holds {points} traces, at least {MIN_WINDOW_POINTS} are needed")]
    WindowTooSmall {
        start_us: Micros,
        end_us: Micros,
        points: usize,
    },
}

/// Per-trace duration of one activity, ordered by trace begin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySeries {
    pub activity: String,
    pub points: Vec<(Micros, Micros)>,
    /// Traces in which the duration did not resolve.
    pub omitted: usize,
}

impl LatencySeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trace_begin_us,duration_us\n");
        for (t, d) in &self.points {
            let _ = writeln!(out, "{t},{d}");
        }
        out
    }
}

fn resolve_activity(model: &ActivityModel, path: &str) -> Result<ActivityId, DrillError> {
    model
        .id_of_path(path)
        .ok_or_else(|| DrillError::UnknownPath(path.to_string()))
}

/// Duration of an activity in one trace; the longest replica when the
/// timeline was not reduced.
fn duration_of(tl: &Timeline, activity: ActivityId) -> Option<Micros> {
    let t = tl.template();
    t.slots_of(activity)
        .iter()
        .filter_map(|&s| tl.resolved(s, Aspect::Duration))
        .max()
}

fn trace_begin(tl: &Timeline) -> Option<Micros> {
    tl.resolved(tl.template().root(), Aspect::Begin)
}

pub fn latency_series(timelines: &[Timeline], path: &str) -> Result<LatencySeries, DrillError> {
    let Some(first) = timelines.first() else {
        return Err(DrillError::NoData(path.to_string()));
    };
    let model = first.template().model();
    let id = resolve_activity(model, path)?;
    let mut points = Vec::with_capacity(timelines.len());
    let mut omitted = 0;
    for tl in timelines {
        match (trace_begin(tl), duration_of(tl, id)) {
            (Some(t), Some(d)) => points.push((t, d)),
            _ => omitted += 1,
        }
    }
    if points.is_empty() {
        return Err(DrillError::NoData(path.to_string()));
    }
    points.sort();
    Ok(LatencySeries {
        activity: model.type_path(id),
        points,
        omitted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub median_us: f64,
    pub mad_us: f64,
    pub points: usize,
    /// Fewer than 30 points outside the window.
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyWindow {
    pub start_us: Micros,
    pub end_us: Micros,
    pub points: usize,
    pub peak_us: Micros,
    pub baseline: Baseline,
}

/// Windows of consecutive points above `median + k·MAD`.
pub fn detect_anomaly(series: &LatencySeries, k: f64) -> Result<Vec<AnomalyWindow>, DrillError> {
    let n = series.points.len();
    if n < MIN_SERIES_POINTS {
        return Err(DrillError::SeriesTooShort {
            needed: MIN_SERIES_POINTS,
            got: n,
        });
    }
    let values: Vec<f64> = series.points.iter().map(|p| p.1 as f64).collect();
    let threshold = median(&values) + k * mad(&values);

    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if v <= threshold {
            continue;
        }
        match runs.last_mut() {
            Some(r) if i - r.1 - 1 < MERGE_GAP => r.1 = i,
            _ => runs.push((i, i)),
        }
    }

    let inside = |i: usize| runs.iter().any(|&(a, b)| (a..=b).contains(&i));
    let outside: Vec<f64> = (0..n).filter(|&i| !inside(i)).map(|i| values[i]).collect();
    let baseline = Baseline {
        median_us: median(&outside),
        mad_us: mad(&outside),
        points: outside.len(),
        low_confidence: outside.len() < MIN_SERIES_POINTS,
    };
    Ok(runs
        .into_iter()
        .map(|(a, b)| AnomalyWindow {
            start_us: series.points[a].0,
            end_us: series.points[b].0,
            points: b - a + 1,
            peak_us: series.points[a..=b].iter().map(|p| p.1).max().expect("non-empty run"),
            baseline: baseline.clone(),
        })
        .collect())
}

/// The window with the most points.
pub fn widest_window(windows: &[AnomalyWindow]) -> Option<&AnomalyWindow> {
    windows.iter().max_by_key(|w| (w.points, std::cmp::Reverse(w.start_us)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Implicated,
    Dismissed,
    LeafImplicated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub baseline_median_us: f64,
    pub window_median_us: f64,
    pub shift_us: f64,
    /// Shift relative to the parent's shift.
    #[serde(default)]
    pub share: Option<f64>,
    /// In-window median of child duration over parent duration.
    #[serde(default)]
    pub duration_share: Option<f64>,
    /// In-window correlation with the parent; informational only.
    #[serde(default)]
    pub pearson: Option<f64>,
    pub window_points: usize,
    pub baseline_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckNode {
    pub activity: String,
    pub verdict: Verdict,
    pub score: Score,
    /// Parent shift not accounted for by the children of a sequential
    /// activity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unexplained_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<BottleneckNode>,
}

impl BottleneckNode {
    /// Number of levels below the root that were expanded.
    pub fn depth(&self) -> usize {
        self.children.iter().map(|c| 1 + c.depth()).max().unwrap_or(0)
    }

    pub fn implicated_leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |n| {
            if n.verdict == Verdict::LeafImplicated {
                out.push(n.activity.as_str());
            }
        });
        out
    }

    pub fn find(&self, activity: &str) -> Option<&BottleneckNode> {
        if self.activity == activity || self.activity.rsplit('/').next() == Some(activity) {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(activity))
    }

    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a BottleneckNode)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    /// Indented text rendering.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(0, &mut out);
        out
    }

    fn render_into(&self, level: usize, out: &mut String) {
        let name = self.activity.rsplit('/').next().unwrap_or(&self.activity);
        let _ = write!(
            out,
            "{:indent$}{name}: {:?} shift {:+.0} us",
            "",
            self.verdict,
            self.score.shift_us,
            indent = level * 2
        );
        if let Some(s) = self.score.share {
            let _ = write!(out, " share {s:.2}");
        }
        if let Some(u) = self.unexplained_us {
            let _ = write!(out, " unexplained {u:+.0} us");
        }
        if let Some(n) = &self.note {
            let _ = write!(out, " ({n})");
        }
        out.push('\n');
        for c in &self.children {
            c.render_into(level + 1, out);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrillOptions {
    pub share: f64,
    pub epsilon_us: Micros,
}

impl Default for DrillOptions {
    fn default() -> Self {
        DrillOptions {
            share: DEFAULT_SHARE,
            epsilon_us: crate::DEFAULT_EPSILON_US,
        }
    }
}

/// Durations of every activity per trace, split by window membership.
struct Table {
    in_window: Vec<BTreeMap<ActivityId, Micros>>,
    outside: Vec<BTreeMap<ActivityId, Micros>>,
}

impl Table {
    fn column(rows: &[BTreeMap<ActivityId, Micros>], a: ActivityId) -> Vec<f64> {
        rows.iter().filter_map(|r| r.get(&a)).map(|&d| d as f64).collect()
    }

    fn score(&self, a: ActivityId, parent: Option<(ActivityId, f64)>) -> Score {
        let win = Self::column(&self.in_window, a);
        let base = Self::column(&self.outside, a);
        let (wm, bm) = (median(&win), median(&base));
        let shift = wm - bm;
        let mut score = Score {
            baseline_median_us: bm,
            window_median_us: wm,
            shift_us: shift,
            share: None,
            duration_share: None,
            pearson: None,
            window_points: win.len(),
            baseline_points: base.len(),
        };
        if let Some((p, parent_shift)) = parent {
            if parent_shift != 0.0 {
                score.share = Some(shift / parent_shift);
            }
            let (mut xs, mut ys, mut ratios) = (Vec::new(), Vec::new(), Vec::new());
            for r in &self.in_window {
                if let (Some(&c), Some(&pd)) = (r.get(&a), r.get(&p)) {
                    xs.push(c as f64);
                    ys.push(pd as f64);
                    if pd != 0 {
                        ratios.push(c as f64 / pd as f64);
                    }
                }
            }
            score.pearson = pearson(&xs, &ys);
            if !ratios.is_empty() {
                score.duration_share = Some(median(&ratios));
            }
        }
        score
    }
}

/// Descends from `root` implicating every child whose in-window median
/// shift exceeds `max(ε, share · parent shift)`.
pub fn drill(
    timelines: &[Timeline],
    root: &str,
    window: (Micros, Micros),
    opts: DrillOptions,
) -> Result<BottleneckNode, DrillError> {
    let Some(first) = timelines.first() else {
        return Err(DrillError::NoData(root.to_string()));
    };
    let model = first.template().model();
    let root_id = resolve_activity(model, root)?;
    let subtree = model.preorder();

    let mut table = Table {
        in_window: Vec::new(),
        outside: Vec::new(),
    };
    for tl in timelines {
        let Some(t) = trace_begin(tl) else { continue };
        let row: BTreeMap<ActivityId, Micros> = subtree
            .iter()
            .filter_map(|&a| duration_of(tl, a).map(|d| (a, d)))
            .collect();
        if !row.contains_key(&root_id) {
            continue;
        }
        if (window.0..=window.1).contains(&t) {
            table.in_window.push(row);
        } else {
            table.outside.push(row);
        }
    }
    if table.in_window.len() < MIN_WINDOW_POINTS {
        return Err(DrillError::WindowTooSmall {
            start_us: window.0,
            end_us: window.1,
            points: table.in_window.len(),
        });
    }

    let score = table.score(root_id, None);
    let mut node = BottleneckNode {
        activity: model.type_path(root_id),
        verdict: if model.is_leaf(root_id) {
            Verdict::LeafImplicated
        } else {
            Verdict::Implicated
        },
        score,
        unexplained_us: None,
        note: None,
        children: Vec::new(),
    };
    expand(model, &table, root_id, &mut node, opts);
    Ok(node)
}

fn expand(model: &ActivityModel, table: &Table, id: ActivityId, node: &mut BottleneckNode, opts: DrillOptions) {
    if model.is_leaf(id) {
        node.note = Some("terminal candidate: needs instrumentation or resource correlation".into());
        return;
    }
    let parent_shift = node.score.shift_us;
    let bar = (opts.epsilon_us as f64).max(opts.share * parent_shift);
    let mut children = Vec::new();
    let order = match model.ty(id).kind {
        ActivityKind::Sequential => model.chain_order(id),
        _ => model.children(id).to_vec(),
    };
    for c in order {
        let score = table.score(c, Some((id, parent_shift)));
        let implicated = score.window_points >= MIN_WINDOW_POINTS && score.shift_us > bar;
        let mut child = BottleneckNode {
            activity: model.type_path(c),
            verdict: match (implicated, model.is_leaf(c)) {
                (false, _) => Verdict::Dismissed,
                (true, true) => Verdict::LeafImplicated,
                (true, false) => Verdict::Implicated,
            },
            score,
            unexplained_us: None,
            note: None,
            children: Vec::new(),
        };
        if child.score.window_points < MIN_WINDOW_POINTS {
            child.note = Some("too few in-window values".into());
        }
        if implicated {
            expand(model, table, c, &mut child, opts);
        }
        children.push(child);
    }
    if model.ty(id).kind == ActivityKind::Sequential {
        let explained: f64 = children.iter().map(|c| c.score.shift_us).sum();
        node.unexplained_us = Some(parent_shift - explained);
    }
    if model.ty(id).kind == ActivityKind::Alternating {
        children.sort_by(|a, b| {
            let (x, y) = (a.score.duration_share.unwrap_or(0.0), b.score.duration_share.unwrap_or(0.0));
            y.total_cmp(&x)
        });
    }
    if !children.iter().any(|c| c.verdict != Verdict::Dismissed) {
        node.note = Some("unexplained: no child shifted with it".into());
    }
    node.children = children;
}
