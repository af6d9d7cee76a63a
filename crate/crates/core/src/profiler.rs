//! Per-function virtual-cycle attribution over run windows and the ranked
//! list of hot candidates derived from it.
//!
//! Counting is exhaustive: every completed invocation is recorded.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use thiserror::Error;

use crate::cpu::ExecResult;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FunctionStats {
    pub vcycles: u64,
    pub invocations: u64,
    pub wall_ns: u64,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("threshold {0} is outside (0, 1]")]
    InvalidThreshold(f64),
}

/// Functions at or above the hotness threshold, hottest first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HotList {
    pub entries: Vec<(String, f64)>,
    /// The window had no recorded cycles, so nothing could be ranked.
    pub no_data: bool,
}

impl HotList {
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names().any(|n| n == name)
    }
}

/// Immutable counters of one window (or of a whole run).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProfileSnapshot {
    pub functions: BTreeMap<String, FunctionStats>,
    pub io_functions: BTreeSet<String>,
    pub total_vcycles: u64,
    pub total_wall_ns: u64,
}

impl ProfileSnapshot {
    /// Fraction of the window's cycles spent in `name`; 0 for an empty window.
    pub fn share(&self, name: &str) -> f64 {
        if self.total_vcycles == 0 {
            return 0.0;
        }
        self.functions.get(name).map_or(0.0, |s| s.vcycles as f64 / self.total_vcycles as f64)
    }

    pub fn hot_candidates(&self, threshold: f64) -> Result<HotList, ProfileError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(ProfileError::InvalidThreshold(threshold));
        }
        if self.total_vcycles == 0 {
            return Ok(HotList { entries: Vec::new(), no_data: true });
        }
        let mut rows: Vec<(&str, f64, u64)> = self
            .functions
            .iter()
            .filter(|(name, _)| !self.io_functions.contains(*name))
            .map(|(name, s)| (name.as_str(), self.share(name), s.vcycles))
            .filter(|&(_, share, _)| share >= threshold)
            .collect();
        rows.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then(b.2.cmp(&a.2))
                .then(a.0.cmp(b.0))
        });
        Ok(HotList { entries: rows.into_iter().map(|(n, s, _)| (n.to_string(), s)).collect(), no_data: false })
    }

    /// `function,vcycles,invocations,wall_ns,share`, one row per recorded
    /// function in name order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("function,vcycles,invocations,wall_ns,share\n");
        for (name, s) in &self.functions {
            let _ = writeln!(out, "{name},{},{},{},{:.12}", s.vcycles, s.invocations, s.wall_ns, self.share(name));
        }
        out
    }
}

/// Counters for the current window plus the archive of closed windows.
#[derive(Clone, Debug, Default)]
pub struct ProfileTable {
    known: BTreeSet<String>,
    window: ProfileSnapshot,
    cumulative: ProfileSnapshot,
    archive: Vec<ProfileSnapshot>,
}

impl ProfileTable {
    /// A table accepting records for `functions`; `io` names are recorded but
    /// never ranked.
    pub fn new<'a>(functions: impl IntoIterator<Item = &'a str>, io: impl IntoIterator<Item = &'a str>) -> Self {
        let io: BTreeSet<String> = io.into_iter().map(str::to_string).collect();
        let mut known: BTreeSet<String> = functions.into_iter().map(str::to_string).collect();
        known.extend(io.iter().cloned());
        let window = ProfileSnapshot { io_functions: io.clone(), ..Default::default() };
        ProfileTable { known, cumulative: window.clone(), window, archive: Vec::new() }
    }

    pub fn for_program(p: &crate::ir::Program) -> Self {
        Self::new(p.functions.iter().map(|f| f.name.as_str()), p.io_functions.iter().map(String::as_str))
    }

    /// Starts accepting records for `name`.
    pub fn register(&mut self, name: &str, io: bool) {
        self.known.insert(name.to_string());
        if io {
            for snap in [&mut self.window, &mut self.cumulative] {
                snap.io_functions.insert(name.to_string());
            }
        }
    }

    pub fn record(&mut self, fname: &str, r: &ExecResult) -> Result<(), ProfileError> {
        self.record_raw(fname, r.vcycles, r.wall_ns)
    }

    pub fn record_raw(&mut self, fname: &str, vcycles: u64, wall_ns: u64) -> Result<(), ProfileError> {
        if !self.known.contains(fname) {
            return Err(ProfileError::UnknownFunction(fname.to_string()));
        }
        for snap in [&mut self.window, &mut self.cumulative] {
            let s = snap.functions.entry(fname.to_string()).or_default();
            s.vcycles += vcycles;
            s.invocations += 1;
            s.wall_ns += wall_ns;
            snap.total_vcycles += vcycles;
            snap.total_wall_ns += wall_ns;
        }
        Ok(())
    }

    pub fn window(&self) -> &ProfileSnapshot {
        &self.window
    }

    /// Totals since the table was created, across all windows.
    pub fn cumulative(&self) -> &ProfileSnapshot {
        &self.cumulative
    }

    pub fn archive(&self) -> &[ProfileSnapshot] {
        &self.archive
    }

    pub fn get(&self, fname: &str) -> Option<FunctionStats> {
        self.window.functions.get(fname).copied()
    }

    pub fn hot_candidates(&self, threshold: f64) -> Result<HotList, ProfileError> {
        self.window.hot_candidates(threshold)
    }

    /// Archives the current window and starts an empty one; returns the
    /// archived snapshot.
    pub fn reset_window(&mut self) -> &ProfileSnapshot {
        let empty = ProfileSnapshot { io_functions: self.window.io_functions.clone(), ..Default::default() };
        let closed = std::mem::replace(&mut self.window, empty);
        self.archive.push(closed);
        self.archive.last().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ProfileTable {
        ProfileTable::new(["a", "b", "c"], ["io"])
    }

    #[test]
    fn record_accumulates() {
        let mut t = table();
        t.record_raw("a", 100, 5).unwrap();
        assert_eq!(t.window().total_vcycles, 100);
        t.record_raw("a", 250, 5).unwrap();
        assert_eq!(t.get("a"), Some(FunctionStats { vcycles: 350, invocations: 2, wall_ns: 10 }));
        assert_eq!(t.record_raw("zzz", 1, 1), Err(ProfileError::UnknownFunction("zzz".into())));
    }

    #[test]
    fn shares_and_threshold() {
        let mut t = table();
        t.record_raw("a", 300, 0).unwrap();
        t.record_raw("b", 100, 0).unwrap();
        assert_eq!(t.window().share("a"), 0.75);
        assert_eq!(t.window().share("b"), 0.25);
        let hot = t.hot_candidates(0.5).unwrap();
        assert_eq!(hot.entries, vec![("a".to_string(), 0.75)]);
    }

    #[test]
    fn tie_break_by_name() {
        let mut t = table();
        t.record_raw("b", 400, 0).unwrap();
        t.record_raw("a", 400, 0).unwrap();
        t.record_raw("c", 200, 0).unwrap();
        let hot = t.hot_candidates(0.3).unwrap();
        assert_eq!(hot.names().collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn io_is_excluded() {
        let mut t = table();
        t.record_raw("io", 99, 0).unwrap();
        t.record_raw("a", 1, 0).unwrap();
        let hot = t.hot_candidates(0.1).unwrap();
        assert!(hot.entries.is_empty());
        assert!(!hot.no_data);
    }

    #[test]
    fn empty_window_is_flagged() {
        let hot = table().hot_candidates(0.1).unwrap();
        assert!(hot.no_data && hot.entries.is_empty());
        assert!(table().hot_candidates(0.0).is_err());
    }

    #[test]
    fn reset_archives_snapshots() {
        let mut t = table();
        t.record_raw("a", 10, 1).unwrap();
        assert_eq!(t.reset_window().total_vcycles, 10);
        assert_eq!(t.window().total_vcycles, 0);
        t.reset_window();
        assert_eq!(t.archive().len(), 2);
        assert_eq!(t.archive()[1].total_vcycles, 0);
        assert_eq!(t.cumulative().total_vcycles, 10);
    }

    #[test]
    fn csv_format() {
        let mut t = table();
        t.record_raw("a", 3, 7).unwrap();
        t.record_raw("b", 1, 2).unwrap();
        let csv = t.window().to_csv();
        assert_eq!(
            csv,
            "function,vcycles,invocations,wall_ns,share\na,3,1,7,0.750000000000\nb,1,1,2,0.250000000000\n"
        );
    }
}
