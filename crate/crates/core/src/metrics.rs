//! Event counters, the linear energy proxy, the divergence profile and the
//! key=value report.

use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::Opcode;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub cycles: u64,
    pub warp_instructions_retired: u64,
    /// Sum of active-mask popcounts at retire.
    pub thread_instructions: u64,
    /// Active lanes whose guard evaluated false.
    pub predicated_off_lanes: u64,
    pub global_loads: u64,
    pub global_stores: u64,
    pub shared_loads: u64,
    pub shared_stores: u64,
    pub register_reads: u64,
    pub register_writes: u64,
    pub stack_pushes: u64,
    pub stack_pops: u64,
    pub max_stack_depth: u64,
    pub divergences: u64,
    pub barriers: u64,
    pub histogram: [u64; Opcode::COUNT],
}

macro_rules! summed_fields {
    ($m:ident) => {
        $m!(
            warp_instructions_retired,
            thread_instructions,
            predicated_off_lanes,
            global_loads,
            global_stores,
            shared_loads,
            shared_stores,
            register_reads,
            register_writes,
            stack_pushes,
            stack_pops,
            divergences,
            barriers
        )
    };
}

impl Counters {
    /// Combines the counters of two SMs that ran side by side: cycles and
    /// depth take the maximum, events add up.
    pub fn merge(&self, other: &Counters) -> Counters {
        let mut out = *self + *other;
        out.cycles = self.cycles.max(other.cycles);
        out
    }

    /// Folds a later launch into a running total.
    pub fn accumulate(&mut self, later: &Counters) {
        *self += *later;
    }

    /// Counter names and values in report order, histogram excluded.
    pub fn fields(&self) -> [(&'static str, u64); 15] {
        [
            ("cycles", self.cycles),
            ("warp_instructions_retired", self.warp_instructions_retired),
            ("thread_instructions", self.thread_instructions),
            ("predicated_off_lanes", self.predicated_off_lanes),
            ("global_loads", self.global_loads),
            ("global_stores", self.global_stores),
            ("shared_loads", self.shared_loads),
            ("shared_stores", self.shared_stores),
            ("register_reads", self.register_reads),
            ("register_writes", self.register_writes),
            ("stack_pushes", self.stack_pushes),
            ("stack_pops", self.stack_pops),
            ("max_stack_depth", self.max_stack_depth),
            ("divergences", self.divergences),
            ("barriers", self.barriers),
        ]
    }

    fn field_mut(&mut self, name: &str) -> Option<&mut u64> {
        Some(match name {
            "cycles" => &mut self.cycles,
            "warp_instructions_retired" => &mut self.warp_instructions_retired,
            "thread_instructions" => &mut self.thread_instructions,
            "predicated_off_lanes" => &mut self.predicated_off_lanes,
            "global_loads" => &mut self.global_loads,
            "global_stores" => &mut self.global_stores,
            "shared_loads" => &mut self.shared_loads,
            "shared_stores" => &mut self.shared_stores,
            "register_reads" => &mut self.register_reads,
            "register_writes" => &mut self.register_writes,
            "stack_pushes" => &mut self.stack_pushes,
            "stack_pops" => &mut self.stack_pops,
            "max_stack_depth" => &mut self.max_stack_depth,
            "divergences" => &mut self.divergences,
            "barriers" => &mut self.barriers,
            _ => return None,
        })
    }
}

/// Sums cycles and events; depth takes the maximum.
impl Add for Counters {
    type Output = Counters;

    fn add(mut self, rhs: Counters) -> Counters {
        self += rhs;
        self
    }
}

impl AddAssign for Counters {
    fn add_assign(&mut self, rhs: Counters) {
        macro_rules! sum {
            ($($f:ident),*) => { $(self.$f += rhs.$f;)* };
        }
        summed_fields!(sum);
        self.cycles += rhs.cycles;
        self.max_stack_depth = self.max_stack_depth.max(rhs.max_stack_depth);
        for (a, b) in self.histogram.iter_mut().zip(rhs.histogram) {
            *a += b;
        }
    }
}

/// Energy classes in weights-file order.
pub const ENERGY_CLASSES: [&str; 12] = [
    "cycles",
    "warp_instructions",
    "thread_instructions",
    "global_loads",
    "global_stores",
    "shared_loads",
    "shared_stores",
    "register_reads",
    "register_writes",
    "stack_pushes",
    "stack_pops",
    "barriers",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeightsError {
    #[error("line {line}: expected class=weight")]
    Syntax { line: usize },
    #[error("line {line}: unknown counter class {class}")]
    UnknownClass { line: usize, class: String },
    #[error("line {line}: weight must be a finite number >= 0")]
    BadWeight { line: usize },
}

/// Cost per event for each energy class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyWeights(pub [f64; ENERGY_CLASSES.len()]);

impl Default for EnergyWeights {
    fn default() -> Self {
        EnergyWeights([1.0; ENERGY_CLASSES.len()])
    }
}

impl EnergyWeights {
    pub fn get(&self, class: &str) -> Option<f64> {
        ENERGY_CLASSES.iter().position(|c| *c == class).map(|i| self.0[i])
    }

    /// Parses `class=weight` lines over the default weights. Blank lines and
    /// `#` comments are skipped.
    pub fn parse(text: &str) -> Result<EnergyWeights, WeightsError> {
        let mut w = EnergyWeights::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (class, value) = body.split_once('=').ok_or(WeightsError::Syntax { line })?;
            let class = class.trim();
            let idx = ENERGY_CLASSES
                .iter()
                .position(|c| *c == class)
                .ok_or_else(|| WeightsError::UnknownClass {
                    line,
                    class: class.to_string(),
                })?;
            let v: f64 = value.trim().parse().map_err(|_| WeightsError::BadWeight { line })?;
            if !v.is_finite() || v < 0.0 {
                return Err(WeightsError::BadWeight { line });
            }
            w.0[idx] = v;
        }
        Ok(w)
    }
}

fn class_counts(c: &Counters) -> [u64; ENERGY_CLASSES.len()] {
    [
        c.cycles,
        c.warp_instructions_retired,
        c.thread_instructions,
        c.global_loads,
        c.global_stores,
        c.shared_loads,
        c.shared_stores,
        c.register_reads,
        c.register_writes,
        c.stack_pushes,
        c.stack_pops,
        c.barriers,
    ]
}

pub fn energy_estimate(c: &Counters, w: &EnergyWeights) -> f64 {
    class_counts(c)
        .iter()
        .zip(w.0)
        .map(|(&n, weight)| n as f64 * weight)
        .sum()
}

/// Deepest warp stack reached by one warp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarpDepth {
    pub block: u32,
    /// Warp index within its block.
    pub warp: u32,
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    /// Smallest warp-stack depth under which the run succeeds.
    pub max_stack_depth: u32,
    pub divergences: u64,
    /// Share of active lane-slots idled by a false guard.
    pub predicated_idle_fraction: f64,
    pub warps: Vec<WarpDepth>,
}

pub fn profile(counters: &Counters, warps: &[WarpDepth]) -> Profile {
    let issued = counters.thread_instructions;
    Profile {
        max_stack_depth: warps.iter().map(|w| w.depth).max().unwrap_or(0),
        divergences: counters.divergences,
        predicated_idle_fraction: if issued == 0 {
            0.0
        } else {
            counters.predicated_off_lanes as f64 / issued as f64
        },
        warps: warps.to_vec(),
    }
}

/// Everything a run reports, in a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub status: String,
    pub config: Vec<(String, String)>,
    pub counters: Counters,
    pub energy: f64,
    pub profile: Profile,
}

impl Report {
    pub fn new(
        status: &str,
        config: Vec<(String, String)>,
        counters: Counters,
        weights: &EnergyWeights,
        warps: &[WarpDepth],
    ) -> Report {
        Report {
            status: status.to_string(),
            config,
            counters,
            energy: energy_estimate(&counters, weights),
            profile: profile(&counters, warps),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "status={}", self.status);
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k}={v}");
        }
        for (k, v) in self.counters.fields() {
            let _ = writeln!(s, "{k}={v}");
        }
        for op in Opcode::ALL {
            let _ = writeln!(s, "op.{}={}", op.mnemonic(), self.counters.histogram[op.index()]);
        }
        let _ = writeln!(s, "energy={:.3}", self.energy);
        let p = &self.profile;
        let _ = writeln!(s, "profile.max_stack_depth={}", p.max_stack_depth);
        let _ = writeln!(s, "profile.divergences={}", p.divergences);
        let _ = writeln!(s, "profile.predicated_idle_fraction={:.6}", p.predicated_idle_fraction);
        let mut i = 0;
        while i < p.warps.len() {
            let block = p.warps[i].block;
            let depths: Vec<String> = p.warps[i..]
                .iter()
                .take_while(|w| w.block == block)
                .map(|w| w.depth.to_string())
                .collect();
            i += depths.len();
            let _ = writeln!(s, "profile.block.{block}={}", depths.join(","));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("report line {line}: {detail}")]
pub struct ReportParseError {
    pub line: usize,
    pub detail: String,
}

/// Reads the counter lines of a text report back. Other keys are ignored.
pub fn parse_counters(text: &str) -> Result<Counters, ReportParseError> {
    let mut c = Counters::default();
    for (i, raw) in text.lines().enumerate() {
        let err = |detail: &str| ReportParseError {
            line: i + 1,
            detail: detail.to_string(),
        };
        let Some((key, value)) = raw.split_once('=') else {
            return Err(err("missing '='"));
        };
        let slot = if let Some(m) = key.strip_prefix("op.") {
            let op = Opcode::from_mnemonic(m).ok_or_else(|| err("unknown opcode"))?;
            &mut c.histogram[op.index()]
        } else if let Some(f) = c.field_mut(key) {
            f
        } else {
            continue;
        };
        *slot = value.parse().map_err(|_| err("not an integer"))?;
    }
    Ok(c)
}
