//! Random structured divergent kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softgpu::isa::CondCode;

struct Gen {
    rng: ChaCha8Rng,
    lines: Vec<String>,
    labels: u32,
}

impl Gen {
    fn label(&mut self) -> String {
        self.labels += 1;
        format!("L{}", self.labels)
    }

    fn alu(&mut self) {
        let op = ["IADD", "ISUB", "XOR", "IMAX", "SHL", "IMUL"][self.rng.random_range(0..6)];
        let d = self.rng.random_range(4..12);
        let a = self.rng.random_range(0..12);
        let b = self.rng.random_range(0..12);
        let guard = if self.rng.random_bool(0.3) {
            format!(
                "@p{}.{} ",
                self.rng.random_range(0..4),
                CondCode::ALL[self.rng.random_range(0..12)].name()
            )
        } else {
            String::new()
        };
        self.lines.push(format!("{guard}{op} R{d}, R{a}, R{b}"));
    }

    fn cond(&mut self) -> (u8, &'static str) {
        let p = self.rng.random_range(0..4);
        let r = [0, 4, 5, 6, 7, 8, 9, 10, 11][self.rng.random_range(0..9)];
        let imm = self.rng.random_range(-8i32..40);
        self.lines.push(format!("ISETP p{p}, R{r}, {imm}"));
        (p, CondCode::ALL[self.rng.random_range(1..12)].name())
    }

    fn block(&mut self, depth: u32) {
        for _ in 0..self.rng.random_range(1..5) + (depth == 0) as u32 * 2 {
            let pick = if depth >= 3 {
                0
            } else {
                self.rng.random_range(depth..10)
            };
            match pick {
                0..=2 => self.alu(),
                3..=6 => {
                    let (j, e) = (self.label(), self.label());
                    self.lines.push(format!("SSY {j}"));
                    let (p, c) = self.cond();
                    self.lines.push(format!("@p{p}.{c} BRA {e}"));
                    self.block(depth + 1);
                    self.lines.push("SYNC".into());
                    self.lines.push(format!("{e}:"));
                    self.block(depth + 1);
                    self.lines.push("SYNC".into());
                    self.lines.push(format!("{j}:"));
                }
                7 => {
                    let (j, s) = (self.label(), self.label());
                    self.lines.push(format!("SSY {j}"));
                    let (p, c) = self.cond();
                    self.lines.push(format!("@p{p}.{c} BRA {s}"));
                    self.block(depth + 1);
                    self.lines.push("SYNC".into());
                    self.lines.push(format!("{s}: SYNC"));
                    self.lines.push(format!("{j}:"));
                }
                8 => {
                    // data-dependent trip count 0..=3
                    let (ctr, lim) = (12 + 2 * depth, 13 + 2 * depth);
                    let (top, out, after) = (self.label(), self.label(), self.label());
                    let src = self.rng.random_range(0..12);
                    self.lines.push(format!("AND R{lim}, R{src}, 3"));
                    self.lines.push(format!("MVI R{ctr}, 0"));
                    self.lines.push(format!("SSY {after}"));
                    self.lines.push(format!("{top}: ISETP p3, R{ctr}, R{lim}"));
                    self.lines.push(format!("@p3.GE BRA {out}"));
                    self.block(depth + 1);
                    self.lines.push(format!("IADD R{ctr}, R{ctr}, 1"));
                    self.lines.push(format!("BRA {top}"));
                    self.lines.push(format!("{out}: SYNC"));
                    self.lines.push(format!("{after}:"));
                }
                _ => {
                    let (p, c) = self.cond();
                    self.lines.push(format!("@p{p}.{c} EXIT"));
                }
            }
        }
    }
}

/// Structured divergent kernel: nested if/else, if-only, loops with a
/// lane-dependent trip count and guarded EXIT. Writes R4..R11 per thread to
/// 0x1000 + 32 * global id.
pub fn kernel(seed: u64) -> String {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        lines: [
            ".kernel div",
            ".regs 24",
            "IMAD R4, R1, R2, R0",
            "AND R5, R0, 7",
            "XOR R6, R0, 0x15",
            "IMUL R7, R0, R0",
            "SHR R8, R4, 2",
        ]
        .map(String::from)
        .to_vec(),
        labels: 0,
    };
    g.block(0);
    g.lines.extend(
        [
            "IMAD R20, R1, R2, R0",
            "SHL R20, R20, 5",
            "IADD R20, R20, 0x1000",
            "R2A A0, R20",
        ]
        .map(String::from),
    );
    for r in 4..12 {
        g.lines.push(format!("STG [A0+{}], R{r}", 4 * (r - 4)));
    }
    g.lines.push("EXIT".into());
    g.lines.join("\n")
}
