//! Class-conditional first-order Markov corpora with known entropy rates.
//!
//! Text format (`#` starts a comment):
//!
//! ```text
//! classes = 2
//! vocab = 4
//! min_len = 5
//! max_len = 9
//! docs = 100
//! seed = 7
//! [initial 0]
//! 0.25 0.25 0.25 0.25
//! [transition 0]
//! 0.1 0.2 0.3 0.4
//! ... (vocab rows)
//! ```
//!
//! Every class needs one `initial` row and a `vocab × vocab` `transition`
//! block. Token `i` is written as `w{i}`.

use rand::Rng as _;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::rng::{Rng, RngStreams};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub docs: usize,
    pub seed: u64,
    /// Per class: distribution of the first token.
    pub initial: Vec<Vec<f64>>,
    /// Per class: row-stochastic `vocab × vocab` transition matrix.
    pub transitions: Vec<Vec<Vec<f64>>>,
}

/// Generated documents plus the per-class entropy rate (nats per token).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub docs: Vec<(usize, Vec<usize>)>,
    pub entropy_rates: Vec<f64>,
}

pub fn token_name(i: usize) -> String {
    format!("w{i}")
}

impl SyntheticCorpus {
    /// `"label<TAB>w.. w.."` lines.
    pub fn lines(&self) -> Vec<String> {
        self.docs
            .iter()
            .map(|(c, toks)| {
                let text: Vec<String> = toks.iter().map(|&t| token_name(t)).collect();
                format!("{c}\t{}", text.join(" "))
            })
            .collect()
    }

    /// Entropy rate averaged over the documents' classes.
    pub fn mean_entropy_rate(&self) -> f64 {
        self.docs.iter().map(|(c, _)| self.entropy_rates[*c]).sum::<f64>() / self.docs.len() as f64
    }
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{what} is not a probability distribution (sum {sum})")));
    }
    Ok(())
}

fn normalized(row: Vec<f64>) -> Vec<f64> {
    let s: f64 = row.iter().sum();
    row.into_iter().map(|p| p / s).collect()
}

fn dirichlet_row(rng: &mut Rng, n: usize, concentration: f64) -> Vec<f64> {
    let g = Gamma::new(concentration, 1.0).expect("positive concentration");
    normalized((0..n).map(|_| g.sample(rng).max(1e-12)).collect())
}

fn sample_index(rng: &mut Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.vocab == 0 || self.docs == 0 {
            return Err(Error::Config("classes, vocab and docs must be positive".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!("invalid length range [{}, {}]", self.min_len, self.max_len)));
        }
        if self.initial.len() != self.classes || self.transitions.len() != self.classes {
            return Err(Error::Config("need one initial row and one transition block per class".into()));
        }
        for c in 0..self.classes {
            if self.initial[c].len() != self.vocab {
                return Err(Error::Config(format!("initial row of class {c} has wrong width")));
            }
            check_distribution(&self.initial[c], &format!("initial row of class {c}"))?;
            if self.transitions[c].len() != self.vocab {
                return Err(Error::Config(format!("transition block of class {c} has wrong height")));
            }
            for (i, row) in self.transitions[c].iter().enumerate() {
                if row.len() != self.vocab {
                    return Err(Error::Config(format!("transition row {i} of class {c} has wrong width")));
                }
                check_distribution(row, &format!("transition row {i} of class {c}"))?;
            }
        }
        Ok(())
    }

    /// One class; the chain walks `w0, w1, ...` and wraps. Fixed length.
    pub fn cycle(vocab: usize, len: usize, docs: usize, seed: u64) -> Self {
        let mut initial = vec![0.0; vocab];
        initial[0] = 1.0;
        let transitions = (0..vocab)
            .map(|i| {
                let mut row = vec![0.0; vocab];
                row[(i + 1) % vocab] = 1.0;
                row
            })
            .collect();
        Self { classes: 1, vocab, min_len: len, max_len: len, docs, seed, initial: vec![initial], transitions: vec![transitions] }
    }

    /// One class with uniform initial and transition distributions.
    pub fn uniform(vocab: usize, min_len: usize, max_len: usize, docs: usize, seed: u64) -> Self {
        let row = vec![1.0 / vocab as f64; vocab];
        Self {
            classes: 1,
            vocab,
            min_len,
            max_len,
            docs,
            seed,
            initial: vec![row.clone()],
            transitions: vec![vec![row; vocab]],
        }
    }

    /// Classes own disjoint, equal-sized token blocks; within its block each
    /// class follows a random dense chain.
    pub fn disjoint(classes: usize, vocab: usize, min_len: usize, max_len: usize, docs: usize, seed: u64) -> Self {
        assert!(vocab >= classes, "each class needs at least one token");
        let mut rng = RngStreams::new(seed).stream(&[0x5EED]);
        let block = vocab / classes;
        let mut initial = Vec::new();
        let mut transitions = Vec::new();
        for c in 0..classes {
            let lo = c * block;
            let hi = if c + 1 == classes { vocab } else { lo + block };
            let embed = |rng: &mut Rng| {
                let mut row = vec![0.0; vocab];
                for (j, p) in (lo..hi).zip(dirichlet_row(rng, hi - lo, 1.0)) {
                    row[j] = p;
                }
                row
            };
            initial.push(embed(&mut rng));
            transitions.push((0..vocab).map(|_| embed(&mut rng)).collect());
        }
        Self { classes, vocab, min_len, max_len, docs, seed, initial, transitions }
    }

    /// A shared random chain whose next-token distribution is tilted toward
    /// a class-specific token block: `row ∝ base_row + strength · 1[j ∈ block(c)] / |block|`.
    ///
    /// Small `strength` makes each token weak evidence of the class, so a
    /// decoder needs long context (or a latent code) to recover it.
    #[allow(clippy::too_many_arguments)]
    pub fn latent_class(
        classes: usize,
        vocab: usize,
        strength: f64,
        concentration: f64,
        min_len: usize,
        max_len: usize,
        docs: usize,
        seed: u64,
    ) -> Self {
        assert!(vocab >= classes, "each class needs at least one token");
        let mut rng = RngStreams::new(seed).stream(&[0x5EED]);
        let base: Vec<Vec<f64>> = (0..vocab).map(|_| dirichlet_row(&mut rng, vocab, concentration)).collect();
        let base_initial = dirichlet_row(&mut rng, vocab, concentration);
        let block = vocab / classes;
        let tilt = |row: &[f64], c: usize| {
            let lo = c * block;
            let hi = if c + 1 == classes { vocab } else { lo + block };
            let width = (hi - lo) as f64;
            normalized(
                row.iter()
                    .enumerate()
                    .map(|(j, &p)| if (lo..hi).contains(&j) { p + strength / width } else { p })
                    .collect(),
            )
        };
        let initial = (0..classes).map(|c| tilt(&base_initial, c)).collect();
        let transitions = (0..classes).map(|c| base.iter().map(|r| tilt(r, c)).collect()).collect();
        Self { classes, vocab, min_len, max_len, docs, seed, initial, transitions }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "classes = {}\nvocab = {}\nmin_len = {}\nmax_len = {}\ndocs = {}\nseed = {}\n",
            self.classes, self.vocab, self.min_len, self.max_len, self.docs, self.seed
        );
        let fmt_row = |row: &[f64]| row.iter().map(|p| format!("{p:?}")).collect::<Vec<_>>().join(" ");
        for c in 0..self.classes {
            s.push_str(&format!("[initial {c}]\n{}\n[transition {c}]\n", fmt_row(&self.initial[c])));
            for row in &self.transitions[c] {
                s.push_str(&fmt_row(row));
                s.push('\n');
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        enum Block {
            None,
            Initial(usize),
            Transition,
        }
        let mut keys = std::collections::HashMap::new();
        let mut initial: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut transitions: Vec<(usize, Vec<Vec<f64>>)> = Vec::new();
        let mut block = Block::None;
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse { line: line_no, msg };
            if let Some(inner) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let mut parts = inner.split_whitespace();
                let kind = parts.next().unwrap_or("");
                let c: usize = parts
                    .next()
                    .and_then(|p| p.parse().ok())
                    .ok_or_else(|| perr(format!("block header {line:?} needs a class index")))?;
                block = match kind {
                    "initial" => Block::Initial(c),
                    "transition" => {
                        transitions.push((c, Vec::new()));
                        Block::Transition
                    }
                    _ => return Err(perr(format!("unknown block {kind:?}"))),
                };
                continue;
            }
            if let Some((k, v)) = line.split_once('=') {
                let v: u64 = v.trim().parse().map_err(|_| perr(format!("value of {:?} must be an integer", k.trim())))?;
                keys.insert(k.trim().to_string(), v);
                block = Block::None;
                continue;
            }
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|x| x.parse::<f64>().map_err(|_| perr(format!("bad number {x:?}"))))
                .collect::<Result<_>>()?;
            match block {
                Block::None => return Err(perr("numbers outside a block".into())),
                Block::Initial(c) => {
                    initial.push((c, row));
                    block = Block::None;
                }
                Block::Transition => transitions.last_mut().unwrap().1.push(row),
            }
        }
        let get = |k: &str| keys.get(k).copied().ok_or_else(|| Error::Config(format!("missing key {k:?}")));
        let classes = get("classes")? as usize;
        let mut init = vec![Vec::new(); classes];
        let mut trans = vec![Vec::new(); classes];
        for (c, row) in initial {
            *init.get_mut(c).ok_or_else(|| Error::Config(format!("initial block for unknown class {c}")))? = row;
        }
        for (c, rows) in transitions {
            *trans.get_mut(c).ok_or_else(|| Error::Config(format!("transition block for unknown class {c}")))? = rows;
        }
        let spec = Self {
            classes,
            vocab: get("vocab")? as usize,
            min_len: get("min_len")? as usize,
            max_len: get("max_len")? as usize,
            docs: get("docs")? as usize,
            seed: get("seed")?,
            initial: init,
            transitions: trans,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Long-run state occupancy of a chain started from `start`.
///
/// Solves `π P = π, Σπ = 1` directly; if that system is singular (reducible
/// chain) falls back to the Cesàro average of `start · Pⁿ`.
pub fn stationary_distribution(transition: &[Vec<f64>], start: &[f64]) -> Vec<f64> {
    let n = transition.len();
    // Rows of (Pᵀ − I), last equation replaced by Σπ = 1.
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).map(|j| transition[j][i]).collect();
            row[i] -= 1.0;
            row.push(0.0);
            row
        })
        .collect();
    a[n - 1] = vec![1.0; n + 1];
    let mut singular = false;
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        if a[pivot][col].abs() < 1e-12 {
            singular = true;
            break;
        }
        a.swap(col, pivot);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    let pivot = a[col].clone();
                    for (x, p) in a[r][col..].iter_mut().zip(&pivot[col..]) {
                        *x -= f * p;
                    }
                }
            }
        }
    }
    if !singular {
        let pi: Vec<f64> = (0..n).map(|i| a[i][n] / a[i][i]).collect();
        if pi.iter().all(|p| *p > -1e-9) {
            return pi.into_iter().map(|p| p.max(0.0)).collect();
        }
    }
    let steps = 20_000;
    let mut p = start.to_vec();
    let mut avg = vec![0.0; n];
    for _ in 0..steps {
        for (s, x) in avg.iter_mut().zip(&p) {
            *s += x / steps as f64;
        }
        let mut next = vec![0.0; n];
        for (i, &pi) in p.iter().enumerate() {
            if pi > 0.0 {
                for (nx, &t) in next.iter_mut().zip(&transition[i]) {
                    *nx += pi * t;
                }
            }
        }
        p = next;
    }
    avg
}

fn row_entropy(row: &[f64]) -> f64 {
    0.0 - row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// `Σ_i π_i H(P_i)` in nats.
pub fn entropy_rate(transition: &[Vec<f64>], start: &[f64]) -> f64 {
    let pi = stationary_distribution(transition, start);
    pi.iter().zip(transition).map(|(&p, row)| p * row_entropy(row)).sum()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = RngStreams::new(spec.seed).stream(&[0xD0C5]);
    let mut docs = Vec::with_capacity(spec.docs);
    for _ in 0..spec.docs {
        let c = rng.random_range(0..spec.classes);
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let mut toks = Vec::with_capacity(len);
        let mut cur = sample_index(&mut rng, &spec.initial[c]);
        toks.push(cur);
        while toks.len() < len {
            cur = sample_index(&mut rng, &spec.transitions[c][cur]);
            toks.push(cur);
        }
        docs.push((c, toks));
    }
    let entropy_rates = (0..spec.classes).map(|c| entropy_rate(&spec.transitions[c], &spec.initial[c])).collect();
    Ok(SyntheticCorpus { docs, entropy_rates })
}
