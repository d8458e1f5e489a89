//! Tabular Markov task models.
//!
//! A task is a chain `S_1 -> S_2 -> ... -> S_L` over `m` states with a
//! uniform initial law. Serial tasks follow an affine map `i -> a*i + b`
//! (mod m), so every state carries its own successor. Parallel tasks send
//! a whole bucket of `w` consecutive states to one representative, so a
//! small perturbation of the input rarely changes the output.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for row sums of a stochastic matrix.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Serial,
    Parallel,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::Serial => "serial",
            TaskKind::Parallel => "parallel",
        })
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "serial" => Ok(TaskKind::Serial),
            "parallel" => Ok(TaskKind::Parallel),
            other => Err(Error::InvalidSpec(format!("unknown task kind `{other}`"))),
        }
    }
}

fn default_one() -> usize {
    1
}

/// Parameters of a task family member.
///
/// `a` is only read by serial tasks and `w` only by parallel ones; both
/// are kept so a single spec can describe a serial/parallel pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub m: usize,
    #[serde(default = "default_one")]
    pub a: usize,
    #[serde(default)]
    pub b: i64,
    #[serde(default = "default_one")]
    pub w: usize,
    #[serde(default)]
    pub eta: f64,
    pub length: usize,
    /// Empty means the default: the final `ceil(length / 8)` positions.
    #[serde(default)]
    pub answer_positions: Vec<usize>,
}

impl TaskSpec {
    pub fn serial(m: usize, a: usize, b: i64, eta: f64, length: usize) -> Self {
        TaskSpec {
            kind: TaskKind::Serial,
            m,
            a,
            b,
            w: 1,
            eta,
            length,
            answer_positions: Vec::new(),
        }
    }

    pub fn parallel(m: usize, w: usize, b: i64, eta: f64, length: usize) -> Self {
        TaskSpec {
            kind: TaskKind::Parallel,
            m,
            a: 1,
            b,
            w,
            eta,
            length,
            answer_positions: Vec::new(),
        }
    }

    pub fn with_kind(&self, kind: TaskKind) -> Self {
        TaskSpec {
            kind,
            ..self.clone()
        }
    }

    pub fn with_length(&self, length: usize) -> Self {
        TaskSpec {
            length,
            answer_positions: Vec::new(),
            ..self.clone()
        }
    }

    /// Answer positions with the default filled in.
    pub fn answer_positions(&self) -> Vec<usize> {
        if self.answer_positions.is_empty() {
            default_answer_positions(self.length)
        } else {
            self.answer_positions.clone()
        }
    }

    fn offset(&self, modulus: usize) -> usize {
        self.b.rem_euclid(modulus as i64) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.m < 2 {
            return bad(format!("m must be at least 2, got {}", self.m));
        }
        if self.length == 0 {
            return bad("length must be positive".into());
        }
        if !(0.0..1.0).contains(&self.eta) || !self.eta.is_finite() {
            return bad(format!("eta must lie in [0, 1), got {}", self.eta));
        }
        match self.kind {
            TaskKind::Serial => {
                if self.a == 0 {
                    return bad("a must be positive".into());
                }
                if gcd(self.a, self.m) != 1 {
                    return bad(format!(
                        "a = {} is not coprime with m = {}; the map would not be a bijection",
                        self.a, self.m
                    ));
                }
            }
            TaskKind::Parallel => {
                if self.w < 2 || self.w > self.m {
                    return bad(format!("w must lie in [2, m], got {}", self.w));
                }
                if self.m % self.w != 0 {
                    return bad(format!("w = {} does not divide m = {}", self.w, self.m));
                }
            }
        }
        let mut seen = vec![false; self.length];
        for &p in &self.answer_positions {
            if p >= self.length {
                return bad(format!(
                    "answer position {p} outside length {}",
                    self.length
                ));
            }
            if std::mem::replace(&mut seen[p], true) {
                return bad(format!("answer position {p} listed twice"));
            }
        }
        Ok(())
    }

    /// Build the model described by this spec.
    pub fn build(&self) -> Result<TabularMarkovModel> {
        match self.kind {
            TaskKind::Serial => build_serial_task(self),
            TaskKind::Parallel => build_parallel_task(self),
        }
    }

    /// The noiseless successor of state `i`.
    pub fn successor(&self, i: usize) -> usize {
        match self.kind {
            TaskKind::Serial => (self.a * i + self.offset(self.m)) % self.m,
            TaskKind::Parallel => {
                let buckets = self.m / self.w;
                ((i / self.w + self.offset(buckets)) % buckets) * self.w + self.w / 2
            }
        }
    }

    pub fn to_config_string(&self) -> String {
        let mut resolved = self.clone();
        resolved.answer_positions = self.answer_positions();
        toml::to_string(&resolved).expect("task spec always serializes")
    }

    pub fn from_config_str(text: &str) -> Result<Self> {
        let spec: TaskSpec = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// The final `ceil(length / 8)` positions.
pub fn default_answer_positions(length: usize) -> Vec<usize> {
    let n = length.div_ceil(8);
    (length - n..length).collect()
}

pub(crate) fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Transition kernel split into a rank-one floor plus a sparse residual.
///
/// Rows whose minimum entry is positive share the column-wise floor; the
/// residual keeps whatever is left. Uniform-noise tasks then cost O(m) per
/// matrix-vector product instead of O(m^2).
#[derive(Debug, Clone)]
pub(crate) struct Kernel {
    floor: Vec<f64>,
    floor_row: Vec<bool>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl Kernel {
    fn new(m: usize, t: &[f64]) -> Self {
        let floor_row: Vec<bool> = (0..m)
            .map(|i| t[i * m..(i + 1) * m].iter().all(|&x| x > 0.0))
            .collect();
        let mut floor = vec![f64::INFINITY; m];
        let mut any = false;
        for i in (0..m).filter(|&i| floor_row[i]) {
            any = true;
            for j in 0..m {
                floor[j] = floor[j].min(t[i * m + j]);
            }
        }
        if !any {
            floor.iter_mut().for_each(|f| *f = 0.0);
        }
        let rows = (0..m)
            .map(|i| {
                (0..m)
                    .filter_map(|j| {
                        let v = if floor_row[i] {
                            t[i * m + j] - floor[j]
                        } else {
                            t[i * m + j]
                        };
                        (v > 0.0).then_some((j, v))
                    })
                    .collect()
            })
            .collect();
        Kernel {
            floor,
            floor_row,
            rows,
        }
    }

    /// `out = v^T T`
    pub(crate) fn push_forward(&self, v: &[f64], out: &mut [f64]) {
        let mut shared = 0.0;
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, row) in self.rows.iter().enumerate() {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            if self.floor_row[i] {
                shared += vi;
            }
            for &(j, x) in row {
                out[j] += vi * x;
            }
        }
        if shared != 0.0 {
            for (o, f) in out.iter_mut().zip(&self.floor) {
                *o += shared * f;
            }
        }
    }

    /// `out = T v`
    pub(crate) fn pull_back(&self, v: &[f64], out: &mut [f64]) {
        let shared: f64 = self.floor.iter().zip(v).map(|(f, x)| f * x).sum();
        for (i, row) in self.rows.iter().enumerate() {
            let mut acc: f64 = row.iter().map(|&(j, x)| x * v[j]).sum();
            if self.floor_row[i] {
                acc += shared;
            }
            out[i] = acc;
        }
    }
}

/// A time-homogeneous Markov chain of fixed length over `m` states.
#[derive(Debug, Clone)]
pub struct TabularMarkovModel {
    m: usize,
    length: usize,
    initial: Vec<f64>,
    transition: Vec<f64>,
    kernel: Kernel,
}

impl TabularMarkovModel {
    /// `transition` is row-major `m * m`.
    pub fn new(initial: Vec<f64>, transition: Vec<f64>, length: usize) -> Result<Self> {
        let m = initial.len();
        if m == 0 {
            return Err(Error::InvalidModel("empty state space".into()));
        }
        if transition.len() != m * m {
            return Err(Error::InvalidModel(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                m * m
            )));
        }
        if length == 0 {
            return Err(Error::InvalidModel("length must be positive".into()));
        }
        check_distribution(&initial, "initial law")?;
        for i in 0..m {
            check_distribution(&transition[i * m..(i + 1) * m], &format!("row {i}"))?;
        }
        let kernel = Kernel::new(m, &transition);
        Ok(TabularMarkovModel {
            m,
            length,
            initial,
            transition,
            kernel,
        })
    }

    pub fn num_states(&self) -> usize {
        self.m
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.transition[i * self.m..(i + 1) * self.m]
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.transition[i * self.m + j]
    }

    pub(crate) fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn with_length(&self, length: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::InvalidModel("length must be positive".into()));
        }
        Ok(TabularMarkovModel {
            length,
            ..self.clone()
        })
    }

    /// Law of `S_k` given `S_1 = s1`, i.e. row `s1` of `T^(k-1)`.
    pub fn skip_conditional(&self, s1: usize, k: usize) -> Result<Vec<f64>> {
        if s1 >= self.m {
            return Err(Error::InvalidArgument(format!("state {s1} out of range")));
        }
        if k < 2 || k > self.length {
            return Err(Error::InvalidArgument(format!(
                "k must lie in [2, {}], got {k}",
                self.length
            )));
        }
        let mut v = vec![0.0; self.m];
        v[s1] = 1.0;
        let mut next = vec![0.0; self.m];
        for _ in 1..k {
            self.kernel.push_forward(&v, &mut next);
            std::mem::swap(&mut v, &mut next);
        }
        Ok(v)
    }

    /// Dense `T^n`, row-major.
    pub fn transition_power(&self, n: usize) -> Vec<f64> {
        let m = self.m;
        let mut result = identity(m);
        let mut base = self.transition.clone();
        let mut e = n;
        while e > 0 {
            if e & 1 == 1 {
                result = matmul(&result, &base, m);
            }
            e >>= 1;
            if e > 0 {
                base = matmul(&base, &base, m);
            }
        }
        result
    }

    /// Mix each input through a finite-resolution lens before the step:
    /// the state is read as itself with probability `1 - rate` and as a
    /// uniformly chosen neighbour within `radius` (cyclically) otherwise.
    pub fn with_input_jitter(&self, radius: usize, rate: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "jitter rate {rate} outside [0, 1]"
            )));
        }
        if radius == 0 || rate == 0.0 {
            return Ok(self.clone());
        }
        if 2 * radius + 1 > self.m {
            return Err(Error::InvalidArgument(format!(
                "jitter radius {radius} wraps around {} states",
                self.m
            )));
        }
        let m = self.m;
        let side = rate / (2 * radius) as f64;
        let mut t = vec![0.0; m * m];
        for i in 0..m {
            let out = &mut t[i * m..(i + 1) * m];
            for d in -(radius as i64)..=(radius as i64) {
                let src = (i as i64 + d).rem_euclid(m as i64) as usize;
                let weight = if d == 0 { 1.0 - rate } else { side };
                for (o, x) in out.iter_mut().zip(self.row(src)) {
                    *o += weight * x;
                }
            }
        }
        TabularMarkovModel::new(self.initial.clone(), t, self.length)
    }

    /// Divert `leak` of every row into `sink`, which becomes absorbing.
    pub fn with_absorbing_leak(&self, sink: usize, leak: f64) -> Result<Self> {
        if sink >= self.m {
            return Err(Error::InvalidArgument(format!("sink {sink} out of range")));
        }
        if !(0.0..1.0).contains(&leak) {
            return Err(Error::InvalidArgument(format!(
                "leak {leak} outside [0, 1)"
            )));
        }
        let m = self.m;
        let mut t = vec![0.0; m * m];
        for i in 0..m {
            let out = &mut t[i * m..(i + 1) * m];
            let (keep, stick) = if i == sink {
                (0.0, 1.0)
            } else {
                (1.0 - leak, leak)
            };
            for (o, x) in out.iter_mut().zip(self.row(i)) {
                *o = keep * x;
            }
            out[sink] += stick;
        }
        TabularMarkovModel::new(self.initial.clone(), t, self.length)
    }

    /// `(1 - eps) T + eps / m`: no transition is impossible any more.
    pub fn with_smoothing(&self, eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::InvalidArgument(format!(
                "smoothing {eps} outside [0, 1]"
            )));
        }
        let floor = eps / self.m as f64;
        let t = self
            .transition
            .iter()
            .map(|x| (1.0 - eps) * x + floor)
            .collect();
        TabularMarkovModel::new(self.initial.clone(), t, self.length)
    }

    /// Plain-text form: header, initial law, then one transition row per
    /// line, every value with 17 significant digits.
    pub fn to_matrix_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# tabular markov model");
        let _ = writeln!(s, "states {}", self.m);
        let _ = writeln!(s, "length {}", self.length);
        let _ = writeln!(s, "initial");
        s.push_str(&join_row(&self.initial));
        let _ = writeln!(s, "transition");
        for i in 0..self.m {
            s.push_str(&join_row(self.row(i)));
        }
        s
    }

    pub fn from_matrix_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let m = parse_header(lines.next(), "states")?;
        let length = parse_header(lines.next(), "length")?;
        expect_word(lines.next(), "initial")?;
        let initial = parse_row(lines.next(), m)?;
        expect_word(lines.next(), "transition")?;
        let mut t = Vec::with_capacity(m * m);
        for _ in 0..m {
            t.extend(parse_row(lines.next(), m)?);
        }
        if let Some(extra) = lines.next() {
            return Err(Error::Parse(format!("trailing content `{extra}`")));
        }
        TabularMarkovModel::new(initial, t, length)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_matrix_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_matrix_text(&text)
    }
}

fn join_row(row: &[f64]) -> String {
    let mut s = row
        .iter()
        .map(|x| format!("{x:.16e}"))
        .collect::<Vec<_>>()
        .join(" ");
    s.push('\n');
    s
}

fn parse_header(line: Option<&str>, key: &str) -> Result<usize> {
    let line = line.ok_or_else(|| Error::Parse(format!("missing `{key}`")))?;
    let rest = line
        .strip_prefix(key)
        .ok_or_else(|| Error::Parse(format!("expected `{key}`, found `{line}`")))?;
    rest.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad value for `{key}`: `{rest}`")))
}

fn expect_word(line: Option<&str>, word: &str) -> Result<()> {
    match line {
        Some(l) if l == word => Ok(()),
        other => Err(Error::Parse(format!("expected `{word}`, found {other:?}"))),
    }
}

fn parse_row(line: Option<&str>, m: usize) -> Result<Vec<f64>> {
    let line = line.ok_or_else(|| Error::Parse("missing matrix row".into()))?;
    let row: Vec<f64> = line
        .split_whitespace()
        .map(|tok| {
            tok.parse()
                .map_err(|_| Error::Parse(format!("bad number `{tok}`")))
        })
        .collect::<Result<_>>()?;
    if row.len() != m {
        return Err(Error::Parse(format!(
            "row has {} values, expected {m}",
            row.len()
        )));
    }
    Ok(row)
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidModel(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::InvalidModel(format!("{what} sums to {total}")));
    }
    Ok(())
}

pub(crate) fn identity(m: usize) -> Vec<f64> {
    let mut id = vec![0.0; m * m];
    for i in 0..m {
        id[i * m + i] = 1.0;
    }
    id
}

pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * m];
    for i in 0..m {
        for k in 0..m {
            let aik = a[i * m + k];
            if aik == 0.0 {
                continue;
            }
            let (crow, brow) = (&mut c[i * m..(i + 1) * m], &b[k * m..(k + 1) * m]);
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aik * bj;
            }
        }
    }
    c
}

fn build_from_successor(spec: &TaskSpec) -> Result<TabularMarkovModel> {
    spec.validate()?;
    let m = spec.m;
    let noise = spec.eta / m as f64;
    let mut t = vec![noise; m * m];
    for i in 0..m {
        t[i * m + spec.successor(i)] += 1.0 - spec.eta;
    }
    TabularMarkovModel::new(vec![1.0 / m as f64; m], t, spec.length)
}

/// `T[i][j] = (1 - eta) [j = a*i + b mod m] + eta / m`.
pub fn build_serial_task(spec: &TaskSpec) -> Result<TabularMarkovModel> {
    if spec.kind != TaskKind::Serial {
        return Err(Error::InvalidSpec("expected a serial spec".into()));
    }
    build_from_successor(spec)
}

/// `T[i][j] = (1 - eta) [j = g(i / w)] + eta / m` where `g` sends bucket
/// `q` to the centre state of bucket `q + b` (mod m / w).
pub fn build_parallel_task(spec: &TaskSpec) -> Result<TabularMarkovModel> {
    if spec.kind != TaskKind::Parallel {
        return Err(Error::InvalidSpec("expected a parallel spec".into()));
    }
    build_from_successor(spec)
}

/// One ancestral sample from a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub states: Vec<usize>,
    pub seed: u64,
    pub log_prob: f64,
}

fn draw(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &x) in p.iter().enumerate() {
        if x <= 0.0 {
            continue;
        }
        acc += x;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

pub fn sample_trajectory(model: &TabularMarkovModel, seed: u64) -> TrajectorySample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(model.length);
    let s0 = draw(&model.initial, &mut rng);
    let mut log_prob = model.initial[s0].ln();
    states.push(s0);
    for _ in 1..model.length {
        let prev = *states.last().unwrap();
        let next = draw(model.row(prev), &mut rng);
        log_prob += model.entry(prev, next).ln();
        states.push(next);
    }
    TrajectorySample {
        states,
        seed,
        log_prob,
    }
}
