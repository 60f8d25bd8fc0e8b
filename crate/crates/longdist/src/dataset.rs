//! Synthetic seven-equation classification benchmark.
//!
//! Each instance is built by drawing a label uniformly from the seven
//! equation ids, drawing the three variables `a`, `b`, `c` uniformly from a
//! sampling interval, and evaluating the labeled equation; the numeric result
//! becomes the fourth feature. An attribution method explains a target
//! correctly when it points at training instances built from the same
//! equation, which makes ground-truth explanation accuracy measurable.
//!
//! The seven default forms are pairwise-distinct low-degree expressions in
//! `a`, `b`, `c`; they can be overridden in [`DataConfig`] with expression
//! strings in a restricted grammar (`+`, `-`, `*`, `^2` on the three
//! variables).

use std::fmt;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::Label;

/// Number of equations and therefore classes.
pub const N_EQUATIONS: usize = 7;
/// Features per instance: the three variables plus the equation result.
pub const N_FEATURES: usize = 4;

/// Canonical text of the seven default equation forms.
pub const DEFAULT_EQUATIONS: [&str; N_EQUATIONS] =
    ["a+b+c", "a*b+c", "a-b*c", "a*b*c", "a^2+b*c", "a+b^2-c", "a*c-b"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("equation id {0} is out of range (0..{})", N_EQUATIONS)]
    EquationIdOutOfRange(usize),
    #[error("equation input must be finite, got ({0}, {1}, {2})")]
    NonFiniteInput(f64, f64, f64),
    #[error("expected exactly {} equations, got {0}", N_EQUATIONS)]
    WrongEquationCount(usize),
    #[error("equation parse error in {source_text:?}: {reason} at byte {at}")]
    Parse { source_text: String, reason: String, at: usize },
    #[error("equations {0} and {1} are not distinct as functions ({text_a:?} vs {text_b:?})")]
    IndistinctEquations { i: usize, j: usize, text_a: String, text_b: String },
    #[error("sampling interval is degenerate: lo {lo} must be strictly below hi {hi}")]
    DegenerateInterval { lo: f64, hi: f64 },
    #[error("sampling interval bounds must be finite")]
    NonFiniteInterval,
    #[error("{split} size must be at least 1")]
    EmptySplit { split: &'static str },
    #[error("equation result for instance {index} is not finite (label {label}); narrow the interval")]
    NonFiniteResult { index: usize, label: Label },
    #[error("feature {feature} has zero variance on the training split; generation config is degenerate")]
    ZeroVariance { feature: usize },
    #[error("cannot fit a standardizer on an empty training split")]
    EmptyTrainingSplit,
    #[error("CSV header must be {expected:?}, got {got:?}")]
    BadCsvHeader { expected: String, got: String },
    #[error("row {row}: field {field} is not numeric: {value:?}")]
    NonNumericField { row: usize, field: &'static str, value: String },
    #[error("row {row}: label {label} is out of range (0..{})", N_EQUATIONS)]
    CsvLabelOutOfRange { row: usize, label: u64 },
    #[error("row {row}: expected 5 fields, got {got}")]
    BadFieldCount { row: usize, got: usize },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl DataError {
    fn parse(source_text: &str, reason: impl Into<String>, at: usize) -> Self {
        DataError::Parse { source_text: source_text.to_string(), reason: reason.into(), at }
    }
}

// ---------------------------------------------------------------------------
// Equation expressions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Var {
    A,
    B,
    C,
}

/// Parsed expression in the restricted grammar:
///
/// ```text
/// expr   := term (('+' | '-') term)*
/// term   := factor ('*' factor)*
/// factor := ('a' | 'b' | 'c') ('^2')?
/// ```
///
/// `·` and `−` are accepted as aliases for `*` and `-`. Operators associate
/// left, so evaluation order (and therefore floating-point rounding) is fixed
/// by the expression text.
#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Var(Var),
    Square(Var),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
}

impl Expr {
    fn eval(&self, a: f64, b: f64, c: f64) -> f64 {
        match self {
            Expr::Var(v) => var(*v, a, b, c),
            Expr::Square(v) => {
                let x = var(*v, a, b, c);
                x * x
            }
            Expr::Add(l, r) => l.eval(a, b, c) + r.eval(a, b, c),
            Expr::Sub(l, r) => l.eval(a, b, c) - r.eval(a, b, c),
            Expr::Mul(l, r) => l.eval(a, b, c) * r.eval(a, b, c),
        }
    }
}

fn var(v: Var, a: f64, b: f64, c: f64) -> f64 {
    match v {
        Var::A => a,
        Var::B => b,
        Var::C => c,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Token {
    Var(Var),
    Plus,
    Minus,
    Star,
    Caret2,
}

fn tokenize(text: &str) -> Result<Vec<(Token, usize)>, DataError> {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((at, ch)) = chars.next() {
        let token = match ch {
            ' ' | '\t' => continue,
            'a' => Token::Var(Var::A),
            'b' => Token::Var(Var::B),
            'c' => Token::Var(Var::C),
            '+' => Token::Plus,
            '-' | '\u{2212}' => Token::Minus, // ASCII and Unicode minus
            '*' | '\u{00B7}' => Token::Star,  // ASCII star and middle dot
            '^' => match chars.next() {
                Some((_, '2')) => Token::Caret2,
                _ => return Err(DataError::parse(text, "'^' must be followed by '2'", at)),
            },
            other => {
                return Err(DataError::parse(text, format!("unexpected character {other:?}"), at))
            }
        };
        tokens.push((token, at));
    }
    Ok(tokens)
}

struct Parser<'t> {
    text: &'t str,
    tokens: Vec<(Token, usize)>,
    pos: usize,
}

impl<'t> Parser<'t> {
    fn peek(&self) -> Option<Token> {
        self.tokens.get(self.pos).map(|&(t, _)| t)
    }

    fn at(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.text.len(), |&(_, at)| at)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.peek();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Expr, DataError> {
        let mut left = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.bump();
                    left = Expr::Add(Box::new(left), Box::new(self.term()?));
                }
                Some(Token::Minus) => {
                    self.bump();
                    left = Expr::Sub(Box::new(left), Box::new(self.term()?));
                }
                _ => return Ok(left),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, DataError> {
        let mut left = self.factor()?;
        while self.peek() == Some(Token::Star) {
            self.bump();
            left = Expr::Mul(Box::new(left), Box::new(self.factor()?));
        }
        Ok(left)
    }

    fn factor(&mut self) -> Result<Expr, DataError> {
        let at = self.at();
        match self.bump() {
            Some(Token::Var(v)) => {
                if self.peek() == Some(Token::Caret2) {
                    self.bump();
                    Ok(Expr::Square(v))
                } else {
                    Ok(Expr::Var(v))
                }
            }
            Some(t) => Err(DataError::parse(self.text, format!("expected a variable, got {t:?}"), at)),
            None => Err(DataError::parse(self.text, "expected a variable, got end of input", at)),
        }
    }
}

fn parse_expr(text: &str) -> Result<Expr, DataError> {
    let tokens = tokenize(text)?;
    if tokens.is_empty() {
        return Err(DataError::parse(text, "empty expression", 0));
    }
    let mut parser = Parser { text, tokens, pos: 0 };
    let expr = parser.expr()?;
    if parser.pos != parser.tokens.len() {
        return Err(DataError::parse(text, "trailing tokens", parser.at()));
    }
    Ok(expr)
}

/// The seven labeled equation forms. Label `i` is produced by form `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquationSet {
    texts: Vec<String>,
    exprs: Vec<Expr>,
}

/// Probe triples used to witness that two forms differ as functions. Distinct
/// low-degree polynomials agree only on a measure-zero set, so a few generic
/// points suffice.
const DISTINCTNESS_PROBES: [(f64, f64, f64); 4] = [
    (1.1, 2.3, -3.7),
    (-2.9, 0.7, 1.9),
    (3.3, -1.7, 0.5),
    (0.4, -4.1, -1.3),
];

impl EquationSet {
    /// Parses exactly seven expression strings and checks pairwise
    /// distinctness.
    pub fn parse(texts: &[String]) -> Result<Self, DataError> {
        if texts.len() != N_EQUATIONS {
            return Err(DataError::WrongEquationCount(texts.len()));
        }
        let exprs = texts.iter().map(|t| parse_expr(t)).collect::<Result<Vec<_>, _>>()?;
        let set = Self { texts: texts.to_vec(), exprs };
        set.check_pairwise_distinct()?;
        Ok(set)
    }

    fn check_pairwise_distinct(&self) -> Result<(), DataError> {
        for i in 0..N_EQUATIONS {
            for j in i + 1..N_EQUATIONS {
                let differ = DISTINCTNESS_PROBES.iter().any(|&(a, b, c)| {
                    self.exprs[i].eval(a, b, c) != self.exprs[j].eval(a, b, c)
                });
                if !differ {
                    return Err(DataError::IndistinctEquations {
                        i,
                        j,
                        text_a: self.texts[i].clone(),
                        text_b: self.texts[j].clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Evaluates form `id` at `(a, b, c)`.
    pub fn evaluate(&self, id: Label, a: f64, b: f64, c: f64) -> Result<f64, DataError> {
        let expr = self
            .exprs
            .get(id as usize)
            .ok_or(DataError::EquationIdOutOfRange(id as usize))?;
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(DataError::NonFiniteInput(a, b, c));
        }
        Ok(expr.eval(a, b, c))
    }

    /// The canonical expression strings, in label order.
    pub fn texts(&self) -> &[String] {
        &self.texts
    }
}

impl Default for EquationSet {
    fn default() -> Self {
        let texts: Vec<String> = DEFAULT_EQUATIONS.iter().map(|s| s.to_string()).collect();
        Self::parse(&texts).expect("default equations are valid and distinct")
    }
}

impl fmt::Display for EquationSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.texts.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "E{i}: {t}")?;
        }
        Ok(())
    }
}

/// Convenience wrapper over [`EquationSet::evaluate`] for the default forms.
pub fn evaluate_equation(id: Label, a: f64, b: f64, c: f64) -> Result<f64, DataError> {
    EquationSet::default().evaluate(id, a, b, c)
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Generation parameters. Identical configs generate byte-identical datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_lo")]
    pub interval_lo: f64,
    #[serde(default = "default_hi")]
    pub interval_hi: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Optional override of the seven equation forms, as expression strings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equations: Option<Vec<String>>,
}

fn default_n_train() -> usize {
    70_000
}
fn default_n_test() -> usize {
    10_000
}
fn default_lo() -> f64 {
    -5.0
}
fn default_hi() -> f64 {
    5.0
}
fn default_seed() -> u64 {
    42
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_train: default_n_train(),
            n_test: default_n_test(),
            interval_lo: default_lo(),
            interval_hi: default_hi(),
            seed: default_seed(),
            equations: None,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.interval_lo.is_finite() && self.interval_hi.is_finite()) {
            return Err(DataError::NonFiniteInterval);
        }
        if self.interval_lo >= self.interval_hi {
            return Err(DataError::DegenerateInterval { lo: self.interval_lo, hi: self.interval_hi });
        }
        if self.n_train == 0 {
            return Err(DataError::EmptySplit { split: "n_train" });
        }
        if self.n_test == 0 {
            return Err(DataError::EmptySplit { split: "n_test" });
        }
        Ok(())
    }

    pub fn equation_set(&self) -> Result<EquationSet, DataError> {
        match &self.equations {
            Some(texts) => EquationSet::parse(texts),
            None => Ok(EquationSet::default()),
        }
    }
}

/// One labeled instance: the three variables, the equation result, and the
/// equation id that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub result: f64,
    pub label: Label,
}

impl Instance {
    pub fn features(&self) -> [f64; N_FEATURES] {
        [self.a, self.b, self.c, self.result]
    }
}

/// Generates the train and test splits as one seeded sequential stream.
///
/// Per instance, the draw order is label, `a`, `b`, `c`; labels are uniform
/// over the seven ids and variables uniform on `[lo, hi)`. The first
/// `n_train` instances form the training split.
pub fn generate(config: &DataConfig) -> Result<(Vec<Instance>, Vec<Instance>), DataError> {
    config.validate()?;
    let equations = config.equation_set()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let total = config.n_train + config.n_test;
    let mut instances = Vec::with_capacity(total);
    for index in 0..total {
        let label = rng.random_range(0..N_EQUATIONS as Label);
        let a = rng.random_range(config.interval_lo..config.interval_hi);
        let b = rng.random_range(config.interval_lo..config.interval_hi);
        let c = rng.random_range(config.interval_lo..config.interval_hi);
        let result = equations.evaluate(label, a, b, c)?;
        if !result.is_finite() {
            return Err(DataError::NonFiniteResult { index, label });
        }
        instances.push(Instance { a, b, c, result, label });
    }
    let test = instances.split_off(config.n_train);
    Ok((instances, test))
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

/// Per-feature mean and standard deviation, fitted on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: [f64; N_FEATURES],
    pub stds: [f64; N_FEATURES],
}

impl Standardizer {
    /// Fits population mean and standard deviation per feature.
    pub fn fit(train: &[Instance]) -> Result<Self, DataError> {
        if train.is_empty() {
            return Err(DataError::EmptyTrainingSplit);
        }
        let n = train.len() as f64;
        let mut means = [0.0; N_FEATURES];
        for inst in train {
            for (m, x) in means.iter_mut().zip(inst.features()) {
                *m += x;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut stds = [0.0; N_FEATURES];
        for inst in train {
            for (s, (x, m)) in stds.iter_mut().zip(inst.features().into_iter().zip(means)) {
                let d = x - m;
                *s += d * d;
            }
        }
        for (feature, s) in stds.iter_mut().enumerate() {
            *s = (*s / n).sqrt();
            // A constant column yields std 0 up to summation noise.
            if *s < 1e-12 * means[feature].abs().max(1.0) {
                return Err(DataError::ZeroVariance { feature });
            }
        }
        Ok(Self { means, stds })
    }

    /// Maps an instance to its z-scored 4-vector.
    pub fn apply(&self, instance: &Instance) -> [f64; N_FEATURES] {
        let mut out = instance.features();
        for (x, (m, s)) in out.iter_mut().zip(self.means.into_iter().zip(self.stds)) {
            *x = (*x - m) / s;
        }
        out
    }

    pub fn apply_all(&self, instances: &[Instance]) -> Vec<[f64; N_FEATURES]> {
        instances.iter().map(|i| self.apply(i)).collect()
    }
}

// ---------------------------------------------------------------------------
// CSV I/O
// ---------------------------------------------------------------------------

const CSV_HEADER: [&str; 5] = ["a", "b", "c", "result", "label"];

/// Writes instances as CSV with header `a,b,c,result,label`. Floats use the
/// shortest decimal form that parses back to the identical value.
pub fn write_csv<W: Write>(instances: &[Instance], dest: W) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_writer(dest);
    writer.write_record(CSV_HEADER)?;
    for inst in instances {
        writer.write_record([
            format_float(inst.a),
            format_float(inst.b),
            format_float(inst.c),
            format_float(inst.result),
            inst.label.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

fn format_float(x: f64) -> String {
    format!("{x}")
}

/// Reads instances back, validating header, numeric fields, and label range.
pub fn read_csv<R: Read>(source: R) -> Result<Vec<Instance>, DataError> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(source);
    let mut records = reader.records();
    let header = match records.next() {
        Some(record) => record?,
        None => {
            return Err(DataError::BadCsvHeader {
                expected: CSV_HEADER.join(","),
                got: String::new(),
            })
        }
    };
    if header.iter().ne(CSV_HEADER) {
        return Err(DataError::BadCsvHeader {
            expected: CSV_HEADER.join(","),
            got: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut instances = Vec::new();
    for (idx, record) in records.enumerate() {
        let record = record?;
        let row = idx + 2; // 1-based, counting the header line
        if record.len() != 5 {
            return Err(DataError::BadFieldCount { row, got: record.len() });
        }
        let num = |field: &'static str, pos: usize| -> Result<f64, DataError> {
            let raw = &record[pos];
            raw.parse::<f64>().map_err(|_| DataError::NonNumericField {
                row,
                field,
                value: raw.to_string(),
            })
        };
        let label_raw = &record[4];
        let label: u64 = label_raw.parse().map_err(|_| DataError::NonNumericField {
            row,
            field: "label",
            value: label_raw.to_string(),
        })?;
        if label >= N_EQUATIONS as u64 {
            return Err(DataError::CsvLabelOutOfRange { row, label });
        }
        instances.push(Instance {
            a: num("a", 0)?,
            b: num("b", 1)?,
            c: num("c", 2)?,
            result: num("result", 3)?,
            label: label as Label,
        });
    }
    Ok(instances)
}

pub fn write_csv_file<P: AsRef<Path>>(instances: &[Instance], path: P) -> Result<(), DataError> {
    write_csv(instances, io::BufWriter::new(File::create(path)?))
}

pub fn read_csv_file<P: AsRef<Path>>(path: P) -> Result<Vec<Instance>, DataError> {
    read_csv(io::BufReader::new(File::open(path)?))
}
