//! Fuzzy opinion-strength inference.
//!
//! Maps an [`OpinionUnit`] to an orientation plus a crisp strength on the
//! `[0,10]` universe and one of five granularity levels. Inference is
//! Mamdani-style: the adverb and adjective degrees are fuzzified against a
//! three-level input partition, each fired rule clips its output set at the
//! min of its antecedent memberships, the clipped sets are aggregated
//! pointwise by max, and the aggregate collapses to a crisp value through the
//! centroid
//!
//! ```text
//!   Y* = Σ y·μ(y) / Σ μ(y)
//! ```
//!
//! evaluated as a midpoint sum over the universe.

use std::fmt;
use std::io::BufRead;
use std::path::Path;

use thiserror::Error;

use crate::text::{OpinionUnit, Polarity, DEGREE_MAX, DEGREE_MIN};

/// Integration step for the production centroid.
pub const DEFAULT_DEFUZZ_STEP: f64 = 0.01;

#[derive(Debug, Error)]
pub enum FuzzyError {
    #[error("degree {0} outside [{DEGREE_MIN},{DEGREE_MAX}]")]
    DegreeOutOfRange(f64),
    #[error("triangular membership function requires a <= b <= c, got ({0}, {1}, {2})")]
    InvalidTriangle(f64, f64, f64),
    #[error("aggregated membership is identically zero (no opinion)")]
    NoOpinion,
    #[error("fuzzy config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("invalid fuzzy configuration: {0}")]
    Validation(String),
    #[error("failed to read fuzzy config: {0}")]
    Io(#[from] std::io::Error),
}

/// Triangular membership function on the `[0,10]` universe.
///
/// A degenerate side (`a == b` or `b == c`) counts as fully-on at that side,
/// so shoulder sets like `(0,0,5)` peak at their flat end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangularMf {
    a: f64,
    b: f64,
    c: f64,
}

impl TriangularMf {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, FuzzyError> {
        if !(a <= b && b <= c) || !a.is_finite() || !b.is_finite() || !c.is_finite() {
            return Err(FuzzyError::InvalidTriangle(a, b, c));
        }
        Ok(TriangularMf { a, b, c })
    }

    pub fn params(&self) -> (f64, f64, f64) {
        (self.a, self.b, self.c)
    }

    /// Peak location.
    pub fn peak(&self) -> f64 {
        self.b
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x < self.a || x > self.c {
            return 0.0;
        }
        let left = if self.b > self.a { (x - self.a) / (self.b - self.a) } else { 1.0 };
        let right = if self.c > self.b { (self.c - x) / (self.c - self.b) } else { 1.0 };
        left.min(right).clamp(0.0, 1.0)
    }
}

/// The three input levels an opinion-word degree fuzzifies into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputLevel {
    Low,
    Moderate,
    High,
}

pub const INPUT_LEVELS: [InputLevel; 3] = [InputLevel::Low, InputLevel::Moderate, InputLevel::High];

/// Three-set partition of the input universe.
#[derive(Debug, Clone, PartialEq)]
pub struct InputPartition {
    pub low: TriangularMf,
    pub moderate: TriangularMf,
    pub high: TriangularMf,
}

impl Default for InputPartition {
    fn default() -> Self {
        // 50%-overlap partition: at every interior point one set is falling
        // while the next is rising, which keeps the inferred strength
        // monotone in either input degree under min/max/centroid inference.
        InputPartition {
            low: TriangularMf::new(0.0, 0.0, 5.0).unwrap(),
            moderate: TriangularMf::new(0.0, 5.0, 10.0).unwrap(),
            high: TriangularMf::new(5.0, 10.0, 10.0).unwrap(),
        }
    }
}

/// The five output strength levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Granularity {
    VeryWeak,
    Weak,
    Moderate,
    Strong,
    VeryStrong,
}

pub const GRANULARITIES: [Granularity; 5] = [
    Granularity::VeryWeak,
    Granularity::Weak,
    Granularity::Moderate,
    Granularity::Strong,
    Granularity::VeryStrong,
];

impl Granularity {
    pub fn ordinal(&self) -> u8 {
        match self {
            Granularity::VeryWeak => 0,
            Granularity::Weak => 1,
            Granularity::Moderate => 2,
            Granularity::Strong => 3,
            Granularity::VeryStrong => 4,
        }
    }

    /// Absolute level distance, used by the tier strength match.
    pub fn distance(&self, other: Granularity) -> u8 {
        self.ordinal().abs_diff(other.ordinal())
    }

    pub fn parse(s: &str) -> Option<Granularity> {
        Some(match s {
            "very_weak" => Granularity::VeryWeak,
            "weak" => Granularity::Weak,
            "moderate" => Granularity::Moderate,
            "strong" => Granularity::Strong,
            "very_strong" => Granularity::VeryStrong,
            _ => return None,
        })
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::VeryWeak => "very_weak",
            Granularity::Weak => "weak",
            Granularity::Moderate => "moderate",
            Granularity::Strong => "strong",
            Granularity::VeryStrong => "very_strong",
        })
    }
}

/// Five-set partition of the output universe, peaks strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPartition {
    pub very_weak: TriangularMf,
    pub weak: TriangularMf,
    pub moderate: TriangularMf,
    pub strong: TriangularMf,
    pub very_strong: TriangularMf,
}

impl OutputPartition {
    pub fn mf(&self, level: Granularity) -> &TriangularMf {
        match level {
            Granularity::VeryWeak => &self.very_weak,
            Granularity::Weak => &self.weak,
            Granularity::Moderate => &self.moderate,
            Granularity::Strong => &self.strong,
            Granularity::VeryStrong => &self.very_strong,
        }
    }
}

impl Default for OutputPartition {
    fn default() -> Self {
        OutputPartition {
            very_weak: TriangularMf::new(0.0, 0.0, 2.5).unwrap(),
            weak: TriangularMf::new(0.0, 2.5, 5.0).unwrap(),
            moderate: TriangularMf::new(2.5, 5.0, 7.5).unwrap(),
            strong: TriangularMf::new(5.0, 7.5, 10.0).unwrap(),
            very_strong: TriangularMf::new(7.5, 10.0, 10.0).unwrap(),
        }
    }
}

/// Rule tables: a 3x3 map for adverb+adjective units and a 3-entry map for
/// bare adjectives. Both must be monotone (raising an input level never
/// lowers the output level).
#[derive(Debug, Clone, PartialEq)]
pub struct RuleBase {
    /// Indexed `[adverb_level][adjective_level]`.
    pub with_modifier: [[Granularity; 3]; 3],
    /// Indexed by adjective level.
    pub without_modifier: [Granularity; 3],
}

impl Default for RuleBase {
    fn default() -> Self {
        use Granularity::*;
        RuleBase {
            with_modifier: [
                [VeryWeak, Weak, Moderate], // adverb low
                [Weak, Moderate, Strong],   // adverb moderate
                [Moderate, Strong, VeryStrong], // adverb high
            ],
            without_modifier: [Weak, Moderate, Strong],
        }
    }
}

impl RuleBase {
    fn check_monotone(&self) -> Result<(), FuzzyError> {
        for i in 0..3 {
            for j in 0..3 {
                if i + 1 < 3 && self.with_modifier[i + 1][j] < self.with_modifier[i][j] {
                    return Err(FuzzyError::Validation(format!(
                        "rule table not monotone in adverb level at ({i},{j})"
                    )));
                }
                if j + 1 < 3 && self.with_modifier[i][j + 1] < self.with_modifier[i][j] {
                    return Err(FuzzyError::Validation(format!(
                        "rule table not monotone in adjective level at ({i},{j})"
                    )));
                }
            }
        }
        for j in 0..2 {
            if self.without_modifier[j + 1] < self.without_modifier[j] {
                return Err(FuzzyError::Validation(format!(
                    "adjective-only rules not monotone at {j}"
                )));
            }
        }
        Ok(())
    }
}

/// Maps a crisp strength to its granularity label. The four bounds split
/// `[0,10]` into five left-closed intervals; the final interval is closed.
#[derive(Debug, Clone, PartialEq)]
pub struct GranularityScale {
    pub bounds: [f64; 4],
}

impl Default for GranularityScale {
    fn default() -> Self {
        GranularityScale { bounds: [2.0, 4.0, 6.0, 8.0] }
    }
}

impl GranularityScale {
    pub fn label(&self, strength: f64) -> Granularity {
        let [b1, b2, b3, b4] = self.bounds;
        if strength < b1 {
            Granularity::VeryWeak
        } else if strength < b2 {
            Granularity::Weak
        } else if strength < b3 {
            Granularity::Moderate
        } else if strength < b4 {
            Granularity::Strong
        } else {
            Granularity::VeryStrong
        }
    }
}

/// Full inference configuration. [`FuzzyConfig::default`] holds the built-in
/// parameters; [`FuzzyConfig::load`] overrides them from a key=value file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FuzzyConfig {
    pub input: InputPartition,
    pub output: OutputPartition,
    pub rules: RuleBase,
    pub scale: GranularityScale,
}

/// Orientation of an assessment: lexicon polarity, negation-flipped, or
/// neutral when no opinion could be inferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    Positive,
    Negative,
    Neutral,
}

impl From<Polarity> for Orientation {
    fn from(p: Polarity) -> Self {
        match p {
            Polarity::Positive => Orientation::Positive,
            Polarity::Negative => Orientation::Negative,
        }
    }
}

impl Orientation {
    pub fn flipped(self) -> Orientation {
        match self {
            Orientation::Positive => Orientation::Negative,
            Orientation::Negative => Orientation::Positive,
            Orientation::Neutral => Orientation::Neutral,
        }
    }

    pub fn parse(s: &str) -> Option<Orientation> {
        Some(match s {
            "positive" => Orientation::Positive,
            "negative" => Orientation::Negative,
            "neutral" => Orientation::Neutral,
            _ => return None,
        })
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Orientation::Positive => "positive",
            Orientation::Negative => "negative",
            Orientation::Neutral => "neutral",
        })
    }
}

/// Final output of the inference pipeline for one opinion unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SentimentAssessment {
    pub orientation: Orientation,
    pub strength_crisp: f64,
    pub granularity: Granularity,
}

/// Input memberships of a degree against the three-level partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Memberships {
    pub low: f64,
    pub moderate: f64,
    pub high: f64,
}

impl Memberships {
    fn get(&self, level: InputLevel) -> f64 {
        match level {
            InputLevel::Low => self.low,
            InputLevel::Moderate => self.moderate,
            InputLevel::High => self.high,
        }
    }
}

/// Fuzzify a crisp degree against an input partition.
pub fn fuzzify(degree: f64, partition: &InputPartition) -> Result<Memberships, FuzzyError> {
    if !(DEGREE_MIN..=DEGREE_MAX).contains(&degree) {
        return Err(FuzzyError::DegreeOutOfRange(degree));
    }
    Ok(Memberships {
        low: partition.low.eval(degree),
        moderate: partition.moderate.eval(degree),
        high: partition.high.eval(degree),
    })
}

/// Max-of-clipped-sets aggregate produced by [`infer`].
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedOutput {
    /// `(firing_strength, output_set)` for every rule fired above zero.
    clipped: Vec<(f64, TriangularMf)>,
}

impl AggregatedOutput {
    pub fn new(clipped: Vec<(f64, TriangularMf)>) -> Self {
        AggregatedOutput { clipped }
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.clipped
            .iter()
            .map(|(strength, mf)| strength.min(mf.eval(y)))
            .fold(0.0, f64::max)
    }

    pub fn is_empty(&self) -> bool {
        self.clipped.is_empty()
    }

    /// Support interval over the fired sets, if any rule fired.
    pub fn support(&self) -> Option<(f64, f64)> {
        self.clipped
            .iter()
            .map(|(_, mf)| (mf.params().0, mf.params().2))
            .reduce(|(lo, hi), (a, c)| (lo.min(a), hi.max(c)))
    }

    pub fn fired(&self) -> &[(f64, TriangularMf)] {
        &self.clipped
    }
}

/// Run Mamdani rule firing for one opinion unit.
///
/// With a modifier, all nine adverb x adjective rules are evaluated with
/// firing strength `min(mu_adv, mu_adj)`; without one, the three
/// adjective-only rules fire at the adjective memberships. Rules fired at
/// zero are dropped.
pub fn infer(unit: &OpinionUnit, config: &FuzzyConfig) -> Result<AggregatedOutput, FuzzyError> {
    let adj = fuzzify(unit.adjective.degree, &config.input)?;
    let mut clipped = Vec::new();
    match &unit.modifier {
        Some(modifier) => {
            let adv = fuzzify(modifier.degree, &config.input)?;
            for (i, adv_level) in INPUT_LEVELS.iter().enumerate() {
                for (j, adj_level) in INPUT_LEVELS.iter().enumerate() {
                    let strength = adv.get(*adv_level).min(adj.get(*adj_level));
                    if strength > 0.0 {
                        let out = config.rules.with_modifier[i][j];
                        clipped.push((strength, *config.output.mf(out)));
                    }
                }
            }
        }
        None => {
            for (j, adj_level) in INPUT_LEVELS.iter().enumerate() {
                let strength = adj.get(*adj_level);
                if strength > 0.0 {
                    let out = config.rules.without_modifier[j];
                    clipped.push((strength, *config.output.mf(out)));
                }
            }
        }
    }
    Ok(AggregatedOutput { clipped })
}

/// Centroid defuzzification by midpoint sum over `[0,10]`.
///
/// Errors with [`FuzzyError::NoOpinion`] when the membership is identically
/// zero at every sample point.
pub fn defuzzify(mu: impl Fn(f64) -> f64, step: f64) -> Result<f64, FuzzyError> {
    assert!(step > 0.0 && step <= DEGREE_MAX, "bad integration step {step}");
    let n = (DEGREE_MAX / step).round() as usize;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let x = (i as f64 + 0.5) * step;
        let m = mu(x);
        num += m * x;
        den += m;
    }
    if den == 0.0 {
        return Err(FuzzyError::NoOpinion);
    }
    Ok(num / den)
}

/// Full assessment of one opinion unit: orientation from lexicon polarity
/// (flipped under negation), strength from inference plus centroid, label
/// from the granularity scale. A zero aggregate maps to a neutral assessment
/// of strength 0.
pub fn assess(unit: &OpinionUnit, config: &FuzzyConfig) -> Result<SentimentAssessment, FuzzyError> {
    let orientation = {
        let base: Orientation = unit.adjective.polarity.into();
        if unit.negated {
            base.flipped()
        } else {
            base
        }
    };
    let aggregate = infer(unit, config)?;
    match defuzzify(|y| aggregate.eval(y), DEFAULT_DEFUZZ_STEP) {
        Ok(strength) => Ok(SentimentAssessment {
            orientation,
            strength_crisp: strength,
            granularity: config.scale.label(strength),
        }),
        Err(FuzzyError::NoOpinion) => Ok(SentimentAssessment {
            orientation: Orientation::Neutral,
            strength_crisp: 0.0,
            granularity: config.scale.label(0.0),
        }),
        Err(e) => Err(e),
    }
}

fn parse_triple(value: &str, line: usize) -> Result<TriangularMf, FuzzyError> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(FuzzyError::Config {
            line,
            msg: format!("expected three comma-separated numbers, got {value:?}"),
        });
    }
    let mut nums = [0.0; 3];
    for (i, p) in parts.iter().enumerate() {
        nums[i] = p.parse().map_err(|_| FuzzyError::Config {
            line,
            msg: format!("bad number {p:?}"),
        })?;
    }
    TriangularMf::new(nums[0], nums[1], nums[2])
}

fn parse_level(value: &str, line: usize) -> Result<InputLevel, FuzzyError> {
    match value {
        "low" => Ok(InputLevel::Low),
        "moderate" => Ok(InputLevel::Moderate),
        "high" => Ok(InputLevel::High),
        _ => Err(FuzzyError::Config { line, msg: format!("bad input level {value:?}") }),
    }
}

fn level_index(level: InputLevel) -> usize {
    match level {
        InputLevel::Low => 0,
        InputLevel::Moderate => 1,
        InputLevel::High => 2,
    }
}

impl FuzzyConfig {
    /// Load overrides from a plain-text key=value file on top of the
    /// defaults, then validate. `#` starts a comment.
    ///
    /// Recognized keys: `input.{low,moderate,high}`,
    /// `output.{very_weak,weak,moderate,strong,very_strong}` (each a `a,b,c`
    /// triple), `rule.<adverb>.<adjective>` and `rule.only.<adjective>`
    /// (granularity names), and `granularity.bounds` (four numbers).
    pub fn load(path: &Path) -> Result<Self, FuzzyError> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }

    pub fn read(reader: impl BufRead) -> Result<Self, FuzzyError> {
        let mut config = FuzzyConfig::default();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(FuzzyError::Config {
                    line: lineno,
                    msg: "expected key = value".to_string(),
                });
            };
            let key = key.trim();
            let value = value.trim();
            match key {
                "input.low" => config.input.low = parse_triple(value, lineno)?,
                "input.moderate" => config.input.moderate = parse_triple(value, lineno)?,
                "input.high" => config.input.high = parse_triple(value, lineno)?,
                "output.very_weak" => config.output.very_weak = parse_triple(value, lineno)?,
                "output.weak" => config.output.weak = parse_triple(value, lineno)?,
                "output.moderate" => config.output.moderate = parse_triple(value, lineno)?,
                "output.strong" => config.output.strong = parse_triple(value, lineno)?,
                "output.very_strong" => config.output.very_strong = parse_triple(value, lineno)?,
                "granularity.bounds" => {
                    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                    if parts.len() != 4 {
                        return Err(FuzzyError::Config {
                            line: lineno,
                            msg: format!("expected four bounds, got {value:?}"),
                        });
                    }
                    let mut bounds = [0.0; 4];
                    for (i, p) in parts.iter().enumerate() {
                        bounds[i] = p.parse().map_err(|_| FuzzyError::Config {
                            line: lineno,
                            msg: format!("bad number {p:?}"),
                        })?;
                    }
                    config.scale.bounds = bounds;
                }
                _ if key.starts_with("rule.only.") => {
                    let adjective = parse_level(&key["rule.only.".len()..], lineno)?;
                    let out = Granularity::parse(value).ok_or_else(|| FuzzyError::Config {
                        line: lineno,
                        msg: format!("bad granularity {value:?}"),
                    })?;
                    config.rules.without_modifier[level_index(adjective)] = out;
                }
                _ if key.starts_with("rule.") => {
                    let rest = &key["rule.".len()..];
                    let Some((adv, adj)) = rest.split_once('.') else {
                        return Err(FuzzyError::Config {
                            line: lineno,
                            msg: format!("bad rule key {key:?}"),
                        });
                    };
                    let adv = parse_level(adv, lineno)?;
                    let adj = parse_level(adj, lineno)?;
                    let out = Granularity::parse(value).ok_or_else(|| FuzzyError::Config {
                        line: lineno,
                        msg: format!("bad granularity {value:?}"),
                    })?;
                    config.rules.with_modifier[level_index(adv)][level_index(adj)] = out;
                }
                _ => {
                    return Err(FuzzyError::Config {
                        line: lineno,
                        msg: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    /// Check coverage of both universes, strictly increasing output peaks,
    /// rule monotonicity and ordered granularity bounds.
    pub fn validate(&self) -> Result<(), FuzzyError> {
        let grid = 2001;
        for i in 0..=grid {
            let x = DEGREE_MAX * i as f64 / grid as f64;
            let m = Memberships {
                low: self.input.low.eval(x),
                moderate: self.input.moderate.eval(x),
                high: self.input.high.eval(x),
            };
            if m.low <= 0.0 && m.moderate <= 0.0 && m.high <= 0.0 {
                return Err(FuzzyError::Validation(format!(
                    "input partition leaves x = {x} uncovered"
                )));
            }
            let out_max = GRANULARITIES
                .iter()
                .map(|g| self.output.mf(*g).eval(x))
                .fold(0.0, f64::max);
            if out_max <= 0.0 {
                return Err(FuzzyError::Validation(format!(
                    "output partition leaves y = {x} uncovered"
                )));
            }
        }
        for pair in GRANULARITIES.windows(2) {
            if self.output.mf(pair[0]).peak() >= self.output.mf(pair[1]).peak() {
                return Err(FuzzyError::Validation(
                    "output peaks must be strictly increasing".to_string(),
                ));
            }
        }
        self.rules.check_monotone()?;
        let b = &self.scale.bounds;
        if !(b[0] < b[1] && b[1] < b[2] && b[2] < b[3]) || b[0] <= DEGREE_MIN || b[3] >= DEGREE_MAX
        {
            return Err(FuzzyError::Validation(format!(
                "granularity bounds must be increasing inside (0,10), got {b:?}"
            )));
        }
        Ok(())
    }

    /// Deterministic serialization of every parameter, used for the index
    /// config digest and as a template config file.
    pub fn write(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        let tri = |mf: &TriangularMf| {
            let (a, b, c) = mf.params();
            format!("{a}, {b}, {c}")
        };
        writeln!(w, "input.low = {}", tri(&self.input.low))?;
        writeln!(w, "input.moderate = {}", tri(&self.input.moderate))?;
        writeln!(w, "input.high = {}", tri(&self.input.high))?;
        for g in GRANULARITIES {
            writeln!(w, "output.{g} = {}", tri(self.output.mf(g)))?;
        }
        let names = ["low", "moderate", "high"];
        for (i, adv) in names.iter().enumerate() {
            for (j, adj) in names.iter().enumerate() {
                writeln!(w, "rule.{adv}.{adj} = {}", self.rules.with_modifier[i][j])?;
            }
        }
        for (j, adj) in names.iter().enumerate() {
            writeln!(w, "rule.only.{adj} = {}", self.rules.without_modifier[j])?;
        }
        let b = &self.scale.bounds;
        writeln!(w, "granularity.bounds = {}, {}, {}, {}", b[0], b[1], b[2], b[3])?;
        Ok(())
    }
}
