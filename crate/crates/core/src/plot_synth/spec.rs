use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use super::SynthError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotKind {
    Bar,
    Line,
    Dotline,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [PlotKind::Bar, PlotKind::Line, PlotKind::Dotline];

    pub fn as_str(&self) -> &'static str {
        match self {
            PlotKind::Bar => "bar",
            PlotKind::Line => "line",
            PlotKind::Dotline => "dotline",
        }
    }

    /// Plural noun for the drawn elements, as used in question text.
    pub fn element_noun(&self) -> &'static str {
        match self {
            PlotKind::Bar => "bars",
            PlotKind::Line => "lines",
            PlotKind::Dotline => "dotlines",
        }
    }
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlotKind {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bar" => Ok(PlotKind::Bar),
            "line" => Ok(PlotKind::Line),
            "dotline" => Ok(PlotKind::Dotline),
            other => Err(SynthError::InvalidArgument(format!("unknown plot kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

/// Ground truth for one plot. Rendering, region boxes and oracle answers
/// are all derived from this record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub plot_id: String,
    pub kind: PlotKind,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_categories: Vec<String>,
    pub series: Vec<Series>,
    pub legend_labels: Vec<String>,
    pub style_seed: u64,
}

impl PlotSpec {
    pub fn n_categories(&self) -> usize {
        self.x_categories.len()
    }

    pub fn n_series(&self) -> usize {
        self.series.len()
    }

    /// Checks every structural invariant of the record.
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidSpec(format!("{}: {msg}", self.plot_id)));
        if !(2..=8).contains(&self.x_categories.len()) {
            return bad(format!("{} categories, expected 2..=8", self.x_categories.len()));
        }
        if !(1..=4).contains(&self.series.len()) {
            return bad(format!("{} series, expected 1..=4", self.series.len()));
        }
        if self.legend_labels.len() != self.series.len() {
            return bad("legend/series length mismatch".into());
        }
        for (i, s) in self.series.iter().enumerate() {
            if s.values.len() != self.x_categories.len() {
                return bad(format!("series {i} has {} values", s.values.len()));
            }
            if s.values.iter().any(|v| !v.is_finite()) {
                return bad(format!("series {i} has a non-finite value"));
            }
            if self.series[..i].iter().any(|o| o.name == s.name) {
                return bad(format!("duplicate series name {:?}", s.name));
            }
            if self.legend_labels[i] != s.name {
                return bad(format!("legend label {i} does not name its series"));
            }
        }
        Ok(())
    }
}

/// Tunable value-pattern proportions for [`sample_plot_spec_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub value_min: f64,
    pub value_max: f64,
    pub p_monotone: f64,
    pub p_constant: f64,
    pub p_crossing: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            value_min: 0.0,
            value_max: 100.0,
            p_monotone: 0.2,
            p_constant: 0.1,
            p_crossing: 0.15,
        }
    }
}

const SERIES_NAMES: &[&str] = &[
    "Male",
    "Female",
    "Urban",
    "Rural",
    "Agriculture",
    "Industry",
    "Services",
    "Exports",
    "Imports",
    "Primary",
    "Secondary",
    "Tertiary",
    "Public",
    "Private",
    "Domestic",
    "Foreign",
];

const COUNTRIES: &[&str] = &[
    "Bahrain", "Chile", "Denmark", "Ghana", "Japan", "Kenya", "Mexico", "Norway", "Peru", "Uganda", "Vietnam",
    "Zambia", "Austria", "Belize", "Fiji", "Latvia",
];

const QUANTITIES: &[&str] = &[
    "Number of tourists",
    "Revenue (US$)",
    "Emissions (kt)",
    "Enrollment rate (%)",
    "Employment share (%)",
    "Trade volume",
    "Aid received (US$)",
    "Energy use (kg)",
];

const TITLE_FRAMES: &[&str] = &["{} by group", "{} over time", "Comparison of {}", "{} statistics"];

/// Samples a plot with default value proportions.
pub fn sample_plot_spec(seed: u64, kind: PlotKind) -> PlotSpec {
    sample_plot_spec_with(seed, kind, &SamplerConfig::default())
}

/// Deterministic function of `(seed, kind, config)`.
pub fn sample_plot_spec_with(seed: u64, kind: PlotKind, config: &SamplerConfig) -> PlotSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind_salt(kind));
    let n_cat = rng.random_range(2..=8usize);
    let n_series = rng.random_range(1..=4usize);

    let (x_label, x_categories) = if rng.random_bool(0.6) {
        let start = rng.random_range(1990..=2015);
        (
            "Year".to_string(),
            (0..n_cat).map(|i| (start + i).to_string()).collect(),
        )
    } else {
        let mut pool = COUNTRIES.to_vec();
        pool.shuffle(&mut rng);
        (
            "Country".to_string(),
            pool[..n_cat].iter().map(|s| s.to_string()).collect(),
        )
    };

    let mut names = SERIES_NAMES.to_vec();
    names.shuffle(&mut rng);
    let names: Vec<String> = names[..n_series].iter().map(|s| s.to_string()).collect();

    let y_label = QUANTITIES.choose(&mut rng).expect("non-empty").to_string();
    let frame = TITLE_FRAMES.choose(&mut rng).expect("non-empty");
    let title = frame.replacen("{}", &y_label, 1);

    let mut series: Vec<Series> = Vec::with_capacity(n_series);
    for name in &names {
        let values = if let (Some(first), true) = (series.first(), rng.random_bool(config.p_crossing)) {
            // mirror the first series so the two cross
            let mut v = first.values.clone();
            v.reverse();
            v.iter()
                .map(|x| round1(clamp(x + rng.random_range(-2.0..2.0), config)))
                .collect()
        } else {
            sample_values(&mut rng, n_cat, config)
        };
        series.push(Series {
            name: name.clone(),
            values,
        });
    }

    let style_seed = rng.random();
    let spec = PlotSpec {
        plot_id: format!("{}-{seed:08}", kind.as_str()),
        kind,
        title,
        x_label,
        y_label,
        x_categories,
        legend_labels: names,
        series,
        style_seed,
    };
    debug_assert!(spec.validate().is_ok());
    spec
}

fn kind_salt(kind: PlotKind) -> u64 {
    match kind {
        PlotKind::Bar => 0x9e37_79b9_7f4a_7c15,
        PlotKind::Line => 0xbf58_476d_1ce4_e5b9,
        PlotKind::Dotline => 0x94d0_49bb_1331_11eb,
    }
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

fn clamp(v: f64, config: &SamplerConfig) -> f64 {
    v.clamp(config.value_min, config.value_max)
}

fn sample_values(rng: &mut ChaCha8Rng, n: usize, config: &SamplerConfig) -> Vec<f64> {
    let (lo, hi) = (config.value_min, config.value_max);
    let r: f64 = rng.random();
    if r < config.p_monotone {
        // strictly monotone with steps of at least 1.0 so rounding keeps it strict
        let span = hi - lo;
        let step_max = (span * 0.7 / n as f64).max(1.0 + 1e-9);
        let mut v = rng.random_range(lo..lo + span * 0.3);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(round1(v));
            v += rng.random_range(1.0..=step_max);
        }
        if rng.random_bool(0.5) {
            out.reverse();
        }
        out
    } else if r < config.p_monotone + config.p_constant {
        let c = round1(rng.random_range(lo..=hi));
        vec![c; n]
    } else {
        (0..n).map(|_| round1(rng.random_range(lo..=hi))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn same_seed_same_spec() {
        assert_eq!(sample_plot_spec(0, PlotKind::Bar), sample_plot_spec(0, PlotKind::Bar));
    }

    #[test]
    fn different_seeds_differ() {
        assert_ne!(sample_plot_spec(0, PlotKind::Bar), sample_plot_spec(1, PlotKind::Bar));
    }

    #[test]
    fn validate_rejects_legend_mismatch() {
        let mut s = sample_plot_spec(3, PlotKind::Line);
        s.legend_labels.push("Extra".into());
        assert!(s.validate().is_err());
    }

    #[test]
    fn category_and_series_pools_are_disjoint() {
        for c in COUNTRIES {
            assert!(!SERIES_NAMES.contains(c));
        }
    }

    proptest! {
        #[test]
        fn sampled_specs_satisfy_invariants(seed in any::<u64>(), k in 0usize..3) {
            let spec = sample_plot_spec(seed, PlotKind::ALL[k]);
            prop_assert!(spec.validate().is_ok());
            prop_assert_eq!(spec.legend_labels.len(), spec.series.len());
            for s in &spec.series {
                prop_assert!(s.values.iter().all(|v| (0.0..=100.0).contains(v)));
            }
        }
    }
}
