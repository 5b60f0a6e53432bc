use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use fairlens_core::metrics::{MetricKind, MetricTable};
use fairlens_core::prompts::Axis;
use fairlens_core::stats::{
    kruskal_wallis_with, levene_test, mann_whitney_u_with, normality_screen, sign_test, t_test_independent,
    wilcoxon_signed_rank_with, EpsilonSquaredFormula, LabeledResult, MannWhitneyOptions, PairedSample, TestResult,
    TieHandling, WilcoxonOptions,
};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestName {
    Wilcoxon,
    Sign,
    TTest,
    MannWhitney,
    Kruskal,
    Levene,
    Shapiro,
}

impl TestName {
    pub const ALL: [TestName; 7] = [
        TestName::Wilcoxon,
        TestName::Sign,
        TestName::TTest,
        TestName::MannWhitney,
        TestName::Kruskal,
        TestName::Levene,
        TestName::Shapiro,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TestName::Wilcoxon => "wilcoxon",
            TestName::Sign => "sign",
            TestName::TTest => "ttest",
            TestName::MannWhitney => "mann_whitney",
            TestName::Kruskal => "kruskal",
            TestName::Levene => "levene",
            TestName::Shapiro => "shapiro",
        }
    }
}

impl fmt::Display for TestName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TestName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TestName::ALL.into_iter().find(|t| t.as_str() == s).ok_or_else(|| format!("unknown test {s:?}"))
    }
}

/// What a test compares.
#[derive(Debug, Clone, PartialEq)]
pub enum Comparison {
    /// Two models over the same languages; `a` is the `x` arm.
    Pair { a: String, b: String },
    /// Language groups within one model.
    Groups { model: String, groups: Vec<Vec<String>> },
    /// One model's language vector.
    Single { model: String },
}

impl Comparison {
    pub fn label(&self) -> String {
        match self {
            Comparison::Pair { a, b } => format!("{a} vs {b}"),
            Comparison::Groups { model, groups } => {
                let g: Vec<String> = groups.iter().map(|g| g.join("+")).collect();
                format!("{model}: {}", g.join(" | "))
            }
            Comparison::Single { model } => model.clone(),
        }
    }
}

/// Parses `en,es,fr:pt,hi,xh` into language groups.
pub fn parse_groups(spec: &str) -> Result<Vec<Vec<String>>, CliError> {
    let groups: Vec<Vec<String>> = spec
        .split(':')
        .map(|g| g.split(',').map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect())
        .collect();
    if groups.iter().any(Vec::is_empty) {
        return Err(CliError::Config(format!("empty language group in {spec:?}")));
    }
    Ok(groups)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsRequest {
    pub test: TestName,
    pub metric: MetricKind,
    /// Empty means every axis the metric is defined on.
    pub axes: Vec<Axis>,
    /// Empty means every dataset in the table.
    pub datasets: Vec<String>,
    /// Restricts paired and single-model tests to these languages.
    pub languages: Option<Vec<String>>,
    pub comparison: Comparison,
    pub continuity: bool,
    /// Overrides the exact-enumeration cutoff of the rank tests.
    pub exact_max: Option<usize>,
    pub epsilon_formula: EpsilonSquaredFormula,
    pub ties: TieHandling,
}

impl StatsRequest {
    pub fn new(test: TestName, metric: MetricKind, comparison: Comparison) -> Self {
        Self {
            test,
            metric,
            axes: Vec::new(),
            datasets: Vec::new(),
            languages: None,
            comparison,
            continuity: false,
            exact_max: None,
            epsilon_formula: EpsilonSquaredFormula::default(),
            ties: TieHandling::default(),
        }
    }
}

fn resolved_axes(req: &StatsRequest) -> Result<Vec<Axis>, CliError> {
    match req.metric.harm_axis() {
        Some(a) if req.axes.iter().any(|x| *x != a) => {
            Err(CliError::Config(format!("{} is only defined on the {a} axis", req.metric)))
        }
        Some(a) => Ok(vec![a]),
        None if req.axes.is_empty() => Ok(Axis::ALL.to_vec()),
        None => Ok(req.axes.clone()),
    }
}

struct Cell<'a> {
    table: &'a MetricTable,
    dataset: &'a str,
    axis: Axis,
    kind: MetricKind,
}

impl Cell<'_> {
    fn vector(&self, model: &str, languages: Option<&[String]>) -> Result<BTreeMap<String, f64>, CliError> {
        let all = self.table.language_vector(model, self.dataset, self.axis, self.kind);
        if all.is_empty() {
            return Err(CliError::Data(format!(
                "no {} values for {model} on {}/{}",
                self.kind, self.dataset, self.axis
            )));
        }
        let Some(langs) = languages else { return Ok(all) };
        langs
            .iter()
            .map(|l| {
                all.get(l).map(|v| (l.clone(), *v)).ok_or_else(|| {
                    CliError::Data(format!(
                        "{model} has no {} value for {l} on {}/{}",
                        self.kind, self.dataset, self.axis
                    ))
                })
            })
            .collect()
    }

    fn paired(&self, a: &str, b: &str, languages: Option<&[String]>) -> Result<PairedSample, CliError> {
        let va = self.vector(a, languages)?;
        let vb = self.vector(b, languages)?;
        let ka: BTreeSet<&String> = va.keys().collect();
        let kb: BTreeSet<&String> = vb.keys().collect();
        if ka != kb {
            let only: Vec<&String> = ka.symmetric_difference(&kb).copied().collect();
            return Err(CliError::Data(format!(
                "unaligned language sets for {a} and {b} on {}/{}: {only:?} in one arm only",
                self.dataset, self.axis
            )));
        }
        let labels: Vec<String> = va.keys().cloned().collect();
        PairedSample::new(labels, va.into_values().collect(), vb.into_values().collect())
            .map_err(|e| CliError::Data(e.to_string()))
    }

    fn samples(&self, cmp: &Comparison, languages: Option<&[String]>) -> Result<Vec<Vec<f64>>, CliError> {
        match cmp {
            Comparison::Pair { a, b } => Ok(vec![
                self.vector(a, languages)?.into_values().collect(),
                self.vector(b, languages)?.into_values().collect(),
            ]),
            Comparison::Groups { model, groups } => {
                groups.iter().map(|g| Ok(self.vector(model, Some(g))?.into_values().collect())).collect()
            }
            Comparison::Single { model } => Ok(vec![self.vector(model, languages)?.into_values().collect()]),
        }
    }
}

fn unsupported(test: TestName, cmp: &Comparison) -> CliError {
    let form = match cmp {
        Comparison::Pair { .. } => "--pair",
        Comparison::Groups { .. } => "--groups",
        Comparison::Single { .. } => "a single --model",
    };
    CliError::Config(format!("{test} cannot be run with {form}"))
}

fn run_one(req: &StatsRequest, cell: &Cell<'_>) -> Result<TestResult, CliError> {
    let langs = req.languages.as_deref();
    let cmp = &req.comparison;
    let stat = |e: fairlens_core::stats::StatsError| {
        CliError::Data(format!("{} on {}/{}: {e}", req.test, cell.dataset, cell.axis))
    };
    match req.test {
        TestName::Wilcoxon | TestName::Sign => {
            let Comparison::Pair { a, b } = cmp else { return Err(unsupported(req.test, cmp)) };
            let sample = cell.paired(a, b, langs)?;
            if req.test == TestName::Sign {
                return sign_test(&sample).map_err(stat);
            }
            let mut opts = WilcoxonOptions { continuity: req.continuity, ties: req.ties, ..Default::default() };
            if let Some(n) = req.exact_max {
                opts.exact_max_n = n;
            }
            wilcoxon_signed_rank_with(&sample, &opts).map_err(stat)
        }
        TestName::TTest | TestName::MannWhitney => {
            if matches!(cmp, Comparison::Single { .. }) {
                return Err(unsupported(req.test, cmp));
            }
            let s = cell.samples(cmp, langs)?;
            if s.len() != 2 {
                return Err(CliError::Config(format!("{} needs exactly two groups, got {}", req.test, s.len())));
            }
            if req.test == TestName::TTest {
                return t_test_independent(&s[0], &s[1]).map_err(stat);
            }
            let mut opts = MannWhitneyOptions { continuity: req.continuity, ..Default::default() };
            if let Some(n) = req.exact_max {
                opts.exact_max_total = n;
            }
            mann_whitney_u_with(&s[0], &s[1], &opts).map_err(stat)
        }
        TestName::Kruskal | TestName::Levene => {
            if matches!(cmp, Comparison::Single { .. }) {
                return Err(unsupported(req.test, cmp));
            }
            let s = cell.samples(cmp, langs)?;
            if req.test == TestName::Kruskal {
                kruskal_wallis_with(&s, req.epsilon_formula).map_err(stat)
            } else {
                levene_test(&s).map_err(stat)
            }
        }
        TestName::Shapiro => {
            let Comparison::Single { .. } = cmp else { return Err(unsupported(req.test, cmp)) };
            normality_screen(&cell.samples(cmp, langs)?[0]).map_err(stat)
        }
    }
}

/// One result per (dataset, axis), datasets sorted, axes in canonical order.
pub fn run_stats(table: &MetricTable, req: &StatsRequest) -> Result<Vec<LabeledResult>, CliError> {
    let axes = resolved_axes(req)?;
    let datasets: Vec<String> = if req.datasets.is_empty() {
        table.iter().map(|(k, _)| k.dataset.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        req.datasets.clone()
    };
    if datasets.is_empty() {
        return Err(CliError::Data("metric table is empty".into()));
    }
    let mut out = Vec::new();
    for dataset in &datasets {
        for &axis in Axis::ALL.iter().filter(|a| axes.contains(a)) {
            let cell = Cell { table, dataset, axis, kind: req.metric };
            out.push(LabeledResult {
                dataset: dataset.clone(),
                axis: axis.as_str().into(),
                metric: req.metric.as_str().into(),
                comparison: req.comparison.label(),
                result: run_one(req, &cell)?,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fairlens_core::metrics::MetricKey;

    fn table() -> MetricTable {
        let mut t = MetricTable::new();
        let langs = ["en", "es", "fr", "pt", "hi", "xh"];
        for (i, l) in langs.iter().enumerate() {
            for axis in Axis::ALL {
                let k = |m| MetricKey::new(m, "FF", l, axis, MetricKind::GenderSkewMax);
                t.insert_value(k("A"), 1.0 + i as f64, "x").unwrap();
                t.insert_value(k("B"), 0.5 * i as f64, "x").unwrap();
            }
        }
        t
    }

    #[test]
    fn groups_spec() {
        assert_eq!(parse_groups("en,es:pt").unwrap(), vec![vec!["en", "es"], vec!["pt"]]);
        assert!(parse_groups("en,:").is_err());
    }

    #[test]
    fn one_row_per_axis() {
        let req = StatsRequest::new(
            TestName::Wilcoxon,
            MetricKind::GenderSkewMax,
            Comparison::Pair { a: "A".into(), b: "B".into() },
        );
        let rows = run_stats(&table(), &req).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].axis, "crime");
        assert_eq!(rows[0].comparison, "A vs B");
        assert!(rows.iter().all(|r| r.result.exact));
    }

    #[test]
    fn unaligned_pair() {
        let mut t = table();
        t.insert_value(MetricKey::new("A", "FF", "tr", Axis::Crime, MetricKind::GenderSkewMax), 2.0, "x").unwrap();
        let mut req = StatsRequest::new(
            TestName::Sign,
            MetricKind::GenderSkewMax,
            Comparison::Pair { a: "A".into(), b: "B".into() },
        );
        req.axes = vec![Axis::Crime];
        let err = run_stats(&t, &req).unwrap_err();
        assert!(err.to_string().contains("unaligned"), "{err}");
        req.languages = Some(vec!["en".into(), "es".into()]);
        assert!(run_stats(&t, &req).is_ok());
    }

    #[test]
    fn harm_metric_pins_axis() {
        let mut req = StatsRequest::new(TestName::Shapiro, MetricKind::PctNa, Comparison::Single { model: "A".into() });
        assert_eq!(resolved_axes(&req).unwrap(), vec![Axis::Agency]);
        req.axes = vec![Axis::Crime];
        assert!(matches!(resolved_axes(&req), Err(CliError::Config(_))));
    }

    #[test]
    fn wrong_form_is_config_error() {
        let req =
            StatsRequest::new(TestName::Kruskal, MetricKind::GenderSkewMax, Comparison::Single { model: "A".into() });
        assert!(matches!(run_stats(&table(), &req), Err(CliError::Config(_))));
    }
}
