use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use super::metrics::{ece, fraction_above, micro_f1, ClassScores, ConfusionMatrix};
use super::EvalError;

const REPORT_FORMAT: &str = "trafficlens-report";
const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct OodSummary {
    pub threshold: f64,
    pub fraction_above: f64,
}

/// Classification quality of one labeled evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub micro_f1: f64,
    pub per_class: Vec<ClassScores>,
    pub confusion: ConfusionMatrix,
    pub ece: f64,
    pub ece_bins: usize,
    pub ood: Option<OodSummary>,
}

impl EvalReport {
    pub fn new(
        classes: Vec<String>,
        actual: &[usize],
        predicted: &[usize],
        confidences: &[f64],
        ece_bins: usize,
    ) -> Result<Self, EvalError> {
        let confusion = ConfusionMatrix::from_indices(classes, actual, predicted)?;
        let correct: Vec<bool> = actual.iter().zip(predicted).map(|(a, p)| a == p).collect();
        Ok(Self {
            micro_f1: micro_f1(actual, predicted)?,
            per_class: confusion.class_scores(),
            ece: ece(confidences, &correct, ece_bins)?,
            ece_bins,
            confusion,
            ood: None,
        })
    }

    pub fn with_ood(mut self, scores: &[f64], threshold: f64) -> Self {
        self.ood = Some(OodSummary {
            threshold,
            fraction_above: fraction_above(scores, threshold),
        });
        self
    }

    pub fn classes(&self) -> &[String] {
        &self.confusion.classes
    }

    /// Machine-readable `key=value` lines; floats use their shortest
    /// round-trip form so [`Self::parse`] restores the report exactly.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format={REPORT_FORMAT}");
        let _ = writeln!(s, "version={REPORT_VERSION}");
        let _ = writeln!(s, "micro_f1={}", self.micro_f1);
        let _ = writeln!(s, "ece={}", self.ece);
        let _ = writeln!(s, "ece_bins={}", self.ece_bins);
        if let Some(ood) = &self.ood {
            let _ = writeln!(s, "ood.threshold={}", ood.threshold);
            let _ = writeln!(s, "ood.fraction_above={}", ood.fraction_above);
        }
        let _ = writeln!(s, "classes={}", self.classes().len());
        for (i, (name, sc)) in self.classes().iter().zip(&self.per_class).enumerate() {
            let _ = writeln!(s, "class.{i}.name={name}");
            let _ = writeln!(s, "class.{i}.precision={}", sc.precision);
            let _ = writeln!(s, "class.{i}.recall={}", sc.recall);
            let _ = writeln!(s, "class.{i}.f1={}", sc.f1);
            let _ = writeln!(s, "class.{i}.support={}", sc.support);
            let row: Vec<String> = self.confusion.counts[i]
                .iter()
                .map(u64::to_string)
                .collect();
            let _ = writeln!(s, "confusion.{i}={}", row.join(" "));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| EvalError::BadReport {
                line: n + 1,
                reason: "expected key=value".into(),
            })?;
            map.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| {
            map.get(k)
                .map(String::as_str)
                .ok_or_else(|| EvalError::BadReport {
                    line: 0,
                    reason: format!("missing key {k}"),
                })
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T, EvalError> {
            v.parse().map_err(|_| EvalError::BadReport {
                line: 0,
                reason: format!("bad value for {k}: {v}"),
            })
        }
        if get("format")? != REPORT_FORMAT {
            return Err(EvalError::BadReport {
                line: 1,
                reason: "not a trafficlens report".into(),
            });
        }
        let version: u32 = num("version", get("version")?)?;
        if version != REPORT_VERSION {
            return Err(EvalError::BadReport {
                line: 2,
                reason: format!("unsupported report version {version}"),
            });
        }
        let k: usize = num("classes", get("classes")?)?;
        let mut classes = Vec::with_capacity(k);
        let mut per_class = Vec::with_capacity(k);
        let mut counts = Vec::with_capacity(k);
        for i in 0..k {
            classes.push(get(&format!("class.{i}.name"))?.to_string());
            let f = |field: &str| {
                let key = format!("class.{i}.{field}");
                num::<f64>(&key, get(&key)?)
            };
            per_class.push(ClassScores {
                precision: f("precision")?,
                recall: f("recall")?,
                f1: f("f1")?,
                support: num("support", get(&format!("class.{i}.support"))?)?,
            });
            let key = format!("confusion.{i}");
            let row = get(&key)?
                .split_whitespace()
                .map(|c| num::<u64>(&key, c))
                .collect::<Result<Vec<_>, _>>()?;
            if row.len() != k {
                return Err(EvalError::BadReport {
                    line: 0,
                    reason: format!("{key} has {} entries, expected {k}", row.len()),
                });
            }
            counts.push(row);
        }
        let ood = match map.get("ood.threshold") {
            Some(t) => Some(OodSummary {
                threshold: num("ood.threshold", t)?,
                fraction_above: num("ood.fraction_above", get("ood.fraction_above")?)?,
            }),
            None => None,
        };
        Ok(Self {
            micro_f1: num("micro_f1", get("micro_f1")?)?,
            per_class,
            confusion: ConfusionMatrix { classes, counts },
            ece: num("ece", get("ece")?)?,
            ece_bins: num("ece_bins", get("ece_bins")?)?,
            ood,
        })
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "windows:   {}", self.confusion.total())?;
        writeln!(f, "micro-F1:  {:.4}", self.micro_f1)?;
        writeln!(f, "ECE:       {:.4} ({} bins)", self.ece, self.ece_bins)?;
        if let Some(ood) = &self.ood {
            writeln!(
                f,
                "OOD > {}: {:.2}%",
                ood.threshold,
                100.0 * ood.fraction_above
            )?;
        }
        let width = self
            .classes()
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(5)
            .max(5);
        writeln!(f)?;
        writeln!(f, "{:<width$}  precision  recall     f1  support", "class")?;
        for (name, s) in self.classes().iter().zip(&self.per_class) {
            writeln!(
                f,
                "{name:<width$}  {:>9.4}  {:>6.4}  {:>5.4}  {:>7}",
                s.precision, s.recall, s.f1, s.support
            )?;
        }
        writeln!(f)?;
        writeln!(
            f,
            "confusion (rows actual, columns predicted, row-normalized):"
        )?;
        for (name, row) in self.classes().iter().zip(self.confusion.row_normalized()) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
            writeln!(f, "{name:<width$}  {}", cells.join("  "))?;
        }
        Ok(())
    }
}
