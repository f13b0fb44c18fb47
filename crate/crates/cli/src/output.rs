//! Weight tables in JSON and wide CSV form.

use serde::Serialize;
use serde_json::value::RawValue;
use stackavg::weights::MethodWeights;

#[derive(Debug, Serialize)]
struct WeightEntry<'a> {
    model: &'a str,
    weight: Box<RawValue>,
}

#[derive(Debug, Default, Serialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    pub khat_warnings: usize,
    pub sample_size_warnings: usize,
}

#[derive(Debug, Serialize)]
struct Block<'a> {
    method: &'static str,
    weights: Vec<WeightEntry<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    objective: Option<f64>,
    diagnostics: Diagnostics,
}

/// Weights are printed with exactly six decimals.
fn fixed6(w: f64) -> Box<RawValue> {
    RawValue::from_string(format!("{w:.6}")).expect("fixed-point decimal is valid JSON")
}

pub fn weights_json(ids: &[String], results: &[MethodWeights], khat: usize, sample_size: usize) -> String {
    let blocks: Vec<Block<'_>> = results
        .iter()
        .map(|r| Block {
            method: r.method.name(),
            weights: ids
                .iter()
                .zip(r.weights.as_slice())
                .map(|(id, &w)| WeightEntry {
                    model: id,
                    weight: fixed6(w),
                })
                .collect(),
            objective: r.objective,
            diagnostics: Diagnostics {
                iterations: r.iterations,
                converged: r.converged,
                khat_warnings: khat,
                sample_size_warnings: sample_size,
            },
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&blocks).expect("weight blocks serialize");
    s.push('\n');
    s
}

/// One row per method, one column per model.
pub fn weights_csv(ids: &[String], results: &[MethodWeights]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method".to_string()];
    header.extend(ids.iter().cloned());
    w.write_record(&header)?;
    for r in results {
        let mut row = vec![r.method.name().to_string()];
        row.extend(r.weights.as_slice().iter().map(|v| format!("{v:.6}")));
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use stackavg::weights::Method;
    use stackavg::WeightVector;

    fn sample() -> Vec<MethodWeights> {
        vec![MethodWeights {
            method: Method::PseudoBma,
            weights: WeightVector::new(vec![0.25, 0.75]).unwrap(),
            objective: None,
            iterations: None,
            converged: None,
        }]
    }

    #[test]
    fn json_uses_six_decimals() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let s = weights_json(&ids, &sample(), 0, 0);
        assert!(s.contains("\"weight\": 0.250000"));
        assert!(!s.contains("objective"));
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v[0]["method"], "pseudo-bma");
    }

    #[test]
    fn csv_is_wide() {
        let ids = vec!["a".to_string(), "b,c".to_string()];
        let s = weights_csv(&ids, &sample()).unwrap();
        assert_eq!(s, "method,a,\"b,c\"\npseudo-bma,0.250000,0.750000\n");
    }
}
