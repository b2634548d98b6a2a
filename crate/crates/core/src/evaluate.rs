//! Named metrics over a sample set, against an optional reference, as used by
//! the `train` report and the `evaluate` command.

use serde_json::{json, Map, Value};

use crate::config::TargetConfig;
use crate::error::{Error, Result};
use crate::io::States;
use crate::metrics::{
    abs_magnetization, empirical_distribution, logz_estimate, magnetization, mmd, mode_histogram, sinkhorn,
    total_variation, two_point_corr, w2_1d,
};
use crate::proximal::normalize_and_ess;
use crate::targets::{cut_size, maxcut_brute, DiscreteKind, ExactDistribution};

pub const METRIC_NAMES: &[&str] = &[
    "mean",
    "variance",
    "mmd",
    "sinkhorn",
    "w2_energy",
    "modes",
    "ess",
    "logz",
    "tv",
    "magnetization",
    "abs_magnetization",
    "two_point",
    "max_cut",
];

/// Entropic regularization used by the `sinkhorn` metric.
pub const SINKHORN_EPS: f64 = 1e-3;

pub enum Reference {
    None,
    /// Samples with optional normalized weights.
    Samples(States, Option<Vec<f64>>),
    Exact(ExactDistribution),
}

pub struct EvalInput<'a> {
    pub samples: &'a States,
    pub log_w: Option<&'a [f64]>,
    pub target: Option<&'a TargetConfig>,
    pub reference: &'a Reference,
    pub mode_radius: Option<f64>,
}

/// Rejects unknown names, listing the valid ones.
pub fn check_names(names: &[String]) -> Result<()> {
    for n in names {
        if !METRIC_NAMES.contains(&n.as_str()) {
            return Err(Error::Config(format!(
                "unknown metric `{n}`; valid metrics: {}",
                METRIC_NAMES.join(", ")
            )));
        }
    }
    Ok(())
}

fn need<T>(v: Option<T>, metric: &str, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("metric `{metric}` needs {what}")))
}

fn continuous<'a>(s: &'a States, metric: &str) -> Result<&'a [Vec<f64>]> {
    match s {
        States::Continuous(v) => Ok(v),
        States::Discrete(_) => Err(Error::Config(format!("metric `{metric}` needs continuous samples"))),
    }
}

fn discrete<'a>(s: &'a States, metric: &str) -> Result<&'a [Vec<u8>]> {
    match s {
        States::Discrete(v) => Ok(v),
        States::Continuous(_) => Err(Error::Config(format!("metric `{metric}` needs discrete samples"))),
    }
}

fn as_f64(s: &States) -> Vec<Vec<f64>> {
    match s {
        States::Continuous(v) => v.clone(),
        States::Discrete(v) => v.iter().map(|x| x.iter().map(|&c| c as f64).collect()).collect(),
    }
}

fn moments(s: &States) -> Result<(Vec<f64>, Vec<f64>)> {
    let xs = as_f64(s);
    let n = xs.len();
    if n < 2 {
        return Err(Error::Domain("moments need at least two samples".into()));
    }
    let d = xs[0].len();
    let mut mean = vec![0.0; d];
    xs.iter()
        .for_each(|x| mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n as f64));
    let mut var = vec![0.0; d];
    xs.iter().for_each(|x| {
        var.iter_mut()
            .zip(x)
            .zip(&mean)
            .for_each(|((s, v), m)| *s += (v - m).powi(2) / (n - 1) as f64)
    });
    Ok((mean, var))
}

/// An observable of discrete states compared with the reference when one exists.
fn observable(input: &EvalInput, metric: &str, f: &dyn Fn(&[Vec<u8>], Option<&[f64]>) -> Result<f64>) -> Result<Value> {
    let xs = discrete(input.samples, metric)?;
    let value = f(xs, None)?;
    let reference = match input.reference {
        Reference::Exact(e) => {
            let states: Vec<Vec<u8>> = (0..e.len()).map(|k| e.state(k).to_vec()).collect();
            Some(f(&states, Some(&e.probs))?)
        }
        Reference::Samples(States::Discrete(r), w) => Some(f(r, w.as_deref())?),
        _ => None,
    };
    Ok(match reference {
        Some(r) => json!({ "value": value, "reference": r, "error": (value - r).abs() }),
        None => json!({ "value": value }),
    })
}

fn alphabet(input: &EvalInput) -> usize {
    match input.target {
        Some(TargetConfig::Discrete(t)) => t.alphabet(),
        _ => match input.samples {
            States::Discrete(v) => v.iter().flatten().copied().max().map_or(2, |m| (m as usize + 1).max(2)),
            States::Continuous(_) => 2,
        },
    }
}

fn lattice_side(input: &EvalInput, metric: &str) -> Result<usize> {
    if let Some(TargetConfig::Discrete(t)) = input.target {
        if let Some(s) = t.side() {
            return Ok(s);
        }
        return Err(Error::Config(format!("metric `{metric}` needs a lattice target")));
    }
    let d = need(input.samples.dim(), metric, "samples")?;
    let side = (d as f64).sqrt().round() as usize;
    if side * side != d {
        return Err(Error::Config(format!("metric `{metric}` needs square lattice states")));
    }
    Ok(side)
}

fn one(name: &str, input: &EvalInput) -> Result<Value> {
    match name {
        "mean" => Ok(json!(moments(input.samples)?.0)),
        "variance" => Ok(json!(moments(input.samples)?.1)),
        "mmd" | "sinkhorn" => {
            let xs = continuous(input.samples, name)?;
            let ys = match input.reference {
                Reference::Samples(States::Continuous(r), _) => r,
                _ => {
                    return Err(Error::Config(format!(
                        "metric `{name}` needs continuous reference samples"
                    )))
                }
            };
            if name == "mmd" {
                Ok(json!(mmd(xs, ys)?))
            } else {
                let r = sinkhorn(xs, ys, SINKHORN_EPS)?;
                if !r.converged {
                    log::warn!("sinkhorn stopped at marginal violation {:.3e}", r.violation);
                }
                Ok(serde_json::to_value(r).expect("plain struct"))
            }
        }
        "w2_energy" => {
            let Some(TargetConfig::Continuous(t)) = input.target else {
                return Err(Error::Config("metric `w2_energy` needs a continuous target".into()));
            };
            let ys = match input.reference {
                Reference::Samples(States::Continuous(r), _) => r,
                _ => {
                    return Err(Error::Config(
                        "metric `w2_energy` needs continuous reference samples".into(),
                    ))
                }
            };
            let e = |v: &[Vec<f64>]| v.iter().map(|x| t.potential(x)).collect::<Result<Vec<f64>>>();
            let (a, b) = (e(continuous(input.samples, name)?)?, e(ys)?);
            let finite = |v: Vec<f64>| v.into_iter().filter(|x| x.is_finite()).collect::<Vec<_>>();
            Ok(json!(w2_1d(&finite(a), &finite(b))?))
        }
        "modes" => {
            let Some(TargetConfig::Continuous(t)) = input.target else {
                return Err(Error::Config("metric `modes` needs a mixture target".into()));
            };
            let centers = need(t.centers(), name, "a mixture target")?;
            let radius = match input.mode_radius {
                Some(r) => r,
                None => {
                    let mut m = f64::INFINITY;
                    for i in 0..centers.len() {
                        for j in i + 1..centers.len() {
                            let d: f64 = centers[i].iter().zip(&centers[j]).map(|(a, b)| (a - b).powi(2)).sum();
                            m = m.min(d.sqrt());
                        }
                    }
                    if m.is_finite() {
                        0.5 * m
                    } else {
                        1.0
                    }
                }
            };
            let h = mode_histogram(continuous(input.samples, name)?, centers, radius)?;
            Ok(
                json!({ "radius": radius, "frequencies": h.frequencies, "unassigned": h.unassigned, "overlapping": h.overlapping }),
            )
        }
        "ess" => Ok(json!(normalize_and_ess(need(input.log_w, name, "log weights")?)?.1)),
        "logz" => {
            let lw = need(input.log_w, name, "log weights")?;
            let offset = match input.target {
                Some(TargetConfig::Discrete(t)) => t.log_state_count(),
                Some(TargetConfig::Continuous(_)) => 0.0,
                None => return Err(Error::Config("metric `logz` needs the target".into())),
            };
            let shifted: Vec<f64> = lw.iter().map(|v| v + offset).collect();
            Ok(serde_json::to_value(logz_estimate(&shifted)?).expect("plain struct"))
        }
        "tv" => {
            let xs = discrete(input.samples, name)?;
            let n = alphabet(input);
            let (p, q) = match input.reference {
                Reference::Exact(e) => (empirical_distribution(xs, e.alphabet, None)?, e.probs.clone()),
                Reference::Samples(States::Discrete(r), w) => (
                    empirical_distribution(xs, n, None)?,
                    empirical_distribution(r, n, w.as_deref())?,
                ),
                _ => return Err(Error::Config("metric `tv` needs an exact or discrete reference".into())),
            };
            Ok(json!(total_variation(&p, &q)?))
        }
        "magnetization" => {
            let n = alphabet(input);
            observable(input, name, &|s, w| magnetization(s, n, w))
        }
        "abs_magnetization" => {
            let n = alphabet(input);
            observable(input, name, &|s, w| abs_magnetization(s, n, w))
        }
        "two_point" => {
            let side = lattice_side(input, name)?;
            let n = alphabet(input);
            let per_r: Result<Vec<Value>> = (0..side)
                .map(|r| observable(input, name, &|s, w| two_point_corr(s, side, n, r, w)))
                .collect();
            Ok(Value::Array(per_r?))
        }
        "max_cut" => {
            let Some(TargetConfig::Discrete(t)) = input.target else {
                return Err(Error::Config("metric `max_cut` needs a max-cut target".into()));
            };
            let DiscreteKind::MaxCut { vertices, edges } = &t.kind else {
                return Err(Error::Config("metric `max_cut` needs a max-cut target".into()));
            };
            let xs = discrete(input.samples, name)?;
            if xs.is_empty() {
                return Err(Error::Domain("no samples".into()));
            }
            let (opt, _) = maxcut_brute(*vertices, edges)?;
            let cuts: Vec<usize> = xs.iter().map(|x| cut_size(edges, x)).collect();
            let best = *cuts.iter().max().expect("non-empty");
            let mean = cuts.iter().sum::<usize>() as f64 / cuts.len() as f64;
            let hit = cuts.iter().filter(|&&c| c == opt).count() as f64 / cuts.len() as f64;
            Ok(json!({ "optimum": opt, "best": best, "mean": mean, "optimal_fraction": hit }))
        }
        _ => unreachable!("names are checked first"),
    }
}

/// Computes every named metric; all names are validated before any work.
pub fn evaluate(names: &[String], input: &EvalInput) -> Result<Map<String, Value>> {
    check_names(names)?;
    let mut out = Map::new();
    for n in names {
        out.insert(n.clone(), one(n, input)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{enumerate_exact, DiscreteTarget};

    fn ising() -> TargetConfig {
        TargetConfig::Discrete(DiscreteTarget::new(DiscreteKind::Ising { side: 2, coupling: 1.0 }, 0.5).unwrap())
    }

    #[test]
    fn unknown_metric_lists_valid_names() {
        let Err(Error::Config(msg)) = check_names(&["mmd".into(), "nope".into()]) else {
            panic!()
        };
        assert!(msg.contains("nope") && msg.contains("sinkhorn"));
    }

    #[test]
    fn exact_reference_gives_zero_errors_on_itself() {
        let t = ising();
        let TargetConfig::Discrete(d) = &t else { unreachable!() };
        let e = enumerate_exact(d).unwrap();
        // Repeat each state in proportion to its probability (rounded).
        let mut samples = Vec::new();
        for k in 0..e.len() {
            for _ in 0..(e.probs[k] * 1e5).round() as usize {
                samples.push(e.state(k).to_vec());
            }
        }
        let s = States::Discrete(samples);
        let reference = Reference::Exact(e);
        let input = EvalInput {
            samples: &s,
            log_w: None,
            target: Some(&t),
            reference: &reference,
            mode_radius: None,
        };
        let names: Vec<String> = ["tv", "magnetization", "abs_magnetization", "two_point"]
            .map(String::from)
            .to_vec();
        let m = evaluate(&names, &input).unwrap();
        assert!(m["tv"].as_f64().unwrap() < 1e-4);
        assert!(m["abs_magnetization"]["error"].as_f64().unwrap() < 1e-4);
        assert_eq!(m["two_point"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn missing_inputs_are_config_errors() {
        let s = States::Continuous(vec![vec![0.0], vec![1.0]]);
        let input = EvalInput {
            samples: &s,
            log_w: None,
            target: None,
            reference: &Reference::None,
            mode_radius: None,
        };
        for n in ["mmd", "ess", "logz", "tv", "modes", "max_cut"] {
            assert!(
                matches!(evaluate(&[n.to_string()], &input), Err(Error::Config(_))),
                "{n}"
            );
        }
        let m = evaluate(&["mean".into(), "variance".into()], &input).unwrap();
        assert_eq!(m["mean"], json!([0.5]));
        assert_eq!(m["variance"], json!([0.5]));
    }
}
