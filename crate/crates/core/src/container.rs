//! Plain-text container for MDPs and feature matrices.
//!
//! The format is TOML with a fixed layout, so instances archive alongside
//! experiment outputs and load back without a schema registry:
//!
//! ```toml
//! format = "tdlab-mdp"
//! version = 1
//! n_states = 2
//! n_actions = 1
//! gamma = 0.99            # omitted for average-reward instances
//!
//! [transitions]
//! # one key per state-action pair: p_<s>_<a> = [list of next-state probs]
//! p_0_0 = [0.5, 0.5]
//! p_1_0 = [0.5, 0.5]
//!
//! [rewards]
//! r_0 = [-0.01475]        # one key per state: rewards by action
//! r_1 = [0.03525]
//!
//! [features]              # optional
//! rows = 2
//! cols = 1
//! x_0 = [1.0]
//! x_1 = [1.06]
//! ```

use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;
use crate::linalg::Matrix;
use crate::mdp::Mdp;
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Container {
    format: String,
    version: u32,
    n_states: usize,
    n_actions: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    transitions: toml::Table,
    rewards: toml::Table,
    #[serde(skip_serializing_if = "Option::is_none")]
    features: Option<toml::Table>,
}

fn float_array(values: &[f64]) -> toml::Value {
    toml::Value::Array(values.iter().map(|&v| toml::Value::Float(v)).collect())
}

fn read_float_array(table: &toml::Table, key: &str, expected_len: usize) -> Result<Vec<f64>> {
    let value = table
        .get(key)
        .ok_or_else(|| Error::InvalidInput(format!("container missing key {key}")))?;
    let arr = value
        .as_array()
        .ok_or_else(|| Error::InvalidInput(format!("{key} is not an array")))?;
    if arr.len() != expected_len {
        return Err(Error::InvalidInput(format!(
            "{key} has length {}, expected {expected_len}",
            arr.len()
        )));
    }
    arr.iter()
        .map(|v| {
            v.as_float()
                .or_else(|| v.as_integer().map(|i| i as f64))
                .ok_or_else(|| Error::InvalidInput(format!("{key} holds a non-numeric entry")))
        })
        .collect()
}

/// Serialize an MDP (and optionally its features) to the container text.
pub fn to_text(mdp: &Mdp, features: Option<&FeatureMatrix>) -> String {
    let mut transitions = toml::Table::new();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let row: Vec<f64> = (0..mdp.n_states())
                .map(|s2| mdp.transition_prob(s, a, s2))
                .collect();
            transitions.insert(format!("p_{s}_{a}"), float_array(&row));
        }
    }
    let mut rewards = toml::Table::new();
    for s in 0..mdp.n_states() {
        let row: Vec<f64> = (0..mdp.n_actions()).map(|a| mdp.reward(s, a)).collect();
        rewards.insert(format!("r_{s}"), float_array(&row));
    }
    let features = features.map(|f| {
        let mut t = toml::Table::new();
        t.insert("rows".into(), toml::Value::Integer(f.rows() as i64));
        t.insert("cols".into(), toml::Value::Integer(f.dim() as i64));
        for i in 0..f.rows() {
            let row: Vec<f64> = (0..f.dim()).map(|j| f.matrix()[(i, j)]).collect();
            t.insert(format!("x_{i}"), float_array(&row));
        }
        t
    });
    let container = Container {
        format: "tdlab-mdp".into(),
        version: 1,
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        gamma: mdp.gamma(),
        transitions,
        rewards,
        features,
    };
    toml::to_string(&container).expect("container serialization is total")
}

/// Parse the container text back into an MDP and optional features.
pub fn from_text(text: &str) -> Result<(Mdp, Option<FeatureMatrix>)> {
    let container: Container = toml::from_str(text)
        .map_err(|e| Error::InvalidInput(format!("container parse error: {e}")))?;
    if container.format != "tdlab-mdp" {
        return Err(Error::InvalidInput(format!(
            "unknown container format {:?}",
            container.format
        )));
    }
    if container.version != 1 {
        return Err(Error::InvalidInput(format!(
            "unsupported container version {}",
            container.version
        )));
    }
    let (ns, na) = (container.n_states, container.n_actions);
    let mut p = vec![vec![Vec::new(); na]; ns];
    for s in 0..ns {
        for a in 0..na {
            p[s][a] = read_float_array(&container.transitions, &format!("p_{s}_{a}"), ns)?;
        }
    }
    let mut r = Vec::with_capacity(ns);
    for s in 0..ns {
        r.push(read_float_array(&container.rewards, &format!("r_{s}"), na)?);
    }
    let mdp = Mdp::new(p, r, container.gamma)?;
    let features = match container.features {
        None => None,
        Some(table) => {
            let rows = table
                .get("rows")
                .and_then(|v| v.as_integer())
                .ok_or_else(|| Error::InvalidInput("features.rows missing".into()))?
                as usize;
            let cols = table
                .get("cols")
                .and_then(|v| v.as_integer())
                .ok_or_else(|| Error::InvalidInput("features.cols missing".into()))?
                as usize;
            let mut m = Matrix::zeros(rows, cols);
            for i in 0..rows {
                let row = read_float_array(&table, &format!("x_{i}"), cols)?;
                for j in 0..cols {
                    m[(i, j)] = row[j];
                }
            }
            Some(FeatureMatrix::new(m)?)
        }
    };
    Ok((mdp, features))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_baird, make_kolter, BairdMode};

    #[test]
    fn kolter_round_trip() {
        let k = make_kolter(0.01, 0.5, 0.99).unwrap();
        let text = to_text(&k.mdp, Some(&k.x));
        let (mdp, features) = from_text(&text).unwrap();
        assert_eq!(mdp.n_states(), 2);
        assert_eq!(mdp.gamma(), Some(0.99));
        for s in 0..2 {
            assert!((mdp.reward(s, 0) - k.mdp.reward(s, 0)).abs() < 1e-15);
            for s2 in 0..2 {
                assert_eq!(mdp.transition_prob(s, 0, s2), 0.5);
            }
        }
        let f = features.unwrap();
        assert_eq!(f.matrix(), k.x.matrix());
    }

    #[test]
    fn baird_round_trip_without_features() {
        let b = make_baird(BairdMode::Control);
        let text = to_text(&b.mdp, None);
        let (mdp, features) = from_text(&text).unwrap();
        assert!(features.is_none());
        assert_eq!(mdp.n_states(), 7);
        assert_eq!(mdp.n_actions(), 2);
        for s in 0..7 {
            assert_eq!(mdp.transition_prob(s, 0, 6), 1.0);
        }
    }

    #[test]
    fn rejects_malformed_text() {
        assert!(from_text("not even toml [").is_err());
        assert!(from_text("format = \"something-else\"\nversion = 1\nn_states = 1\nn_actions = 1\n[transitions]\n[rewards]\n").is_err());
    }
}
