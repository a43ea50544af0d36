//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use blisslab::bliss::BlissParams;
use blisslab::campaign::{AttackKind, AttackOptions, ProfilingOptions};
use blisslab::leakage::{default_profile_for, LeakPoint, ProfileSet};

/// Everything an experiment depends on. All randomness flows from the
/// four seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub params: String,
    pub seed_keygen: u64,
    pub seed_signing: u64,
    pub seed_leakage: u64,
    pub seed_training: u64,
    pub signatures: usize,
    pub attack: u8,
    pub out: PathBuf,
    /// Sampler shares on the victim; 0 or 1 signs unmasked.
    pub masking_shares: usize,
    pub trace_len: usize,
    pub noise: BTreeMap<LeakPoint, f64>,
    pub eval_traces: usize,
    pub eval_traces_yu_zero: usize,
    pub profiling: ProfilingOptions,
    pub attacks: AttackOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let profiles = ProfileSet::default();
        Self {
            params: "bliss1".into(),
            seed_keygen: 1,
            seed_signing: 2,
            seed_leakage: 3,
            seed_training: 4,
            signatures: 2000,
            attack: 2,
            out: PathBuf::from("out"),
            masking_shares: 0,
            trace_len: profiles.cdt_x.trace_len,
            noise: LeakPoint::ALL
                .iter()
                .map(|&p| (p, profiles.get(p).noise_std))
                .collect(),
            eval_traces: 100_000,
            eval_traces_yu_zero: 1_000_000,
            profiling: ProfilingOptions::default(),
            attacks: AttackOptions::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| anyhow!("{key}: cannot parse {value:?}: {e}"))
}

fn parse_widths(key: &str, value: &str) -> Result<Vec<usize>> {
    let v = value.trim();
    if v.is_empty() || v == "none" {
        return Ok(Vec::new());
    }
    v.split(',').map(|w| parse(key, w)).collect()
}

fn widths(w: &[usize]) -> String {
    if w.is_empty() {
        "none".into()
    } else {
        w.iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl ExperimentConfig {
    pub fn bliss_params(&self) -> Result<BlissParams> {
        BlissParams::by_name(&self.params)
            .ok_or_else(|| anyhow!("params: unknown parameter set {:?}", self.params))
    }

    pub fn attack_kind(&self) -> Result<AttackKind> {
        AttackKind::from_number(self.attack)
            .ok_or_else(|| anyhow!("attack: expected 1, 2 or 3, got {}", self.attack))
    }

    pub fn profiles(&self) -> Result<ProfileSet> {
        let params = self.bliss_params()?;
        let mut set = ProfileSet::default();
        for point in LeakPoint::ALL {
            let mut p = default_profile_for(point, &params.sampler, self.trace_len)
                .map_err(|e| anyhow!("trace_len: {e}"))?;
            p.noise_std = self.noise[&point];
            p.seed = self.seed_leakage;
            *set.get_mut(point) = p;
        }
        Ok(set)
    }

    /// Profiling options with the training seed applied.
    pub fn profiling_options(&self) -> ProfilingOptions {
        let mut opts = self.profiling.clone();
        opts.seed = self.seed_leakage;
        for point in LeakPoint::ALL {
            opts.plan_mut(point).hyper.seed = self.seed_training;
        }
        opts
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim().trim_matches('"');
        match key {
            "params" => self.params = value.to_string(),
            "seed.keygen" => self.seed_keygen = parse(key, value)?,
            "seed.signing" => self.seed_signing = parse(key, value)?,
            "seed.leakage" => self.seed_leakage = parse(key, value)?,
            "seed.training" => self.seed_training = parse(key, value)?,
            "signatures" => self.signatures = parse(key, value)?,
            "attack" => self.attack = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "masking.shares" => self.masking_shares = parse(key, value)?,
            "trace_len" => self.trace_len = parse(key, value)?,
            "eval.traces" => self.eval_traces = parse(key, value)?,
            "eval.yu-zero.traces" => self.eval_traces_yu_zero = parse(key, value)?,
            "profiling.signatures_per_key" => {
                self.profiling.signatures_per_key = parse(key, value)?
            }
            "attack1.retry_budget" => self.attacks.attack1.retry_budget = parse(key, value)?,
            "attack1.bound_filter" => self.attacks.attack1.bound_filter = parse(key, value)?,
            "kernel.max_subsets" => self.attacks.kernel.max_subsets = parse(key, value)?,
            "kernel.max_nullity" => self.attacks.kernel.max_nullity = parse(key, value)?,
            "kernel.search_budget" => self.attacks.kernel.search_budget = parse(key, value)?,
            "mle.max_iterations" => self.attacks.mle.max_iterations = parse(key, value)?,
            "mle.check_every" => self.attacks.mle.check_every = parse(key, value)?,
            "brute_force.coordinates" => self.attacks.brute_force_coordinates = parse(key, value)?,
            "brute_force.budget" => self.attacks.brute_force_budget = parse(key, value)?,
            _ => return self.set_point(key, value),
        }
        Ok(())
    }

    fn set_point(&mut self, key: &str, value: &str) -> Result<()> {
        let parts: Vec<&str> = key.split('.').collect();
        let point = |name: &str| {
            LeakPoint::from_name(name).ok_or_else(|| anyhow!("unknown leak point in {key:?}"))
        };
        match parts.as_slice() {
            ["noise", p] => {
                let v: f64 = parse(key, value)?;
                if !(v >= 0.0 && v.is_finite()) {
                    bail!("{key}: noise must be a nonnegative number");
                }
                self.noise.insert(point(p)?, v);
            }
            ["train", p, field] => {
                let plan = self.profiling.plan_mut(point(p)?);
                match *field {
                    "traces" => plan.traces = parse(key, value)?,
                    "hidden" => plan.hyper.hidden = parse_widths(key, value)?,
                    "learning_rate" => plan.hyper.learning_rate = parse(key, value)?,
                    "momentum" => plan.hyper.momentum = parse(key, value)?,
                    "batch_size" => plan.hyper.batch_size = parse(key, value)?,
                    "epochs" => plan.hyper.max_epochs = parse(key, value)?,
                    "patience" => plan.hyper.patience = parse(key, value)?,
                    "fp_weight" => plan.loss.fp_weight = parse(key, value)?,
                    _ => bail!("unknown setting {key:?}"),
                }
            }
            _ => bail!("unknown setting {key:?}"),
        }
        Ok(())
    }

    /// Every setting as `key -> value`, in the syntax `set` accepts.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("params", self.params.clone());
        put("seed.keygen", self.seed_keygen.to_string());
        put("seed.signing", self.seed_signing.to_string());
        put("seed.leakage", self.seed_leakage.to_string());
        put("seed.training", self.seed_training.to_string());
        put("signatures", self.signatures.to_string());
        put("attack", self.attack.to_string());
        put("out", self.out.display().to_string());
        put("masking.shares", self.masking_shares.to_string());
        put("trace_len", self.trace_len.to_string());
        put("eval.traces", self.eval_traces.to_string());
        put("eval.yu-zero.traces", self.eval_traces_yu_zero.to_string());
        put(
            "profiling.signatures_per_key",
            self.profiling.signatures_per_key.to_string(),
        );
        put(
            "attack1.retry_budget",
            self.attacks.attack1.retry_budget.to_string(),
        );
        put(
            "attack1.bound_filter",
            self.attacks.attack1.bound_filter.to_string(),
        );
        put(
            "kernel.max_subsets",
            self.attacks.kernel.max_subsets.to_string(),
        );
        put(
            "kernel.max_nullity",
            self.attacks.kernel.max_nullity.to_string(),
        );
        put(
            "kernel.search_budget",
            self.attacks.kernel.search_budget.to_string(),
        );
        put(
            "mle.max_iterations",
            self.attacks.mle.max_iterations.to_string(),
        );
        put("mle.check_every", self.attacks.mle.check_every.to_string());
        put(
            "brute_force.coordinates",
            self.attacks.brute_force_coordinates.to_string(),
        );
        put(
            "brute_force.budget",
            self.attacks.brute_force_budget.to_string(),
        );
        for point in LeakPoint::ALL {
            let name = point.name();
            put(&format!("noise.{name}"), self.noise[&point].to_string());
            let plan = self.profiling.plan(point);
            put(&format!("train.{name}.traces"), plan.traces.to_string());
            put(&format!("train.{name}.hidden"), widths(&plan.hyper.hidden));
            put(
                &format!("train.{name}.learning_rate"),
                plan.hyper.learning_rate.to_string(),
            );
            put(
                &format!("train.{name}.momentum"),
                plan.hyper.momentum.to_string(),
            );
            put(
                &format!("train.{name}.batch_size"),
                plan.hyper.batch_size.to_string(),
            );
            put(
                &format!("train.{name}.epochs"),
                plan.hyper.max_epochs.to_string(),
            );
            put(
                &format!("train.{name}.patience"),
                plan.hyper.patience.to_string(),
            );
            put(
                &format!("train.{name}.fp_weight"),
                plan.loss.fp_weight.to_string(),
            );
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let params = self.bliss_params()?;
        params.validate().map_err(|e| anyhow!("params: {e}"))?;
        self.attack_kind()?;
        self.profiles()?;
        if self.signatures == 0 {
            bail!("signatures: must be positive");
        }
        if self.masking_shares > 16 {
            bail!("masking.shares: at most 16 shares");
        }
        Ok(())
    }
}

/// Flattens a parsed TOML document into dotted keys. Quoted keys such as
/// `"noise.yu-zero"` and nested tables give the same result.
pub fn flatten(table: &toml::Table) -> Result<Vec<(String, String)>> {
    fn walk(prefix: &str, t: &toml::Table, out: &mut Vec<(String, String)>) -> Result<()> {
        for (k, v) in t {
            let key = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            match v {
                toml::Value::Table(inner) => walk(&key, inner, out)?,
                toml::Value::String(s) => out.push((key, s.clone())),
                toml::Value::Integer(i) => out.push((key, i.to_string())),
                toml::Value::Float(f) => out.push((key, f.to_string())),
                toml::Value::Boolean(b) => out.push((key, b.to_string())),
                toml::Value::Array(items) => {
                    let parts: Vec<String> = items
                        .iter()
                        .map(|i| match i {
                            toml::Value::Integer(v) => Ok(v.to_string()),
                            other => Err(anyhow!("{key}: unsupported list item {other}")),
                        })
                        .collect::<Result<_>>()?;
                    out.push((key, parts.join(",")));
                }
                toml::Value::Datetime(_) => bail!("{key}: dates are not settings"),
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk("", table, &mut out)?;
    Ok(out)
}

pub fn load(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let table: toml::Table = text
        .parse()
        .with_context(|| format!("{origin}: not a valid config file"))?;
    let mut cfg = ExperimentConfig::default();
    for (k, v) in flatten(&table)? {
        cfg.set(&k, &v).with_context(|| origin.to_string())?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_settings_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("params", "toy64").unwrap();
        cfg.set("train.yu-zero.hidden", "8,4").unwrap();
        cfg.set("noise.sign-b", "0.5").unwrap();
        let mut again = ExperimentConfig::default();
        for (k, v) in cfg.resolved() {
            again.set(&k, &v).unwrap();
        }
        assert_eq!(again, cfg);
    }

    #[test]
    fn nested_and_dotted_keys_agree() {
        let a = load("seed.keygen = 7\n[train.cdt-x]\nhidden = [16, 8]\n", "a").unwrap();
        let b = load(
            "\"seed.keygen\" = 7\n\"train.cdt-x.hidden\" = \"16,8\"\n",
            "b",
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seed_keygen, 7);
        assert_eq!(a.profiling.cdt_x.hyper.hidden, vec![16, 8]);
    }

    #[test]
    fn bad_settings_are_reported() {
        assert!(load("nope = 1", "x").is_err());
        assert!(load("signatures = \"many\"", "x").is_err());
        assert!(load("noise.cdt-x = -1.0", "x").is_err());
        assert!(load("= broken", "x").is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.set("attack", "4").unwrap();
        assert!(cfg.validate().is_err());
    }
}
