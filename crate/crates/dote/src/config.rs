//! Solver configuration shared by inference, filter learning and training.

use crate::error::{DoteError, Result};

/// Hyperparameters and iteration budgets for every solver in the crate.
///
/// `lambda` weighs the l1 sparsity penalty, `beta` the cross-domain
/// coupling, `gamma` the ridge on the channel mapping and `sigma` is the
/// ADMM penalty. `dual_enabled` switches the feedback half of the closed
/// loop on and off; with it off the trainer learns the forward mapping
/// only.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Sparsity weight on the feature maps.
    pub lambda: f64,
    /// Coupling weight between the two domains' feature maps.
    pub beta: f64,
    /// Ridge weight on the channel mapping.
    pub gamma: f64,
    /// ADMM penalty parameter.
    pub sigma: f64,
    /// Number of filters per bank.
    pub k: usize,
    /// Filter support per spatial axis (odd).
    pub d: usize,
    /// Outer training sweeps.
    pub max_outer: usize,
    /// Inner ADMM iterations per subproblem.
    pub max_inner: usize,
    /// Relative residual / relative objective-change tolerance.
    pub tol: f64,
    /// Seed for filter initialization.
    pub seed: u64,
    /// When false, the reverse-mapping feedback term is dropped
    /// everywhere (ablation mode).
    pub dual_enabled: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 0.05,
            beta: 0.10,
            gamma: 0.15,
            sigma: 1.0,
            k: 16,
            d: 5,
            max_outer: 15,
            max_inner: 50,
            tol: 1e-4,
            seed: 0,
            dual_enabled: true,
        }
    }
}

impl SolverConfig {
    /// Checks the invariants every solver relies on.
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.beta >= 0.0 && self.gamma >= 0.0) {
            return Err(DoteError::invalid(
                "lambda, beta and gamma must be nonnegative",
            ));
        }
        if self.sigma <= 0.0 || self.sigma.is_nan() {
            return Err(DoteError::invalid("sigma must be positive"));
        }
        if self.k == 0 {
            return Err(DoteError::invalid("filter count k must be at least 1"));
        }
        if self.d == 0 || self.d.is_multiple_of(2) {
            return Err(DoteError::invalid("filter support d must be odd and >= 1"));
        }
        if self.tol <= 0.0 || self.tol.is_nan() {
            return Err(DoteError::invalid("tol must be positive"));
        }
        Ok(())
    }

    /// Parses the flat `key=value` config format.
    ///
    /// Exactly the keys `lambda, beta, gamma, sigma, k, d, max_outer,
    /// max_inner, tol, seed, dual_enabled` are recognized; anything else
    /// is an error so a replayed run cannot silently ignore a typo.
    /// Missing keys keep their default. Blank lines and `#` comments are
    /// allowed.
    ///
    /// ```
    /// use dote::SolverConfig;
    ///
    /// let cfg = SolverConfig::parse_key_values("k=8\nd=5\nlambda=0.01\nseed=3\n")?;
    /// assert_eq!(cfg.k, 8);
    /// assert_eq!(cfg.seed, 3);
    /// assert!(SolverConfig::parse_key_values("not_a_key=1\n").is_err());
    /// # Ok::<(), dote::DoteError>(())
    /// ```
    pub fn parse_key_values(text: &str) -> Result<Self> {
        let mut cfg = SolverConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                DoteError::format(format!("config line {}: expected key=value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| {
                DoteError::format(format!(
                    "config line {}: bad {} value {:?}",
                    lineno + 1,
                    what,
                    value
                ))
            };
            match key {
                "lambda" => cfg.lambda = value.parse().map_err(|_| bad("lambda"))?,
                "beta" => cfg.beta = value.parse().map_err(|_| bad("beta"))?,
                "gamma" => cfg.gamma = value.parse().map_err(|_| bad("gamma"))?,
                "sigma" => cfg.sigma = value.parse().map_err(|_| bad("sigma"))?,
                "k" => cfg.k = value.parse().map_err(|_| bad("k"))?,
                "d" => cfg.d = value.parse().map_err(|_| bad("d"))?,
                "max_outer" => cfg.max_outer = value.parse().map_err(|_| bad("max_outer"))?,
                "max_inner" => cfg.max_inner = value.parse().map_err(|_| bad("max_inner"))?,
                "tol" => cfg.tol = value.parse().map_err(|_| bad("tol"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
                "dual_enabled" => {
                    cfg.dual_enabled = value.parse().map_err(|_| bad("dual_enabled"))?
                }
                other => {
                    return Err(DoteError::format(format!(
                        "config line {}: unknown key {:?}",
                        lineno + 1,
                        other
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the config in the same `key=value` format `parse_key_values`
    /// accepts, so manifests can be replayed verbatim.
    pub fn to_key_values(&self) -> String {
        format!(
            "lambda={}\nbeta={}\ngamma={}\nsigma={}\nk={}\nd={}\nmax_outer={}\nmax_inner={}\ntol={}\nseed={}\ndual_enabled={}\n",
            self.lambda,
            self.beta,
            self.gamma,
            self.sigma,
            self.k,
            self.d,
            self.max_outer,
            self.max_inner,
            self.tol,
            self.seed,
            self.dual_enabled
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SolverConfig::default().validate().unwrap();
    }

    #[test]
    fn parse_roundtrip() {
        let cfg = SolverConfig {
            lambda: 0.01,
            seed: 42,
            dual_enabled: false,
            ..SolverConfig::default()
        };
        let parsed = SolverConfig::parse_key_values(&cfg.to_key_values()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = SolverConfig::parse_key_values("lamda=0.1\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"), "{err}");
    }

    #[test]
    fn even_support_rejected() {
        let cfg = SolverConfig {
            d: 4,
            ..SolverConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
