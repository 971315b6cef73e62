//! TOML experiment configs. Every section has defaults, so an empty file
//! runs the full-size experiment; unknown keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use martspline::filtration::RefinementRule;
use martspline::measures::{Density, Dirac, HybridMeasure, Monomial};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Decay,
    Shadrin,
    Weaktype,
    Covering,
    Converge,
    Singular,
    Nondense,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        Self::Decay,
        Self::Shadrin,
        Self::Weaktype,
        Self::Covering,
        Self::Converge,
        Self::Singular,
        Self::Nondense,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Decay => "decay",
            Self::Shadrin => "shadrin",
            Self::Weaktype => "weaktype",
            Self::Covering => "covering",
            Self::Converge => "converge",
            Self::Singular => "singular",
            Self::Nondense => "nondense",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| LabError::Param(format!("unknown experiment `{s}`")))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Required when running through `run`; checked against the subcommand
    /// otherwise.
    pub experiment: Option<ExperimentKind>,
    /// Base seed; run `i` of an experiment uses `seed + i`.
    pub seed: u64,
    pub decay: DecayParams,
    pub shadrin: ShadrinParams,
    pub weaktype: WeaktypeParams,
    pub covering: CoveringParams,
    pub converge: ConvergeParams,
    pub singular: SingularParams,
    pub nondense: NondenseParams,
}

impl Config {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| LabError::Config {
            path: origin.to_string(),
            message: e.to_string().trim_end().to_string(),
        })?;
        cfg.validate().map_err(|message| LabError::Config {
            path: origin.to_string(),
            message,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| LabError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Overrides every depth-like parameter of one experiment.
    pub fn override_depth(&mut self, kind: ExperimentKind, depth: usize) {
        match kind {
            ExperimentKind::Decay => self.decay.depth = depth,
            ExperimentKind::Shadrin => self.shadrin.depth = depth,
            ExperimentKind::Weaktype => {
                self.weaktype.depth_1d = depth;
                self.weaktype.depth_2d = depth;
            }
            ExperimentKind::Covering => {
                self.covering.depth_1d = depth;
                self.covering.depth_2d = depth;
            }
            ExperimentKind::Converge => self.converge.depth = depth,
            ExperimentKind::Singular => {
                self.singular.depth_1d = depth;
                self.singular.depth_2d = depth;
            }
            ExperimentKind::Nondense => {
                for c in &mut self.nondense.cases {
                    c.depth = depth;
                    c.dual_level = c.dual_level.min(depth);
                    c.check_level = c.check_level.min(depth);
                }
            }
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let dims_ok = |field: &str, dims: &[usize]| {
            if dims.iter().any(|&d| d == 0 || d > 2) {
                Err(format!("field `{field}`: dimensions must be 1 or 2"))
            } else {
                Ok(())
            }
        };
        let orders_ok = |field: &str, orders: &[usize]| {
            if orders.iter().any(|&k| k == 0 || k > martspline::bspline::MAX_ORDER) {
                Err(format!("field `{field}`: orders must lie in 1..={}", martspline::bspline::MAX_ORDER))
            } else {
                Ok(())
            }
        };
        let q_ok = |field: &str, qs: &[f64]| {
            if qs.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
                Err(format!("field `{field}`: q must lie in (0, 1)"))
            } else {
                Ok(())
            }
        };
        orders_ok("decay.orders", &self.decay.orders)?;
        orders_ok("shadrin.orders", &self.shadrin.orders)?;
        for o in &self.shadrin.tensor_orders {
            orders_ok("shadrin.tensor_orders", o)?;
        }
        dims_ok("weaktype.dims", &self.weaktype.dims)?;
        q_ok("weaktype.qs", &self.weaktype.qs)?;
        orders_ok("weaktype.orders", &self.weaktype.orders)?;
        dims_ok("covering.dims", &self.covering.dims)?;
        q_ok("covering.qs", &self.covering.qs)?;
        dims_ok("converge.dims", &self.converge.dims)?;
        orders_ok("converge.orders", &self.converge.orders)?;
        dims_ok("singular.dims", &self.singular.dims)?;
        orders_ok("singular.orders", &self.singular.orders)?;
        for (i, c) in self.nondense.cases.iter().enumerate() {
            dims_ok(&format!("nondense.cases[{i}].dim"), &[c.dim])?;
            orders_ok(&format!("nondense.cases[{i}].orders"), &c.orders)?;
            if c.check_level == 0 || c.check_level > c.depth || c.dual_level < 2 || c.dual_level > c.depth {
                return Err(format!(
                    "nondense.cases[{i}]: need 1 <= check_level <= depth and 2 <= dual_level <= depth"
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayParams {
    pub orders: Vec<usize>,
    pub seeds: usize,
    pub depth: usize,
    pub rule: RefinementRule,
    /// Levels whose spaces exceed this dimension are skipped.
    pub max_dim: usize,
    pub samples_per_atom: usize,
    /// Random points per space for the partition-of-unity check.
    pub pou_points: usize,
    pub biorth_tol: f64,
    pub pou_tol: f64,
    pub negativity_tol: f64,
    pub q_max: f64,
}

impl Default for DecayParams {
    fn default() -> Self {
        Self {
            orders: vec![1, 2, 3, 4],
            seeds: 20,
            depth: 12,
            rule: RefinementRule::RandomAtomBisect {
                split_prob: 0.6,
                jitter: 0.25,
            },
            max_dim: 256,
            samples_per_atom: 8,
            pou_points: 10_000,
            biorth_tol: 1e-10,
            pou_tol: 1e-12,
            negativity_tol: 1e-14,
            q_max: 0.99,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadrinParams {
    pub orders: Vec<usize>,
    pub seeds: usize,
    pub depth: usize,
    pub rule: RefinementRule,
    pub samples_per_atom: usize,
    pub quad_points: usize,
    /// Bound on `(max - min) / max` of the norms over levels, per seed.
    pub variation_tol: f64,
    pub unit_tol: f64,
    /// Orders of the two-dimensional product check.
    pub tensor_orders: Vec<Vec<usize>>,
    pub tensor_depth: usize,
    pub tensor_tol: f64,
}

impl Default for ShadrinParams {
    fn default() -> Self {
        Self {
            orders: vec![1, 2, 3, 4],
            seeds: 20,
            depth: 10,
            rule: RefinementRule::RandomBaseBisect {
                base_atoms: 4,
                spread: 4.0,
            },
            samples_per_atom: 8,
            quad_points: 16,
            variation_tol: 0.05,
            unit_tol: 1e-12,
            tensor_orders: vec![vec![1, 1], vec![2, 2], vec![3, 2], vec![4, 3]],
            tensor_depth: 2,
            tensor_tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoveringParams {
    pub dims: Vec<usize>,
    pub qs: Vec<f64>,
    pub seeds: usize,
    pub depth_1d: usize,
    pub depth_2d: usize,
    pub rule: RefinementRule,
    pub t_points: usize,
    /// The start level `K` (the level of `B`) is drawn from `1..=max_start_level`.
    pub max_start_level: usize,
    pub max_diracs: usize,
}

impl Default for CoveringParams {
    fn default() -> Self {
        Self {
            dims: vec![1, 2],
            qs: vec![0.3, 0.5, 0.8],
            seeds: 30,
            depth_1d: 10,
            depth_2d: 8,
            rule: RefinementRule::RandomAtomBisect {
                split_prob: 0.75,
                jitter: 0.25,
            },
            t_points: 20,
            max_start_level: 3,
            max_diracs: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeaktypeParams {
    pub dims: Vec<usize>,
    pub qs: Vec<f64>,
    /// Orders (equal on every axis) for the maximal projection.
    pub orders: Vec<usize>,
    pub depth_1d: usize,
    pub depth_2d: usize,
    pub rule: RefinementRule,
    /// Finest atoms drawn for the spike corpus, per dimension.
    pub spikes: usize,
    /// Sample points per axis and finest atom for `sup_n |P_n f|`.
    pub samples_per_axis: usize,
    pub hl_constant: f64,
}

impl Default for WeaktypeParams {
    fn default() -> Self {
        Self {
            dims: vec![1, 2],
            qs: vec![0.3, 0.5, 0.8],
            orders: vec![1, 2, 3],
            depth_1d: 8,
            depth_2d: 5,
            rule: RefinementRule::UniformBisectAll,
            spikes: 24,
            samples_per_axis: 3,
            hl_constant: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeParams {
    pub dims: Vec<usize>,
    pub orders: Vec<usize>,
    pub depth: usize,
    pub rule: RefinementRule,
    pub probes: usize,
    pub tol: f64,
    pub martingale_tol: f64,
    /// Probe points used for the martingale check (a prefix of the probes).
    pub martingale_probes: usize,
    pub catalog_1d: Vec<Density>,
    pub catalog_2d: Vec<Density>,
}

impl Default for ConvergeParams {
    fn default() -> Self {
        Self {
            dims: vec![1, 2],
            orders: vec![1, 2, 3],
            depth: 8,
            rule: RefinementRule::UniformBisectAll,
            probes: 500,
            tol: 1e-3,
            martingale_tol: 1e-9,
            martingale_probes: 64,
            catalog_1d: smooth_catalog(1),
            catalog_2d: smooth_catalog(2),
        }
    }
}

/// Constants, a polynomial, a tensor cosine, a Gaussian bump and a sigmoid.
pub fn smooth_catalog(d: usize) -> Vec<Density> {
    let mono = |coef: f64, powers: &[u32]| Monomial {
        coef,
        powers: powers[..d].to_vec(),
    };
    vec![
        Density::Constant { value: 1.5 },
        Density::Polynomial {
            terms: vec![mono(1.0, &[0, 0]), mono(1.0, &[1, 1]), mono(-2.0, &[3, 0])],
        },
        Density::TensorCosine {
            freq: [3.0, 2.0][..d].to_vec(),
            phase: [0.2, -0.4][..d].to_vec(),
            scale: 1.0,
        },
        Density::Gaussian {
            center: [0.4, 0.6][..d].to_vec(),
            width: 0.25,
            scale: 1.0,
        },
        Density::Sigmoid {
            normal: [1.0, 0.5][..d].to_vec(),
            offset: 0.55,
            width: 0.08,
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    pub density: Density,
    #[serde(default)]
    pub diracs: Vec<Dirac>,
}

impl MeasureSpec {
    pub fn build(&self, dim: usize) -> Result<HybridMeasure> {
        Ok(HybridMeasure::new(dim, self.density.clone(), self.diracs.clone())?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingularParams {
    pub dims: Vec<usize>,
    pub orders: Vec<usize>,
    pub depth_1d: usize,
    pub depth_2d: usize,
    pub rule: RefinementRule,
    pub probes: usize,
    /// Allowance for the density part at the deepest level.
    pub tol: f64,
    /// Relative tolerance of the fitted Dirac log-slope against `ln q_hat`.
    pub slope_tol: f64,
    pub martingale_tol: f64,
    pub martingale_probes: usize,
    pub measure_1d: MeasureSpec,
    pub measure_2d: MeasureSpec,
}

impl Default for SingularParams {
    fn default() -> Self {
        Self {
            dims: vec![1, 2],
            orders: vec![1, 2, 3],
            depth_1d: 10,
            depth_2d: 7,
            rule: RefinementRule::UniformBisectAll,
            probes: 200,
            tol: 1e-3,
            slope_tol: 0.2,
            martingale_tol: 1e-9,
            martingale_probes: 32,
            measure_1d: MeasureSpec {
                density: Density::Gaussian {
                    center: vec![0.45],
                    width: 0.2,
                    scale: 1.0,
                },
                diracs: vec![
                    Dirac {
                        location: vec![0.3137],
                        mass: vec![0.5],
                    },
                    Dirac {
                        location: vec![0.7071],
                        mass: vec![-0.25],
                    },
                ],
            },
            measure_2d: MeasureSpec {
                density: Density::TensorCosine {
                    freq: vec![2.0, 3.0],
                    phase: vec![0.1, 0.3],
                    scale: 1.0,
                },
                diracs: vec![Dirac {
                    location: vec![0.3137, 0.6421],
                    mass: vec![0.5],
                }],
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NondenseParams {
    pub cases: Vec<NondenseCase>,
}

impl Default for NondenseParams {
    fn default() -> Self {
        Self {
            cases: vec![NondenseCase::default(), NondenseCase::planar()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NondenseCase {
    pub dim: usize,
    /// Frozen intervals, applied on every axis.
    pub frozen: Vec<[f64; 2]>,
    /// Orders (equal on every axis).
    pub orders: Vec<usize>,
    /// Deepest level; the sequence oracle.
    pub depth: usize,
    /// Level whose Cauchy delta is asserted.
    pub dual_level: usize,
    /// Level compared against the oracle on frozen atoms.
    pub check_level: usize,
    /// Dual index, counted from the first basis function meeting `V`.
    pub r: usize,
    pub probes: usize,
    pub source: Density,
    /// Gauss points per atom and axis for loading the source.
    pub quad_points: usize,
    /// Width below which a gap counts as refining.
    pub tolerance: f64,
    pub lookback: usize,
    pub delta_tol: f64,
    pub limit_tol: f64,
    pub martingale_tol: f64,
}

impl Default for NondenseCase {
    fn default() -> Self {
        Self {
            dim: 1,
            frozen: vec![[0.5, 1.0]],
            orders: vec![1, 2, 3],
            depth: 12,
            dual_level: 10,
            check_level: 10,
            r: 0,
            probes: 16,
            source: Density::TensorCosine {
                freq: vec![5.0, 4.0],
                phase: vec![0.3, -0.2],
                scale: 1.0,
            },
            quad_points: 8,
            tolerance: 1e-6,
            lookback: 3,
            delta_tol: 1e-8,
            limit_tol: 1e-6,
            martingale_tol: 1e-9,
        }
    }
}

impl NondenseCase {
    pub fn planar() -> Self {
        Self {
            dim: 2,
            orders: vec![1, 2],
            depth: 11,
            dual_level: 10,
            check_level: 10,
            quad_points: 4,
            ..Self::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::from_toml("", "inline").unwrap();
        assert_eq!(c, Config::default());
    }

    #[test]
    fn sections_and_rules_parse() {
        let text = r#"
experiment = "covering"
seed = 9

[covering]
qs = [0.5]
seeds = 2
rule = { name = "random-atom-bisect", split_prob = 0.5 }
"#;
        let c = Config::from_toml(text, "inline").unwrap();
        assert_eq!(c.experiment, Some(ExperimentKind::Covering));
        assert_eq!(c.covering.qs, vec![0.5]);
        assert_eq!(c.covering.dims, vec![1, 2]);
        assert!(matches!(c.covering.rule, RefinementRule::RandomAtomBisect { split_prob, .. } if split_prob == 0.5));
    }

    #[test]
    fn unknown_field_reports_line_and_name() {
        let text = "seed = 1\n\n[decay]\norderz = [1]\n";
        let err = Config::from_toml(text, "bad.toml").unwrap_err().to_string();
        assert!(err.contains("bad.toml"), "{err}");
        assert!(err.contains("line 4"), "{err}");
        assert!(err.contains("orderz"), "{err}");
    }

    #[test]
    fn wrong_type_reports_field() {
        let err = Config::from_toml("[shadrin]\ndepth = \"ten\"\n", "x").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("depth"), "{err}");
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let err = Config::from_toml("[covering]\nqs = [1.5]\n", "x").unwrap_err().to_string();
        assert!(err.contains("covering.qs"), "{err}");
    }

    #[test]
    fn catalog_round_trips_through_toml() {
        let c = Config::default();
        let text = toml::to_string(&c).unwrap();
        let back = Config::from_toml(&text, "round").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn depth_override_clamps_nondense_levels() {
        let mut c = Config::default();
        c.override_depth(ExperimentKind::Nondense, 6);
        assert!(c.nondense.cases.iter().all(|k| k.depth == 6 && k.check_level <= 6 && k.dual_level <= 6));
    }
}
