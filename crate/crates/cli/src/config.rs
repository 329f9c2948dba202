//! Experiment configuration: a TOML file with dotted sections. Literal
//! matrices are nested `[re, im]` pairs, given either as TOML arrays or as a
//! JSON string.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use qtraj_core::darkness::{SearchConfig, DEFAULT_WORD_BUDGET, EVIDENCE_THRESHOLD, FOUND_THRESHOLD};
use qtraj_core::disorder::DisorderModel;
use qtraj_core::state::KRAUS_TOL;
use qtraj_core::trajectory::{InitialPolicy, DEFAULT_BRANCH_BUDGET};
use qtraj_core::{ComplexMatrix, DensityMatrix, DisorderedEnsemble, KrausSet};

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub disorder: DisorderSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub validate: ValidateSection,
    #[serde(default)]
    pub purify: PurifySection,
    #[serde(default)]
    pub enumerate: EnumerateSection,
    #[serde(default)]
    pub dark: DarkSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum MatrixList {
    Json(String),
    Nested(Vec<Vec<Vec<[f64; 2]>>>),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum MatrixLiteral {
    Json(String),
    Nested(Vec<Vec<[f64; 2]>>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub builtin: Option<String>,
    pub name: Option<String>,
    pub operators: Option<MatrixList>,
    pub dim: Option<usize>,
    pub groups: Option<Vec<Vec<usize>>>,
    pub outcomes: Option<usize>,
    pub strength: Option<f64>,
    pub coarse_grain: Option<usize>,
    pub alphabet_budget: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderSection {
    pub variant: Option<String>,
    pub seed: Option<u64>,
    pub n_omegas: Option<usize>,
    pub transition: Option<Vec<Vec<f64>>>,
    pub payload_seeds: Option<Vec<u64>>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub policy: Option<String>,
    pub state: Option<MatrixLiteral>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    pub tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PurifySection {
    pub n_steps: Option<usize>,
    pub n_traj: Option<usize>,
    pub branch_budget: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnumerateSection {
    pub depth: Option<usize>,
    pub branch_budget: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DarkSection {
    pub depth: Option<usize>,
    pub ranks: Option<Vec<usize>>,
    pub restarts: Option<usize>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub found_threshold: Option<f64>,
    pub evidence_threshold: Option<f64>,
    pub word_budget: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub format: Option<String>,
    pub path: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        match text {
            "csv" => Ok(Self::Csv),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(CliError::Usage(format!("unknown output format `{other}` (expected csv or jsonl)"))),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

/// A fully resolved experiment.
#[derive(Debug)]
pub struct Experiment {
    pub ensemble: DisorderedEnsemble,
    pub seed: u64,
    pub omega_seeds: Vec<u64>,
    pub initial: InitialPolicy,
    pub validate_tol: f64,
    pub purify_steps: usize,
    pub purify_traj: usize,
    pub purify_budget: u128,
    pub enumerate_depth: usize,
    pub enumerate_budget: u128,
    pub dark_depth: usize,
    pub dark_ranks: Vec<usize>,
    pub search: SearchConfig,
    pub format: Format,
    pub out: Option<PathBuf>,
    /// Hex prefix of the SHA-256 of the canonical result-relevant config.
    pub config_hash: String,
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<Experiment, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text, overrides)
}

pub fn parse(text: &str, overrides: &Overrides) -> Result<Experiment, CliError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
    let seed = overrides.seed.or(raw.disorder.seed).ok_or_else(|| {
        CliError::Usage("missing required field `disorder.seed` (set it in the config or pass --seed)".into())
    })?;
    let config_hash = config_hash(text, seed)?;

    let ensemble = build_ensemble(&raw.ensemble, &raw.disorder)?;
    let n_omegas = positive("disorder.n_omegas", raw.disorder.n_omegas.unwrap_or(10) as u64)? as usize;
    let omega_seeds = (0..n_omegas as u64).map(|i| seed.wrapping_add(i)).collect();
    let initial = build_initial(&raw.initial, seed, ensemble.dim())?;

    let validate_tol = tolerance("validate.tol", raw.validate.tol.unwrap_or(KRAUS_TOL))?;
    let purify_traj = positive("purify.n_traj", raw.purify.n_traj.unwrap_or(1000) as u64)? as usize;
    let purify_budget = budget("purify.branch_budget", raw.purify.branch_budget)?;
    let enumerate_budget = budget("enumerate.branch_budget", raw.enumerate.branch_budget)?;

    let d = &raw.dark;
    let search = SearchConfig {
        restarts: positive("dark.restarts", d.restarts.unwrap_or(20) as u64)? as usize,
        max_iters: d.max_iters.unwrap_or(2000),
        tol: tolerance("dark.tol", d.tol.unwrap_or(1e-9))?,
        found_threshold: tolerance("dark.found_threshold", d.found_threshold.unwrap_or(FOUND_THRESHOLD))?,
        evidence_threshold: tolerance("dark.evidence_threshold", d.evidence_threshold.unwrap_or(EVIDENCE_THRESHOLD))?,
        word_budget: match d.word_budget {
            Some(b) => positive("dark.word_budget", b)? as u128,
            None => DEFAULT_WORD_BUDGET,
        },
        seed,
        ..SearchConfig::default()
    };
    let dim = ensemble.dim();
    let dark_ranks = d.ranks.clone().unwrap_or_else(|| (2..=dim.max(2)).filter(|&r| r <= dim).collect());
    if dark_ranks.is_empty() {
        return Err(CliError::Usage("dark.ranks is empty (a dimension-1 ensemble has no rank ≥ 2)".into()));
    }
    if let Some(&bad) = dark_ranks.iter().find(|&&r| r < 2 || r > dim) {
        return Err(CliError::Usage(format!("dark.ranks entry {bad} outside 2..={dim}")));
    }

    let format = match overrides.format {
        Some(f) => f,
        None => Format::parse(raw.output.format.as_deref().unwrap_or("csv"))?,
    };
    Ok(Experiment {
        ensemble,
        seed,
        omega_seeds,
        initial,
        validate_tol,
        purify_steps: raw.purify.n_steps.unwrap_or(20),
        purify_traj,
        purify_budget,
        enumerate_depth: raw.enumerate.depth.unwrap_or(4),
        enumerate_budget,
        dark_depth: raw.dark.depth.unwrap_or(2),
        dark_ranks,
        search,
        format,
        out: overrides.out.clone().or(raw.output.path),
        config_hash,
    })
}

fn positive(field: &str, value: u64) -> Result<u64, CliError> {
    if value == 0 {
        return Err(CliError::Usage(format!("`{field}` must be positive")));
    }
    Ok(value)
}

fn budget(field: &str, value: Option<u64>) -> Result<u128, CliError> {
    match value {
        Some(v) => Ok(positive(field, v)? as u128),
        None => Ok(DEFAULT_BRANCH_BUDGET),
    }
}

fn tolerance(field: &str, value: f64) -> Result<f64, CliError> {
    if !(value > 0.0 && value < 1.0) {
        return Err(CliError::Usage(format!("`{field}` must lie in (0, 1), got {value}")));
    }
    Ok(value)
}

/// Hash of the config with the effective seed written in and the output
/// section dropped, serialized as JSON with sorted keys.
fn config_hash(text: &str, seed: u64) -> Result<String, CliError> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
    table.remove("output");
    let disorder = table.entry("disorder").or_insert_with(|| toml::Value::Table(toml::Table::new()));
    if let toml::Value::Table(t) = disorder {
        // Seeds above i64::MAX only arrive through --seed; keep them exact.
        t.insert("seed".into(), toml::Value::String(seed.to_string()));
    }
    let canonical: serde_json::Value =
        serde_json::to_value(&table).map_err(|e| CliError::Usage(format!("config not representable: {e}")))?;
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    Ok(hex::encode(digest)[..16].to_string())
}

fn parse_matrix_list(list: &MatrixList) -> Result<Vec<ComplexMatrix>, CliError> {
    let nested = match list {
        MatrixList::Nested(n) => n.clone(),
        MatrixList::Json(s) => serde_json::from_str::<Vec<Vec<Vec<[f64; 2]>>>>(s)
            .map_err(|e| CliError::Usage(format!("ensemble.operators: invalid JSON matrix list: {e}")))?,
    };
    nested
        .iter()
        .map(|rows| ComplexMatrix::from_pairs(rows).map_err(|e| CliError::Usage(format!("ensemble.operators: {e}"))))
        .collect()
}

fn parse_matrix(literal: &MatrixLiteral, field: &str) -> Result<ComplexMatrix, CliError> {
    let nested = match literal {
        MatrixLiteral::Nested(n) => n.clone(),
        MatrixLiteral::Json(s) => serde_json::from_str::<Vec<Vec<[f64; 2]>>>(s)
            .map_err(|e| CliError::Usage(format!("{field}: invalid JSON matrix: {e}")))?,
    };
    ComplexMatrix::from_pairs(&nested).map_err(|e| CliError::Usage(format!("{field}: {e}")))
}

fn usage<T>(r: qtraj_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Usage(e.to_string()))
}

pub fn build_ensemble(section: &EnsembleSection, disorder: &DisorderSection) -> Result<DisorderedEnsemble, CliError> {
    let base = match (&section.builtin, &section.operators) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage("set only one of `ensemble.builtin` and `ensemble.operators`".into()))
        }
        (None, None) => return Err(CliError::Usage("missing `ensemble.builtin` or `ensemble.operators`".into())),
        (None, Some(list)) => {
            let set = usage(KrausSet::new(parse_matrix_list(list)?))?;
            DisorderedEnsemble::fixed(section.name.clone().unwrap_or_else(|| "literal".into()), set)
        }
        (Some(name), None) => match name.as_str() {
            "random_isometry" => {
                usage(DisorderedEnsemble::random_isometry(section.dim.unwrap_or(2), section.outcomes.unwrap_or(3)))?
            }
            "quasi_periodic_qubit" => usage(DisorderedEnsemble::quasi_periodic_qubit(section.strength.unwrap_or(0.8)))?,
            "column_partition" | "shifted_column_partition" => {
                let dim = section.dim.ok_or_else(|| CliError::Usage(format!("`{name}` needs `ensemble.dim`")))?;
                let groups = section
                    .groups
                    .clone()
                    .ok_or_else(|| CliError::Usage(format!("`{name}` needs `ensemble.groups`")))?;
                let label = section.name.clone().unwrap_or_else(|| name.clone());
                if name == "column_partition" {
                    usage(DisorderedEnsemble::column_partition(label, dim, groups))?
                } else {
                    usage(DisorderedEnsemble::shifted_column_partition(label, dim, groups))?
                }
            }
            other => usage(DisorderedEnsemble::builtin(other))?,
        },
    };
    let ensemble = match &disorder.variant {
        None => base,
        Some(variant) => {
            let model = match variant.as_str() {
                "iid_haar_shift" => DisorderModel::IidHaarShift { dim: base.dim() },
                "markov_shift" => {
                    let transition = disorder
                        .transition
                        .clone()
                        .ok_or_else(|| CliError::Usage("markov_shift needs `disorder.transition`".into()))?;
                    let payload_seeds = disorder
                        .payload_seeds
                        .clone()
                        .ok_or_else(|| CliError::Usage("markov_shift needs `disorder.payload_seeds`".into()))?;
                    usage(DisorderModel::markov(transition, payload_seeds))?
                }
                "rotation" => DisorderModel::Rotation { alpha: disorder.alpha.unwrap_or((5f64.sqrt() - 1.0) / 2.0) },
                "point" => DisorderModel::Point,
                other => {
                    return Err(CliError::Usage(format!(
                        "unknown disorder.variant `{other}` (expected iid_haar_shift, markov_shift, rotation or point)"
                    )))
                }
            };
            usage(base.with_model(model))?
        }
    };
    match section.coarse_grain {
        None | Some(1) => Ok(ensemble),
        Some(grain) => {
            let budget = section.alphabet_budget.map(|b| b as u128).unwrap_or(1 << 16);
            usage(ensemble.coarse_grain(grain, budget))
        }
    }
}

fn build_initial(section: &InitialSection, seed: u64, dim: usize) -> Result<InitialPolicy, CliError> {
    let policy =
        section.policy.as_deref().unwrap_or(if section.state.is_some() { "literal" } else { "maximally_mixed" });
    let state_seed = section.seed.unwrap_or(seed);
    match policy {
        "maximally_mixed" => Ok(InitialPolicy::MaximallyMixed),
        "random_pure" => Ok(InitialPolicy::RandomPure { seed: state_seed }),
        "random_mixed" => Ok(InitialPolicy::RandomMixed { seed: state_seed }),
        "certificate_half" => Ok(InitialPolicy::DarkCertificateHalf),
        "literal" => {
            let literal = section
                .state
                .as_ref()
                .ok_or_else(|| CliError::Usage("policy `literal` needs `initial.state`".into()))?;
            let rho = usage(DensityMatrix::new(parse_matrix(literal, "initial.state")?))?;
            if rho.dim() != dim {
                return Err(CliError::Usage(format!("initial.state has dimension {}, ensemble has {dim}", rho.dim())));
            }
            Ok(InitialPolicy::Literal(rho))
        }
        other => Err(CliError::Usage(format!(
            "unknown initial.policy `{other}` (expected maximally_mixed, random_pure, random_mixed, certificate_half \
             or literal)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_ok(text: &str) -> Experiment {
        parse(text, &Overrides::default()).unwrap()
    }

    #[test]
    fn minimal_builtin_config() {
        let exp = parse_ok("[ensemble]\nbuiltin = \"example1\"\n[disorder]\nseed = 5\n");
        assert_eq!(exp.ensemble.name(), "example1");
        assert_eq!(exp.omega_seeds.len(), 10);
        assert_eq!(exp.omega_seeds[0], 5);
        assert_eq!(exp.dark_ranks, vec![2, 3]);
        assert_eq!(exp.format, Format::Csv);
        assert_eq!(exp.config_hash.len(), 16);
    }

    #[test]
    fn missing_seed_names_the_field() {
        let err = parse("[ensemble]\nbuiltin = \"example1\"\n", &Overrides::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("disorder.seed"));
        let ok = parse("[ensemble]\nbuiltin = \"example1\"\n", &Overrides { seed: Some(3), ..Default::default() });
        assert_eq!(ok.unwrap().seed, 3);
    }

    #[test]
    fn literal_operators_as_arrays_or_json() {
        let arrays = "[ensemble]\noperators = [[[[1,0],[0,0]],[[0,0],[0,0]]], [[[0,0],[0,0]],[[0,0],[1,0]]]]\n\
                      [disorder]\nseed = 1\n";
        let json = "[ensemble]\noperators = '[[[[1,0],[0,0]],[[0,0],[0,0]]], [[[0,0],[0,0]],[[0,0],[1,0]]]]'\n\
                    [disorder]\nseed = 1\n";
        let a = parse_ok(arrays);
        let b = parse_ok(json);
        assert_eq!(a.ensemble.generator(), b.ensemble.generator());
        assert_eq!(a.ensemble.alphabet_size(), 2);
    }

    #[test]
    fn hash_depends_on_results_not_output() {
        let base = "[ensemble]\nbuiltin = \"example1\"\n[disorder]\nseed = 5\n";
        let with_output = format!("{base}[output]\nformat = \"jsonl\"\n");
        let reordered = "[disorder]\nseed = 5\n[ensemble]\nbuiltin = \"example1\"\n";
        assert_eq!(parse_ok(base).config_hash, parse_ok(&with_output).config_hash);
        assert_eq!(parse_ok(base).config_hash, parse_ok(reordered).config_hash);
        let other_seed = parse(base, &Overrides { seed: Some(6), ..Default::default() }).unwrap();
        assert_ne!(parse_ok(base).config_hash, other_seed.config_hash);
    }

    #[test]
    fn rejects_bad_values() {
        let cases = [
            "[ensemble]\nbuiltin = \"example1\"\n[disorder]\nseed = 1\n[validate]\ntol = 0.0\n",
            "[ensemble]\nbuiltin = \"example1\"\n[disorder]\nseed = 1\n[dark]\ntol = 1.5\n",
            "[ensemble]\nbuiltin = \"example1\"\n[disorder]\nseed = 1\n[purify]\nbranch_budget = 0\n",
            "[ensemble]\nbuiltin = \"example1\"\n[disorder]\nseed = 1\nn_omegas = 0\n",
            "[ensemble]\nbuiltin = \"nope\"\n[disorder]\nseed = 1\n",
            "[ensemble]\n[disorder]\nseed = 1\n",
            "[ensemble]\nbuiltin = \"example1\"\nbogus = 3\n[disorder]\nseed = 1\n",
            "[ensemble]\nbuiltin = \"example1\"\n[disorder]\nseed = 1\n[dark]\nranks = [1]\n",
            "[ensemble]\nbuiltin = \"example1\"\n[disorder]\nseed = 1\nvariant = \"rotation\"\n",
            "[ensemble]\nbuiltin = \"example1\"\n[disorder]\nseed = 1\n[output]\nformat = \"xml\"\n",
        ];
        for text in cases {
            let err = parse(text, &Overrides::default()).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn markov_and_coarse_grain() {
        let text = "[ensemble]\nbuiltin = \"example3\"\ncoarse_grain = 2\n\
                    [disorder]\nseed = 1\nvariant = \"markov_shift\"\ntransition = [[0.9, 0.1], [0.3, 0.7]]\n\
                    payload_seeds = [11, 12]\n";
        let exp = parse_ok(text);
        assert_eq!(exp.ensemble.alphabet_size(), 4);
        assert_eq!(exp.ensemble.model().name(), "markov_shift");
    }

    #[test]
    fn literal_initial_state() {
        let text = "[ensemble]\nbuiltin = \"quasi_periodic_qubit\"\n[disorder]\nseed = 1\n\
                    [initial]\nstate = [[[0.5,0],[0,0]],[[0,0],[0.5,0]]]\n";
        assert!(matches!(parse_ok(text).initial, InitialPolicy::Literal(_)));
        let bad = "[ensemble]\nbuiltin = \"quasi_periodic_qubit\"\n[disorder]\nseed = 1\n\
                   [initial]\nstate = [[[0.7,0],[0,0]],[[0,0],[0.5,0]]]\n";
        assert_eq!(parse(bad, &Overrides::default()).unwrap_err().exit_code(), 2);
    }
}
