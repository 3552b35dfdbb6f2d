//! Flat INI-style run configuration with strict (unknown-key-rejecting)
//! parsing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fom::SolveMethod;
use crate::pod::{PodMode, PodSelect};

/// Which fan-face Dirichlet profile drives the problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceProfile {
    /// paper-style profile 1 + y cos(10 pi y)
    Fan,
    /// cosine-branch mix that excites all propagating transverse modes
    Multimode,
}

#[derive(Debug, Clone)]
pub struct MeshConfig {
    /// load an existing mesh instead of generating one
    pub path: Option<PathBuf>,
    pub length: f64,
    pub height: f64,
    pub liner_start: f64,
    pub liner_length: f64,
    pub h: f64,
    pub source: SourceProfile,
}

#[derive(Debug, Clone)]
pub struct SamplingConfig {
    pub seed: u64,
    pub q: usize,
    /// snapshot grid: k count and range
    pub k_count: usize,
    pub k_min: f64,
    pub k_max: f64,
    pub mu_set: Vec<(f64, f64)>,
    pub xi_r_set: Vec<f64>,
    pub xi_i_set: Vec<f64>,
    /// auxiliary snapshot block: strongly-absorbing impedances sampled at
    /// reduced source amplitude so they enrich the basis tail without
    /// displacing the dominant modes (aux_k_count = 0 disables it)
    pub aux_k_count: usize,
    pub aux_xi_r_set: Vec<f64>,
    pub aux_xi_i_set: Vec<f64>,
    pub aux_amplitude: f64,
    /// Monte Carlo ranges for the random parameters
    pub mu_r_min: f64,
    pub mu_r_max: f64,
    pub mu_i_min: f64,
    pub mu_i_max: f64,
}

#[derive(Debug, Clone)]
pub struct PodConfig {
    pub mode: PodMode,
    pub select: PodSelect,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub method: SolveMethod,
}

#[derive(Debug, Clone)]
pub struct CvarSection {
    pub betas: Vec<f64>,
    pub eps: f64,
    pub gamma: f64,
    /// None means "compute from the hard-wall energy at (k_max, mu_max, mu_max)"
    pub gamma_p: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ValidateConfig {
    pub draws: usize,
    pub n_list: Vec<usize>,
    /// draw range for k; None falls back to the snapshot sampling range
    pub k_min: Option<f64>,
    pub k_max: Option<f64>,
    pub xi_r_min: f64,
    pub xi_r_max: f64,
    pub xi_i_min: f64,
    pub xi_i_max: f64,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mesh: MeshConfig,
    pub sampling: SamplingConfig,
    pub pod: PodConfig,
    pub solver: SolverConfig,
    pub cvar: CvarSection,
    pub validate: ValidateConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mesh: MeshConfig {
                path: None,
                length: 2.0,
                height: 1.0,
                liner_start: 0.6,
                liner_length: 0.8,
                h: 0.025,
                source: SourceProfile::Fan,
            },
            sampling: SamplingConfig {
                seed: 42,
                q: 4000,
                k_count: 40,
                k_min: 5.0,
                k_max: 10.0,
                mu_set: vec![(1.0, 0.0), (0.0, 1.0)],
                xi_r_set: vec![0.05, 0.5, 2.0],
                xi_i_set: vec![-0.05, -0.5, -2.0],
                aux_k_count: 0,
                aux_xi_r_set: Vec::new(),
                aux_xi_i_set: Vec::new(),
                aux_amplitude: 0.1,
                mu_r_min: 10.0,
                mu_r_max: 30.0,
                mu_i_min: 10.0,
                mu_i_max: 30.0,
            },
            pod: PodConfig {
                mode: PodMode::MassWeighted,
                select: PodSelect::Energy(0.995),
            },
            solver: SolverConfig {
                method: SolveMethod::Direct,
            },
            cvar: CvarSection {
                betas: vec![0.5, 0.75, 0.95],
                eps: 1e-4,
                gamma: 1e-6,
                gamma_p: None,
            },
            validate: ValidateConfig {
                draws: 50,
                n_list: vec![10, 20, 40, 60],
                k_min: None,
                k_max: None,
                xi_r_min: 1e-3,
                xi_r_max: 100.0,
                xi_i_min: -100.0,
                xi_i_max: 100.0,
            },
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Minimal complex literal: "1", "-2.5", "i", "-i", "2i", "1+2i", "1-0.5i".
pub fn parse_complex(s: &str) -> Option<(f64, f64)> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    if !s.ends_with('i') {
        return s.parse().ok().map(|r| (r, 0.0));
    }
    let body = &s[..s.len() - 1];
    // split real and imaginary at the last +/- that is not an exponent sign
    // and not the leading sign
    let bytes = body.as_bytes();
    let mut split = None;
    for idx in (1..bytes.len()).rev() {
        let c = bytes[idx];
        if (c == b'+' || c == b'-') && !matches!(bytes[idx - 1], b'e' | b'E') {
            split = Some(idx);
            break;
        }
    }
    match split {
        None => {
            let im = match body {
                "" => 1.0,
                "-" => -1.0,
                "+" => 1.0,
                other => other.parse().ok()?,
            };
            Some((0.0, im))
        }
        Some(idx) => {
            let re: f64 = body[..idx].parse().ok()?;
            let imtext = &body[idx..];
            let im = match imtext {
                "+" => 1.0,
                "-" => -1.0,
                other => other.parse().ok()?,
            };
            Some((re, im))
        }
    }
}

struct RawConfig {
    path: PathBuf,
    // section -> key -> (line, value)
    sections: BTreeMap<String, BTreeMap<String, (usize, String)>>,
}

impl RawConfig {
    fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, (usize, String)>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (idx, raw_line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno,
                        msg: "unterminated section header".into(),
                    });
                }
                let name = line[1..line.len() - 1].trim().to_string();
                sections.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: "expected key = value".into(),
                });
            };
            let section = current.clone().ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: "key before any [section]".into(),
            })?;
            let entry = sections.get_mut(&section).unwrap();
            if entry
                .insert(key.trim().to_string(), (lineno, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: format!("duplicate key {:?}", key.trim()),
                });
            }
        }
        Ok(RawConfig {
            path: path.to_path_buf(),
            sections,
        })
    }
}

/// View over one section that records which keys were consumed so leftovers
/// can be rejected.
struct SectionReader<'a> {
    path: &'a Path,
    name: &'a str,
    entries: Option<&'a BTreeMap<String, (usize, String)>>,
    consumed: Vec<&'a str>,
}

impl<'a> SectionReader<'a> {
    fn get(&mut self, key: &'a str) -> Option<&'a str> {
        self.consumed.push(key);
        self.entries
            .and_then(|m| m.get(key))
            .map(|(_, v)| v.as_str())
    }

    fn parse_as<T: std::str::FromStr>(&mut self, key: &'a str) -> Result<Option<T>> {
        let Some(v) = self.get(key) else {
            return Ok(None);
        };
        let line = self.entries.unwrap().get(key).unwrap().0;
        v.parse().map(Some).map_err(|_| Error::Parse {
            path: self.path.to_path_buf(),
            line,
            msg: format!("bad value {v:?} for {}.{key}", self.name),
        })
    }

    fn set<T: std::str::FromStr>(&mut self, key: &'a str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.parse_as(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn list<T, F>(&mut self, key: &'a str, parse: F) -> Result<Option<Vec<T>>>
    where
        F: Fn(&str) -> Option<T>,
    {
        let Some(v) = self.get(key) else {
            return Ok(None);
        };
        let line = self.entries.unwrap().get(key).unwrap().0;
        v.split(',')
            .map(|item| {
                parse(item.trim()).ok_or_else(|| Error::Parse {
                    path: self.path.to_path_buf(),
                    line,
                    msg: format!("bad list item {:?} for {}.{key}", item.trim(), self.name),
                })
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    fn finish(self) -> Result<()> {
        if let Some(entries) = self.entries {
            for (key, (line, _)) in entries {
                if !self.consumed.contains(&key.as_str()) {
                    return Err(Error::Parse {
                        path: self.path.to_path_buf(),
                        line: *line,
                        msg: format!("unknown key {:?} in section [{}]", key, self.name),
                    });
                }
            }
        }
        Ok(())
    }
}

const KNOWN_SECTIONS: [&str; 7] = [
    "mesh", "sampling", "pod", "solver", "cvar", "validate", "output",
];

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(path, &text)
}

pub fn parse_config(path: &Path, text: &str) -> Result<RunConfig> {
    let raw = RawConfig::parse(path, text)?;
    for name in raw.sections.keys() {
        if !KNOWN_SECTIONS.contains(&name.as_str()) {
            return Err(Error::Config(format!(
                "{}: unknown section [{name}]",
                path.display()
            )));
        }
    }
    let mut cfg = RunConfig::default();
    let section = |name: &'static str| SectionReader {
        path: &raw.path,
        name,
        entries: raw.sections.get(name),
        consumed: Vec::new(),
    };

    let mut s = section("mesh");
    if let Some(p) = s.get("path") {
        cfg.mesh.path = Some(PathBuf::from(p));
    }
    s.set("length", &mut cfg.mesh.length)?;
    s.set("height", &mut cfg.mesh.height)?;
    s.set("liner_start", &mut cfg.mesh.liner_start)?;
    s.set("liner_length", &mut cfg.mesh.liner_length)?;
    s.set("h", &mut cfg.mesh.h)?;
    if let Some(m) = s.get("source") {
        cfg.mesh.source = match m {
            "fan" => SourceProfile::Fan,
            "multimode" => SourceProfile::Multimode,
            other => {
                return Err(Error::Config(format!("unknown source profile {other:?}")));
            }
        };
    }
    s.finish()?;

    let mut s = section("sampling");
    s.set("seed", &mut cfg.sampling.seed)?;
    s.set("q", &mut cfg.sampling.q)?;
    s.set("k_count", &mut cfg.sampling.k_count)?;
    s.set("k_min", &mut cfg.sampling.k_min)?;
    s.set("k_max", &mut cfg.sampling.k_max)?;
    if let Some(mu) = s.list("mu_set", parse_complex)? {
        cfg.sampling.mu_set = mu;
    }
    if let Some(v) = s.list("xi_r_set", |x| x.parse().ok())? {
        cfg.sampling.xi_r_set = v;
    }
    if let Some(v) = s.list("xi_i_set", |x| x.parse().ok())? {
        cfg.sampling.xi_i_set = v;
    }
    s.set("aux_k_count", &mut cfg.sampling.aux_k_count)?;
    if let Some(v) = s.list("aux_xi_r_set", |x| x.parse().ok())? {
        cfg.sampling.aux_xi_r_set = v;
    }
    if let Some(v) = s.list("aux_xi_i_set", |x| x.parse().ok())? {
        cfg.sampling.aux_xi_i_set = v;
    }
    s.set("aux_amplitude", &mut cfg.sampling.aux_amplitude)?;
    s.set("mu_r_min", &mut cfg.sampling.mu_r_min)?;
    s.set("mu_r_max", &mut cfg.sampling.mu_r_max)?;
    s.set("mu_i_min", &mut cfg.sampling.mu_i_min)?;
    s.set("mu_i_max", &mut cfg.sampling.mu_i_max)?;
    s.finish()?;

    let mut s = section("pod");
    if let Some(m) = s.get("mode") {
        cfg.pod.mode = match m {
            "euclidean" => PodMode::Euclidean,
            "mass-weighted" => PodMode::MassWeighted,
            other => {
                return Err(Error::Config(format!("unknown pod mode {other:?}")));
            }
        };
    }
    let tau: Option<f64> = s.parse_as("tau")?;
    let n: Option<usize> = s.parse_as("n")?;
    match (tau, n) {
        (Some(_), Some(_)) => {
            return Err(Error::Config("pod.tau and pod.n are mutually exclusive".into()));
        }
        (Some(t), None) => cfg.pod.select = PodSelect::Energy(t),
        (None, Some(r)) => cfg.pod.select = PodSelect::Rank(r),
        (None, None) => {}
    }
    s.finish()?;

    let mut s = section("solver");
    let method = s.get("method").unwrap_or("direct").to_string();
    let mut tol = 1e-6;
    let mut beta1 = 1.0;
    let mut beta2 = 0.5;
    let mut max_iter = 2000usize;
    s.set("tol", &mut tol)?;
    s.set("beta1", &mut beta1)?;
    s.set("beta2", &mut beta2)?;
    s.set("max_iter", &mut max_iter)?;
    cfg.solver.method = match method.as_str() {
        "direct" => SolveMethod::Direct,
        "gmres" => SolveMethod::GmresShiftedLaplacian {
            beta1,
            beta2,
            tol,
            max_iter,
        },
        other => {
            return Err(Error::Config(format!("unknown solver method {other:?}")));
        }
    };
    s.finish()?;

    let mut s = section("cvar");
    if let Some(b) = s.list("beta", |x| x.parse().ok())? {
        cfg.cvar.betas = b;
    }
    s.set("eps", &mut cfg.cvar.eps)?;
    s.set("gamma", &mut cfg.cvar.gamma)?;
    if let Some(gp) = s.get("gamma_p") {
        cfg.cvar.gamma_p = if gp == "auto" {
            None
        } else {
            Some(gp.parse().map_err(|_| {
                Error::Config(format!("bad cvar.gamma_p value {gp:?}"))
            })?)
        };
    }
    s.finish()?;

    let mut s = section("validate");
    s.set("draws", &mut cfg.validate.draws)?;
    if let Some(v) = s.list("n_list", |x| x.parse().ok())? {
        cfg.validate.n_list = v;
    }
    if let Some(x) = s.parse_as("k_min")? {
        cfg.validate.k_min = Some(x);
    }
    if let Some(x) = s.parse_as("k_max")? {
        cfg.validate.k_max = Some(x);
    }
    s.set("xi_r_min", &mut cfg.validate.xi_r_min)?;
    s.set("xi_r_max", &mut cfg.validate.xi_r_max)?;
    s.set("xi_i_min", &mut cfg.validate.xi_i_min)?;
    s.set("xi_i_max", &mut cfg.validate.xi_i_max)?;
    s.finish()?;

    let mut s = section("output");
    if let Some(d) = s.get("dir") {
        cfg.output_dir = PathBuf::from(d);
    }
    s.finish()?;

    validate_config(&cfg)?;
    Ok(cfg)
}

fn validate_config(cfg: &RunConfig) -> Result<()> {
    let bad = |msg: String| Err(Error::Config(msg));
    if cfg.mesh.path.is_none() {
        if cfg.mesh.h <= 0.0 || cfg.mesh.length <= 0.0 || cfg.mesh.height <= 0.0 {
            return bad("mesh dimensions and h must be positive".into());
        }
    }
    if cfg.sampling.k_count < 2 {
        return bad("sampling.k_count must be at least 2".into());
    }
    if cfg.sampling.k_min <= 0.0 || cfg.sampling.k_max < cfg.sampling.k_min {
        return bad("sampling k range must be positive and ordered".into());
    }
    if cfg.sampling.q == 0 {
        return bad("sampling.q must be at least 1".into());
    }
    if cfg.sampling.mu_set.is_empty()
        || cfg.sampling.xi_r_set.is_empty()
        || cfg.sampling.xi_i_set.is_empty()
    {
        return bad("snapshot grid sets must be nonempty".into());
    }
    if cfg.sampling.aux_k_count > 0 {
        if cfg.sampling.aux_k_count < 2 {
            return bad("sampling.aux_k_count must be 0 or at least 2".into());
        }
        if cfg.sampling.aux_xi_r_set.is_empty() || cfg.sampling.aux_xi_i_set.is_empty() {
            return bad("auxiliary snapshot grid sets must be nonempty".into());
        }
        if cfg.sampling.aux_amplitude <= 0.0 {
            return bad("sampling.aux_amplitude must be positive".into());
        }
    }
    for b in &cfg.cvar.betas {
        if !(0.0 < *b && *b < 1.0) {
            return bad(format!("cvar beta {b} not in (0,1)"));
        }
    }
    if cfg.cvar.eps <= 0.0 {
        return bad("cvar.eps must be positive".into());
    }
    if let PodSelect::Energy(t) = cfg.pod.select {
        if !(0.0 < t && t <= 1.0) {
            return bad(format!("pod.tau {t} not in (0,1]"));
        }
    }
    if cfg.validate.draws == 0 || cfg.validate.n_list.is_empty() {
        return bad("validate needs draws >= 1 and a nonempty n_list".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        parse_config(Path::new("test.ini"), text)
    }

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg.sampling.seed, 42);
        assert_eq!(cfg.sampling.q, 4000);
        assert!(matches!(cfg.pod.select, PodSelect::Energy(t) if t == 0.995));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = parse("[sampling]\nseeed = 1\n").unwrap_err();
        assert!(err.to_string().contains("seeed"), "{err}");
    }

    #[test]
    fn unknown_section_is_rejected() {
        assert!(parse("[samplng]\nseed = 1\n").is_err());
    }

    #[test]
    fn duplicate_key_is_rejected() {
        assert!(parse("[sampling]\nseed = 1\nseed = 2\n").is_err());
    }

    #[test]
    fn full_config_roundtrip() {
        let text = "\
[mesh]
length = 1.5
height = 0.75
liner_start = 0.4
liner_length = 0.6
h = 0.05

[sampling]
seed = 7
q = 64
k_count = 10
k_min = 4
k_max = 9
mu_set = 1, i, 1-0.5i
xi_r_set = 0.1, 1.0
xi_i_set = -0.1, -1.0
mu_r_min = 5
mu_r_max = 15
mu_i_min = 5
mu_i_max = 15

[pod]
mode = euclidean
n = 30

[solver]
method = gmres
tol = 1e-8
beta1 = 1.0
beta2 = 0.4
max_iter = 500

[cvar]
beta = 0.5, 0.9
eps = 1e-5
gamma = 1e-7
gamma_p = 12.5

[validate]
draws = 25
n_list = 5, 10

[output]
dir = artifacts
";
        let cfg = parse(text).unwrap();
        assert_eq!(cfg.mesh.h, 0.05);
        assert_eq!(cfg.sampling.mu_set, vec![(1.0, 0.0), (0.0, 1.0), (1.0, -0.5)]);
        assert!(matches!(cfg.pod.select, PodSelect::Rank(30)));
        assert!(matches!(
            cfg.solver.method,
            SolveMethod::GmresShiftedLaplacian { beta2, .. } if beta2 == 0.4
        ));
        assert_eq!(cfg.cvar.betas, vec![0.5, 0.9]);
        assert_eq!(cfg.cvar.gamma_p, Some(12.5));
        assert_eq!(cfg.output_dir, PathBuf::from("artifacts"));
    }

    #[test]
    fn tau_and_n_conflict() {
        assert!(parse("[pod]\ntau = 0.99\nn = 10\n").is_err());
    }

    #[test]
    fn complex_literals() {
        assert_eq!(parse_complex("1"), Some((1.0, 0.0)));
        assert_eq!(parse_complex("i"), Some((0.0, 1.0)));
        assert_eq!(parse_complex("-i"), Some((0.0, -1.0)));
        assert_eq!(parse_complex("2i"), Some((0.0, 2.0)));
        assert_eq!(parse_complex("1+2i"), Some((1.0, 2.0)));
        assert_eq!(parse_complex("1.5-0.5i"), Some((1.5, -0.5)));
        assert_eq!(parse_complex("1e-3+1e-2i"), Some((1e-3, 1e-2)));
        assert_eq!(parse_complex("3-i"), Some((3.0, -1.0)));
        assert_eq!(parse_complex("abc"), None);
    }

    #[test]
    fn invalid_beta_rejected() {
        assert!(parse("[cvar]\nbeta = 1.5\n").is_err());
    }
}
