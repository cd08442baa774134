//! Flat `key = value` run configuration.
//!
//! One key per line, `#` starts a comment. Unknown keys are rejected.
//!
//! ```text
//! mass = 1            # m
//! epsilon = 1e-4
//! d = 2
//! L = 16              # |l|_inf <= L
//! Kx = 2              # x-band of the symbol
//! M = 24              # |j| <= M
//! family = oscillatory             # constant | oscillatory | two-level
//! c_star = 0.3                     # constant, oscillatory
//! c1 = 0.3                         # two-level
//! c2 = 0.2                         # two-level
//! terms = cos:0.5:1,0:1; sin:0.3:1,1:2
//! omega = 1.3178097, 1.7229
//! gamma = 0.05
//! tau0 = 2.5
//! tau1 = 5
//! tau = 16
//! seed = 0
//! N0 = 3
//! max_iter = 8
//! target = 1e-10
//! s = 2.5             # KAM norm index, default s0 = floor((d+1)/2) + 1
//! T = 100
//! dt = 0.005
//! r = 0, 1, 2
//! initial = random-sobolev:2       # or mode:j
//! measure_set = chain
//! measure_gamma = 0.05
//! samples = 10000
//! sampler = random                 # random | halton
//! ```

use crate::kam::KamParams;
use crate::measure::{Sampler, SetKind};
use crate::simulate::InitialState;
use crate::wave::{Family, TrigTerm, Truncation, WaveConfig};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_end: f64,
    pub dt: f64,
    pub r_list: Vec<f64>,
    pub initial: InitialState,
    /// Number of sample times written to CSV.
    pub samples: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            t_end: 100.0,
            dt: 0.005,
            r_list: vec![0.0, 1.0, 2.0],
            initial: InitialState::RandomSobolev(2.0),
            samples: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureConfig {
    pub set: SetKind,
    /// Defaults to the model `gamma`.
    pub gamma: Option<f64>,
    pub samples: usize,
    pub sampler: Sampler,
    pub l_scan: Option<i32>,
    pub j_scan: Option<usize>,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig {
            set: SetKind::Chain,
            gamma: None,
            samples: 10_000,
            sampler: Sampler::Random,
            l_scan: None,
            j_scan: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub wave: WaveConfig,
    pub kam: KamParams,
    pub sim: SimConfig,
    pub measure: MeasureConfig,
    /// Accept a family failing its Condition checks (with a warning).
    pub unchecked: bool,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|x| parse(key, x)).collect()
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        text.parse()
    }

    /// The resolved configuration in the input format.
    pub fn to_text(&self) -> String {
        let w = &self.wave;
        let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", ");
        let terms = |t: &[TrigTerm]| t.iter().map(|t| t.to_string()).collect::<Vec<_>>().join("; ");
        let mut out = format!(
            "mass = {}\nepsilon = {}\nd = {}\nL = {}\nKx = {}\nM = {}\nfamily = {}\n",
            w.mass,
            w.epsilon,
            w.trunc.d,
            w.trunc.l_max,
            w.trunc.kx,
            w.trunc.m,
            w.family.name()
        );
        match &w.family {
            Family::Constant { c_star, lower } => out += &format!("c_star = {c_star}\nterms = {}\n", terms(lower)),
            Family::Oscillatory { c_star, terms: t } => out += &format!("c_star = {c_star}\nterms = {}\n", terms(t)),
            Family::TwoLevel { c1, c2, terms: t } => out += &format!("c1 = {c1}\nc2 = {c2}\nterms = {}\n", terms(t)),
        }
        out += &format!(
            "omega = {}\ngamma = {}\ntau0 = {}\ntau1 = {}\ntau = {}\nseed = {}\n",
            join(&w.omega),
            w.gamma,
            w.tau0,
            w.tau1,
            w.tau,
            w.seed
        );
        let k = &self.kam;
        out += &format!("N0 = {}\nmax_iter = {}\ntarget = {}\nfloor = {}\n", k.n0, k.max_iter, k.target, k.floor);
        if let Some(s) = k.s_norm {
            out += &format!("s = {s}\n");
        }
        let s = &self.sim;
        let init = match s.initial {
            InitialState::Mode(j) => format!("mode:{j}"),
            InitialState::RandomSobolev(r) => format!("random-sobolev:{r}"),
        };
        out += &format!(
            "T = {}\ndt = {}\nr = {}\ninitial = {init}\nsim_samples = {}\n",
            s.t_end,
            s.dt,
            join(&s.r_list),
            s.samples
        );
        let m = &self.measure;
        out += &format!("measure_set = {}\n", m.set);
        if let Some(g) = m.gamma {
            out += &format!("measure_gamma = {g}\n");
        }
        out += &format!(
            "samples = {}\nsampler = {}\n",
            m.samples,
            if m.sampler == Sampler::Random { "random" } else { "halton" }
        );
        if let Some(l) = m.l_scan {
            out += &format!("l_scan = {l}\n");
        }
        if let Some(j) = m.j_scan {
            out += &format!("j_scan = {j}\n");
        }
        out += &format!("unchecked = {}\n", self.unchecked);
        out
    }
}

impl FromStr for RunConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let k = k.trim().to_string();
            if kv.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", no + 1)));
            }
        }
        let mut take = |k: &str| kv.remove(k);
        let req = |k: &str, v: Option<String>| v.ok_or_else(|| Error::Config(format!("missing key `{k}`")));

        let d: usize = parse("d", &req("d", take("d"))?)?;
        let trunc = Truncation {
            d,
            l_max: parse("L", &req("L", take("L"))?)?,
            kx: parse("Kx", &req("Kx", take("Kx"))?)?,
            m: parse("M", &req("M", take("M"))?)?,
        };
        let terms = match take("terms") {
            Some(t) if !t.trim().is_empty() => TrigTerm::parse_list(&t)?,
            _ => vec![],
        };
        let family_name = req("family", take("family"))?;
        let c_star = take("c_star");
        let c1 = take("c1");
        let c2 = take("c2");
        let family = match family_name.as_str() {
            "constant" => Family::Constant {
                c_star: parse("c_star", &req("c_star", c_star)?)?,
                lower: terms,
            },
            "oscillatory" => Family::Oscillatory {
                c_star: parse("c_star", &req("c_star", c_star)?)?,
                terms,
            },
            "two-level" => Family::TwoLevel {
                c1: parse("c1", &req("c1", c1)?)?,
                c2: parse("c2", &req("c2", c2)?)?,
                terms,
            },
            other => return Err(Error::Config(format!("unknown family `{other}` (constant, oscillatory, two-level)"))),
        };
        let gamma: f64 = parse("gamma", &req("gamma", take("gamma"))?)?;
        let tau: f64 = parse("tau", &req("tau", take("tau"))?)?;
        let wave = WaveConfig {
            mass: parse("mass", &req("mass", take("mass"))?)?,
            epsilon: parse("epsilon", &req("epsilon", take("epsilon"))?)?,
            trunc,
            family,
            omega: parse_list("omega", &req("omega", take("omega"))?)?,
            gamma,
            tau0: parse("tau0", &req("tau0", take("tau0"))?)?,
            tau1: parse("tau1", &req("tau1", take("tau1"))?)?,
            tau,
            seed: take("seed").map(|v| parse("seed", &v)).transpose()?.unwrap_or(0),
        };

        let dk = KamParams::default();
        let kam = KamParams {
            n0: take("N0").map(|v| parse("N0", &v)).transpose()?.unwrap_or(dk.n0),
            max_iter: take("max_iter").map(|v| parse("max_iter", &v)).transpose()?.unwrap_or(dk.max_iter),
            target: take("target").map(|v| parse("target", &v)).transpose()?.unwrap_or(dk.target),
            gamma,
            tau,
            s_norm: take("s").map(|v| parse("s", &v)).transpose()?,
            floor: take("floor").map(|v| parse("floor", &v)).transpose()?.unwrap_or(dk.floor),
        };

        let ds = SimConfig::default();
        let sim = SimConfig {
            t_end: take("T").map(|v| parse("T", &v)).transpose()?.unwrap_or(ds.t_end),
            dt: take("dt").map(|v| parse("dt", &v)).transpose()?.unwrap_or(ds.dt),
            r_list: take("r").map(|v| parse_list("r", &v)).transpose()?.unwrap_or(ds.r_list),
            initial: take("initial").map(|v| v.parse()).transpose()?.unwrap_or(ds.initial),
            samples: take("sim_samples").map(|v| parse("sim_samples", &v)).transpose()?.unwrap_or(ds.samples),
        };

        let dm = MeasureConfig::default();
        let sampler = match take("sampler").as_deref() {
            None | Some("random") => Sampler::Random,
            Some("halton") => Sampler::Halton,
            Some(o) => return Err(Error::Config(format!("unknown sampler `{o}` (random, halton)"))),
        };
        let measure = MeasureConfig {
            set: take("measure_set").map(|v| v.parse()).transpose()?.unwrap_or(dm.set),
            gamma: take("measure_gamma").map(|v| parse("measure_gamma", &v)).transpose()?,
            samples: take("samples").map(|v| parse("samples", &v)).transpose()?.unwrap_or(dm.samples),
            sampler,
            l_scan: take("l_scan").map(|v| parse("l_scan", &v)).transpose()?,
            j_scan: take("j_scan").map(|v| parse("j_scan", &v)).transpose()?,
        };
        let unchecked = take("unchecked").map(|v| parse("unchecked", &v)).transpose()?.unwrap_or(false);

        if let Some(k) = kv.keys().next() {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
        Ok(RunConfig {
            wave,
            kam,
            sim,
            measure,
            unchecked,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const REF: &str = "
        # reference model
        mass = 1
        epsilon = 1e-4
        d = 2
        L = 16
        Kx = 2
        M = 24
        family = oscillatory
        c_star = 0.3
        terms = cos:0.5:1,0:1; cos:0.5:1,0:-1; cos:0.4:0,1:0; sin:0.3:1,1:2
        omega = 1.3178097, 1.7229   # inside [1,2]^2
        gamma = 0.05
        tau0 = 2.5
        tau1 = 5
        tau = 16
        N0 = 3
    ";

    #[test]
    fn parses_reference() {
        let c: RunConfig = REF.parse().unwrap();
        assert_eq!(c.wave.trunc, Truncation { d: 2, l_max: 16, kx: 2, m: 24 });
        assert_eq!(c.wave.omega, vec![1.3178097, 1.7229]);
        assert_eq!(c.kam.n0, 3.0);
        assert_eq!(c.kam.gamma, 0.05);
        match &c.wave.family {
            Family::Oscillatory { c_star, terms } => {
                assert_eq!(*c_star, 0.3);
                assert_eq!(terms.len(), 4);
            }
            f => panic!("{f:?}"),
        }
        c.wave.validate(1.0).unwrap();
    }

    #[test]
    fn text_round_trip() {
        let c: RunConfig = REF.parse().unwrap();
        let again: RunConfig = c.to_text().parse().unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn rejects_unknown_and_missing() {
        let e = format!("{REF}\nbogus = 1").parse::<RunConfig>().unwrap_err();
        assert!(e.to_string().contains("bogus"));
        let e = REF.replace("tau1 = 5", "").parse::<RunConfig>().unwrap_err();
        assert!(e.to_string().contains("tau1"));
        let e = REF.replace("M = 24", "M = x").parse::<RunConfig>().unwrap_err();
        assert!(e.to_string().contains("`M`"));
    }
}
