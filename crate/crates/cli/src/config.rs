//! JSON run configuration.  Every field has a default; the resolved value of every field is
//! echoed to `resolved_config.json` in the output directory.

use kgflow::nonlinearity::NonlinearityRecord;
use kgflow::solver::{DataKind, SolverConfig};
use kgflow::CubicNonlinearity;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub nonlinearity: Vec<NonlinearityRecord>,
    pub grid: GridSection,
    pub solver: SolverSection,
    pub frame: FrameSection,
    pub profile: ProfileSection,
    pub bench: BenchSection,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            nonlinearity: vec![],
            grid: GridSection::default(),
            solver: SolverSection::default(),
            frame: FrameSection::default(),
            profile: ProfileSection::default(),
            bench: BenchSection::default(),
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub n: usize,
    pub half_length: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { n: 4096, half_length: 256.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub dt: Option<f64>,
    pub t_end: f64,
    pub epsilon: f64,
    pub data: DataKind,
    pub amplitude: Option<f64>,
    pub sobolev_s: f64,
    pub rho: f64,
    pub sample_dt: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        SolverSection { dt: d.dt, t_end: d.t_end, epsilon: d.epsilon, data: d.data, amplitude: d.amplitude, sobolev_s: d.sobolev_s, rho: d.rho, sample_dt: d.sample_dt }
    }
}

impl SolverSection {
    pub fn to_solver(&self) -> SolverConfig {
        SolverConfig {
            dt: self.dt,
            t_end: self.t_end,
            epsilon: self.epsilon,
            data: self.data,
            amplitude: self.amplitude,
            sobolev_s: self.sobolev_s,
            rho: self.rho,
            sample_dt: self.sample_dt,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameSection {
    pub half_width: f64,
    pub xi_max: f64,
    pub gamma_width: f64,
}

impl Default for FrameSection {
    fn default() -> Self {
        let d = kgflow::profile::FrameOptions::default();
        FrameSection { half_width: d.half_width, xi_max: d.xi_max, gamma_width: d.gamma_width }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileSection {
    pub stations: Vec<f64>,
    pub delta0: f64,
    /// Phase regression window start; `null` means the last decade.
    pub t_min: Option<f64>,
    pub inverse_t: bool,
    /// Series CSV read by `fit-scattering` instead of running the solver.
    pub series: Option<String>,
    /// Times at which `extract-profile` records the normal-form remainders.
    pub normal_form_times: Vec<f64>,
}

impl Default for ProfileSection {
    fn default() -> Self {
        ProfileSection { stations: vec![0.0], delta0: kgflow::profile::DEFAULT_DELTA0, t_min: None, inverse_t: true, series: None, normal_form_times: vec![] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    L2ToL2,
    L2ToLinf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    /// Moyal orders `k`.
    pub orders: Vec<usize>,
    /// `h = 2^-e` for the Moyal bench.
    pub h_exponents: Vec<i32>,
    pub half_width: f64,
    pub xi_max: f64,
    /// Gaussian test symbols: width and the centre of the second one.
    pub sigma: f64,
    pub shift: [f64; 2],
    pub iterations: usize,
    pub target: Target,
    /// `h = 2^-e` for the operator-norm probe.
    pub probe_exponents: Vec<i32>,
    pub probe_width: f64,
    pub probe_half_width: f64,
    pub probe_xi_max: f64,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            orders: vec![0, 1, 2],
            h_exponents: (4..=9).collect(),
            half_width: 3.2,
            xi_max: 3.2,
            sigma: 0.4,
            shift: [0.25, -0.25],
            iterations: kgflow::semiclassical::POWER_ITERATIONS,
            target: Target::L2ToLinf,
            probe_exponents: (5..=10).collect(),
            probe_width: 0.3,
            probe_half_width: 1.2,
            probe_xi_max: 3.5,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let c: RunConfig = serde_json::from_str(text)?;
        Ok(c)
    }

    pub fn nonlinearity(&self) -> anyhow::Result<CubicNonlinearity> {
        Ok(CubicNonlinearity::from_records(&self.nonlinearity)?)
    }

    pub fn grid(&self) -> anyhow::Result<kgflow::Grid> {
        Ok(kgflow::Grid::new(self.grid.n, self.grid.half_length)?)
    }

    /// Checks that do not need any computation.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.nonlinearity()?;
        let g = self.grid()?;
        self.solver.to_solver().validate(&g)?;
        anyhow::ensure!(self.profile.delta0 > 0.0 && self.profile.delta0 < 0.5, "profile.delta0 must lie in (0, 1/2)");
        anyhow::ensure!(self.frame.half_width > 0.0 && self.frame.xi_max > 0.0 && self.frame.gamma_width > 0.0, "frame parameters must be positive");
        anyhow::ensure!(self.bench.orders.iter().all(|&k| k <= kgflow::semiclassical::MAX_MOYAL_ORDER), "bench.orders above 4");
        anyhow::ensure!(self.bench.sigma > 0.0 && self.bench.iterations > 0, "bench.sigma and bench.iterations must be positive");
        Ok(())
    }
}
