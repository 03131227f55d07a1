//! Multi-stage estimator: per-receiver TOA and spatial frequencies, spheroid
//! candidates, orientation line search and candidate selection, followed by
//! a maximum-likelihood refinement of the full state.

pub mod omega;
pub mod spheroid;
pub mod state;
pub mod toa;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Scenario, SpatialFreqs};
use crate::optim::QuasiNewtonOptions;
use crate::signal::{ObservationSet, PhaseProfile};

pub use omega::{estimate_omega, OmegaEstimate, SpatialSearch};
pub use spheroid::{spheroid_candidates, toa_only_position, CandidateSet, MeshOptions, RangeSumFix};
pub use state::{
    ml_cost, mle_refine, orientation_for_position, score_candidates, select_position, SelectionCost, Stage,
    StateEstimate,
};
pub use toa::{collapse_subcarriers, remove_delay, toa_coarse, toa_refine, ToaEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Spheroid-2 range-sum residual threshold `d_th` (m).
    pub d_th: f64,
    pub mesh_azimuth: usize,
    pub mesh_polar: usize,
    pub max_candidates: usize,
    /// Project candidates onto the exact two-spheroid intersection.
    pub snap_candidates: bool,
    pub omega_grid_step: f64,
    pub alpha_grid_step_deg: f64,
    pub qn_grad_tol: f64,
    pub qn_max_iter: usize,
    pub qn_rel_step: f64,
    pub selection_cost: SelectionCost,
    /// Run the final ML refinement.
    pub refine: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            d_th: 0.1,
            mesh_azimuth: 400,
            mesh_polar: 200,
            max_candidates: 500,
            snap_candidates: true,
            omega_grid_step: 0.02,
            alpha_grid_step_deg: 0.25,
            qn_grad_tol: 1e-10,
            qn_max_iter: 200,
            qn_rel_step: 1e-7,
            selection_cost: SelectionCost::Summed,
            refine: true,
        }
    }
}

impl EstimatorConfig {
    pub fn qn(&self) -> QuasiNewtonOptions {
        QuasiNewtonOptions {
            grad_tol: self.qn_grad_tol,
            max_iter: self.qn_max_iter,
            rel_step: self.qn_rel_step,
            lower: None,
            upper: None,
        }
    }

    pub fn mesh(&self) -> MeshOptions {
        MeshOptions {
            azimuth: self.mesh_azimuth,
            polar: self.mesh_polar,
            threshold: self.d_th,
            max_candidates: self.max_candidates,
            snap: self.snap_candidates,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("estimator: {what}")));
        if !(self.d_th > 0.0) {
            return bad("d_th must be positive");
        }
        if self.mesh_azimuth == 0 || self.mesh_polar == 0 || self.max_candidates == 0 {
            return bad("mesh sizes and max_candidates must be positive");
        }
        if !(self.omega_grid_step > 0.0 && self.omega_grid_step <= 2.0) {
            return bad("omega_grid_step must lie in (0, 2]");
        }
        if !(self.alpha_grid_step_deg > 0.0 && self.alpha_grid_step_deg <= 360.0) {
            return bad("alpha_grid_step_deg must lie in (0, 360]");
        }
        if !(self.qn_grad_tol > 0.0 && self.qn_rel_step > 0.0) || self.qn_max_iter == 0 {
            return bad("optimizer tolerances must be positive");
        }
        Ok(())
    }
}

/// Every intermediate estimate of one pipeline run.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineOutput {
    pub toa: Vec<ToaEstimate>,
    pub omega: Vec<OmegaEstimate>,
    pub num_candidates: usize,
    pub coarse: StateEstimate,
    /// Equal to `coarse` re-labelled when refinement is disabled.
    pub refined: StateEstimate,
}

impl PipelineOutput {
    pub fn delays(&self) -> Vec<f64> {
        self.toa.iter().map(|t| t.delay).collect()
    }

    pub fn spatial_freqs(&self) -> Vec<SpatialFreqs> {
        self.omega.iter().map(|o| o.omega).collect()
    }
}

/// Profile-dependent state reused across trials.
#[derive(Debug, Clone)]
pub struct Estimator {
    pub scenario: Scenario,
    pub profile: PhaseProfile,
    pub config: EstimatorConfig,
    search: SpatialSearch,
}

impl Estimator {
    pub fn new(scenario: Scenario, profile: PhaseProfile, config: EstimatorConfig) -> Result<Self> {
        scenario.validate()?;
        config.validate()?;
        if profile.num_symbols() < 2 {
            return Err(Error::InvalidArgument("at least two symbols are needed".into()));
        }
        let search = SpatialSearch::new(&scenario, &profile, config.omega_grid_step)?;
        Ok(Estimator { scenario, profile, config, search })
    }

    /// Per-receiver TOA, delay removal, collapse and spatial-frequency stages.
    pub fn channel_stage(&self, obs: &ObservationSet) -> Result<(Vec<ToaEstimate>, Vec<Vec<Complex64>>, Vec<OmegaEstimate>)> {
        let sc = &self.scenario;
        if obs.y.len() != sc.num_receivers() {
            return Err(Error::InvalidArgument("observation set does not match receiver count".into()));
        }
        let opts = self.config.qn();
        let mut toas = Vec::new();
        let mut collapsed = Vec::new();
        let mut omegas = Vec::new();
        for y in &obs.y {
            let k = toa_coarse(y, sc.ifft_size)?;
            let t = toa_refine(y, k, sc, &opts);
            let yr = collapse_subcarriers(&remove_delay(y, t.delay, sc.subcarrier_spacing));
            omegas.push(estimate_omega(&yr, &self.profile, &self.search, sc, &opts)?);
            toas.push(t);
            collapsed.push(yr);
        }
        Ok((toas, collapsed, omegas))
    }

    pub fn run(&self, obs: &ObservationSet) -> Result<PipelineOutput> {
        let sc = &self.scenario;
        let opts = self.config.qn();
        let (toa, collapsed, omega) = self.channel_stage(obs)?;
        let delays: Vec<f64> = toa.iter().map(|t| t.delay).collect();
        let cands = spheroid_candidates(&delays, sc, &self.config.mesh())?;
        let w: Vec<SpatialFreqs> = omega.iter().map(|o| o.omega).collect();
        let coarse = select_position(
            &cands.points,
            &collapsed,
            &w,
            obs,
            &self.profile,
            sc,
            self.config.alpha_grid_step_deg.to_radians(),
            self.config.selection_cost,
            &opts,
        )?;
        let refined = if self.config.refine {
            mle_refine(obs, &coarse, &self.profile, sc, &opts)?
        } else {
            StateEstimate { stage: Stage::Refined, ..coarse.clone() }
        };
        Ok(PipelineOutput { toa, omega, num_candidates: cands.points.len(), coarse, refined })
    }
}
