//! Mode selection and resource allocation, one cell at a time.
//!
//! All three schemes first give the cell's cellular UEs orthogonal RBs in
//! index order, then walk the D2D candidates in ascending index. While a
//! free RB remains the candidate takes it (dedicated) and picks its mode
//! from the two path gains; afterwards it must reuse an occupied RB in
//! direct mode:
//!
//! * MinInterf picks the RB minimising the intracell interference score;
//! * BRA picks uniformly among the least reused RBs;
//! * CPA picks, among the least reused RBs, the one whose cellular-mode
//!   transmitter has the strongest gain to the BS.
//!
//! Ties are broken by lowest RB index everywhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{LinkKind, Mode, Receiver, Scenario};
use crate::units::linear_to_db;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModePolicy {
    ForcedCellular,
    #[serde(rename = "forced_d2d")]
    ForcedD2d,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RaScheme {
    MinInterf,
    #[serde(rename = "BRA")]
    Bra,
    #[serde(rename = "CPA")]
    Cpa,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RaError {
    #[error("cell {cell} has {ues} cellular UEs but only {rbs} RBs")]
    TooManyUes { cell: usize, ues: usize, rbs: usize },
    #[error("forced cellular mode needs {links} orthogonal RBs in cell {cell}, only {rbs} exist")]
    InfeasibleOrthogonality { cell: usize, links: usize, rbs: usize },
    #[error("allocation constraint violated: {0}")]
    Violation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub rb: usize,
    pub mode: Mode,
    /// Took a previously unused RB of its cell.
    pub dedicated: bool,
}

/// Assignment of every link to one RB and mode, plus per-cell reuse
/// counters `ρ_j` (number of intracell transmitters on RB `j`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub num_rbs: usize,
    pub policy: ModePolicy,
    pub links: Vec<Option<Assignment>>,
    pub reuse: Vec<Vec<u32>>,
}

/// One decision of the heuristics, for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ModeDecision {
    pub link: usize,
    pub mode: Mode,
    pub rb: usize,
    pub dedicated: bool,
}

impl Allocation {
    pub fn from_assignments(scenario: &Scenario, policy: ModePolicy, links: Vec<Option<Assignment>>) -> Self {
        let num_rbs = scenario.geometry.num_rbs;
        let mut reuse = vec![vec![0u32; num_rbs]; scenario.num_cells()];
        for (id, a) in links.iter().enumerate() {
            if let Some(a) = a {
                reuse[scenario.links[id].cell][a.rb] += 1;
            }
        }
        Self { num_rbs, policy, links, reuse }
    }

    pub fn decisions(&self) -> impl Iterator<Item = ModeDecision> + '_ {
        self.links
            .iter()
            .enumerate()
            .filter_map(|(link, a)| a.map(|a| ModeDecision { link, mode: a.mode, rb: a.rb, dedicated: a.dedicated }))
    }

    /// Check the allocation constraints: every link holds exactly one
    /// (RB, mode) pair, at most one cellular-mode transmitter per RB per
    /// cell, cellular UEs never in direct mode, the reuse counters match,
    /// and the mode policy is honoured.
    pub fn check(&self, scenario: &Scenario) -> Result<(), RaError> {
        let fail = |msg: String| Err(RaError::Violation(msg));
        if self.links.len() != scenario.num_links() {
            return fail(format!("{} slots for {} links", self.links.len(), scenario.num_links()));
        }
        let cells = scenario.num_cells();
        let mut cellular_on = vec![vec![0u32; self.num_rbs]; cells];
        let mut count = vec![vec![0u32; self.num_rbs]; cells];
        for (id, slot) in self.links.iter().enumerate() {
            let Some(a) = slot else {
                return fail(format!("link {id} unassigned"));
            };
            if a.rb >= self.num_rbs {
                return fail(format!("link {id} on RB {} of {}", a.rb, self.num_rbs));
            }
            let link = &scenario.links[id];
            if link.kind == LinkKind::Cellular && a.mode == Mode::Direct {
                return fail(format!("cellular UE {id} in direct mode"));
            }
            match (self.policy, link.kind, a.mode) {
                (ModePolicy::ForcedCellular, LinkKind::D2d, Mode::Direct) => {
                    return fail(format!("D2D link {id} direct under forced cellular mode"))
                }
                (ModePolicy::ForcedD2d, LinkKind::D2d, Mode::Cellular) => {
                    return fail(format!("D2D link {id} cellular under forced D2D mode"))
                }
                _ => {}
            }
            count[link.cell][a.rb] += 1;
            if a.mode == Mode::Cellular {
                cellular_on[link.cell][a.rb] += 1;
            }
        }
        for cell in 0..cells {
            for rb in 0..self.num_rbs {
                if cellular_on[cell][rb] > 1 {
                    return fail(format!("cell {cell} RB {rb} carries {} cellular-mode links", cellular_on[cell][rb]));
                }
                if self.policy == ModePolicy::ForcedCellular && count[cell][rb] > 1 {
                    return fail(format!("cell {cell} RB {rb} reused under forced cellular mode"));
                }
            }
        }
        if self.reuse != count {
            return fail("reuse counters disagree with assignments".into());
        }
        Ok(())
    }
}

/// Working state of one cell while candidates are placed.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAllocation {
    pub cell: usize,
    pub rho: Vec<u32>,
    /// (link, mode) of every transmitter already on each RB.
    pub occupants: Vec<Vec<(usize, Mode)>>,
    /// Gain to the BS of the cellular-mode transmitter on each RB.
    pub bs_gain: Vec<Option<f64>>,
    pub assignments: Vec<(usize, Assignment)>,
}

impl CellAllocation {
    fn place(&mut self, scenario: &Scenario, link: usize, rb: usize, mode: Mode) {
        let dedicated = self.rho[rb] == 0;
        self.rho[rb] += 1;
        self.occupants[rb].push((link, mode));
        if mode == Mode::Cellular {
            self.bs_gain[rb] = Some(scenario.gain_to_serving_bs(link));
        }
        self.assignments.push((link, Assignment { rb, mode, dedicated }));
    }

    fn first_free(&self) -> Option<usize> {
        self.rho.iter().position(|&r| r == 0)
    }

    fn least_reused(&self) -> Vec<usize> {
        let min = self.rho.iter().copied().min().unwrap_or(0);
        (0..self.rho.len()).filter(|&j| self.rho[j] == min).collect()
    }
}

/// Orthogonal RBs for the cell's cellular UEs, UE `i` on RB `i`.
pub fn allocate_cellular_legacy(scenario: &Scenario, cell: usize) -> Result<CellAllocation, RaError> {
    let rbs = scenario.geometry.num_rbs;
    let ues: Vec<usize> = scenario.links_in_cell(cell).filter(|l| l.kind == LinkKind::Cellular).map(|l| l.id).collect();
    if ues.len() > rbs {
        return Err(RaError::TooManyUes { cell, ues: ues.len(), rbs });
    }
    let mut plan = CellAllocation {
        cell,
        rho: vec![0; rbs],
        occupants: vec![Vec::new(); rbs],
        bs_gain: vec![None; rbs],
        assignments: Vec::new(),
    };
    for (rb, &ue) in ues.iter().enumerate() {
        plan.place(scenario, ue, rb, Mode::Cellular);
    }
    Ok(plan)
}

/// Mode of a D2D candidate on a dedicated RB: direct iff the pair gain is
/// at least the gain to the BS.
pub fn mode_select_dedicated(g_cellular: f64, g_d2d: f64) -> Mode {
    if g_cellular <= g_d2d {
        Mode::Direct
    } else {
        Mode::Cellular
    }
}

fn dedicated_mode(scenario: &Scenario, link: usize, policy: ModePolicy) -> Mode {
    match policy {
        ModePolicy::ForcedCellular => Mode::Cellular,
        ModePolicy::ForcedD2d => Mode::Direct,
        ModePolicy::Adaptive => mode_select_dedicated(
            scenario.gain_to_serving_bs(link),
            scenario.d2d_gain(link).expect("D2D candidate has a receiver"),
        ),
    }
}

/// Interference score of putting candidate `cand` on an RB whose current
/// transmitters are `occupants`: the gain from the candidate to the
/// incumbent receivers plus the gain from the incumbent transmitters to
/// the candidate's receiver, each in dB. With several incumbents each term
/// aggregates their linear gains before conversion.
pub fn interference_score(scenario: &Scenario, cand: usize, occupants: &[(usize, Mode)]) -> f64 {
    let caused: f64 = occupants.iter().map(|&(k, mode)| scenario.gain(cand, scenario.receiver(k, mode))).sum();
    let suffered: f64 = occupants.iter().map(|&(k, _)| scenario.gain(k, Receiver::D2dRx(cand))).sum();
    linear_to_db(caused) + linear_to_db(suffered)
}

fn cell_candidates(scenario: &Scenario, cell: usize) -> Vec<usize> {
    scenario.links_in_cell(cell).filter(|l| l.kind == LinkKind::D2d).map(|l| l.id).collect()
}

fn check_forced_cellular(scenario: &Scenario, cell: usize, policy: ModePolicy) -> Result<(), RaError> {
    let links = scenario.links_in_cell(cell).count();
    let rbs = scenario.geometry.num_rbs;
    if policy == ModePolicy::ForcedCellular && links > rbs {
        return Err(RaError::InfeasibleOrthogonality { cell, links, rbs });
    }
    Ok(())
}

/// Runs `reuse_pick` for every candidate that finds no free RB.
fn allocate_with<F>(scenario: &Scenario, policy: ModePolicy, mut reuse_pick: F) -> Result<Allocation, RaError>
where
    F: FnMut(&CellAllocation, usize) -> usize,
{
    let mut links = vec![None; scenario.num_links()];
    for cell in 0..scenario.num_cells() {
        check_forced_cellular(scenario, cell, policy)?;
        let mut plan = allocate_cellular_legacy(scenario, cell)?;
        for cand in cell_candidates(scenario, cell) {
            match plan.first_free() {
                Some(rb) => {
                    let mode = dedicated_mode(scenario, cand, policy);
                    plan.place(scenario, cand, rb, mode);
                }
                None => {
                    let rb = reuse_pick(&plan, cand);
                    plan.place(scenario, cand, rb, Mode::Direct);
                }
            }
        }
        for (id, a) in plan.assignments {
            links[id] = Some(a);
        }
    }
    Ok(Allocation::from_assignments(scenario, policy, links))
}

/// MinInterf: reuse the RB with the lowest interference score.
pub fn min_interf(scenario: &Scenario, policy: ModePolicy) -> Result<Allocation, RaError> {
    allocate_with(scenario, policy, |plan, cand| {
        let mut best = (0, f64::INFINITY);
        for (j, occ) in plan.occupants.iter().enumerate() {
            let s = interference_score(scenario, cand, occ);
            if s < best.1 {
                best = (j, s);
            }
        }
        best.0
    })
}

/// Balanced random allocation: reuse a uniformly drawn least-reused RB.
pub fn bra(scenario: &Scenario, policy: ModePolicy, seed: u64) -> Result<Allocation, RaError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    allocate_with(scenario, policy, |plan, _| {
        let pool = plan.least_reused();
        pool[rng.random_range(0..pool.len())]
    })
}

/// Cellular protection allocation: among the least reused RBs, reuse the
/// one whose cellular-mode transmitter is strongest at the BS. RBs without
/// a cellular-mode transmitter rank last.
pub fn cpa(scenario: &Scenario, policy: ModePolicy) -> Result<Allocation, RaError> {
    allocate_with(scenario, policy, |plan, _| cpa_pick(plan))
}

fn cpa_pick(plan: &CellAllocation) -> usize {
    let pool = plan.least_reused();
    let mut best = pool[0];
    for &j in &pool[1..] {
        let better = match (plan.bs_gain[j], plan.bs_gain[best]) {
            (Some(g), Some(b)) => g > b,
            (Some(_), None) => true,
            _ => false,
        };
        if better {
            best = j;
        }
    }
    best
}

/// Run `scheme` under `policy`. `seed` only matters for BRA.
pub fn allocate(scenario: &Scenario, scheme: RaScheme, policy: ModePolicy, seed: u64) -> Result<Allocation, RaError> {
    match scheme {
        RaScheme::MinInterf => min_interf(scenario, policy),
        RaScheme::Bra => bra(scenario, policy, seed),
        RaScheme::Cpa => cpa(scenario, policy),
    }
}

/// Impose a mode policy on an existing allocation.
///
/// Forced cellular moves every D2D candidate to its own free RB in
/// cellular mode, keeping cellular UEs where they are; forced D2D switches
/// candidates to direct mode on their current RB.
pub fn apply_mode_policy(
    scenario: &Scenario,
    allocation: &Allocation,
    policy: ModePolicy,
) -> Result<Allocation, RaError> {
    let mut links = allocation.links.clone();
    match policy {
        ModePolicy::Adaptive => {}
        ModePolicy::ForcedD2d => {
            for (id, slot) in links.iter_mut().enumerate() {
                if let (Some(a), LinkKind::D2d) = (slot.as_mut(), scenario.links[id].kind) {
                    a.mode = Mode::Direct;
                }
            }
        }
        ModePolicy::ForcedCellular => {
            for cell in 0..scenario.num_cells() {
                check_forced_cellular(scenario, cell, policy)?;
                let mut used = vec![false; allocation.num_rbs];
                for l in scenario.links_in_cell(cell).filter(|l| l.kind == LinkKind::Cellular) {
                    if let Some(a) = links[l.id] {
                        used[a.rb] = true;
                    }
                }
                for l in scenario.links_in_cell(cell).filter(|l| l.kind == LinkKind::D2d) {
                    let rb = used.iter().position(|u| !u).expect("orthogonality checked");
                    used[rb] = true;
                    links[l.id] = Some(Assignment { rb, mode: Mode::Cellular, dedicated: true });
                }
            }
        }
    }
    Ok(Allocation::from_assignments(scenario, policy, links))
}
