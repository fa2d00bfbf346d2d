//! Multi-cell drops and path gains.
//!
//! Base stations sit on a hexagonal grid (centre cell first, then ring by
//! ring) with inter-site distance `sqrt(3) * cell_radius`; there is no
//! wrap-around. Every drop places cellular UEs and D2D transmitters
//! uniformly in the disc of their cell, and each D2D receiver at a uniform
//! distance from its transmitter inside `d2d_distance_range`.
//!
//! Shadowing is drawn once per (transmitter, receiver) pair and is flat
//! across resource blocks, so a single gain table serves every RB.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{ensure, InvalidParam};
use crate::ra::Allocation;
use crate::units::{db_to_linear, dbm_to_watts};

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("path gain undefined for non-positive distance {0} m")]
    NonPositiveDistance(f64),
    #[error("link {0} has no resource block assigned")]
    Unallocated(usize),
    #[error("allocation covers {allocation} links but the scenario has {scenario}")]
    SizeMismatch { allocation: usize, scenario: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub num_cells: usize,
    /// metres
    pub cell_radius: f64,
    pub ues_per_cell: usize,
    pub d2d_pairs_per_cell: usize,
    /// metres, `[min, max]`
    pub d2d_distance_range: [f64; 2],
    pub num_rbs: usize,
    /// Hz
    pub system_bandwidth: f64,
    /// Hz; not used by the propagation model
    pub carrier_frequency: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            num_cells: 7,
            cell_radius: 500.0,
            ues_per_cell: 6,
            d2d_pairs_per_cell: 6,
            d2d_distance_range: [50.0, 100.0],
            num_rbs: 8,
            system_bandwidth: 5e6,
            carrier_frequency: 2e9,
        }
    }
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<(), InvalidParam> {
        ensure(self.num_cells >= 1, "num_cells", "must be at least 1")?;
        ensure(
            self.cell_radius.is_finite() && self.cell_radius > 0.0,
            "cell_radius",
            "must be a positive number of metres",
        )?;
        ensure(
            self.ues_per_cell + self.d2d_pairs_per_cell >= 1,
            "ues_per_cell",
            "a cell needs at least one transmitter",
        )?;
        let [lo, hi] = self.d2d_distance_range;
        ensure(
            lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi,
            "d2d_distance_range",
            "must satisfy 0 < min <= max",
        )?;
        ensure(self.num_rbs >= 1, "num_rbs", "must be at least 1")?;
        ensure(
            self.system_bandwidth.is_finite() && self.system_bandwidth > 0.0,
            "system_bandwidth",
            "must be positive",
        )?;
        ensure(self.carrier_frequency > 0.0, "carrier_frequency", "must be positive")
    }

    /// Bandwidth of one resource block in Hz.
    pub fn rb_bandwidth(&self) -> f64 {
        self.system_bandwidth / self.num_rbs as f64
    }

    pub fn links_per_cell(&self) -> usize {
        self.ues_per_cell + self.d2d_pairs_per_cell
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub gain_at_1m_db: f64,
    pub pathloss_exponent: f64,
    pub shadowing_stddev_db: f64,
    pub noise_power_dbm: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { gain_at_1m_db: -37.0, pathloss_exponent: 3.5, shadowing_stddev_db: 6.0, noise_power_dbm: -114.0 }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), InvalidParam> {
        ensure(self.gain_at_1m_db.is_finite(), "gain_at_1m_db", "must be finite")?;
        ensure(
            self.pathloss_exponent.is_finite() && self.pathloss_exponent > 0.0,
            "pathloss_exponent",
            "must be positive",
        )?;
        ensure(
            self.shadowing_stddev_db.is_finite() && self.shadowing_stddev_db >= 0.0,
            "shadowing_stddev_db",
            "must be non-negative",
        )?;
        ensure(self.noise_power_dbm.is_finite(), "noise_power_dbm", "must be finite")
    }

    /// Thermal noise per RB in watts.
    pub fn noise_w(&self) -> f64 {
        dbm_to_watts(self.noise_power_dbm)
    }
}

/// Linear path gain for a link of length `distance` metres with the given
/// shadowing realisation. Distances below 1 m are treated as 1 m.
pub fn path_gain(distance: f64, shadow_db: f64, channel: &ChannelConfig) -> Result<f64, TopologyError> {
    if distance.is_nan() || distance <= 0.0 {
        return Err(TopologyError::NonPositiveDistance(distance));
    }
    let d = distance.max(1.0);
    let gain_db = channel.gain_at_1m_db - 10.0 * channel.pathloss_exponent * d.log10() + shadow_db;
    Ok(db_to_linear(gain_db))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    /// Ordinary cellular UE, always served by its BS.
    Cellular,
    /// D2D candidate pair; may talk directly or through the BS.
    D2d,
}

/// Communication mode of a link on its RB (`q` in the allocation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Cellular,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Receiver {
    Bs(usize),
    /// The D2D receiver belonging to the given link.
    D2dRx(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: usize,
    pub cell: usize,
    pub kind: LinkKind,
    pub tx: Point,
    pub d2d_rx: Option<Point>,
}

/// One Monte Carlo drop: node positions plus the full transmitter ×
/// receiver gain table.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub geometry: GeometryConfig,
    pub channel: ChannelConfig,
    pub base_stations: Vec<Point>,
    /// Ordered by cell, cellular UEs before D2D candidates inside a cell.
    pub links: Vec<Link>,
    rx_column: Vec<Option<usize>>,
    num_rx: usize,
    gains: Vec<f64>,
}

/// BS positions on a hexagonal grid, centre first and then ring by ring.
pub fn hex_sites(num_cells: usize, cell_radius: f64) -> Vec<Point> {
    let isd = 3f64.sqrt() * cell_radius;
    let to_point =
        |q: i64, r: i64| Point { x: isd * (q as f64 + r as f64 / 2.0), y: isd * (r as f64 * 3f64.sqrt() / 2.0) };
    let directions = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)];
    let mut sites = vec![to_point(0, 0)];
    let mut radius = 1i64;
    while sites.len() < num_cells {
        // walk the ring starting from the hex `radius` steps in direction 4
        let (mut q, mut r) = (directions[4].0 * radius, directions[4].1 * radius);
        for &(dq, dr) in &directions {
            for _ in 0..radius {
                sites.push(to_point(q, r));
                q += dq;
                r += dr;
            }
        }
        radius += 1;
    }
    sites.truncate(num_cells);
    sites
}

fn uniform_in_disc<R: Rng>(rng: &mut R, centre: Point, radius: f64) -> Point {
    let rho = radius * rng.random::<f64>().sqrt();
    let theta = rng.random::<f64>() * std::f64::consts::TAU;
    Point { x: centre.x + rho * theta.cos(), y: centre.y + rho * theta.sin() }
}

/// Generate one drop. Deterministic in `(geometry, channel, seed)`.
///
/// The configs are assumed valid; see [`GeometryConfig::validate`].
pub fn generate_drop(geometry: &GeometryConfig, channel: &ChannelConfig, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base_stations = hex_sites(geometry.num_cells, geometry.cell_radius);
    let [dmin, dmax] = geometry.d2d_distance_range;

    let mut links = Vec::with_capacity(geometry.num_cells * geometry.links_per_cell());
    for (cell, bs) in base_stations.iter().enumerate() {
        for _ in 0..geometry.ues_per_cell {
            let tx = uniform_in_disc(&mut rng, *bs, geometry.cell_radius);
            links.push(Link { id: links.len(), cell, kind: LinkKind::Cellular, tx, d2d_rx: None });
        }
        for _ in 0..geometry.d2d_pairs_per_cell {
            let tx = uniform_in_disc(&mut rng, *bs, geometry.cell_radius);
            let d = if dmax > dmin { rng.random_range(dmin..=dmax) } else { dmin };
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            let rx = Point { x: tx.x + d * theta.cos(), y: tx.y + d * theta.sin() };
            links.push(Link { id: links.len(), cell, kind: LinkKind::D2d, tx, d2d_rx: Some(rx) });
        }
    }

    let mut rx_column = vec![None; links.len()];
    let mut rx_points = base_stations.clone();
    for link in &links {
        if let Some(rx) = link.d2d_rx {
            rx_column[link.id] = Some(rx_points.len());
            rx_points.push(rx);
        }
    }

    let shadow = Normal::new(0.0, channel.shadowing_stddev_db).expect("validated shadowing stddev");
    let num_rx = rx_points.len();
    let mut gains = Vec::with_capacity(links.len() * num_rx);
    for link in &links {
        for rx in &rx_points {
            let s = shadow.sample(&mut rng);
            // co-located nodes fall back to the 1 m clamp
            let d = link.tx.distance(rx).max(f64::MIN_POSITIVE);
            gains.push(path_gain(d, s, channel).expect("positive distance"));
        }
    }

    Scenario { geometry: geometry.clone(), channel: channel.clone(), base_stations, links, rx_column, num_rx, gains }
}

impl Scenario {
    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn num_cells(&self) -> usize {
        self.base_stations.len()
    }

    /// Linear gain from the transmitter of `tx_link` to `rx`.
    pub fn gain(&self, tx_link: usize, rx: Receiver) -> f64 {
        let col = match rx {
            Receiver::Bs(cell) => cell,
            Receiver::D2dRx(link) => self.rx_column[link].expect("link has no D2D receiver"),
        };
        self.gains[tx_link * self.num_rx + col]
    }

    /// Gain from the transmitter of `link` to the BS of its own cell.
    pub fn gain_to_serving_bs(&self, link: usize) -> f64 {
        self.gain(link, Receiver::Bs(self.links[link].cell))
    }

    /// Gain between the two ends of a D2D pair; `None` for cellular UEs.
    pub fn d2d_gain(&self, link: usize) -> Option<f64> {
        self.rx_column[link].map(|_| self.gain(link, Receiver::D2dRx(link)))
    }

    /// Receiver that decodes `link` when it transmits in `mode`.
    pub fn receiver(&self, link: usize, mode: Mode) -> Receiver {
        match mode {
            Mode::Cellular => Receiver::Bs(self.links[link].cell),
            Mode::Direct => Receiver::D2dRx(link),
        }
    }

    pub fn links_in_cell(&self, cell: usize) -> impl Iterator<Item = &Link> {
        self.links.iter().filter(move |l| l.cell == cell)
    }

    pub fn noise_w(&self) -> f64 {
        self.channel.noise_w()
    }
}

/// All links that share one RB network-wide, with the gains seen by the
/// receivers their modes imply.
#[derive(Debug, Clone, PartialEq)]
pub struct CochannelGroup {
    pub rb: usize,
    pub members: Vec<usize>,
    pub kinds: Vec<LinkKind>,
    pub modes: Vec<Mode>,
    /// `gains[(a, b)]`: gain from the transmitter of member `b` to the
    /// receiver of member `a`.
    pub gains: DMatrix<f64>,
    pub noise: Vec<f64>,
    /// Gain from each member's transmitter to its serving BS.
    pub gain_to_bs: Vec<f64>,
    /// Hz
    pub bandwidth: f64,
}

impl CochannelGroup {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Partition the allocated links by RB. Empty RBs produce no group.
pub fn build_cochannel_groups(
    scenario: &Scenario,
    allocation: &Allocation,
) -> Result<Vec<CochannelGroup>, TopologyError> {
    if allocation.links.len() != scenario.num_links() {
        return Err(TopologyError::SizeMismatch { allocation: allocation.links.len(), scenario: scenario.num_links() });
    }
    let mut per_rb: Vec<Vec<(usize, Mode)>> = vec![Vec::new(); scenario.geometry.num_rbs];
    for (id, slot) in allocation.links.iter().enumerate() {
        let a = slot.as_ref().ok_or(TopologyError::Unallocated(id))?;
        per_rb[a.rb].push((id, a.mode));
    }

    let noise = scenario.noise_w();
    let bandwidth = scenario.geometry.rb_bandwidth();
    let groups = per_rb
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(rb, members)| {
            let n = members.len();
            let receivers: Vec<Receiver> = members.iter().map(|&(id, mode)| scenario.receiver(id, mode)).collect();
            let gains = DMatrix::from_fn(n, n, |a, b| scenario.gain(members[b].0, receivers[a]));
            CochannelGroup {
                rb,
                kinds: members.iter().map(|&(id, _)| scenario.links[id].kind).collect(),
                modes: members.iter().map(|&(_, m)| m).collect(),
                gain_to_bs: members.iter().map(|&(id, _)| scenario.gain_to_serving_bs(id)).collect(),
                members: members.into_iter().map(|(id, _)| id).collect(),
                gains,
                noise: vec![noise; n],
                bandwidth,
            }
        })
        .collect();
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ra::{Allocation, Assignment, ModePolicy};

    #[test]
    fn path_gain_at_one_metre() {
        let ch = ChannelConfig::default();
        let g = path_gain(1.0, 0.0, &ch).unwrap();
        assert!((g - 10f64.powf(-3.7)).abs() < 1e-18);
        assert!((g - 1.995e-4).abs() < 1e-7);
    }

    #[test]
    fn path_gain_at_ten_metres() {
        let ch = ChannelConfig::default();
        let g = path_gain(10.0, 0.0, &ch).unwrap();
        assert!((crate::units::linear_to_db(g) + 72.0).abs() < 1e-12);
    }

    #[test]
    fn path_gain_clamps_below_one_metre() {
        let ch = ChannelConfig::default();
        assert_eq!(path_gain(0.5, 0.0, &ch).unwrap(), path_gain(1.0, 0.0, &ch).unwrap());
        assert_eq!(path_gain(0.0, 0.0, &ch), Err(TopologyError::NonPositiveDistance(0.0)));
        assert!(path_gain(-3.0, 0.0, &ch).is_err());
    }

    #[test]
    fn shadowing_adds_in_db() {
        let ch = ChannelConfig::default();
        let g0 = path_gain(40.0, 0.0, &ch).unwrap();
        let g6 = path_gain(40.0, 6.0, &ch).unwrap();
        assert!((crate::units::linear_to_db(g6 / g0) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn default_drop_has_84_links() {
        let s = generate_drop(&GeometryConfig::default(), &ChannelConfig::default(), 1);
        assert_eq!(s.num_links(), 84);
        assert_eq!(s.num_cells(), 7);
        for l in &s.links {
            if let Some(rx) = l.d2d_rx {
                let d = l.tx.distance(&rx);
                assert!((50.0 - 1e-9..=100.0 + 1e-9).contains(&d), "pair distance {d}");
            }
            let bs = s.base_stations[l.cell];
            assert!(l.tx.distance(&bs) <= 500.0 + 1e-9);
        }
    }

    #[test]
    fn degenerate_single_link_drop() {
        let geo = GeometryConfig { num_cells: 1, ues_per_cell: 1, d2d_pairs_per_cell: 0, ..Default::default() };
        let s = generate_drop(&geo, &ChannelConfig::default(), 3);
        assert_eq!(s.num_links(), 1);
        assert_eq!(s.gains.len(), 1);
        assert!(s.gain_to_serving_bs(0) > 0.0);
        assert_eq!(s.d2d_gain(0), None);
    }

    #[test]
    fn drops_are_deterministic() {
        let geo = GeometryConfig::default();
        let ch = ChannelConfig::default();
        assert_eq!(generate_drop(&geo, &ch, 9), generate_drop(&geo, &ch, 9));
        assert_ne!(generate_drop(&geo, &ch, 9), generate_drop(&geo, &ch, 10));
    }

    #[test]
    fn hex_layout_geometry() {
        let sites = hex_sites(7, 500.0);
        let isd = 3f64.sqrt() * 500.0;
        for s in &sites[1..] {
            assert!((s.distance(&sites[0]) - isd).abs() < 1e-9);
        }
        // neighbouring ring sites are also one ISD apart
        assert!((sites[1].distance(&sites[2]) - isd).abs() < 1e-9);
        let nineteen = hex_sites(19, 500.0);
        assert_eq!(nineteen.len(), 19);
        for (i, a) in nineteen.iter().enumerate() {
            for b in &nineteen[i + 1..] {
                assert!(a.distance(b) > isd - 1e-6);
            }
        }
    }

    fn two_cell_one_ue() -> Scenario {
        let geo = GeometryConfig { num_cells: 2, ues_per_cell: 1, d2d_pairs_per_cell: 0, ..Default::default() };
        generate_drop(&geo, &ChannelConfig::default(), 5)
    }

    #[test]
    fn groups_span_cells() {
        let s = two_cell_one_ue();
        let alloc = Allocation::from_assignments(
            &s,
            ModePolicy::Adaptive,
            vec![
                Some(Assignment { rb: 0, mode: Mode::Cellular, dedicated: true }),
                Some(Assignment { rb: 0, mode: Mode::Cellular, dedicated: true }),
            ],
        );
        let groups = build_cochannel_groups(&s, &alloc).unwrap();
        assert_eq!(groups.len(), 1);
        let g = &groups[0];
        assert_eq!(g.members, vec![0, 1]);
        assert_eq!(g.gains.shape(), (2, 2));
        assert_eq!(g.gains[(0, 1)], s.gain(1, Receiver::Bs(0)));
        assert_eq!(g.gains[(1, 0)], s.gain(0, Receiver::Bs(1)));
        assert!((g.bandwidth - 625e3).abs() < 1e-9);
    }

    #[test]
    fn cellular_mode_d2d_row_uses_bs() {
        let geo = GeometryConfig { num_cells: 1, ues_per_cell: 0, d2d_pairs_per_cell: 2, ..Default::default() };
        let s = generate_drop(&geo, &ChannelConfig::default(), 2);
        let alloc = Allocation::from_assignments(
            &s,
            ModePolicy::Adaptive,
            vec![
                Some(Assignment { rb: 1, mode: Mode::Cellular, dedicated: false }),
                Some(Assignment { rb: 1, mode: Mode::Direct, dedicated: false }),
            ],
        );
        let groups = build_cochannel_groups(&s, &alloc).unwrap();
        assert_eq!(groups.len(), 1, "empty RBs omitted");
        let g = &groups[0];
        assert_eq!(g.rb, 1);
        assert_eq!(g.gains[(0, 0)], s.gain_to_serving_bs(0));
        assert_eq!(g.gains[(1, 1)], s.d2d_gain(1).unwrap());
        assert_eq!(g.gains[(0, 1)], s.gain(1, Receiver::Bs(0)));
        assert_eq!(g.gains[(1, 0)], s.gain(0, Receiver::D2dRx(1)));
    }

    #[test]
    fn unallocated_link_is_rejected() {
        let s = two_cell_one_ue();
        let alloc = Allocation::from_assignments(
            &s,
            ModePolicy::Adaptive,
            vec![Some(Assignment { rb: 0, mode: Mode::Cellular, dedicated: true }), None],
        );
        assert_eq!(build_cochannel_groups(&s, &alloc), Err(TopologyError::Unallocated(1)));
    }
}
