//! Training algorithms, how each one parameterizes its population, and how
//! population members are paired in rollouts.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approximator::{PolicyParams, PolicyShape};
use crate::world::NUM_ACTIONS;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Sp,
    Pbt,
    Fcp,
    Trajedi,
    Bdp,
    BdpNoDiscrim,
    BdpNoLatent,
    BdpLatentSharedEnc,
    BdpLatentSepEnc,
    /// Two policies trained together; no population, no stage 2.
    GtCoord,
    /// GT Coord with ground-truth predicate observations.
    GtCoordState,
    /// One policy trained next to an idle partner.
    Solo,
}

impl Algo {
    pub const ALL: [Algo; 12] = [
        Algo::Sp,
        Algo::Pbt,
        Algo::Fcp,
        Algo::Trajedi,
        Algo::Bdp,
        Algo::BdpNoDiscrim,
        Algo::BdpNoLatent,
        Algo::BdpLatentSharedEnc,
        Algo::BdpLatentSepEnc,
        Algo::GtCoord,
        Algo::GtCoordState,
        Algo::Solo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Sp => "sp",
            Algo::Pbt => "pbt",
            Algo::Fcp => "fcp",
            Algo::Trajedi => "trajedi",
            Algo::Bdp => "bdp",
            Algo::BdpNoDiscrim => "bdp_no_discrim",
            Algo::BdpNoLatent => "bdp_no_latent",
            Algo::BdpLatentSharedEnc => "bdp_latent_shared_enc",
            Algo::BdpLatentSepEnc => "bdp_latent_sep_enc",
            Algo::GtCoord => "gtcoord",
            Algo::GtCoordState => "gtcoord_state",
            Algo::Solo => "solo",
        }
    }

    pub fn is_bdp(self) -> bool {
        matches!(
            self,
            Algo::Bdp | Algo::BdpNoDiscrim | Algo::BdpNoLatent | Algo::BdpLatentSharedEnc | Algo::BdpLatentSepEnc
        )
    }

    /// Algorithms that train a population in stage 1 and a coordination
    /// agent in stage 2.
    pub fn is_population(self) -> bool {
        !matches!(self, Algo::GtCoord | Algo::GtCoordState | Algo::Solo)
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| Error::UnknownName {
            what: "algo",
            got: s.to_string(),
            valid: Algo::ALL.map(Algo::name).join(", "),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub algo: Algo,
    /// Population size N, or latent count K for latent-conditioned variants.
    pub size: usize,
    /// Weight of the discriminator reward.
    pub alpha: f64,
    /// Weight of the TrajeDi JSD bonus.
    pub trajedi_alpha: f64,
    /// Updates between latent (or member) redraws for the BDP variants.
    pub latent_resample_period: u64,
}

impl PopulationSpec {
    pub fn new(algo: Algo, size: usize) -> Result<Self> {
        let spec = Self { algo, size, alpha: 0.01, trajedi_alpha: 0.01, latent_resample_period: 10 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.algo.is_population() {
            return Err(Error::InvalidConfig(format!("{} does not train a population", self.algo)));
        }
        if self.size == 0 || self.size > u16::MAX as usize {
            return Err(Error::InvalidConfig(format!("population size {} out of range", self.size)));
        }
        if self.latent_resample_period == 0 {
            return Err(Error::InvalidConfig("latent_resample_period must be positive".into()));
        }
        if self.alpha < 0.0 || self.trajedi_alpha < 0.0 {
            return Err(Error::InvalidConfig("diversity weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// How a member of the population maps onto parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemberRef {
    pub slot: usize,
    pub latent: Option<usize>,
    pub head: usize,
}

/// Concrete network and reward wiring for a population algorithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wiring {
    pub members: usize,
    pub param_sets: usize,
    pub latent_dim: usize,
    pub heads: usize,
    pub shared_recurrent: bool,
    /// Discriminator reward weight; 0 disables the discriminator entirely.
    pub alpha: f64,
    pub trajedi_alpha: Option<f64>,
}

impl Wiring {
    pub fn member(&self, m: usize) -> MemberRef {
        assert!(m < self.members, "member {m} out of range");
        if self.param_sets > 1 {
            MemberRef { slot: m, latent: None, head: 0 }
        } else if self.latent_dim > 0 {
            MemberRef { slot: 0, latent: Some(m), head: 0 }
        } else {
            MemberRef { slot: 0, latent: None, head: m }
        }
    }

    pub fn uses_discriminator(&self) -> bool {
        self.alpha > 0.0
    }

    pub fn shape(&self, obs_dim: usize) -> PolicyShape {
        PolicyShape {
            heads: self.heads,
            shared_recurrent: self.shared_recurrent,
            ..PolicyShape::new(obs_dim, self.latent_dim, NUM_ACTIONS)
        }
    }
}

/// Wiring for any population algorithm.
pub fn wiring(spec: &PopulationSpec) -> Result<Wiring> {
    spec.validate()?;
    if spec.algo.is_bdp() {
        return materialize_ablation(spec);
    }
    let n = spec.size;
    Ok(Wiring {
        members: n,
        param_sets: n,
        latent_dim: 0,
        heads: 1,
        shared_recurrent: true,
        alpha: 0.0,
        trajedi_alpha: (spec.algo == Algo::Trajedi).then_some(spec.trajedi_alpha),
    })
}

/// Wiring for BDP and its ablations.
pub fn materialize_ablation(spec: &PopulationSpec) -> Result<Wiring> {
    let n = spec.size;
    let base = Wiring {
        members: n,
        param_sets: 1,
        latent_dim: 0,
        heads: 1,
        shared_recurrent: true,
        alpha: spec.alpha,
        trajedi_alpha: None,
    };
    Ok(match spec.algo {
        Algo::Bdp => Wiring { latent_dim: n, ..base },
        Algo::BdpNoDiscrim => Wiring { latent_dim: n, alpha: 0.0, ..base },
        Algo::BdpNoLatent => Wiring { heads: n, alpha: 0.0, ..base },
        Algo::BdpLatentSharedEnc => Wiring { heads: n, shared_recurrent: false, ..base },
        Algo::BdpLatentSepEnc => Wiring { param_sets: n, ..base },
        other => return Err(Error::InvalidConfig(format!("{other} is not a BDP variant"))),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingDraw {
    pub left: usize,
    pub right: usize,
}

/// One pairing draw. `counter` counts draws so far and drives the
/// self-play round robin.
pub fn draw_pairing<R: Rng>(spec: &PopulationSpec, rng: &mut R, counter: u64) -> PairingDraw {
    let n = spec.size;
    match spec.algo {
        Algo::Sp | Algo::Fcp => {
            let i = (counter % n as u64) as usize;
            PairingDraw { left: i, right: i }
        }
        _ => PairingDraw { left: rng.random_range(0..n), right: rng.random_range(0..n) },
    }
}

/// Per-environment pairings for each update. BDP variants keep their draws
/// for `latent_resample_period` updates; other algorithms redraw every update.
#[derive(Debug, Clone)]
pub struct PairingSchedule {
    spec: PopulationSpec,
    current: Vec<PairingDraw>,
    draws: u64,
}

impl PairingSchedule {
    pub fn new(spec: PopulationSpec) -> Self {
        Self { spec, current: Vec::new(), draws: 0 }
    }

    pub fn for_update<R: Rng>(&mut self, update: u64, envs: usize, rng: &mut R) -> &[PairingDraw] {
        let hold = self.spec.algo.is_bdp() && update % self.spec.latent_resample_period != 0;
        if !(hold && self.current.len() == envs) {
            self.current = (0..envs)
                .map(|_| {
                    let d = draw_pairing(&self.spec, rng, self.draws);
                    self.draws += 1;
                    d
                })
                .collect();
        }
        &self.current
    }
}

/// Points in training at which population snapshots are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Milestone {
    Start,
    Middle,
    End,
}

impl Milestone {
    pub const ALL: [Milestone; 3] = [Milestone::Start, Milestone::Middle, Milestone::End];

    pub fn name(self) -> &'static str {
        match self {
            Milestone::Start => "start",
            Milestone::Middle => "middle",
            Milestone::End => "end",
        }
    }

    pub fn percent(self) -> u32 {
        match self {
            Milestone::Start => 0,
            Milestone::Middle => 50,
            Milestone::End => 100,
        }
    }

    /// Update index after which the snapshot is taken.
    pub fn update(self, total: u64) -> u64 {
        match self {
            Milestone::Start => 0,
            Milestone::Middle => total / 2,
            Milestone::End => total,
        }
    }
}

/// Frozen FCP partner pool: every member at the start, middle and end of
/// stage-1 training.
pub fn fcp_checkpoint_set(history: &[(Milestone, Vec<PolicyParams>)]) -> Result<Vec<PolicyParams>> {
    let mut pool = Vec::new();
    let mut size = None;
    for m in Milestone::ALL {
        let members = history
            .iter()
            .find(|(k, _)| *k == m)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::MissingArtifact(format!("fcp checkpoint at {}%", m.percent())))?;
        if *size.get_or_insert(members.len()) != members.len() || members.is_empty() {
            return Err(Error::MissingArtifact(format!("incomplete fcp checkpoint set at {}%", m.percent())));
        }
        pool.extend(members.iter().cloned());
    }
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximator::entropy;
    use crate::seeds::rng_from;

    #[test]
    fn names_round_trip() {
        for a in Algo::ALL {
            assert_eq!(a.name().parse::<Algo>().unwrap(), a);
        }
        let err = "mappo".parse::<Algo>().unwrap_err().to_string();
        assert!(err.contains("bdp_no_discrim") && err.contains("gtcoord_state"));
    }

    #[test]
    fn self_play_never_cross_pairs_and_cycles() {
        let spec = PopulationSpec::new(Algo::Sp, 4).unwrap();
        let mut rng = rng_from(0);
        let draws: Vec<PairingDraw> = (0..8).map(|c| draw_pairing(&spec, &mut rng, c)).collect();
        assert!(draws.iter().all(|d| d.left == d.right));
        assert_eq!(draws.iter().map(|d| d.left).collect::<Vec<_>>(), vec![0, 1, 2, 3, 0, 1, 2, 3]);
    }

    #[test]
    fn pbt_pairs_uniformly() {
        let spec = PopulationSpec::new(Algo::Pbt, 4).unwrap();
        let mut rng = rng_from(1);
        let mut counts = [[0usize; 4]; 4];
        for c in 0..10_000 {
            let d = draw_pairing(&spec, &mut rng, c);
            counts[d.left][d.right] += 1;
        }
        let mut chi2 = 0.0;
        for row in counts {
            for c in row {
                assert!((c as f64 / 10_000.0 - 1.0 / 16.0).abs() < 0.01);
                chi2 += (c as f64 - 625.0).powi(2) / 625.0;
            }
        }
        // 15 degrees of freedom, p = 0.001 critical value.
        assert!(chi2 < 37.7, "chi2 {chi2}");
    }

    #[test]
    fn bdp_holds_latents_for_ten_updates() {
        let spec = PopulationSpec::new(Algo::Bdp, 8).unwrap();
        let mut sched = PairingSchedule::new(spec);
        let mut rng = rng_from(2);
        let first = sched.for_update(0, 16, &mut rng).to_vec();
        for u in 1..10 {
            assert_eq!(sched.for_update(u, 16, &mut rng), first.as_slice());
        }
        let next = sched.for_update(10, 16, &mut rng).to_vec();
        assert_ne!(next, first);
        let mut pbt = PairingSchedule::new(PopulationSpec::new(Algo::Pbt, 8).unwrap());
        let a = pbt.for_update(0, 16, &mut rng).to_vec();
        assert_ne!(pbt.for_update(1, 16, &mut rng), a.as_slice());
    }

    #[test]
    fn ablation_wiring() {
        let w = |a| materialize_ablation(&PopulationSpec::new(a, 4).unwrap()).unwrap();
        let bdp = w(Algo::Bdp);
        assert_eq!((bdp.param_sets, bdp.latent_dim, bdp.alpha), (1, 4, 0.01));
        assert_eq!(bdp.member(2), MemberRef { slot: 0, latent: Some(2), head: 0 });
        assert_eq!(w(Algo::BdpNoDiscrim).alpha, 0.0);
        assert_eq!(w(Algo::BdpNoDiscrim).latent_dim, 4);
        let nl = w(Algo::BdpNoLatent);
        assert_eq!((nl.heads, nl.latent_dim, nl.alpha, nl.shared_recurrent), (4, 0, 0.0, true));
        let se = w(Algo::BdpLatentSharedEnc);
        assert_eq!((se.heads, se.shared_recurrent, se.param_sets), (4, false, 1));
        assert!(se.uses_discriminator());
        let sep = w(Algo::BdpLatentSepEnc);
        assert_eq!((sep.param_sets, sep.heads), (4, 1));
        assert_eq!(sep.member(3), MemberRef { slot: 3, latent: None, head: 0 });
        assert!(materialize_ablation(&PopulationSpec::new(Algo::Pbt, 4).unwrap()).is_err());
        assert!(PopulationSpec::new(Algo::GtCoord, 4).is_err());
    }

    #[test]
    fn bdp_parameter_count_depends_on_k_only_through_latent_columns() {
        let spec = |k| PopulationSpec::new(Algo::Bdp, k).unwrap();
        let c = |k| materialize_ablation(&spec(k)).unwrap().shape(21).param_count();
        assert_eq!(c(8) - c(4), 4 * 64);
        assert_eq!(c(4), 64 * 25 + 64 + 3 * 64 * 64 * 2 + 3 * 64 + NUM_ACTIONS * 64 + NUM_ACTIONS + 64 + 1);
    }

    #[test]
    fn fcp_pool_has_three_snapshots_per_member() {
        let shape = PolicyShape::new(21, 0, NUM_ACTIONS);
        let mut rng = rng_from(4);
        let mk = |rng: &mut _| (0..4).map(|_| PolicyParams::init(shape, rng)).collect::<Vec<_>>();
        let history: Vec<_> = Milestone::ALL.iter().map(|&m| (m, mk(&mut rng))).collect();
        let pool = fcp_checkpoint_set(&history).unwrap();
        assert_eq!(pool.len(), 12);
        assert_eq!(pool[11], history[2].1[3]);
        // An untrained policy is close to uniform over actions.
        let out = pool[0].forward(&[0.1; 21], None, 0, &pool[0].zero_hidden()).unwrap();
        assert!((entropy(&out.logits) - (NUM_ACTIONS as f64).ln()).abs() < 0.01);
        let err = fcp_checkpoint_set(&history[..2]).unwrap_err().to_string();
        assert!(err.contains("100%"), "{err}");
    }
}
