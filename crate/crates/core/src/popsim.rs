//! Synthetic closed population with movers, births and deaths, and the census
//! and PES capture processes run over it.
//!
//! A household keeps its identity when it relocates; what changes is the
//! dwelling it occupies at census time and at PES time. Relocations are a
//! cyclic shift of dwellings among the moving households, so every dwelling is
//! occupied at both reference times and in-movers equal out-movers exactly.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Procedure;
use crate::groups::{Area, GroupKey, GroupLevel, PostStratum};
use crate::sampling::{AddressType, District, DistrictId, DwellingId, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PersonId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HouseholdId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    InScope,
    BornAfterCensus,
    DiedAfterCensus,
}

/// Residence status between census and PES reference times, as reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoverStatus {
    NonMover,
    InMover,
    OutMover,
    Birth,
    Death,
    /// Census records carry no mover information.
    Unknown,
}

impl MoverStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            MoverStatus::NonMover => "non",
            MoverStatus::InMover => "in",
            MoverStatus::OutMover => "out",
            MoverStatus::Birth => "birth",
            MoverStatus::Death => "death",
            MoverStatus::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "non" => MoverStatus::NonMover,
            "in" => MoverStatus::InMover,
            "out" => MoverStatus::OutMover,
            "birth" => MoverStatus::Birth,
            "death" => MoverStatus::Death,
            "unknown" => MoverStatus::Unknown,
            _ => return None,
        })
    }

    /// Lived at the reporting dwelling at census time.
    pub fn census_time_resident(self) -> bool {
        matches!(self, MoverStatus::NonMover | MoverStatus::OutMover | MoverStatus::Death)
    }

    /// Lives at the reporting dwelling at PES time.
    pub fn pes_time_resident(self) -> bool {
        matches!(self, MoverStatus::NonMover | MoverStatus::InMover | MoverStatus::Birth)
    }
}

/// Characteristics compared during person matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Identity {
    pub name_key: u64,
    pub sex: Sex,
    pub age: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersonRecord {
    pub id: PersonId,
    pub household: HouseholdId,
    /// Dwelling of the household at census time; `None` for births.
    pub census_dwelling: Option<DwellingId>,
    /// Dwelling at PES time; `None` for deaths.
    pub pes_dwelling: Option<DwellingId>,
    pub post_stratum: PostStratum,
    pub identity: Identity,
    pub scope: Scope,
    pub institutional: bool,
}

impl PersonRecord {
    /// Member of the census target population: usual residential, alive at census time.
    pub fn is_target(&self) -> bool {
        !self.institutional && self.scope != Scope::BornAfterCensus
    }

    /// Ground-truth mover status with respect to the census dwelling.
    pub fn truth_status(&self) -> MoverStatus {
        match (self.scope, self.census_dwelling, self.pes_dwelling) {
            (Scope::BornAfterCensus, _, _) => MoverStatus::Birth,
            (Scope::DiedAfterCensus, _, _) => MoverStatus::Death,
            (_, Some(c), Some(p)) if c != p => MoverStatus::OutMover,
            _ => MoverStatus::NonMover,
        }
    }

    pub fn is_mover(&self) -> bool {
        self.scope == Scope::InScope
            && matches!((self.census_dwelling, self.pes_dwelling), (Some(c), Some(p)) if c != p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Household {
    pub id: HouseholdId,
    pub census_dwelling: DwellingId,
    pub pes_dwelling: DwellingId,
    pub institutional: bool,
    pub members: Vec<PersonId>,
}

impl Household {
    pub fn moved(&self) -> bool {
        self.census_dwelling != self.pes_dwelling
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dwelling {
    pub id: DwellingId,
    /// `None` for institutional dwellings, which are outside the PES frame.
    pub district: Option<DistrictId>,
    pub province: u16,
    pub area: Area,
    pub address_type: AddressType,
    pub census_household: HouseholdId,
    pub pes_household: HouseholdId,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub provinces: u16,
    /// Districts per province in each of the urban and rural areas.
    pub districts_per_area: u32,
    pub urban_share: f64,
    /// Usual residential persons alive at census time (the true `T`).
    pub persons: usize,
    pub mean_household_size: f64,
    pub max_household_size: usize,
    /// Probability that a household relocates between census and PES.
    pub mover_rate: f64,
    pub birth_rate: f64,
    pub death_rate: f64,
    /// Institutional persons, as a share of `persons`.
    pub institutional_share: f64,
    pub age_groups: u16,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            provinces: 2,
            districts_per_area: 10,
            urban_share: 0.6,
            persons: 50_000,
            mean_household_size: 4.0,
            max_household_size: 12,
            mover_rate: 0.05,
            birth_rate: 0.005,
            death_rate: 0.002,
            institutional_share: 0.01,
            age_groups: 5,
        }
    }
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !(0.0..1.0).contains(&v) {
        return Err(Error::Config(format!("{name} = {v} must lie in [0, 1)")));
    }
    Ok(())
}

fn check_probability(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Config(format!("{name} = {v} must lie in [0, 1]")));
    }
    Ok(())
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.provinces == 0 || self.districts_per_area == 0 || self.persons == 0 || self.age_groups == 0 {
            return Err(Error::Config("population sizes must be positive".into()));
        }
        if self.mean_household_size.is_nan() || self.mean_household_size < 1.0 || self.max_household_size == 0 {
            return Err(Error::Config("household size must be at least 1".into()));
        }
        check_probability("urban_share", self.urban_share)?;
        check_rate("mover_rate", self.mover_rate)?;
        check_rate("birth_rate", self.birth_rate)?;
        check_rate("death_rate", self.death_rate)?;
        check_rate("institutional_share", self.institutional_share)?;
        Ok(())
    }

    pub fn post_strata(&self) -> u16 {
        2 * self.age_groups
    }
}

/// True population and census error counts for one estimation cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LedgerEntry {
    /// True target population.
    pub t: i64,
    /// Scope-adjusted census count (usual residential records).
    pub c: i64,
    /// Target persons without a census record.
    pub u: i64,
    /// Erroneous census records.
    pub o: i64,
}

impl LedgerEntry {
    /// Gross coverage error.
    pub fn g(&self) -> i64 {
        self.u + self.o
    }

    /// Net coverage error.
    pub fn n(&self) -> i64 {
        self.u - self.o
    }

    pub fn r(&self) -> f64 {
        100.0 * self.n() as f64 / self.t as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct GroundTruthLedger {
    pub entries: BTreeMap<GroupKey, LedgerEntry>,
    /// Census records in institutional households, excluded from `c`.
    pub institutional_records: i64,
}

impl GroundTruthLedger {
    pub fn get(&self, key: &GroupKey) -> LedgerEntry {
        self.entries.get(key).copied().unwrap_or_default()
    }

    /// `N = U - O`, `G = U + O` and `T = C + N` on every entry.
    pub fn identities_hold(&self) -> bool {
        self.entries
            .values()
            .all(|e| e.n() == e.u - e.o && e.g() == e.u + e.o && e.t == e.c + e.n())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Population {
    pub persons: Vec<PersonRecord>,
    pub households: Vec<Household>,
    pub dwellings: Vec<Dwelling>,
    pub districts: Vec<District>,
    pub post_strata: u16,
}

impl Population {
    pub fn person(&self, id: PersonId) -> &PersonRecord {
        &self.persons[id.0 as usize]
    }

    pub fn household(&self, id: HouseholdId) -> &Household {
        &self.households[id.0 as usize]
    }

    pub fn dwelling(&self, id: DwellingId) -> &Dwelling {
        &self.dwellings[id.0 as usize]
    }

    pub fn true_total(&self) -> usize {
        self.persons.iter().filter(|p| p.is_target()).count()
    }

    /// Persons who relocated, counted at their census dwelling and at their PES dwelling.
    pub fn mover_counts(&self) -> (usize, usize) {
        let out = self
            .persons
            .iter()
            .filter(|p| p.is_mover() && p.census_dwelling.is_some())
            .count();
        let inn = self
            .persons
            .iter()
            .filter(|p| p.is_mover() && p.pes_dwelling.is_some())
            .count();
        (inn, out)
    }

    fn group_keys(&self, dwelling: DwellingId, ps: PostStratum) -> impl Iterator<Item = GroupKey> {
        let d = self.dwelling(dwelling);
        GroupKey::keys_for(d.province, d.area, ps, &GroupLevel::ALL).collect::<Vec<_>>().into_iter()
    }

    /// Ledger with `T` filled in; before any census everybody is undercounted.
    pub fn initial_ledger(&self) -> GroundTruthLedger {
        let mut ledger = GroundTruthLedger::default();
        for p in self.persons.iter().filter(|p| p.is_target()) {
            let dwelling = p.census_dwelling.expect("target persons have a census dwelling");
            for key in self.group_keys(dwelling, p.post_stratum) {
                let e = ledger.entries.entry(key).or_default();
                e.t += 1;
                e.u += 1;
            }
        }
        ledger
    }
}

fn address_type<R: Rng + ?Sized>(rng: &mut R) -> AddressType {
    let u: f64 = rng.random();
    if u < 0.6 {
        AddressType::SingleUnit
    } else if u < 0.9 {
        AddressType::MultiUnit
    } else {
        AddressType::Other
    }
}

fn random_person<R: Rng + ?Sized>(rng: &mut R, age_groups: u16) -> (PostStratum, Identity) {
    let sex = if rng.random_bool(0.5) { Sex::Male } else { Sex::Female };
    let group = rng.random_range(0..age_groups);
    let span = (90 / age_groups as u32).max(1);
    let age = (group as u32 * span + rng.random_range(0..span)).min(u8::MAX as u32) as u8;
    let ps = PostStratum(sex as u16 * age_groups + group);
    (ps, Identity { name_key: rng.random(), sex, age })
}

/// Build the ground-truth population and the district frame.
pub fn synthesize_population<R: Rng + ?Sized>(
    config: &PopulationConfig,
    rng: &mut R,
) -> Result<(Population, GroundTruthLedger)> {
    config.validate()?;

    let mut districts = Vec::new();
    for province in 0..config.provinces {
        for area in Area::ALL {
            for _ in 0..config.districts_per_area {
                districts.push(District {
                    id: DistrictId(districts.len() as u32),
                    province,
                    area,
                    households: Vec::new(),
                });
            }
        }
    }
    let per_cell = config.districts_per_area as usize;
    let extra_size = Poisson::new(config.mean_household_size - 1.0).ok();

    let mut persons: Vec<PersonRecord> = Vec::with_capacity(config.persons + config.persons / 50);
    let mut households: Vec<Household> = Vec::new();
    let mut dwellings: Vec<Dwelling> = Vec::new();

    let new_household = |persons: &mut Vec<PersonRecord>,
                             households: &mut Vec<Household>,
                             dwellings: &mut Vec<Dwelling>,
                             district: Option<DistrictId>,
                             province: u16,
                             area: Area,
                             size: usize,
                             institutional: bool,
                             rng: &mut R| {
        let hid = HouseholdId(households.len() as u32);
        let did = DwellingId(dwellings.len() as u32);
        dwellings.push(Dwelling {
            id: did,
            district,
            province,
            area,
            address_type: if institutional { AddressType::Other } else { address_type(rng) },
            census_household: hid,
            pes_household: hid,
        });
        let mut members = Vec::with_capacity(size);
        for _ in 0..size {
            let (post_stratum, identity) = random_person(rng, config.age_groups);
            let id = PersonId(persons.len() as u32);
            persons.push(PersonRecord {
                id,
                household: hid,
                census_dwelling: Some(did),
                pes_dwelling: Some(did),
                post_stratum,
                identity,
                scope: Scope::InScope,
                institutional,
            });
            members.push(id);
        }
        households.push(Household {
            id: hid,
            census_dwelling: did,
            pes_dwelling: did,
            institutional,
            members,
        });
        did
    };

    let mut remaining = config.persons;
    while remaining > 0 {
        let extra = extra_size.as_ref().map_or(0, |d| d.sample(rng) as usize);
        let size = (1 + extra).min(config.max_household_size).min(remaining);
        remaining -= size;
        let area = if rng.random_bool(config.urban_share) { Area::Urban } else { Area::Rural };
        let province = rng.random_range(0..config.provinces);
        let cell_start = (province as usize * 2 + (area == Area::Rural) as usize) * per_cell;
        let district_idx = cell_start + rng.random_range(0..per_cell);
        let did = new_household(
            &mut persons,
            &mut households,
            &mut dwellings,
            Some(DistrictId(district_idx as u32)),
            province,
            area,
            size,
            false,
            rng,
        );
        districts[district_idx].households.push(did);
    }

    let mut institutional = (config.persons as f64 * config.institutional_share).round() as usize;
    while institutional > 0 {
        let size = institutional.min(25);
        institutional -= size;
        let area = if rng.random_bool(config.urban_share) { Area::Urban } else { Area::Rural };
        let province = rng.random_range(0..config.provinces);
        new_household(&mut persons, &mut households, &mut dwellings, None, province, area, size, true, rng);
    }

    for p in persons.iter_mut().filter(|p| !p.institutional) {
        if rng.random_bool(config.death_rate) {
            p.scope = Scope::DiedAfterCensus;
            p.pes_dwelling = None;
        }
    }

    let mut movers: Vec<usize> = households
        .iter()
        .filter(|h| !h.institutional)
        .map(|h| h.id.0 as usize)
        .filter(|_| rng.random_bool(config.mover_rate))
        .collect();
    if movers.len() >= 2 {
        movers.shuffle(rng);
        let origins: Vec<DwellingId> = movers.iter().map(|&h| households[h].census_dwelling).collect();
        for (i, &h) in movers.iter().enumerate() {
            let dest = origins[(i + 1) % origins.len()];
            households[h].pes_dwelling = dest;
            dwellings[dest.0 as usize].pes_household = HouseholdId(h as u32);
            for m in &households[h].members {
                let p = &mut persons[m.0 as usize];
                if p.scope == Scope::InScope {
                    p.pes_dwelling = Some(dest);
                }
            }
        }
    }

    let residential: Vec<usize> = households
        .iter()
        .filter(|h| !h.institutional)
        .map(|h| h.id.0 as usize)
        .collect();
    let births = if config.birth_rate > 0.0 {
        Binomial::new(config.persons as u64, config.birth_rate)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(rng) as usize
    } else {
        0
    };
    for _ in 0..births {
        let h = residential[rng.random_range(0..residential.len())];
        let sex = if rng.random_bool(0.5) { Sex::Male } else { Sex::Female };
        let id = PersonId(persons.len() as u32);
        persons.push(PersonRecord {
            id,
            household: HouseholdId(h as u32),
            census_dwelling: None,
            pes_dwelling: Some(households[h].pes_dwelling),
            post_stratum: PostStratum(sex as u16 * config.age_groups),
            identity: Identity { name_key: rng.random(), sex, age: 0 },
            scope: Scope::BornAfterCensus,
            institutional: false,
        });
        households[h].members.push(id);
    }

    let population = Population {
        persons,
        households,
        dwellings,
        districts,
        post_strata: config.post_strata(),
    };
    let ledger = population.initial_ledger();
    Ok((population, ledger))
}

/// Per-post-stratum capture model.
///
/// Census capture has log-odds `logit(pi_census) + sigma z`; PES capture has
/// log-odds `logit(pi_pes) + sigma z - theta [missed by census]`, with the same
/// per-person `z ~ N(0, 1)` in both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureProbabilities {
    pub pi_census: Vec<f64>,
    pub pi_pes: Vec<f64>,
    /// Dependence θ.
    pub dependence: Vec<f64>,
    /// Heterogeneity σ.
    pub heterogeneity: Vec<f64>,
}

fn logistic_shift(p: f64, shift: f64) -> f64 {
    if shift == 0.0 || p <= 0.0 || p >= 1.0 {
        return p;
    }
    let logit = (p / (1.0 - p)).ln() + shift;
    1.0 / (1.0 + (-logit).exp())
}

impl CaptureProbabilities {
    pub fn uniform(strata: u16, pi_census: f64, pi_pes: f64, dependence: f64, heterogeneity: f64) -> Self {
        let n = strata as usize;
        Self {
            pi_census: vec![pi_census; n],
            pi_pes: vec![pi_pes; n],
            dependence: vec![dependence; n],
            heterogeneity: vec![heterogeneity; n],
        }
    }

    pub fn validate(&self, strata: u16) -> Result<()> {
        let n = strata as usize;
        if [&self.pi_census, &self.pi_pes, &self.dependence, &self.heterogeneity]
            .iter()
            .any(|v| v.len() != n)
        {
            return Err(Error::Config(format!("capture vectors must have {n} post-strata")));
        }
        for &p in self.pi_census.iter().chain(&self.pi_pes) {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!("capture probability {p} must lie in (0, 1]")));
            }
        }
        if self.heterogeneity.iter().any(|s| s.is_nan() || *s < 0.0) {
            return Err(Error::Config("heterogeneity must be >= 0".into()));
        }
        Ok(())
    }

    pub fn census_probability(&self, ps: PostStratum, z: f64) -> f64 {
        let s = ps.0 as usize;
        logistic_shift(self.pi_census[s], self.heterogeneity[s] * z)
    }

    pub fn pes_probability(&self, ps: PostStratum, z: f64, census_captured: bool) -> f64 {
        let s = ps.0 as usize;
        let dependence = if census_captured { 0.0 } else { self.dependence[s] };
        logistic_shift(self.pi_pes[s], self.heterogeneity[s] * z - dependence)
    }
}

/// Reason a household was not listed by a source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissReason {
    PlaceOmitted = 1,
    NotRecognized = 2,
    CountMiscounted = 3,
}

impl MissReason {
    fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        match rng.random_range(0..3) {
            0 => MissReason::PlaceOmitted,
            1 => MissReason::NotRecognized,
            _ => MissReason::CountMiscounted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CensusHouseholdStatus {
    Listed { questionnaire: bool },
    NotListed(MissReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CensusRecordKind {
    Correct,
    /// Whole-person imputation, excluded from matching.
    Imputed,
    Duplicate,
    Fabricated,
}

impl CensusRecordKind {
    pub fn is_erroneous(self) -> bool {
        matches!(self, CensusRecordKind::Duplicate | CensusRecordKind::Fabricated)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CensusRecord {
    pub id: u32,
    pub dwelling: DwellingId,
    pub household: HouseholdId,
    /// Enumerated person; `None` for fabricated records.
    pub person: Option<PersonId>,
    pub identity: Identity,
    pub post_stratum: PostStratum,
    pub kind: CensusRecordKind,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct CensusConfig {
    /// Probability a household is listed at all.
    pub listing_rate: f64,
    /// Listed households left without a questionnaire.
    pub refusal_rate: f64,
    /// Erroneous enumerations per target person.
    pub ee_rate: f64,
    /// Share of erroneous enumerations that duplicate a real person.
    pub duplicate_share: f64,
    /// Share of enumerated persons whose record is wholly imputed.
    pub ii_rate: f64,
}

impl Default for CensusConfig {
    fn default() -> Self {
        Self {
            listing_rate: 0.98,
            refusal_rate: 0.01,
            ee_rate: 0.01,
            duplicate_share: 0.5,
            ii_rate: 0.005,
        }
    }
}

impl CensusConfig {
    pub fn perfect() -> Self {
        Self { listing_rate: 1.0, refusal_rate: 0.0, ee_rate: 0.0, duplicate_share: 0.5, ii_rate: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("census.listing_rate", self.listing_rate)?;
        check_rate("census.refusal_rate", self.refusal_rate)?;
        check_rate("census.ee_rate", self.ee_rate)?;
        check_probability("census.duplicate_share", self.duplicate_share)?;
        check_rate("census.ii_rate", self.ii_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CensusOutcome {
    /// Indexed by household id.
    pub household_status: Vec<CensusHouseholdStatus>,
    /// Per-person latent propensity `z`, shared with the PES.
    pub propensity: Vec<f64>,
    /// Index into `records` of each person's own record.
    pub person_record: Vec<Option<u32>>,
    pub records: Vec<CensusRecord>,
    pub ledger: GroundTruthLedger,
}

impl CensusOutcome {
    /// The person has a census record, correct or imputed.
    pub fn captured(&self, p: PersonId) -> bool {
        self.person_record[p.0 as usize].is_some()
    }

    /// The person has a correct (matchable) record.
    pub fn matchable(&self, p: PersonId) -> bool {
        self.person_record[p.0 as usize]
            .is_some_and(|r| self.records[r as usize].kind == CensusRecordKind::Correct)
    }

    pub fn questionnaire(&self, h: HouseholdId) -> bool {
        matches!(self.household_status[h.0 as usize], CensusHouseholdStatus::Listed { questionnaire: true })
    }

    pub fn count(&self) -> usize {
        self.records.len()
    }
}

pub fn simulate_census<R: Rng + ?Sized>(
    pop: &Population,
    probs: &CaptureProbabilities,
    config: &CensusConfig,
    rng: &mut R,
) -> Result<CensusOutcome> {
    config.validate()?;
    probs.validate(pop.post_strata)?;

    let propensity: Vec<f64> = (0..pop.persons.len()).map(|_| rng.sample(StandardNormal)).collect();

    let household_status: Vec<CensusHouseholdStatus> = pop
        .households
        .iter()
        .map(|h| {
            let listed: f64 = rng.random();
            let refused: f64 = rng.random();
            let reason = MissReason::draw(rng);
            if h.institutional {
                CensusHouseholdStatus::Listed { questionnaire: true }
            } else if listed < config.listing_rate {
                CensusHouseholdStatus::Listed { questionnaire: refused >= config.refusal_rate }
            } else {
                CensusHouseholdStatus::NotListed(reason)
            }
        })
        .collect();

    let mut records = Vec::new();
    let mut person_record = vec![None; pop.persons.len()];
    for p in &pop.persons {
        let u_capture: f64 = rng.random();
        let u_impute: f64 = rng.random();
        let Some(dwelling) = p.census_dwelling else { continue };
        let listed = matches!(
            household_status[p.household.0 as usize],
            CensusHouseholdStatus::Listed { questionnaire: true }
        );
        if !listed || u_capture >= probs.census_probability(p.post_stratum, propensity[p.id.0 as usize]) {
            continue;
        }
        let kind = if u_impute < config.ii_rate { CensusRecordKind::Imputed } else { CensusRecordKind::Correct };
        person_record[p.id.0 as usize] = Some(records.len() as u32);
        records.push(CensusRecord {
            id: records.len() as u32,
            dwelling,
            household: p.household,
            person: Some(p.id),
            identity: p.identity,
            post_stratum: p.post_stratum,
            kind,
        });
    }

    let with_questionnaire: Vec<&Household> = pop
        .households
        .iter()
        .filter(|h| {
            !h.institutional
                && household_status[h.id.0 as usize] == CensusHouseholdStatus::Listed { questionnaire: true }
        })
        .collect();
    let correct: Vec<u32> = records
        .iter()
        .filter(|r| r.kind == CensusRecordKind::Correct && !pop.person(r.person.unwrap()).institutional)
        .map(|r| r.id)
        .collect();
    let targets = pop.persons.iter().filter(|p| p.is_target()).count() as u64;
    let n_ee = if config.ee_rate > 0.0 {
        Binomial::new(targets, config.ee_rate)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(rng)
    } else {
        0
    };
    if !with_questionnaire.is_empty() {
        for _ in 0..n_ee {
            let host = with_questionnaire[rng.random_range(0..with_questionnaire.len())];
            let duplicate = rng.random_bool(config.duplicate_share) && !correct.is_empty();
            let (person, identity, post_stratum, kind) = if duplicate {
                let original = &records[correct[rng.random_range(0..correct.len())] as usize];
                (original.person, original.identity, original.post_stratum, CensusRecordKind::Duplicate)
            } else {
                let (ps, identity) = random_person(rng, pop.post_strata / 2);
                (None, identity, ps, CensusRecordKind::Fabricated)
            };
            // A duplicate inside the original's own household would be caught at listing.
            if kind == CensusRecordKind::Duplicate
                && person.is_some_and(|p| pop.person(p).household == host.id)
            {
                continue;
            }
            records.push(CensusRecord {
                id: records.len() as u32,
                dwelling: host.census_dwelling,
                household: host.id,
                person,
                identity,
                post_stratum,
                kind,
            });
        }
    }

    let mut ledger = pop.initial_ledger();
    for r in &records {
        if pop.household(r.household).institutional {
            ledger.institutional_records += 1;
            continue;
        }
        for key in pop.group_keys(r.dwelling, r.post_stratum) {
            let e = ledger.entries.entry(key).or_default();
            e.c += 1;
            if r.kind.is_erroneous() {
                e.o += 1;
            } else {
                e.u -= 1;
            }
        }
    }

    Ok(CensusOutcome { household_status, propensity, person_record, records, ledger })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PesHouseholdStatus {
    Interviewed,
    TempAbsent,
    NotListed(MissReason),
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct PesConfig {
    pub listing_rate: f64,
    /// Listed households that are temporarily absent.
    pub temp_absent_rate: f64,
    /// Probability an out-moving household is not reported by proxies.
    pub proxy_miss_rate: f64,
    /// Probability an interviewed household reports a fictitious member.
    pub erroneous_rate: f64,
}

impl Default for PesConfig {
    fn default() -> Self {
        Self { listing_rate: 0.98, temp_absent_rate: 0.02, proxy_miss_rate: 0.2, erroneous_rate: 0.005 }
    }
}

impl PesConfig {
    pub fn perfect() -> Self {
        Self { listing_rate: 1.0, temp_absent_rate: 0.0, proxy_miss_rate: 0.0, erroneous_rate: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("pes.listing_rate", self.listing_rate)?;
        check_rate("pes.temp_absent_rate", self.temp_absent_rate)?;
        check_rate("pes.proxy_miss_rate", self.proxy_miss_rate)?;
        check_rate("pes.erroneous_rate", self.erroneous_rate)
    }
}

/// Whose roster a PES record belongs to at its dwelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RosterRole {
    /// The household living at the dwelling at PES time.
    Current,
    /// The census-time household that moved away, reported by proxies.
    Former,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PesRecord {
    pub id: u32,
    pub dwelling: DwellingId,
    pub household: HouseholdId,
    pub role: RosterRole,
    /// `None` for fictitious members.
    pub person: Option<PersonId>,
    pub identity: Identity,
    pub post_stratum: PostStratum,
    pub mover: MoverStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PesOutcome {
    /// Indexed by household id, at the household's PES-time dwelling.
    pub household_status: Vec<PesHouseholdStatus>,
    /// Whether proxies report the household at its census dwelling after it moved.
    pub proxy_reported: Vec<bool>,
    /// Per-person PES capture outcome (enumerated or reported if visited).
    pub person_captured: Vec<bool>,
    /// Roster records for every sampled dwelling, whether or not the household
    /// was interviewed; listings decide which of them were collected.
    pub records: Vec<PesRecord>,
    pub procedure: Procedure,
}

impl PesOutcome {
    pub fn roster(&self, procedure: Procedure) -> impl Iterator<Item = &PesRecord> {
        self.records.iter().filter(move |r| match procedure {
            Procedure::A => r.mover.census_time_resident(),
            Procedure::B => r.mover.pes_time_resident(),
            Procedure::C => true,
        })
    }
}

/// PES capture over the whole population, with rosters built for the sampled
/// dwellings and filtered to the procedure's reference population.
pub fn simulate_pes<R: Rng + ?Sized>(
    pop: &Population,
    census: &CensusOutcome,
    sample: &Sample,
    procedure: Procedure,
    probs: &CaptureProbabilities,
    config: &PesConfig,
    rng: &mut R,
) -> Result<PesOutcome> {
    config.validate()?;
    probs.validate(pop.post_strata)?;

    let mut household_status = Vec::with_capacity(pop.households.len());
    let mut proxy_reported = Vec::with_capacity(pop.households.len());
    let mut fictitious = Vec::with_capacity(pop.households.len());
    for h in &pop.households {
        let listed: f64 = rng.random();
        let absent: f64 = rng.random();
        let reason = MissReason::draw(rng);
        let proxy: f64 = rng.random();
        let fake: f64 = rng.random();
        household_status.push(if h.institutional || listed >= config.listing_rate {
            PesHouseholdStatus::NotListed(reason)
        } else if absent < config.temp_absent_rate {
            PesHouseholdStatus::TempAbsent
        } else {
            PesHouseholdStatus::Interviewed
        });
        proxy_reported.push(proxy >= config.proxy_miss_rate);
        fictitious.push(fake < config.erroneous_rate);
    }

    let person_captured: Vec<bool> = pop
        .persons
        .iter()
        .map(|p| {
            let u: f64 = rng.random();
            let captured_by_census = p.scope == Scope::BornAfterCensus || census.captured(p.id);
            u < probs.pes_probability(p.post_stratum, census.propensity[p.id.0 as usize], captured_by_census)
        })
        .collect();

    let age_groups = pop.post_strata / 2;
    let mut records = Vec::new();
    let push = |records: &mut Vec<PesRecord>, dwelling, household, role, person: Option<&PersonRecord>, mover, fake: Option<(PostStratum, Identity)>| {
        let (post_stratum, identity) = match (person, fake) {
            (Some(p), _) => (p.post_stratum, p.identity),
            (None, Some(f)) => f,
            (None, None) => unreachable!(),
        };
        records.push(PesRecord {
            id: records.len() as u32,
            dwelling,
            household,
            role,
            person: person.map(|p| p.id),
            identity,
            post_stratum,
            mover,
        });
    };

    for unit in &sample.units {
        let dwelling = pop.dwelling(unit.dwelling);
        let current = pop.household(dwelling.pes_household);
        for m in &current.members {
            let p = pop.person(*m);
            if !person_captured[m.0 as usize] {
                continue;
            }
            let mover = match p.scope {
                Scope::BornAfterCensus => MoverStatus::Birth,
                Scope::DiedAfterCensus if !current.moved() => MoverStatus::Death,
                Scope::DiedAfterCensus => continue,
                Scope::InScope if current.moved() => MoverStatus::InMover,
                Scope::InScope => MoverStatus::NonMover,
            };
            push(&mut records, dwelling.id, current.id, RosterRole::Current, Some(p), mover, None);
        }
        if fictitious[current.id.0 as usize] {
            let fake = random_person(rng, age_groups);
            push(&mut records, dwelling.id, current.id, RosterRole::Current, None, MoverStatus::NonMover, Some(fake));
        }
        if dwelling.census_household != current.id {
            let former = pop.household(dwelling.census_household);
            for m in &former.members {
                let p = pop.person(*m);
                if !person_captured[m.0 as usize] || p.census_dwelling != Some(dwelling.id) {
                    continue;
                }
                let mover = if p.scope == Scope::DiedAfterCensus { MoverStatus::Death } else { MoverStatus::OutMover };
                push(&mut records, dwelling.id, former.id, RosterRole::Former, Some(p), mover, None);
            }
        }
    }
    let keep = |r: &PesRecord| match procedure {
        Procedure::A => r.mover.census_time_resident(),
        Procedure::B => r.mover.pes_time_resident(),
        Procedure::C => true,
    };
    records.retain(keep);
    for (i, r) in records.iter_mut().enumerate() {
        r.id = i as u32;
    }

    Ok(PesOutcome { household_status, proxy_reported, person_captured, records, procedure })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{draw_sample, SampleDesign};
    use crate::seeds::stream_rng;

    fn config(persons: usize, mover_rate: f64) -> PopulationConfig {
        PopulationConfig { persons, mover_rate, ..PopulationConfig::default() }
    }

    #[test]
    fn no_movers_when_rate_zero() {
        let (pop, _) = synthesize_population(&config(5_000, 0.0), &mut stream_rng(1, 0)).unwrap();
        assert!(pop.persons.iter().all(|p| !p.is_mover()));
        assert_eq!(pop.mover_counts(), (0, 0));
    }

    #[test]
    fn movers_balance_nationally() {
        let cfg = PopulationConfig { birth_rate: 0.0, death_rate: 0.0, ..config(10_000, 0.05) };
        let (pop, _) = synthesize_population(&cfg, &mut stream_rng(2, 0)).unwrap();
        let (inn, out) = pop.mover_counts();
        assert_eq!(inn, out);
        // Household clustering inflates the binomial variance by roughly the mean size.
        let sd = (10_000.0 * 0.05 * 0.95 * 4.0f64).sqrt();
        assert!((inn as f64 - 500.0).abs() < 3.0 * sd, "in-movers {inn}");
    }

    #[test]
    fn no_out_of_scope_without_births_or_deaths() {
        let cfg = PopulationConfig { birth_rate: 0.0, death_rate: 0.0, ..config(4_000, 0.1) };
        let (pop, ledger) = synthesize_population(&cfg, &mut stream_rng(3, 0)).unwrap();
        assert!(pop.persons.iter().all(|p| p.scope == Scope::InScope));
        assert_eq!(ledger.get(&GroupKey::National).t, 4_000);
    }

    #[test]
    fn target_total_is_exact() {
        let (pop, ledger) = synthesize_population(&config(7_777, 0.05), &mut stream_rng(4, 0)).unwrap();
        assert_eq!(pop.true_total(), 7_777);
        assert_eq!(ledger.get(&GroupKey::National).t, 7_777);
        assert!(ledger.identities_hold());
        assert!(pop.persons.iter().any(|p| p.scope == Scope::BornAfterCensus));
        for p in pop.persons.iter().filter(|p| p.scope == Scope::BornAfterCensus) {
            assert!(p.census_dwelling.is_none());
        }
    }

    #[test]
    fn invalid_rates_rejected() {
        assert!(matches!(
            synthesize_population(&config(100, 1.0), &mut stream_rng(0, 0)),
            Err(Error::Config(_))
        ));
        let cfg = PopulationConfig { death_rate: -0.1, ..config(100, 0.0) };
        assert!(synthesize_population(&cfg, &mut stream_rng(0, 0)).is_err());
    }

    #[test]
    fn perfect_census_counts_everyone() {
        let cfg = PopulationConfig { institutional_share: 0.0, ..config(3_000, 0.05) };
        let (pop, _) = synthesize_population(&cfg, &mut stream_rng(5, 0)).unwrap();
        let probs = CaptureProbabilities::uniform(pop.post_strata, 1.0, 1.0, 0.0, 0.0);
        let census = simulate_census(&pop, &probs, &CensusConfig::perfect(), &mut stream_rng(5, 1)).unwrap();
        let national = census.ledger.get(&GroupKey::National);
        assert_eq!(national.c, 3_000);
        assert_eq!(national.t, national.c);
        assert_eq!(national.n(), 0);
    }

    #[test]
    fn census_capture_and_erroneous_counts_are_binomial() {
        let cfg = PopulationConfig { institutional_share: 0.0, birth_rate: 0.0, death_rate: 0.0, ..config(10_000, 0.0) };
        let (pop, _) = synthesize_population(&cfg, &mut stream_rng(6, 0)).unwrap();
        let probs = CaptureProbabilities::uniform(pop.post_strata, 0.95, 0.9, 0.0, 0.0);
        let census_cfg = CensusConfig { ee_rate: 0.01, ..CensusConfig::perfect() };
        let census = simulate_census(&pop, &probs, &census_cfg, &mut stream_rng(6, 1)).unwrap();
        let correct = census.records.iter().filter(|r| r.kind == CensusRecordKind::Correct).count() as f64;
        let erroneous = census.records.iter().filter(|r| r.kind.is_erroneous()).count() as f64;
        assert!((correct - 9_500.0).abs() < 3.0 * (10_000.0 * 0.95 * 0.05f64).sqrt());
        assert!((erroneous - 100.0).abs() < 3.0 * (10_000.0 * 0.01 * 0.99f64).sqrt() + 2.0);
        assert!(census.ledger.identities_hold());
    }

    #[test]
    fn duplicates_are_erroneous_and_elsewhere() {
        let cfg = config(5_000, 0.0);
        let (pop, _) = synthesize_population(&cfg, &mut stream_rng(7, 0)).unwrap();
        let probs = CaptureProbabilities::uniform(pop.post_strata, 0.9, 0.9, 0.0, 0.0);
        let census_cfg = CensusConfig { ee_rate: 0.05, duplicate_share: 1.0, ..CensusConfig::perfect() };
        let census = simulate_census(&pop, &probs, &census_cfg, &mut stream_rng(7, 1)).unwrap();
        let dups: Vec<_> = census.records.iter().filter(|r| r.kind == CensusRecordKind::Duplicate).collect();
        assert!(!dups.is_empty());
        for d in dups {
            assert!(d.kind.is_erroneous());
            assert_ne!(pop.person(d.person.unwrap()).household, d.household);
        }
    }

    #[test]
    fn dependence_shifts_pes_capture_among_census_missed() {
        let cfg = PopulationConfig {
            persons: 200_000,
            institutional_share: 0.0,
            birth_rate: 0.0,
            death_rate: 0.0,
            mover_rate: 0.0,
            ..PopulationConfig::default()
        };
        let (pop, _) = synthesize_population(&cfg, &mut stream_rng(8, 0)).unwrap();
        let theta = 1.0;
        let probs = CaptureProbabilities::uniform(pop.post_strata, 0.7, 0.8, theta, 0.0);
        let census = simulate_census(&pop, &probs, &CensusConfig::perfect(), &mut stream_rng(8, 1)).unwrap();
        let pes = simulate_pes(&pop, &census, &Sample::default(), Procedure::C, &probs, &PesConfig::perfect(), &mut stream_rng(8, 2)).unwrap();
        let (mut hit_c, mut n_c, mut hit_m, mut n_m) = (0.0, 0.0, 0.0, 0.0);
        for p in &pop.persons {
            let captured = pes.person_captured[p.id.0 as usize] as u8 as f64;
            if census.captured(p.id) {
                n_c += 1.0;
                hit_c += captured;
            } else {
                n_m += 1.0;
                hit_m += captured;
            }
        }
        let (rc, rm) = (hit_c / n_c, hit_m / n_m);
        assert!(rm < rc);
        let logit = |p: f64| (p / (1.0 - p)).ln();
        // Delta-method standard error of the log-odds difference.
        let se = (1.0 / (n_c * rc * (1.0 - rc)) + 1.0 / (n_m * rm * (1.0 - rm))).sqrt();
        let shift = logit(rc) - logit(rm);
        assert!((shift - theta).abs() < 3.0 * se, "shift {shift} se {se}");
    }

    fn small_world(seed: u64, pes_cfg: PesConfig) -> (Population, CensusOutcome, Sample, CaptureProbabilities, PesConfig) {
        let cfg = config(6_000, 0.1);
        let (pop, _) = synthesize_population(&cfg, &mut stream_rng(seed, 0)).unwrap();
        let probs = CaptureProbabilities::uniform(pop.post_strata, 0.9, 0.9, 0.0, 0.0);
        let census = simulate_census(&pop, &probs, &CensusConfig::perfect(), &mut stream_rng(seed, 1)).unwrap();
        let sample = draw_sample(&pop.districts, &SampleDesign::default(), &mut stream_rng(seed, 2)).unwrap();
        (pop, census, sample, probs, pes_cfg)
    }

    #[test]
    fn procedure_a_perfect_roster_is_census_time_residents() {
        let (pop, census, sample, _, cfg) = small_world(9, PesConfig::perfect());
        let probs = CaptureProbabilities::uniform(pop.post_strata, 0.9, 1.0, 0.0, 0.0);
        let pes = simulate_pes(&pop, &census, &sample, Procedure::A, &probs, &cfg, &mut stream_rng(9, 3)).unwrap();
        let mut got: Vec<PersonId> = pes.records.iter().filter_map(|r| r.person).collect();
        got.sort();
        let mut want: Vec<PersonId> = sample
            .units
            .iter()
            .flat_map(|u| pop.persons.iter().filter(move |p| p.census_dwelling == Some(u.dwelling)))
            .map(|p| p.id)
            .collect();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn procedure_c_roster_is_union_of_a_and_b() {
        let (pop, census, sample, probs, cfg) = small_world(10, PesConfig::default());
        let run = |p| simulate_pes(&pop, &census, &sample, p, &probs, &cfg, &mut stream_rng(10, 3)).unwrap();
        let key = |r: &PesRecord| (r.dwelling, r.household, r.role, r.person, r.identity.name_key);
        let (a, b, c) = (run(Procedure::A), run(Procedure::B), run(Procedure::C));
        let mut union: Vec<_> = a.records.iter().chain(&b.records).map(key).collect();
        union.sort();
        union.dedup();
        let mut all: Vec<_> = c.records.iter().map(key).collect();
        all.sort();
        assert_eq!(union, all);
        assert_eq!(c.roster(Procedure::A).count(), a.records.len());
    }
}
