//! One replicate end to end: sample, census, PES, listings, matching,
//! follow-up, weights and tallies.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::groups::{GroupKey, GroupLevel};
use crate::matching::{
    follow_up, match_households, match_persons, noninterview_dwellings, tally, CensusListing, Exclusion,
    ExclusionMode, FollowUpTruth, GroupTallies, HouseholdOutcome, MatchOutcome, MatchRecord, PesListing, PesVisit,
    RecordId, TallyRecord,
};
use crate::estimators::Procedure;
use crate::popsim::{
    simulate_census, simulate_pes, synthesize_population, CensusOutcome, CensusRecordKind, CensusHouseholdStatus,
    GroundTruthLedger, HouseholdId, MissReason, MoverStatus, PesHouseholdStatus, PesOutcome, Population, RosterRole,
};
use crate::sampling::{
    draw_sample, noninterview_adjust, DwellingId, InterviewStatus, Sample, WeightedHousehold,
};
use crate::seeds::{replicate_rng, stream_rng, Component, POPULATION_STREAM};

use super::config::ExperimentConfig;

/// The fixed population shared by every replicate of an experiment.
#[derive(Debug, Clone)]
pub struct World {
    pub population: Population,
}

impl World {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        let mut rng = stream_rng(config.seed, POPULATION_STREAM);
        let (population, _) = synthesize_population(&config.population, &mut rng)?;
        Ok(Self { population })
    }
}

/// What the field operations produced for the sampled dwellings.
#[derive(Debug, Clone, Default)]
pub struct FieldData {
    pub census_listings: Vec<CensusListing>,
    pub pes_listings: Vec<PesListing>,
    /// Census records at sampled dwellings, imputed records left out.
    pub census_records: Vec<MatchRecord>,
    /// PES records actually collected.
    pub pes_records: Vec<MatchRecord>,
    pub attributes: HashMap<RecordId, TallyRecord>,
}

/// Listings and collected records for the sample. In recommended mode the
/// follow-up visit resolves temporarily absent households the census did not
/// list, and census households listed without a questionnaire.
pub fn collect_field_data(
    pop: &Population,
    census: &CensusOutcome,
    pes: &PesOutcome,
    sample: &Sample,
    mode: ExclusionMode,
) -> FieldData {
    let mut field = FieldData::default();
    let mut collected: BTreeSet<(DwellingId, HouseholdId, RosterRole)> = BTreeSet::new();

    for unit in &sample.units {
        let dwelling = pop.dwelling(unit.dwelling);
        let (hc, hp) = (dwelling.census_household, dwelling.pes_household);
        let census_listing = match census.household_status[hc.0 as usize] {
            CensusHouseholdStatus::Listed { questionnaire } => {
                Some(CensusListing { dwelling: dwelling.id, household: hc, questionnaire })
            }
            CensusHouseholdStatus::NotListed(_) => None,
        };
        let moved_in = hp != hc;
        let mut current = match pes.household_status[hp.0 as usize] {
            PesHouseholdStatus::Interviewed => Some((hp, PesVisit::Interviewed { moved_in })),
            PesHouseholdStatus::TempAbsent => Some((hp, PesVisit::TempAbsent)),
            PesHouseholdStatus::NotListed(_) => None,
        };
        let interviewed = matches!(current, Some((_, PesVisit::Interviewed { .. })));
        let mut former = (moved_in && interviewed && pes.proxy_reported[hc.0 as usize]).then_some(hc);

        if mode == ExclusionMode::Recommended {
            let absent = matches!(current, Some((_, PesVisit::TempAbsent)));
            match census_listing {
                None if absent => {
                    current = Some((hp, PesVisit::Interviewed { moved_in }));
                    if moved_in {
                        former = Some(hc);
                    }
                }
                Some(c) if !c.questionnaire && !absent => {
                    if !moved_in && current.is_none() {
                        current = Some((hp, PesVisit::Interviewed { moved_in: false }));
                    } else if moved_in {
                        former = Some(hc);
                    }
                }
                _ => {}
            }
        }

        if let Some((h, PesVisit::Interviewed { .. })) = current {
            collected.insert((dwelling.id, h, RosterRole::Current));
        }
        if let Some(f) = former {
            collected.insert((dwelling.id, f, RosterRole::Former));
        }
        field.census_listings.extend(census_listing);
        if current.is_some() || former.is_some() {
            field.pes_listings.push(PesListing { dwelling: dwelling.id, current, former });
        }
    }

    let units: HashMap<DwellingId, (u16, crate::groups::Area)> =
        sample.units.iter().map(|u| (u.dwelling, (u.province, u.area))).collect();
    for r in &census.records {
        let Some(&(province, area)) = units.get(&r.dwelling) else { continue };
        if r.kind == CensusRecordKind::Imputed {
            continue;
        }
        let id = RecordId::census(r.id);
        field.census_records.push(MatchRecord {
            id,
            dwelling: r.dwelling,
            household: r.household,
            role: RosterRole::Current,
            identity: r.identity,
            mover: MoverStatus::Unknown,
        });
        field.attributes.insert(
            id,
            TallyRecord {
                unit: r.dwelling,
                province,
                area,
                post_stratum: r.post_stratum,
                mover: MoverStatus::Unknown,
                in_matched: false,
            },
        );
    }
    for r in &pes.records {
        if !collected.contains(&(r.dwelling, r.household, r.role)) {
            continue;
        }
        let (province, area) = units[&r.dwelling];
        let id = RecordId::pes(r.id);
        field.pes_records.push(MatchRecord {
            id,
            dwelling: r.dwelling,
            household: r.household,
            role: r.role,
            identity: r.identity,
            mover: r.mover,
        });
        field.attributes.insert(
            id,
            TallyRecord { unit: r.dwelling, province, area, post_stratum: r.post_stratum, mover: r.mover, in_matched: false },
        );
    }
    field
}

/// Follow-up answers read from the simulated ground truth.
pub struct SimTruth<'a> {
    pub population: &'a Population,
    pub census: &'a CensusOutcome,
    pub pes: &'a PesOutcome,
}

impl FollowUpTruth for SimTruth<'_> {
    fn census_record_erroneous(&self, index: u32) -> bool {
        self.census.records[index as usize].kind.is_erroneous()
    }

    fn pes_record_erroneous(&self, index: u32) -> bool {
        self.pes.records[index as usize].person.is_none()
    }

    fn census_miss_reason(&self, household: HouseholdId) -> MissReason {
        match self.census.household_status[household.0 as usize] {
            CensusHouseholdStatus::NotListed(reason) => reason,
            CensusHouseholdStatus::Listed { .. } => MissReason::NotRecognized,
        }
    }

    fn pes_miss_reason(&self, household: HouseholdId, dwelling: DwellingId) -> MissReason {
        if self.population.household(household).pes_dwelling != dwelling {
            return MissReason::NotRecognized;
        }
        match self.pes.household_status[household.0 as usize] {
            PesHouseholdStatus::NotListed(reason) => reason,
            _ => MissReason::NotRecognized,
        }
    }
}

/// Scope-adjusted census count and whole-person imputations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CensusCounts {
    pub c: f64,
    pub ii: f64,
}

/// Census counts per cell from the full census file; institutional records are
/// outside the target population and left out.
pub fn census_counts(pop: &Population, census: &CensusOutcome, levels: &[GroupLevel]) -> BTreeMap<GroupKey, CensusCounts> {
    let mut out: BTreeMap<GroupKey, CensusCounts> = BTreeMap::new();
    for r in &census.records {
        if pop.household(r.household).institutional {
            continue;
        }
        let d = pop.dwelling(r.dwelling);
        for key in GroupKey::keys_for(d.province, d.area, r.post_stratum, levels) {
            let e = out.entry(key).or_default();
            e.c += 1.0;
            if r.kind == CensusRecordKind::Imputed {
                e.ii += 1.0;
            }
        }
    }
    out
}

/// Household counts per exclusion cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ExclusionCounts {
    pub temp_absent_no_q: u64,
    pub not_listed_no_q: u64,
    pub temp_absent_unlisted: u64,
}

impl ExclusionCounts {
    pub fn from_households(households: &[HouseholdOutcome]) -> Self {
        let mut c = Self::default();
        for h in households {
            match h.exclusion {
                Exclusion::TempAbsentNoQuestionnaire => c.temp_absent_no_q += 1,
                Exclusion::NotListedNoQuestionnaire => c.not_listed_no_q += 1,
                Exclusion::TempAbsentUnlisted => c.temp_absent_unlisted += 1,
                Exclusion::None => {}
            }
        }
        c
    }
}

/// Everything one replicate generated, kept for export and inspection.
#[derive(Debug, Clone)]
pub struct ReplicateData {
    pub sample: Sample,
    pub census: CensusOutcome,
    pub pes: PesOutcome,
    pub field: FieldData,
    pub initial_households: Vec<HouseholdOutcome>,
    pub initial_persons: Vec<MatchOutcome>,
    pub households: Vec<HouseholdOutcome>,
    pub persons: Vec<MatchOutcome>,
    /// In-movers checked at their census-day address, and the ones found there.
    pub in_checked: BTreeSet<RecordId>,
    pub in_matched: BTreeSet<RecordId>,
    pub weights: HashMap<DwellingId, f64>,
}

/// Per-unit weights; in recommended mode the weight of temporarily absent
/// households without a census questionnaire is spread by noninterview adjustment.
pub fn unit_weights(
    pop: &Population,
    sample: &Sample,
    households: &[HouseholdOutcome],
    mode: ExclusionMode,
) -> Result<HashMap<DwellingId, f64>> {
    if mode == ExclusionMode::Sci {
        return Ok(sample.units.iter().map(|u| (u.dwelling, u.base_weight)).collect());
    }
    let absent = noninterview_dwellings(households);
    let input: Vec<WeightedHousehold> = sample
        .units
        .iter()
        .map(|u| WeightedHousehold {
            household: u.dwelling,
            district: u.district,
            address_type: pop.dwelling(u.dwelling).address_type,
            base_weight: u.base_weight,
            adjusted_weight: u.base_weight,
            status: if absent.contains(&u.dwelling) {
                InterviewStatus::TemporarilyAbsent
            } else {
                InterviewStatus::Interviewed
            },
        })
        .collect();
    Ok(noninterview_adjust(&input)?.into_iter().map(|h| (h.household, h.adjusted_weight)).collect())
}

pub fn simulate_replicate(world: &World, config: &ExperimentConfig, replicate: u64) -> Result<ReplicateData> {
    let pop = &world.population;
    let seed = config.seed;
    let probs = config.capture_probabilities()?;
    let design = config.sample.design(seed);

    let sample = draw_sample(&pop.districts, &design, &mut replicate_rng(seed, replicate, Component::Sample))?;
    let census = simulate_census(pop, &probs, &config.census, &mut replicate_rng(seed, replicate, Component::Census))?;
    let pes = simulate_pes(
        pop,
        &census,
        &sample,
        Procedure::C,
        &probs,
        &config.pes,
        &mut replicate_rng(seed, replicate, Component::Pes),
    )?;
    let mode = config.exclusion_mode;
    let mut field = collect_field_data(pop, &census, &pes, &sample, mode);

    let errors = &config.matching;
    let mut rng = replicate_rng(seed, replicate, Component::Matching);
    let initial_households = match_households(&field.census_listings, &field.pes_listings, mode, errors, &mut rng)?;
    let initial_persons =
        match_persons(&initial_households, &field.census_records, &field.pes_records, errors, &mut rng)?;

    let mut in_checked = BTreeSet::new();
    let mut in_matched = BTreeSet::new();
    if errors.match_in_movers {
        for r in field.pes_records.iter().filter(|r| r.mover == MoverStatus::InMover) {
            in_checked.insert(r.id);
            let person = pes.records[r.id.index as usize].person;
            let found = person.is_some_and(|p| census.matchable(p));
            let missed = errors.in_mover_false_nonmatch > 0.0 && rng.random_bool(errors.in_mover_false_nonmatch);
            if found && !missed {
                in_matched.insert(r.id);
                if let Some(a) = field.attributes.get_mut(&r.id) {
                    a.in_matched = true;
                }
            }
        }
    }

    let truth = SimTruth { population: pop, census: &census, pes: &pes };
    let (households, persons) = follow_up(
        &initial_households,
        &initial_persons,
        &truth,
        errors,
        &mut replicate_rng(seed, replicate, Component::FollowUp),
    )?;
    let weights = unit_weights(pop, &sample, &households, mode)?;

    Ok(ReplicateData {
        sample,
        census,
        pes,
        field,
        initial_households,
        initial_persons,
        households,
        persons,
        in_checked,
        in_matched,
        weights,
    })
}

/// Tallies and census counts for one replicate, per estimation cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateTallies {
    pub groups: BTreeMap<GroupKey, GroupTallies>,
    pub census: BTreeMap<GroupKey, CensusCounts>,
    pub ledger: GroundTruthLedger,
    pub exclusions: ExclusionCounts,
}

pub fn replicate_tallies(world: &World, config: &ExperimentConfig, data: &ReplicateData) -> Result<ReplicateTallies> {
    let groups = tally(
        &data.persons,
        &data.field.attributes,
        &data.weights,
        &config.levels,
        config.matching.match_in_movers,
    )?;
    if groups.is_empty() {
        return Err(Error::DegenerateInputs("the sample produced no matchable records".into()));
    }
    Ok(ReplicateTallies {
        groups,
        census: census_counts(&world.population, &data.census, &config.levels),
        ledger: data.census.ledger.clone(),
        exclusions: ExclusionCounts::from_households(&data.households),
    })
}
