//! Household and person matching between census and PES, field follow-up of
//! nonmatches, and weighted tallies of the final codes.
//!
//! Households are keyed by dwelling. Initial codes: 10 matched, 20 in-mover,
//! 30 out-mover reported by proxies and matched, 40 PES-only, 50 census-only,
//! 42 census listed the household without a questionnaire. Follow-up resolves
//! 40 to 41 (erroneous PES record) or 42/k, and 50 to 51 (erroneous census
//! record) or 52/k, where k is the reason the other source missed the
//! household (1 place omitted, 2 not recognized, 3 count miscounted, 4 person
//! missed within a matched household).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{FCodeTallies, MoverTallies};
use crate::groups::{Area, GroupKey, GroupLevel, PostStratum};
use crate::popsim::{HouseholdId, Identity, MissReason, MoverStatus, RosterRole};
use crate::sampling::DwellingId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    Census,
    Pes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordId {
    pub source: Source,
    pub index: u32,
}

impl RecordId {
    pub fn census(index: u32) -> Self {
        Self { source: Source::Census, index }
    }

    pub fn pes(index: u32) -> Self {
        Self { source: Source::Pes, index }
    }
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.source {
            Source::Census => 'C',
            Source::Pes => 'P',
        };
        write!(f, "{tag}{}", self.index)
    }
}

impl FromStr for RecordId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad record id `{s}`"));
        let source = match s.chars().next() {
            Some('C') => Source::Census,
            Some('P') => Source::Pes,
            _ => return Err(bad()),
        };
        let index = s[1..].parse().map_err(|_| bad())?;
        Ok(Self { source, index })
    }
}

impl Serialize for RecordId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MatchCode {
    Matched,
    InMover,
    OutMoverMatched,
    PesOnly,
    PesErroneous,
    /// Census listed the household without a questionnaire. Final only for households.
    CensusNoQuestionnaire,
    CensusOmission(u8),
    CensusOnly,
    CensusErroneous,
    PesOmission(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Initial,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    Household,
    Person,
}

impl MatchCode {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchCode::Matched => "10",
            MatchCode::InMover => "20",
            MatchCode::OutMoverMatched => "30",
            MatchCode::PesOnly => "40",
            MatchCode::PesErroneous => "41",
            MatchCode::CensusNoQuestionnaire => "42",
            MatchCode::CensusOmission(k) => ["42/1", "42/2", "42/3", "42/4"][k as usize - 1],
            MatchCode::CensusOnly => "50",
            MatchCode::CensusErroneous => "51",
            MatchCode::PesOmission(k) => ["52/1", "52/2", "52/3", "52/4"][k as usize - 1],
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let sub = |k: &str| k.parse::<u8>().ok().filter(|k| (1..=4).contains(k));
        Some(match s {
            "10" => MatchCode::Matched,
            "20" => MatchCode::InMover,
            "30" => MatchCode::OutMoverMatched,
            "40" => MatchCode::PesOnly,
            "41" => MatchCode::PesErroneous,
            "42" => MatchCode::CensusNoQuestionnaire,
            "50" => MatchCode::CensusOnly,
            "51" => MatchCode::CensusErroneous,
            _ => {
                let (head, k) = s.split_once('/')?;
                match head {
                    "42" => MatchCode::CensusOmission(sub(k)?),
                    "52" => MatchCode::PesOmission(sub(k)?),
                    _ => return None,
                }
            }
        })
    }

    pub fn is_legal(self, phase: Phase, level: Level) -> bool {
        use MatchCode::*;
        match (self, phase) {
            (Matched | InMover | OutMoverMatched, _) => true,
            (PesOnly | CensusOnly, Phase::Initial) => true,
            (CensusNoQuestionnaire, Phase::Initial) => true,
            (CensusNoQuestionnaire, Phase::Final) => level == Level::Household,
            (PesErroneous | CensusErroneous | CensusOmission(_) | PesOmission(_), Phase::Final) => true,
            _ => false,
        }
    }
}

impl fmt::Display for MatchCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MatchCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MatchCode::parse(s).ok_or_else(|| Error::UnresolvedCode(format!("unknown match code `{s}`")))
    }
}

/// Records left out of matching because one side has no usable information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Exclusion {
    #[default]
    None,
    /// PES household temporarily absent, census listed it without a questionnaire.
    TempAbsentNoQuestionnaire,
    /// Census listed the household without a questionnaire, PES did not list it.
    NotListedNoQuestionnaire,
    /// PES household temporarily absent, census did not list it.
    TempAbsentUnlisted,
}

impl Exclusion {
    pub fn as_str(self) -> &'static str {
        match self {
            Exclusion::None => "",
            Exclusion::TempAbsentNoQuestionnaire => "temp_absent_no_q",
            Exclusion::NotListedNoQuestionnaire => "not_listed_no_q",
            Exclusion::TempAbsentUnlisted => "temp_absent_unlisted",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "" | "none" => Exclusion::None,
            "temp_absent_no_q" => Exclusion::TempAbsentNoQuestionnaire,
            "not_listed_no_q" => Exclusion::NotListedNoQuestionnaire,
            "temp_absent_unlisted" => Exclusion::TempAbsentUnlisted,
            _ => return None,
        })
    }

    pub fn is_excluded(self) -> bool {
        self != Exclusion::None
    }
}

/// How the three no-information cells are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionMode {
    /// Drop them from matching.
    #[default]
    Sci,
    /// Temporarily absent households go to noninterview adjustment; the other
    /// two cells are resolved by a PES follow-up visit.
    Recommended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CensusListing {
    pub dwelling: DwellingId,
    pub household: HouseholdId,
    pub questionnaire: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PesVisit {
    /// `moved_in`: the household arrived after census day.
    Interviewed { moved_in: bool },
    TempAbsent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PesListing {
    pub dwelling: DwellingId,
    pub current: Option<(HouseholdId, PesVisit)>,
    /// Census-time household reported by proxies after it moved away.
    pub former: Option<HouseholdId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PesSide {
    Current(HouseholdId),
    Former(HouseholdId),
}

impl PesSide {
    pub fn household(self) -> HouseholdId {
        match self {
            PesSide::Current(h) | PesSide::Former(h) => h,
        }
    }

    pub fn role(self) -> RosterRole {
        match self {
            PesSide::Current(_) => RosterRole::Current,
            PesSide::Former(_) => RosterRole::Former,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HouseholdOutcome {
    pub dwelling: DwellingId,
    pub census: Option<HouseholdId>,
    pub pes: Option<PesSide>,
    pub phase: Phase,
    pub code: Option<MatchCode>,
    pub exclusion: Exclusion,
}

impl Serialize for MatchCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl Serialize for Exclusion {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchErrorModel {
    pub household_false_nonmatch: f64,
    pub person_false_nonmatch: f64,
    /// Chance that an unmatched PES person is paired with an unmatched census person.
    pub person_false_match: f64,
    /// Chance follow-up flips erroneous ↔ omitted.
    pub resolution_error: f64,
    pub in_mover_false_nonmatch: f64,
    /// Whether in-movers are also matched at their census-day address.
    pub match_in_movers: bool,
}

impl Default for MatchErrorModel {
    fn default() -> Self {
        Self {
            household_false_nonmatch: 0.0,
            person_false_nonmatch: 0.0,
            person_false_match: 0.0,
            resolution_error: 0.0,
            in_mover_false_nonmatch: 0.0,
            match_in_movers: true,
        }
    }
}

impl MatchErrorModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("household_false_nonmatch", self.household_false_nonmatch),
            ("person_false_nonmatch", self.person_false_nonmatch),
            ("person_false_match", self.person_false_match),
            ("resolution_error", self.resolution_error),
            ("in_mover_false_nonmatch", self.in_mover_false_nonmatch),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("matching.{name} = {v} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    p > 0.0 && rng.random_bool(p)
}

/// Household-level matching by dwelling.
pub fn match_households<R: Rng + ?Sized>(
    census: &[CensusListing],
    pes: &[PesListing],
    mode: ExclusionMode,
    errors: &MatchErrorModel,
    rng: &mut R,
) -> Result<Vec<HouseholdOutcome>> {
    errors.validate()?;
    let mut by_dwelling: BTreeMap<DwellingId, (Option<CensusListing>, Option<PesListing>)> = BTreeMap::new();
    for c in census {
        let slot = &mut by_dwelling.entry(c.dwelling).or_default().0;
        if slot.replace(*c).is_some() {
            return Err(Error::DuplicateKey(format!("census listing for dwelling {}", c.dwelling.0)));
        }
    }
    for p in pes {
        let slot = &mut by_dwelling.entry(p.dwelling).or_default().1;
        if slot.replace(*p).is_some() {
            return Err(Error::DuplicateKey(format!("PES listing for dwelling {}", p.dwelling.0)));
        }
    }

    let mut out = Vec::new();
    for (dwelling, (c, p)) in by_dwelling {
        let mut push = |census: Option<HouseholdId>, pes: Option<PesSide>, code: Option<MatchCode>, exclusion| {
            out.push(HouseholdOutcome { dwelling, census, pes, phase: Phase::Initial, code, exclusion });
        };
        let current = p.and_then(|p| p.current);
        let former = p.and_then(|p| p.former);
        let census_side = |c: &CensusListing| Some(c.household);

        // The PES household living here, and whether it counts as the census household.
        let mut census_handled = false;
        match current {
            Some((_, PesVisit::TempAbsent)) => {
                census_handled = true;
                match c {
                    Some(c) if c.questionnaire => push(census_side(&c), None, Some(MatchCode::Matched), Exclusion::None),
                    Some(c) => push(census_side(&c), None, None, Exclusion::TempAbsentNoQuestionnaire),
                    None => push(None, None, None, Exclusion::TempAbsentUnlisted),
                }
            }
            Some((h, PesVisit::Interviewed { moved_in: false })) => {
                census_handled = true;
                let side = Some(PesSide::Current(h));
                match c {
                    Some(c) if c.questionnaire => {
                        if draw(rng, errors.household_false_nonmatch) {
                            push(census_side(&c), None, Some(MatchCode::CensusOnly), Exclusion::None);
                            push(None, side, Some(MatchCode::PesOnly), Exclusion::None);
                        } else {
                            push(census_side(&c), side, Some(MatchCode::Matched), Exclusion::None);
                        }
                    }
                    Some(c) => push(census_side(&c), side, Some(MatchCode::CensusNoQuestionnaire), Exclusion::None),
                    None => push(None, side, Some(MatchCode::PesOnly), Exclusion::None),
                }
            }
            Some((h, PesVisit::Interviewed { moved_in: true })) => {
                push(None, Some(PesSide::Current(h)), Some(MatchCode::InMover), Exclusion::None);
            }
            None => {}
        }
        if census_handled {
            continue;
        }
        match (c, former) {
            (Some(c), Some(f)) if f == c.household => {
                let side = Some(PesSide::Former(f));
                if c.questionnaire {
                    push(census_side(&c), side, Some(MatchCode::OutMoverMatched), Exclusion::None);
                } else if mode == ExclusionMode::Recommended {
                    push(census_side(&c), side, Some(MatchCode::CensusNoQuestionnaire), Exclusion::None);
                } else {
                    push(census_side(&c), side, None, Exclusion::NotListedNoQuestionnaire);
                }
            }
            (c, f) => {
                if let Some(c) = c {
                    if c.questionnaire {
                        push(census_side(&c), None, Some(MatchCode::CensusOnly), Exclusion::None);
                    } else {
                        push(census_side(&c), None, None, Exclusion::NotListedNoQuestionnaire);
                    }
                }
                if let Some(f) = f {
                    push(None, Some(PesSide::Former(f)), Some(MatchCode::PesOnly), Exclusion::None);
                }
            }
        }
    }
    Ok(out)
}

/// What person matching needs to know about a census or PES record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchRecord {
    pub id: RecordId,
    pub dwelling: DwellingId,
    pub household: HouseholdId,
    pub role: RosterRole,
    pub identity: Identity,
    pub mover: MoverStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchOutcome {
    pub record: RecordId,
    pub partner: Option<RecordId>,
    pub phase: Phase,
    pub code: Option<MatchCode>,
    pub exclusion: Exclusion,
    /// Index of the household outcome the record was matched under.
    #[serde(skip)]
    pub household: usize,
}

type RosterKey = (DwellingId, HouseholdId, RosterRole);

fn index_records(records: &[MatchRecord]) -> HashMap<RosterKey, Vec<usize>> {
    let mut map: HashMap<RosterKey, Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        map.entry((r.dwelling, r.household, r.role)).or_default().push(i);
    }
    map
}

fn unmatched_pes_code(r: &MatchRecord) -> MatchCode {
    match r.mover {
        MoverStatus::Birth | MoverStatus::InMover => MatchCode::InMover,
        _ => MatchCode::PesOnly,
    }
}

/// Person-level matching within each household outcome. Every census and PES
/// record receives exactly one initial outcome.
pub fn match_persons<R: Rng + ?Sized>(
    households: &[HouseholdOutcome],
    census: &[MatchRecord],
    pes: &[MatchRecord],
    errors: &MatchErrorModel,
    rng: &mut R,
) -> Result<Vec<MatchOutcome>> {
    errors.validate()?;
    let census_index = index_records(census);
    let pes_index = index_records(pes);
    let mut out = Vec::with_capacity(census.len() + pes.len());
    let mut seen_census = vec![false; census.len()];
    let mut seen_pes = vec![false; pes.len()];

    for (h, ho) in households.iter().enumerate() {
        let empty = Vec::new();
        let c_ids = ho
            .census
            .and_then(|c| census_index.get(&(ho.dwelling, c, RosterRole::Current)))
            .unwrap_or(&empty);
        let p_ids = ho
            .pes
            .and_then(|p| pes_index.get(&(ho.dwelling, p.household(), p.role())))
            .unwrap_or(&empty);
        for &i in c_ids {
            seen_census[i] = true;
        }
        for &i in p_ids {
            seen_pes[i] = true;
        }
        let mut emit = |record: RecordId, partner: Option<RecordId>, code: Option<MatchCode>, exclusion| {
            out.push(MatchOutcome { record, partner, phase: Phase::Initial, code, exclusion, household: h });
        };

        if ho.exclusion.is_excluded() {
            for &i in c_ids {
                emit(census[i].id, None, None, ho.exclusion);
            }
            for &i in p_ids {
                emit(pes[i].id, None, None, ho.exclusion);
            }
            continue;
        }
        let code = ho.code.expect("non-excluded households carry a code");
        match code {
            MatchCode::Matched if ho.pes.is_none() => {
                for &i in c_ids {
                    emit(census[i].id, None, Some(MatchCode::Matched), Exclusion::None);
                }
            }
            MatchCode::Matched | MatchCode::OutMoverMatched => {
                let mut census_used = vec![false; c_ids.len()];
                let mut pes_partner: Vec<Option<usize>> = vec![None; p_ids.len()];
                for (pi, &p) in p_ids.iter().enumerate() {
                    if pes[p].mover == MoverStatus::Birth {
                        continue;
                    }
                    let hit = c_ids
                        .iter()
                        .enumerate()
                        .find(|(ci, &c)| !census_used[*ci] && census[c].identity == pes[p].identity)
                        .map(|(ci, _)| ci);
                    if let Some(ci) = hit {
                        if !draw(rng, errors.person_false_nonmatch) {
                            census_used[ci] = true;
                            pes_partner[pi] = Some(ci);
                        }
                    }
                }
                if errors.person_false_match > 0.0 {
                    for (pi, &p) in p_ids.iter().enumerate() {
                        if pes_partner[pi].is_some() || pes[p].mover == MoverStatus::Birth {
                            continue;
                        }
                        if let Some(ci) = (0..c_ids.len()).find(|&ci| !census_used[ci]) {
                            if draw(rng, errors.person_false_match) {
                                census_used[ci] = true;
                                pes_partner[pi] = Some(ci);
                            }
                        }
                    }
                }
                let mut census_partner: Vec<Option<usize>> = vec![None; c_ids.len()];
                for (pi, partner) in pes_partner.iter().enumerate() {
                    if let Some(ci) = partner {
                        census_partner[*ci] = Some(pi);
                    }
                }
                let pair_code = |p: &MatchRecord| {
                    if matches!(p.mover, MoverStatus::OutMover | MoverStatus::Death) {
                        MatchCode::OutMoverMatched
                    } else {
                        MatchCode::Matched
                    }
                };
                for (ci, &c) in c_ids.iter().enumerate() {
                    match census_partner[ci] {
                        Some(pi) => {
                            let p = &pes[p_ids[pi]];
                            emit(census[c].id, Some(p.id), Some(pair_code(p)), Exclusion::None)
                        }
                        None => emit(census[c].id, None, Some(MatchCode::CensusOnly), Exclusion::None),
                    }
                }
                for (pi, &p) in p_ids.iter().enumerate() {
                    match pes_partner[pi] {
                        Some(ci) => emit(pes[p].id, Some(census[c_ids[ci]].id), Some(pair_code(&pes[p])), Exclusion::None),
                        None => emit(pes[p].id, None, Some(unmatched_pes_code(&pes[p])), Exclusion::None),
                    }
                }
            }
            MatchCode::CensusNoQuestionnaire => {
                for &i in c_ids {
                    emit(census[i].id, None, Some(MatchCode::CensusOnly), Exclusion::None);
                }
                for &i in p_ids {
                    let code = match unmatched_pes_code(&pes[i]) {
                        MatchCode::InMover => MatchCode::InMover,
                        _ => MatchCode::CensusNoQuestionnaire,
                    };
                    emit(pes[i].id, None, Some(code), Exclusion::None);
                }
            }
            MatchCode::InMover => {
                for &i in p_ids {
                    emit(pes[i].id, None, Some(MatchCode::InMover), Exclusion::None);
                }
                for &i in c_ids {
                    emit(census[i].id, None, Some(MatchCode::CensusOnly), Exclusion::None);
                }
            }
            MatchCode::PesOnly => {
                for &i in p_ids {
                    emit(pes[i].id, None, Some(unmatched_pes_code(&pes[i])), Exclusion::None);
                }
            }
            MatchCode::CensusOnly => {
                for &i in c_ids {
                    emit(census[i].id, None, Some(MatchCode::CensusOnly), Exclusion::None);
                }
            }
            other => {
                return Err(Error::UnresolvedCode(format!("household code {other} is not an initial code")));
            }
        }
    }

    if let Some(i) = seen_census.iter().position(|s| !s) {
        return Err(Error::DegenerateInputs(format!("census record {} has no household outcome", census[i].id)));
    }
    if let Some(i) = seen_pes.iter().position(|s| !s) {
        return Err(Error::DegenerateInputs(format!("PES record {} has no household outcome", pes[i].id)));
    }
    Ok(out)
}

/// What a field follow-up visit learns.
pub trait FollowUpTruth {
    fn census_record_erroneous(&self, index: u32) -> bool;
    fn pes_record_erroneous(&self, index: u32) -> bool;
    /// Why the census missed a household the PES found.
    fn census_miss_reason(&self, household: HouseholdId) -> MissReason;
    /// Why the PES missed a census household at this dwelling.
    fn pes_miss_reason(&self, household: HouseholdId, dwelling: DwellingId) -> MissReason;

    fn pes_household_erroneous(&self, _household: HouseholdId) -> bool {
        false
    }

    fn census_household_erroneous(&self, _household: HouseholdId) -> bool {
        false
    }
}

fn reason_index(r: MissReason) -> u8 {
    r as u8
}

/// Resolve every 40 and 50 to a final code. Persons take the household's
/// omission reason when the household itself was missed, and reason 4
/// otherwise. Each resolution is flipped with probability `resolution_error`.
/// Errors if anything stays unresolved.
pub fn follow_up<R: Rng + ?Sized, T: FollowUpTruth + ?Sized>(
    households: &[HouseholdOutcome],
    persons: &[MatchOutcome],
    truth: &T,
    errors: &MatchErrorModel,
    rng: &mut R,
) -> Result<(Vec<HouseholdOutcome>, Vec<MatchOutcome>)> {
    errors.validate()?;
    let mut final_households = Vec::with_capacity(households.len());
    for h in households {
        let code = match h.code {
            Some(MatchCode::PesOnly) => {
                let hh = h.pes.expect("PES-only households have a PES side").household();
                let erroneous = truth.pes_household_erroneous(hh) ^ draw(rng, errors.resolution_error);
                Some(if erroneous {
                    MatchCode::PesErroneous
                } else {
                    MatchCode::CensusOmission(reason_index(truth.census_miss_reason(hh)))
                })
            }
            Some(MatchCode::CensusOnly) => {
                let hh = h.census.expect("census-only households have a census side");
                let erroneous = truth.census_household_erroneous(hh) ^ draw(rng, errors.resolution_error);
                Some(if erroneous {
                    MatchCode::CensusErroneous
                } else {
                    MatchCode::PesOmission(reason_index(truth.pes_miss_reason(hh, h.dwelling)))
                })
            }
            other => other,
        };
        final_households.push(HouseholdOutcome { phase: Phase::Final, code, ..*h });
    }

    let mut final_persons = Vec::with_capacity(persons.len());
    for p in persons {
        let household_code = final_households[p.household].code;
        let code = match p.code {
            Some(MatchCode::PesOnly | MatchCode::CensusNoQuestionnaire) => {
                let k = match household_code {
                    Some(MatchCode::CensusOmission(k)) => k,
                    _ => 4,
                };
                let erroneous = truth.pes_record_erroneous(p.record.index) ^ draw(rng, errors.resolution_error);
                Some(if erroneous { MatchCode::PesErroneous } else { MatchCode::CensusOmission(k) })
            }
            Some(MatchCode::CensusOnly) => {
                let k = match household_code {
                    Some(MatchCode::PesOmission(k)) => k,
                    _ => 4,
                };
                let erroneous = truth.census_record_erroneous(p.record.index) ^ draw(rng, errors.resolution_error);
                Some(if erroneous { MatchCode::CensusErroneous } else { MatchCode::PesOmission(k) })
            }
            other => other,
        };
        final_persons.push(MatchOutcome { phase: Phase::Final, code, ..*p });
    }
    check_final(&final_households, &final_persons)?;
    Ok((final_households, final_persons))
}

/// Every non-excluded outcome carries a code legal in the final phase.
pub fn check_final(households: &[HouseholdOutcome], persons: &[MatchOutcome]) -> Result<()> {
    let households = households.iter().map(|h| (h.code, h.exclusion, Level::Household, format!("dwelling {}", h.dwelling.0)));
    let persons = persons.iter().map(|p| (p.code, p.exclusion, Level::Person, format!("record {}", p.record)));
    for (code, exclusion, level, what) in households.chain(persons) {
        match (code, exclusion.is_excluded()) {
            (None, true) => {}
            (Some(code), false) if code.is_legal(Phase::Final, level) => {}
            (Some(code), false) => return Err(Error::UnresolvedCode(format!("{what}: code {code} left unresolved"))),
            (None, false) => return Err(Error::UnresolvedCode(format!("{what}: no code"))),
            (Some(code), true) => return Err(Error::UnresolvedCode(format!("{what}: excluded but coded {code}"))),
        }
    }
    Ok(())
}

/// Dwellings whose PES household was temporarily absent and census had no questionnaire.
pub fn noninterview_dwellings(households: &[HouseholdOutcome]) -> BTreeSet<DwellingId> {
    households
        .iter()
        .filter(|h| h.exclusion == Exclusion::TempAbsentNoQuestionnaire)
        .map(|h| h.dwelling)
        .collect()
}

/// Per-record attributes needed for tallying.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TallyRecord {
    /// Sampling unit carrying the weight.
    pub unit: DwellingId,
    pub province: u16,
    pub area: Area,
    pub post_stratum: PostStratum,
    pub mover: MoverStatus,
    /// In-mover matched at the census-day address.
    pub in_matched: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct GroupTallies {
    pub fcodes: FCodeTallies,
    pub movers: MoverTallies,
    /// Weighted E-sample records.
    pub ne_hat: f64,
    /// Weighted erroneous E-sample records.
    pub ee_hat: f64,
    /// Unweighted records dropped as excluded.
    pub excluded: u64,
}

/// Weighted f-code, mover and E-sample totals per estimation cell.
///
/// A person is counted once: through the PES record, or through the census
/// record when it has no partner. PES non-movers coded 10 or 42/k and
/// partnerless census records coded 10 count as non-movers; out-movers and
/// deaths coded 30 or 42/k count as out-movers; in-movers coded 20 (not births)
/// count as in-movers.
pub fn tally(
    outcomes: &[MatchOutcome],
    records: &HashMap<RecordId, TallyRecord>,
    weights: &HashMap<DwellingId, f64>,
    levels: &[GroupLevel],
    in_mover_matching: bool,
) -> Result<BTreeMap<GroupKey, GroupTallies>> {
    let mut groups: BTreeMap<GroupKey, GroupTallies> = BTreeMap::new();
    for o in outcomes {
        let r = records
            .get(&o.record)
            .ok_or_else(|| Error::DegenerateInputs(format!("record {} has no attributes", o.record)))?;
        let keys: Vec<GroupKey> = GroupKey::keys_for(r.province, r.area, r.post_stratum, levels).collect();
        if o.exclusion.is_excluded() {
            for k in &keys {
                groups.entry(*k).or_default().excluded += 1;
            }
            continue;
        }
        let code = match o.code {
            Some(c) if o.phase == Phase::Final && c.is_legal(Phase::Final, Level::Person) => c,
            Some(c) => return Err(Error::UnresolvedCode(format!("record {}: code {c} is not final", o.record))),
            None => return Err(Error::UnresolvedCode(format!("record {}: no code", o.record))),
        };
        let w = *weights
            .get(&r.unit)
            .ok_or_else(|| Error::MissingWeight(format!("unit {} of record {}", r.unit.0, o.record)))?;
        let counted = o.record.source == Source::Pes || o.partner.is_none();

        for k in keys {
            let g = groups.entry(k).or_default();
            if counted {
                match code {
                    MatchCode::Matched => g.fcodes.f10 += w,
                    MatchCode::OutMoverMatched => g.fcodes.f30 += w,
                    MatchCode::CensusOmission(i) => g.fcodes.f42[i as usize - 1] += w,
                    MatchCode::PesOmission(i) => g.fcodes.f52[i as usize - 1] += w,
                    _ => {}
                }
                let m = &mut g.movers;
                match (o.record.source, r.mover, code) {
                    (Source::Pes, MoverStatus::NonMover, MatchCode::Matched) => {
                        m.n_non += w;
                        m.m_non += w;
                    }
                    (Source::Pes, MoverStatus::NonMover, MatchCode::CensusOmission(_)) => m.n_non += w,
                    (Source::Pes, MoverStatus::OutMover | MoverStatus::Death, MatchCode::OutMoverMatched) => {
                        m.n_out += w;
                        m.m_out += w;
                    }
                    (Source::Pes, MoverStatus::OutMover | MoverStatus::Death, MatchCode::CensusOmission(_)) => {
                        m.n_out += w
                    }
                    (Source::Pes, MoverStatus::InMover, MatchCode::InMover) => {
                        m.n_in += w;
                        if r.in_matched {
                            *m.m_in.get_or_insert(0.0) += w;
                        }
                    }
                    (Source::Census, _, MatchCode::Matched) => {
                        m.n_non += w;
                        m.m_non += w;
                    }
                    _ => {}
                }
            }
            if o.record.source == Source::Census {
                g.ne_hat += w;
                if code == MatchCode::CensusErroneous {
                    g.ee_hat += w;
                }
            }
        }
    }
    for (k, g) in groups.iter_mut() {
        g.fcodes.post_stratum = *k;
        g.movers.post_stratum = *k;
        g.movers.m_in = if in_mover_matching { Some(g.movers.m_in.unwrap_or(0.0)) } else { None };
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::popsim::Sex;
    use crate::seeds::stream_rng;

    fn census(d: u32, h: u32, q: bool) -> CensusListing {
        CensusListing { dwelling: DwellingId(d), household: HouseholdId(h), questionnaire: q }
    }

    fn pes(d: u32, current: Option<(u32, PesVisit)>, former: Option<u32>) -> PesListing {
        PesListing {
            dwelling: DwellingId(d),
            current: current.map(|(h, v)| (HouseholdId(h), v)),
            former: former.map(HouseholdId),
        }
    }

    const HERE: PesVisit = PesVisit::Interviewed { moved_in: false };
    const ARRIVED: PesVisit = PesVisit::Interviewed { moved_in: true };

    fn single(c: &[CensusListing], p: &[PesListing], mode: ExclusionMode) -> Vec<(Option<MatchCode>, Exclusion)> {
        match_households(c, p, mode, &MatchErrorModel::default(), &mut stream_rng(0, 0))
            .unwrap()
            .into_iter()
            .map(|h| (h.code, h.exclusion))
            .collect()
    }

    #[test]
    fn household_cells() {
        use Exclusion as E;
        use MatchCode as M;
        let sci = ExclusionMode::Sci;
        assert_eq!(single(&[census(1, 1, true)], &[pes(1, Some((1, HERE)), None)], sci), [(Some(M::Matched), E::None)]);
        assert_eq!(
            single(&[census(1, 1, true)], &[pes(1, Some((1, PesVisit::TempAbsent)), None)], sci),
            [(Some(M::Matched), E::None)]
        );
        assert_eq!(
            single(&[census(1, 1, false)], &[pes(1, Some((1, PesVisit::TempAbsent)), None)], sci),
            [(None, E::TempAbsentNoQuestionnaire)]
        );
        assert_eq!(single(&[census(1, 1, false)], &[], sci), [(None, E::NotListedNoQuestionnaire)]);
        assert_eq!(single(&[], &[pes(1, Some((1, PesVisit::TempAbsent)), None)], sci), [(None, E::TempAbsentUnlisted)]);
        assert_eq!(
            single(&[census(1, 1, false)], &[pes(1, Some((1, HERE)), None)], sci),
            [(Some(M::CensusNoQuestionnaire), E::None)]
        );
        assert_eq!(single(&[census(1, 1, true)], &[], sci), [(Some(M::CensusOnly), E::None)]);
        assert_eq!(single(&[], &[pes(1, Some((1, HERE)), None)], sci), [(Some(M::PesOnly), E::None)]);
        assert_eq!(
            single(&[census(1, 1, true)], &[pes(1, Some((2, ARRIVED)), Some(1))], sci),
            [(Some(M::InMover), E::None), (Some(M::OutMoverMatched), E::None)]
        );
        assert_eq!(
            single(&[census(1, 1, true)], &[pes(1, Some((2, ARRIVED)), None)], sci),
            [(Some(M::InMover), E::None), (Some(M::CensusOnly), E::None)]
        );
        assert_eq!(
            single(&[census(1, 1, false)], &[pes(1, Some((2, ARRIVED)), Some(1))], sci),
            [(Some(M::InMover), E::None), (None, E::NotListedNoQuestionnaire)]
        );
        assert_eq!(
            single(&[census(1, 1, false)], &[pes(1, Some((2, ARRIVED)), Some(1))], ExclusionMode::Recommended),
            [(Some(M::InMover), E::None), (Some(M::CensusNoQuestionnaire), E::None)]
        );
        assert_eq!(
            single(&[], &[pes(1, Some((2, ARRIVED)), Some(1))], sci),
            [(Some(M::InMover), E::None), (Some(M::PesOnly), E::None)]
        );
    }

    #[test]
    fn duplicate_listing_is_an_error() {
        let err = match_households(
            &[census(1, 1, true), census(1, 2, true)],
            &[],
            ExclusionMode::Sci,
            &MatchErrorModel::default(),
            &mut stream_rng(0, 0),
        );
        assert!(matches!(err, Err(Error::DuplicateKey(_))));
    }

    #[test]
    fn code_strings_round_trip() {
        let codes = [
            MatchCode::Matched,
            MatchCode::InMover,
            MatchCode::OutMoverMatched,
            MatchCode::PesOnly,
            MatchCode::PesErroneous,
            MatchCode::CensusNoQuestionnaire,
            MatchCode::CensusOmission(3),
            MatchCode::CensusOnly,
            MatchCode::CensusErroneous,
            MatchCode::PesOmission(4),
        ];
        for c in codes {
            assert_eq!(MatchCode::parse(c.as_str()), Some(c));
        }
        assert_eq!(MatchCode::parse("42/5"), None);
        assert_eq!(MatchCode::parse("99"), None);
        assert!(!MatchCode::CensusNoQuestionnaire.is_legal(Phase::Final, Level::Person));
        assert!(MatchCode::CensusNoQuestionnaire.is_legal(Phase::Final, Level::Household));
        assert!(!MatchCode::PesOnly.is_legal(Phase::Final, Level::Person));
        assert_eq!("P17".parse::<RecordId>().unwrap(), RecordId::pes(17));
    }

    fn person(id: RecordId, household: u32, role: RosterRole, name: u64, mover: MoverStatus) -> MatchRecord {
        MatchRecord {
            id,
            dwelling: DwellingId(1),
            household: HouseholdId(household),
            role,
            identity: Identity { name_key: name, sex: Sex::Female, age: 30 },
            mover,
        }
    }

    struct NoErrors;

    impl FollowUpTruth for NoErrors {
        fn census_record_erroneous(&self, _: u32) -> bool {
            false
        }
        fn pes_record_erroneous(&self, index: u32) -> bool {
            index == 99
        }
        fn census_miss_reason(&self, _: HouseholdId) -> MissReason {
            MissReason::PlaceOmitted
        }
        fn pes_miss_reason(&self, _: HouseholdId, _: DwellingId) -> MissReason {
            MissReason::CountMiscounted
        }
    }

    #[test]
    fn persons_in_matched_household() {
        let errors = MatchErrorModel::default();
        let hh = match_households(&[census(1, 1, true)], &[pes(1, Some((1, HERE)), None)], ExclusionMode::Sci, &errors, &mut stream_rng(0, 0)).unwrap();
        let c = [
            person(RecordId::census(0), 1, RosterRole::Current, 1, MoverStatus::Unknown),
            person(RecordId::census(1), 1, RosterRole::Current, 2, MoverStatus::Unknown),
        ];
        let p = [
            person(RecordId::pes(0), 1, RosterRole::Current, 1, MoverStatus::NonMover),
            person(RecordId::pes(1), 1, RosterRole::Current, 3, MoverStatus::NonMover),
            person(RecordId::pes(2), 1, RosterRole::Current, 4, MoverStatus::Birth),
            person(RecordId::pes(99), 1, RosterRole::Current, 5, MoverStatus::NonMover),
        ];
        let initial = match_persons(&hh, &c, &p, &errors, &mut stream_rng(0, 0)).unwrap();
        assert_eq!(initial.len(), 6);
        let (_, fin) = follow_up(&hh, &initial, &NoErrors, &errors, &mut stream_rng(0, 1)).unwrap();
        let code = |id: RecordId| fin.iter().find(|o| o.record == id).unwrap().code.unwrap();
        assert_eq!(code(RecordId::census(0)), MatchCode::Matched);
        assert_eq!(code(RecordId::pes(0)), MatchCode::Matched);
        assert_eq!(code(RecordId::census(1)), MatchCode::PesOmission(4));
        assert_eq!(code(RecordId::pes(1)), MatchCode::CensusOmission(4));
        assert_eq!(code(RecordId::pes(2)), MatchCode::InMover);
        assert_eq!(code(RecordId::pes(99)), MatchCode::PesErroneous);
    }

    #[test]
    fn unresolved_code_is_rejected() {
        let hh = [HouseholdOutcome {
            dwelling: DwellingId(1),
            census: Some(HouseholdId(1)),
            pes: None,
            phase: Phase::Final,
            code: Some(MatchCode::CensusOnly),
            exclusion: Exclusion::None,
        }];
        assert!(matches!(check_final(&hh, &[]), Err(Error::UnresolvedCode(_))));
    }

    #[test]
    fn tally_counts_each_person_once() {
        let unit = DwellingId(1);
        let rec = |mover| TallyRecord {
            unit,
            province: 0,
            area: Area::Urban,
            post_stratum: PostStratum(0),
            mover,
            in_matched: false,
        };
        let outcome = |record, partner, code| MatchOutcome {
            record,
            partner,
            phase: Phase::Final,
            code: Some(code),
            exclusion: Exclusion::None,
            household: 0,
        };
        let records: HashMap<RecordId, TallyRecord> = [
            (RecordId::census(0), rec(MoverStatus::Unknown)),
            (RecordId::pes(0), rec(MoverStatus::NonMover)),
            (RecordId::census(1), rec(MoverStatus::Unknown)),
            (RecordId::census(2), rec(MoverStatus::Unknown)),
        ]
        .into_iter()
        .collect();
        let outcomes = [
            outcome(RecordId::census(0), Some(RecordId::pes(0)), MatchCode::Matched),
            outcome(RecordId::pes(0), Some(RecordId::census(0)), MatchCode::Matched),
            outcome(RecordId::census(1), None, MatchCode::PesOmission(2)),
            outcome(RecordId::census(2), None, MatchCode::CensusErroneous),
        ];
        let weights = HashMap::from([(unit, 2.5)]);
        let t = tally(&outcomes, &records, &weights, &[GroupLevel::National], false).unwrap();
        let g = &t[&GroupKey::National];
        assert_eq!(g.fcodes.f10, 2.5);
        assert_eq!(g.fcodes.f52[1], 2.5);
        assert_eq!(g.movers.n_non, 2.5);
        assert_eq!(g.ne_hat, 7.5);
        assert_eq!(g.ee_hat, 2.5);
        assert_eq!(g.movers.m_in, None);

        let missing = tally(&outcomes, &records, &HashMap::new(), &[GroupLevel::National], false);
        assert!(matches!(missing, Err(Error::MissingWeight(_))));
    }
}
