//! Delimited microdata: export of a simulated replicate, and ingestion back
//! into tallies.
//!
//! All files are UTF-8 CSV with a header row. Row numbers in errors are line
//! numbers, so the first data row is row 2.
//!
//! | file          | columns                                                          |
//! |---------------|------------------------------------------------------------------|
//! | `census.csv`  | `record_id,household_id,province,area,post_stratum,mover,flags`  |
//! | `pes.csv`     | same as `census.csv`                                             |
//! | `codes.csv`   | `record_id,phase,code,exclusion,partner_id`                      |
//! | `weights.csv` | `household_id,weight`                                            |
//!
//! `record_id` is `C<n>` for census and `P<n>` for PES records.
//! `household_id` names the sampled listing unit that carries the weight.
//! `flags` is a `;`-separated subset of `imputed`, `institutional`,
//! `in_checked` (in-mover looked up at its census-day address) and
//! `in_matched` (found there). The census file holds the whole census; only
//! records with a final code enter the tallies.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::groups::{Area, GroupKey, GroupLevel, PostStratum};
use crate::matching::{tally, Exclusion, GroupTallies, MatchCode, MatchOutcome, Phase, RecordId, Source, TallyRecord};
use crate::popsim::{CensusRecordKind, MoverStatus, Population};
use crate::sampling::DwellingId;

use super::pipeline::{CensusCounts, ReplicateData};

const PERSON_COLUMNS: [&str; 7] = ["record_id", "household_id", "province", "area", "post_stratum", "mover", "flags"];
const CODE_COLUMNS: [&str; 5] = ["record_id", "phase", "code", "exclusion", "partner_id"];
const WEIGHT_COLUMNS: [&str; 2] = ["household_id", "weight"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicrodataPaths {
    pub census: PathBuf,
    pub pes: PathBuf,
    pub codes: PathBuf,
    pub weights: PathBuf,
}

impl MicrodataPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            census: dir.join("census.csv"),
            pes: dir.join("pes.csv"),
            codes: dir.join("codes.csv"),
            weights: dir.join("weights.csv"),
        }
    }
}

fn unit_key(d: DwellingId) -> String {
    format!("D{}", d.0)
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// The four microdata files for one replicate, as strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicrodataFiles {
    pub census: String,
    pub pes: String,
    pub codes: String,
    pub weights: String,
}

pub fn export_microdata(pop: &Population, data: &ReplicateData) -> Result<MicrodataFiles> {
    let mut census = csv::Writer::from_writer(Vec::new());
    census.write_record(PERSON_COLUMNS)?;
    for r in &data.census.records {
        let d = pop.dwelling(r.dwelling);
        let mut flags = Vec::new();
        if r.kind == CensusRecordKind::Imputed {
            flags.push("imputed");
        }
        if pop.household(r.household).institutional {
            flags.push("institutional");
        }
        census.write_record([
            RecordId::census(r.id).to_string(),
            unit_key(r.dwelling),
            d.province.to_string(),
            d.area.to_string(),
            r.post_stratum.0.to_string(),
            MoverStatus::Unknown.as_str().to_string(),
            flags.join(";"),
        ])?;
    }

    let mut pes = csv::Writer::from_writer(Vec::new());
    pes.write_record(PERSON_COLUMNS)?;
    for r in &data.field.pes_records {
        let a = &data.field.attributes[&r.id];
        let mut flags = Vec::new();
        if data.in_checked.contains(&r.id) {
            flags.push("in_checked");
        }
        if data.in_matched.contains(&r.id) {
            flags.push("in_matched");
        }
        pes.write_record([
            r.id.to_string(),
            unit_key(a.unit),
            a.province.to_string(),
            a.area.to_string(),
            a.post_stratum.0.to_string(),
            r.mover.as_str().to_string(),
            flags.join(";"),
        ])?;
    }

    let mut codes = csv::Writer::from_writer(Vec::new());
    codes.write_record(CODE_COLUMNS)?;
    for (phase, outcomes) in [(Phase::Initial, &data.initial_persons), (Phase::Final, &data.persons)] {
        for o in outcomes {
            codes.write_record([
                o.record.to_string(),
                match phase {
                    Phase::Initial => "initial".to_string(),
                    Phase::Final => "final".to_string(),
                },
                o.code.map(|c| c.as_str().to_string()).unwrap_or_default(),
                o.exclusion.as_str().to_string(),
                o.partner.map(|p| p.to_string()).unwrap_or_default(),
            ])?;
        }
    }

    let mut weights = csv::Writer::from_writer(Vec::new());
    weights.write_record(WEIGHT_COLUMNS)?;
    for u in &data.sample.units {
        weights.write_record([unit_key(u.dwelling), data.weights[&u.dwelling].to_string()])?;
    }

    Ok(MicrodataFiles {
        census: csv_string(census)?,
        pes: csv_string(pes)?,
        codes: csv_string(codes)?,
        weights: csv_string(weights)?,
    })
}

pub fn write_microdata(files: &MicrodataFiles, dir: &Path) -> Result<MicrodataPaths> {
    std::fs::create_dir_all(dir)?;
    let paths = MicrodataPaths::in_dir(dir);
    std::fs::write(&paths.census, &files.census)?;
    std::fs::write(&paths.pes, &files.pes)?;
    std::fs::write(&paths.codes, &files.codes)?;
    std::fs::write(&paths.weights, &files.weights)?;
    Ok(paths)
}

/// One person per row: identifiers, stratum, true status and the replicate's capture flags.
pub fn population_snapshot(pop: &Population, data: Option<&ReplicateData>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "person_id",
        "household_id",
        "census_dwelling",
        "pes_dwelling",
        "province",
        "area",
        "post_stratum",
        "scope",
        "mover",
        "institutional",
        "census_captured",
        "pes_captured",
    ])?;
    let opt = |d: Option<DwellingId>| d.map(unit_key).unwrap_or_default();
    let flag = |b: Option<bool>| b.map(|b| (b as u8).to_string()).unwrap_or_default();
    for p in &pop.persons {
        let home = p.census_dwelling.or(p.pes_dwelling).expect("every person has a dwelling");
        let d = pop.dwelling(home);
        let scope = serde_json::to_value(p.scope).expect("scope serializes");
        w.write_record([
            p.id.0.to_string(),
            format!("H{}", p.household.0),
            opt(p.census_dwelling),
            opt(p.pes_dwelling),
            d.province.to_string(),
            d.area.to_string(),
            p.post_stratum.0.to_string(),
            scope.as_str().unwrap_or_default().to_string(),
            p.truth_status().as_str().to_string(),
            (p.institutional as u8).to_string(),
            flag(data.map(|d| d.census.captured(p.id))),
            flag(data.map(|d| d.pes.person_captured[p.id.0 as usize])),
        ])?;
    }
    csv_string(w)
}

#[derive(Debug, Clone)]
struct PersonRow {
    record: RecordId,
    unit: String,
    province: u16,
    area: Area,
    post_stratum: PostStratum,
    mover: MoverStatus,
    imputed: bool,
    institutional: bool,
    in_checked: bool,
    in_matched: bool,
}

#[derive(Debug, Clone)]
struct CodeRow {
    row: u64,
    record: RecordId,
    phase: Phase,
    code: Option<MatchCode>,
    exclusion: Exclusion,
    partner: Option<RecordId>,
}

/// Problems found while reading: format errors with a location, and
/// cross-file consistency issues.
#[derive(Debug, Default)]
struct Findings {
    schema: Vec<Error>,
    issues: Vec<String>,
}

fn schema(file: &Path, row: u64, column: &str, message: impl Into<String>) -> Error {
    Error::Schema { file: file.display().to_string(), row, column: column.to_string(), message: message.into() }
}

/// Rows of a CSV file as column-name lookups, header checked.
fn read_rows(path: &Path, columns: &[&str], findings: &mut Findings) -> Vec<(u64, HashMap<String, String>)> {
    let mut reader = match csv::ReaderBuilder::new().has_headers(true).from_path(path) {
        Ok(r) => r,
        Err(e) => {
            findings.schema.push(schema(path, 0, "", e.to_string()));
            return Vec::new();
        }
    };
    let header: Vec<String> = match reader.headers() {
        Ok(h) => h.iter().map(|s| s.trim().to_string()).collect(),
        Err(e) => {
            findings.schema.push(schema(path, 1, "", e.to_string()));
            return Vec::new();
        }
    };
    for c in columns {
        if !header.iter().any(|h| h == c) {
            findings.schema.push(schema(path, 1, c, "missing column"));
        }
    }
    if !findings.schema.is_empty() {
        return Vec::new();
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i as u64 + 2;
        match rec {
            Ok(rec) => rows.push((row, header.iter().cloned().zip(rec.iter().map(|s| s.trim().to_string())).collect())),
            Err(e) => findings.schema.push(schema(path, row, "", e.to_string())),
        }
    }
    rows
}

fn field<'a>(row: &'a HashMap<String, String>, column: &str) -> &'a str {
    row.get(column).map(String::as_str).unwrap_or("")
}

fn read_persons(path: &Path, source: Source, findings: &mut Findings) -> Vec<PersonRow> {
    let mut out = Vec::new();
    for (row, r) in read_rows(path, &PERSON_COLUMNS, findings) {
        let mut bad = |column: &str, message: String| findings.schema.push(schema(path, row, column, message));
        let record = match field(&r, "record_id").parse::<RecordId>() {
            Ok(id) if id.source == source => id,
            Ok(id) => {
                bad("record_id", format!("`{id}` belongs to the other source"));
                continue;
            }
            Err(_) => {
                bad("record_id", format!("bad record id `{}`", field(&r, "record_id")));
                continue;
            }
        };
        let Ok(province) = field(&r, "province").parse() else {
            bad("province", format!("bad province `{}`", field(&r, "province")));
            continue;
        };
        let Ok(area) = field(&r, "area").parse() else {
            bad("area", format!("bad area `{}`", field(&r, "area")));
            continue;
        };
        let Ok(ps) = field(&r, "post_stratum").parse() else {
            bad("post_stratum", format!("bad post-stratum `{}`", field(&r, "post_stratum")));
            continue;
        };
        let Some(mover) = MoverStatus::parse(field(&r, "mover")) else {
            bad("mover", format!("unknown mover status `{}`", field(&r, "mover")));
            continue;
        };
        let mut p = PersonRow {
            record,
            unit: field(&r, "household_id").to_string(),
            province,
            area,
            post_stratum: PostStratum(ps),
            mover,
            imputed: false,
            institutional: false,
            in_checked: false,
            in_matched: false,
        };
        let mut ok = true;
        for flag in field(&r, "flags").split(';').map(str::trim).filter(|f| !f.is_empty()) {
            match flag {
                "imputed" => p.imputed = true,
                "institutional" => p.institutional = true,
                "in_checked" => p.in_checked = true,
                "in_matched" => p.in_matched = true,
                other => {
                    bad("flags", format!("unknown flag `{other}`"));
                    ok = false;
                }
            }
        }
        if p.unit.is_empty() {
            bad("household_id", "empty household id".into());
            ok = false;
        }
        if ok {
            out.push(p);
        }
    }
    out
}

fn read_codes(path: &Path, findings: &mut Findings) -> Vec<CodeRow> {
    let mut out = Vec::new();
    for (row, r) in read_rows(path, &CODE_COLUMNS, findings) {
        let mut bad = |column: &str, message: String| findings.schema.push(schema(path, row, column, message));
        let Ok(record) = field(&r, "record_id").parse() else {
            bad("record_id", format!("bad record id `{}`", field(&r, "record_id")));
            continue;
        };
        let phase = match field(&r, "phase") {
            "initial" => Phase::Initial,
            "final" => Phase::Final,
            other => {
                bad("phase", format!("unknown phase `{other}`"));
                continue;
            }
        };
        let code = match field(&r, "code") {
            "" => None,
            s => match MatchCode::parse(s) {
                Some(c) => Some(c),
                None => {
                    bad("code", format!("unknown code `{s}`"));
                    continue;
                }
            },
        };
        let Some(exclusion) = Exclusion::parse(field(&r, "exclusion")) else {
            bad("exclusion", format!("unknown exclusion `{}`", field(&r, "exclusion")));
            continue;
        };
        let partner = match field(&r, "partner_id") {
            "" => None,
            s => match s.parse() {
                Ok(p) => Some(p),
                Err(_) => {
                    bad("partner_id", format!("bad record id `{s}`"));
                    continue;
                }
            },
        };
        match (code, exclusion.is_excluded()) {
            (None, false) => bad("code", "a record that is not excluded needs a code".into()),
            (Some(c), true) => bad("code", format!("excluded record carries code {c}")),
            (Some(c), false) if !c.is_legal(phase, crate::matching::Level::Person) => {
                bad("code", format!("code {c} is not legal in the {} phase", field(&r, "phase")))
            }
            _ => out.push(CodeRow { row, record, phase, code, exclusion, partner }),
        }
    }
    out
}

fn read_weights(path: &Path, findings: &mut Findings) -> HashMap<String, f64> {
    let mut out = HashMap::new();
    for (row, r) in read_rows(path, &WEIGHT_COLUMNS, findings) {
        let unit = field(&r, "household_id").to_string();
        match field(&r, "weight").parse::<f64>() {
            Ok(w) if w >= 0.0 && w.is_finite() => {
                if out.insert(unit.clone(), w).is_some() {
                    findings.issues.push(format!("{}: duplicate household id `{unit}`", path.display()));
                }
            }
            _ => findings.schema.push(schema(path, row, "weight", format!("bad weight `{}`", field(&r, "weight")))),
        }
    }
    out
}

/// Tallies and census counts read back from microdata.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ingested {
    pub groups: BTreeMap<GroupKey, GroupTallies>,
    pub census: BTreeMap<GroupKey, CensusCounts>,
    pub in_mover_matching: bool,
}

struct Loaded {
    findings: Findings,
    census: Vec<PersonRow>,
    pes: Vec<PersonRow>,
    codes: Vec<CodeRow>,
    weights: HashMap<String, f64>,
}

fn load(paths: &MicrodataPaths) -> Loaded {
    let mut findings = Findings::default();
    let census = read_persons(&paths.census, Source::Census, &mut findings);
    let pes = read_persons(&paths.pes, Source::Pes, &mut findings);
    let codes = read_codes(&paths.codes, &mut findings);
    let weights = read_weights(&paths.weights, &mut findings);

    let mut ids = BTreeSet::new();
    for p in census.iter().chain(&pes) {
        if !ids.insert(p.record) {
            findings.issues.push(format!("duplicate record id `{}`", p.record));
        }
    }
    let mut finals = BTreeSet::new();
    let persons: HashMap<RecordId, &PersonRow> = census.iter().chain(&pes).map(|p| (p.record, p)).collect();
    for c in &codes {
        let Some(p) = persons.get(&c.record) else {
            findings.issues.push(format!("codes row {}: unknown record `{}`", c.row, c.record));
            continue;
        };
        if c.phase == Phase::Final {
            if !finals.insert(c.record) {
                findings.issues.push(format!("codes row {}: second final code for `{}`", c.row, c.record));
            }
            if p.imputed {
                findings.issues.push(format!("codes row {}: imputed record `{}` was matched", c.row, c.record));
            }
            if !c.exclusion.is_excluded() && !weights.contains_key(&p.unit) {
                findings.issues.push(format!("codes row {}: missing weight for household `{}`", c.row, p.unit));
            }
        }
        if let Some(partner) = c.partner {
            if !persons.contains_key(&partner) {
                findings.issues.push(format!("codes row {}: unknown partner `{partner}`", c.row));
            }
        }
    }
    Loaded { findings, census, pes, codes, weights }
}

/// Every schema and consistency problem in the files, as messages. Empty when the files are clean.
pub fn validate_microdata(paths: &MicrodataPaths) -> Vec<String> {
    let Loaded { findings, .. } = load(paths);
    findings
        .schema
        .iter()
        .map(ToString::to_string)
        .chain(findings.issues)
        .collect()
}

pub fn ingest_microdata(paths: &MicrodataPaths, levels: &[GroupLevel]) -> Result<Ingested> {
    let Loaded { mut findings, census, pes, codes, weights } = load(paths);
    if !findings.schema.is_empty() {
        return Err(findings.schema.swap_remove(0));
    }
    if !findings.issues.is_empty() {
        return Err(Error::Validation(findings.issues));
    }

    let mut units: HashMap<String, DwellingId> = HashMap::new();
    let mut intern = |u: &str| {
        let n = units.len() as u32;
        *units.entry(u.to_string()).or_insert(DwellingId(n))
    };
    let mut attributes = HashMap::new();
    for p in census.iter().chain(&pes) {
        attributes.insert(
            p.record,
            TallyRecord {
                unit: intern(p.unit.as_str()),
                province: p.province,
                area: p.area,
                post_stratum: p.post_stratum,
                mover: p.mover,
                in_matched: p.in_matched,
            },
        );
    }
    let unit_weights: HashMap<DwellingId, f64> =
        weights.iter().map(|(u, w)| (intern(u.as_str()), *w)).collect();
    let outcomes: Vec<MatchOutcome> = codes
        .iter()
        .filter(|c| c.phase == Phase::Final)
        .map(|c| MatchOutcome {
            record: c.record,
            partner: c.partner,
            phase: Phase::Final,
            code: c.code,
            exclusion: c.exclusion,
            household: 0,
        })
        .collect();
    let in_mover_matching = pes.iter().any(|p| p.in_checked);
    let groups = tally(&outcomes, &attributes, &unit_weights, levels, in_mover_matching)?;

    let mut counts: BTreeMap<GroupKey, CensusCounts> = BTreeMap::new();
    for p in census.iter().filter(|p| !p.institutional) {
        for key in GroupKey::keys_for(p.province, p.area, p.post_stratum, levels) {
            let e = counts.entry(key).or_default();
            e.c += 1.0;
            if p.imputed {
                e.ii += 1.0;
            }
        }
    }
    Ok(Ingested { groups, census: counts, in_mover_matching })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, census: &str, pes: &str, codes: &str, weights: &str) -> MicrodataPaths {
        let files = MicrodataFiles {
            census: census.into(),
            pes: pes.into(),
            codes: codes.into(),
            weights: weights.into(),
        };
        write_microdata(&files, dir).unwrap()
    }

    const CENSUS: &str = "record_id,household_id,province,area,post_stratum,mover,flags\nC0,D1,0,urban,3,unknown,\nC1,D1,0,urban,3,unknown,imputed\n";
    const PES: &str = "record_id,household_id,province,area,post_stratum,mover,flags\nP0,D1,0,urban,3,non,\n";
    const WEIGHTS: &str = "household_id,weight\nD1,16\n";

    #[test]
    fn ingests_a_small_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let codes = "record_id,phase,code,exclusion,partner_id\nC0,final,10,,P0\nP0,final,10,,C0\n";
        let paths = write(dir.path(), CENSUS, PES, codes, WEIGHTS);
        let got = ingest_microdata(&paths, &[GroupLevel::National]).unwrap();
        let g = &got.groups[&GroupKey::National];
        assert_eq!(g.fcodes.f10, 16.0);
        assert_eq!(g.movers.n_non, 16.0);
        assert_eq!(got.census[&GroupKey::National], CensusCounts { c: 2.0, ii: 1.0 });
        assert!(!got.in_mover_matching);
    }

    #[test]
    fn unknown_code_names_its_row() {
        let dir = tempfile::tempdir().unwrap();
        let codes = "record_id,phase,code,exclusion,partner_id\nC0,final,10,,P0\nP0,final,77,,\n";
        let paths = write(dir.path(), CENSUS, PES, codes, WEIGHTS);
        match ingest_microdata(&paths, &[GroupLevel::National]) {
            Err(Error::Schema { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "code");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation_lists_every_problem() {
        let dir = tempfile::tempdir().unwrap();
        let census = format!("{CENSUS}C0,D2,0,urban,3,unknown,\n");
        let codes = "record_id,phase,code,exclusion,partner_id\nC0,final,10,,P0\nP0,final,40,,\nP9,final,10,,\n";
        let paths = write(dir.path(), &census, PES, codes, "household_id,weight\nD3,1\n");
        let issues = validate_microdata(&paths);
        assert!(issues.iter().any(|i| i.contains("duplicate record id")));
        assert!(issues.iter().any(|i| i.contains("not legal")));
        assert!(issues.iter().any(|i| i.contains("unknown record `P9`")));
        assert!(issues.iter().any(|i| i.contains("missing weight")));
        fs::remove_file(&paths.weights).unwrap();
        assert!(!validate_microdata(&paths).is_empty());
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write(dir.path(), "record_id,household_id\nC0,D1\n", PES, "record_id,phase,code,exclusion,partner_id\n", WEIGHTS);
        assert!(matches!(ingest_microdata(&paths, &[GroupLevel::National]), Err(Error::Schema { row: 1, .. })));
    }
}
