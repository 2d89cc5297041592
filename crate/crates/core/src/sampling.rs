//! Two-stage cluster design: districts are PSUs selected systematically within
//! each province × urban/rural cell, households are SSUs taken as a contiguous
//! walk from a random start point.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::Area;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DwellingId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DistrictId(pub u32);

/// Basic-address type, used for noninterview adjustment cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddressType {
    SingleUnit,
    MultiUnit,
    Other,
}

impl AddressType {
    /// Merge order for empty adjustment cells.
    pub const HIERARCHY: [AddressType; 3] = [AddressType::SingleUnit, AddressType::MultiUnit, AddressType::Other];

    fn rank(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct District {
    pub id: DistrictId,
    pub province: u16,
    pub area: Area,
    /// Dwellings in listing order.
    pub households: Vec<DwellingId>,
}

impl District {
    pub fn household_count(&self) -> usize {
        self.households.len()
    }
}

/// Households taken per sampled district.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Take {
    Households(usize),
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleDesign {
    /// Districts sampled per province × area cell; `None` selects every district.
    pub districts_per_cell: Option<usize>,
    pub overrides: BTreeMap<(u16, Area), usize>,
    pub urban_take: Take,
    pub rural_take: Take,
    pub seed: u64,
}

impl Default for SampleDesign {
    fn default() -> Self {
        Self {
            districts_per_cell: Some(4),
            overrides: BTreeMap::new(),
            urban_take: Take::Households(50),
            rural_take: Take::Households(100),
            seed: 0,
        }
    }
}

impl SampleDesign {
    pub fn full_frame(seed: u64) -> Self {
        Self {
            districts_per_cell: None,
            overrides: BTreeMap::new(),
            urban_take: Take::All,
            rural_take: Take::All,
            seed,
        }
    }

    pub fn take(&self, area: Area) -> Take {
        match area {
            Area::Urban => self.urban_take,
            Area::Rural => self.rural_take,
        }
    }

    fn sampled_districts(&self, province: u16, area: Area, tn_d: usize) -> usize {
        self.overrides
            .get(&(province, area))
            .copied()
            .or(self.districts_per_cell)
            .unwrap_or(tn_d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectedPsu {
    /// Index into the frame slice.
    pub frame_index: usize,
    pub n_d: usize,
    pub tn_d: usize,
}

/// Systematic selection of `n` of `tn` ordered units with a uniform random start.
pub fn systematic_indices<R: Rng + ?Sized>(tn: usize, n: usize, rng: &mut R) -> Vec<usize> {
    let step = tn as f64 / n as f64;
    let start = rng.random::<f64>() * step;
    (0..n)
        .map(|i| ((start + i as f64 * step).floor() as usize).min(tn - 1))
        .collect()
}

/// Group the frame into province × area cells, keeping frame order.
fn frame_cells(frame: &[District]) -> BTreeMap<(u16, Area), Vec<usize>> {
    let mut cells: BTreeMap<(u16, Area), Vec<usize>> = BTreeMap::new();
    for (i, d) in frame.iter().enumerate() {
        cells.entry((d.province, d.area)).or_default().push(i);
    }
    cells
}

pub fn select_psus<R: Rng + ?Sized>(
    frame: &[District],
    design: &SampleDesign,
    rng: &mut R,
) -> Result<Vec<SelectedPsu>> {
    if frame.is_empty() {
        return Err(Error::Design("empty district frame".into()));
    }
    let mut selected = Vec::new();
    for ((province, area), members) in frame_cells(frame) {
        let tn_d = members.len();
        let n_d = design.sampled_districts(province, area, tn_d);
        if n_d == 0 || n_d > tn_d {
            return Err(Error::Design(format!(
                "province {province} {area}: cannot sample {n_d} of {tn_d} districts"
            )));
        }
        for i in systematic_indices(tn_d, n_d, rng) {
            selected.push(SelectedPsu { frame_index: members[i], n_d, tn_d });
        }
    }
    Ok(selected)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HouseholdTake {
    pub dwellings: Vec<DwellingId>,
    /// The district had no more households than the take.
    pub short_take: bool,
}

/// Contiguous walk against listing order from a uniform random start, wrapping.
pub fn select_households<R: Rng + ?Sized>(district: &District, take: Take, rng: &mut R) -> HouseholdTake {
    let len = district.households.len();
    if len == 0 {
        return HouseholdTake { dwellings: Vec::new(), short_take: true };
    }
    let (n, short_take) = match take {
        Take::All => (len, true),
        Take::Households(t) if t >= len => (len, true),
        Take::Households(t) => (t.max(1), false),
    };
    let start = rng.random_range(0..len);
    let dwellings = (0..n)
        .map(|i| district.households[(start + len - i % len) % len])
        .collect();
    HouseholdTake { dwellings, short_take }
}

/// Two-stage inclusion probability `(n_d / tn_d) (n_h / tn_h)`.
pub fn selection_probability(n_d: usize, tn_d: usize, n_h: usize, tn_h: usize) -> Result<f64> {
    if n_d == 0 || tn_d == 0 || n_h == 0 || tn_h == 0 {
        return Err(Error::Design("selection counts must be positive".into()));
    }
    if n_d > tn_d || n_h > tn_h {
        return Err(Error::Design(format!(
            "sample exceeds population: {n_d}/{tn_d} districts, {n_h}/{tn_h} households"
        )));
    }
    Ok((n_d as f64 / tn_d as f64) * (n_h as f64 / tn_h as f64))
}

pub fn base_weight(n_d: usize, tn_d: usize, n_h: usize, tn_h: usize) -> Result<f64> {
    selection_probability(n_d, tn_d, n_h, tn_h).map(f64::recip)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampledUnit {
    pub dwelling: DwellingId,
    pub district: DistrictId,
    pub province: u16,
    pub area: Area,
    pub base_weight: f64,
    pub short_take: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sample {
    pub units: Vec<SampledUnit>,
}

impl Sample {
    pub fn base_weight_sum(&self) -> f64 {
        self.units.iter().map(|u| u.base_weight).sum()
    }
}

/// Both stages, with the design's own seed stream supplied by `rng`.
pub fn draw_sample<R: Rng + ?Sized>(frame: &[District], design: &SampleDesign, rng: &mut R) -> Result<Sample> {
    let psus = select_psus(frame, design, rng)?;
    let mut units = Vec::new();
    for psu in psus {
        let district = &frame[psu.frame_index];
        let take = select_households(district, design.take(district.area), rng);
        let n_h = take.dwellings.len();
        let w = base_weight(psu.n_d, psu.tn_d, n_h, district.household_count())?;
        units.extend(take.dwellings.into_iter().map(|dwelling| SampledUnit {
            dwelling,
            district: district.id,
            province: district.province,
            area: district.area,
            base_weight: w,
            short_take: take.short_take,
        }));
    }
    Ok(Sample { units })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterviewStatus {
    Interviewed,
    TemporarilyAbsent,
    NotListed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedHousehold {
    pub household: DwellingId,
    pub district: DistrictId,
    pub address_type: AddressType,
    pub base_weight: f64,
    pub adjusted_weight: f64,
    pub status: InterviewStatus,
}

/// Spread the weight of noninterviewed households over interviewed ones in the
/// same district × address-type cell. Cells without an interviewed household
/// merge into the nearest cell along [`AddressType::HIERARCHY`].
pub fn noninterview_adjust(households: &[WeightedHousehold]) -> Result<Vec<WeightedHousehold>> {
    #[derive(Default, Clone, Copy)]
    struct Cell {
        total: f64,
        interviewed: f64,
    }

    let mut cells: BTreeMap<DistrictId, [Cell; 3]> = BTreeMap::new();
    for h in households {
        let cell = &mut cells.entry(h.district).or_default()[h.address_type.rank()];
        cell.total += h.base_weight;
        if h.status == InterviewStatus::Interviewed {
            cell.interviewed += h.base_weight;
        }
    }

    // Per district: the target cell each address type's weight is pooled into.
    let mut factors: BTreeMap<(DistrictId, usize), f64> = BTreeMap::new();
    for (district, row) in &cells {
        let mut target = [0usize; 3];
        for (rank, cell) in row.iter().enumerate() {
            if cell.interviewed > 0.0 || cell.total == 0.0 {
                target[rank] = rank;
                continue;
            }
            let nearest = (1..3)
                .flat_map(|d| [rank + d, rank.wrapping_sub(d)])
                .find(|&r| r < 3 && row[r].interviewed > 0.0)
                .ok_or_else(|| Error::EmptyCell(format!("district {}", district.0)))?;
            target[rank] = nearest;
        }
        let mut pooled = [Cell::default(); 3];
        for (&t, cell) in target.iter().zip(row) {
            pooled[t].total += cell.total;
            pooled[t].interviewed += cell.interviewed;
        }
        for (rank, cell) in pooled.iter().enumerate() {
            if cell.interviewed > 0.0 {
                factors.insert((*district, rank), cell.total / cell.interviewed);
            }
        }
    }

    Ok(households
        .iter()
        .map(|h| {
            let adjusted_weight = match h.status {
                InterviewStatus::Interviewed => {
                    h.base_weight * factors.get(&(h.district, h.address_type.rank())).copied().unwrap_or(1.0)
                }
                _ => 0.0,
            };
            WeightedHousehold { adjusted_weight, ..*h }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::stream_rng;

    fn district(id: u32, n: u32) -> District {
        District {
            id: DistrictId(id),
            province: 0,
            area: Area::Urban,
            households: (0..n).map(|i| DwellingId(id * 10_000 + i)).collect(),
        }
    }

    fn frame(n: u32) -> Vec<District> {
        (0..n).map(|i| district(i, 20)).collect()
    }

    fn design(n_d: Option<usize>) -> SampleDesign {
        SampleDesign { districts_per_cell: n_d, ..SampleDesign::default() }
    }

    #[test]
    fn census_of_psus() {
        let f = frame(12);
        let sel = select_psus(&f, &design(Some(12)), &mut stream_rng(1, 1)).unwrap();
        let mut idx: Vec<_> = sel.iter().map(|s| s.frame_index).collect();
        idx.sort();
        assert_eq!(idx, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn systematic_step_is_constant() {
        let f = frame(100);
        for seed in 0..20 {
            let sel = select_psus(&f, &design(Some(10)), &mut stream_rng(seed, 3)).unwrap();
            let idx: Vec<_> = sel.iter().map(|s| s.frame_index).collect();
            assert_eq!(idx.len(), 10);
            assert!(idx.windows(2).all(|w| w[1] - w[0] == 10));
        }
    }

    #[test]
    fn too_many_districts_is_an_error() {
        let f = frame(5);
        assert!(matches!(
            select_psus(&f, &design(Some(6)), &mut stream_rng(0, 0)),
            Err(Error::Design(_))
        ));
    }

    #[test]
    fn psu_inclusion_frequency() {
        let f = frame(100);
        let mut hits = vec![0u32; 100];
        let reps = 10_000;
        for seed in 0..reps {
            for s in select_psus(&f, &design(Some(10)), &mut stream_rng(seed, 5)).unwrap() {
                hits[s.frame_index] += 1;
            }
        }
        for h in hits {
            let freq = h as f64 / reps as f64;
            assert!((freq - 0.1).abs() <= 0.01, "frequency {freq}");
        }
    }

    #[test]
    fn whole_district_when_take_exceeds_size() {
        let d = district(1, 30);
        let t = select_households(&d, Take::Households(50), &mut stream_rng(0, 0));
        assert!(t.short_take);
        let mut got = t.dwellings.clone();
        got.sort();
        assert_eq!(got, d.households);
    }

    #[test]
    fn contiguous_wrapping_walk() {
        let d = district(2, 500);
        for seed in 0..50 {
            let t = select_households(&d, Take::Households(50), &mut stream_rng(seed, 9));
            assert!(!t.short_take);
            assert_eq!(t.dwellings.len(), 50);
            let pos: Vec<usize> = t.dwellings.iter().map(|h| (h.0 - 20_000) as usize).collect();
            for w in pos.windows(2) {
                assert_eq!((w[0] + 500 - 1) % 500, w[1]);
            }
        }
    }

    #[test]
    fn household_inclusion_frequency() {
        let d = district(0, 500);
        let mut hits = vec![0u32; 500];
        let reps = 10_000;
        for seed in 0..reps {
            for h in select_households(&d, Take::Households(50), &mut stream_rng(seed, 11)).dwellings {
                hits[h.0 as usize] += 1;
            }
        }
        for h in hits {
            let freq = h as f64 / reps as f64;
            assert!((freq - 0.1).abs() <= 0.01, "frequency {freq}");
        }
    }

    #[test]
    fn selection_probability_examples() {
        assert!((selection_probability(10, 100, 50, 500).unwrap() - 0.01).abs() < 1e-15);
        assert!((base_weight(10, 100, 50, 500).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(selection_probability(37, 37, 412, 412).unwrap(), 1.0);
        assert_eq!(selection_probability(5, 20, 100, 400).unwrap(), 0.0625);
        assert_eq!(base_weight(5, 20, 100, 400).unwrap(), 16.0);
        assert!(selection_probability(5, 4, 1, 1).is_err());
        assert!(selection_probability(0, 4, 1, 1).is_err());
    }

    #[test]
    fn sample_determinism() {
        let f = frame(40);
        let a = draw_sample(&f, &design(Some(7)), &mut stream_rng(99, 2)).unwrap();
        let b = draw_sample(&f, &design(Some(7)), &mut stream_rng(99, 2)).unwrap();
        assert_eq!(a, b);
    }

    fn hh(d: u32, id: u32, t: AddressType, w: f64, status: InterviewStatus) -> WeightedHousehold {
        WeightedHousehold {
            household: DwellingId(id),
            district: DistrictId(d),
            address_type: t,
            base_weight: w,
            adjusted_weight: w,
            status,
        }
    }

    #[test]
    fn all_interviewed_is_identity() {
        let v: Vec<_> = (0..5)
            .map(|i| hh(0, i, AddressType::SingleUnit, 3.0, InterviewStatus::Interviewed))
            .collect();
        assert_eq!(noninterview_adjust(&v).unwrap(), v);
    }

    #[test]
    fn one_noninterview_in_four() {
        let mut v: Vec<_> = (0..4)
            .map(|i| hh(0, i, AddressType::MultiUnit, 6.0, InterviewStatus::Interviewed))
            .collect();
        v[2].status = InterviewStatus::TemporarilyAbsent;
        let out = noninterview_adjust(&v).unwrap();
        for (i, h) in out.iter().enumerate() {
            if i == 2 {
                assert_eq!(h.adjusted_weight, 0.0);
            } else {
                assert!((h.adjusted_weight - 8.0).abs() < 1e-12);
            }
        }
        let total: f64 = out.iter().map(|h| h.adjusted_weight).sum();
        assert!((total - 24.0).abs() < 1e-9);
    }

    #[test]
    fn cells_do_not_share_weight() {
        let v = vec![
            hh(0, 0, AddressType::SingleUnit, 1.0, InterviewStatus::Interviewed),
            hh(0, 1, AddressType::SingleUnit, 1.0, InterviewStatus::NotListed),
            hh(0, 2, AddressType::MultiUnit, 1.0, InterviewStatus::Interviewed),
            hh(1, 3, AddressType::SingleUnit, 5.0, InterviewStatus::Interviewed),
        ];
        let out = noninterview_adjust(&v).unwrap();
        assert_eq!(out[0].adjusted_weight, 2.0);
        assert_eq!(out[2].adjusted_weight, 1.0);
        assert_eq!(out[3].adjusted_weight, 5.0);
    }

    #[test]
    fn empty_cell_merges_along_hierarchy() {
        let v = vec![
            hh(0, 0, AddressType::SingleUnit, 2.0, InterviewStatus::TemporarilyAbsent),
            hh(0, 1, AddressType::MultiUnit, 2.0, InterviewStatus::Interviewed),
            hh(0, 2, AddressType::Other, 2.0, InterviewStatus::Interviewed),
        ];
        let out = noninterview_adjust(&v).unwrap();
        assert_eq!(out[1].adjusted_weight, 4.0);
        assert_eq!(out[2].adjusted_weight, 2.0);
    }

    #[test]
    fn district_without_interviews_is_an_error() {
        let v = vec![hh(4, 0, AddressType::Other, 2.0, InterviewStatus::TemporarilyAbsent)];
        assert!(matches!(noninterview_adjust(&v), Err(Error::EmptyCell(_))));
    }
}
