//! Ownership verification: trigger statistics, distribution recovery, the
//! verdict rule, and identification of the leaking user.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, l2_sq_normalized, EmbeddingSpace};
use crate::error::{Error, Result};
use crate::io::{read_wmt1, space_digest, write_wmt1};
use crate::ks::ks_two_sample;
use crate::transform::{apply_matrix, invert_transform, TransformMatrix, TransformMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatSource {
    Stealer,
    Original,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatSubset {
    Trigger,
    Benign,
}

/// Per-pair image/text cosine and squared distance over a subset of pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStatList {
    pub ids: Vec<String>,
    pub cosines: Vec<f64>,
    pub l2s: Vec<f64>,
    pub source: StatSource,
    pub subset: StatSubset,
}

impl PairStatList {
    pub fn len(&self) -> usize {
        self.cosines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cosines.is_empty()
    }

    pub fn mean_cosine(&self) -> Result<f64> {
        mean(&self.cosines)
    }

    pub fn mean_l2(&self) -> Result<f64> {
        mean(&self.l2s)
    }
}

fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyStats);
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn pair_stats(
    space: &EmbeddingSpace,
    subset_ids: &[String],
    source: StatSource,
    subset: StatSubset,
) -> Result<PairStatList> {
    let mut cosines = Vec::with_capacity(subset_ids.len());
    let mut l2s = Vec::with_capacity(subset_ids.len());
    for id in subset_ids {
        let (v, t) = space.pair(id)?;
        cosines.push(cosine(v.values(), t.values())?);
        l2s.push(l2_sq_normalized(v.values(), t.values())?);
    }
    Ok(PairStatList {
        ids: subset_ids.to_vec(),
        cosines,
        l2s,
        source,
        subset,
    })
}

/// `(mean cos_s - mean cos_o, mean l2_s - mean l2_o)`.
pub fn delta_metrics(stealer: &PairStatList, original: &PairStatList) -> Result<(f64, f64)> {
    let delta_cos = stealer.mean_cosine()? - original.mean_cosine()?;
    let delta_l2 = stealer.mean_l2()? - original.mean_l2()?;
    debug_assert!((-2.0..=2.0).contains(&delta_cos));
    debug_assert!((-4.0..=4.0).contains(&delta_l2));
    Ok((delta_cos, delta_l2))
}

/// Maps a suspect space back through `W⁻¹`, re-normalizing.
pub fn recover_space(w: &TransformMatrix, stealer: &EmbeddingSpace) -> Result<EmbeddingSpace> {
    apply_matrix(&invert_transform(w)?, stealer)
}

/// Mean cosine between recovered and original vectors over `benign_ids`,
/// image and text sides pooled.
pub fn c_avg(
    recovered: &EmbeddingSpace,
    original: &EmbeddingSpace,
    benign_ids: &[String],
) -> Result<f64> {
    if benign_ids.is_empty() {
        return Err(Error::EmptyStats);
    }
    let mut total = 0.0;
    for id in benign_ids {
        let (ri, rt) = recovered.pair(id)?;
        let (oi, ot) = original.pair(id)?;
        total += cosine(ri.values(), oi.values())? + cosine(rt.values(), ot.values())?;
    }
    Ok(total / (2 * benign_ids.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// The trigger branch needs `p < p_value`.
    #[serde(default = "default_p")]
    pub p_value: f64,
    /// The trigger branch needs `delta_cos > delta_cos`.
    #[serde(default)]
    pub delta_cos: f64,
    /// The distribution branch needs `c_avg > c_avg`.
    #[serde(default = "default_c_avg")]
    pub c_avg: f64,
}

fn default_p() -> f64 {
    5e-3
}
fn default_c_avg() -> f64 {
    0.4
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            p_value: default_p(),
            delta_cos: 0.0,
            c_avg: default_c_avg(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Infringing,
    Clean,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Infringing => "infringing",
            Verdict::Clean => "clean",
        })
    }
}

pub fn verdict(p_value: f64, delta_cos: f64, c_avg: Option<f64>, th: &Thresholds) -> Verdict {
    let trigger = p_value < th.p_value && delta_cos > th.delta_cos;
    let distribution = c_avg.is_some_and(|c| c > th.c_avg);
    if trigger || distribution {
        Verdict::Infringing
    } else {
        Verdict::Clean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigests {
    pub stealer: String,
    pub original: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub delta_cos: f64,
    pub delta_l2: f64,
    pub ks_statistic: f64,
    pub p_value: f64,
    pub c_avg: Option<f64>,
    pub verdict: Verdict,
    pub thresholds: Thresholds,
    pub trigger_count: usize,
    pub benign_count: usize,
    pub digests: InputDigests,
}

impl VerificationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Benign pairs and the transform used for the distribution branch.
#[derive(Debug, Clone, Copy)]
pub struct DistributionCheck<'a> {
    pub transform: &'a TransformMatrix,
    pub benign_ids: &'a [String],
}

/// Runs both checks of a suspect space against the provider's original space.
pub fn verify(
    stealer: &EmbeddingSpace,
    original: &EmbeddingSpace,
    trigger_ids: &[String],
    distribution: Option<DistributionCheck<'_>>,
    thresholds: &Thresholds,
) -> Result<VerificationReport> {
    let s = pair_stats(
        stealer,
        trigger_ids,
        StatSource::Stealer,
        StatSubset::Trigger,
    )?;
    let o = pair_stats(
        original,
        trigger_ids,
        StatSource::Original,
        StatSubset::Trigger,
    )?;
    let (delta_cos, delta_l2) = delta_metrics(&s, &o)?;
    let ks = ks_two_sample(&s.cosines, &o.cosines)?;
    let (c, benign_count) = match distribution {
        Some(check) => {
            let recovered = recover_space(check.transform, &stealer.subset(check.benign_ids)?)?;
            (
                Some(c_avg(&recovered, original, check.benign_ids)?),
                check.benign_ids.len(),
            )
        }
        None => (None, 0),
    };
    Ok(VerificationReport {
        delta_cos,
        delta_l2,
        ks_statistic: ks.statistic,
        p_value: ks.p_value,
        c_avg: c,
        verdict: verdict(ks.p_value, delta_cos, c, thresholds),
        thresholds: *thresholds,
        trigger_count: trigger_ids.len(),
        benign_count,
        digests: InputDigests {
            stealer: space_digest(stealer)?,
            original: space_digest(original)?,
        },
    })
}

/// CSV of `id, cos_stealer, cos_original, l2_stealer, l2_original`.
pub fn write_pair_csv(
    out: impl Write,
    stealer: &PairStatList,
    original: &PairStatList,
) -> Result<()> {
    if stealer.ids != original.ids {
        return Err(Error::InvalidConfig(
            "stat lists cover different pairs".into(),
        ));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "id",
        "cos_stealer",
        "cos_original",
        "l2_stealer",
        "l2_original",
    ])
    .map_err(csv_err)?;
    for i in 0..stealer.len() {
        w.write_record([
            stealer.ids[i].clone(),
            stealer.cosines[i].to_string(),
            original.cosines[i].to_string(),
            stealer.l2s[i].to_string(),
            original.l2s[i].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// CSV of a score matrix; rows are suspect spaces, columns registry users.
pub fn write_score_csv(
    out: impl Write,
    row_labels: &[String],
    users: &[String],
    scores: &[Vec<f64>],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = std::iter::once("suspect".to_string())
        .chain(users.iter().cloned())
        .collect();
    w.write_record(&header).map_err(csv_err)?;
    for (label, row) in row_labels.iter().zip(scores) {
        let rec: Vec<String> = std::iter::once(label.clone())
            .chain(row.iter().map(|s| s.to_string()))
            .collect();
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Per-user watermark transforms.
#[derive(Debug, Clone)]
pub struct UserRegistry {
    entries: Vec<(String, TransformMatrix)>,
}

#[derive(Serialize, Deserialize)]
struct RegistryFile {
    users: Vec<RegistryEntry>,
}

#[derive(Serialize, Deserialize)]
struct RegistryEntry {
    user_id: String,
    matrix: String,
    meta: TransformMeta,
}

pub const REGISTRY_FILE: &str = "registry.json";

impl UserRegistry {
    pub fn new(entries: Vec<(String, TransformMatrix)>) -> Result<Self> {
        let mut reg = UserRegistry {
            entries: Vec::new(),
        };
        for (id, w) in entries {
            reg.push(id, w)?;
        }
        Ok(reg)
    }

    pub fn push(&mut self, user_id: String, w: TransformMatrix) -> Result<()> {
        if self.entries.iter().any(|(id, _)| *id == user_id) {
            return Err(Error::DuplicateId(user_id));
        }
        if let Some((_, first)) = self.entries.first() {
            if first.dim() != w.dim() {
                return Err(Error::DimensionMismatch {
                    expected: first.dim(),
                    found: w.dim(),
                });
            }
        }
        self.entries.push((user_id, w));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn user_ids(&self) -> Vec<String> {
        self.entries.iter().map(|(id, _)| id.clone()).collect()
    }

    pub fn entries(&self) -> &[(String, TransformMatrix)] {
        &self.entries
    }

    pub fn get(&self, user_id: &str) -> Option<&TransformMatrix> {
        self.entries
            .iter()
            .find(|(id, _)| id == user_id)
            .map(|(_, w)| w)
    }

    /// Writes `registry.json` and one WMT1 file per user into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut users = Vec::with_capacity(self.entries.len());
        for (i, (id, w)) in self.entries.iter().enumerate() {
            let name = format!("user-{i:04}.wmt");
            write_wmt1(dir.join(&name), &w.w)?;
            users.push(RegistryEntry {
                user_id: id.clone(),
                matrix: name,
                meta: w.meta(),
            });
        }
        fs::write(
            dir.join(REGISTRY_FILE),
            serde_json::to_string_pretty(&RegistryFile { users })?,
        )?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let file: RegistryFile = serde_json::from_slice(&fs::read(dir.join(REGISTRY_FILE))?)?;
        let mut reg = UserRegistry {
            entries: Vec::new(),
        };
        for e in file.users {
            let m = read_wmt1(dir.join(&e.matrix))?;
            reg.push(e.user_id, TransformMatrix::with_meta(m, &e.meta)?)?;
        }
        Ok(reg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub user_id: String,
    pub index: usize,
    /// `c_avg` per registry entry in registry order; `-inf` for singular transforms.
    pub scores: Vec<f64>,
}

/// Scores every registered transform by `c_avg` after recovery and returns
/// the best one (lowest index on ties).
pub fn identify_user(
    stealer: &EmbeddingSpace,
    original: &EmbeddingSpace,
    registry: &UserRegistry,
    benign_ids: &[String],
) -> Result<Identification> {
    if registry.is_empty() {
        return Err(Error::EmptyRegistry);
    }
    let suspect = stealer.subset(benign_ids)?;
    let scores: Vec<f64> = registry
        .entries
        .par_iter()
        .map(|(id, w)| match recover_space(w, &suspect) {
            Ok(rec) => c_avg(&rec, original, benign_ids),
            Err(Error::SingularMatrix { .. }) => {
                log::warn!("transform of user {id} is singular; scoring it -inf");
                Ok(f64::NEG_INFINITY)
            }
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let mut index = 0;
    for (k, s) in scores.iter().enumerate() {
        if *s > scores[index] {
            index = k;
        }
    }
    Ok(Identification {
        user_id: registry.entries[index].0.clone(),
        index,
        scores,
    })
}

/// Row `i` holds the registry scores of suspect space `i`.
pub fn score_matrix(
    suspects: &[EmbeddingSpace],
    original: &EmbeddingSpace,
    registry: &UserRegistry,
    benign_ids: &[String],
) -> Result<Vec<Vec<f64>>> {
    suspects
        .iter()
        .map(|s| identify_user(s, original, registry, benign_ids).map(|r| r.scores))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use crate::rng::SeededRng;
    use crate::transform::{apply_transform, init_transform};
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    fn random_space(n: usize, d: usize, seed: u64) -> EmbeddingSpace {
        let mut rng = SeededRng::new(seed);
        let mut side = || -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| crate::embedding::normalize(&rng.gaussian_vec(d, 1.0)).unwrap())
                .collect()
        };
        let image = side();
        let text = side();
        EmbeddingSpace::from_rows(image, text, ids(n)).unwrap()
    }

    fn stats(cos: &[f64]) -> PairStatList {
        PairStatList {
            ids: ids(cos.len()),
            cosines: cos.to_vec(),
            l2s: cos.iter().map(|c| 2.0 - 2.0 * c).collect(),
            source: StatSource::Stealer,
            subset: StatSubset::Trigger,
        }
    }

    #[test]
    fn pair_stats_examples() {
        let s = EmbeddingSpace::from_rows(
            vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.6, 0.8]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.8, 0.6]],
            ids(3),
        )
        .unwrap();
        let st = pair_stats(&s, &ids(3), StatSource::Original, StatSubset::Trigger).unwrap();
        // hand arithmetic: 0.6*0.8 + 0.8*0.6 = 0.96, l2 = 2 - 1.92
        assert_eq!(st.cosines[..2], [1.0, 0.0]);
        assert!((st.cosines[2] - 0.96).abs() < 1e-15);
        assert_eq!(st.l2s[..2], [0.0, 2.0]);
        assert!((st.l2s[2] - 0.08).abs() < 1e-15);
        let rev = pair_stats(
            &s,
            &["p2".into(), "p0".into()],
            StatSource::Original,
            StatSubset::Trigger,
        )
        .unwrap();
        assert_eq!(rev.cosines[1], 1.0);
        assert!(matches!(
            pair_stats(
                &s,
                &["nope".into()],
                StatSource::Original,
                StatSubset::Trigger
            ),
            Err(Error::UnknownPairId(_))
        ));
    }

    #[test]
    fn delta_examples() {
        let (dc, _) = delta_metrics(&stats(&[0.9; 5]), &stats(&[0.1; 5])).unwrap();
        assert!((dc - 0.8).abs() < 1e-15);
        assert_eq!(
            delta_metrics(&stats(&[0.3, 0.4]), &stats(&[0.3, 0.4])).unwrap(),
            (0.0, 0.0)
        );
        let (dc, dl) = delta_metrics(&stats(&[0.5, 0.7]), &stats(&[0.2, 0.2])).unwrap();
        assert!((dc - 0.4).abs() < 1e-12);
        assert!((dl + 0.8).abs() < 1e-12);
        assert!(matches!(
            delta_metrics(&stats(&[]), &stats(&[0.1])),
            Err(Error::EmptyStats)
        ));
    }

    proptest! {
        #[test]
        fn delta_is_antisymmetric(
            a in prop::collection::vec(-1.0f64..1.0, 1..30),
            b in prop::collection::vec(-1.0f64..1.0, 1..30),
        ) {
            let (c1, l1) = delta_metrics(&stats(&a), &stats(&b)).unwrap();
            let (c2, l2) = delta_metrics(&stats(&b), &stats(&a)).unwrap();
            prop_assert_eq!(c1, -c2);
            prop_assert_eq!(l1, -l2);
            prop_assert!((-2.0..=2.0).contains(&c1));
            prop_assert!((-4.0..=4.0).contains(&l1));
        }
    }

    #[test]
    fn recover_round_trip_and_identity() {
        let e = random_space(50, 16, 1);
        let w = init_transform(16, 4).unwrap();
        let rec = recover_space(&w, &apply_transform(&w, &e).unwrap()).unwrap();
        for (a, b) in rec
            .image()
            .iter()
            .chain(rec.text())
            .zip(e.image().iter().chain(e.text()))
        {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() < 1e-8);
            }
        }
        let id = TransformMatrix::from_matrix(DenseMatrix::identity(16)).unwrap();
        let same = recover_space(&id, &e).unwrap();
        assert_eq!(same.pair_ids(), e.pair_ids());
        for (a, b) in same
            .image()
            .iter()
            .chain(same.text())
            .zip(e.image().iter().chain(e.text()))
        {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn wrong_key_recovery_is_uncorrelated() {
        let e = random_space(1024, 64, 2);
        let wa = init_transform(64, 10).unwrap();
        let wb = init_transform(64, 11).unwrap();
        let rec = recover_space(&wb, &apply_transform(&wa, &e).unwrap()).unwrap();
        let c = c_avg(&rec, &e, &ids(1024)).unwrap();
        assert!(c.abs() < 0.1, "{c}");
    }

    #[test]
    fn c_avg_examples() {
        let e =
            EmbeddingSpace::from_rows(vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]], ids(1)).unwrap();
        assert_eq!(c_avg(&e, &e, &ids(1)).unwrap(), 1.0);
        let orth =
            EmbeddingSpace::from_rows(vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]], ids(1)).unwrap();
        assert_eq!(c_avg(&orth, &e, &ids(1)).unwrap(), 0.0);
        assert!(c_avg(&e, &e, &["x".into()]).is_err());
    }

    #[test]
    fn verdict_examples() {
        let th = Thresholds::default();
        assert_eq!(verdict(1e-8, 0.39, None, &th), Verdict::Infringing);
        assert_eq!(verdict(0.5, 0.0, Some(0.01), &th), Verdict::Clean);
        assert_eq!(verdict(0.2, 0.01, Some(0.97), &th), Verdict::Infringing);
        assert_eq!(verdict(1e-8, -0.1, None, &th), Verdict::Clean);
        assert_eq!(verdict(5e-3, 0.5, Some(0.4), &th), Verdict::Clean);
    }

    #[test]
    fn verify_direct_copy() {
        let e = random_space(64, 16, 5);
        let w = init_transform(16, 6).unwrap();
        let copy = apply_transform(&w, &e).unwrap();
        let trig = ids(32);
        let benign: Vec<String> = (32..64).map(|i| format!("p{i}")).collect();
        let report = verify(
            &copy,
            &e,
            &trig,
            Some(DistributionCheck {
                transform: &w,
                benign_ids: &benign,
            }),
            &Thresholds::default(),
        )
        .unwrap();
        assert!(report.c_avg.unwrap() > 0.999);
        assert_eq!(report.verdict, Verdict::Infringing);
        assert_eq!(report.digests.original, space_digest(&e).unwrap());
        let json: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(json["verdict"], "infringing");
        assert!(json["thresholds"]["p_value"].is_number());

        let clean = verify(&e, &e, &trig, None, &Thresholds::default()).unwrap();
        assert_eq!(clean.verdict, Verdict::Clean);
        assert_eq!(clean.c_avg, None);
    }

    #[test]
    fn identification() {
        let d = 32;
        let e = random_space(256, d, 7);
        let benign = ids(256);
        let reg = UserRegistry::new(
            (0..8)
                .map(|k| (format!("user-{k}"), init_transform(d, 100 + k).unwrap()))
                .collect(),
        )
        .unwrap();
        let single =
            UserRegistry::new(vec![("only".into(), init_transform(d, 1).unwrap())]).unwrap();
        assert_eq!(
            identify_user(&e, &e, &single, &benign).unwrap().user_id,
            "only"
        );

        let suspect = apply_transform(&reg.entries()[3].1, &e).unwrap();
        let id = identify_user(&suspect, &e, &reg, &benign).unwrap();
        assert_eq!(id.index, 3);
        assert_eq!(id.user_id, "user-3");
        assert_eq!(id.scores.len(), 8);
        assert!(id.scores[3] > 0.999);
        assert!(id
            .scores
            .iter()
            .enumerate()
            .all(|(k, s)| k == 3 || *s < 0.4));

        assert!(matches!(
            identify_user(&e, &e, &UserRegistry::new(vec![]).unwrap(), &benign),
            Err(Error::EmptyRegistry)
        ));
    }

    #[test]
    fn singular_entry_scores_neg_infinity_and_ties_pick_lowest() {
        let d = 4;
        let e = random_space(16, d, 9);
        let singular = TransformMatrix::from_matrix(DenseMatrix::zeros(d, d)).unwrap();
        let eye = TransformMatrix::from_matrix(DenseMatrix::identity(d)).unwrap();
        let reg = UserRegistry::new(vec![
            ("a".into(), singular),
            ("b".into(), eye.clone()),
            ("c".into(), eye),
        ])
        .unwrap();
        let id = identify_user(&e, &e, &reg, &ids(16)).unwrap();
        assert_eq!(id.scores[0], f64::NEG_INFINITY);
        assert_eq!(id.user_id, "b");
    }

    #[test]
    fn registry_rules_and_persistence() {
        let w = init_transform(8, 1).unwrap();
        assert!(matches!(
            UserRegistry::new(vec![("a".into(), w.clone()), ("a".into(), w.clone())]),
            Err(Error::DuplicateId(_))
        ));
        assert!(UserRegistry::new(vec![
            ("a".into(), w.clone()),
            ("b".into(), init_transform(4, 1).unwrap())
        ])
        .is_err());
        let reg = UserRegistry::new(vec![
            ("a".into(), w.clone()),
            ("b".into(), init_transform(8, 2).unwrap()),
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        reg.save(dir.path()).unwrap();
        let back = UserRegistry::load(dir.path()).unwrap();
        assert_eq!(back.user_ids(), reg.user_ids());
        assert_eq!(back.get("a").unwrap().w, w.w);
    }

    #[test]
    fn csv_exports() {
        let s = stats(&[0.5, 0.25]);
        let mut o = stats(&[0.0, 1.0]);
        o.source = StatSource::Original;
        let mut buf = Vec::new();
        write_pair_csv(&mut buf, &s, &o).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "id,cos_stealer,cos_original,l2_stealer,l2_original\np0,0.5,0,1,2\np1,0.25,1,1.5,0\n"
        );
        let mut buf = Vec::new();
        write_score_csv(
            &mut buf,
            &["s,0".into()],
            &["u0".into(), "u1".into()],
            &[vec![1.0, 0.5]],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "suspect,u0,u1\n\"s,0\",1,0.5\n"
        );
    }
}
