//! Teacher maintenance by exponential moving average and the two
//! reliable-token selection rules (label agreement, teacher confidence).

use std::collections::BTreeSet;

use crate::corpus::{AnnotatedSentence, Tag};
use crate::error::{Error, Result};
use crate::tagger::{labels_from_distributions, Distribution, Gradient, TaggerParams};

/// Confidence threshold in `(0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Confidence(f64);

impl Confidence {
    pub fn new(delta: f64) -> Result<Self> {
        if delta > 0.0 && delta <= 1.0 {
            Ok(Confidence(delta))
        } else {
            Err(Error::Config(format!(
                "confidence threshold {delta} outside (0, 1]"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Selected tokens of each sentence of a batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionMask {
    rows: Vec<Vec<bool>>,
}

impl SelectionMask {
    pub fn from_rows(rows: Vec<Vec<bool>>) -> Self {
        SelectionMask { rows }
    }

    pub fn from_sets(sets: &[BTreeSet<usize>], lengths: &[usize]) -> Result<Self> {
        if sets.len() != lengths.len() {
            return Err(Error::Shape("set and length counts differ".into()));
        }
        let mut rows = Vec::with_capacity(sets.len());
        for (set, &len) in sets.iter().zip(lengths) {
            let mut row = vec![false; len];
            for &j in set {
                *row.get_mut(j)
                    .ok_or_else(|| Error::Shape(format!("index {j} outside length {len}")))? = true;
            }
            rows.push(row);
        }
        Ok(SelectionMask { rows })
    }

    pub fn full(batch: &[&AnnotatedSentence]) -> Self {
        SelectionMask {
            rows: batch.iter().map(|s| vec![true; s.len()]).collect(),
        }
    }

    pub fn empty(batch: &[&AnnotatedSentence]) -> Self {
        SelectionMask {
            rows: batch.iter().map(|s| vec![false; s.len()]).collect(),
        }
    }

    pub fn num_sentences(&self) -> usize {
        self.rows.len()
    }

    pub fn sentence(&self, i: usize) -> &[bool] {
        &self.rows[i]
    }

    pub fn indices(&self, i: usize) -> BTreeSet<usize> {
        self.rows[i]
            .iter()
            .enumerate()
            .filter_map(|(j, &on)| on.then_some(j))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.rows.iter().flatten().filter(|&&on| on).count()
    }

    pub fn total(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Tokens whose noisy label equals the teacher's pseudo label.
pub fn select_consistent(noisy: &[Tag], pseudo: &[Tag]) -> Result<BTreeSet<usize>> {
    if noisy.len() != pseudo.len() {
        return Err(Error::Shape(format!(
            "{} noisy labels vs {} pseudo labels",
            noisy.len(),
            pseudo.len()
        )));
    }
    Ok(noisy
        .iter()
        .zip(pseudo)
        .enumerate()
        .filter_map(|(j, (a, b))| (a == b).then_some(j))
        .collect())
}

/// Tokens whose teacher distribution peaks at or above `delta`.
pub fn select_confident(dists: &[Distribution], delta: Confidence) -> BTreeSet<usize> {
    dists
        .iter()
        .enumerate()
        .filter_map(|(j, d)| (d.max() >= delta.0).then_some(j))
        .collect()
}

/// Which selection rules take part in [`token_selection`]. A disabled rule
/// selects every token.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SelectionRules {
    pub consistency: bool,
    pub confidence: bool,
}

impl Default for SelectionRules {
    fn default() -> Self {
        SelectionRules {
            consistency: true,
            confidence: true,
        }
    }
}

/// Intersection of the consistency and confidence selections, per sentence.
pub fn token_selection(
    noisy: &[&[Tag]],
    teacher: &[Vec<Distribution>],
    delta: Confidence,
    rules: SelectionRules,
) -> Result<SelectionMask> {
    if noisy.len() != teacher.len() {
        return Err(Error::Shape("noisy and teacher batch sizes differ".into()));
    }
    let mut sets = Vec::with_capacity(noisy.len());
    let mut lengths = Vec::with_capacity(noisy.len());
    for (tags, dists) in noisy.iter().zip(teacher) {
        let all: BTreeSet<usize> = (0..tags.len()).collect();
        let consistent = if rules.consistency {
            select_consistent(tags, &labels_from_distributions(dists))?
        } else {
            if dists.len() != tags.len() {
                return Err(Error::Shape("noisy and teacher lengths differ".into()));
            }
            all.clone()
        };
        let confident = if rules.confidence {
            select_confident(dists, delta)
        } else {
            all
        };
        sets.push(consistent.intersection(&confident).copied().collect());
        lengths.push(tags.len());
    }
    SelectionMask::from_sets(&sets, &lengths)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "EMA coefficient {alpha} outside [0, 1]"
        )))
    }
}

/// `teacher <- alpha * teacher + (1 - alpha) * student`, elementwise.
///
/// Evaluated as `teacher + (1 - alpha) * (student - teacher)`. Equal
/// pairs are left bit-for-bit unchanged and `alpha == 0` copies the student.
pub fn ema_update(teacher: &mut TaggerParams, student: &TaggerParams, alpha: f64) -> Result<()> {
    check_alpha(alpha)?;
    teacher.check_shape(student.config())?;
    if alpha == 0.0 {
        teacher.values_mut().copy_from_slice(student.values());
        return Ok(());
    }
    let rate = 1.0 - alpha;
    for (t, s) in teacher.values_mut().iter_mut().zip(student.values()) {
        *t += rate * (s - *t);
    }
    Ok(())
}

/// A student trained by gradient descent and its EMA teacher.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherStudentPair {
    pub teacher: TaggerParams,
    pub student: TaggerParams,
    alpha: f64,
}

impl TeacherStudentPair {
    /// Teacher and student both start as copies of `params`.
    pub fn new(params: TaggerParams, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(TeacherStudentPair {
            teacher: params.clone(),
            student: params,
            alpha,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn ema_update(&mut self) -> Result<()> {
        ema_update(&mut self.teacher, &self.student, self.alpha)
    }
}

fn check_grads(theta0: &TaggerParams, grads: &[Gradient], alpha: f64) -> Result<()> {
    check_alpha(alpha)?;
    for g in grads {
        theta0.check_shape(g.config())?;
    }
    Ok(())
}

/// Teacher after `grads.len()` steps when teacher and student both start at
/// `theta0` and the student follows plain SGD on `grads`, in closed form:
/// `theta0 - gamma * sum_j (1 - alpha^(i-j)) * g_j`.
pub fn ema_closed_form(
    theta0: &TaggerParams,
    grads: &[Gradient],
    gamma: f64,
    alpha: f64,
) -> Result<TaggerParams> {
    check_grads(theta0, grads, alpha)?;
    let i = grads.len();
    let mut out = theta0.clone();
    for (j, g) in grads.iter().enumerate() {
        let weight = gamma * (1.0 - alpha.powi((i - j) as i32));
        for (o, gv) in out.values_mut().iter_mut().zip(g.values()) {
            *o -= weight * gv;
        }
    }
    Ok(out)
}

/// The same trajectory written as a descent step on the teacher:
/// `theta_t^i = theta_t^(i-1) - gamma (1 - alpha) sum_{j<i} alpha^(i-1-j) g_j`.
pub fn ema_recursive_form(
    theta0: &TaggerParams,
    grads: &[Gradient],
    gamma: f64,
    alpha: f64,
) -> Result<TaggerParams> {
    check_grads(theta0, grads, alpha)?;
    let mut teacher = theta0.clone();
    let mut momentum = vec![0.0; theta0.len()];
    for g in grads {
        for ((m, gv), t) in momentum
            .iter_mut()
            .zip(g.values())
            .zip(teacher.values_mut())
        {
            *m = alpha * *m + gv;
            *t -= gamma * (1.0 - alpha) * *m;
        }
    }
    Ok(teacher)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagger::TaggerConfig;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> TaggerConfig {
        TaggerConfig {
            vocab_hash_buckets: 5,
            embed_dim: 2,
            window: 1,
            hidden_dim: 3,
            num_tags: 5,
            init_seed: 1,
            init_scale: 0.3,
        }
    }

    fn dist(probs: &[f64]) -> Distribution {
        Distribution {
            probs: probs.to_vec(),
        }
    }

    #[test]
    fn consistency_examples() {
        let seq = [Tag(0), Tag(1), Tag(0)];
        assert_eq!(select_consistent(&seq, &seq).unwrap(), (0..3).collect());
        let other = [Tag(3), Tag(3), Tag(1)];
        assert!(select_consistent(&seq, &other).unwrap().is_empty());
        // [O, B-PER, O] vs [O, B-LOC, O]
        let pseudo = [Tag(0), Tag(3), Tag(0)];
        assert_eq!(select_consistent(&seq, &pseudo).unwrap(), [0, 2].into());
        assert!(select_consistent(&seq, &pseudo[..2]).is_err());
    }

    #[test]
    fn confidence_examples() {
        let delta = Confidence::new(0.9).unwrap();
        let d = [
            dist(&[0.9, 0.05, 0.05]),
            dist(&[0.2; 5]),
            dist(&[0.05, 0.95, 0.0]),
        ];
        assert_eq!(select_confident(&d, delta), [0, 2].into());
        let tiny = Confidence::new(1e-9).unwrap();
        assert_eq!(select_confident(&d, tiny).len(), 3);
        assert!(Confidence::new(0.0).is_err());
        assert!(Confidence::new(1.5).is_err());
        assert!(Confidence::new(1.0).is_ok());
    }

    #[test]
    fn selection_mask_cases() {
        let noisy: Vec<Tag> = vec![Tag(0), Tag(1), Tag(2)];
        let confident = vec![
            Distribution::one_hot(5, Tag(0)),
            Distribution::one_hot(5, Tag(1)),
            Distribution::one_hot(5, Tag(2)),
        ];
        let delta = Confidence::new(0.9).unwrap();
        let m = token_selection(&[&noisy], &[confident], delta, SelectionRules::default()).unwrap();
        assert_eq!(m.count(), 3);

        let unsure = vec![
            dist(&[0.5, 0.2, 0.1, 0.1, 0.1]),
            dist(&[0.1, 0.5, 0.2, 0.1, 0.1]),
            dist(&[0.1, 0.2, 0.5, 0.1, 0.1]),
        ];
        let m = token_selection(
            &[&noisy],
            std::slice::from_ref(&unsure),
            delta,
            SelectionRules::default(),
        )
        .unwrap();
        assert_eq!(m.count(), 0);
        let no_conf = SelectionRules {
            confidence: false,
            ..Default::default()
        };
        let m = token_selection(&[&noisy], &[unsure], delta, no_conf).unwrap();
        assert_eq!(m.count(), 3);
    }

    #[test]
    fn ema_examples() {
        let c = cfg();
        let zero = TaggerParams::zeros(c.clone()).unwrap();
        let two = TaggerParams::from_values(c.clone(), vec![2.0; c.num_params()]).unwrap();

        let mut t = zero.clone();
        ema_update(&mut t, &two, 0.0).unwrap();
        assert_eq!(t, two);
        let mut t = zero.clone();
        ema_update(&mut t, &two, 1.0).unwrap();
        assert_eq!(t, zero);
        let mut t = zero.clone();
        ema_update(&mut t, &two, 0.5).unwrap();
        assert!(t.values().iter().all(|&v| v == 1.0));
        assert!(ema_update(&mut t, &two, 1.5).is_err());
        assert!(TeacherStudentPair::new(zero.clone(), -0.1).is_err());

        let mut pair = TeacherStudentPair::new(two.clone(), 0.7).unwrap();
        pair.ema_update().unwrap();
        assert_eq!(pair.teacher, two);
    }

    fn random_grads(rng: &mut ChaCha8Rng, c: &TaggerConfig, n: usize) -> Vec<Gradient> {
        (0..n)
            .map(|_| {
                let v = (0..c.num_params())
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect();
                Gradient::from_values(c, v).unwrap()
            })
            .collect()
    }

    fn iterate(theta0: &TaggerParams, grads: &[Gradient], gamma: f64, alpha: f64) -> TaggerParams {
        let mut pair = TeacherStudentPair::new(theta0.clone(), alpha).unwrap();
        for g in grads {
            pair.student.sgd_step(g, gamma).unwrap();
            pair.ema_update().unwrap();
        }
        pair.teacher
    }

    #[test]
    fn closed_form_degenerate_cases() {
        let c = cfg();
        let theta0 = TaggerParams::init(c.clone()).unwrap();
        assert_eq!(ema_closed_form(&theta0, &[], 0.1, 0.9).unwrap(), theta0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grads = random_grads(&mut rng, &c, 5);
        let out = ema_closed_form(&theta0, &grads, 0.1, 0.0).unwrap();
        for k in 0..theta0.len() {
            let sum: f64 = grads.iter().map(|g| g.values()[k]).sum();
            assert!((out.values()[k] - (theta0.values()[k] - 0.1 * sum)).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_matches_iteration() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let theta0 = TaggerParams::init(TaggerConfig {
            init_seed: 5,
            ..c.clone()
        })
        .unwrap();
        let grads = random_grads(&mut rng, &c, 100);
        let iterative = iterate(&theta0, &grads, 1e-2, 0.995);
        for form in [ema_closed_form, ema_recursive_form] {
            let closed = form(&theta0, &grads, 1e-2, 0.995).unwrap();
            let diff = closed
                .values()
                .iter()
                .zip(iterative.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-10, "diff {diff}");
        }
    }

    proptest! {
        #[test]
        fn confidence_is_monotone(
            raw in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 4), 1..12),
            d1 in 0.01f64..1.0,
            d2 in 0.01f64..1.0,
        ) {
            let dists: Vec<Distribution> = raw.iter().map(|r| {
                let s: f64 = r.iter().sum::<f64>() + 1e-9;
                dist(&r.iter().map(|v| v / s).collect::<Vec<_>>())
            }).collect();
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let loose = select_confident(&dists, Confidence::new(lo).unwrap());
            let strict = select_confident(&dists, Confidence::new(hi).unwrap());
            prop_assert!(strict.is_subset(&loose));
        }

        #[test]
        fn ema_is_identity_on_equal_pair(seed in 0u64..1000, alpha in 0.0f64..=1.0) {
            let p = TaggerParams::init(TaggerConfig { init_seed: seed, ..cfg() }).unwrap();
            let mut t = p.clone();
            ema_update(&mut t, &p, alpha).unwrap();
            prop_assert_eq!(t, p);
        }

        #[test]
        fn teacher_movement_is_bounded(seed in 0u64..1000, alpha in 0.9f64..1.0) {
            let t0 = TaggerParams::init(TaggerConfig { init_seed: seed, ..cfg() }).unwrap();
            let s = TaggerParams::init(TaggerConfig { init_seed: seed + 1, ..cfg() }).unwrap();
            let mut t = t0.clone();
            ema_update(&mut t, &s, alpha).unwrap();
            for ((new, old), st) in t.values().iter().zip(t0.values()).zip(s.values()) {
                prop_assert!((new - old).abs() <= (1.0 - alpha) * (st - old).abs() + 1e-15);
            }
        }
    }
}
