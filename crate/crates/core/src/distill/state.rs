use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augview::{match_pairs, ViewSet, N_GLOBAL, N_LOCAL, N_MASKED};
use crate::diffcore::{Bound, ParamSet, Tape, Tensor, Var};
use crate::distill::head::{head_forward, Centering, Head, HeadConfig};
use crate::distill::loss::{distill_loss, koleo};
use crate::distill::sinkhorn::{sinkhorn_center, softmax_center};
use crate::encoder::{upcast, upcast_channels, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::pointcore::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViewId {
    Global(usize),
    Local(usize),
    Masked(usize),
}

/// Weighted (student view, teacher view) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSpec {
    pub pairs: Vec<(ViewId, ViewId, f64)>,
}

impl PairSpec {
    /// Each local view against the principal view, then every masked view
    /// against every global view, all weighted 1/8.
    pub fn standard() -> PairSpec {
        let mut pairs = Vec::with_capacity(8);
        for l in 0..N_LOCAL {
            pairs.push((ViewId::Local(l), ViewId::Global(0), 0.125));
        }
        for m in 0..N_MASKED {
            for g in 0..N_GLOBAL {
                pairs.push((ViewId::Masked(m), ViewId::Global(g), 0.125));
            }
        }
        PairSpec { pairs }
    }

    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.pairs.iter().map(|p| p.2).sum();
        if self.pairs.len() != 8 || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "pair spec needs 8 pairs with weights summing to 1, got {} summing to {total}",
                self.pairs.len()
            )));
        }
        if self.pairs.iter().any(|p| !matches!(p.1, ViewId::Global(_))) {
            return Err(Error::Config(
                "teacher side of every pair must be a global view".into(),
            ));
        }
        Ok(())
    }
}

/// Student and teacher networks plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillState {
    pub encoder_cfg: EncoderConfig,
    pub head_cfg: HeadConfig,
    pub encoder: Encoder,
    pub head: Head,
    pub student: ParamSet,
    pub teacher: ParamSet,
    pub step: u64,
}

impl DistillState {
    /// Fresh student with an identical teacher copy.
    pub fn init(
        encoder_cfg: &EncoderConfig,
        head_cfg: &HeadConfig,
        seed: u64,
    ) -> Result<DistillState> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut student = ParamSet::new();
        let encoder = Encoder::init(encoder_cfg, &mut student, &mut rng)?;
        let in_dim = upcast_channels(&encoder_cfg.widths, encoder_cfg.upcast_k);
        let head = Head::init(head_cfg, in_dim, &mut student, &mut rng)?;
        Ok(DistillState {
            encoder_cfg: encoder_cfg.clone(),
            head_cfg: head_cfg.clone(),
            encoder,
            head,
            teacher: student.clone(),
            student,
            step: 0,
        })
    }

    /// Rebuilds handles over loaded parameters.
    pub fn from_params(
        encoder_cfg: &EncoderConfig,
        head_cfg: &HeadConfig,
        student: ParamSet,
        teacher: ParamSet,
        step: u64,
    ) -> Result<DistillState> {
        head_cfg.validate()?;
        let encoder = Encoder::bind(encoder_cfg, &student)?;
        let head = Head::bind(&student)?;
        if Encoder::bind(encoder_cfg, &teacher)? != encoder || Head::bind(&teacher)? != head {
            return Err(Error::Config(
                "teacher and student parameter layouts differ".into(),
            ));
        }
        Ok(DistillState {
            encoder_cfg: encoder_cfg.clone(),
            head_cfg: head_cfg.clone(),
            encoder,
            head,
            student,
            teacher,
            step,
        })
    }

    /// Origin-space radius for matching up-cast points across views.
    pub fn match_radius(&self) -> f64 {
        self.head_cfg.match_radius_factor * self.encoder_cfg.grid(self.encoder_cfg.upcast_stage())
    }

    pub fn ema_update(&mut self, m: f64) -> Result<()> {
        ema_update(&mut self.teacher, &self.student, m)
    }
}

/// `teacher <- m * teacher + (1 - m) * student`, including prototypes.
pub fn ema_update(teacher: &mut ParamSet, student: &ParamSet, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::invalid(format!("momentum {m} outside [0, 1]")));
    }
    if teacher.len() != student.len() {
        return Err(Error::shape(
            "ema_update",
            format!("{} vs {} parameters", teacher.len(), student.len()),
        ));
    }
    for (t, s) in teacher.iter().zip(student.iter()) {
        if t.name != s.name || t.value.shape() != s.value.shape() {
            return Err(Error::shape(
                "ema_update",
                format!("{} does not match {}", t.name, s.name),
            ));
        }
    }
    if m == 1.0 {
        return Ok(());
    }
    for (t, s) in teacher.iter_mut().zip(student.iter()) {
        for (a, &b) in t.value.data_mut().iter_mut().zip(s.value.data()) {
            *a = m * *a + (1.0 - m) * b;
        }
    }
    Ok(())
}

/// Teacher assignment targets for one global view.
#[derive(Debug, Clone)]
pub struct TeacherTarget {
    pub assign: Tensor,
    pub cloud: PointCloud,
}

/// Encodes every global view with the (frozen) teacher and centers its logits.
pub fn teacher_targets(
    state: &DistillState,
    views: &ViewSet,
    tpt: f64,
) -> Result<Vec<TeacherTarget>> {
    views
        .global_views
        .iter()
        .map(|g| {
            let mut tape = Tape::new();
            let bound = Bound::new(&mut tape, &state.teacher, false);
            let out = state.encoder.forward(&mut tape, &bound, g, None)?;
            let (f, cloud) = upcast(&mut tape, &out, state.encoder_cfg.upcast_k)?;
            let logits = head_forward(&mut tape, &bound, &state.head, f)?;
            if tape.requires_grad(logits) {
                return Err(Error::Numeric(
                    "teacher path is attached to the gradient tape".into(),
                ));
            }
            let logits = tape.value(logits);
            let assign = match state.head_cfg.centering {
                Centering::Sinkhorn => sinkhorn_center(logits, state.head_cfg.sinkhorn_iters, tpt)?,
                Centering::Softmax => softmax_center(logits, tpt)?,
            };
            Ok(TeacherTarget { assign, cloud })
        })
        .collect()
}

/// Scalar loss node plus its breakdown.
#[derive(Debug, Clone)]
pub struct RecordedLoss {
    pub loss: Var,
    pub pair_losses: Vec<f64>,
    pub pair_matches: Vec<usize>,
    pub koleo: f64,
}

fn student_view(views: &ViewSet, id: ViewId) -> (&PointCloud, Option<&[bool]>) {
    match id {
        ViewId::Global(i) => (&views.global_views[i], None),
        ViewId::Local(i) => (&views.local_views[i], None),
        ViewId::Masked(i) => (&views.masked_views[i].0, Some(&views.masked_views[i].1[..])),
    }
}

/// Records the student side of the objective on `tape` against fixed targets.
pub fn record_step_loss(
    tape: &mut Tape,
    bound: &Bound,
    state: &DistillState,
    views: &ViewSet,
    targets: &[TeacherTarget],
    pairs: &PairSpec,
) -> Result<RecordedLoss> {
    let radius = state.match_radius();
    let tps = state.head_cfg.student_temp;
    let mut ids: Vec<ViewId> = Vec::new();
    for p in &pairs.pairs {
        if !ids.contains(&p.0) {
            ids.push(p.0);
        }
    }
    // Encode each student view once.
    let mut encoded = Vec::with_capacity(ids.len());
    for &id in &ids {
        let (view, mask) = student_view(views, id);
        let out = state.encoder.forward(tape, bound, view, mask)?;
        let (f, cloud) = upcast(tape, &out, state.encoder_cfg.upcast_k)?;
        let logits = head_forward(tape, bound, &state.head, f)?;
        encoded.push((f, cloud, logits));
    }
    let mut terms: Vec<Var> = Vec::new();
    let mut pair_losses = Vec::with_capacity(pairs.pairs.len());
    let mut pair_matches = Vec::with_capacity(pairs.pairs.len());
    for (k, &(src, dst, w)) in pairs.pairs.iter().enumerate() {
        let ViewId::Global(g) = dst else {
            return Err(Error::Config("teacher side must be a global view".into()));
        };
        let (_, cloud, logits) = &encoded[ids.iter().position(|&i| i == src).expect("encoded")];
        let target = &targets[g];
        let matches = match_pairs(cloud, &target.cloud, radius)?;
        pair_matches.push(matches.len());
        if matches.is_empty() {
            log::debug!("pair {k} ({src:?} -> {dst:?}) has no matches");
            pair_losses.push(0.0);
            continue;
        }
        let (qi, ti): (Vec<usize>, Vec<usize>) = matches.into_iter().unzip();
        let s = tape.gather(*logits, Arc::new(qi))?;
        let t = target.assign.select_rows(&ti);
        let l = distill_loss(tape, s, &t, tps)?;
        pair_losses.push(tape.value(l).item());
        terms.push(tape.scale(l, w));
    }
    let mut koleo_sum = 0.0;
    if state.head_cfg.koleo_weight > 0.0 {
        for (f, _, _) in &encoded {
            if tape.value(*f).rows() < 2 {
                continue;
            }
            let k = koleo(tape, *f)?;
            koleo_sum += tape.value(k).item();
            terms.push(tape.scale(k, state.head_cfg.koleo_weight));
        }
    }
    let loss = match terms.split_first() {
        None => tape.constant(Tensor::scalar(0.0)),
        Some((&first, rest)) => {
            let mut acc = first;
            for &t in rest {
                acc = tape.add(acc, t)?;
            }
            acc
        }
    };
    Ok(RecordedLoss {
        loss,
        pair_losses,
        pair_matches,
        koleo: koleo_sum,
    })
}

/// One scene's loss value, breakdown and student gradients.
#[derive(Debug, Clone)]
pub struct StepLoss {
    pub loss: f64,
    pub pair_losses: Vec<f64>,
    pub pair_matches: Vec<usize>,
    pub koleo: f64,
    pub grads: Vec<Option<Tensor>>,
}

/// Full objective for one view set: the teacher encodes the global views, the
/// student encodes local and masked views, and matched points are distilled.
pub fn step_loss(state: &DistillState, views: &ViewSet, tpt: f64) -> Result<StepLoss> {
    let pairs = PairSpec::standard();
    let targets = teacher_targets(state, views, tpt)?;
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, &state.student, true);
    let rec = record_step_loss(&mut tape, &bound, state, views, &targets, &pairs)?;
    let loss = tape.value(rec.loss).item();
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    let grads = if tape.requires_grad(rec.loss) {
        bound.grads(&tape.backward(rec.loss)?)
    } else {
        vec![None; state.student.len()]
    };
    Ok(StepLoss {
        loss,
        pair_losses: rec.pair_losses,
        pair_matches: rec.pair_matches,
        koleo: rec.koleo,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augview::{crop, generate_views_unchecked, AugmentConfig, MaskParams};
    use crate::diffcore::grad_check;
    use crate::distill::tests_support::micro_cfg;
    use crate::synthgen::{generate_scene, SceneSpec};

    fn micro_scene(n: usize, seed: u64) -> PointCloud {
        let s = generate_scene(&SceneSpec {
            n_points: 1000,
            seed,
            ..SceneSpec::default()
        })
        .unwrap();
        let c = crop(&s, n as f64 / 1000.0, 0).unwrap();
        // Re-root so origin rows index the micro scene itself.
        let mut m = c.clone();
        m.origin_index = (0..m.len()).collect();
        m
    }

    fn micro_views(n: usize, seed: u64) -> ViewSet {
        let mask = MaskParams {
            mask_size: 0.1,
            mask_ratio: 0.3,
            masked_jitter_sigma: 0.01,
        };
        let aug = AugmentConfig {
            global_ratio: [0.7, 1.0],
            local_ratio: [0.3, 0.5],
            ..AugmentConfig::default()
        };
        generate_views_unchecked(&micro_scene(n, seed), &aug, &mask, seed).unwrap()
    }

    #[test]
    fn standard_pairs_are_valid() {
        let p = PairSpec::standard();
        p.validate().unwrap();
        assert_eq!(
            p.pairs
                .iter()
                .filter(|x| matches!(x.0, ViewId::Local(_)))
                .count(),
            4
        );
    }

    #[test]
    fn ema_algebra() {
        let mut s = ParamSet::new();
        s.insert("a", Tensor::scalar(0.0), None, true);
        let mut t = ParamSet::new();
        t.insert("a", Tensor::scalar(1.0), None, true);
        let mut t1 = t.clone();
        ema_update(&mut t1, &s, 0.994).unwrap();
        assert_eq!(t1.value("a").unwrap().item(), 0.994);
        let mut t2 = t.clone();
        ema_update(&mut t2, &s, 1.0).unwrap();
        assert_eq!(t2, t);
        let mut t3 = t.clone();
        ema_update(&mut t3, &s, 0.0).unwrap();
        assert_eq!(t3, s);
        assert!(ema_update(&mut t3, &s, 1.5).is_err());
    }

    #[test]
    fn init_teacher_equals_student() {
        let (e, h) = micro_cfg();
        let st = DistillState::init(&e, &h, 3).unwrap();
        assert_eq!(st.student, st.teacher);
        let again =
            DistillState::from_params(&e, &h, st.student.clone(), st.teacher.clone(), 0).unwrap();
        assert_eq!(again, st);
    }

    #[test]
    fn self_consistency_equals_softmax_entropy() {
        let (e, mut h) = micro_cfg();
        h.centering = Centering::Softmax;
        h.koleo_weight = 0.0;
        h.student_temp = 0.2;
        let tpt = 0.2;
        let st = DistillState::init(&e, &h, 4).unwrap();
        let scene = micro_scene(10, 5);
        let n = scene.len();
        let vs = ViewSet {
            global_views: vec![scene.clone(); N_GLOBAL],
            local_views: vec![scene.clone(); N_LOCAL],
            masked_views: vec![(scene.clone(), vec![false; n]); N_MASKED],
            global_records: Vec::new(),
            local_records: Vec::new(),
        };
        let out = step_loss(&st, &vs, tpt).unwrap();
        assert!(out.pair_matches.iter().all(|&m| m > 0));
        let t = teacher_targets(&st, &vs, tpt).unwrap();
        let q = &t[0].assign;
        let entropy = (0..q.rows())
            .map(|r| -q.row(r).iter().map(|&p| p * p.ln()).sum::<f64>())
            .sum::<f64>()
            / q.rows() as f64;
        assert!(
            (out.loss - entropy).abs() < 1e-12,
            "{} vs {entropy}",
            out.loss
        );
    }

    #[test]
    fn koleo_weight_enters_linearly() {
        let (e, h) = micro_cfg();
        let vs = micro_views(64, 6);
        let st = DistillState::init(&e, &h, 6).unwrap();
        let a = step_loss(&st, &vs, 0.04).unwrap();
        let mut st2 = st.clone();
        st2.head_cfg.koleo_weight *= 2.0;
        let b = step_loss(&st2, &vs, 0.04).unwrap();
        assert!((b.loss - a.loss - h.koleo_weight * a.koleo).abs() < 1e-10);
    }

    #[test]
    fn invariant_to_point_order() {
        let (e, h) = micro_cfg();
        let vs = micro_views(64, 7);
        let st = DistillState::init(&e, &h, 7).unwrap();
        let base = step_loss(&st, &vs, 0.04).unwrap();
        let rev = |c: &PointCloud| c.select(&(0..c.len()).rev().collect::<Vec<_>>());
        let mut p = vs.clone();
        p.global_views = vs.global_views.iter().map(rev).collect();
        p.local_views = vs.local_views.iter().map(rev).collect();
        p.masked_views = vs
            .masked_views
            .iter()
            .map(|(c, m)| (rev(c), m.iter().rev().copied().collect()))
            .collect();
        let permuted = step_loss(&st, &p, 0.04).unwrap();
        assert!(
            (base.loss - permuted.loss).abs() < 1e-5,
            "{} {:?} {:?} vs {} {:?} {:?}",
            base.loss,
            base.pair_losses,
            base.pair_matches,
            permuted.loss,
            permuted.pair_losses,
            permuted.pair_matches
        );
    }

    #[test]
    fn gradient_check_on_micro_batch() {
        let (e, h) = micro_cfg();
        let vs = micro_views(32, 8);
        let mut st = DistillState::init(&e, &h, 8).unwrap();
        // Separate the teacher from the student so targets are informative.
        for p in st.student.iter_mut() {
            p.value = p.value.map(|v| v * 0.9 + 0.01);
        }
        let targets = teacher_targets(&st, &vs, 0.04).unwrap();
        let pairs = PairSpec::standard();
        let inputs: Vec<Tensor> = st.student.iter().map(|p| p.value.clone()).collect();
        let report = grad_check(
            |tape, vars| {
                let bound = Bound::from_vars(vars.to_vec(), true);
                Ok(record_step_loss(tape, &bound, &st, &vs, &targets, &pairs)?.loss)
            },
            &inputs,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }
}
