//! Numeric rank experiments on the span of prolonged lifts.
//!
//! At a fixed jet point the prolonged lifts of all projectable fields span a
//! linear subspace of the tangent space. Sampling random field data gives a
//! matrix whose rows are prolonged-lift values; its numeric rank measures the
//! dimension of that span. At second order the span has corank one at
//! generic points, and the annihilating covector is recovered from the
//! singular value decomposition.
//!
//! Points are drawn uniformly and re-drawn until a set of guard quantities
//! is bounded away from zero, keeping the experiment inside the open region
//! where the generic rank is attained.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RealField};
use num_traits::Float;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::expr::{EvalError, Program, VarTable};
use crate::jet::{EtaRoute, JetCoordinateSystem, JetError, JetPoint};
use crate::prolong::{
    anchor_symbols, data_symbols, CurveJetView, LiftedField, VectorFieldData,
};
use crate::Real;

/// Retries per point when the singular spectrum leaves the rank ambiguous.
const AMBIGUOUS_RETRIES: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum DistributionError {
    #[error("no point satisfied the guards within {budget} draws")]
    GuardExhausted { budget: usize },
    #[error("experiment is not runnable: {reason}")]
    InvalidExperiment { reason: String },
    #[error("span matrix contains a non-finite entry")]
    NonFinite,
    #[error("singular value decomposition did not converge")]
    SvdFailed,
    #[error("no unambiguous rank after {attempts} resampled points")]
    RankAmbiguous { attempts: usize },
    #[error("per-point ranks {ranks:?} disagree beyond the ten percent outlier budget")]
    InconsistentRanks { ranks: Vec<usize> },
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A scalar quantity of a jet point whose magnitude a guarded sample must
/// keep away from zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Guard {
    /// `|z|`.
    AbsZ,
    /// `|det(z_{dy^a dy^b})|`, the velocity Hessian of the fiber; needs
    /// order two.
    HessianDet,
    /// `|z - dy^c z_{dy^c}|`; needs order one.
    ContactPairing,
    /// `max_a |z_{dy^a}|`; needs order one.
    MaxZdy,
    /// `max_a |dy^a|`.
    MaxDy,
}

impl Guard {
    /// The guarded magnitude at `point`. Panics if the point's order is too
    /// low for the guard.
    pub fn magnitude<F: Real + RealField>(&self, point: &JetPoint<F>) -> F {
        let view = CurveJetView::new(point);
        let m = view.m();
        match self {
            Guard::AbsZ => Float::abs(view.z()),
            Guard::HessianDet => {
                let hess = DMatrix::from_fn(m, m, |a, b| view.zdydy(a, b));
                Float::abs(hess.determinant())
            }
            Guard::ContactPairing => {
                let mut pairing = view.z();
                for a in 0..m {
                    pairing = pairing - view.dy(a) * view.zdy(a);
                }
                Float::abs(pairing)
            }
            Guard::MaxZdy => (0..m)
                .map(|a| Float::abs(view.zdy(a)))
                .fold(F::of(0.0), Float::max),
            Guard::MaxDy => (0..m)
                .map(|a| Float::abs(view.dy(a)))
                .fold(F::of(0.0), Float::max),
        }
    }
}


/// The guard set used at each prolongation order: only quantities that
/// exist at that order, and at order two everything the generic-rank
/// argument divides by.
pub fn default_guards(order: usize) -> Vec<Guard> {
    match order {
        0 => vec![Guard::AbsZ],
        1 => vec![Guard::AbsZ, Guard::MaxDy, Guard::MaxZdy],
        _ => vec![
            Guard::AbsZ,
            Guard::HessianDet,
            Guard::ContactPairing,
            Guard::MaxZdy,
            Guard::MaxDy,
        ],
    }
}

/// Draw a jet point with i.i.d. uniform coordinates on `[-2, 2]`,
/// resampling until every guard magnitude exceeds `margin`, up to `budget`
/// draws.
pub fn sample_point<F: Real + RealField, R: Rng>(
    m: usize,
    order: usize,
    guards: &[Guard],
    margin: F,
    rng: &mut R,
    budget: usize,
) -> Result<JetPoint<F>, DistributionError> {
    let system = JetCoordinateSystem::for_curves(m, order);
    let dim = system.dimension();
    for _ in 0..budget {
        let values: Vec<F> = (0..dim).map(|_| F::of(rng.gen_range(-2.0..=2.0))).collect();
        let point = JetPoint::new(system.clone(), values).expect("dimension matches");
        if guards.iter().all(|g| g.magnitude(&point) > margin) {
            return Ok(point);
        }
    }
    Err(DistributionError::GuardExhausted { budget })
}

/// Compiled evaluator for the generic prolonged lift at order `order`: one
/// program per jet coordinate, with slots for the coordinates, the
/// expansion anchors, and the field data.
pub struct SpanSampler<F> {
    m: usize,
    order: usize,
    system: Arc<JetCoordinateSystem>,
    programs: Vec<Program<F>>,
    slot_count: usize,
    coord_slots: Vec<u32>,
    anchor_slots: Vec<u32>,
    data_slots: Vec<u32>,
}

impl<F: Real + RealField> SpanSampler<F> {
    pub fn new(m: usize, order: usize) -> Result<Self, DistributionError> {
        let lift = LiftedField::generic(m, order, EtaRoute::Leibniz)?;
        let system = lift.system().clone();
        let mut table = VarTable::new();
        let coord_slots: Vec<u32> = system
            .coordinates()
            .iter()
            .map(|s| table.slot(s))
            .collect();
        let anchor_slots: Vec<u32> = anchor_symbols(m).iter().map(|s| table.slot(s)).collect();
        let data_slots: Vec<u32> = data_symbols(m).iter().map(|s| table.slot(s)).collect();
        let programs = lift
            .components()
            .iter()
            .map(|(_, f)| Program::compile(f.expr(), &table))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SpanSampler {
            m,
            order,
            system,
            programs,
            slot_count: table.len(),
            coord_slots,
            anchor_slots,
            data_slots,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn system(&self) -> &Arc<JetCoordinateSystem> {
        &self.system
    }

    /// Ambient dimension: one row entry per jet coordinate.
    pub fn ambient(&self) -> usize {
        self.programs.len()
    }

    fn slots_for_point(&self, point: &JetPoint<F>) -> Vec<F> {
        let mut slots = vec![F::of(0.0); self.slot_count];
        for (i, &s) in self.coord_slots.iter().enumerate() {
            slots[s as usize] = point.values()[i];
        }
        // Anchor the data expansion at the point itself: (px, py) = (x, y).
        for (i, &s) in self.anchor_slots.iter().enumerate() {
            slots[s as usize] = point.values()[i];
        }
        slots
    }

    fn fill_data(&self, slots: &mut [F], data: &VectorFieldData<F>) {
        for (&s, v) in self.data_slots.iter().zip(data.flat()) {
            slots[s as usize] = v;
        }
    }

    /// The prolonged lift of the field with the given data, evaluated at
    /// the point: one span-matrix row.
    pub fn row(
        &self,
        point: &JetPoint<F>,
        data: &VectorFieldData<F>,
    ) -> Result<Vec<F>, DistributionError> {
        let mut slots = self.slots_for_point(point);
        self.fill_data(&mut slots, data);
        let mut stack = Vec::new();
        self.programs
            .iter()
            .map(|p| p.run_with(&slots, &mut stack).map_err(Into::into))
            .collect()
    }

    /// Span matrix at `point`: `samples` rows of prolonged lifts with
    /// independently drawn field data.
    pub fn span_matrix<R: Rng>(
        &self,
        point: &JetPoint<F>,
        samples: usize,
        rng: &mut R,
    ) -> Result<DMatrix<F>, DistributionError> {
        let ambient = self.ambient();
        let mut slots = self.slots_for_point(point);
        let mut stack = Vec::new();
        let mut entries = Vec::with_capacity(samples * ambient);
        for _ in 0..samples {
            let data = VectorFieldData::random(self.m, rng);
            self.fill_data(&mut slots, &data);
            for p in &self.programs {
                entries.push(p.run_with(&slots, &mut stack)?);
            }
        }
        Ok(DMatrix::from_row_iterator(samples, ambient, entries))
    }
}

/// Singular values of `matrix`, sorted in decreasing order. Non-finite
/// entries and non-convergence are reported, never swallowed.
pub fn singular_values<F: Real + RealField>(
    matrix: &DMatrix<F>,
) -> Result<Vec<F>, DistributionError> {
    if matrix.iter().any(|v| !Float::is_finite(*v)) {
        return Err(DistributionError::NonFinite);
    }
    let svd = matrix
        .clone()
        .try_svd(false, false, F::default_epsilon(), 1000)
        .ok_or(DistributionError::SvdFailed)?;
    let mut sigma: Vec<F> = svd.singular_values.iter().copied().collect();
    sigma.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
    Ok(sigma)
}

/// Numeric rank: the number of singular values above
/// `tolerance * sigma_max`.
pub fn numeric_rank<F: Real + RealField>(
    matrix: &DMatrix<F>,
    tolerance: F,
) -> Result<usize, DistributionError> {
    let sigma = singular_values(matrix)?;
    Ok(count_above(&sigma, tolerance))
}

fn count_above<F: Real>(sigma: &[F], tolerance: F) -> usize {
    match sigma.first() {
        None => 0,
        Some(&max) if max.is_zero() => 0,
        Some(&max) => sigma.iter().filter(|&&s| s > tolerance * max).count(),
    }
}

/// Rank of a sorted singular spectrum, or `None` when the spectrum does not
/// separate cleanly: a kept/dropped ratio below `gap` at the cut, or a
/// full-rank spectrum whose smallest value is within `gap` of the cutoff.
pub fn decide_rank<F: Real>(sigma: &[F], tolerance: F, gap: F) -> Option<usize> {
    let rank = count_above(sigma, tolerance);
    if rank == 0 {
        return Some(0);
    }
    let cutoff = tolerance * sigma[0];
    if rank == sigma.len() {
        if sigma[rank - 1] > gap * cutoff {
            Some(rank)
        } else {
            None
        }
    } else if sigma[rank] <= F::of(0.0) || sigma[rank - 1] / sigma[rank] >= gap {
        Some(rank)
    } else {
        None
    }
}

/// Unit covector annihilating the row span: the right singular vector for
/// the smallest singular value. Meaningful when the matrix has corank one.
pub fn null_covector<F: Real + RealField>(
    matrix: &DMatrix<F>,
) -> Result<DVector<F>, DistributionError> {
    if matrix.iter().any(|v| !Float::is_finite(*v)) {
        return Err(DistributionError::NonFinite);
    }
    let svd = matrix
        .clone()
        .try_svd(false, true, F::default_epsilon(), 1000)
        .ok_or(DistributionError::SvdFailed)?;
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut smallest = 0;
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s < svd.singular_values[smallest] {
            smallest = i;
        }
    }
    Ok(v_t.row(smallest).transpose())
}

/// The dimension the span attains at guarded points: full at orders zero
/// and one, corank one at order two.
pub fn expected_rank(m: usize, order: usize) -> Option<usize> {
    match order {
        0 => Some(2 * m + 2),
        1 => Some(4 * m + 3),
        2 => Some(2 * m * m + 7 * m + 3),
        _ => None,
    }
}

/// A reproducible generic-rank experiment. Defaults follow the problem
/// scale: `samples = ambient + 16`, 20 points, tolerance `1e-9`, spectral
/// gap `1e3`, guard margin `1e-2`.
#[derive(Clone, Debug)]
pub struct RankExperiment<F> {
    pub m: usize,
    pub order: usize,
    pub samples: usize,
    pub points: usize,
    pub tolerance: F,
    pub gap: F,
    pub margin: F,
    pub guards: Vec<Guard>,
    pub max_resample: usize,
    pub seed: u64,
}

impl<F: Real + RealField> RankExperiment<F> {
    pub fn new(m: usize, order: usize) -> Self {
        let ambient = JetCoordinateSystem::for_curves(m, order).dimension();
        RankExperiment {
            m,
            order,
            samples: ambient + 16,
            points: 20,
            tolerance: F::of(1e-9),
            gap: F::of(1e3),
            margin: F::of(1e-2),
            guards: default_guards(order),
            max_resample: 10_000,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn with_points(mut self, points: usize) -> Self {
        self.points = points;
        self
    }

    pub fn with_tolerance(mut self, tolerance: F) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn ambient(&self) -> usize {
        JetCoordinateSystem::for_curves(self.m, self.order).dimension()
    }

    fn validate(&self) -> Result<(), DistributionError> {
        let fail = |reason: String| Err(DistributionError::InvalidExperiment { reason });
        if self.m == 0 {
            return fail("m must be at least 1".into());
        }
        if self.order > 2 {
            return fail(format!("order {} exceeds the supported order 2", self.order));
        }
        if self.samples < self.ambient() {
            return fail(format!(
                "{} samples cannot span an ambient dimension of {}",
                self.samples,
                self.ambient()
            ));
        }
        if self.points == 0 {
            return fail("at least one point is required".into());
        }
        if !(self.tolerance > F::of(0.0)) || !(self.margin > F::of(0.0)) || !(self.gap > F::of(1.0)) {
            return fail("tolerance and margin must be positive and gap above one".into());
        }
        Ok(())
    }
}

/// Outcome of a generic-rank experiment. `rank` is the modal per-point
/// rank; the singular-value profile is the first point's spectrum.
#[derive(Clone, Debug, Serialize)]
pub struct RankResult<F> {
    pub m: usize,
    pub order: usize,
    pub ambient: usize,
    pub rank: usize,
    pub expected: Option<usize>,
    #[serde(rename = "match")]
    pub matches: bool,
    pub seed: u64,
    pub points: usize,
    pub samples: usize,
    pub per_point_ranks: Vec<usize>,
    pub singular_values: Vec<F>,
    pub tolerance: F,
}

/// Run the generic-rank experiment: at each guarded point the span matrix
/// is decomposed and its rank decided by the tolerance-and-gap rule;
/// ambiguous points are discarded and resampled. Points run in parallel
/// with one deterministic random stream per point index, so results depend
/// only on the seed.
pub fn generic_rank<F>(experiment: &RankExperiment<F>) -> Result<RankResult<F>, DistributionError>
where
    F: Real + RealField,
{
    experiment.validate()?;
    let sampler = SpanSampler::new(experiment.m, experiment.order)?;
    let per_point: Vec<Result<(usize, Vec<F>), DistributionError>> = (0..experiment.points)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(experiment.seed);
            rng.set_stream(i as u64);
            for _ in 0..AMBIGUOUS_RETRIES {
                let point = sample_point(
                    experiment.m,
                    experiment.order,
                    &experiment.guards,
                    experiment.margin,
                    &mut rng,
                    experiment.max_resample,
                )?;
                let matrix = sampler.span_matrix(&point, experiment.samples, &mut rng)?;
                let sigma = singular_values(&matrix)?;
                if let Some(rank) = decide_rank(&sigma, experiment.tolerance, experiment.gap) {
                    return Ok((rank, sigma));
                }
            }
            Err(DistributionError::RankAmbiguous {
                attempts: AMBIGUOUS_RETRIES,
            })
        })
        .collect();

    let mut ranks = Vec::with_capacity(experiment.points);
    let mut profile = Vec::new();
    for outcome in per_point {
        let (rank, sigma) = outcome?;
        if profile.is_empty() {
            profile = sigma;
        }
        ranks.push(rank);
    }

    let modal = modal_rank(&ranks);
    let outliers = ranks.iter().filter(|&&r| r != modal).count();
    if outliers * 10 > ranks.len() {
        return Err(DistributionError::InconsistentRanks { ranks });
    }

    let expected = expected_rank(experiment.m, experiment.order);
    Ok(RankResult {
        m: experiment.m,
        order: experiment.order,
        ambient: sampler.ambient(),
        rank: modal,
        expected,
        matches: expected == Some(modal),
        seed: experiment.seed,
        points: experiment.points,
        samples: experiment.samples,
        per_point_ranks: ranks,
        singular_values: profile,
        tolerance: experiment.tolerance,
    })
}

/// Most frequent value; ties break toward the smaller rank so a tie never
/// inflates the reported dimension.
fn modal_rank(ranks: &[usize]) -> usize {
    let mut best = ranks[0];
    let mut best_count = 0;
    for &candidate in ranks {
        let count = ranks.iter().filter(|&&r| r == candidate).count();
        if count > best_count || (count == best_count && candidate < best) {
            best = candidate;
            best_count = count;
        }
    }
    best
}
