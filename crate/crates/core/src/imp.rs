//! Greedy construction driven by a priority model, and the SNR neighborhood
//! search around it.

use serde::Serialize;

use crate::appendix::argmax_unfrozen;
use crate::channel::SnrDb;
use crate::error::{Error, Result};
use crate::fer::{row_seed, FerEngine, FerEstimate, StopRule};
use crate::model::{forward, ImpParams, StateInput};
use crate::pccmp::{build_pccmp, PccmpGraph};
use crate::polar::{CodeSpec, Construction};

/// Anything that assigns one priority per check node of a graph.
pub trait PriorityModel {
    fn priorities(&self, graph: &PccmpGraph, theta: f64) -> Result<Vec<f64>>;
}

impl PriorityModel for ImpParams {
    fn priorities(&self, graph: &PccmpGraph, theta: f64) -> Result<Vec<f64>> {
        let fp = forward(self, &[StateInput { graph, theta }])?;
        Ok(fp.z().row(0).to_vec())
    }
}

/// Offsets in dB around the evaluation SNR.
pub const DEFAULT_NS_OFFSETS: [f64; 5] = [0.0, 0.2, -0.2, 0.4, -0.4];

#[derive(Clone, Debug, Serialize)]
pub struct ImpRun {
    #[serde(skip)]
    pub construction: Construction,
    /// θ fed to the model at each step.
    pub thetas: Vec<f64>,
    /// Index frozen at each step.
    pub order: Vec<usize>,
}

/// θ at step `t` of `steps`.
pub fn theta_at(t: usize, steps: usize) -> f64 {
    1.0 - t as f64 / steps as f64
}

/// Freezes `N − K` check nodes one at a time, each time the non-frozen node
/// with the largest priority.
pub fn construct_imp(spec: &CodeSpec, gamma: SnrDb, model: &dyn PriorityModel) -> Result<ImpRun> {
    let (n, k) = (spec.n(), spec.k());
    if k >= n || k <= spec.m() {
        return Err(Error::Argument(format!(
            "construction needs m < K < N, got N={n} K={k} m={}",
            spec.m()
        )));
    }
    let steps = n - k;
    let mut graph = build_pccmp(n, gamma)?;
    let mut thetas = Vec::with_capacity(steps);
    let mut order = Vec::with_capacity(steps);
    for t in 0..steps {
        let theta = theta_at(t, steps);
        let z = model.priorities(&graph, theta)?;
        if z.len() != n {
            return Err(Error::Size(format!("model returned {} priorities for N={n}", z.len())));
        }
        if let Some(j) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite priority z[{j}] at step {t}")));
        }
        let j = argmax_unfrozen(&z, &graph).expect("a non-frozen node remains");
        graph.freeze_in_place(j)?;
        thetas.push(theta);
        order.push(j);
    }
    Ok(ImpRun {
        construction: Construction::from_frozen_mask(*spec, &graph.frozen_mask())?,
        thetas,
        order,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct NsCandidate {
    pub offset_db: f64,
    pub design_snr_db: f64,
    /// Index into [`NsResult::evaluated`] of the distinct construction this
    /// offset produced.
    pub distinct: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct NsEvaluated {
    pub offset_db: f64,
    pub frozen: Vec<usize>,
    pub estimate: FerEstimate,
}

#[derive(Clone, Debug, Serialize)]
pub struct NsResult {
    #[serde(skip)]
    pub construction: Construction,
    pub estimate: FerEstimate,
    pub offset_db: f64,
    pub candidates: Vec<NsCandidate>,
    pub evaluated: Vec<NsEvaluated>,
}

/// Builds one candidate per design SNR `γ_eval + offset`, simulates each
/// distinct construction once at `γ_eval`, and keeps the lowest FER. Ties go
/// to the smaller `|offset|`, then to the earlier offset in the list. All
/// candidates share one noise seed.
#[allow(clippy::too_many_arguments)]
pub fn neighborhood_search(
    spec: &CodeSpec,
    gamma_eval: SnrDb,
    model: &dyn PriorityModel,
    offsets: &[f64],
    list_size: usize,
    rule: &StopRule,
    seed: u64,
    engine: &FerEngine,
) -> Result<NsResult> {
    if offsets.is_empty() {
        return Err(Error::Argument("neighborhood search needs at least one offset".into()));
    }
    if let Some(o) = offsets.iter().find(|o| !o.is_finite()) {
        return Err(Error::Argument(format!("non-finite SNR offset {o}")));
    }
    let mut ranked: Vec<usize> = (0..offsets.len()).collect();
    ranked.sort_by(|&a, &b| offsets[a].abs().total_cmp(&offsets[b].abs()).then(a.cmp(&b)));
    let fer_seed = row_seed(seed, gamma_eval);
    let mut candidates = Vec::with_capacity(offsets.len());
    let mut evaluated: Vec<NsEvaluated> = Vec::new();
    let mut constructions: Vec<Construction> = Vec::new();
    for &i in &ranked {
        let design = gamma_eval.offset(offsets[i]);
        let c = construct_imp(spec, design, model)?.construction;
        let distinct = match constructions.iter().position(|d| d.frozen_mask() == c.frozen_mask()) {
            Some(d) => d,
            None => {
                let estimate = engine.estimate(&c, list_size, gamma_eval, rule, fer_seed)?;
                evaluated.push(NsEvaluated {
                    offset_db: offsets[i],
                    frozen: c.frozen_set(),
                    estimate,
                });
                constructions.push(c);
                constructions.len() - 1
            }
        };
        candidates.push(NsCandidate {
            offset_db: offsets[i],
            design_snr_db: design.0,
            distinct,
        });
    }
    let mut best = 0;
    for (d, e) in evaluated.iter().enumerate().skip(1) {
        if e.estimate.fer < evaluated[best].estimate.fer {
            best = d;
        }
    }
    Ok(NsResult {
        construction: constructions.swap_remove(best),
        estimate: evaluated[best].estimate.clone(),
        offset_db: evaluated[best].offset_db,
        candidates,
        evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ImpHyper;

    struct Fixed(Vec<f64>);

    impl PriorityModel for Fixed {
        fn priorities(&self, _graph: &PccmpGraph, _theta: f64) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    struct Recorder(std::cell::RefCell<Vec<f64>>);

    impl PriorityModel for Recorder {
        fn priorities(&self, graph: &PccmpGraph, theta: f64) -> Result<Vec<f64>> {
            self.0.borrow_mut().push(theta);
            Ok(vec![0.0; graph.n()])
        }
    }

    fn spec(n: usize, k: usize) -> CodeSpec {
        CodeSpec::new(n, k, 0, None).unwrap()
    }

    #[test]
    fn theta_schedule_two_steps() {
        let r = Recorder(Default::default());
        let run = construct_imp(&spec(4, 2), SnrDb(1.0), &r).unwrap();
        assert_eq!(*r.0.borrow(), vec![1.0, 0.5]);
        assert_eq!(run.thetas, vec![1.0, 0.5]);
        // all-equal priorities freeze the lowest indices first
        assert_eq!(run.order, vec![0, 1]);
    }

    #[test]
    fn freezes_largest_priorities() {
        let m = Fixed(vec![0.1, 0.9, 0.3, 0.8, 0.0, 0.5, 0.2, 0.7]);
        let run = construct_imp(&spec(8, 4), SnrDb(0.0), &m).unwrap();
        assert_eq!(run.order, vec![1, 3, 7, 5]);
        assert_eq!(run.construction.frozen_set(), vec![1, 3, 5, 7]);
    }

    #[test]
    fn rejects_bad_rates() {
        let m = Fixed(vec![0.0; 8]);
        assert!(construct_imp(&spec(8, 8), SnrDb(0.0), &m).is_err());
        assert!(CodeSpec::new(8, 2, 2, Some(crate::polar::CrcPoly(0x3))).is_err());
        assert!(construct_imp(&spec(8, 4), SnrDb(0.0), &Fixed(vec![f64::NAN; 8])).is_err());
    }

    #[test]
    fn gnn_construction_is_deterministic() {
        let p = ImpParams::random(ImpHyper::default(), 3).unwrap();
        let a = construct_imp(&spec(16, 8), SnrDb(2.0), &p).unwrap();
        let b = construct_imp(&spec(16, 8), SnrDb(2.0), &p).unwrap();
        assert_eq!(a.order, b.order);
        assert_eq!(a.construction.frozen_set().len(), 8);
    }

    #[test]
    fn search_dedupes_and_degenerates() {
        let m = Fixed((0..16).map(|j| -(j as f64)).collect());
        let s = spec(16, 8);
        let rule = StopRule::training(10, 2000).unwrap();
        let engine = FerEngine::new(1).unwrap();
        let r = neighborhood_search(&s, SnrDb(2.0), &m, &DEFAULT_NS_OFFSETS, 2, &rule, 5, &engine).unwrap();
        assert_eq!(r.candidates.len(), 5);
        assert_eq!(r.evaluated.len(), 1);
        assert_eq!(r.offset_db, 0.0);

        let single = neighborhood_search(&s, SnrDb(2.0), &m, &[0.0], 2, &rule, 5, &engine).unwrap();
        let direct = construct_imp(&s, SnrDb(2.0), &m).unwrap().construction;
        assert_eq!(single.construction, direct);
        let est = engine.estimate(&direct, 2, SnrDb(2.0), &rule, row_seed(5, SnrDb(2.0))).unwrap();
        assert_eq!(single.estimate, est);
        assert!(neighborhood_search(&s, SnrDb(2.0), &m, &[], 2, &rule, 5, &engine).is_err());
    }

    #[test]
    fn search_prefers_lower_fer() {
        let p = ImpParams::random(ImpHyper::default(), 8).unwrap();
        let s = spec(16, 8);
        let rule = StopRule::training(30, 3000).unwrap();
        let engine = FerEngine::new(1).unwrap();
        let r = neighborhood_search(&s, SnrDb(1.0), &p, &DEFAULT_NS_OFFSETS, 2, &rule, 1, &engine).unwrap();
        assert!(r.evaluated.len() <= 5);
        assert!(r.evaluated.iter().all(|e| e.estimate.fer >= r.estimate.fer));
    }
}
