use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::encoding::encode_batch;
use super::loss::{chamfer_with_gradient, knn_graph, masked_indices, regularization_loss};
use super::mlp::Mlp;
use crate::coarse::descriptors::uniform_keypoints;
use crate::error::{Error, Result};
use crate::geom::{centroid, CorrespondenceSet, DisplacementField, KdTree, LabeledCloud, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PyramidConfig {
    /// Number of pyramid levels.
    pub levels: usize,
    /// Maximum optimizer steps per level.
    pub max_iterations: usize,
    /// Base frequency exponent; level `k` encodes with `2^(k + k0)`.
    pub k0: i32,
    pub width: usize,
    /// Hidden layers per level network.
    pub depth: usize,
    pub learning_rate: f64,
    /// Per-step multiplicative learning-rate decay.
    pub decay: f64,
    /// Weight of the motion-coherence term.
    pub lambda: f64,
    /// Neighbours per node of the coherence graph.
    pub knn: usize,
    /// The coherence graph is built on at most this many evenly spaced
    /// source points.
    pub graph_nodes: usize,
    /// A level stops when its best loss improved by less than
    /// `min_improvement` (relative) over the last `patience` steps.
    pub patience: usize,
    pub min_improvement: f64,
    pub seed: u64,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig {
            levels: 8,
            max_iterations: 100,
            k0: 0,
            width: 64,
            depth: 3,
            learning_rate: 1e-3,
            decay: 0.99,
            lambda: 10.0,
            knn: 8,
            graph_nodes: 600,
            patience: 10,
            min_improvement: 1e-4,
            seed: 0,
        }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("pyramid: {m}")));
        if self.levels == 0 {
            return bad("levels must be at least 1");
        }
        if self.width == 0 || self.depth == 0 {
            return bad("width and depth must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay must lie in (0, 1]");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        if self.knn == 0 || self.graph_nodes < 2 || self.patience == 0 {
            return bad("knn, graph_nodes and patience must be positive");
        }
        Ok(())
    }
}

/// Trained level networks plus the normalisation mapping mm to unit
/// coordinates (`(x - center) / scale`).
#[derive(Debug, Clone)]
pub struct DeformationPyramid {
    pub levels: Vec<Mlp>,
    pub center: Vec3,
    pub scale: f64,
    pub k0: i32,
}

impl DeformationPyramid {
    fn increments(&self, level: usize, points: &[Vec3]) -> Vec<Vec3> {
        let unit: Vec<Vec3> = points.iter().map(|p| (p - self.center) / self.scale).collect();
        let out = self.levels[level].forward(&encode_batch(&unit, level, self.k0));
        out.column_iter()
            .map(|c| Vec3::new(c[0], c[1], c[2]) * self.scale)
            .collect()
    }

    /// Runs every level in order: `x <- x + scale * mlp_k(encode_k(x))`.
    pub fn deform(&self, points: &[Vec3]) -> Vec<Vec3> {
        let mut x = points.to_vec();
        for k in 0..self.levels.len() {
            let inc = self.increments(k, &x);
            for (p, d) in x.iter_mut().zip(inc) {
                *p += d;
            }
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTrace {
    /// Total loss at each evaluated step; the first entry is the level's
    /// entry loss (untrained head).
    pub losses: Vec<f64>,
    pub best_loss: f64,
    pub best_iteration: usize,
    pub correspondence_loss: f64,
    pub regularization_loss: f64,
}

#[derive(Debug, Clone)]
pub struct NdpResult {
    pub field: DisplacementField,
    pub trace: Vec<LevelTrace>,
    pub pyramid: DeformationPyramid,
}

impl NdpResult {
    pub fn final_loss(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |t| t.best_loss)
    }
}

struct Problem<'a> {
    target: &'a [Vec3],
    target_tree: KdTree,
    /// Positions within the evaluated set of the masked and graph points.
    mask_pos: Vec<usize>,
    graph_pos: Vec<usize>,
    edges: Vec<(usize, usize)>,
    lambda: f64,
}

struct Evaluation {
    loss: f64,
    data: f64,
    reg: f64,
    grad: Vec<Vec3>,
}

impl Problem<'_> {
    /// Loss and gradient with respect to the increments `delta` on top of
    /// the current positions `x` and accumulated field `total`.
    fn evaluate(&self, x: &[Vec3], total: &[Vec3], delta: &[Vec3]) -> Evaluation {
        let moved: Vec<Vec3> = self.mask_pos.iter().map(|&e| x[e] + delta[e]).collect();
        let (data, g_data) = chamfer_with_gradient(&moved, self.target, &self.target_tree);
        let field: Vec<Vec3> = self.graph_pos.iter().map(|&e| total[e] + delta[e]).collect();
        let (reg, g_reg) = regularization_loss(&field, &self.edges);
        let mut grad = vec![Vec3::zeros(); x.len()];
        for (&e, g) in self.mask_pos.iter().zip(g_data) {
            grad[e] += g;
        }
        for (&e, g) in self.graph_pos.iter().zip(g_reg) {
            grad[e] += g * self.lambda;
        }
        Evaluation {
            loss: data + self.lambda * reg,
            data,
            reg,
            grad,
        }
    }
}

fn to_vectors(out: &DMatrix<f64>, scale: f64) -> Vec<Vec3> {
    out.column_iter()
        .map(|c| Vec3::new(c[0], c[1], c[2]) * scale)
        .collect()
}

/// Fits the deformation pyramid so that the `sigma`-masked part of `source`
/// (already rigidly aligned) moves onto `target`. Returns the displacement
/// of every source point.
pub fn ndp_register(
    source: &LabeledCloud,
    target: &LabeledCloud,
    sigma: &CorrespondenceSet,
    cfg: &PyramidConfig,
) -> Result<NdpResult> {
    ndp_register_points(source.points(), target.points(), sigma, cfg)
}

pub fn ndp_register_points(
    source: &[Vec3],
    target: &[Vec3],
    sigma: &CorrespondenceSet,
    cfg: &PyramidConfig,
) -> Result<NdpResult> {
    cfg.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if sigma.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    sigma.validate(source.len(), target.len())?;

    let center = centroid(source);
    let scale = source
        .iter()
        .map(|p| (p - center).norm())
        .fold(0.0, f64::max)
        .max(1e-9);

    let mask = masked_indices(sigma);
    let graph_nodes = if source.len() <= cfg.graph_nodes {
        (0..source.len()).collect()
    } else {
        uniform_keypoints(source.len(), cfg.graph_nodes as f64 / source.len() as f64)
    };
    let mut eval_set: Vec<usize> = mask.iter().chain(&graph_nodes).copied().collect();
    eval_set.sort_unstable();
    eval_set.dedup();
    let pos = |i: &usize| eval_set.binary_search(i).expect("member");
    let graph_points: Vec<Vec3> = graph_nodes.iter().map(|&i| source[i]).collect();
    let problem = Problem {
        target,
        target_tree: KdTree::new(target),
        mask_pos: mask.iter().map(pos).collect(),
        graph_pos: graph_nodes.iter().map(pos).collect(),
        edges: knn_graph(&graph_points, cfg.knn),
        lambda: cfg.lambda,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x: Vec<Vec3> = eval_set.iter().map(|&i| source[i]).collect();
    let mut total = vec![Vec3::zeros(); x.len()];
    let mut pyramid = DeformationPyramid {
        levels: Vec::with_capacity(cfg.levels),
        center,
        scale,
        k0: cfg.k0,
    };
    let mut trace = Vec::with_capacity(cfg.levels);

    for level in 0..cfg.levels {
        let unit: Vec<Vec3> = x.iter().map(|p| (p - center) / scale).collect();
        let enc = encode_batch(&unit, level, cfg.k0);
        let mut mlp = Mlp::new(6, cfg.width, cfg.depth, 3, &mut rng);
        let mut opt = Adam::new(&mlp, cfg.learning_rate, cfg.decay);
        let mut best: Option<(f64, usize, Mlp, Vec<Vec3>, f64, f64)> = None;
        let mut losses = Vec::new();
        let mut best_history = Vec::new();
        for it in 0..=cfg.max_iterations {
            let acts = mlp.forward_cached(&enc);
            let delta = to_vectors(acts.last().expect("output"), scale);
            let ev = problem.evaluate(&x, &total, &delta);
            if !ev.loss.is_finite() {
                return Err(Error::numerical(level, it, format!("loss is {}", ev.loss)));
            }
            losses.push(ev.loss);
            if best.as_ref().is_none_or(|b| ev.loss < b.0) {
                best = Some((ev.loss, it, mlp.clone(), delta, ev.data, ev.reg));
            }
            let best_loss = best.as_ref().expect("set").0;
            best_history.push(best_loss);
            if it == cfg.max_iterations {
                break;
            }
            if it >= cfg.patience {
                let before = best_history[it - cfg.patience];
                if before - best_loss < cfg.min_improvement * before.abs() {
                    break;
                }
            }
            let mut out_grad = DMatrix::zeros(3, x.len());
            for (j, g) in ev.grad.iter().enumerate() {
                for c in 0..3 {
                    out_grad[(c, j)] = g[c] * scale;
                }
            }
            let (grads, _) = mlp.backward(&acts, &out_grad);
            if grads
                .iter()
                .any(|g| g.weight.iter().chain(g.bias.iter()).any(|v| !v.is_finite()))
            {
                return Err(Error::numerical(level, it, "non-finite gradient"));
            }
            opt.update(&mut mlp, &grads);
        }
        let (best_loss, best_iteration, best_mlp, delta, data, reg) = best.expect("evaluated at least once");
        for ((p, t), d) in x.iter_mut().zip(total.iter_mut()).zip(&delta) {
            *p += d;
            *t += d;
        }
        pyramid.levels.push(best_mlp);
        trace.push(LevelTrace {
            losses,
            best_loss,
            best_iteration,
            correspondence_loss: data,
            regularization_loss: reg,
        });
    }

    let deformed = pyramid.deform(source);
    let field = DisplacementField::between(source, &deformed)
        .map_err(|_| Error::numerical(cfg.levels, 0, "non-finite output field"))?;
    Ok(NdpResult {
        field,
        trace,
        pyramid,
    })
}
