//! Classifier oracles over latent codes.
//!
//! An oracle is the composed classifier `F(w)`: the generator is folded in,
//! so everything downstream sees only logits, probabilities and
//! vector-Jacobian products with respect to the latent code.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::purpose_stream;
use crate::semgeo::{LatentCode, Perturbation, SemanticBasis};

/// Probability floor used by the cross-entropy loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    /// `−log p_y`, with `p_y` floored at [`PROB_FLOOR`].
    #[default]
    CrossEntropy,
    /// `max_{c≠y} logit_c − logit_y`
    Margin,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_entropy" | "ce" => Ok(Self::CrossEntropy),
            "margin" => Ok(Self::Margin),
            other => Err(Error::Config(format!("unknown loss kind `{other}`"))),
        }
    }
}

/// A deterministic classifier `F: R^d → simplex(Y)`.
///
/// Implementations must be pure functions of `w` and safe to share across
/// threads.
pub trait ClassifierOracle: Sync {
    fn num_classes(&self) -> usize;

    fn latent_dim(&self) -> usize;

    fn logits(&self, w: &[f64]) -> Vec<f64>;

    /// `J(w)ᵀ u` where `J` is the Jacobian of the logits at `w`.
    fn logits_vjp(&self, w: &[f64], u: &[f64]) -> Vec<f64>;

    fn probabilities(&self, w: &[f64]) -> Vec<f64> {
        linalg::softmax(&self.logits(w))
    }

    /// Predicted class; ties resolve to the lowest index.
    fn predict(&self, w: &[f64]) -> usize {
        linalg::argmax(&self.logits(w))
    }

    /// Loss at `w` for label `y` together with its gradient in latent space.
    fn loss_gradient(&self, w: &[f64], y: usize, kind: LossKind) -> (f64, Vec<f64>) {
        let logits = self.logits(w);
        let (loss, u) = loss_and_logit_weights(&logits, y, kind);
        let grad = if u.iter().all(|v| *v == 0.0) {
            vec![0.0; self.latent_dim()]
        } else {
            self.logits_vjp(w, &u)
        };
        (loss, grad)
    }
}

/// Loss value and `∂loss/∂logits`.
fn loss_and_logit_weights(logits: &[f64], y: usize, kind: LossKind) -> (f64, Vec<f64>) {
    let mut u = vec![0.0; logits.len()];
    match kind {
        LossKind::CrossEntropy => {
            let raw = linalg::log_sum_exp(logits) - logits[y];
            let cap = -PROB_FLOOR.ln();
            if raw >= cap {
                // p_y is at the floor: the clamped loss is locally constant.
                return (cap, u);
            }
            let p = linalg::softmax(logits);
            for (c, pc) in p.iter().enumerate() {
                u[c] = *pc;
            }
            u[y] -= 1.0;
            (raw, u)
        }
        LossKind::Margin => {
            let runner_up = runner_up(logits, y);
            u[runner_up] = 1.0;
            u[y] -= 1.0;
            (logits[runner_up] - logits[y], u)
        }
    }
}

/// Highest-scoring class other than `y` (lowest index on ties).
pub fn runner_up(logits: &[f64], y: usize) -> usize {
    let mut best: Option<usize> = None;
    for (c, &l) in logits.iter().enumerate() {
        if c == y {
            continue;
        }
        match best {
            Some(b) if l <= logits[b] => {}
            _ => best = Some(c),
        }
    }
    best.unwrap_or(y)
}

/// `logits(w) = W w + b`
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOracle {
    weights: Matrix,
    biases: Vec<f64>,
}

impl LinearOracle {
    pub fn new(weights: Matrix, biases: Vec<f64>) -> Result<Self> {
        check_len("linear oracle biases", weights.rows(), biases.len())?;
        if weights.rows() < 2 {
            return Err(Error::Config("a classifier needs at least two classes".into()));
        }
        Ok(Self { weights, biases })
    }

    /// Linear oracle whose logits, restricted to `w0 + Vᵀδ`, equal
    /// `A δ + c` for the given per-class rows of `A` (in attribute
    /// coordinates) and offsets `c`. Requires orthonormal basis rows.
    pub fn in_attribute_space(
        basis: &SemanticBasis,
        w0: &[f64],
        class_rows: &[Vec<f64>],
        offsets: &[f64],
    ) -> Result<Self> {
        check_len("class offsets", class_rows.len(), offsets.len())?;
        check_len("anchor latent code", basis.latent_dim(), w0.len())?;
        let mut weights = Matrix::zeros(class_rows.len(), basis.latent_dim());
        let mut biases = Vec::with_capacity(class_rows.len());
        for (c, row) in class_rows.iter().enumerate() {
            check_len("class row", basis.num_attributes(), row.len())?;
            let lifted = basis.lift(row);
            biases.push(offsets[c] - linalg::dot(&lifted, w0));
            weights.row_mut(c).copy_from_slice(&lifted);
        }
        Self::new(weights, biases)
    }

    /// Random Gaussian weights and biases.
    pub fn random(num_classes: usize, latent_dim: usize, seed: u64) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::Config("latent_dim must be at least 1".into()));
        }
        let mut rng = purpose_stream(seed, "linear-oracle");
        let scale = 1.0 / (latent_dim as f64).sqrt();
        let data = (0..num_classes * latent_dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let biases = (0..num_classes).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        Self::new(Matrix::from_flat(num_classes, latent_dim, data), biases)
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }
}

impl ClassifierOracle for LinearOracle {
    fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    fn latent_dim(&self) -> usize {
        self.weights.cols()
    }

    fn logits(&self, w: &[f64]) -> Vec<f64> {
        let mut out = self.weights.matvec(w);
        for (o, b) in out.iter_mut().zip(&self.biases) {
            *o += b;
        }
        out
    }

    fn logits_vjp(&self, _w: &[f64], u: &[f64]) -> Vec<f64> {
        self.weights.matvec_t(u)
    }
}

/// Cosine-similarity matcher: `logits(w) = τ · cos(A w, g_c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeOracle {
    embedding: Matrix,
    /// Unit-normalized gallery rows.
    gallery: Matrix,
    temperature: f64,
}

impl PrototypeOracle {
    pub fn new(embedding: Matrix, gallery: Matrix, temperature: f64) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::Config(format!("temperature {temperature} must be positive")));
        }
        check_len("gallery embedding width", embedding.rows(), gallery.cols())?;
        if gallery.rows() < 2 {
            return Err(Error::Config("gallery needs at least two identities".into()));
        }
        let mut gallery = gallery;
        for c in 0..gallery.rows() {
            let row = gallery.row_mut(c);
            let n = linalg::norm2(row);
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::InvalidValue(format!("gallery row {c} has zero norm")));
            }
            row.iter_mut().for_each(|x| *x /= n);
        }
        Ok(Self {
            embedding,
            gallery,
            temperature,
        })
    }

    /// Identity embedding (`A = I`): cosine similarity computed directly in
    /// latent space.
    pub fn with_identity_embedding(pop: &SyntheticPopulation, temperature: f64) -> Result<Self> {
        Self::new(Matrix::identity(pop.latent_dim()), pop.codes().clone(), temperature)
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.rows()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

impl ClassifierOracle for PrototypeOracle {
    fn num_classes(&self) -> usize {
        self.gallery.rows()
    }

    fn latent_dim(&self) -> usize {
        self.embedding.cols()
    }

    fn logits(&self, w: &[f64]) -> Vec<f64> {
        let z = self.embedding.matvec(w);
        let n = linalg::norm2(&z);
        if n == 0.0 {
            return vec![0.0; self.num_classes()];
        }
        let scale = self.temperature / n;
        self.gallery.matvec(&z).into_iter().map(|s| s * scale).collect()
    }

    fn logits_vjp(&self, w: &[f64], u: &[f64]) -> Vec<f64> {
        // ∂(τ ẑ·ĝ_c)/∂z = τ/‖z‖ (ĝ_c − (ẑ·ĝ_c) ẑ)
        let z = self.embedding.matvec(w);
        let n = linalg::norm2(&z);
        if n == 0.0 {
            return vec![0.0; self.latent_dim()];
        }
        let zhat: Vec<f64> = z.iter().map(|v| v / n).collect();
        let cos = self.gallery.matvec(&zhat);
        let mut gz = self.gallery.matvec_t(u);
        let weight: f64 = u.iter().zip(&cos).map(|(a, b)| a * b).sum();
        linalg::axpy(-weight, &zhat, &mut gz);
        let scale = self.temperature / n;
        gz.iter_mut().for_each(|v| *v *= scale);
        self.embedding.matvec_t(&gz)
    }
}

/// Oracle with fixed logits everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantOracle {
    logits: Vec<f64>,
    latent_dim: usize,
}

impl ConstantOracle {
    /// Always predicts `class` out of `num_classes`.
    pub fn new(num_classes: usize, class: usize, latent_dim: usize) -> Result<Self> {
        if num_classes < 2 || class >= num_classes {
            return Err(Error::Config(format!(
                "constant class {class} invalid for {num_classes} classes"
            )));
        }
        let mut logits = vec![0.0; num_classes];
        logits[class] = 1.0;
        Ok(Self { logits, latent_dim })
    }
}

impl ClassifierOracle for ConstantOracle {
    fn num_classes(&self) -> usize {
        self.logits.len()
    }

    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn logits(&self, _w: &[f64]) -> Vec<f64> {
        self.logits.clone()
    }

    fn logits_vjp(&self, _w: &[f64], _u: &[f64]) -> Vec<f64> {
        vec![0.0; self.latent_dim]
    }
}

/// `K` identities, one latent code each; identity `c` has label `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPopulation {
    codes: Matrix,
    seed: u64,
}

impl SyntheticPopulation {
    pub fn new(codes: Matrix, seed: u64) -> Result<Self> {
        if codes.rows() < 2 || codes.cols() < 1 {
            return Err(Error::Config(format!(
                "population needs at least 2 identities of dimension >= 1, got {}x{}",
                codes.rows(),
                codes.cols()
            )));
        }
        if codes.as_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("population codes must be finite".into()));
        }
        Ok(Self { codes, seed })
    }

    pub fn num_identities(&self) -> usize {
        self.codes.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.codes.cols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn codes(&self) -> &Matrix {
        &self.codes
    }

    pub fn code(&self, identity: usize) -> &[f64] {
        self.codes.row(identity)
    }

    /// First `k` identities. Populations generated from the same seed are
    /// prefixes of each other, so this equals `gen_population(k, d, seed)`.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        if k > self.num_identities() {
            return Err(Error::Config(format!(
                "population has {} identities, {k} requested",
                self.num_identities()
            )));
        }
        Self::new(
            Matrix::from_flat(k, self.latent_dim(), self.codes.as_flat()[..k * self.latent_dim()].to_vec()),
            self.seed,
        )
    }
}

/// I.i.d. standard-normal codes from a seeded stream, drawn row by row.
pub fn gen_population(num_identities: usize, latent_dim: usize, seed: u64) -> Result<SyntheticPopulation> {
    if num_identities < 2 || latent_dim < 1 {
        return Err(Error::Config(format!(
            "need num_identities >= 2 and latent_dim >= 1, got {num_identities} and {latent_dim}"
        )));
    }
    let mut rng = purpose_stream(seed, "population");
    let data = (0..num_identities * latent_dim)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    SyntheticPopulation::new(Matrix::from_flat(num_identities, latent_dim, data), seed)
}

/// Random embedding `A` (i.i.d. normal scaled by `1/√d`) and gallery
/// `g_c = A w_c`.
pub fn make_prototype_oracle(
    pop: &SyntheticPopulation,
    embed_dim: usize,
    temperature: f64,
    seed: u64,
) -> Result<PrototypeOracle> {
    if embed_dim < 1 {
        return Err(Error::Config("embed_dim must be at least 1".into()));
    }
    let d = pop.latent_dim();
    let mut rng = purpose_stream(seed, "prototype-embedding");
    let scale = 1.0 / (d as f64).sqrt();
    let a = Matrix::from_flat(
        embed_dim,
        d,
        (0..embed_dim * d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect(),
    );
    let mut gallery = Matrix::zeros(pop.num_identities(), embed_dim);
    for c in 0..pop.num_identities() {
        gallery.row_mut(c).copy_from_slice(&a.matvec(pop.code(c)));
    }
    PrototypeOracle::new(a, gallery, temperature)
}

fn check_query(
    oracle: &dyn ClassifierOracle,
    basis: &SemanticBasis,
    w: &LatentCode,
    delta: &Perturbation,
    y: usize,
) -> Result<()> {
    check_len("oracle latent dim", basis.latent_dim(), oracle.latent_dim())?;
    check_len("latent code", basis.latent_dim(), w.len())?;
    check_len("delta", basis.num_attributes(), delta.len())?;
    if y >= oracle.num_classes() {
        return Err(Error::Config(format!(
            "label {y} out of range for {} classes",
            oracle.num_classes()
        )));
    }
    Ok(())
}

/// Loss at `w + Vᵀδ` and its gradient with respect to `δ` (`V ∇_w`).
pub fn loss_and_grad_delta(
    oracle: &dyn ClassifierOracle,
    basis: &SemanticBasis,
    w: &LatentCode,
    delta: &Perturbation,
    y: usize,
    kind: LossKind,
) -> Result<(f64, Vec<f64>)> {
    check_query(oracle, basis, w, delta, y)?;
    Ok(loss_grad_raw(oracle, basis, w.as_slice(), delta.as_slice(), y, kind))
}

pub(crate) fn loss_grad_raw(
    oracle: &dyn ClassifierOracle,
    basis: &SemanticBasis,
    w: &[f64],
    delta: &[f64],
    y: usize,
    kind: LossKind,
) -> (f64, Vec<f64>) {
    let x = basis.displace(w, delta);
    let (loss, g) = oracle.loss_gradient(&x, y, kind);
    (loss, basis.pull_back(&g))
}

fn loss_only(
    oracle: &dyn ClassifierOracle,
    basis: &SemanticBasis,
    w: &[f64],
    delta: &[f64],
    y: usize,
    kind: LossKind,
) -> f64 {
    let logits = oracle.logits(&basis.displace(w, delta));
    loss_and_logit_weights(&logits, y, kind).0
}

/// Central-difference estimate of the loss gradient with respect to `δ`.
pub fn finite_diff_grad_delta(
    oracle: &dyn ClassifierOracle,
    basis: &SemanticBasis,
    w: &LatentCode,
    delta: &Perturbation,
    y: usize,
    kind: LossKind,
    step: f64,
) -> Result<Vec<f64>> {
    check_query(oracle, basis, w, delta, y)?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!("finite-difference step {step} must be positive")));
    }
    let mut x = delta.as_slice().to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = loss_only(oracle, basis, w.as_slice(), &x, y, kind);
        x[i] = orig - step;
        let down = loss_only(oracle, basis, w.as_slice(), &x, y, kind);
        x[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}
