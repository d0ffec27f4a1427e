//! Instance-discrimination objectives with closed-form gradients.
//!
//! All three losses take two `B x D` embedding batches whose rows are
//! matched views of the same clip and return the scalar loss together with
//! its gradient with respect to both batches.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;

/// `B x D` embeddings, one row per clip.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch(Array2<f64>);

impl EmbeddingBatch {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return invalid("embedding batch must be non-empty");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("embedding batch contains non-finite values");
        }
        Ok(Self(values))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("ragged embedding rows".into()));
        }
        let flat = rows.iter().flatten().copied().collect();
        Self::new(Array2::from_shape_vec((rows.len(), d), flat).map_err(|e| Error::Shape(e.to_string()))?)
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Loss value, its named components, and gradients for both inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub terms: Vec<(String, f64)>,
    pub grad_a: Array2<f64>,
    pub grad_b: Array2<f64>,
}

impl LossReport {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Simclr,
    Byol,
    Vicreg,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::Simclr, Objective::Byol, Objective::Vicreg];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Simclr => "simclr",
            Objective::Byol => "byol",
            Objective::Vicreg => "vicreg",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown objective `{s}`")))
    }
}

/// VICReg weights and hinge parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VicregParams {
    pub lambda: f64,
    pub mu: f64,
    pub nu: f64,
    pub gamma: f64,
    pub eps: f64,
}

impl Default for VicregParams {
    fn default() -> Self {
        Self { lambda: 1.0, mu: 1.0, nu: 0.05, gamma: 1.0, eps: 1e-4 }
    }
}

fn check_pair(za: &EmbeddingBatch, zb: &EmbeddingBatch) -> Result<()> {
    if za.0.dim() != zb.0.dim() {
        return Err(Error::Shape(format!("embedding batches {:?} vs {:?}", za.0.dim(), zb.0.dim())));
    }
    Ok(())
}

/// Rows scaled to unit length plus the original norms.
fn unit_rows(z: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms = z.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some(i) = norms.iter().position(|&n| !(n > 0.0)) {
        return Err(Error::ZeroNorm(i));
    }
    let unit = z / &norms.view().insert_axis(Axis(1));
    Ok((unit, norms))
}

/// Pulls a gradient w.r.t. unit rows back through `z -> z / |z|`:
/// `(g - (g . u) u) / |z|`.
fn through_normalization(g_unit: &Array2<f64>, unit: &Array2<f64>, norms: &Array1<f64>) -> Array2<f64> {
    let mut out = g_unit.clone();
    for ((mut row, u), &n) in out.rows_mut().into_iter().zip(unit.rows()).zip(norms) {
        let proj = row.dot(&u);
        row.zip_mut_with(&u, |g, &ui| *g = (*g - proj * ui) / n);
    }
    out
}

/// `s[i][j]` = cosine similarity between row `i` of `za` and row `j` of `zb`.
pub fn cosine_similarity_matrix(za: &EmbeddingBatch, zb: &EmbeddingBatch) -> Result<Array2<f64>> {
    if za.dim() != zb.dim() {
        return Err(Error::Shape(format!("embedding dims {} vs {}", za.dim(), zb.dim())));
    }
    let (ua, _) = unit_rows(&za.0)?;
    let (ub, _) = unit_rows(&zb.0)?;
    Ok(ua.dot(&ub.t()))
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Symmetric NT-Xent over the cosine similarity matrix at temperature
/// `alpha`, averaging the row-wise and column-wise cross-entropies of the
/// matched pairs on the diagonal.
pub fn infonce_loss(za: &EmbeddingBatch, zb: &EmbeddingBatch, alpha: f64) -> Result<LossReport> {
    check_pair(za, zb)?;
    if !(alpha > 0.0) {
        return invalid(format!("temperature must be positive, got {alpha}"));
    }
    let b = za.rows();
    if b < 2 {
        return invalid("InfoNCE needs at least two rows");
    }
    let (ua, na) = unit_rows(&za.0)?;
    let (ub, nb) = unit_rows(&zb.0)?;
    let logits = ua.dot(&ub.t()) / alpha;
    let scale = 1.0 / (2.0 * b as f64);

    let mut row_term = 0.0;
    let mut col_term = 0.0;
    // dL/dlogits accumulated from both directions
    let mut g = Array2::<f64>::zeros((b, b));
    for i in 0..b {
        let row = logits.row(i);
        let lse = log_sum_exp(row.iter().copied());
        row_term -= scale * (logits[[i, i]] - lse);
        for j in 0..b {
            g[[i, j]] += scale * (row[j] - lse).exp();
        }
        g[[i, i]] -= scale;

        let col = logits.column(i);
        let lse = log_sum_exp(col.iter().copied());
        col_term -= scale * (logits[[i, i]] - lse);
        for k in 0..b {
            g[[k, i]] += scale * (col[k] - lse).exp();
        }
        g[[i, i]] -= scale;
    }
    let g = g / alpha;
    let grad_ua = g.dot(&ub);
    let grad_ub = g.t().dot(&ua);
    Ok(LossReport {
        total: row_term + col_term,
        terms: vec![("row".into(), row_term), ("col".into(), col_term)],
        grad_a: through_normalization(&grad_ua, &ua, &na),
        grad_b: through_normalization(&grad_ub, &ub, &nb),
    })
}

/// `(1/2B) sum_i (2 - 2 s_ii)` between online predictions and target
/// projections. The target side is a stop-gradient branch: `grad_b` is zero.
pub fn byol_loss(online_pred: &EmbeddingBatch, target_proj: &EmbeddingBatch) -> Result<LossReport> {
    check_pair(online_pred, target_proj)?;
    let b = online_pred.rows() as f64;
    let (ua, na) = unit_rows(&online_pred.0)?;
    let (ub, _) = unit_rows(&target_proj.0)?;
    let diag: f64 = ua.rows().into_iter().zip(ub.rows()).map(|(x, y)| x.dot(&y)).sum();
    let total = (2.0 * b - 2.0 * diag) / (2.0 * b);
    let grad_ua = &ub * (-1.0 / b);
    Ok(LossReport {
        total,
        terms: vec![("similarity".into(), total)],
        grad_a: through_normalization(&grad_ua, &ua, &na),
        grad_b: Array2::zeros(target_proj.0.dim()),
    })
}

struct VarCov {
    variance: f64,
    covariance: f64,
    grad_variance: Array2<f64>,
    grad_covariance: Array2<f64>,
}

/// Variance hinge and off-diagonal covariance penalty of one batch, both
/// with the unbiased `(B - 1)` normalization.
fn variance_covariance(z: &Array2<f64>, gamma: f64, eps: f64) -> VarCov {
    let (b, d) = z.dim();
    let mean = z.mean_axis(Axis(0)).expect("non-empty");
    let centered = z - &mean;
    let denom = (b - 1) as f64;
    let cov = centered.t().dot(&centered) / denom;

    let mut variance = 0.0;
    let mut dv_dvar = Array1::<f64>::zeros(d);
    for j in 0..d {
        let std = (cov[[j, j]] + eps).sqrt();
        if gamma - std > 0.0 {
            variance += gamma - std;
            dv_dvar[j] = -1.0 / (d as f64 * 2.0 * std);
        }
    }
    variance /= d as f64;
    // d var_j / d z_ij = 2 (z_ij - m_j) / (B - 1); the mean term cancels.
    let grad_variance = &centered * &(dv_dvar * (2.0 / denom));

    let mut off = cov.clone();
    off.diag_mut().fill(0.0);
    let covariance = off.iter().map(|c| c * c).sum::<f64>() / d as f64;
    // dc/dC = 2 C_off / D (symmetric); dC/dX_c contracted gives 2 X_c G / (B-1).
    let g = &off * (2.0 / d as f64);
    let grad_covariance = centered.dot(&g) * (2.0 / denom);
    VarCov { variance, covariance, grad_variance, grad_covariance }
}

/// Weighted invariance + variance + covariance regularization.
pub fn vicreg_loss(za: &EmbeddingBatch, zb: &EmbeddingBatch, p: &VicregParams) -> Result<LossReport> {
    check_pair(za, zb)?;
    let b = za.rows();
    if b < 2 {
        return invalid("VICReg variance is undefined for fewer than two rows");
    }
    let diff = &za.0 - &zb.0;
    let invariance = diff.iter().map(|v| v * v).sum::<f64>() / b as f64;
    let grad_inv = &diff * (2.0 / b as f64);

    let a = variance_covariance(&za.0, p.gamma, p.eps);
    let c = variance_covariance(&zb.0, p.gamma, p.eps);
    let variance = a.variance + c.variance;
    let covariance = a.covariance + c.covariance;
    let total = p.lambda * invariance + p.mu * variance + p.nu * covariance;

    let grad_a = &grad_inv * p.lambda + &a.grad_variance * p.mu + &a.grad_covariance * p.nu;
    let grad_b = &grad_inv * (-p.lambda) + &c.grad_variance * p.mu + &c.grad_covariance * p.nu;
    Ok(LossReport {
        total,
        terms: vec![
            ("invariance".into(), invariance),
            ("variance".into(), variance),
            ("covariance".into(), covariance),
        ],
        grad_a,
        grad_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use rand::Rng;

    fn batch(rows: &[&[f64]]) -> EmbeddingBatch {
        EmbeddingBatch::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random_batch(seed: u64, b: usize, d: usize) -> EmbeddingBatch {
        let mut rng = stream(seed, Domain::Generate, &[b as u64, d as u64]);
        EmbeddingBatch::new(Array2::from_shape_fn((b, d), |_| rng.gen_range(-1.0..1.0))).unwrap()
    }

    /// Central differences of `f` around `z`, one coordinate at a time.
    fn numeric_grad(z: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
        let h = 1e-6;
        let mut g = Array2::zeros(z.dim());
        for idx in ndarray::indices(z.dim()) {
            let mut p = z.clone();
            p[idx] += h;
            let mut m = z.clone();
            m[idx] -= h;
            g[idx] = (f(&p) - f(&m)) / (2.0 * h);
        }
        g
    }

    fn max_rel_err(a: &Array2<f64>, n: &Array2<f64>) -> f64 {
        a.iter()
            .zip(n)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-4))
            .fold(0.0, f64::max)
    }

    fn wrap(z: &Array2<f64>) -> EmbeddingBatch {
        EmbeddingBatch::new(z.clone()).unwrap()
    }

    #[test]
    fn cosine_matrix_cases() {
        let e = batch(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(cosine_similarity_matrix(&e, &e).unwrap(), Array2::<f64>::eye(3));

        let za = random_batch(1, 5, 4);
        let zb = random_batch(2, 5, 4);
        let s = cosine_similarity_matrix(&za, &zb).unwrap();
        let scaled_a = EmbeddingBatch::new(za.values() * 3.5).unwrap();
        let scaled_b = EmbeddingBatch::new(zb.values() * 0.2).unwrap();
        let s2 = cosine_similarity_matrix(&scaled_a, &scaled_b).unwrap();
        for (x, y) in s.iter().zip(&s2) {
            assert!((x - y).abs() < 1e-12);
        }
        // naive double loop
        for i in 0..5 {
            for j in 0..5 {
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for k in 0..4 {
                    dot += za.values()[[i, k]] * zb.values()[[j, k]];
                    na += za.values()[[i, k]].powi(2);
                    nb += zb.values()[[j, k]].powi(2);
                }
                assert!((s[[i, j]] - dot / (na.sqrt() * nb.sqrt())).abs() < 1e-12);
                assert!(s[[i, j]].abs() <= 1.0 + 1e-15);
            }
        }
        let zero = batch(&[&[1.0, 0.0], &[0.0, 0.0]]);
        assert!(matches!(cosine_similarity_matrix(&zero, &zero), Err(Error::ZeroNorm(1))));
    }

    #[test]
    fn infonce_two_by_two() {
        let z = batch(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let r = infonce_loss(&z, &z, 0.1).unwrap();
        let oracle = -(10f64.exp() / (10f64.exp() + 1.0)).ln();
        assert!((r.total - oracle).abs() <= 1e-9 * oracle);
        assert!((r.total - 4.5398e-5).abs() < 1e-8);
        assert!(infonce_loss(&z, &z, 0.0).is_err());
        assert!(infonce_loss(&z, &z, -1.0).is_err());
    }

    #[test]
    fn infonce_bounds_and_temperature() {
        for seed in 0..20 {
            let za = random_batch(seed, 6, 5);
            let zb = random_batch(seed + 100, 6, 5);
            let alpha = 0.1;
            let r = infonce_loss(&za, &zb, alpha).unwrap();
            assert!(r.total >= 0.0);
            assert!(r.total <= (6.0 * (2.0 / alpha as f64).exp()).ln());
            assert!((r.term("row").unwrap() + r.term("col").unwrap() - r.total).abs() < 1e-15);
        }
        let z = batch(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let losses: Vec<f64> = [1.0, 0.5, 0.1].iter().map(|&a| infonce_loss(&z, &z, a).unwrap().total).collect();
        assert!(losses[0] > losses[1] && losses[1] > losses[2]);
    }

    #[test]
    fn byol_cases() {
        let a = batch(&[&[1.0, 2.0], &[-3.0, 0.5]]);
        let a2 = EmbeddingBatch::new(a.values() * 4.0).unwrap();
        let r = byol_loss(&a, &a2).unwrap();
        assert!(r.total.abs() < 1e-15);
        assert!(r.grad_a.iter().all(|g| g.abs() < 1e-15));

        let u = batch(&[&[1.0, 0.0], &[0.0, 1.0], &[0.6, 0.8]]);
        let neg = EmbeddingBatch::new(u.values() * -1.0).unwrap();
        assert!((byol_loss(&u, &neg).unwrap().total - 2.0).abs() < 1e-15);

        for seed in 0..10 {
            let za = random_batch(seed, 4, 6);
            let zb = random_batch(seed + 50, 4, 6);
            let r = byol_loss(&za, &zb).unwrap();
            let (ua, _) = unit_rows(za.values()).unwrap();
            let (ub, _) = unit_rows(zb.values()).unwrap();
            let oracle = (&ua - &ub).iter().map(|v| v * v).sum::<f64>() / 8.0;
            assert!((r.total - oracle).abs() < 1e-12);
            assert!(r.grad_b.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn vicreg_worked_example() {
        let z = batch(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        let r = vicreg_loss(&z, &z, &VicregParams::default()).unwrap();
        assert_eq!(r.term("invariance"), Some(0.0));
        assert_eq!(r.term("covariance"), Some(0.0));
        assert!((r.term("variance").unwrap() - 0.99).abs() < 1e-15);
        assert!((r.total - 0.99).abs() < 1e-15);
    }

    #[test]
    fn vicreg_zero_when_spread_and_decorrelated() {
        // per-dimension std 2 >= gamma, zero covariance
        let z = batch(&[&[2.0, 2.0], &[2.0, -2.0], &[-2.0, 2.0], &[-2.0, -2.0]]);
        let r = vicreg_loss(&z, &z, &VicregParams::default()).unwrap();
        assert_eq!(r.total, 0.0);
        // one dimension: empty off-diagonal sum
        let z1 = batch(&[&[0.1], &[0.3], &[-0.2]]);
        assert_eq!(vicreg_loss(&z1, &z1, &VicregParams::default()).unwrap().term("covariance"), Some(0.0));
        let single = batch(&[&[1.0, 2.0]]);
        assert!(vicreg_loss(&single, &single, &VicregParams::default()).is_err());
    }

    #[test]
    fn losses_are_permutation_invariant() {
        let za = random_batch(7, 5, 3);
        let zb = random_batch(8, 5, 3);
        let perm = [3, 0, 4, 1, 2];
        let permute = |z: &EmbeddingBatch| EmbeddingBatch::new(z.values().select(Axis(0), &perm)).unwrap();
        let (pa, pb) = (permute(&za), permute(&zb));
        let p = VicregParams::default();
        assert!((infonce_loss(&za, &zb, 0.1).unwrap().total - infonce_loss(&pa, &pb, 0.1).unwrap().total).abs() < 1e-12);
        assert!((byol_loss(&za, &zb).unwrap().total - byol_loss(&pa, &pb).unwrap().total).abs() < 1e-12);
        assert!((vicreg_loss(&za, &zb, &p).unwrap().total - vicreg_loss(&pa, &pb, &p).unwrap().total).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_central_differences() {
        let p = VicregParams { gamma: 1.0, ..Default::default() };
        for &b in &[2usize, 4, 8] {
            for &d in &[3usize, 16] {
                let seed = (b * 100 + d) as u64;
                let za = random_batch(seed, b, d);
                let zb = random_batch(seed + 1, b, d);
                let checks: [(&str, Box<dyn Fn(&EmbeddingBatch, &EmbeddingBatch) -> LossReport>); 3] = [
                    ("infonce", Box::new(|a, b| infonce_loss(a, b, 0.1).unwrap())),
                    ("byol", Box::new(|a, b| byol_loss(a, b).unwrap())),
                    ("vicreg", Box::new(|a, b| vicreg_loss(a, b, &p).unwrap())),
                ];
                for (name, f) in checks.iter() {
                    let r = f(&za, &zb);
                    let na = numeric_grad(za.values(), |z| f(&wrap(z), &zb).total);
                    let err_a = max_rel_err(&r.grad_a, &na);
                    assert!(err_a < 1e-5, "{name} B={b} D={d} grad_a err {err_a}");
                    if *name != "byol" {
                        let nb = numeric_grad(zb.values(), |z| f(&za, &wrap(z)).total);
                        let err_b = max_rel_err(&r.grad_b, &nb);
                        assert!(err_b < 1e-5, "{name} B={b} D={d} grad_b err {err_b}");
                    }
                }
            }
        }
    }
}
