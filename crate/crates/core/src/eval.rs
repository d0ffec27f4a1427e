//! Frozen-embedding evaluation: video embedding, k-NN retrieval recall,
//! silhouette score, a linear probe and a 2-D PCA projection.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{eval_transform, extract_clip, normalize, resized_crop, sample_crop, window_span, AugmentConfig};
use crate::error::{invalid, Error, Result};
use crate::model::{forward, NetSpec, ParamSet, Stage};
use crate::rng::{stream, Domain};
use crate::synth::Split;
use crate::video::{ClipBatch, VideoTensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => invalid(format!("unknown metric `{other}`")),
        }
    }
}

/// Embedding rows with a class id and split tag per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddings {
    pub ids: Vec<String>,
    pub vectors: Array2<f64>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
}

impl LabeledEmbeddings {
    pub fn new(ids: Vec<String>, vectors: Array2<f64>, labels: Vec<usize>, splits: Vec<Split>) -> Result<Self> {
        let n = vectors.nrows();
        if n == 0 || vectors.ncols() == 0 {
            return invalid("embeddings must have at least one row and one column");
        }
        if ids.len() != n || labels.len() != n || splits.len() != n {
            return Err(Error::Shape(format!(
                "{n} vectors but {} ids, {} labels, {} splits",
                ids.len(),
                labels.len(),
                splits.len()
            )));
        }
        if let Some(i) = vectors.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite embedding value in row {}", i / vectors.ncols()));
        }
        Ok(Self { ids, vectors, labels, splits })
    }

    /// Anonymous rows, all tagged as train.
    pub fn unnamed(vectors: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        let n = vectors.nrows();
        Self::new((0..n).map(|i| i.to_string()).collect(), vectors, labels, vec![Split::Train; n])
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn class_count(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            rows.iter().map(|&i| self.ids[i].clone()).collect(),
            self.vectors.select(Axis(0), rows),
            rows.iter().map(|&i| self.labels[i]).collect(),
            rows.iter().map(|&i| self.splits[i]).collect(),
        )
    }

    pub fn split(&self, split: Split) -> Result<Self> {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| self.splits[i] == split).collect();
        if rows.is_empty() {
            return invalid(format!("no {} rows", split.name()));
        }
        self.select(&rows)
    }

    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Self::new(self.ids.clone(), self.vectors.clone(), labels, self.splits.clone())
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string(), "label".into(), "split".into()];
        header.extend((0..self.dim()).map(|j| format!("v{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.ids[i].clone(), self.labels[i].to_string(), self.splits[i].name().to_string()];
            row.extend(self.vectors.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let dim = header.len().saturating_sub(3);
        let expected: Vec<String> =
            ["id", "label", "split"].iter().map(|s| s.to_string()).chain((0..dim).map(|j| format!("v{j}"))).collect();
        if header.iter().ne(expected.iter().map(String::as_str)) {
            return invalid("embedding CSV header must be `id,label,split,v0,...`");
        }
        let (mut ids, mut labels, mut splits, mut values) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::Invalid(format!("embedding CSV row {}: bad {what}", line + 1));
            ids.push(rec[0].to_string());
            labels.push(rec[1].parse().map_err(|_| bad("label"))?);
            splits.push(rec[2].parse().map_err(|_| bad("split"))?);
            for field in rec.iter().skip(3) {
                values.push(field.parse::<f64>().map_err(|_| bad("value"))?);
            }
        }
        let n = ids.len();
        let vectors = Array2::from_shape_vec((n, dim), values).map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(ids, vectors, labels, splits)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// How retrieval clips are cut out of a video.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedSettings {
    pub frames: usize,
    pub stride: usize,
    pub clips: usize,
    pub augment: AugmentConfig,
    pub random_crop: bool,
    pub seed: u64,
}

/// Start indices of `clips` windows spread evenly over the video.
pub fn clip_starts(video_frames: usize, span: usize, clips: usize) -> Result<Vec<usize>> {
    if clips == 0 {
        return invalid("need at least one clip per video");
    }
    if span > video_frames {
        return Err(Error::TooFewFrames { frames: video_frames, needed: span });
    }
    let last = video_frames - span;
    if clips == 1 {
        return Ok(vec![last / 2]);
    }
    Ok((0..clips).map(|i| ((i * last) as f64 / (clips - 1) as f64).round() as usize).collect())
}

/// Mean encoder feature over evenly spaced clips of one video.
pub fn embed_video(
    video: &VideoTensor,
    params: &ParamSet,
    spec: &NetSpec,
    settings: &EmbedSettings,
    video_index: usize,
) -> Result<Array1<f64>> {
    let starts = clip_starts(video.frames(), window_span(settings.frames, settings.stride), settings.clips)?;
    let mut clips = Vec::with_capacity(starts.len());
    for (ci, &s) in starts.iter().enumerate() {
        let clip = extract_clip(video, s, settings.frames, settings.stride)?;
        let view = if settings.random_crop {
            let cfg = &settings.augment;
            let mut rng = stream(settings.seed, Domain::Eval, &[video_index as u64, ci as u64]);
            let rect = sample_crop(clip.height(), clip.width(), cfg.crop_scale, cfg.crop_aspect, &mut rng);
            let data = resized_crop(clip.array(), rect, cfg.out_height, cfg.out_width);
            normalize(&VideoTensor::from_array(data)?, &cfg.norm_mean, &cfg.norm_std)?
        } else {
            eval_transform(&clip, &settings.augment)?
        };
        clips.push(view);
    }
    let (features, _) = forward(params, spec, &ClipBatch::new(clips)?, Stage::Features)?;
    Ok(features.values().mean_axis(Axis(0)).expect("at least one clip"))
}

/// Embeds every video on a pool of `workers` threads; row order follows
/// the input order and values do not depend on the worker count.
pub fn embed_videos(
    videos: &[VideoTensor],
    params: &ParamSet,
    spec: &NetSpec,
    settings: &EmbedSettings,
    workers: usize,
) -> Result<Array2<f64>> {
    if videos.is_empty() {
        return invalid("no videos to embed");
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("worker pool: {e}")))?;
    let rows: Vec<Array1<f64>> = pool.install(|| {
        videos.par_iter().enumerate().map(|(i, v)| embed_video(v, params, spec, settings, i)).collect::<Result<_>>()
    })?;
    let d = rows[0].len();
    let mut out = Array2::zeros((rows.len(), d));
    for (mut dst, src) in out.rows_mut().into_iter().zip(&rows) {
        dst.assign(src);
    }
    Ok(out)
}

fn distance_row(metric: Metric, q: &[f64], db: &Array2<f64>, db_norms: &[f64]) -> Vec<f64> {
    let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    db.rows()
        .into_iter()
        .zip(db_norms)
        .map(|(row, &n)| match metric {
            Metric::Cosine => {
                let dot: f64 = row.iter().zip(q).map(|(a, b)| a * b).sum();
                let denom = qn * n;
                if denom > 0.0 { 1.0 - dot / denom } else { 1.0 }
            }
            Metric::Euclidean => row.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(),
        })
        .collect()
}

/// Rank (0-based) of the first database row sharing each query's class,
/// or `None` when the class is absent from the database.
pub fn first_hit_ranks(db: &LabeledEmbeddings, queries: &LabeledEmbeddings, metric: Metric) -> Result<Vec<Option<usize>>> {
    if db.dim() != queries.dim() {
        return Err(Error::Shape(format!("database dim {} vs query dim {}", db.dim(), queries.dim())));
    }
    let norms: Vec<f64> = db.vectors.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    Ok((0..queries.len())
        .into_par_iter()
        .map(|qi| {
            let q = queries.vectors.row(qi).to_vec();
            let dist = distance_row(metric, &q, &db.vectors, &norms);
            let mut order: Vec<usize> = (0..db.len()).collect();
            // Stable sort keeps database order among equal distances.
            order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]));
            order.iter().position(|&i| db.labels[i] == queries.labels[qi])
        })
        .collect())
}

/// Fraction of queries with at least one same-class row among their `k`
/// nearest database rows, for each `k`.
pub fn knn_recall(db: &LabeledEmbeddings, queries: &LabeledEmbeddings, ks: &[usize], metric: Metric) -> Result<Vec<(usize, f64)>> {
    if ks.contains(&0) {
        return invalid("k must be positive");
    }
    let ranks = first_hit_ranks(db, queries, metric)?;
    let n = ranks.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| (k, ranks.iter().filter(|r| r.is_some_and(|r| r < k)).count() as f64 / n))
        .collect())
}

fn euclidean(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean silhouette over all points with Euclidean distance; points in a
/// singleton class score 0, as do points with `a = b = 0`.
pub fn silhouette(e: &LabeledEmbeddings) -> Result<f64> {
    let k = e.class_count();
    let mut counts = vec![0usize; k];
    for &l in &e.labels {
        counts[l] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return invalid("silhouette needs at least two classes");
    }
    if counts.iter().all(|&c| c < 2) {
        return invalid("silhouette needs a class with at least two points");
    }
    let scores: Vec<f64> = (0..e.len())
        .into_par_iter()
        .map(|i| {
            let li = e.labels[i];
            if counts[li] < 2 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..e.len() {
                if j != i {
                    sums[e.labels[j]] += euclidean(e.vectors.row(i), e.vectors.row(j));
                }
            }
            let a = sums[li] / (counts[li] - 1) as f64;
            let b = (0..k).filter(|&c| c != li && counts[c] > 0).map(|c| sums[c] / counts[c] as f64).fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 { (b - a) / m } else { 0.0 }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSettings {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

/// Multinomial logistic regression on standardized frozen features,
/// trained by full-batch gradient descent; returns test top-1 accuracy.
pub fn linear_probe(train: &LabeledEmbeddings, test: &LabeledEmbeddings, settings: ProbeSettings) -> Result<f64> {
    if train.is_empty() || test.is_empty() {
        return invalid("linear probe needs non-empty train and test sets");
    }
    if train.dim() != test.dim() {
        return Err(Error::Shape(format!("train dim {} vs test dim {}", train.dim(), test.dim())));
    }
    let k = train.class_count().max(test.class_count());
    let d = train.dim();
    let mean = train.vectors.mean_axis(Axis(0)).expect("non-empty");
    let std = train.vectors.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    let xtr = (&train.vectors - &mean) / &std;
    let xte = (&test.vectors - &mean) / &std;
    let mut onehot = Array2::<f64>::zeros((train.len(), k));
    for (i, &l) in train.labels.iter().enumerate() {
        onehot[[i, l]] = 1.0;
    }
    let mut rng = stream(settings.seed, Domain::Probe, &[]);
    let mut w = Array2::from_shape_fn((d, k), |_| rng.gen_range(-0.01..0.01));
    let mut b = Array1::<f64>::zeros(k);
    let n = train.len() as f64;
    for _ in 0..settings.epochs {
        let p = softmax_rows(&(xtr.dot(&w) + &b));
        let g = (p - &onehot) / n;
        w -= &(xtr.t().dot(&g) * settings.lr);
        b -= &(g.sum_axis(Axis(0)) * settings.lr);
    }
    let logits = xte.dot(&w) + &b;
    let correct = logits
        .rows()
        .into_iter()
        .zip(&test.labels)
        .filter(|(row, &l)| {
            // First maximum wins ties.
            let best = row.iter().enumerate().fold(0, |bi, (j, &v)| if v > row[bi] { j } else { bi });
            best == l
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// Coordinates on the top two principal components. Each component's sign
/// makes its largest-magnitude coordinate positive.
pub fn pca2d(e: &LabeledEmbeddings) -> Result<Array2<f64>> {
    let n = e.len();
    if n < 2 {
        return invalid("PCA needs at least two points");
    }
    let mean = e.vectors.mean_axis(Axis(0)).expect("non-empty");
    let centered = &e.vectors - &mean;
    let d = e.dim();
    let cov = centered.t().dot(&centered);
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut out = Array2::zeros((n, 2));
    for (c, &idx) in order.iter().take(2).enumerate() {
        let axis = Array1::from_iter(eig.eigenvectors.column(idx).iter().copied());
        let mut coords = centered.dot(&axis);
        let peak = coords.iter().copied().fold(0.0_f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if peak < 0.0 {
            coords.mapv_inplace(|v| -v);
        }
        out.column_mut(c).assign(&coords);
    }
    Ok(out)
}

/// Scatter plot of 2-D coordinates colored by label.
pub fn scatter_svg(coords: &Array2<f64>, labels: &[usize], title: &str) -> String {
    const SIZE: f64 = 480.0;
    const PAD: f64 = 32.0;
    const PALETTE: [&str; 10] =
        ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];
    let range = |c: usize| {
        let col = coords.column(c);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, if hi > lo { hi - lo } else { 1.0 })
    };
    let ((x0, xs), (y0, ys)) = (range(0), range(1));
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let title = title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let _ = writeln!(svg, r#"<text x="{PAD}" y="20" font-family="sans-serif" font-size="14">{title}</text>"#);
    for (row, &l) in coords.rows().into_iter().zip(labels) {
        let x = PAD + (row[0] - x0) / xs * (SIZE - 2.0 * PAD);
        let y = SIZE - PAD - (row[1] - y0) / ys * (SIZE - 2.0 * PAD);
        let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{}"/>"#, PALETTE[l % PALETTE.len()]);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Line-oriented `key=value` metrics report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<(String, String)>,
}

impl Report {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = Report::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Invalid(format!("report line {}: missing `=`", i + 1)))?;
            r.push(k, v);
        }
        Ok(r)
    }
}

/// Which metrics to compute over a labeled embedding set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSettings {
    pub ks: Vec<usize>,
    pub metric: Metric,
    pub probe: ProbeSettings,
}

/// Retrieval with test rows as queries against train rows, silhouette over
/// the test rows, and a linear probe from train to test. Keys are prefixed
/// with `prefix` (for example `dynamic.`).
pub fn evaluate(e: &LabeledEmbeddings, settings: &MetricSettings, prefix: &str, report: &mut Report) -> Result<()> {
    let db = e.split(Split::Train)?;
    let queries = e.split(Split::Test)?;
    for (k, r) in knn_recall(&db, &queries, &settings.ks, settings.metric)? {
        report.push(format!("{prefix}recall@{k}"), r);
    }
    let sil = silhouette(&queries).or_else(|_| silhouette(e))?;
    report.push(format!("{prefix}silhouette"), sil);
    report.push(format!("{prefix}probe_accuracy"), linear_probe(&db, &queries, settings.probe)?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn emb(v: Array2<f64>, labels: Vec<usize>) -> LabeledEmbeddings {
        LabeledEmbeddings::unnamed(v, labels).unwrap()
    }

    #[test]
    fn identical_query_hits_top1() {
        let db = emb(array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.2]], vec![0, 1, 2]);
        let q = emb(array![[0.0, 1.0]], vec![1]);
        assert_eq!(knn_recall(&db, &q, &[1], Metric::Cosine).unwrap(), vec![(1, 1.0)]);
    }

    #[test]
    fn single_class_db_is_perfect() {
        let db = emb(array![[1.0, 0.0], [0.0, 1.0]], vec![0, 0]);
        let q = emb(array![[3.0, -1.0], [0.1, 0.2]], vec![0, 0]);
        for (_, r) in knn_recall(&db, &q, &[1, 2, 5], Metric::Euclidean).unwrap() {
            assert_eq!(r, 1.0);
        }
    }

    #[test]
    fn ties_resolve_by_database_order() {
        let db = emb(array![[1.0, 0.0], [2.0, 0.0]], vec![0, 1]);
        let q = emb(array![[5.0, 0.0]], vec![1]);
        assert_eq!(knn_recall(&db, &q, &[1, 2], Metric::Cosine).unwrap(), vec![(1, 0.0), (2, 1.0)]);
    }

    #[test]
    fn dim_mismatch_is_an_error() {
        let db = emb(array![[1.0, 0.0]], vec![0]);
        let q = emb(array![[1.0, 0.0, 0.0]], vec![0]);
        assert!(matches!(knn_recall(&db, &q, &[1], Metric::Cosine), Err(Error::Shape(_))));
    }

    #[test]
    fn silhouette_limits() {
        let far = emb(array![[0.0, 0.0], [1e-9, 0.0], [100.0, 0.0], [100.0, 1e-9]], vec![0, 0, 1, 1]);
        assert!((silhouette(&far).unwrap() - 1.0).abs() < 1e-9);
        let same = emb(Array2::ones((4, 3)), vec![0, 0, 1, 1]);
        assert_eq!(silhouette(&same).unwrap(), 0.0);
        assert!(silhouette(&emb(array![[0.0], [1.0]], vec![0, 0])).is_err());
    }

    #[test]
    fn probe_separable_and_memorized() {
        let v = array![[-2.0, 0.1], [-1.5, -0.3], [-1.8, 0.4], [2.0, 0.2], [1.6, -0.1], [1.9, 0.3]];
        let e = emb(v, vec![0, 0, 0, 1, 1, 1]);
        let s = ProbeSettings { epochs: 200, lr: 0.5, seed: 1 };
        assert_eq!(linear_probe(&e, &e, s).unwrap(), 1.0);
        let pts = emb(array![[0.0, 1.0], [1.0, 0.0], [1.0, 1.0]], vec![0, 1, 2]);
        assert_eq!(linear_probe(&pts, &pts, ProbeSettings { epochs: 500, lr: 1.0, seed: 0 }).unwrap(), 1.0);
    }

    #[test]
    fn pca_degenerate_and_centered() {
        let same = emb(Array2::from_elem((5, 4), 0.7), vec![0; 5]);
        assert!(pca2d(&same).unwrap().iter().all(|v| v.abs() < 1e-12));
        let e = emb(array![[1.0, 2.0, 0.5], [0.0, -1.0, 2.0], [3.0, 0.0, 1.0], [2.0, 2.0, -1.0]], vec![0; 4]);
        let p = pca2d(&e).unwrap();
        for m in p.mean_axis(Axis(0)).unwrap() {
            assert!(m.abs() < 1e-12);
        }
        assert!(pca2d(&emb(array![[1.0]], vec![0])).is_err());
    }

    #[test]
    fn clip_starts_span_the_video() {
        assert_eq!(clip_starts(22, 22, 1).unwrap(), vec![0]);
        assert_eq!(clip_starts(32, 22, 3).unwrap(), vec![0, 5, 10]);
        assert!(clip_starts(10, 22, 1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let e = LabeledEmbeddings::new(
            vec!["a".into(), "b".into()],
            array![[0.1, -1.0 / 3.0], [1e-17, 12345.678]],
            vec![1, 0],
            vec![Split::Train, Split::Test],
        )
        .unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("id,label,split,v0,v1\n"));
        assert_eq!(LabeledEmbeddings::read_csv(&buf[..]).unwrap(), e);
    }

    #[test]
    fn report_round_trip() {
        let mut r = Report::default();
        r.push("dynamic.recall@1", 0.25);
        r.push("videos", 12);
        let back = Report::parse(&r.to_text()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.get_f64("dynamic.recall@1"), Some(0.25));
    }

    #[test]
    fn svg_has_one_marker_per_point() {
        let svg = scatter_svg(&array![[0.0, 0.0], [1.0, 2.0], [2.0, 1.0]], &[0, 1, 1], "a<b");
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("a&lt;b"));
    }
}
