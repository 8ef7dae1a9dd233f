//! Per-point neural texture: a color autoencoder, a frozen-decoder feature bank,
//! and inverse-distance feature aggregation over nearby semantic points.

use std::rc::Rc;

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{KdIndex, OrientedPointCloud, TriangleMesh};
use crate::nn::{parameter_digest, AdamState, AutoencoderSpec, Checkpoint, ColorAutoencoder, Graph, MixRows, Tensor};

/// Autoencoder whose decoder is frozen once pretraining ends.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceModel {
    pub autoencoder: ColorAutoencoder,
}

impl AppearanceModel {
    pub fn feature_dim(&self) -> usize {
        self.autoencoder.spec.feature_dim
    }

    /// Hash of the decoder parameters; constant after pretraining.
    pub fn decoder_digest(&self) -> String {
        parameter_digest(&self.autoencoder.decoder.params)
    }

    pub fn encode_colors(&self, colors: &[[f64; 3]]) -> Result<Vec<f64>> {
        let t = Tensor::from_rows(colors)?;
        Ok(self.autoencoder.encode(&t)?.into_data())
    }

    /// Decodes row-major features of width `feature_dim`.
    pub fn decode_features(&self, features: &[f64]) -> Result<Vec<[f64; 3]>> {
        let d = self.feature_dim();
        if !features.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch(format!("{} values are not rows of {d}", features.len())));
        }
        let t = Tensor::new(vec![features.len() / d, d], features.to_vec())?;
        let out = self.autoencoder.decode(&t)?;
        Ok(out.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn write_checkpoint(&self, ck: &mut Checkpoint, prefix: &str) -> Result<()> {
        ck.put_json(&format!("{prefix}.spec"), &self.autoencoder.spec)?;
        ck.put_mlp(&format!("{prefix}.encoder"), &self.autoencoder.encoder)?;
        ck.put_mlp(&format!("{prefix}.decoder"), &self.autoencoder.decoder)
    }

    pub fn read_checkpoint(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let spec: AutoencoderSpec = ck.get_json(&format!("{prefix}.spec"))?;
        let encoder = ck.get_mlp(&format!("{prefix}.encoder"))?;
        let decoder = ck.get_mlp(&format!("{prefix}.decoder"))?;
        if encoder.spec != spec.encoder_spec() || decoder.spec != spec.decoder_spec() {
            return Err(Error::Checkpoint("autoencoder layers do not match the stored spec".into()));
        }
        Ok(Self {
            autoencoder: ColorAutoencoder { spec, encoder, decoder },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub spec: AutoencoderSpec,
    pub epochs: usize,
    pub lr: f64,
    /// Colors drawn per step; the whole set when smaller.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            spec: AutoencoderSpec::desk(),
            epochs: 400,
            lr: 1e-3,
            batch_size: 512,
            seed: 0,
        }
    }
}

/// Fits the color autoencoder by mean squared reconstruction error.
///
/// Returns the best parameters seen and the per-epoch loss.
pub fn pretrain_autoencoder(colors: &[[f64; 3]], cfg: &PretrainConfig) -> Result<(AppearanceModel, Vec<f64>)> {
    if colors.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if let Some(c) = colors.iter().find(|c| c.iter().any(|v| !(0.0..=1.0).contains(v))) {
        return Err(Error::NonFinite(format!("color {c:?} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ae = ColorAutoencoder::new(cfg.spec.clone(), &mut rng)?;
    let mut opt = AdamState::new(cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, ae.clone());
    for epoch in 0..cfg.epochs {
        let batch: Vec<[f64; 3]> = if colors.len() <= cfg.batch_size {
            colors.to_vec()
        } else {
            sample(&mut rng, colors.len(), cfg.batch_size).iter().map(|i| colors[i]).collect()
        };
        let mut g = Graph::new();
        let enc = ae.encoder.bind(&mut g, true);
        let dec = ae.decoder.bind(&mut g, true);
        let x = g.input(Tensor::from_rows(&batch)?);
        let code = ae.encoder.forward_graph(&mut g, &enc, x)?;
        let out = ae.decoder.forward_graph(&mut g, &dec, code)?;
        let diff = g.sub(out, x)?;
        let sq = g.mul(diff, diff)?;
        let total = g.sum(sq);
        let loss = g.scale(total, 1.0 / batch.len() as f64);
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("autoencoder loss at epoch {epoch}")));
        }
        let grads = g.backward(loss)?;
        let mut params: Vec<Tensor> = ae.encoder.params.iter().chain(&ae.decoder.params).cloned().collect();
        let gs: Vec<Tensor> = enc.iter().chain(&dec).map(|&v| grads.tensor(v)).collect();
        // the batch loss before the step scores the parameters it was computed with
        if value < best.0 {
            best = (value, ae.clone());
        }
        history.push(best.0);
        opt.step(&mut params, &gs)?;
        let ne = ae.encoder.params.len();
        ae.decoder.params = params.split_off(ne);
        ae.encoder.params = params;
        if epoch % 100 == 0 {
            log::debug!("autoencoder epoch {epoch}: loss {value:.3e}");
        }
    }
    log::info!("autoencoder pretrained: best loss {:.3e}", best.0);
    Ok((AppearanceModel { autoencoder: best.1 }, history))
}

/// How neighbor distances turn into aggregation weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdwMode {
    /// `w = 1 / (d + eps)`.
    #[default]
    Inverse,
    /// `w = d`, the literal printed form; kept for comparison runs.
    RawDistance,
}

pub const IDW_EPS: f64 = 1e-8;
const EXACT_HIT: f64 = 1e-12;
pub const DEFAULT_K: usize = 8;

/// Normalized neighbor weights for one query.
pub fn idw_weights(index: &KdIndex, query: &Vector3<f64>, k: usize, mode: IdwMode) -> Result<Vec<(usize, f64)>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let nn = index.knn(query, k)?;
    if let Some(&(j, d)) = nn.first() {
        if d < EXACT_HIT && mode == IdwMode::Inverse {
            return Ok(vec![(j, 1.0)]);
        }
    }
    let raw: Vec<(usize, f64)> = nn
        .into_iter()
        .map(|(j, d)| {
            let w = match mode {
                IdwMode::Inverse => 1.0 / (d + IDW_EPS),
                IdwMode::RawDistance => d,
            };
            (j, w)
        })
        .collect();
    let total: f64 = raw.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        // all raw distances zero: fall back to a plain average
        let u = 1.0 / raw.len() as f64;
        return Ok(raw.into_iter().map(|(j, _)| (j, u)).collect());
    }
    Ok(raw.into_iter().map(|(j, w)| (j, w / total)).collect())
}

/// Features per semantic point, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl FeatureBank {
    pub fn len(&self) -> usize {
        self.values.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// IDW average of bank features around `query`; `index` holds posed semantic points.
pub fn aggregate_feature(query: &Vector3<f64>, index: &KdIndex, bank: &FeatureBank, k: usize, mode: IdwMode) -> Result<Vec<f64>> {
    if bank.len() != index.len() {
        return Err(Error::SizeMismatch(bank.len(), index.len()));
    }
    let mut out = vec![0.0; bank.dim];
    for (j, w) in idw_weights(index, query, k, mode)? {
        for (o, f) in out.iter_mut().zip(bank.row(j)) {
            *o += w * f;
        }
    }
    Ok(out)
}

/// Mean squared color error of decoded mixed features and its gradient w.r.t. the bank.
pub fn color_objective(model: &AppearanceModel, bank: &FeatureBank, rows: Rc<MixRows>, targets: &[[f64; 3]]) -> Result<(f64, Vec<f64>)> {
    if rows.len() != targets.len() {
        return Err(Error::SizeMismatch(rows.len(), targets.len()));
    }
    let dec = &model.autoencoder.decoder;
    let mut g = Graph::new();
    let params = dec.bind(&mut g, false);
    let f = g.param(&Tensor::new(vec![bank.len(), bank.dim], bank.values.clone())?);
    let mixed = g.mix_rows(f, rows)?;
    let out = dec.forward_graph(&mut g, &params, mixed)?;
    let target = g.input(Tensor::from_rows(targets)?);
    let diff = g.sub(out, target)?;
    let sq = g.mul(diff, diff)?;
    let total = g.sum(sq);
    let loss = g.scale(total, 1.0 / targets.len() as f64);
    let value = g.value(loss).item();
    let grads = g.backward(loss)?;
    Ok((value, grads.tensor(f).into_data()))
}

/// One posed frame: semantic point positions under the frozen geometry model and
/// the colored scan of the same pose.
#[derive(Debug, Clone)]
pub struct ColorFrame {
    pub semantic_positions: Vec<Vector3<f64>>,
    pub scan: OrientedPointCloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub epochs: usize,
    pub lr: f64,
    pub k: usize,
    pub samples_per_frame: usize,
    pub idw: IdwMode,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-3,
            k: DEFAULT_K,
            samples_per_frame: 2048,
            idw: IdwMode::Inverse,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureReport {
    pub initial_loss: f64,
    /// Mean color loss per epoch (over the frames of that epoch).
    pub epoch_loss: Vec<f64>,
}

/// Initial bank: the encoding of each semantic point's nearest scan color in `frame`.
pub fn initial_features(model: &AppearanceModel, frame: &ColorFrame) -> Result<FeatureBank> {
    let colors = frame.scan.colors().ok_or(Error::MissingColors)?;
    let index = KdIndex::from_f32(frame.scan.positions());
    let picked: Vec<[f64; 3]> = frame
        .semantic_positions
        .iter()
        .map(|p| colors[index.nearest(p).0].map(|c| c as f64))
        .collect();
    Ok(FeatureBank {
        dim: model.feature_dim(),
        values: model.encode_colors(&picked)?,
    })
}

fn frame_batch(frame: &ColorFrame, index: &KdIndex, cfg: &FeatureConfig, rng: &mut ChaCha8Rng) -> Result<(Rc<MixRows>, Vec<[f64; 3]>)> {
    let colors = frame.scan.colors().ok_or(Error::MissingColors)?;
    let n = frame.scan.len();
    let picks: Vec<usize> = if n <= cfg.samples_per_frame {
        (0..n).collect()
    } else {
        sample(rng, n, cfg.samples_per_frame).into_vec()
    };
    let pos = frame.scan.positions();
    let rows = picks
        .iter()
        .map(|&i| idw_weights(index, &pos[i].cast(), cfg.k, cfg.idw))
        .collect::<Result<MixRows>>()?;
    let targets = picks.iter().map(|&i| colors[i].map(|c| c as f64)).collect();
    Ok((Rc::new(rows), targets))
}

/// Optimizes per-point features through the frozen decoder.
///
/// IDW weights come from the frozen geometry and are constants of each step.
pub fn train_features(model: &AppearanceModel, frames: &[ColorFrame], cfg: &FeatureConfig) -> Result<(FeatureBank, FeatureReport)> {
    let first = frames.first().ok_or(Error::EmptyTrainingSet)?;
    if frames.iter().any(|f| f.scan.colors().is_none()) {
        return Err(Error::MissingColors);
    }
    let n = first.semantic_positions.len();
    if let Some(f) = frames.iter().find(|f| f.semantic_positions.len() != n) {
        return Err(Error::SizeMismatch(f.semantic_positions.len(), n));
    }
    let indices: Vec<KdIndex> = frames.iter().map(|f| KdIndex::new(f.semantic_positions.clone())).collect();
    let mut bank = initial_features(model, first)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamState::new(cfg.lr);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut initial_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..frames.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut sum = 0.0;
        for &fi in &order {
            let (rows, targets) = frame_batch(&frames[fi], &indices[fi], cfg, &mut rng)?;
            let (value, grad) = color_objective(model, &bank, rows, &targets)?;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("color loss at epoch {epoch}")));
            }
            if initial_loss.is_nan() {
                initial_loss = value;
            }
            sum += value;
            opt.step_slices(&mut [&mut bank.values], &[&grad])?;
        }
        let mean = sum / frames.len() as f64;
        log::debug!("feature epoch {epoch}: color loss {mean:.3e}");
        epoch_loss.push(mean);
    }
    Ok((bank, FeatureReport { initial_loss, epoch_loss }))
}

/// Mean color loss of a bank over whole frames, without sampling.
pub fn evaluate_color_loss(model: &AppearanceModel, bank: &FeatureBank, frames: &[ColorFrame], k: usize, mode: IdwMode) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for f in frames {
        let colors = f.scan.colors().ok_or(Error::MissingColors)?;
        let index = KdIndex::new(f.semantic_positions.clone());
        for (p, c) in f.scan.positions().iter().zip(colors) {
            let feat = aggregate_feature(&p.cast(), &index, bank, k, mode)?;
            let rgb = model.decode_features(&feat)?[0];
            total += (0..3).map(|i| (rgb[i] - c[i] as f64).powi(2)).sum::<f64>();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyCloud);
    }
    Ok(total / count as f64)
}

/// Colors every vertex with the decoded aggregate feature of nearby posed points.
pub fn color_mesh(
    mesh: &TriangleMesh,
    posed_points: &[Vector3<f64>],
    bank: &FeatureBank,
    model: &AppearanceModel,
    k: usize,
    mode: IdwMode,
) -> Result<TriangleMesh> {
    let index = KdIndex::new(posed_points.to_vec());
    let mut feats = Vec::with_capacity(mesh.vertices.len() * bank.dim);
    for v in &mesh.vertices {
        feats.extend(aggregate_feature(&v.cast(), &index, bank, k, mode)?);
    }
    let colors = model
        .decode_features(&feats)?
        .into_iter()
        .map(|c| c.map(|v| v.clamp(0.0, 1.0) as f32))
        .collect();
    mesh.clone().with_vertex_colors(colors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes::icosphere;
    use crate::geometry::sample_surface;

    fn tiny_spec() -> AutoencoderSpec {
        AutoencoderSpec {
            feature_dim: 4,
            encoder_depth: 2,
            encoder_width: 16,
            decoder_depth: 3,
            decoder_width: 16,
        }
    }

    fn model(seed: u64) -> AppearanceModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AppearanceModel {
            autoencoder: ColorAutoencoder::new(tiny_spec(), &mut rng).unwrap(),
        }
    }

    #[test]
    fn overfits_black_and_white() {
        let cfg = PretrainConfig {
            spec: tiny_spec(),
            epochs: 1500,
            lr: 5e-3,
            ..PretrainConfig::default()
        };
        let colors = [[0.0; 3], [1.0; 3]];
        let (m, hist) = pretrain_autoencoder(&colors, &cfg).unwrap();
        assert!(hist.windows(2).all(|w| w[1] <= w[0]));
        let t = Tensor::from_rows(&colors).unwrap();
        let out = m.autoencoder.forward(&t).unwrap();
        for (o, c) in out.data().iter().zip(t.data()) {
            assert!((o - c).abs() < 0.01, "{o} vs {c}");
        }
        assert!(matches!(pretrain_autoencoder(&[], &cfg), Err(Error::EmptyTrainingSet)));
    }

    fn bank(rows: &[&[f64]]) -> FeatureBank {
        FeatureBank {
            dim: rows[0].len(),
            values: rows.iter().flat_map(|r| r.to_vec()).collect(),
        }
    }

    #[test]
    fn aggregation_rules() {
        let index = KdIndex::new(vec![Vector3::zeros(), Vector3::new(2.0, 0.0, 0.0), Vector3::new(0.0, 5.0, 0.0)]);
        let b = bank(&[&[1.0, 0.0], &[0.0, 4.0], &[9.0, 9.0]]);
        let q = Vector3::new(0.3, 0.1, 0.0);
        assert_eq!(aggregate_feature(&q, &index, &b, 1, IdwMode::Inverse).unwrap(), vec![1.0, 0.0]);
        let mid = Vector3::new(1.0, 0.0, 0.0);
        let f = aggregate_feature(&mid, &index, &b, 2, IdwMode::Inverse).unwrap();
        assert!((f[0] - 0.5).abs() < 1e-12 && (f[1] - 2.0).abs() < 1e-12);
        let hit = aggregate_feature(&Vector3::new(2.0, 0.0, 0.0), &index, &b, 3, IdwMode::Inverse).unwrap();
        assert_eq!(hit, vec![0.0, 4.0]);
        assert!(matches!(
            aggregate_feature(&q, &index, &b, 4, IdwMode::Inverse),
            Err(Error::KTooLarge { .. })
        ));
        for mode in [IdwMode::Inverse, IdwMode::RawDistance] {
            let w = idw_weights(&index, &Vector3::new(0.7, 0.9, -0.2), 3, mode).unwrap();
            assert!(w.iter().all(|&(_, v)| v >= 0.0));
            assert!((w.iter().map(|(_, v)| v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregation_is_continuous_away_from_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vector3<f64>> = (0..50).map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let index = KdIndex::new(pts);
        let b = FeatureBank {
            dim: 3,
            values: (0..150).map(|_| rng.gen()).collect(),
        };
        let q = Vector3::new(0.41, 0.52, 0.33);
        let a = aggregate_feature(&q, &index, &b, 4, IdwMode::Inverse).unwrap();
        let c = aggregate_feature(&(q + Vector3::repeat(1e-9)), &index, &b, 4, IdwMode::Inverse).unwrap();
        assert!(a.iter().zip(&c).all(|(x, y)| (x - y).abs() < 1e-5));
    }

    #[test]
    fn color_gradient_matches_finite_differences() {
        let m = model(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 16;
        let b = FeatureBank {
            dim: 4,
            values: (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let rows: MixRows = (0..10)
            .map(|_| {
                let js = sample(&mut rng, n, 3).into_vec();
                let ws = [0.5, 0.3, 0.2];
                js.into_iter().zip(ws).collect()
            })
            .collect();
        let rows = Rc::new(rows);
        let targets: Vec<[f64; 3]> = (0..10).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let (_, grad) = color_objective(&m, &b, rows.clone(), &targets).unwrap();
        let h = 1e-6;
        for i in 0..b.values.len() {
            let mut p = b.clone();
            p.values[i] += h;
            let mut q = b.clone();
            q.values[i] -= h;
            let fd = (color_objective(&m, &p, rows.clone(), &targets).unwrap().0
                - color_objective(&m, &q, rows.clone(), &targets).unwrap().0)
                / (2.0 * h);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(err < 1e-4 || (fd - grad[i]).abs() < 1e-10, "{i}: {fd} vs {}", grad[i]);
        }
    }

    fn gray_frame(n: usize) -> ColorFrame {
        let scan = sample_surface(&icosphere(1.0, 3), 600, 9)
            .unwrap()
            .with_colors(vec![[0.5; 3]; 600])
            .unwrap();
        let sem = sample_surface(&icosphere(1.0, 3), n, 10).unwrap();
        ColorFrame {
            semantic_positions: sem.positions_f64(),
            scan,
        }
    }

    fn palette_model() -> AppearanceModel {
        let colors: Vec<[f64; 3]> = (0..64)
            .map(|i| [(i % 4) as f64 / 3.0, ((i / 4) % 4) as f64 / 3.0, (i / 16) as f64 / 3.0])
            .collect();
        let cfg = PretrainConfig {
            spec: tiny_spec(),
            epochs: 800,
            lr: 5e-3,
            ..PretrainConfig::default()
        };
        pretrain_autoencoder(&colors, &cfg).unwrap().0
    }

    #[test]
    fn gray_scan_fits_and_decoder_stays_frozen() {
        let m = palette_model();
        let digest = m.decoder_digest();
        let frame = gray_frame(200);
        let cfg = FeatureConfig {
            epochs: 100,
            lr: 2e-2,
            samples_per_frame: 300,
            ..FeatureConfig::default()
        };
        let (b, rep) = train_features(&m, std::slice::from_ref(&frame), &cfg).unwrap();
        assert_eq!(m.decoder_digest(), digest);
        assert!(rep.epoch_loss.last().unwrap() < &rep.initial_loss);
        let index = KdIndex::new(frame.semantic_positions.clone());
        for p in frame.scan.positions() {
            let f = aggregate_feature(&p.cast(), &index, &b, cfg.k, cfg.idw).unwrap();
            let c = m.decode_features(&f).unwrap()[0];
            assert!(c.iter().all(|v| (v - 0.5).abs() < 0.02), "{c:?}");
        }
        let no_color = ColorFrame {
            semantic_positions: frame.semantic_positions.clone(),
            scan: sample_surface(&icosphere(1.0, 2), 50, 1).unwrap(),
        };
        assert!(matches!(train_features(&m, &[no_color], &cfg), Err(Error::MissingColors)));
    }

    #[test]
    fn encoder_init_beats_random() {
        let m = palette_model();
        let sphere = icosphere(1.0, 3);
        let scan = sample_surface(&sphere, 800, 1).unwrap();
        let tint: Vec<[f32; 3]> = scan
            .positions()
            .iter()
            .map(|p| if p.z > 0.0 { [0.9, 0.2, 0.1] } else { [0.1, 0.3, 0.8] })
            .collect();
        let frame = ColorFrame {
            semantic_positions: sample_surface(&sphere, 300, 2).unwrap().positions_f64(),
            scan: scan.with_colors(tint).unwrap(),
        };
        let init = initial_features(&m, &frame).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let random = FeatureBank {
            dim: init.dim,
            values: (0..init.values.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let a = evaluate_color_loss(&m, &init, std::slice::from_ref(&frame), DEFAULT_K, IdwMode::Inverse).unwrap();
        let b = evaluate_color_loss(&m, &random, &[frame], DEFAULT_K, IdwMode::Inverse).unwrap();
        assert!(a < b, "{a} vs {b}");
    }

    #[test]
    fn mesh_coloring() {
        let m = model(5);
        let sphere = icosphere(1.0, 2);
        let pts: Vec<Vector3<f64>> = sphere.vertices.iter().map(|v| v.cast()).collect();
        let b = FeatureBank {
            dim: 4,
            values: (0..pts.len() * 4).map(|i| (i % 7) as f64 * 0.3 - 1.0).collect(),
        };
        let colored = color_mesh(&sphere, &pts, &b, &m, 8, IdwMode::Inverse).unwrap();
        let expect = m.decode_features(&b.values).unwrap();
        for (c, e) in colored.vertex_colors.as_ref().unwrap().iter().zip(&expect) {
            assert!((0..3).all(|i| (c[i] as f64 - e[i]).abs() < 1e-6));
        }
        let same = FeatureBank {
            dim: 4,
            values: [0.1, -0.2, 0.3, 0.4].repeat(pts.len()),
        };
        let colored = color_mesh(&icosphere(1.1, 2), &pts, &same, &m, 8, IdwMode::Inverse).unwrap();
        let cs = colored.vertex_colors.unwrap();
        assert!(cs.iter().all(|c| c == &cs[0]));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = model(8);
        let mut ck = Checkpoint::new();
        m.write_checkpoint(&mut ck, "app").unwrap();
        let back = AppearanceModel::read_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), "app").unwrap();
        assert_eq!(back, m);
    }
}
