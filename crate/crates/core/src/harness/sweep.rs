use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Scheme};
use super::metrics::{compute_bpp, delay_model, Bpp};
use super::Models;
use crate::channel::ChannelConfig;
use crate::codec::BlockStream;
use crate::dataset::LabeledExample;
use crate::nn::Tensor;
use crate::pipeline::{
    baseline_classify, baseline_encode, channel_for_image, impair_blockstream, impair_frame, semantic_classify,
    semantic_encode,
};
use crate::rng::derive;
use crate::semantic::{encode_frame, random_select, select_maps, CompressionRatio};
use crate::{Error, Result};

pub const CSV_HEADER: &str = "scheme,cr_or_quality,snr_db,fec,seed,accuracy,bpp_source,bpp_air,\
process_delay_ms,transmission_delay_ms,total_delay_ms";

/// One sweep coordinate besides SNR and seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Point {
    Cr(CompressionRatio),
    Quality(u8),
}

impl Point {
    pub fn value(self) -> f64 {
        match self {
            Point::Cr(cr) => cr.value(),
            Point::Quality(q) => q as f64,
        }
    }
}

/// Channel seed of a report row. Depends on the master seed and the seed
/// value only, so every scheme and sweep point sees the same noise draws.
pub fn row_seed(master_seed: u64, seed: u64) -> u64 {
    derive(&[master_seed, seed, 0x5EED])
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub predictions: Vec<usize>,
    pub accuracy: f64,
    /// Mean over the evaluated images.
    pub bpp: Bpp,
    /// Mean raw channel bit error rate.
    pub ber: f64,
}

type BaselineCache = Arc<Vec<(BlockStream, usize)>>;

/// Caches the per-image work that does not depend on the channel: cut-point
/// features of the semantic model and clean baseline streams.
pub struct Evaluator<'a> {
    models: &'a Models,
    test: &'a [LabeledExample],
    features: Vec<Tensor>,
    baseline: Mutex<HashMap<u8, BaselineCache>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(models: &'a Models, test: &'a [LabeledExample]) -> Result<Self> {
        if test.is_empty() {
            return Err(Error::InvalidArgument("empty test set".into()));
        }
        let features = test
            .par_iter()
            .map(|ex| models.semantic.extract(&ex.image))
            .collect::<Result<_>>()?;
        Ok(Evaluator {
            models,
            test,
            features,
            baseline: Mutex::new(HashMap::new()),
        })
    }

    fn baseline_streams(&self, quality: u8) -> Result<BaselineCache> {
        if let Some(c) = self.baseline.lock().unwrap().get(&quality) {
            return Ok(c.clone());
        }
        let built: Vec<(BlockStream, usize)> = self
            .test
            .par_iter()
            .map(|ex| {
                let s = baseline_encode(&ex.image, quality)?;
                let p = baseline_classify(&self.models.baseline, &s)?;
                Ok((s, p))
            })
            .collect::<Result<_>>()?;
        let built = Arc::new(built);
        self.baseline.lock().unwrap().insert(quality, built.clone());
        Ok(built)
    }

    /// Runs every test image through `scheme` at `point` over `channel`;
    /// image `i` uses `channel_for_image(channel, i)`.
    pub fn evaluate(&self, scheme: Scheme, point: Point, channel: &ChannelConfig) -> Result<PointResult> {
        let k = self.models.semantic.spec().cut_maps();
        let streams = match point {
            Point::Quality(q) => Some(self.baseline_streams(q)?),
            Point::Cr(_) => None,
        };
        let per_image: Vec<(usize, usize, f64)> = (0..self.test.len())
            .into_par_iter()
            .map(|i| -> Result<(usize, usize, f64)> {
                let ch = channel_for_image(channel, i);
                match (scheme, point) {
                    (Scheme::ScAit | Scheme::ScRandom, Point::Cr(cr)) => {
                        let indices = if scheme == Scheme::ScAit {
                            select_maps(&self.models.kb.ranking(), cr, k)
                        } else {
                            random_select(k, cr, derive(&[ch.seed, 0x4A4D]))
                        };
                        let frame = encode_frame(&self.features[i], &indices)?;
                        let (rx, ber) = impair_frame(&frame, &ch);
                        Ok((semantic_classify(&self.models.semantic, &rx)?, frame.byte_len(), ber))
                    }
                    (Scheme::BaselineCodec, Point::Quality(_)) => {
                        let (stream, clean_pred) = &streams.as_ref().unwrap()[i];
                        let (rx, ber) = impair_blockstream(stream, &ch);
                        let pred = if &rx == stream {
                            *clean_pred
                        } else {
                            baseline_classify(&self.models.baseline, &rx)?
                        };
                        Ok((pred, stream.byte_len(), ber))
                    }
                    _ => Err(Error::InvalidArgument(format!("{scheme} cannot run at {point:?}"))),
                }
            })
            .collect::<Result<_>>()?;

        let n = self.test.len() as f64;
        let (w, h) = (self.test[0].image.width(), self.test[0].image.height());
        let correct = per_image
            .iter()
            .zip(self.test)
            .filter(|((p, _, _), ex)| *p == ex.label)
            .count();
        let bytes: usize = per_image.iter().map(|r| r.1).sum();
        let total = compute_bpp(bytes, w, h, channel.fec);
        Ok(PointResult {
            predictions: per_image.iter().map(|r| r.0).collect(),
            accuracy: correct as f64 / n,
            bpp: Bpp {
                source: total.source / n,
                air: total.air / n,
            },
            ber: per_image.iter().map(|r| r.2).sum::<f64>() / n,
        })
    }
}

/// One-shot form of [`Evaluator::evaluate`].
pub fn evaluate_point(
    models: &Models,
    test: &[LabeledExample],
    scheme: Scheme,
    point: Point,
    channel: &ChannelConfig,
) -> Result<PointResult> {
    Evaluator::new(models, test)?.evaluate(scheme, point, channel)
}

/// Mean wall-clock milliseconds per image of encode, decode and inference
/// (channel simulation excluded), over up to `limit` images.
pub fn measure_process_ms(
    models: &Models,
    test: &[LabeledExample],
    scheme: Scheme,
    point: Point,
    limit: usize,
) -> Result<f64> {
    let k = models.semantic.spec().cut_maps();
    let images: Vec<_> = test.iter().take(limit.max(1)).collect();
    let ranking = models.kb.ranking();
    let start = Instant::now();
    for (i, ex) in images.iter().enumerate() {
        let pred = match (scheme, point) {
            (Scheme::ScAit | Scheme::ScRandom, Point::Cr(cr)) => {
                let indices = if scheme == Scheme::ScAit {
                    select_maps(&ranking, cr, k)
                } else {
                    random_select(k, cr, i as u64)
                };
                let frame = semantic_encode(&models.semantic, &ex.image, &indices)?;
                semantic_classify(&models.semantic, &frame)?
            }
            (Scheme::BaselineCodec, Point::Quality(q)) => {
                let stream = baseline_encode(&ex.image, q)?;
                baseline_classify(&models.baseline, &stream)?
            }
            _ => return Err(Error::InvalidArgument(format!("{scheme} cannot run at {point:?}"))),
        };
        std::hint::black_box(pred);
    }
    let ms = start.elapsed().as_secs_f64() * 1e3 / images.len() as f64;
    // clock granularity can round a tiny run down to zero
    Ok(ms.max(f64::MIN_POSITIVE))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scheme: String,
    pub cr_or_quality: f64,
    pub snr_db: f64,
    pub fec: String,
    pub seed: u64,
    pub accuracy: f64,
    pub bpp_source: f64,
    pub bpp_air: f64,
    pub process_delay_ms: f64,
    pub transmission_delay_ms: f64,
    pub total_delay_ms: f64,
}

impl ReportRow {
    fn sort_key(&self) -> (usize, f64, f64, String, u64) {
        let rank = Scheme::ALL.iter().position(|s| s.name() == self.scheme).unwrap_or(usize::MAX);
        (rank, self.cr_or_quality, self.snr_db, self.fec.clone(), self.seed)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    /// Canonical order: scheme, point, SNR, FEC, seed.
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            let (ka, kb) = (a.sort_key(), b.sort_key());
            ka.0.cmp(&kb.0)
                .then(ka.1.total_cmp(&kb.1))
                .then(ka.2.total_cmp(&kb.2))
                .then(ka.3.cmp(&kb.3))
                .then(ka.4.cmp(&kb.4))
        });
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER.split(','))?;
        }
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)
            .map_err(|e| Error::Setup(format!("cannot read report {}: {e}", path.display())))?;
        let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
        if header != CSV_HEADER {
            return Err(Error::Setup(format!("{} is not a sweep report (header {header:?})", path.display())));
        }
        let rows = r.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?;
        Ok(Report { rows })
    }

    /// Rows of one scheme.
    pub fn scheme_rows<'a>(&'a self, scheme: Scheme) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.scheme == scheme.name())
    }
}

/// Every (scheme, point, SNR, seed) of `config` over the test split.
pub fn run_sweep(config: &ExperimentConfig, models: &Models, test: &[LabeledExample]) -> Result<Report> {
    config.validate()?;
    let eval = Evaluator::new(models, test)?;
    let mut points: Vec<(Scheme, Point)> = Vec::new();
    for &scheme in &config.schemes {
        if scheme.is_semantic() {
            for &cr in &config.cr {
                points.push((scheme, Point::Cr(CompressionRatio::new(cr)?)));
            }
        } else {
            for &q in &config.quality {
                points.push((scheme, Point::Quality(q)));
            }
        }
    }
    points.dedup();

    // measured serially so parallel rows do not inflate each other's timing
    let mut process_ms = Vec::with_capacity(points.len());
    for &(scheme, point) in &points {
        process_ms.push(measure_process_ms(models, test, scheme, point, 64)?);
    }

    let (w, h) = (test[0].image.width(), test[0].image.height());
    let jobs: Vec<(usize, f64, u64)> = (0..points.len())
        .flat_map(|p| {
            config
                .snr_db
                .iter()
                .flat_map(move |&snr| config.seeds.iter().map(move |&seed| (p, snr, seed)))
        })
        .collect();
    let rows = jobs
        .into_par_iter()
        .map(|(p, snr, seed)| -> Result<ReportRow> {
            let (scheme, point) = points[p];
            let channel = ChannelConfig {
                snr_db: snr,
                fec: config.fec,
                seed: row_seed(config.master_seed, seed),
            };
            let res = eval.evaluate(scheme, point, &channel)?;
            let delay = delay_model(process_ms[p], res.bpp.air * (w * h) as f64, config.link_rate_bps);
            Ok(ReportRow {
                scheme: scheme.name().to_string(),
                cr_or_quality: point.value(),
                snr_db: snr,
                fec: config.fec.name().to_string(),
                seed,
                accuracy: res.accuracy,
                bpp_source: res.bpp.source,
                bpp_air: res.bpp.air,
                process_delay_ms: delay.process_ms,
                transmission_delay_ms: delay.transmission_ms,
                total_delay_ms: delay.total_ms,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = Report { rows };
    report.sort();
    Ok(report)
}
