//! The knowledge base: how much each cut-point feature map matters to each
//! class, measured by the gradient of the class logit with respect to the
//! map, and the task-level ranking derived from it.
//!
//! Text format (LF line endings):
//!
//! ```text
//! SCKB 1 <K> <C>
//! fingerprint <64 hex digits>
//! <C weights>      x K lines, "%.9e"
//! <K scores>
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::DatasetSplit;
use crate::nn::{fingerprint, predict, Model};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    k: usize,
    c: usize,
    /// `k x c`, row-major: `weights[m * c + class]`.
    weights: Vec<f64>,
    scores: Vec<f64>,
    fingerprint: String,
}

/// Map indices sorted by score, highest first, ties by ascending index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapRanking {
    order: Vec<usize>,
}

impl MapRanking {
    pub fn from_scores(scores: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        MapRanking { order }
    }

    pub fn from_order(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!("{order:?} is not a permutation")));
            }
        }
        Ok(MapRanking { order })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

fn scores_from(weights: &[f64], c: usize) -> Vec<f64> {
    weights
        .chunks_exact(c)
        .map(|row| row.iter().map(|w| w.abs()).sum::<f64>() / c as f64)
        .collect()
}

impl KnowledgeBase {
    /// Scores are recomputed from the weights.
    pub fn from_weights(k: usize, c: usize, weights: Vec<f64>, fingerprint: String) -> Result<Self> {
        if k == 0 || c == 0 || weights.len() != k * c {
            return Err(Error::Dimension(format!("{} weights for a {k}x{c} knowledge base", weights.len())));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("knowledge base weights"));
        }
        let scores = scores_from(&weights, c);
        Ok(KnowledgeBase { k, c, weights, scores, fingerprint })
    }

    pub fn maps(&self) -> usize {
        self.k
    }

    pub fn classes(&self) -> usize {
        self.c
    }

    pub fn weight(&self, map: usize, class: usize) -> f64 {
        self.weights[map * self.c + class]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn ranking(&self) -> MapRanking {
        rank_maps(self)
    }

    /// A message when this KB was not built from `model`.
    pub fn fingerprint_warning(&self, model: &Model) -> Option<String> {
        let fp = fingerprint(model);
        (fp != self.fingerprint).then(|| {
            format!(
                "knowledge base fingerprint {} does not match checkpoint {}",
                self.fingerprint, fp
            )
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("SCKB 1 {} {}\nfingerprint {}\n", self.k, self.c, self.fingerprint);
        for row in self.weights.chunks_exact(self.c) {
            s.push_str(&row.iter().map(|&v| format_e9(v)).collect::<Vec<_>>().join(" "));
            s.push('\n');
        }
        s.push_str(&self.scores.iter().map(|&v| format_e9(v)).collect::<Vec<_>>().join(" "));
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::KbFormat { line, msg };
        let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines
                .next()
                .filter(|(_, l)| !l.is_empty())
                .ok_or_else(|| what.to_string())
        };
        let (n, header) = next("header").map_err(|m| err(1, format!("missing {m}")))?;
        let h: Vec<&str> = header.split(' ').collect();
        if h.len() != 4 || h[0] != "SCKB" || h[1] != "1" {
            return Err(err(n, format!("bad header {header:?}")));
        }
        let parse_dim = |s: &str| s.parse::<usize>().ok().filter(|&v| v > 0);
        let (k, c) = match (parse_dim(h[2]), parse_dim(h[3])) {
            (Some(k), Some(c)) => (k, c),
            _ => return Err(err(n, format!("bad dimensions in {header:?}"))),
        };
        let (n, fp_line) = next("fingerprint").map_err(|m| err(2, format!("missing {m}")))?;
        let fingerprint = fp_line
            .strip_prefix("fingerprint ")
            .filter(|f| f.len() == 64 && f.bytes().all(|b| b.is_ascii_hexdigit()))
            .ok_or_else(|| err(n, "expected `fingerprint <64 hex digits>`".into()))?
            .to_string();

        let parse_row = |n: usize, line: &str, expect: usize| -> Result<Vec<f64>> {
            let vals: Vec<&str> = line.split(' ').collect();
            if vals.len() != expect {
                return Err(err(n, format!("expected {expect} values, found {}", vals.len())));
            }
            vals.iter()
                .map(|v| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| err(n, format!("non-numeric field {v:?}")))
                })
                .collect()
        };
        let mut weights = Vec::with_capacity(k * c);
        for row in 0..k {
            let (n, line) = next("row").map_err(|_| err(3 + row, format!("missing weight row {}", row + 1)))?;
            weights.extend(parse_row(n, line, c)?);
        }
        let (n, line) = next("scores").map_err(|_| err(3 + k, "missing score line".into()))?;
        let scores = parse_row(n, line, k)?;
        if scores.iter().any(|&s| s < 0.0) {
            return Err(err(n, "negative score".into()));
        }
        if let Some((n, l)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(err(n, format!("unexpected trailing content {l:?}")));
        }
        Ok(KnowledgeBase { k, c, weights, scores, fingerprint })
    }
}

/// C-style `%.9e`: ten significant digits, signed two-digit-minimum exponent.
pub fn format_e9(x: f64) -> String {
    let s = format!("{x:.9e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let (sign, digits) = match exp.strip_prefix('-') {
        Some(d) => ('-', d),
        None => ('+', exp),
    };
    format!("{mantissa}e{sign}{digits:0>2}")
}

/// Per-(map, class) importance: the spatial mean of `d logit_c / d A_k`,
/// averaged over the correctly classified training images of class `c`.
pub fn build_kb(model: &Model, split: &DatasetSplit) -> Result<KnowledgeBase> {
    let spec = model.spec();
    let (k, c) = (spec.cut_maps(), spec.classes);
    if split.train.is_empty() {
        return Err(Error::KbBuild("empty training split".into()));
    }
    let per_image: Vec<Option<(usize, Vec<f64>)>> = split
        .train
        .par_iter()
        .map(|ex| -> Result<Option<(usize, Vec<f64>)>> {
            let (features, logits) = model.forward(&ex.image)?;
            if predict(logits.data())? != ex.label {
                return Ok(None);
            }
            let g = model.grad_logit_wrt_features(&features, ex.label)?;
            let plane = g.len() / k;
            let means = (0..k).map(|m| g.outer(m).iter().sum::<f64>() / plane as f64).collect();
            Ok(Some((ex.label, means)))
        })
        .collect::<Result<_>>()?;

    let mut sums = vec![0.0; k * c];
    let mut counts = vec![0usize; c];
    for (label, means) in per_image.into_iter().flatten() {
        counts[label] += 1;
        for (m, v) in means.into_iter().enumerate() {
            sums[m * c + label] += v;
        }
    }
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        let name = split.class_names.get(empty).cloned().unwrap_or_else(|| empty.to_string());
        return Err(Error::KbBuild(format!("class {name} has no correctly classified training image")));
    }
    for (i, s) in sums.iter_mut().enumerate() {
        *s /= counts[i % c] as f64;
    }
    KnowledgeBase::from_weights(k, c, sums, fingerprint(model))
}

pub fn rank_maps(kb: &KnowledgeBase) -> MapRanking {
    MapRanking::from_scores(kb.scores())
}

pub fn save_kb(kb: &KnowledgeBase, path: &Path) -> Result<()> {
    fs::write(path, kb.to_text())?;
    Ok(())
}

pub fn load_kb(path: &Path) -> Result<KnowledgeBase> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Setup(format!("cannot read knowledge base {}: {e}", path.display())))?;
    KnowledgeBase::from_text(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncReport {
    AlreadyIdentical,
    Updated,
}

/// Replaces `dest` with `bytes` via write-to-temp and rename. Skips the write
/// when the contents already match.
pub fn sync_bytes(bytes: &[u8], dest: &Path) -> Result<SyncReport> {
    if fs::read(dest).is_ok_and(|cur| cur == bytes) {
        return Ok(SyncReport::AlreadyIdentical);
    }
    let dir = dest.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = dest
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", dest.display())))?;
    let tmp = dir.join(format!(".{}.sync-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, dest)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(SyncReport::Updated)
}

/// Brings the KB file at `dest` in line with `source`.
pub fn sync_kb(source: &KnowledgeBase, dest: &Path) -> Result<SyncReport> {
    sync_bytes(source.to_text().as_bytes(), dest)
}
