//! Probe/gallery matching, CMC curves and the ablation grid runner.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split, synth_generate, SequenceSample, SynthSpec};
use crate::error::{Error, Result};
use crate::fusion::FusionKind;
use crate::network::{Downsampler, Network, NetworkConfig, StreamSpec, TemporalPool};
use crate::tensor::Tensor;
use crate::training::{train, TrainConfig};

/// Ranks reported in tables.
pub const REPORT_RANKS: [usize; 4] = [1, 5, 10, 20];

/// Cumulative match rates; `rates[r - 1]` is the fraction of probes whose
/// true match is within the top `r` gallery entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmcCurve {
    pub rates: Vec<f64>,
}

impl CmcCurve {
    /// Rate at 1-based `rank`; ranks past the gallery size give 1.0.
    pub fn at(&self, rank: usize) -> f64 {
        assert!(rank >= 1, "ranks start at 1");
        self.rates.get(rank - 1).copied().unwrap_or(1.0)
    }

    pub fn rank1(&self) -> f64 {
        self.at(1)
    }

    pub fn gallery_size(&self) -> usize {
        self.rates.len()
    }
}

/// 1-based rank of the true match: entries with a smaller distance, or an
/// equal distance and a smaller gallery index, come first.
pub fn match_rank(row: &[f64], truth: usize) -> usize {
    let d = row[truth];
    1 + row
        .iter()
        .enumerate()
        .filter(|&(g, &x)| x < d || (x == d && g < truth))
        .count()
}

/// CMC of a `[P, G]` distance matrix where probe `p` matches gallery
/// entry `truth[p]`.
pub fn compute_cmc(dist: &Tensor, truth: &[usize]) -> Result<CmcCurve> {
    if dist.ndim() != 2 {
        return Err(Error::shape("compute_cmc", format!("expected [P, G], got {:?}", dist.shape())));
    }
    let (p, g) = (dist.shape()[0], dist.shape()[1]);
    if p == 0 || g == 0 {
        return Err(Error::InvalidArgument("distance matrix is empty".into()));
    }
    if truth.len() != p {
        return Err(Error::InvalidArgument(format!("{} truth indices for {p} probes", truth.len())));
    }
    if let Some(&t) = truth.iter().find(|&&t| t >= g) {
        return Err(Error::InvalidArgument(format!("truth index {t} outside a gallery of {g}")));
    }
    if dist.data().iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("distance matrix contains NaN".into()));
    }
    let mut counts = vec![0usize; g];
    for (row, &t) in dist.data().chunks_exact(g).zip(truth) {
        counts[match_rank(row, t) - 1] += 1;
    }
    let mut acc = 0;
    let rates = counts
        .into_iter()
        .map(|c| {
            acc += c;
            acc as f64 / p as f64
        })
        .collect();
    Ok(CmcCurve { rates })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Probe/gallery distance matrix and ground truth: the lowest camera id
/// gives the probes, the next one the gallery (one sequence per identity
/// each). Every sequence is truncated to its first `seq_len` frames.
pub fn distance_matrix(net: &Network, samples: &[SequenceSample], seq_len: usize) -> Result<(Tensor, Vec<usize>)> {
    let mut cams: Vec<usize> = samples.iter().map(|s| s.camera_id).collect();
    cams.sort_unstable();
    cams.dedup();
    if cams.len() < 2 {
        return Err(Error::Dataset("evaluation needs sequences from two cameras".into()));
    }
    let pick = |cam: usize| -> Vec<&SequenceSample> {
        let mut v: Vec<&SequenceSample> = samples.iter().filter(|s| s.camera_id == cam).collect();
        v.sort_by_key(|s| s.person_id);
        v
    };
    let (probes, gallery) = (pick(cams[0]), pick(cams[1]));
    let truth = probes
        .iter()
        .map(|p| {
            gallery
                .iter()
                .position(|g| g.person_id == p.person_id)
                .ok_or_else(|| Error::Dataset(format!("person {} has no gallery sequence", p.person_id)))
        })
        .collect::<Result<Vec<_>>>()?;

    let features = |set: &[&SequenceSample]| -> Result<Vec<Tensor>> {
        set.par_iter()
            .map(|s| net.sequence_features(s.window(0, seq_len)))
            .collect()
    };
    let (pf, gf) = (features(&probes)?, features(&gallery)?);
    let (np, ng) = (probes.len(), gallery.len());
    let pairs: Vec<(usize, usize)> = (0..np).flat_map(|i| (0..ng).map(move |j| (i, j))).collect();
    let dist = match net.config().temporal_pool {
        TemporalPool::Mean => {
            let pooled = |f: &[Tensor]| -> Result<Vec<Tensor>> {
                f.iter().map(|t| net.pool_features(t, t).map(|(a, _)| a)).collect()
            };
            let (pv, gv) = (pooled(&pf)?, pooled(&gf)?);
            pairs.iter().map(|&(i, j)| euclidean(pv[i].data(), gv[j].data())).collect()
        }
        TemporalPool::Attentive => pairs
            .par_iter()
            .map(|&(i, j)| {
                let (a, b) = net.pool_features(&pf[i], &gf[j])?;
                Ok(euclidean(a.data(), b.data()))
            })
            .collect::<Result<Vec<f64>>>()?,
    };
    Ok((Tensor::new([np, ng], dist)?, truth))
}

/// CMC of `net` on `samples` using the first `seq_len` frames of each
/// sequence.
pub fn evaluate(net: &Network, samples: &[SequenceSample], seq_len: usize) -> Result<CmcCurve> {
    let (dist, truth) = distance_matrix(net, samples, seq_len)?;
    compute_cmc(&dist, &truth)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    StreamPairs,
    StreamCount,
    FusionMethod,
    FusionLayer,
}

impl AblationKind {
    pub const ALL: [AblationKind; 4] = [
        Self::StreamPairs,
        Self::StreamCount,
        Self::FusionMethod,
        Self::FusionLayer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::StreamPairs => "stream_pairs",
            Self::StreamCount => "stream_count",
            Self::FusionMethod => "fusion_method",
            Self::FusionLayer => "fusion_layer",
        }
    }
}

impl std::str::FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub label: String,
    pub network: NetworkConfig,
}

fn with_streams(base: &NetworkConfig, streams: &[Downsampler]) -> AblationCell {
    let mut network = base.clone();
    network.streams = streams.iter().map(|&d| StreamSpec::new(d)).collect();
    AblationCell {
        label: network.stream_label(),
        network,
    }
}

/// Configurations of one ablation, in table order. Everything not varied
/// is taken from `base`.
pub fn ablation_grid(kind: AblationKind, base: &NetworkConfig) -> Vec<AblationCell> {
    use Downsampler::{AvgPool as A, DilatedMax as D, MaxPool as M, StridedConv as S};
    match kind {
        AblationKind::StreamPairs => [
            [M, M],
            [A, A],
            [S, S],
            [D, D],
            [M, A],
            [M, S],
            [M, D],
            [A, S],
            [A, D],
            [S, D],
        ]
        .iter()
        .map(|pair| with_streams(base, pair))
        .collect(),
        AblationKind::StreamCount => [&[M][..], &[M, A], &[M, A, S], &[M, A, S, D]]
            .iter()
            .map(|s| {
                let mut cell = with_streams(base, s);
                cell.label = format!("{} stream{}", s.len(), if s.len() == 1 { "" } else { "s" });
                cell
            })
            .collect(),
        AblationKind::FusionMethod => FusionKind::ALL
            .iter()
            .map(|&k| {
                let mut network = base.clone();
                network.fusion_kind = k;
                AblationCell {
                    label: k.to_string(),
                    network,
                }
            })
            .collect(),
        AblationKind::FusionLayer => (1..=4)
            .map(|layer| {
                let mut network = base.clone();
                network.fusion_layer = layer;
                AblationCell {
                    label: format!("Conv{layer}"),
                    network,
                }
            })
            .collect(),
    }
}

/// Data, schedule and seeds shared by every cell of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSetup {
    pub training: TrainConfig,
    pub num_ids: usize,
    pub frames_per_seq: usize,
    /// Seed of the synthetic dataset; fixed across cells and seeds.
    pub data_seed: u64,
    /// Each seed picks the split, the initialization and the pair order.
    pub seeds: Vec<u64>,
}

impl ExperimentSetup {
    pub fn desk(seeds: usize) -> Self {
        Self {
            training: TrainConfig::desk(),
            num_ids: 20,
            frames_per_seq: 16,
            data_seed: 0,
            seeds: (0..seeds as u64).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub curve: Option<CmcCurve>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub seeds: Vec<SeedResult>,
}

impl ReportRow {
    /// Mean rate at each of [`REPORT_RANKS`] over the seeds that
    /// finished; `None` when none did.
    pub fn mean(&self) -> Option<[f64; 4]> {
        let curves: Vec<&CmcCurve> = self.seeds.iter().filter_map(|s| s.curve.as_ref()).collect();
        if curves.is_empty() {
            return None;
        }
        let n = curves.len() as f64;
        Some(REPORT_RANKS.map(|r| curves.iter().map(|c| c.at(r)).sum::<f64>() / n))
    }

    pub fn failures(&self) -> usize {
        self.seeds.iter().filter(|s| s.error.is_some()).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: Option<AblationKind>,
    pub base: NetworkConfig,
    pub setup: ExperimentSetup,
    pub rows: Vec<ReportRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

impl ExperimentReport {
    /// One row per configuration: means over seeds and the failure count.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("configuration,seeds,failed,rank1,rank5,rank10,rank20\n");
        for row in &self.rows {
            let mean = row.mean();
            let _ = write!(out, "{},{},{}", csv_field(&row.label), row.seeds.len(), row.failures());
            for k in 0..REPORT_RANKS.len() {
                let _ = write!(out, ",{}", fmt_opt(mean.map(|m| m[k])));
            }
            out.push('\n');
        }
        out
    }

    /// One row per (configuration, seed).
    pub fn per_seed_csv(&self) -> String {
        let mut out = String::from("configuration,seed,rank1,rank5,rank10,rank20,error\n");
        for row in &self.rows {
            for s in &row.seeds {
                let _ = write!(out, "{},{}", csv_field(&row.label), s.seed);
                for &r in &REPORT_RANKS {
                    let _ = write!(out, ",{}", fmt_opt(s.curve.as_ref().map(|c| c.at(r))));
                }
                let _ = writeln!(out, ",{}", csv_field(s.error.as_deref().unwrap_or("")));
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Bar chart of mean rank-1 per configuration.
    pub fn to_svg(&self) -> String {
        let (bar, gap, height, left, top) = (48.0, 16.0, 240.0, 48.0, 24.0);
        let width = left + self.rows.len() as f64 * (bar + gap) + gap;
        let mut out = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"10\">\n",
            height + top + 90.0
        );
        let base = top + height;
        let _ = writeln!(out, "<line x1=\"{left}\" y1=\"{base}\" x2=\"{width}\" y2=\"{base}\" stroke=\"black\"/>");
        for tick in 0..=4 {
            let v = tick as f64 / 4.0;
            let y = base - v * height;
            let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v}</text>", left - 4.0, y + 3.0);
        }
        for (k, row) in self.rows.iter().enumerate() {
            let x = left + gap + k as f64 * (bar + gap);
            let r1 = row.mean().map_or(0.0, |m| m[0]);
            let h = r1 * height;
            let _ = writeln!(
                out,
                "<rect x=\"{x}\" y=\"{}\" width=\"{bar}\" height=\"{h}\" fill=\"#4a78b0\"/>",
                base - h
            );
            let cx = x + bar / 2.0;
            let _ = writeln!(
                out,
                "<text x=\"{cx}\" y=\"{}\" text-anchor=\"end\" transform=\"rotate(-45 {cx} {})\">{}</text>",
                base + 12.0,
                base + 12.0,
                xml_escape(&row.label)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Worker pool for grid cells, capped by `TSCN_THREADS` when set.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("TSCN_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("TSCN_THREADS must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

fn run_one(cell: &AblationCell, samples: &[SequenceSample], setup: &ExperimentSetup, seed: u64) -> Result<CmcCurve> {
    let data = split(samples, seed)?;
    let net = Network::build(cell.network.clone(), seed)?;
    let training = TrainConfig {
        seed,
        ..setup.training.clone()
    };
    let outcome = train(net, &data.train, &training)?;
    evaluate(&outcome.network, &data.test, training.test_seq_len)
}

/// Trains and evaluates every cell for every seed. A cell that fails keeps
/// its error in the report and the rest of the grid still runs.
pub fn run_cells(cells: &[AblationCell], setup: &ExperimentSetup) -> Result<Vec<ReportRow>> {
    let extent = cells.first().map_or((16, 16), |c| c.network.input_extent);
    let samples = synth_generate(&SynthSpec::new(setup.num_ids, setup.frames_per_seq, extent, setup.data_seed))?;
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| setup.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let results: Vec<SeedResult> = worker_pool()?.install(|| {
        jobs.par_iter()
            .map(|&(c, seed)| {
                let cell = &cells[c];
                let regenerated;
                let data = if cell.network.input_extent == extent {
                    &samples
                } else {
                    regenerated = synth_generate(&SynthSpec::new(
                        setup.num_ids,
                        setup.frames_per_seq,
                        cell.network.input_extent,
                        setup.data_seed,
                    ));
                    match &regenerated {
                        Ok(s) => s,
                        Err(e) => {
                            return SeedResult {
                                seed,
                                curve: None,
                                error: Some(e.to_string()),
                            }
                        }
                    }
                };
                match run_one(cell, data, setup, seed) {
                    Ok(curve) => SeedResult {
                        seed,
                        curve: Some(curve),
                        error: None,
                    },
                    Err(e) => SeedResult {
                        seed,
                        curve: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });
    let mut results = results.into_iter();
    Ok(cells
        .iter()
        .map(|cell| ReportRow {
            label: cell.label.clone(),
            seeds: results.by_ref().take(setup.seeds.len()).collect(),
        })
        .collect())
}

pub fn run_ablation(kind: AblationKind, base: &NetworkConfig, setup: &ExperimentSetup) -> Result<ExperimentReport> {
    let cells = ablation_grid(kind, base);
    Ok(ExperimentReport {
        kind: Some(kind),
        base: base.clone(),
        setup: setup.clone(),
        rows: run_cells(&cells, setup)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(p: usize, g: usize, data: Vec<f64>) -> Tensor {
        Tensor::new([p, g], data).unwrap()
    }

    #[test]
    fn perfect_matcher() {
        let d = matrix(3, 3, vec![0.0, 9.0, 9.0, 9.0, 0.0, 9.0, 9.0, 9.0, 0.0]);
        assert_eq!(compute_cmc(&d, &[0, 1, 2]).unwrap().rates, vec![1.0; 3]);
    }

    #[test]
    fn single_rank_step() {
        let d = matrix(1, 4, vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(compute_cmc(&d, &[2]).unwrap().rates, vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn ties_broken_by_gallery_index() {
        let d = matrix(2, 3, vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5]);
        let c = compute_cmc(&d, &[0, 2]).unwrap();
        assert_eq!(c.rates, vec![0.5, 0.5, 1.0]);
    }

    #[test]
    fn errors() {
        let d = matrix(1, 2, vec![0.0, 1.0]);
        assert!(compute_cmc(&d, &[2]).is_err());
        assert!(compute_cmc(&d, &[0, 1]).is_err());
        assert!(compute_cmc(&matrix(1, 2, vec![f64::NAN, 0.0]), &[0]).is_err());
    }

    #[test]
    fn beyond_gallery_is_one() {
        let c = CmcCurve { rates: vec![0.5, 1.0] };
        assert_eq!(c.at(20), 1.0);
    }

    #[test]
    fn grid_sizes_and_order() {
        let base = NetworkConfig::baseline();
        let pairs = ablation_grid(AblationKind::StreamPairs, &base);
        assert_eq!(pairs.len(), 10);
        assert_eq!(pairs[0].label, "MaxPool + MaxPool");
        assert_eq!(pairs[5].label, "MaxPool + 2 stride");
        assert_eq!(pairs[9].label, "2 stride + DilatedMax");
        assert_eq!(ablation_grid(AblationKind::FusionMethod, &base).len(), 5);
        assert_eq!(ablation_grid(AblationKind::FusionLayer, &base).len(), 4);
        let counts = ablation_grid(AblationKind::StreamCount, &base);
        assert_eq!(counts.iter().map(|c| c.network.streams.len()).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn untrained_network_on_two_identities() {
        let mut cfg = NetworkConfig::baseline().desk_scale();
        cfg.input_extent = (8, 8);
        let net = Network::build(cfg, 1).unwrap();
        let samples = synth_generate(&SynthSpec::new(2, 3, (8, 8), 4)).unwrap();
        let c = evaluate(&net, &samples, 128).unwrap();
        assert_eq!(c.gallery_size(), 2);
        assert_eq!(c.at(2), 1.0);
        assert_eq!(evaluate(&net, &samples, 128).unwrap(), c);
    }

    #[test]
    fn failing_cells_keep_their_error() {
        let mut base = NetworkConfig::baseline().desk_scale();
        base.channels = [2, 2, 2, 2];
        base.embedding_dim = 4;
        base.rnn_hidden = 4;
        base.input_extent = (8, 8);
        let mut bad = base.clone();
        bad.fusion_layer = 9;
        let cells = vec![
            AblationCell {
                label: "ok".into(),
                network: base,
            },
            AblationCell {
                label: "bad".into(),
                network: bad,
            },
        ];
        let setup = ExperimentSetup {
            training: TrainConfig {
                epochs: 1,
                train_seq_len: 2,
                ..TrainConfig::desk()
            },
            num_ids: 4,
            frames_per_seq: 2,
            data_seed: 0,
            seeds: vec![0, 1],
        };
        let rows = run_cells(&cells, &setup).unwrap();
        assert!(rows[0].mean().is_some() && rows[0].failures() == 0);
        assert_eq!(rows[1].failures(), 2);
        assert!(rows[1].mean().is_none());
        let report = ExperimentReport {
            kind: None,
            base: cells[0].network.clone(),
            setup,
            rows,
        };
        assert_eq!(report.to_csv().lines().count(), 3);
        assert!(report.to_csv().lines().nth(2).unwrap().starts_with("bad,2,2,"));
        assert!(report.to_svg().starts_with("<svg"));
        assert!(report.to_json().unwrap().contains("fusion layer"));
    }
}
