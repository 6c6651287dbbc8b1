//! Evaluation sweeps over SNR and compression ratio, and the complexity table.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Mode, RunConfig};
use super::eval::evaluate;
use super::model::Model;
use super::train::{has_fusion, has_pipeline};
use super::world::Dataset;
use crate::channel::{ChannelConfig, ChannelKind};
use crate::codec::complexity::{Complexity, FULL_SCALE_REFERENCE};
use crate::codec::Ratio;
use crate::error::{Error, Result};
use crate::kg::EmbeddingTable;
use crate::numeric::{Checkpoint, ParameterStore};
use crate::seeds::mix_seed;

/// Leading comment line of every CSV the harness writes.
pub const OUTPUT_NOTE: &str =
    "# R = k/n with k complex channel symbols and n = 3*w*h image reals; synthetic toy-world protocol";

/// Version of the sweep CSV column layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Fixed leading columns of a sweep CSV; one `ap_<class>` column per class follows.
pub const SWEEP_COLUMNS: [&str; 11] =
    ["schema", "mode", "channel", "requested_R", "achieved_R", "C", "k", "n", "snr_db", "seed", "mAP"];

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub mode: Mode,
    pub channel: ChannelKind,
    pub requested: Ratio,
    pub achieved: f64,
    pub channels: usize,
    pub k: usize,
    pub n: usize,
    pub snr_db: f64,
    pub seed: u64,
    pub map: f64,
    pub per_class: Vec<Option<f64>>,
}

/// A trained pipeline for one `(rate, seed)`.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub seed: u64,
    pub model: Model,
    pub store: ParameterStore,
}

impl TrainedModel {
    pub fn rate(&self) -> Ratio {
        self.model.codec.rate.requested
    }
}

/// Checkpoint path of the pipeline trained at `rate` with `seed`.
pub fn model_path(dir: &Path, rate: Ratio, seed: u64) -> PathBuf {
    dir.join("models").join(format!("seed{seed}_r{}-{}.sckp", rate.num, rate.den))
}

/// Checkpoint path of the codec-free detector pretrained with `seed`.
pub fn detector_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join("models").join(format!("seed{seed}_detector.sckp"))
}

/// Check that `store` has exactly the parameters `model` creates for `mode`, with
/// matching shapes.
pub fn check_store(model: &Model, store: &ParameterStore, mode: Mode) -> Result<()> {
    let mut fresh = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    model.init_detector(&mut fresh, &mut rng)?;
    model.init_codec(&mut fresh, &mut rng)?;
    if mode == Mode::MsedKg {
        model.init_fusion(&mut fresh, &mut rng)?;
    }
    for (name, p) in fresh.iter() {
        let have =
            store.get(name).map_err(|_| Error::Missing(format!("checkpoint lacks `{name}` needed for {mode}")))?;
        if have.shape() != p.value.shape() {
            return Err(Error::Format(format!(
                "checkpoint parameter `{name}` has shape {:?}, model expects {:?}",
                have.shape(),
                p.value.shape()
            )));
        }
    }
    Ok(())
}

/// Load the pipeline for `(rate, seed)` from `dir`, checked against the configured
/// geometry.
pub fn load_trained(cfg: &RunConfig, dir: &Path, rate: Ratio, seed: u64, mode: Mode) -> Result<TrainedModel> {
    let path = model_path(dir, rate, seed);
    if !path.exists() {
        return Err(Error::Missing(format!("trained checkpoint {}", path.display())));
    }
    let store = Checkpoint::load(&path)?.to_store("adam.")?;
    let model = Model::new(&cfg.model, rate, &cfg.data.world.class_names())?;
    check_store(&model, &store, mode)?;
    Ok(TrainedModel { seed, model, store })
}

fn channel_tag(c: ChannelKind) -> u64 {
    match c {
        ChannelKind::Awgn => 0,
        ChannelKind::Rayleigh => 1,
    }
}

/// Evaluate every model at every `(channel, snr)` for every mode. Channel
/// realizations depend on the model seed, channel and SNR only, so both modes and
/// all rates see the same draws. Rows are ordered by model, channel, SNR, mode.
pub fn sweep(
    models: &[TrainedModel],
    data: &Dataset,
    embeddings: Option<&EmbeddingTable>,
    channels: &[ChannelKind],
    snrs_db: &[f64],
    modes: &[Mode],
    cfg: &RunConfig,
) -> Result<Vec<SweepRow>> {
    let want_kg = modes.contains(&Mode::MsedKg);
    if want_kg && embeddings.is_none() {
        return Err(Error::Missing("knowledge-graph embeddings for MSED+KG".into()));
    }
    let mut rows = Vec::new();
    for tm in models {
        if !has_pipeline(&tm.store) {
            return Err(Error::Missing(format!("trained pipeline for seed {} at R={}", tm.seed, tm.rate())));
        }
        if want_kg && !has_fusion(&tm.store) {
            return Err(Error::Missing(format!("graph head for seed {} at R={}", tm.seed, tm.rate())));
        }
        let rate = &tm.model.codec.rate;
        for &ch in channels {
            for &snr in snrs_db {
                let config = ChannelConfig::from_snr_db(ch, tm.model.codec.config.power, snr, 0)?
                    .with_receiver(cfg.eval.receiver);
                let seed = mix_seed(cfg.eval.seed, &[tm.seed, channel_tag(ch), snr.to_bits()]);
                let emb = if want_kg { embeddings } else { None };
                let res = evaluate(&tm.model, &tm.store, data, &config, seed, emb, cfg.eval.iou_threshold)?;
                for &mode in modes {
                    let report = match mode {
                        Mode::Msed => &res.initial,
                        Mode::MsedKg => res.refined.as_ref().expect("graph head evaluated"),
                    };
                    log::info!("{mode} {ch} R={} snr={snr} seed={}: mAP {:.4}", rate.requested, tm.seed, report.map);
                    rows.push(SweepRow {
                        mode,
                        channel: ch,
                        requested: rate.requested,
                        achieved: rate.achieved(),
                        channels: rate.channels,
                        k: rate.k,
                        n: rate.n,
                        snr_db: snr,
                        seed: tm.seed,
                        map: report.map,
                        per_class: report.per_class.clone(),
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// SNR sweep over the configured channels and SNR grid.
pub fn sweep_snr(
    models: &[TrainedModel],
    data: &Dataset,
    embeddings: Option<&EmbeddingTable>,
    cfg: &RunConfig,
) -> Result<Vec<SweepRow>> {
    let s = &cfg.sweep;
    sweep(models, data, embeddings, &s.channels, &s.snr_db, &s.modes, cfg)
}

/// Rate sweep under AWGN at the configured rate-sweep SNR.
pub fn sweep_rate(
    models: &[TrainedModel],
    data: &Dataset,
    embeddings: Option<&EmbeddingTable>,
    cfg: &RunConfig,
) -> Result<Vec<SweepRow>> {
    let s = &cfg.sweep;
    sweep(models, data, embeddings, &[ChannelKind::Awgn], &[s.rate_snr_db], &s.modes, cfg)
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_sweep_csv<W: Write>(out: &mut W, rows: &[SweepRow], class_names: &[String]) -> Result<()> {
    writeln!(out, "{OUTPUT_NOTE}")?;
    let mut header: Vec<String> = SWEEP_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(class_names.iter().map(|c| format!("ap_{c}")));
    writeln!(out, "{}", header.join(","))?;
    for r in rows {
        if r.per_class.len() != class_names.len() {
            return Err(Error::invalid(format!(
                "row has {} class APs for {} classes",
                r.per_class.len(),
                class_names.len()
            )));
        }
        let mut f = vec![
            SCHEMA_VERSION.to_string(),
            match r.mode {
                Mode::Msed => "msed".into(),
                Mode::MsedKg => "msed+kg".into(),
            },
            r.channel.to_string(),
            r.requested.to_string(),
            fmt_f(r.achieved),
            r.channels.to_string(),
            r.k.to_string(),
            r.n.to_string(),
            format!("{}", r.snr_db),
            r.seed.to_string(),
            fmt_f(r.map),
        ];
        f.extend(r.per_class.iter().map(|ap| ap.map(fmt_f).unwrap_or_default()));
        writeln!(out, "{}", f.join(","))?;
    }
    Ok(())
}

/// Parse a sweep CSV back into rows; `#` lines are comments.
pub fn read_sweep_csv(text: &str) -> Result<(Vec<String>, Vec<SweepRow>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#'));
    let (h, header) = lines.next().ok_or_else(|| Error::Parse { line: 1, msg: "empty sweep file".into() })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < SWEEP_COLUMNS.len() || cols[..SWEEP_COLUMNS.len()] != SWEEP_COLUMNS {
        return Err(Error::Parse { line: h + 1, msg: format!("unexpected sweep header `{header}`") });
    }
    let classes: Vec<String> =
        cols[SWEEP_COLUMNS.len()..].iter().map(|c| c.strip_prefix("ap_").unwrap_or(c).to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: i + 1, msg };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(err(format!("{} fields, expected {}", f.len(), cols.len())));
        }
        if f[0] != SCHEMA_VERSION.to_string() {
            return Err(err(format!("schema version {} is not {SCHEMA_VERSION}", f[0])));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("`{s}`: {e}")));
        let int = |s: &str| s.parse::<u64>().map_err(|e| err(format!("`{s}`: {e}")));
        let per_class = f[SWEEP_COLUMNS.len()..]
            .iter()
            .map(|s| if s.is_empty() { Ok(None) } else { num(s).map(Some) })
            .collect::<Result<_>>()?;
        rows.push(SweepRow {
            mode: f[1].parse().map_err(|e: Error| err(e.to_string()))?,
            channel: f[2].parse().map_err(|e: Error| err(e.to_string()))?,
            requested: f[3].parse().map_err(|e: Error| err(e.to_string()))?,
            achieved: num(f[4])?,
            channels: int(f[5])? as usize,
            k: int(f[6])? as usize,
            n: int(f[7])? as usize,
            snr_db: num(f[8])?,
            seed: int(f[9])?,
            map: num(f[10])?,
            per_class,
        });
    }
    Ok((classes, rows))
}

/// `(mode, channel, requested R, snr)` as printed in the CSV.
pub type GroupKey = (Mode, String, String, String);

/// Mean, sample standard deviation and count of the mAP of rows grouped by
/// [`GroupKey`].
pub fn summarize(rows: &[SweepRow]) -> BTreeMap<GroupKey, (f64, f64, usize)> {
    let mut groups: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.mode, r.channel.to_string(), r.requested.to_string(), format!("{}", r.snr_db)))
            .or_default()
            .push(r.map);
    }
    groups
        .into_iter()
        .map(|(k, v)| {
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let var = if n > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
            (k, (mean, var.sqrt(), n))
        })
        .collect()
}

/// One row of the complexity table.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexityRow {
    pub system: String,
    pub counts: Complexity,
    /// Whether the counts were measured on this configuration or quoted.
    pub measured: bool,
}

/// Per-image counts of the configured system in both modes, followed by the quoted
/// full-scale reference.
pub fn report_complexity(cfg: &RunConfig) -> Result<Vec<ComplexityRow>> {
    let model = Model::new(&cfg.model, cfg.train.rate, &cfg.data.world.class_names())?;
    let proposals = cfg.model.eval_proposals.post_nms;
    let mut rows: Vec<ComplexityRow> = Mode::ALL
        .iter()
        .map(|&m| ComplexityRow { system: m.to_string(), counts: model.complexity(m, proposals), measured: true })
        .collect();
    rows.push(ComplexityRow { system: "full-scale reference".into(), counts: FULL_SCALE_REFERENCE, measured: false });
    Ok(rows)
}

pub fn write_complexity_csv<W: Write>(out: &mut W, rows: &[ComplexityRow]) -> Result<()> {
    writeln!(out, "{OUTPUT_NOTE}")?;
    writeln!(out, "system,parameters,additions,multiplications,source")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.system,
            r.counts.parameters,
            r.counts.additions,
            r.counts.multiplications,
            if r.measured { "counted" } else { "quoted" }
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(mode: Mode, seed: u64, map: f64) -> SweepRow {
        SweepRow {
            mode,
            channel: ChannelKind::Awgn,
            requested: Ratio::new(1, 6).unwrap(),
            achieved: 8184.0 / 49152.0,
            channels: 48,
            k: 8184,
            n: 49152,
            snr_db: 10.0,
            seed,
            map,
            per_class: vec![Some(map), None],
        }
    }

    #[test]
    fn csv_round_trip() {
        let names = vec!["a".to_string(), "b".to_string()];
        let rows = vec![row(Mode::Msed, 1, 0.5), row(Mode::MsedKg, 1, 0.625)];
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows, &names).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(OUTPUT_NOTE));
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("schema,mode,channel,requested_R,achieved_R,C,k,n,snr_db,seed,mAP,ap_a,ap_b"));
        let (classes, back) = read_sweep_csv(&text).unwrap();
        assert_eq!(classes, names);
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].mode, Mode::MsedKg);
        assert_eq!(back[1].per_class, vec![Some(0.625), None]);
    }

    #[test]
    fn summary_groups_by_mode() {
        let rows = vec![row(Mode::Msed, 1, 0.4), row(Mode::Msed, 2, 0.6), row(Mode::MsedKg, 1, 0.7)];
        let s = summarize(&rows);
        let (mean, sd, n) = s[&(Mode::Msed, "awgn".into(), "1/6".into(), "10".into())];
        assert!((mean - 0.5).abs() < 1e-12 && n == 2);
        assert!((sd - 0.02f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn kg_mode_has_more_parameters() {
        let rows = report_complexity(&RunConfig::default()).unwrap();
        assert!(rows[1].counts.parameters > rows[0].counts.parameters);
        assert!(!rows[2].measured);
    }
}
