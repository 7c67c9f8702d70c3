use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::synth::{splitmix64, synth_noise, synth_speech};
use super::{Result, SceneError, SceneLabel};
use crate::signal::{mix_at_snr, read_wav, write_wav, AudioClip, SampleFormat, StftParams, PIPELINE_RATE};

pub const MANIFEST_VERSION: &str = "1";

/// Nominal mixing SNRs in dB.
pub const SNR_GRID_DB: [f64; 5] = [-9.0, -3.0, 0.0, 3.0, 9.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s.trim())
            .ok_or_else(|| SceneError::Manifest(format!("unknown split {s:?}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RecordSource {
    #[default]
    Synthetic,
    /// User-supplied stems, paths relative to the manifest directory.
    Files { clean: PathBuf, noise: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecord {
    pub id: String,
    pub scene: SceneLabel,
    pub snr_db: f64,
    pub speech_seed: u64,
    pub noise_seed: u64,
    pub duration_s: f64,
    pub split: Split,
    #[serde(default)]
    pub source: RecordSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Utterances per scene x SNR cell, per split.
    pub per_cell: SplitCounts,
    pub duration_s: f64,
    pub seed: u64,
    pub snr_grid_db: Vec<f64>,
    pub stft: StftParams,
}

impl DatasetConfig {
    /// Desk-scale default: 20/5/5 utterances per cell, 3 s each.
    pub fn desk(seed: u64) -> Self {
        Self {
            per_cell: SplitCounts { train: 20, val: 5, test: 5 },
            duration_s: 3.0,
            seed,
            snr_grid_db: SNR_GRID_DB.to_vec(),
            stft: StftParams::default(),
        }
    }

    /// Smallest useful dataset for smoke tests.
    pub fn tiny(seed: u64) -> Self {
        Self {
            per_cell: SplitCounts { train: 2, val: 1, test: 1 },
            duration_s: 1.0,
            ..Self::desk(seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub rate: u32,
    pub stft: StftParams,
    pub records: Vec<MixtureRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<DatasetConfig>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> Vec<&MixtureRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn get(&self, id: &str) -> Option<&MixtureRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Distinct SNR values present, ascending.
    pub fn snr_grid(&self) -> Vec<f64> {
        let mut grid: Vec<f64> = Vec::new();
        for r in &self.records {
            if !grid.iter().any(|g| *g == r.snr_db) {
                grid.push(r.snr_db);
            }
        }
        grid.sort_by(f64::total_cmp);
        grid
    }

    /// Checks id uniqueness, split hygiene and scene x SNR coverage of every
    /// non-empty split.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(SceneError::Manifest(format!("duplicate id {}", r.id)));
            }
        }
        let mut owner = std::collections::HashMap::new();
        for r in &self.records {
            if let Some(prev) = owner.insert((r.speech_seed, r.noise_seed), r.split) {
                if prev != r.split {
                    return Err(SceneError::Manifest(format!(
                        "seed pair of {} appears in {} and {}",
                        r.id,
                        prev.name(),
                        r.split.name()
                    )));
                }
            }
        }
        let grid = self.snr_grid();
        for split in Split::ALL {
            let records = self.split(split);
            if records.is_empty() {
                continue;
            }
            for scene in SceneLabel::ALL {
                for &snr in &grid {
                    if !records.iter().any(|r| r.scene == scene && r.snr_db == snr) {
                        return Err(SceneError::Manifest(format!(
                            "{} split has no {scene} record at {snr} dB",
                            split.name()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hex SHA-256 of the canonical JSON serialisation.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serialises");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let manifest: Self = serde_json::from_slice(&fs::read(path)?)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(SceneError::Manifest(format!("unsupported version {}", manifest.version)));
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::write_atomic(path.as_ref(), self.to_json()?.as_bytes())?;
        Ok(())
    }
}

fn snr_tag(snr: f64) -> String {
    let mag = format!("{}", snr.abs()).replace('.', "p");
    if snr < 0.0 {
        format!("m{mag}")
    } else {
        format!("p{mag}")
    }
}

fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(base), |acc, p| splitmix64(acc ^ p))
}

/// Pure manifest construction; no audio is rendered.
pub fn build_manifest(config: &DatasetConfig) -> Result<DatasetManifest> {
    if config.per_cell.train == 0 && config.per_cell.val == 0 && config.per_cell.test == 0 {
        return Err(SceneError::ZeroCount("per_cell"));
    }
    if config.snr_grid_db.is_empty() {
        return Err(SceneError::ZeroCount("snr_grid_db"));
    }
    if !(config.duration_s >= 1.0) {
        return Err(SceneError::InvalidDuration(config.duration_s));
    }
    config.stft.validate()?;
    let mut records = Vec::new();
    for (si, split) in Split::ALL.into_iter().enumerate() {
        for scene in SceneLabel::ALL {
            for (gi, &snr) in config.snr_grid_db.iter().enumerate() {
                for i in 0..config.per_cell.get(split) {
                    let key = [si as u64, scene.index() as u64, gi as u64, i as u64];
                    records.push(MixtureRecord {
                        id: format!("{}-{}-{}-{:03}", split.name(), scene.name(), snr_tag(snr), i),
                        scene,
                        snr_db: snr,
                        speech_seed: derive_seed(config.seed, &[&key[..], &[1]].concat()),
                        noise_seed: derive_seed(config.seed, &[&key[..], &[2]].concat()),
                        duration_s: config.duration_s,
                        split,
                        source: RecordSource::Synthetic,
                    });
                }
            }
        }
    }
    Ok(DatasetManifest {
        version: MANIFEST_VERSION.to_string(),
        rate: PIPELINE_RATE,
        stft: config.stft,
        records,
        config: Some(config.clone()),
    })
}

/// Clean speech, the noise as scaled into the mixture, and the mixture.
#[derive(Debug, Clone)]
pub struct Stems {
    pub clean: AudioClip,
    pub noise: AudioClip,
    pub mixture: AudioClip,
}

impl Stems {
    pub fn write(&self, dir: &Path, id: &str) -> Result<()> {
        for (suffix, clip) in [("clean", &self.clean), ("noise", &self.noise), ("mix", &self.mixture)] {
            write_wav(clip, dir.join(format!("{id}.{suffix}.wav")), SampleFormat::Float32)?;
        }
        Ok(())
    }
}

/// Renders a record's stems. File-backed paths resolve against `base_dir`.
pub fn render(record: &MixtureRecord, base_dir: Option<&Path>) -> Result<Stems> {
    let (speech, noise) = match &record.source {
        RecordSource::Synthetic => (
            synth_speech(record.duration_s, record.speech_seed)?,
            synth_noise(record.scene, record.duration_s, record.noise_seed)?,
        ),
        RecordSource::Files { clean, noise } => {
            let resolve = |p: &Path| match base_dir {
                Some(dir) if p.is_relative() => dir.join(p),
                _ => p.to_path_buf(),
            };
            let speech = read_wav(resolve(clean))?;
            let noise = read_wav(resolve(noise))?;
            speech.require_rate(PIPELINE_RATE)?;
            noise.require_rate(PIPELINE_RATE)?;
            (speech, noise)
        }
    };
    let mix = mix_at_snr(&speech, &noise, record.snr_db)?;
    Ok(Stems { clean: speech, noise: mix.scaled_noise, mixture: mix.mixture })
}

/// Builds the manifest, renders every record into `out_dir/audio` as float32
/// WAV stems and writes `out_dir/manifest.json`.
pub fn build_dataset(config: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let manifest = build_manifest(config)?;
    let audio_dir = out_dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(|source| SceneError::Unwritable {
        path: audio_dir.display().to_string(),
        source,
    })?;
    for record in &manifest.records {
        render(record, None)?.write(&audio_dir, &record.id)?;
    }
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[derive(Debug, Deserialize)]
struct PairRow {
    clean: PathBuf,
    noise: PathBuf,
    scene: String,
    split: String,
}

fn file_seed(path: &Path) -> Result<u64> {
    let digest = Sha256::digest(fs::read(path)?);
    Ok(u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")))
}

/// Reads a `clean,noise,scene,split` CSV of user-supplied stems and expands
/// each pair over `snr_grid_db`. Seeds are replaced by content hashes.
pub fn load_pairs(csv_path: &Path, snr_grid_db: &[f64]) -> Result<DatasetManifest> {
    let base = csv_path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(csv_path).map_err(|e| SceneError::Manifest(e.to_string()))?;
    let mut records = Vec::new();
    for (row_index, row) in reader.deserialize::<PairRow>().enumerate() {
        let row = row.map_err(|e| SceneError::Manifest(e.to_string()))?;
        let scene: SceneLabel = row.scene.parse()?;
        let split: Split = row.split.parse()?;
        let clean_path = base.join(&row.clean);
        let speech = read_wav(&clean_path)?;
        speech.require_rate(PIPELINE_RATE)?;
        let speech_seed = file_seed(&clean_path)?;
        let noise_seed = file_seed(&base.join(&row.noise))?;
        let stem = row
            .clean
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| row_index.to_string());
        for &snr in snr_grid_db {
            records.push(MixtureRecord {
                id: format!("{}-{}-{}-{}-{:03}", split.name(), scene.name(), snr_tag(snr), stem, row_index),
                scene,
                snr_db: snr,
                speech_seed,
                noise_seed,
                duration_s: speech.duration_s(),
                split,
                source: RecordSource::Files { clean: row.clean.clone(), noise: row.noise.clone() },
            });
        }
    }
    if records.is_empty() {
        return Err(SceneError::ZeroCount("pairs"));
    }
    Ok(DatasetManifest {
        version: MANIFEST_VERSION.to_string(),
        rate: PIPELINE_RATE,
        stft: StftParams::default(),
        records,
        config: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{segmental_snr, stft};

    #[test]
    fn record_count_and_coverage() {
        let config = DatasetConfig {
            per_cell: SplitCounts { train: 2, val: 0, test: 0 },
            ..DatasetConfig::tiny(1)
        };
        let manifest = build_manifest(&config).unwrap();
        assert_eq!(manifest.records.len(), 40);
        manifest.validate().unwrap();
    }

    #[test]
    fn manifest_is_deterministic_and_split_hygienic() {
        let a = build_manifest(&DatasetConfig::desk(3)).unwrap();
        let b = build_manifest(&DatasetConfig::desk(3)).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), build_manifest(&DatasetConfig::desk(4)).unwrap().hash());
        assert_eq!(a.records.len(), 600);
        a.validate().unwrap();
        let back: DatasetManifest = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn zero_counts_rejected() {
        let config = DatasetConfig {
            per_cell: SplitCounts { train: 0, val: 0, test: 0 },
            ..DatasetConfig::tiny(1)
        };
        assert!(matches!(build_manifest(&config), Err(SceneError::ZeroCount(_))));
    }

    #[test]
    fn validate_catches_missing_cells_and_duplicates() {
        let mut m = build_manifest(&DatasetConfig::tiny(1)).unwrap();
        let dup = m.records[0].clone();
        m.records.push(dup);
        assert!(m.validate().is_err());
        let mut m = build_manifest(&DatasetConfig::tiny(1)).unwrap();
        m.records.retain(|r| !(r.split == Split::Test && r.scene == SceneLabel::Bus));
        assert!(m.validate().is_err());
    }

    #[test]
    fn segmental_snr_tracks_nominal_snr() {
        let manifest = build_manifest(&DatasetConfig::desk(11)).unwrap();
        let mut worst: f64 = 0.0;
        for record in manifest.records.iter().step_by(7) {
            let stems = render(record, None).unwrap();
            let seg = segmental_snr(&stems.clean, &stems.mixture, 16.0).unwrap();
            let dev = seg - record.snr_db;
            worst = worst.max(dev.abs());
            assert!(dev.abs() <= 2.5, "{}: segsnr {seg:.2}", record.id);
        }
        eprintln!("worst segsnr deviation {worst:.2} dB");
    }

    fn mean_log_spectrum(clip: &AudioClip) -> Vec<f64> {
        let spec = stft(clip, StftParams::default()).unwrap();
        let mut acc = vec![0.0; spec.n_bins()];
        for t in 0..spec.n_frames() {
            for (a, c) in acc.iter_mut().zip(spec.frame(t)) {
                *a += c.norm_sqr();
            }
        }
        acc.iter().map(|p| 10.0 * (p / spec.n_frames() as f64 + 1e-12).log10()).collect()
    }

    #[test]
    fn scenes_are_separable_in_long_term_spectrum() {
        let manifest = build_manifest(&DatasetConfig::desk(5)).unwrap();
        let mut spectra: Vec<Vec<Vec<f64>>> = vec![Vec::new(); 4];
        for r in manifest.split(Split::Val) {
            let noise = synth_noise(r.scene, r.duration_s, r.noise_seed).unwrap();
            spectra[r.scene.index()].push(mean_log_spectrum(&noise));
        }
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let centroids: Vec<Vec<f64>> = spectra
            .iter()
            .map(|s| {
                let mut c = vec![0.0; s[0].len()];
                for v in s {
                    c.iter_mut().zip(v).for_each(|(a, b)| *a += b / s.len() as f64);
                }
                c
            })
            .collect();
        let within = spectra
            .iter()
            .zip(&centroids)
            .map(|(s, c)| (s.iter().map(|v| dist(v, c).powi(2)).sum::<f64>() / s.len() as f64).sqrt())
            .fold(0.0, f64::max);
        let mut between = f64::INFINITY;
        for i in 0..4 {
            for j in i + 1..4 {
                between = between.min(dist(&centroids[i], &centroids[j]));
            }
        }
        eprintln!("between {between:.2} within {within:.2}");
        assert!(between / within > 2.0, "ratio {}", between / within);
    }

    #[test]
    fn build_writes_audio_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let config = DatasetConfig {
            per_cell: SplitCounts { train: 1, val: 0, test: 0 },
            ..DatasetConfig::tiny(2)
        };
        let manifest = build_dataset(&config, dir.path()).unwrap();
        let loaded = DatasetManifest::load(dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded.hash(), manifest.hash());
        let r = &manifest.records[3];
        let mix = read_wav(dir.path().join("audio").join(format!("{}.mix.wav", r.id))).unwrap();
        let stems = render(r, None).unwrap();
        assert_eq!(mix.len(), stems.mixture.len());
        let err = mix
            .samples()
            .iter()
            .zip(stems.mixture.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6);
    }

    #[test]
    fn unwritable_output_dir() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let err = build_dataset(&DatasetConfig::tiny(1), &blocker.join("sub")).unwrap_err();
        assert!(matches!(err, SceneError::Unwritable { .. }));
    }

    #[test]
    fn user_supplied_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let speech = synth_speech(1.0, 1).unwrap();
        let noise = synth_noise(SceneLabel::Cafe, 1.5, 2).unwrap();
        write_wav(&speech, dir.path().join("s.wav"), SampleFormat::Float32).unwrap();
        write_wav(&noise, dir.path().join("n.wav"), SampleFormat::Float32).unwrap();
        fs::write(dir.path().join("pairs.csv"), "clean,noise,scene,split\ns.wav,n.wav,cafe,test\n").unwrap();
        let manifest = load_pairs(&dir.path().join("pairs.csv"), &SNR_GRID_DB).unwrap();
        assert_eq!(manifest.records.len(), 5);
        let r = &manifest.records[0];
        assert_eq!(r.speech_seed, file_seed(&dir.path().join("s.wav")).unwrap());
        let stems = render(r, Some(dir.path())).unwrap();
        assert_eq!(stems.mixture.len(), 16000);
        assert!((crate::signal::global_snr(&stems.clean, &stems.noise) - r.snr_db).abs() < 1e-6);
    }
}
