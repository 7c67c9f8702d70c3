use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PreferenceError, Result};
use crate::scenes::{DatasetManifest, MixtureRecord, SceneLabel, Split};

pub const DEFAULT_STEP: f64 = 0.1;
pub const START_P: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseEvent {
    Up,
    Down,
    NoChange,
}

impl FromStr for ResponseEvent {
    type Err = PreferenceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "up" => Ok(Self::Up),
            "down" => Ok(Self::Down),
            "no_change" | "nochange" => Ok(Self::NoChange),
            other => Err(PreferenceError::InvalidParams(format!("unknown event '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Complete,
}

/// A planned stimulus: one mixture of the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub record_id: String,
    pub scene: SceneLabel,
    pub snr_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferencePoint {
    pub scene: SceneLabel,
    pub snr_db: f64,
    pub p_final: f64,
    pub responses_taken: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElicitationSession {
    pub id: String,
    pub plan: Vec<Stimulus>,
    pub cursor: usize,
    pub p_current: f64,
    pub step: f64,
    pub log: Vec<PreferencePoint>,
    pub status: SessionStatus,
    /// Responses received for the stimulus under the cursor.
    pub pending_responses: u32,
}

/// Builds a session over every scene x SNR cell of `manifest`, drawing
/// held-out (test) records when the cell has any.
pub fn new_session(manifest: &DatasetManifest, grid_repeats: usize, seed: u64) -> Result<ElicitationSession> {
    new_session_for_scenes(manifest, &SceneLabel::ALL, grid_repeats, seed)
}

/// Like [`new_session`], restricted to `scenes`.
pub fn new_session_for_scenes(
    manifest: &DatasetManifest,
    scenes: &[SceneLabel],
    grid_repeats: usize,
    seed: u64,
) -> Result<ElicitationSession> {
    if scenes.is_empty() {
        return Err(PreferenceError::InvalidParams("no scenes selected".into()));
    }
    let test: Vec<&MixtureRecord> = manifest.split(Split::Test);
    let all: Vec<&MixtureRecord> = manifest.records.iter().collect();
    let grid = manifest.snr_grid();
    let mut pool = Vec::new();
    for &scene in scenes {
        for &snr in &grid {
            let in_cell = |r: &&&MixtureRecord| r.scene == scene && r.snr_db == snr;
            let mut cell: Vec<&MixtureRecord> = test.iter().filter(in_cell).copied().collect();
            if cell.is_empty() {
                cell = all.iter().filter(in_cell).copied().collect();
            }
            if cell.is_empty() {
                return Err(PreferenceError::MissingCell { scene, snr_db: snr });
            }
            pool.push(cell);
        }
    }
    new_session_from_pool(&pool, grid_repeats, seed)
}

/// `pool` holds the candidate records of each scene x SNR cell.
pub fn new_session_from_pool(pool: &[Vec<&MixtureRecord>], grid_repeats: usize, seed: u64) -> Result<ElicitationSession> {
    if grid_repeats == 0 {
        return Err(PreferenceError::InvalidParams("grid_repeats must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = Vec::with_capacity(pool.len() * grid_repeats);
    for cell in pool {
        let mut order: Vec<&MixtureRecord> = cell.clone();
        order.shuffle(&mut rng);
        for r in order.iter().cycle().take(grid_repeats) {
            plan.push(Stimulus { record_id: r.id.clone(), scene: r.scene, snr_db: r.snr_db });
        }
    }
    plan.shuffle(&mut rng);
    if let Some(first_ped) = plan.iter().position(|s| s.scene == SceneLabel::Pedestrian) {
        plan.swap(0, first_ped);
    }
    Ok(ElicitationSession {
        id: format!("session-{seed:016x}"),
        plan,
        cursor: 0,
        p_current: START_P,
        step: DEFAULT_STEP,
        log: Vec::new(),
        status: SessionStatus::Active,
        pending_responses: 0,
    })
}

fn snap(p: f64) -> f64 {
    ((p * 1e9).round() / 1e9).clamp(0.0, 1.0)
}

impl ElicitationSession {
    pub fn current(&self) -> Option<&Stimulus> {
        match self.status {
            SessionStatus::Active => self.plan.get(self.cursor),
            SessionStatus::Complete => None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.status == SessionStatus::Complete
    }

    /// Applies one listener response. `NoChange` commits the current level
    /// for the current stimulus and advances; the level carries over.
    pub fn apply_response(&mut self, event: ResponseEvent) -> Result<()> {
        if self.is_complete() || self.cursor >= self.plan.len() {
            return Err(PreferenceError::SessionComplete);
        }
        self.pending_responses += 1;
        match event {
            ResponseEvent::Up => self.p_current = snap(self.p_current + self.step),
            ResponseEvent::Down => self.p_current = snap(self.p_current - self.step),
            ResponseEvent::NoChange => {
                let stim = &self.plan[self.cursor];
                self.log.push(PreferencePoint {
                    scene: stim.scene,
                    snr_db: stim.snr_db,
                    p_final: self.p_current,
                    responses_taken: self.pending_responses,
                });
                self.pending_responses = 0;
                self.cursor += 1;
                if self.cursor == self.plan.len() {
                    self.status = SessionStatus::Complete;
                }
            }
        }
        Ok(())
    }
}

/// First line of a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub session_id: String,
    pub step: f64,
    pub plan_len: usize,
    pub status: SessionStatus,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine {
    Header(LogHeader),
    Point(PreferencePoint),
}

/// JSON lines: a header record, then one record per committed point.
pub fn write_session_log<W: Write>(session: &ElicitationSession, mut w: W) -> Result<()> {
    let header = LogHeader {
        session_id: session.id.clone(),
        step: session.step,
        plan_len: session.plan.len(),
        status: session.status,
    };
    serde_json::to_writer(&mut w, &LogLine::Header(header))?;
    writeln!(w)?;
    for p in &session.log {
        serde_json::to_writer(&mut w, &LogLine::Point(*p))?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_session_log<R: BufRead>(r: R) -> Result<(LogHeader, Vec<PreferencePoint>)> {
    let mut header = None;
    let mut points = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogLine>(&line)? {
            LogLine::Header(h) if header.is_none() && points.is_empty() => header = Some(h),
            LogLine::Header(_) => return Err(PreferenceError::MalformedLog("header must come first, once".into())),
            LogLine::Point(p) if header.is_some() => points.push(p),
            LogLine::Point(_) => return Err(PreferenceError::MalformedLog("point before header".into())),
        }
    }
    let header = header.ok_or_else(|| PreferenceError::MalformedLog("missing header".into()))?;
    Ok((header, points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::{build_manifest, DatasetConfig};
    use proptest::prelude::*;

    fn manifest() -> DatasetManifest {
        build_manifest(&DatasetConfig::tiny(1)).unwrap()
    }

    #[test]
    fn plan_covers_grid_and_starts_with_pedestrian() {
        let m = manifest();
        let s = new_session(&m, 1, 42).unwrap();
        assert_eq!(s.plan.len(), 20);
        assert_eq!(s.plan[0].scene, SceneLabel::Pedestrian);
        assert_eq!(s.p_current, 0.5);
        for scene in SceneLabel::ALL {
            for snr in m.snr_grid() {
                assert_eq!(s.plan.iter().filter(|x| x.scene == scene && x.snr_db == snr).count(), 1);
            }
        }
        assert_eq!(new_session(&m, 1, 42).unwrap().plan, s.plan);
        assert_ne!(new_session(&m, 1, 43).unwrap().plan, s.plan);
        assert_eq!(new_session(&m, 3, 1).unwrap().plan.len(), 60);
        for seed in 0..20 {
            assert_eq!(new_session(&m, 1, seed).unwrap().plan[0].scene, SceneLabel::Pedestrian);
        }
    }

    #[test]
    fn missing_cell_is_an_error() {
        let mut m = manifest();
        m.records.retain(|r| !(r.scene == SceneLabel::Cafe && r.snr_db == 3.0));
        assert!(matches!(new_session(&m, 1, 0), Err(PreferenceError::MissingCell { scene: SceneLabel::Cafe, .. })));
    }

    #[test]
    fn responses_step_clamp_and_commit() {
        let mut s = new_session(&manifest(), 1, 5).unwrap();
        s.apply_response(ResponseEvent::Up).unwrap();
        assert_eq!(s.p_current, 0.6);
        for _ in 0..10 {
            s.apply_response(ResponseEvent::Up).unwrap();
        }
        assert_eq!(s.p_current, 1.0);
        for _ in 0..3 {
            s.apply_response(ResponseEvent::Down).unwrap();
        }
        assert_eq!(s.p_current, 0.7);
        let stim = s.plan[0].clone();
        s.apply_response(ResponseEvent::NoChange).unwrap();
        assert_eq!(s.log, vec![PreferencePoint { scene: stim.scene, snr_db: stim.snr_db, p_final: 0.7, responses_taken: 15 }]);
        assert_eq!((s.cursor, s.p_current), (1, 0.7));
        for _ in 1..20 {
            s.apply_response(ResponseEvent::NoChange).unwrap();
        }
        assert!(s.is_complete());
        assert!(matches!(s.apply_response(ResponseEvent::Up), Err(PreferenceError::SessionComplete)));
    }

    #[test]
    fn log_round_trips_through_json_lines() {
        let mut s = new_session(&manifest(), 1, 5).unwrap();
        for e in [ResponseEvent::Up, ResponseEvent::NoChange, ResponseEvent::Down, ResponseEvent::Down, ResponseEvent::NoChange] {
            s.apply_response(e).unwrap();
        }
        let mut buf = Vec::new();
        write_session_log(&s, &mut buf).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 3);
        let (h, points) = read_session_log(buf.as_slice()).unwrap();
        assert_eq!(h.plan_len, 20);
        assert_eq!(points, s.log);
        assert!(read_session_log(&b"{\"kind\":\"point\",\"scene\":\"bus\",\"snr_db\":0,\"p_final\":0.5,\"responses_taken\":1}\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn level_stays_in_unit_interval(events in prop::collection::vec(0u8..3, 0..200), seed in 0u64..50) {
            let mut s = new_session(&manifest(), 2, seed).unwrap();
            for e in events {
                let ev = [ResponseEvent::Up, ResponseEvent::Down, ResponseEvent::NoChange][e as usize];
                if s.apply_response(ev).is_err() {
                    prop_assert!(s.is_complete());
                    break;
                }
                prop_assert!((0.0..=1.0).contains(&s.p_current));
                prop_assert!(s.log.len() <= s.cursor && s.cursor <= s.plan.len());
            }
        }
    }
}
