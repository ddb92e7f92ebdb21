//! Grid resampling, label-aligned windows and session-level splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ImuSample, ProcessedSession, ALIGN_TOLERANCE_S};
use crate::error::{Error, Result};

/// Samples on a uniform clock: sample `j` sits at `(start + j) / rate` s.
#[derive(Clone, Debug, PartialEq)]
pub struct Stream {
    pub rate: f64,
    pub start: i64,
    pub samples: Vec<[f64; 3]>,
}

impl Stream {
    pub fn time(&self, j: usize) -> f64 {
        (self.start + j as i64) as f64 / self.rate
    }

    /// Index of the sample nearest `t`, if within `tol` seconds.
    fn nearest(&self, t: f64, tol: f64) -> Option<usize> {
        let j = (t * self.rate).round() as i64 - self.start;
        if j < 0 || j as usize >= self.samples.len() {
            return None;
        }
        let j = j as usize;
        ((self.time(j) - t).abs() <= tol + 1e-9).then_some(j)
    }
}

/// Nearest-neighbour resampling onto the `k / rate` grid. Raw gaps longer
/// than `max_gap` seconds end one run and start the next.
pub fn snap_to_grid(samples: &[ImuSample], rate: f64, max_gap: f64) -> Vec<Stream> {
    let mut runs = Vec::new();
    let mut lo = 0;
    for hi in 1..=samples.len() {
        if hi == samples.len() || samples[hi].t - samples[hi - 1].t > max_gap {
            runs.push(resample(&samples[lo..hi], rate));
            lo = hi;
        }
    }
    runs.into_iter().filter(|r| !r.samples.is_empty()).collect()
}

fn resample(raw: &[ImuSample], rate: f64) -> Stream {
    let first = (raw[0].t * rate - 1e-6).ceil() as i64;
    let last = (raw[raw.len() - 1].t * rate + 1e-6).floor() as i64;
    let mut samples = Vec::with_capacity((last - first + 1).max(0) as usize);
    let mut i = 0;
    for k in first..=last {
        let t = k as f64 / rate;
        while i + 1 < raw.len() && (raw[i + 1].t - t).abs() <= (raw[i].t - t).abs() {
            i += 1;
        }
        samples.push(raw[i].a);
    }
    Stream { rate, start: first, samples }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowEntry {
    /// `w×3` row-major (time, axis) specific force, m/s².
    pub window: Vec<f64>,
    /// GPS speed at `t_label`, m/s.
    pub label: f64,
    pub t_label: f64,
    pub session_id: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowedDataset {
    pub window_size: usize,
    pub entries: Vec<WindowEntry>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn windows(&self) -> Vec<&[f64]> {
        self.entries.iter().map(|e| e.window.as_slice()).collect()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.label).collect()
    }
}

/// One window per GPS label whose nearest 20 Hz sample has `w - 1` samples
/// of history in the same run. Returns the windows and the skipped count.
pub fn extract_windows(session: &ProcessedSession, w: usize) -> Result<(Vec<WindowEntry>, usize)> {
    if w < 5 {
        return Err(Error::InvalidArgument(format!("window size {w} below minimum 5")));
    }
    let mut out = Vec::new();
    let mut skipped = 0;
    for p in &session.track.points {
        let hit = session
            .streams
            .iter()
            .find_map(|s| s.nearest(p.t, ALIGN_TOLERANCE_S).map(|j| (s, j)))
            .filter(|&(_, j)| j + 1 >= w);
        match hit {
            Some((s, j)) => out.push(WindowEntry {
                window: s.samples[j + 1 - w..=j].iter().flatten().copied().collect(),
                label: p.speed,
                t_label: p.t,
                session_id: session.session_id.clone(),
            }),
            None => skipped += 1,
        }
    }
    Ok((out, skipped))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub test: WindowedDataset,
    pub test_sessions: Vec<String>,
    /// Labels dropped for lack of history or alignment.
    pub skipped: usize,
}

/// Holds out `test_sessions` whole sessions (chosen by a seeded shuffle of
/// the sorted ids, so the choice does not depend on `w`), then shuffles the
/// remaining windows and cuts `val_fraction` of them off as validation.
pub fn split_sessions(
    sessions: &[ProcessedSession],
    test_sessions: usize,
    val_fraction: f64,
    seed: u64,
    w: usize,
) -> Result<Split> {
    if sessions.len() < 3 {
        return Err(Error::TooFewSessions { needed: 3, have: sessions.len() });
    }
    if test_sessions == 0 || test_sessions >= sessions.len() {
        return Err(Error::InvalidArgument(format!(
            "test session count {test_sessions} must be in 1..{}",
            sessions.len()
        )));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidArgument(format!("validation fraction {val_fraction} must be in [0, 1)")));
    }
    let mut order: Vec<&ProcessedSession> = sessions.iter().collect();
    order.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..order.len()).collect();
    ids.shuffle(&mut rng);
    let mut held: Vec<usize> = ids[..test_sessions].to_vec();
    held.sort_unstable();

    let mut test = Vec::new();
    let mut rest = Vec::new();
    let mut skipped = 0;
    for (i, s) in order.iter().enumerate() {
        let (ws, sk) = extract_windows(s, w)?;
        skipped += sk;
        if held.contains(&i) {
            test.extend(ws);
        } else {
            rest.extend(ws);
        }
    }
    rest.shuffle(&mut rng);
    let n_val = (rest.len() as f64 * val_fraction).round() as usize;
    let train = rest.split_off(n_val);
    let dataset = |entries| WindowedDataset { window_size: w, entries };
    Ok(Split {
        train: dataset(train),
        val: dataset(rest),
        test: dataset(test),
        test_sessions: held.iter().map(|&i| order[i].session_id.clone()).collect(),
        skipped,
    })
}
