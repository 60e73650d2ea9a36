use super::{RawTrack, Sample};
use crate::error::{Error, Result};

pub const DEFAULT_TARGET_RATE: f64 = 15.0;

/// Resamples every track onto the uniform `target_rate` grid by
/// piecewise-linear interpolation in time.
///
/// Output frame indices count target-rate ticks from time zero. A grid point
/// is only emitted when it is bracketed by two samples less than two target
/// periods apart, so gaps in the source are never bridged. Tracks with a
/// single sample keep their position and are snapped to the nearest tick.
pub fn resample(tracks: &[RawTrack], source_rate: f64, target_rate: f64) -> Result<Vec<RawTrack>> {
    if !(source_rate.is_finite() && target_rate.is_finite() && target_rate > 0.0) {
        return Err(Error::Contract("frame rates must be finite and positive".into()));
    }
    if source_rate < target_rate {
        return Err(Error::Contract(format!(
            "source rate {source_rate} Hz is below target rate {target_rate} Hz"
        )));
    }
    Ok(tracks
        .iter()
        .map(|t| resample_track(t, source_rate, target_rate))
        .collect())
}

fn resample_track(track: &RawTrack, source_rate: f64, target_rate: f64) -> RawTrack {
    let ratio = source_rate / target_rate;
    let samples = &track.samples;
    let mut out = Vec::new();

    if samples.len() == 1 {
        log::warn!(
            "agent {} has a single sample; passing it through without interpolation",
            track.agent_id
        );
        let s = samples[0];
        out.push(Sample::new((s.frame as f64 / ratio).round() as i64, s.x, s.y));
    } else if let (Some(first), Some(last)) = (samples.first(), samples.last()) {
        // source frame index of tick k is k * ratio
        let eps = 1e-9;
        let k_min = (first.frame as f64 / ratio - eps).ceil() as i64;
        let k_max = (last.frame as f64 / ratio + eps).floor() as i64;
        let max_gap = 2.0 * ratio;
        let mut seg = 0usize;
        for k in k_min..=k_max {
            let s = k as f64 * ratio;
            while seg + 1 < samples.len() - 1 && (samples[seg + 1].frame as f64) <= s + eps {
                seg += 1;
            }
            let a = samples[seg];
            let b = samples[seg + 1];
            let (fa, fb) = (a.frame as f64, b.frame as f64);
            if (s - fa).abs() <= eps {
                out.push(Sample::new(k, a.x, a.y));
            } else if (s - fb).abs() <= eps {
                out.push(Sample::new(k, b.x, b.y));
            } else if fb - fa < max_gap - eps && s > fa && s < fb {
                let w = (s - fa) / (fb - fa);
                out.push(Sample::new(k, a.x + w * (b.x - a.x), a.y + w * (b.y - a.y)));
            }
        }
    }

    RawTrack {
        agent_id: track.agent_id,
        agent_type: track.agent_type,
        controlled: track.controlled,
        samples: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(samples: &[(i64, f64, f64)]) -> RawTrack {
        RawTrack {
            agent_id: 1,
            agent_type: 0,
            controlled: false,
            samples: samples.iter().map(|&(f, x, y)| Sample::new(f, x, y)).collect(),
        }
    }

    /// Evaluates the piecewise-linear path through the samples at time `t` seconds.
    fn piecewise_linear(samples: &[(i64, f64, f64)], rate: f64, t: f64) -> (f64, f64) {
        for w in samples.windows(2) {
            let (ta, tb) = (w[0].0 as f64 / rate, w[1].0 as f64 / rate);
            if t >= ta && t <= tb {
                let u = (t - ta) / (tb - ta);
                return (w[0].1 + u * (w[1].1 - w[0].1), w[0].2 + u * (w[1].2 - w[0].2));
            }
        }
        panic!("time {t} outside track");
    }

    #[test]
    fn halves_uniform_30hz() {
        let t = track(&[(0, 0.0, 0.0), (1, 1.0, 0.0), (2, 2.0, 0.0), (3, 3.0, 0.0)]);
        let out = resample(&[t], 30.0, 15.0).unwrap();
        assert_eq!(out[0].samples, vec![Sample::new(0, 0.0, 0.0), Sample::new(1, 2.0, 0.0)]);
    }

    #[test]
    fn identity_at_equal_rates() {
        let t = track(&[(3, 0.1, 0.2), (4, 0.3, -0.2), (5, 0.35, -0.25), (7, 1.0, 1.0)]);
        let out = resample(std::slice::from_ref(&t), 15.0, 15.0).unwrap();
        assert_eq!(out[0], t);
    }

    #[test]
    fn interpolates_between_samples() {
        // ticks at 15 Hz fall at 30 Hz frame 2 and between irregular samples
        let raw = [(1, 0.0, 0.0), (3, 1.0, 0.0), (4, 2.0, 0.5)];
        let out = resample(&[track(&raw)], 30.0, 15.0).unwrap();
        assert_eq!(out[0].samples.len(), 2);
        let s = out[0].samples[0];
        assert_eq!(s.frame, 1);
        let (ex, ey) = piecewise_linear(&raw, 30.0, 1.0 / 15.0);
        assert!((s.x - ex).abs() < 1e-12 && (s.y - ey).abs() < 1e-12);
        assert!((s.x - 0.5).abs() < 1e-12);

        let raw = [(0, 0.0, 0.0), (1, 1.0, 0.0), (2, 2.0, 0.0)];
        let out = resample(&[track(&raw)], 30.0, 15.0).unwrap();
        assert_eq!(out[0].samples[1], Sample::new(1, 2.0, 0.0));

        // 25 Hz -> 15 Hz: every tick lands between samples
        let raw: Vec<_> = (0..26).map(|f| (f, (f as f64 * 0.3).sin(), f as f64 * 0.1)).collect();
        let out = resample(&[track(&raw)], 25.0, 15.0).unwrap();
        assert_eq!(out[0].samples.len(), 16);
        for s in &out[0].samples {
            let (ex, ey) = piecewise_linear(&raw, 25.0, s.frame as f64 / 15.0);
            assert!((s.x - ex).abs() < 1e-12 && (s.y - ey).abs() < 1e-12);
        }
    }

    #[test]
    fn does_not_bridge_gaps() {
        let t = track(&[(0, 0.0, 0.0), (1, 1.0, 0.0), (4, 4.0, 0.0), (5, 5.0, 0.0)]);
        let out = resample(&[t], 15.0, 15.0).unwrap();
        let frames: Vec<i64> = out[0].samples.iter().map(|s| s.frame).collect();
        assert_eq!(frames, vec![0, 1, 4, 5]);
    }

    #[test]
    fn single_sample_passes_through() {
        let out = resample(&[track(&[(4, 1.5, 2.5)])], 30.0, 15.0).unwrap();
        assert_eq!(out[0].samples, vec![Sample::new(2, 1.5, 2.5)]);
    }

    #[test]
    fn rejects_upsampling() {
        assert!(matches!(resample(&[], 10.0, 15.0), Err(Error::Contract(_))));
    }
}
