//! Straight transcriptions of the metric formulas, written for clarity over
//! speed. Shared by the core tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeMap;

/// Most frequent bin of `round(x / q)`, smallest bin on ties, refining `q`
/// tenfold while the winner is the zero bin.
pub fn mode(iats: &[f64], q: f64) -> Option<f64> {
    let mut divisor = 1.0;
    loop {
        let bins: Vec<i64> = iats
            .iter()
            .map(|x| (x * divisor / q).round() as i64)
            .collect();
        let mut best: Option<(i64, usize)> = None;
        for &b in &bins {
            let count = bins.iter().filter(|&&c| c == b).count();
            best = match best {
                Some((bb, bc)) if bc > count || (bc == count && bb <= b) => Some((bb, bc)),
                _ => Some((b, count)),
            };
        }
        let (b, _) = best?;
        if b != 0 {
            return Some(b as f64 * q / divisor);
        }
        if q / divisor <= 0.001 + 1e-12 {
            return None;
        }
        divisor *= 10.0;
    }
}

pub fn rae(x: f64, mode: f64) -> f64 {
    (x - mode).abs() / mode
}

/// Regularity with the crossover at 0.5:
/// sum over good of (1 - 2 RAE) / (count of good + sum over poor of 2 RAE).
pub fn m1(iats: &[f64], mode: f64) -> f64 {
    let (num, den) = m1_sums(iats, mode);
    num / den
}

pub fn m1_sums(iats: &[f64], mode: f64) -> (f64, f64) {
    let mut good_sum = 0.0;
    let mut good_count = 0.0;
    let mut poor_sum = 0.0;
    for &x in iats {
        let r = rae(x, mode);
        if r <= 0.5 {
            good_sum += 1.0 - 2.0 * r;
            good_count += 1.0;
        } else {
            poor_sum += 2.0 * r;
        }
    }
    (good_sum, good_count + poor_sum)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median absolute deviation around the mode.
pub fn mad(iats: &[f64], mode: f64) -> f64 {
    let dev: Vec<f64> = iats.iter().map(|x| (x - mode).abs()).collect();
    median(&dev)
}

/// Modified Z-scores, with the mean absolute deviation standing in when the
/// MAD is zero and all scores zero when both are.
pub fn z_scores(iats: &[f64], mode: f64) -> Vec<f64> {
    let m = mad(iats, mode);
    if m > 0.0 {
        return iats.iter().map(|x| 0.6745 * (x - mode) / m).collect();
    }
    let mean_ad = iats.iter().map(|x| (x - mode).abs()).sum::<f64>() / iats.len() as f64;
    if mean_ad > 0.0 {
        iats.iter().map(|x| 0.7979 * (x - mode) / mean_ad).collect()
    } else {
        vec![0.0; iats.len()]
    }
}

pub fn m2(iats: &[f64], mode: f64) -> f64 {
    let outliers = z_scores(iats, mode)
        .iter()
        .filter(|z| z.abs() > 3.5)
        .count();
    1.0 - outliers as f64 / iats.len() as f64
}

/// Every occurrence of a key after its first counts once.
pub fn m3<K: PartialEq>(keys: &[K]) -> f64 {
    let extra = (0..keys.len())
        .filter(|&i| keys[..i].contains(&keys[i]))
        .count();
    1.0 - extra as f64 / keys.len() as f64
}

pub fn weighted_mean(scores: &[(f64, f64)]) -> f64 {
    let total: f64 = scores.iter().map(|s| s.1).sum();
    scores.iter().map(|(s, w)| s * w).sum::<f64>() / total
}

/// Timestamp of an NDJSON field: integer epoch ms or RFC 3339.
pub fn timestamp_ms(v: &serde_json::Value) -> i64 {
    match v {
        serde_json::Value::Number(n) => n.as_i64().expect("integer timestamp"),
        serde_json::Value::String(s) => chrono::DateTime::parse_from_rfc3339(s)
            .expect("rfc3339 timestamp")
            .timestamp_millis(),
        other => panic!("unexpected timestamp {other}"),
    }
}

/// Per-sensor IATs in seconds from NDJSON text, with repeated
/// (sensor, timestamp) pairs removed first.
pub fn iats_by_sensor(ndjson: &str, id_field: &str, ts_field: &str) -> BTreeMap<String, Vec<f64>> {
    let mut times: BTreeMap<String, Vec<i64>> = BTreeMap::new();
    for line in ndjson.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line).expect("json line");
        let id = match &v[id_field] {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        times
            .entry(id)
            .or_default()
            .push(timestamp_ms(&v[ts_field]));
    }
    times
        .into_iter()
        .map(|(id, mut t)| {
            t.sort_unstable();
            t.dedup();
            let iats = t
                .windows(2)
                .map(|w| (w[1] - w[0]) as f64 / 1000.0)
                .collect();
            (id, iats)
        })
        .collect()
}

/// Pooled regularity over sensors, each with its own mode.
pub fn pooled_m1(per_sensor: &BTreeMap<String, Vec<f64>>, q: f64) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for iats in per_sensor.values().filter(|v| !v.is_empty()) {
        let m = mode(iats, q)?;
        let (n, d) = m1_sums(iats, m);
        num += n;
        den += d;
    }
    (den > 0.0).then(|| num / den)
}
