mod support;

use std::collections::BTreeMap;
use std::sync::Arc;

use dq_core::ingest::{group_by_sensor, write_ndjson};
use dq_core::metrics::iat::regularity_terms;
use dq_core::metrics::{estimate_mode, m1_regularity, m2_outliers, m3_duplicates};
use dq_core::schema::validate_packet;
use dq_core::{
    aggregate, parse_dataset, parse_schema, weighted_score, AssessmentConfig, DataPacket,
    DatasetFormat, DuplicateKey, Evidence, FormatChecks, MetricId, MetricResult, Score, Value,
};
use proptest::prelude::*;
use support::oracle;

fn score(s: Score) -> f64 {
    s.value().expect("applicable")
}

fn ms_iats(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        (1i64..200_000).prop_map(|ms| ms as f64 / 1000.0),
        1..=max_len,
    )
}

fn result(m: MetricId, s: Option<f64>) -> MetricResult {
    MetricResult {
        metric_id: m,
        score: s.map_or(Score::Inapplicable, Score::Value),
        numerator_count: 0,
        denominator_count: 0,
        evidence: Evidence::None,
    }
}

fn scores_and_weights() -> impl Strategy<Value = (Vec<Option<f64>>, Vec<f64>)> {
    (
        prop::collection::vec(prop::option::weighted(0.8, 0.0f64..=1.0), 6),
        prop::collection::vec(0.0f64..10.0, 6),
    )
        .prop_filter("some applicable metric has weight", |(s, w)| {
            s.iter().zip(w).any(|(s, w)| s.is_some() && *w > 1e-6)
        })
}

fn weights(w: &[f64]) -> BTreeMap<MetricId, f64> {
    MetricId::ALL.into_iter().zip(w.iter().copied()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn scaling_iats_and_quantization_preserves_scores(iats in ms_iats(40), k in 1i32..6, up in any::<bool>()) {
        // Powers of two keep the scaled values exact.
        let factor = if up { 2f64.powi(k) } else { 2f64.powi(-k) };
        let scaled: Vec<f64> = iats.iter().map(|x| x * factor).collect();
        let (Ok(a), Ok(b)) = (estimate_mode(&iats, 1.0), estimate_mode(&scaled, factor)) else {
            return Ok(());
        };
        prop_assume!(a.quantization == 1.0 && b.quantization == factor);
        prop_assert_eq!(score(m1_regularity(&iats, &a, 0.5).score), score(m1_regularity(&scaled, &b, 0.5).score));
        prop_assert_eq!(score(m2_outliers(&iats, &a, 3.5).score), score(m2_outliers(&scaled, &b, 3.5).score));
    }

    #[test]
    fn good_window_is_half_mode_either_side(mode_ms in 1_000i64..600_000, x_ms in 0i64..1_200_000) {
        let mode = mode_ms as f64 / 1000.0;
        let x = x_ms as f64 / 1000.0;
        let terms = regularity_terms(&[x], mode, 0.5);
        let in_window = x >= mode - mode / 2.0 && x <= mode + mode / 2.0;
        prop_assert_eq!(terms.good == 1, in_window);
    }

    #[test]
    fn adding_a_regular_iat_never_lowers_regularity(iats in ms_iats(40)) {
        let Ok(model) = estimate_mode(&iats, 1.0) else { return Ok(()) };
        let before = score(m1_regularity(&iats, &model, 0.5).score);
        let mut more = iats.clone();
        more.push(model.mode);
        let model2 = estimate_mode(&more, 1.0).unwrap();
        prop_assert_eq!(model2.mode, model.mode);
        prop_assert!(score(m1_regularity(&more, &model2, 0.5).score) >= before);
    }

    #[test]
    fn adding_a_duplicate_never_raises_m3(ts in prop::collection::vec(0i64..20, 1..40), pick in any::<prop::sample::Index>()) {
        let mut packets: Vec<DataPacket> = ts.iter()
            .map(|&t| DataPacket::new("a", t, BTreeMap::new()).unwrap())
            .collect();
        let before = score(m3_duplicates(&packets, DuplicateKey::IdTimestamp).score);
        packets.push(pick.get(&packets).clone());
        prop_assert!(score(m3_duplicates(&packets, DuplicateKey::IdTimestamp).score) <= before);
    }

    #[test]
    fn aggregate_is_weighted_mean_within_bounds((scores, w) in scores_and_weights(), scale in 0.001f64..1000.0) {
        let results: Vec<MetricResult> = MetricId::ALL.into_iter().zip(&scores).map(|(m, s)| result(m, *s)).collect();
        let r = aggregate(results.clone(), &weights(&w)).unwrap();

        let applicable: Vec<(f64, f64)> = scores.iter().zip(&w).filter_map(|(s, w)| s.map(|s| (s, *w))).collect();
        let from_report: Vec<(f64, f64)> = r.per_metric.iter()
            .filter_map(|m| m.score.value().map(|s| (s, w[m.metric_id as usize])))
            .collect();
        prop_assert!((r.aggregate_score - oracle::weighted_mean(&from_report)).abs() <= 1e-12);
        prop_assert!((r.aggregate_score - oracle::weighted_mean(&applicable)).abs() <= 2e-12);

        let present: Vec<f64> = applicable.iter().filter(|a| a.1 > 0.0).map(|a| a.0).collect();
        let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(r.aggregate_score >= lo - 1e-12 && r.aggregate_score <= hi + 1e-12);

        // Scaling is checked before the report's 12-digit rounding, which could
        // otherwise split two nearly equal values across a rounding boundary.
        let scaled: Vec<(f64, f64)> = applicable.iter().map(|&(s, w)| (s, w * scale)).collect();
        let a = weighted_score(&applicable).unwrap();
        prop_assert!((a - weighted_score(&scaled).unwrap()).abs() <= 1e-12);
        prop_assert!((a - r.aggregate_score).abs() <= 1e-12);

        // Power-of-two factors scale exactly, so the rendered value is identical.
        let doubled: Vec<f64> = w.iter().map(|x| x * 8.0).collect();
        prop_assert_eq!(aggregate(results, &weights(&doubled)).unwrap().aggregate_score, r.aggregate_score);
    }

    #[test]
    fn ndjson_round_trip(rows in prop::collection::vec((0u8..3, 0i64..1_000_000, any::<i32>(), any::<bool>(), "[a-z]{0,6}"), 1..30)) {
        let packets: Vec<DataPacket> = rows.iter().map(|(s, t, n, b, text)| {
            let attrs = BTreeMap::from([
                (Arc::from("sensor_id"), Value::Str(format!("s{s}"))),
                (Arc::from("timestamp"), Value::Int(*t)),
                (Arc::from("n"), Value::Int(*n as i64)),
                (Arc::from("f"), Value::Float(*n as f64 / 7.0)),
                (Arc::from("b"), Value::Bool(*b)),
                (Arc::from("text"), Value::Str(text.clone())),
            ]);
            DataPacket::new(format!("s{s}"), *t, attrs).unwrap()
        }).collect();
        let config = AssessmentConfig::default();
        let mut buf = Vec::new();
        write_ndjson(&packets, &mut buf).unwrap();
        let first = parse_dataset(buf.as_slice(), DatasetFormat::Ndjson, &config).unwrap();
        prop_assert_eq!(&first.packets, &packets);
        let mut again = Vec::new();
        write_ndjson(&first.packets, &mut again).unwrap();
        prop_assert_eq!(again, buf);

        let streams = group_by_sensor(first.packets);
        prop_assert_eq!(streams.iter().map(|s| s.packets().len()).sum::<usize>(), packets.len());
        prop_assert!(streams.iter().all(|s| s.iat_values().iter().all(|&x| x >= 0.0)));
    }

    #[test]
    fn verdict_ignores_attribute_order(perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle(), pm in -10i64..600) {
        let schema = parse_schema(br#"{"properties":{"pm25":{"type":"number","minimum":0,"maximum":500},"name":{"type":"string","pattern":"^s"}},"required":["pm25","name"]}"#).unwrap();
        let fields = [
            "\"sensor_id\":\"a\"".to_string(),
            "\"timestamp\":0".to_string(),
            format!("\"pm25\":{pm}"),
            "\"name\":\"x\"".to_string(),
            "\"extra\":true".to_string(),
        ];
        let reordered: Vec<&String> = perm.iter().map(|&i| &fields[i]).collect();
        let text = |f: Vec<&String>| format!("{{{}}}\n", f.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(","));
        let config = AssessmentConfig::default();
        let a = parse_dataset(text(fields.iter().collect()).as_bytes(), DatasetFormat::Ndjson, &config).unwrap();
        let b = parse_dataset(text(reordered).as_bytes(), DatasetFormat::Ndjson, &config).unwrap();
        let env = ["sensor_id", "timestamp"];
        for checks in [FormatChecks::TypesOnly, FormatChecks::Full] {
            prop_assert_eq!(
                validate_packet(&a.packets[0], &schema, checks, &env),
                validate_packet(&b.packets[0], &schema, checks, &env)
            );
        }
    }
}

#[test]
fn range_only_violation_depends_on_format_checks() {
    let schema = parse_schema(
        br#"{"properties":{"pm25":{"type":"number","maximum":500}},"required":["pm25"]}"#,
    )
    .unwrap();
    let config = AssessmentConfig::default();
    let parsed = parse_dataset(
        &b"{\"sensor_id\":\"a\",\"timestamp\":0,\"pm25\":900}\n{\"sensor_id\":\"a\",\"timestamp\":1,\"pm25\":9}\n"[..],
        DatasetFormat::Ndjson,
        &config,
    )
    .unwrap();
    let env = ["sensor_id", "timestamp"];
    assert!(
        !validate_packet(&parsed.packets[0], &schema, FormatChecks::TypesOnly, &env)
            .has_format_error
    );
    assert!(
        validate_packet(&parsed.packets[0], &schema, FormatChecks::Full, &env).has_format_error
    );
    assert!(validate_packet(&parsed.packets[1], &schema, FormatChecks::Full, &env).is_clean());
}
