//! Schema metrics M4 (mandatory attributes), M5 (unknown attributes) and M6
//! (attribute formats). Each counts offending packets, not offending
//! attributes; per-attribute totals are kept as evidence.

use std::collections::BTreeMap;

use crate::model::{Evidence, MetricId, MetricResult};
use crate::schema::{PacketVerdict, ViolationKind};

fn ratio_over<F, K>(
    metric: MetricId,
    verdicts: &[PacketVerdict],
    flagged: F,
    kind: K,
) -> MetricResult
where
    F: Fn(&PacketVerdict) -> bool,
    K: Fn(ViolationKind) -> bool,
{
    let mut per_attribute: BTreeMap<String, u64> = BTreeMap::new();
    let mut violations = 0u64;
    for v in verdicts.iter().filter(|v| flagged(v)) {
        violations += 1;
        let mut attrs: Vec<&str> = v
            .detail
            .iter()
            .filter(|(_, k)| kind(*k))
            .map(|(a, _)| a.as_str())
            .collect();
        attrs.dedup();
        for a in attrs {
            *per_attribute.entry(a.to_string()).or_insert(0) += 1;
        }
    }
    MetricResult::ratio(
        metric,
        violations,
        verdicts.len() as u64,
        Evidence::Schema { per_attribute },
    )
}

pub fn m4_mandatory(verdicts: &[PacketVerdict]) -> MetricResult {
    ratio_over(
        MetricId::M4,
        verdicts,
        |v| v.missing_mandatory,
        |k| k == ViolationKind::MissingMandatory,
    )
}

pub fn m5_unknown(verdicts: &[PacketVerdict]) -> MetricResult {
    ratio_over(
        MetricId::M5,
        verdicts,
        |v| v.has_unknown,
        |k| k == ViolationKind::Unknown,
    )
}

pub fn m6_format(verdicts: &[PacketVerdict]) -> MetricResult {
    ratio_over(
        MetricId::M6,
        verdicts,
        |v| v.has_format_error,
        ViolationKind::is_format,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Score;

    fn verdict(detail: &[(&str, ViolationKind)]) -> PacketVerdict {
        PacketVerdict::from_detail(detail.iter().map(|(a, k)| (a.to_string(), *k)).collect())
    }

    fn clean(n: usize) -> Vec<PacketVerdict> {
        vec![PacketVerdict::default(); n]
    }

    #[test]
    fn mandatory() {
        let mut v = clean(3);
        v.push(verdict(&[("pm25", ViolationKind::MissingMandatory)]));
        assert_eq!(m4_mandatory(&v).score, Score::Value(0.75));
        assert_eq!(m4_mandatory(&clean(4)).score, Score::Value(1.0));

        let mut v = clean(9);
        v.push(verdict(&[
            ("pm25", ViolationKind::MissingMandatory),
            ("pm10", ViolationKind::MissingMandatory),
        ]));
        let r = m4_mandatory(&v);
        assert_eq!(r.score, Score::Value(0.9));
        let Evidence::Schema { per_attribute } = r.evidence else {
            panic!()
        };
        assert_eq!(per_attribute.len(), 2);
        assert_eq!(m4_mandatory(&[]).score, Score::Inapplicable);
    }

    #[test]
    fn unknown() {
        let mut v = clean(4);
        v.push(verdict(&[("debug_flag", ViolationKind::Unknown)]));
        assert_eq!(m5_unknown(&v).score, Score::Value(0.8));
        assert_eq!(m5_unknown(&clean(5)).score, Score::Value(1.0));
        let all = vec![verdict(&[("x", ViolationKind::Unknown)]); 5];
        assert_eq!(m5_unknown(&all).score, Score::Value(0.0));
    }

    #[test]
    fn format() {
        let mut v = clean(4);
        v.push(verdict(&[("pm25", ViolationKind::WrongType)]));
        assert_eq!(m6_format(&v).score, Score::Value(0.8));
        assert_eq!(m6_format(&clean(5)).score, Score::Value(1.0));
    }

    #[test]
    fn metrics_are_independent() {
        let v = vec![
            verdict(&[
                ("a", ViolationKind::MissingMandatory),
                ("b", ViolationKind::Unknown),
                ("c", ViolationKind::OutOfRange),
            ]),
            PacketVerdict::default(),
        ];
        for r in [m4_mandatory(&v), m5_unknown(&v), m6_format(&v)] {
            assert_eq!(r.score, Score::Value(0.5));
            assert_eq!(r.numerator_count, 1);
        }
    }
}
