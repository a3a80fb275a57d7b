//! Packet trace ingestion, cleaning, featurization and flow-level splitting.
//!
//! A trace is a CSV of `flow_id,payload_len,iat` rows. Packets are grouped
//! into [`Flow`]s by identifier (first-appearance order, arrival order kept
//! inside each flow). Features live in a log-payload / IAT space that is
//! standardized with statistics pooled over the whole training set.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Two-dimensional feature vector: `[log-payload, iat]` in raw or normalized units.
pub type Feature = [f64; 2];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("split error: {0}")]
    Split(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketRecord {
    pub flow_id: u64,
    /// Payload length in bytes.
    pub payload_len: f64,
    /// Inter-arrival time in seconds.
    pub iat: f64,
}

impl PacketRecord {
    pub fn new(flow_id: u64, payload_len: f64, iat: f64) -> Self {
        Self { flow_id, payload_len, iat }
    }

    fn is_clean(&self) -> bool {
        self.payload_len.is_finite()
            && self.iat.is_finite()
            && self.payload_len >= 0.0
            && self.iat >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub flow_id: u64,
    pub packets: Vec<PacketRecord>,
}

impl Flow {
    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn payloads(&self) -> Vec<f64> {
        self.packets.iter().map(|p| p.payload_len).collect()
    }

    pub fn iats(&self) -> Vec<f64> {
        self.packets.iter().map(|p| p.iat).collect()
    }
}

/// Header handling for [`parse_trace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeaderMode {
    /// Treat the first line as a header when it names a required column or
    /// has no numeric field.
    #[default]
    Auto,
    Present,
    Absent,
}

/// Describes how a CSV trace maps onto the three required columns.
///
/// Without a header the columns are positional (`flow_id,payload_len,iat`).
/// With a header, columns are located by name and extra columns are ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceFormat {
    pub header: HeaderMode,
    pub flow_column: String,
    pub payload_column: String,
    pub iat_column: String,
}

impl Default for TraceFormat {
    fn default() -> Self {
        Self {
            header: HeaderMode::Auto,
            flow_column: "flow_id".into(),
            payload_column: "payload_len".into(),
            iat_column: "iat".into(),
        }
    }
}

/// Reads packet records from a CSV byte stream.
pub fn parse_trace<R: Read>(source: R, format: &TraceFormat) -> Result<Vec<PacketRecord>, TraceError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(source);

    let mut records = Vec::new();
    let mut columns: Option<[usize; 3]> = None;
    let mut first = true;
    for row in reader.records() {
        let row = row.map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => TraceError::Io(std::io::Error::other(e.to_string())),
            _ => TraceError::Parse {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                msg: e.to_string(),
            },
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        if first {
            first = false;
            let names = [&format.flow_column, &format.payload_column, &format.iat_column];
            let looks_like_header = row.iter().any(|f| names.iter().any(|n| n.as_str() == f))
                || row.iter().all(|f| f.parse::<f64>().is_err());
            let is_header = match format.header {
                HeaderMode::Present => true,
                HeaderMode::Absent => false,
                HeaderMode::Auto => looks_like_header,
            };
            if is_header {
                columns = Some(locate_columns(&row, format)?);
                continue;
            }
        }
        let [fi, pi, ii] = columns.unwrap_or([0, 1, 2]);
        let needed = fi.max(pi).max(ii);
        if row.len() <= needed {
            return Err(TraceError::Schema(format!(
                "line {line}: expected at least {} columns, found {}",
                needed + 1,
                row.len()
            )));
        }
        let flow_id = row[fi].parse::<u64>().map_err(|_| TraceError::Parse {
            line,
            msg: format!("invalid flow id {:?}", &row[fi]),
        })?;
        let payload_len = parse_real(&row[pi], line, "payload_len")?;
        let iat = parse_real(&row[ii], line, "iat")?;
        records.push(PacketRecord { flow_id, payload_len, iat });
    }
    Ok(records)
}

fn parse_real(field: &str, line: u64, name: &str) -> Result<f64, TraceError> {
    field.parse::<f64>().map_err(|_| TraceError::Parse {
        line,
        msg: format!("invalid {name} {field:?}"),
    })
}

fn locate_columns(header: &csv::StringRecord, format: &TraceFormat) -> Result<[usize; 3], TraceError> {
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TraceError::Schema(format!("missing column {name:?}")))
    };
    Ok([
        find(&format.flow_column)?,
        find(&format.payload_column)?,
        find(&format.iat_column)?,
    ])
}

/// Writes records in the canonical `flow_id,payload_len,iat` schema with a header.
pub fn write_trace<W: Write>(sink: W, records: &[PacketRecord]) -> Result<(), TraceError> {
    let mut w = std::io::BufWriter::new(sink);
    writeln!(w, "flow_id,payload_len,iat")?;
    for r in records {
        writeln!(w, "{},{},{}", r.flow_id, r.payload_len, r.iat)?;
    }
    w.flush()?;
    Ok(())
}

/// Keeps the records with finite, non-negative fields and `iat <= iat_cap`.
pub fn clean(records: &[PacketRecord], iat_cap: f64) -> Vec<PacketRecord> {
    records
        .iter()
        .filter(|r| r.is_clean() && r.iat <= iat_cap)
        .copied()
        .collect()
}

/// q-quantile of the finite iat values, linearly interpolated between order statistics.
pub fn percentile_cap(records: &[PacketRecord], q: f64) -> Result<f64, TraceError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(TraceError::Domain(format!("quantile {q} outside (0, 1)")));
    }
    let mut iats: Vec<f64> = records.iter().map(|r| r.iat).filter(|v| v.is_finite()).collect();
    if iats.is_empty() {
        return Err(TraceError::Domain("percentile of an empty trace".into()));
    }
    iats.sort_by(f64::total_cmp);
    let pos = q * (iats.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(iats[lo] + (iats[hi] - iats[lo]) * frac)
}

/// Groups records by flow id, in order of first appearance.
pub fn group_flows(records: &[PacketRecord]) -> Vec<Flow> {
    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut flows: Vec<Flow> = Vec::new();
    for r in records {
        let slot = *index.entry(r.flow_id).or_insert_with(|| {
            flows.push(Flow { flow_id: r.flow_id, packets: Vec::new() });
            flows.len() - 1
        });
        flows[slot].packets.push(*r);
    }
    flows
}

/// Flattens flows back into a record list, flow by flow.
pub fn flatten_flows(flows: &[Flow]) -> Vec<PacketRecord> {
    flows.iter().flat_map(|f| f.packets.iter().copied()).collect()
}

/// Raw feature `[ln(1 + payload_len), iat]`.
pub fn featurize(record: &PacketRecord) -> Feature {
    [record.payload_len.ln_1p(), record.iat]
}

/// Per-dimension mean and population standard deviation of the raw features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationStats {
    pub mean: Feature,
    pub std: Feature,
}

impl NormalizationStats {
    pub fn new(mean: Feature, std: Feature) -> Result<Self, TraceError> {
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
            return Err(TraceError::Degenerate(format!("invalid normalization stats {mean:?} / {std:?}")));
        }
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, x: Feature) -> Feature {
        [(x[0] - self.mean[0]) / self.std[0], (x[1] - self.mean[1]) / self.std[1]]
    }

    pub fn denormalize(&self, z: Feature) -> Feature {
        [z[0] * self.std[0] + self.mean[0], z[1] * self.std[1] + self.mean[1]]
    }
}

pub fn fit_normalizer(train: &[Flow]) -> Result<NormalizationStats, TraceError> {
    let n: usize = train.iter().map(Flow::len).sum();
    if n < 2 {
        return Err(TraceError::Degenerate(format!("need at least 2 packets, got {n}")));
    }
    let feats = || train.iter().flat_map(|f| f.packets.iter().map(featurize));
    let mut mean = [0.0; 2];
    for x in feats() {
        mean[0] += x[0];
        mean[1] += x[1];
    }
    mean[0] /= n as f64;
    mean[1] /= n as f64;
    let mut var = [0.0; 2];
    for x in feats() {
        var[0] += (x[0] - mean[0]).powi(2);
        var[1] += (x[1] - mean[1]).powi(2);
    }
    let std = [(var[0] / n as f64).sqrt(), (var[1] / n as f64).sqrt()];
    for (d, s) in std.iter().enumerate() {
        if !(*s > 0.0) {
            return Err(TraceError::Degenerate(format!("zero variance in feature dimension {d}")));
        }
    }
    NormalizationStats::new(mean, std)
}

/// Normalized feature sequence of one flow.
pub fn normalize_flow(flow: &Flow, stats: &NormalizationStats) -> Vec<Feature> {
    flow.packets.iter().map(|p| stats.normalize(featurize(p))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Flow>,
    pub test: Vec<Flow>,
}

/// Seeded shuffle of flows; the first `round(train_frac * n)` (clamped to
/// leave at least one flow on each side) become the training set.
pub fn split_flows(flows: &[Flow], train_frac: f64, seed: u64) -> Result<DatasetSplit, TraceError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(TraceError::Split(format!("train fraction {train_frac} outside (0, 1)")));
    }
    let n = flows.len();
    if n < 2 {
        return Err(TraceError::Split(format!("need at least 2 flows, got {n}")));
    }
    let n_train = ((train_frac * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = order[..n_train].iter().map(|&i| flows[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| flows[i].clone()).collect();
    Ok(DatasetSplit { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(f: u64, p: f64, i: f64) -> PacketRecord {
        PacketRecord::new(f, p, i)
    }

    fn flows_of(n: usize) -> Vec<Flow> {
        (0..n as u64)
            .map(|id| Flow { flow_id: id, packets: vec![rec(id, 10.0 * id as f64, 0.001)] })
            .collect()
    }

    #[test]
    fn parses_plain_rows() {
        let got = parse_trace("1,1500,0.002\n1,40,0.0001".as_bytes(), &TraceFormat::default()).unwrap();
        assert_eq!(got, vec![rec(1, 1500.0, 0.002), rec(1, 40.0, 0.0001)]);
    }

    #[test]
    fn empty_stream_is_empty() {
        assert!(parse_trace("".as_bytes(), &TraceFormat::default()).unwrap().is_empty());
    }

    #[test]
    fn non_numeric_field_reports_line() {
        let err = parse_trace("1,abc,0.1".as_bytes(), &TraceFormat::default()).unwrap_err();
        match err {
            TraceError::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_trace("1,2,0.1\n2,3,x".as_bytes(), &TraceFormat { header: HeaderMode::Absent, ..Default::default() })
            .unwrap_err();
        assert!(matches!(err, TraceError::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn header_by_name_and_missing_column() {
        let src = "iat,flow_id,extra,payload_len\n0.5,7,x,100\n";
        let got = parse_trace(src.as_bytes(), &TraceFormat::default()).unwrap();
        assert_eq!(got, vec![rec(7, 100.0, 0.5)]);

        let err = parse_trace("flow_id,payload_len\n1,2\n".as_bytes(), &TraceFormat::default()).unwrap_err();
        assert!(matches!(err, TraceError::Schema(_)), "{err:?}");
        let err = parse_trace("1,2\n".as_bytes(), &TraceFormat::default()).unwrap_err();
        assert!(matches!(err, TraceError::Schema(_)), "{err:?}");
    }

    #[test]
    fn clean_drops_above_cap_and_non_finite() {
        let recs = vec![rec(1, 10.0, 0.030), rec(1, 10.0, f64::NAN), rec(1, 10.0, 0.025), rec(2, f64::INFINITY, 0.0)];
        assert_eq!(clean(&recs, 0.025), vec![rec(1, 10.0, 0.025)]);
        let ok = vec![rec(1, 1.0, 0.001), rec(2, 2.0, 0.002)];
        assert_eq!(clean(&ok, 0.025), ok);
    }

    #[test]
    fn percentile_cases() {
        // Brute-force: sorted iats 1..=100 ms, position 0.98 * 99 = 97.02.
        let recs: Vec<_> = (1..=100).rev().map(|i| rec(0, 0.0, i as f64 * 1e-3)).collect();
        let mut sorted: Vec<f64> = recs.iter().map(|r| r.iat).collect();
        sorted.sort_by(f64::total_cmp);
        let oracle = sorted[97] + 0.02 * (sorted[98] - sorted[97]);
        let cap = percentile_cap(&recs, 0.98).unwrap();
        assert!((cap - oracle).abs() < 1e-15);
        assert!((cap - 0.098).abs() < 1e-3);

        assert_eq!(percentile_cap(&[rec(0, 0.0, 0.7)], 0.3).unwrap(), 0.7);
        let same = vec![rec(0, 0.0, 0.004); 9];
        assert_eq!(percentile_cap(&same, 0.98).unwrap(), 0.004);
        assert!(matches!(percentile_cap(&[], 0.5), Err(TraceError::Domain(_))));
    }

    #[test]
    fn featurize_examples() {
        assert_eq!(featurize(&rec(0, 0.0, 0.001)), [0.0, 0.001]);
        let x = featurize(&rec(0, 1499.0, 0.0));
        assert!((x[0] - 7.313220387090301).abs() < 1e-12);
        let x = featurize(&rec(0, std::f64::consts::E - 1.0, 0.5));
        assert!((x[0] - 1.0).abs() < 1e-15 && x[1] == 0.5);
    }

    #[test]
    fn normalizer_symmetric_pair() {
        // x = [0,0] and [2,2]  <=>  payload = 0 / e^2 - 1, iat = 0 / 2.
        let flows = vec![Flow {
            flow_id: 0,
            packets: vec![rec(0, 0.0, 0.0), rec(0, 2f64.exp() - 1.0, 2.0)],
        }];
        let s = fit_normalizer(&flows).unwrap();
        for d in 0..2 {
            assert!((s.mean[d] - 1.0).abs() < 1e-12);
            assert!((s.std[d] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalizer_matches_two_pass_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let flows: Vec<Flow> = (0..10)
            .map(|id| Flow {
                flow_id: id,
                packets: (0..100).map(|_| rec(id, rng.gen_range(0.0..1500.0), rng.gen_range(0.0..0.02))).collect(),
            })
            .collect();
        let s = fit_normalizer(&flows).unwrap();
        let xs: Vec<Feature> = flows.iter().flat_map(|f| f.packets.iter()).map(|p| [(1.0 + p.payload_len).ln(), p.iat]).collect();
        for d in 0..2 {
            let m = xs.iter().map(|x| x[d]).sum::<f64>() / xs.len() as f64;
            let v = xs.iter().map(|x| (x[d] - m) * (x[d] - m)).sum::<f64>() / xs.len() as f64;
            assert!((s.mean[d] - m).abs() < 1e-12);
            assert!((s.std[d] - v.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn normalizer_degenerate() {
        let flows = vec![Flow { flow_id: 0, packets: vec![rec(0, 5.0, 0.1); 4] }];
        assert!(matches!(fit_normalizer(&flows), Err(TraceError::Degenerate(_))));
    }

    #[test]
    fn normalize_anchor_points() {
        let s = NormalizationStats::new([3.0, 0.25], [2.0, 0.125]).unwrap();
        assert_eq!(s.normalize(s.mean), [0.0, 0.0]);
        assert_eq!(s.normalize([5.0, 0.375]), [1.0, 1.0]);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let flows = flows_of(10);
        let s = split_flows(&flows, 0.9, 7).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (9, 1));
        assert_eq!(s, split_flows(&flows, 0.9, 7).unwrap());

        let s = split_flows(&flows_of(2), 0.9, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (1, 1));
        assert!(matches!(split_flows(&flows_of(1), 0.9, 1), Err(TraceError::Split(_))));
    }

    #[test]
    fn split_is_a_partition() {
        let flows = flows_of(37);
        let s = split_flows(&flows, 0.7, 99).unwrap();
        let mut ids: Vec<u64> = s.train.iter().chain(&s.test).map(|f| f.flow_id).collect();
        ids.sort();
        assert_eq!(ids, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn grouping_keeps_arrival_order() {
        let recs = vec![rec(5, 1.0, 0.0), rec(2, 2.0, 0.0), rec(5, 3.0, 0.0)];
        let flows = group_flows(&recs);
        assert_eq!(flows.len(), 2);
        assert_eq!(flows[0].flow_id, 5);
        assert_eq!(flows[0].payloads(), vec![1.0, 3.0]);
        assert!(flows.iter().all(|f| f.packets.iter().all(|p| p.flow_id == f.flow_id)));
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(vals in prop::collection::vec((0u64..4, -10.0f64..2000.0, -0.01f64..0.05), 0..60), cap in 0.001f64..0.05) {
            let recs: Vec<_> = vals.into_iter().map(|(f, p, i)| rec(f, p, i)).collect();
            let once = clean(&recs, cap);
            prop_assert_eq!(clean(&once, cap), once);
        }

        #[test]
        fn featurize_monotone_in_payload(a in 0.0f64..1e6, b in 0.0f64..1e6, iat in 0.0f64..1.0) {
            prop_assume!(a < b);
            prop_assert!(featurize(&rec(0, a, iat))[0] < featurize(&rec(0, b, iat))[0]);
        }

        #[test]
        fn normalize_round_trip(x0 in -1e3f64..1e3, x1 in -1e3f64..1e3, m0 in -10.0f64..10.0, m1 in -1.0f64..1.0,
                                s0 in 1e-3f64..100.0, s1 in 1e-6f64..10.0) {
            let s = NormalizationStats::new([m0, m1], [s0, s1]).unwrap();
            let back = s.denormalize(s.normalize([x0, x1]));
            prop_assert!((back[0] - x0).abs() <= 1e-12 * x0.abs().max(1.0));
            prop_assert!((back[1] - x1).abs() <= 1e-12 * x1.abs().max(1.0));
        }
    }
}
