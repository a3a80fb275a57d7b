//! Synthetic flow generation and the model bundle file format.
//!
//! A [`Generator`] evaluates the MDN once per state, then produces packets
//! by walking the HMM chain, picking a mixture component, drawing a Gaussian
//! sample in normalized space and mapping it back to bytes and seconds.
//!
//! # Bundle format (version 1)
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes   "FSYNBNDL"
//! version      u32       1
//! meta_len     u32       length of the metadata block
//! meta         utf-8     "key=value\n" lines (protocol, created)
//! n_sections   u32
//! section*     name_len u16, name, dtype u8 (0 = f64, 1 = u64),
//!              ndim u8, dims u64 * ndim, payload (8 bytes per element)
//! trailer      8 bytes   "FSYNEND\0"
//! ```
//!
//! Sections are written in a fixed order so identical bundles serialize to
//! identical bytes.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::hmm::{sample_categorical, GaussComponent, HmmGmmModel};
use crate::mdn::{MdnModel, MixtureParams};
use crate::trace::{Feature, NormalizationStats, PacketRecord};

pub const BUNDLE_MAGIC: &[u8; 8] = b"FSYNBNDL";
pub const BUNDLE_TRAILER: &[u8; 8] = b"FSYNEND\0";
pub const BUNDLE_VERSION: u32 = 1;
pub const BUNDLE_EXTENSION: &str = "fsb";
pub const DEFAULT_MTU: u32 = 1500;
pub const DEFAULT_IAT_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported bundle version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt bundle: {0}")]
    Corrupt(String),
    #[error("bundle invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleMeta {
    pub protocol: String,
    /// Unix seconds.
    pub created: u64,
    pub format_version: u32,
    /// Training flow-length histogram as `(length, count)`, ascending by length.
    pub flow_lengths: Vec<(u64, u64)>,
}

impl Default for BundleMeta {
    fn default() -> Self {
        Self { protocol: String::new(), created: 0, format_version: BUNDLE_VERSION, flow_lengths: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub hmm: HmmGmmModel,
    pub mdn: MdnModel,
    pub norm: NormalizationStats,
    pub mtu: u32,
    pub iat_floor: f64,
    pub meta: BundleMeta,
}

impl ModelBundle {
    pub fn validate(&self) -> Result<(), BundleError> {
        let inv = |m: String| Err(BundleError::Invariant(m));
        self.hmm.validate().map_err(|e| BundleError::Invariant(e.to_string()))?;
        if self.hmm.states != self.mdn.states() {
            return inv(format!("HMM has {} states but MDN expects {}", self.hmm.states, self.mdn.states()));
        }
        if self.mdn.params().iter().any(|p| !p.is_finite()) {
            return inv("non-finite MDN parameter".into());
        }
        NormalizationStats::new(self.norm.mean, self.norm.std).map_err(|e| BundleError::Invariant(e.to_string()))?;
        if self.mtu == 0 {
            return inv("MTU must be positive".into());
        }
        if !(self.iat_floor > 0.0 && self.iat_floor.is_finite()) {
            return inv(format!("iat floor {} must be positive", self.iat_floor));
        }
        if self.meta.flow_lengths.iter().any(|&(len, count)| len == 0 || count == 0) {
            return inv("flow-length histogram has zero entries".into());
        }
        Ok(())
    }
}

/// Flow-length histogram of a set of flows, ascending by length.
pub fn length_histogram<I: IntoIterator<Item = usize>>(lengths: I) -> Vec<(u64, u64)> {
    let mut map = std::collections::BTreeMap::new();
    for l in lengths {
        if l > 0 {
            *map.entry(l as u64).or_insert(0u64) += 1;
        }
    }
    map.into_iter().collect()
}

/// Draws flow lengths from a stored histogram.
pub fn sample_length<R: Rng + ?Sized>(hist: &[(u64, u64)], rng: &mut R) -> usize {
    let counts: Vec<f64> = hist.iter().map(|&(_, c)| c as f64).collect();
    hist[sample_categorical(&counts, rng)].0 as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticPacket {
    pub payload_len: u32,
    pub iat: f64,
    /// Hidden state that emitted the packet.
    pub state: usize,
}

/// Maps a normalized sample back to `(payload bytes, iat seconds)`.
///
/// Payload is `exp(x0) - 1` rounded half-to-even and clamped to `[0, mtu]`;
/// a non-positive iat, or one below `iat_floor`, is replaced by `iat_floor`.
pub fn inverse_transform(z: Feature, norm: &NormalizationStats, mtu: u32, iat_floor: f64) -> (u32, f64) {
    let x = norm.denormalize(z);
    let payload = (x[0].exp() - 1.0).round_ties_even().clamp(0.0, mtu as f64) as u32;
    let iat = if x[1] > iat_floor { x[1] } else { iat_floor };
    (payload, iat)
}

/// One MDN evaluation per state.
pub fn cache_emissions(bundle: &ModelBundle) -> Vec<MixtureParams> {
    (0..bundle.mdn.states()).map(|s| bundle.mdn.forward(s)).collect()
}

#[derive(Debug, Clone)]
struct CachedMixture {
    weights: Vec<f64>,
    means: Vec<Feature>,
    stds: Vec<Feature>,
}

/// A generation session: cached per-state mixtures plus its own RNG.
pub struct Generator<'a> {
    bundle: &'a ModelBundle,
    mixtures: Vec<MixtureParams>,
    cache: Vec<CachedMixture>,
    rng: ChaCha8Rng,
}

impl<'a> Generator<'a> {
    pub fn new(bundle: &'a ModelBundle, seed: u64) -> Self {
        let mixtures = cache_emissions(bundle);
        let cache = mixtures
            .iter()
            .map(|m| CachedMixture {
                weights: m.weights.clone(),
                means: m.means.clone(),
                stds: m.vars.iter().map(|v| [v[0].sqrt(), v[1].sqrt()]).collect(),
            })
            .collect();
        Self { bundle, mixtures, cache, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn cached_mixtures(&self) -> &[MixtureParams] {
        &self.mixtures
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn draw(&mut self, state: usize) -> Feature {
        let mix = &self.cache[state];
        let m = sample_categorical(&mix.weights, &mut self.rng);
        let e0: f64 = self.rng.sample(StandardNormal);
        let e1: f64 = self.rng.sample(StandardNormal);
        [mix.means[m][0] + e0 * mix.stds[m][0], mix.means[m][1] + e1 * mix.stds[m][1]]
    }

    fn next_state(&mut self, prev: Option<usize>) -> usize {
        match prev {
            None => sample_categorical(&self.bundle.hmm.alpha, &mut self.rng),
            Some(s) => sample_categorical(self.bundle.hmm.transition_row(s), &mut self.rng),
        }
    }

    /// Streams one flow of `len` packets.
    pub fn flow(&mut self, len: usize) -> FlowStream<'_, 'a> {
        FlowStream { generator: self, remaining: len, prev: None }
    }

    pub fn generate_flow(&mut self, len: usize) -> Vec<SyntheticPacket> {
        self.flow(len).collect()
    }

    /// Normalized-space draws (before the inverse transform) with their states.
    pub fn latent_flow(&mut self, len: usize) -> Vec<(usize, Feature)> {
        let mut prev = None;
        (0..len)
            .map(|_| {
                let s = self.next_state(prev);
                prev = Some(s);
                (s, self.draw(s))
            })
            .collect()
    }
}

pub struct FlowStream<'g, 'a> {
    generator: &'g mut Generator<'a>,
    remaining: usize,
    prev: Option<usize>,
}

impl Iterator for FlowStream<'_, '_> {
    type Item = SyntheticPacket;

    fn next(&mut self) -> Option<SyntheticPacket> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let g = &mut *self.generator;
        let state = g.next_state(self.prev);
        self.prev = Some(state);
        let z = g.draw(state);
        let (payload_len, iat) = inverse_transform(z, &g.bundle.norm, g.bundle.mtu, g.bundle.iat_floor);
        Some(SyntheticPacket { payload_len, iat, state })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

/// Single flow of length `len` from a fresh session seeded with `seed`.
pub fn generate_flow(bundle: &ModelBundle, len: usize, seed: u64) -> Vec<SyntheticPacket> {
    Generator::new(bundle, seed).generate_flow(len)
}

/// One flow per entry of `lengths`, drawn sequentially from one session.
pub fn generate_flows(bundle: &ModelBundle, lengths: &[usize], seed: u64) -> Vec<Vec<SyntheticPacket>> {
    let mut g = Generator::new(bundle, seed);
    lengths.iter().map(|&l| g.generate_flow(l)).collect()
}

/// Converts synthetic flows to trace records with flow ids `0..n`.
pub fn to_records(flows: &[Vec<SyntheticPacket>]) -> Vec<PacketRecord> {
    flows
        .iter()
        .enumerate()
        .flat_map(|(id, f)| f.iter().map(move |p| PacketRecord::new(id as u64, p.payload_len as f64, p.iat)))
        .collect()
}

enum Section<'s> {
    Real(&'s str, Vec<u64>, Vec<f64>),
    Int(&'s str, Vec<u64>, Vec<u64>),
}

fn sections(b: &ModelBundle) -> Vec<Section<'static>> {
    let (k, j) = (b.hmm.states as u64, b.hmm.components as u64);
    let comps: Vec<&GaussComponent> = b.hmm.emissions.iter().flatten().collect();
    let lengths: Vec<u64> = b.meta.flow_lengths.iter().flat_map(|&(l, c)| [l, c]).collect();
    vec![
        Section::Int("hmm.shape", vec![2], vec![k, j]),
        Section::Real("hmm.alpha", vec![k], b.hmm.alpha.clone()),
        Section::Real("hmm.trans", vec![k, k], b.hmm.trans.clone()),
        Section::Real("hmm.weight", vec![k, j], comps.iter().map(|c| c.weight).collect()),
        Section::Real("hmm.mean", vec![k, j, 2], comps.iter().flat_map(|c| c.mean).collect()),
        Section::Real("hmm.var", vec![k, j, 2], comps.iter().flat_map(|c| c.var).collect()),
        Section::Real("hmm.min_covar", vec![1], vec![b.hmm.min_covar]),
        Section::Int("mdn.shape", vec![3], vec![b.mdn.states() as u64, b.mdn.hidden() as u64, b.mdn.mixtures() as u64]),
        Section::Real("mdn.params", vec![b.mdn.param_count() as u64], b.mdn.params().to_vec()),
        Section::Real("norm.mean", vec![2], b.norm.mean.to_vec()),
        Section::Real("norm.std", vec![2], b.norm.std.to_vec()),
        Section::Int("gen.mtu", vec![1], vec![b.mtu as u64]),
        Section::Real("gen.iat_floor", vec![1], vec![b.iat_floor]),
        Section::Int("meta.flow_lengths", vec![b.meta.flow_lengths.len() as u64, 2], lengths),
    ]
}

fn check_meta_value(v: &str) -> Result<(), BundleError> {
    if v.contains('\n') || v.contains('=') {
        return Err(BundleError::Invariant(format!("metadata value {v:?} contains '=' or a newline")));
    }
    Ok(())
}

/// Serializes a bundle. Identical bundles produce identical bytes.
pub fn save_bundle<W: Write>(bundle: &ModelBundle, mut sink: W) -> Result<(), BundleError> {
    bundle.validate()?;
    check_meta_value(&bundle.meta.protocol)?;
    sink.write_all(&encode(bundle))?;
    sink.flush()?;
    Ok(())
}

fn encode(bundle: &ModelBundle) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BUNDLE_MAGIC);
    out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    let meta = format!("protocol={}\ncreated={}\n", bundle.meta.protocol, bundle.meta.created);
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    let secs = sections(bundle);
    out.extend_from_slice(&(secs.len() as u32).to_le_bytes());
    for sec in &secs {
        let (name, dtype, dims) = match sec {
            Section::Real(n, d, _) => (n, 0u8, d),
            Section::Int(n, d, _) => (n, 1u8, d),
        };
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dtype);
        out.push(dims.len() as u8);
        for d in dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match sec {
            Section::Real(_, _, data) => data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Section::Int(_, _, data) => data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }
    out.extend_from_slice(BUNDLE_TRAILER);
    out
}

pub fn bundle_to_bytes(bundle: &ModelBundle) -> Result<Vec<u8>, BundleError> {
    let mut out = Vec::new();
    save_bundle(bundle, &mut out)?;
    Ok(out)
}

struct Cursor<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Cursor<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8], BundleError> {
        if self.buf.len() - self.pos < n {
            return Err(BundleError::Corrupt(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, BundleError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, BundleError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, BundleError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, BundleError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[derive(Default)]
struct RawSections {
    real: std::collections::HashMap<String, (Vec<u64>, Vec<f64>)>,
    int: std::collections::HashMap<String, (Vec<u64>, Vec<u64>)>,
}

impl RawSections {
    fn real(&self, name: &str, dims: &[u64]) -> Result<&[f64], BundleError> {
        let (d, v) = self.real.get(name).ok_or_else(|| BundleError::Corrupt(format!("missing section {name}")))?;
        if d != dims {
            return Err(BundleError::Invariant(format!("section {name} has shape {d:?}, expected {dims:?}")));
        }
        Ok(v)
    }

    fn int(&self, name: &str) -> Result<(&[u64], &[u64]), BundleError> {
        let (d, v) = self.int.get(name).ok_or_else(|| BundleError::Corrupt(format!("missing section {name}")))?;
        Ok((d, v))
    }
}

pub fn load_bundle<R: Read>(mut source: R) -> Result<ModelBundle, BundleError> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    bundle_from_bytes(&buf)
}

pub fn bundle_from_bytes(buf: &[u8]) -> Result<ModelBundle, BundleError> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(8).map_err(|_| BundleError::Corrupt("missing magic".into()))? != BUNDLE_MAGIC {
        return Err(BundleError::Corrupt("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != BUNDLE_VERSION {
        return Err(BundleError::Version { found: version, expected: BUNDLE_VERSION });
    }
    let meta_len = cur.u32()? as usize;
    let meta_text = std::str::from_utf8(cur.take(meta_len)?)
        .map_err(|_| BundleError::Corrupt("metadata is not utf-8".into()))?;
    let mut meta = BundleMeta::default();
    for line in meta_text.lines().filter(|l| !l.is_empty()) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| BundleError::Corrupt(format!("bad metadata line {line:?}")))?;
        match key {
            "protocol" => meta.protocol = value.to_string(),
            "created" => {
                meta.created = value.parse().map_err(|_| BundleError::Corrupt(format!("bad timestamp {value:?}")))?
            }
            _ => {}
        }
    }

    let n = cur.u32()?;
    let mut raw = RawSections::default();
    for _ in 0..n {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| BundleError::Corrupt("section name is not utf-8".into()))?
            .to_string();
        let dtype = cur.u8()?;
        let ndim = cur.u8()? as usize;
        let dims = (0..ndim).map(|_| cur.u64()).collect::<Result<Vec<_>, _>>()?;
        let count = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .filter(|&c| c <= (buf.len() / 8) as u64)
            .ok_or_else(|| BundleError::Corrupt(format!("section {name} has implausible shape {dims:?}")))?
            as usize;
        let bytes = cur.take(count * 8)?;
        let words = bytes.chunks_exact(8).map(|c| <[u8; 8]>::try_from(c).unwrap());
        match dtype {
            0 => {
                raw.real.insert(name, (dims, words.map(f64::from_le_bytes).collect()));
            }
            1 => {
                raw.int.insert(name, (dims, words.map(u64::from_le_bytes).collect()));
            }
            other => return Err(BundleError::Corrupt(format!("unknown dtype {other} in section {name}"))),
        }
    }
    if cur.take(8)? != BUNDLE_TRAILER {
        return Err(BundleError::Corrupt("bad trailer".into()));
    }
    if cur.pos != buf.len() {
        return Err(BundleError::Corrupt(format!("{} trailing bytes", buf.len() - cur.pos)));
    }

    let (_, shape) = raw.int("hmm.shape")?;
    let [k, j] = <[u64; 2]>::try_from(shape).map_err(|_| BundleError::Corrupt("bad hmm.shape".into()))?;
    let alpha = raw.real("hmm.alpha", &[k])?.to_vec();
    let trans = raw.real("hmm.trans", &[k, k])?.to_vec();
    let weight = raw.real("hmm.weight", &[k, j])?;
    let mean = raw.real("hmm.mean", &[k, j, 2])?;
    let var = raw.real("hmm.var", &[k, j, 2])?;
    let min_covar = raw.real("hmm.min_covar", &[1])?[0];
    let (k, j) = (k as usize, j as usize);
    let emissions = (0..k)
        .map(|s| {
            (0..j)
                .map(|c| {
                    let i = s * j + c;
                    GaussComponent { weight: weight[i], mean: [mean[2 * i], mean[2 * i + 1]], var: [var[2 * i], var[2 * i + 1]] }
                })
                .collect()
        })
        .collect();
    let hmm = HmmGmmModel { states: k, components: j, alpha, trans, emissions, min_covar };

    let (_, mshape) = raw.int("mdn.shape")?;
    let [mk, mq, mm] = <[u64; 3]>::try_from(mshape).map_err(|_| BundleError::Corrupt("bad mdn.shape".into()))?;
    let count = crate::mdn::mdn_param_count(mk as usize, mq as usize, mm as usize) as u64;
    let params = raw.real("mdn.params", &[count])?.to_vec();
    let mdn = MdnModel::from_params(mk as usize, mq as usize, mm as usize, params)
        .map_err(|e| BundleError::Invariant(e.to_string()))?;

    let nm = raw.real("norm.mean", &[2])?;
    let ns = raw.real("norm.std", &[2])?;
    let norm = NormalizationStats { mean: [nm[0], nm[1]], std: [ns[0], ns[1]] };
    let (_, mtu) = raw.int("gen.mtu")?;
    let mtu = u32::try_from(*mtu.first().ok_or_else(|| BundleError::Corrupt("empty gen.mtu".into()))?)
        .map_err(|_| BundleError::Invariant("MTU out of range".into()))?;
    let iat_floor = raw.real("gen.iat_floor", &[1])?[0];
    let (ldims, lengths) = raw.int("meta.flow_lengths")?;
    if ldims.len() != 2 || ldims[1] != 2 {
        return Err(BundleError::Corrupt("bad meta.flow_lengths shape".into()));
    }
    meta.flow_lengths = lengths.chunks_exact(2).map(|c| (c[0], c[1])).collect();

    let bundle = ModelBundle { hmm, mdn, norm, mtu, iat_floor, meta };
    bundle.validate()?;
    Ok(bundle)
}
