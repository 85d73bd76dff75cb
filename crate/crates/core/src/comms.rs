//! Packaging of Gaussians for transmission: rigid alignment into the
//! receiver's frame, ROI culling, stacking, the GMSG wire format, budget
//! enforcement and communication-volume accounting.
//!
//! GMSG layout (little-endian). Header, 24 bytes: magic `GMSG`, u16 version,
//! u16 precision code (0 = fp16, 1 = fp32), u32 sender, u32 receiver,
//! u32 frame tag, u32 count. Then `count` records of 24 scalars each: mean(3),
//! scale(3), rotation (w, x, y, z), opacity, semantics(13).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use half::f16;
use serde::{Deserialize, Serialize};

use crate::classes::NUM_CLASSES;
use crate::error::{DecodeError, Error, Result};
use crate::gaussian::SemanticGaussian;
use crate::geometry::{Quat, RigidTransform, Roi, Vec3};

pub const GMSG_MAGIC: [u8; 4] = *b"GMSG";
pub const GMSG_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;
pub const SCALARS_PER_RECORD: usize = 3 + 3 + 4 + 1 + NUM_CLASSES;

/// Maps `g` from the sender frame into the receiver frame: the mean is moved
/// rigidly, the rotation is left-multiplied by the transform's quaternion,
/// and scale, opacity and semantics are carried over unchanged.
pub fn transform_gaussian(g: &SemanticGaussian, t: &RigidTransform) -> SemanticGaussian {
    // product of unit quaternions is unit up to rounding; only fix the sign
    let r = t.rotation() * g.rotation;
    let rotation = r.scaled(r.canonical_sign());
    SemanticGaussian {
        mean: t.apply(&g.mean),
        scale: g.scale,
        rotation,
        opacity: g.opacity,
        semantics: g.semantics,
    }
}

/// Transforms every Gaussian and keeps those whose transformed mean lies in
/// the (closed) ROI box.
pub fn cull_to_roi(
    gaussians: &[SemanticGaussian],
    t: &RigidTransform,
    roi: &Roi,
) -> Vec<SemanticGaussian> {
    gaussians
        .iter()
        .filter_map(|g| {
            let mean = t.apply(&g.mean);
            roi.contains(&mean).then(|| transform_gaussian(g, t))
        })
        .collect()
}

/// Ego set first, then each received set in ascending sender order.
pub fn stack(
    ego: &[SemanticGaussian],
    received: &[(u32, Vec<SemanticGaussian>)],
) -> Vec<SemanticGaussian> {
    let mut order: Vec<&(u32, Vec<SemanticGaussian>)> = received.iter().collect();
    order.sort_by_key(|(sender, _)| *sender);
    let total = ego.len() + order.iter().map(|(_, s)| s.len()).sum::<usize>();
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(ego);
    for (_, set) in order {
        out.extend_from_slice(set);
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Fp16,
    Fp32,
}

impl Precision {
    pub fn code(self) -> u16 {
        match self {
            Precision::Fp16 => 0,
            Precision::Fp32 => 1,
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        match code {
            0 => Some(Precision::Fp16),
            1 => Some(Precision::Fp32),
            _ => None,
        }
    }

    pub fn scalar_bytes(self) -> usize {
        match self {
            Precision::Fp16 => 2,
            Precision::Fp32 => 4,
        }
    }

    pub fn record_bytes(self) -> usize {
        SCALARS_PER_RECORD * self.scalar_bytes()
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Fp16 => "fp16",
            Precision::Fp32 => "fp32",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fp16" => Ok(Precision::Fp16),
            "fp32" => Ok(Precision::Fp32),
            other => Err(Error::InvalidArgument(format!(
                "unknown precision `{other}` (expected fp16 or fp32)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMessage {
    pub sender_id: u32,
    pub receiver_id: u32,
    pub frame_tag: u32,
    pub precision: Precision,
    pub gaussians: Vec<SemanticGaussian>,
}

impl GaussianMessage {
    pub fn count(&self) -> usize {
        self.gaussians.len()
    }

    pub fn byte_len(&self) -> usize {
        wire_len(self.count(), self.precision)
    }

    pub fn serialize(&self) -> Result<Vec<u8>> {
        serialize_message(self)
    }
}

pub fn wire_len(count: usize, precision: Precision) -> usize {
    HEADER_LEN + count * precision.record_bytes()
}

fn record_scalars(g: &SemanticGaussian) -> [f64; SCALARS_PER_RECORD] {
    let mut s = [0.0; SCALARS_PER_RECORD];
    s[0..3].copy_from_slice(g.mean.as_slice());
    s[3..6].copy_from_slice(g.scale.as_slice());
    s[6..10].copy_from_slice(&g.rotation.to_array());
    s[10] = g.opacity;
    s[11..].copy_from_slice(&g.semantics);
    s
}

const FIELD_NAMES: [&str; 5] = ["mean", "scale", "rotation", "opacity", "semantics"];

fn field_of(i: usize) -> &'static str {
    match i {
        0..=2 => FIELD_NAMES[0],
        3..=5 => FIELD_NAMES[1],
        6..=9 => FIELD_NAMES[2],
        10 => FIELD_NAMES[3],
        _ => FIELD_NAMES[4],
    }
}

pub fn serialize_message(msg: &GaussianMessage) -> Result<Vec<u8>> {
    let count = u32::try_from(msg.count())
        .map_err(|_| Error::Encode(format!("too many gaussians: {}", msg.count())))?;
    let mut out = Vec::with_capacity(msg.byte_len());
    out.extend_from_slice(&GMSG_MAGIC);
    out.extend_from_slice(&GMSG_VERSION.to_le_bytes());
    out.extend_from_slice(&msg.precision.code().to_le_bytes());
    out.extend_from_slice(&msg.sender_id.to_le_bytes());
    out.extend_from_slice(&msg.receiver_id.to_le_bytes());
    out.extend_from_slice(&msg.frame_tag.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for (r, g) in msg.gaussians.iter().enumerate() {
        for (i, v) in record_scalars(g).into_iter().enumerate() {
            match msg.precision {
                Precision::Fp16 => {
                    let mut h = f16::from_f64(v);
                    // keep strictly positive scales representable
                    if (3..6).contains(&i) && h == f16::ZERO && v > 0.0 {
                        h = f16::from_bits(1);
                    }
                    if !h.is_finite() {
                        return Err(Error::Encode(format!(
                            "{} of record {r} ({v}) does not fit in fp16",
                            field_of(i)
                        )));
                    }
                    out.extend_from_slice(&h.to_le_bytes());
                }
                Precision::Fp32 => {
                    let mut f = v as f32;
                    if (3..6).contains(&i) && f == 0.0 && v > 0.0 {
                        f = f32::from_bits(1);
                    }
                    if !f.is_finite() {
                        return Err(Error::Encode(format!(
                            "{} of record {r} ({v}) does not fit in fp32",
                            field_of(i)
                        )));
                    }
                    out.extend_from_slice(&f.to_le_bytes());
                }
            }
        }
    }
    debug_assert_eq!(out.len(), msg.byte_len());
    Ok(out)
}

pub fn deserialize_message(bytes: &[u8]) -> Result<GaussianMessage> {
    if bytes.len() < HEADER_LEN {
        return Err(DecodeError::Truncated {
            needed: HEADER_LEN,
            available: bytes.len(),
        }
        .into());
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != GMSG_MAGIC {
        return Err(DecodeError::BadMagic {
            expected: GMSG_MAGIC,
            found: magic,
        }
        .into());
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u16_at(4);
    if version != GMSG_VERSION {
        return Err(DecodeError::VersionMismatch {
            expected: GMSG_VERSION as u32,
            found: version as u32,
        }
        .into());
    }
    let precision = Precision::from_code(u16_at(6)).ok_or_else(|| DecodeError::InvalidField {
        field: "precision_code",
        detail: format!("unknown code {}", u16_at(6)),
    })?;
    let sender_id = u32_at(8);
    let receiver_id = u32_at(12);
    let frame_tag = u32_at(16);
    let count = u32_at(20) as usize;
    let needed = count
        .checked_mul(precision.record_bytes())
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or(DecodeError::InvalidField {
            field: "count",
            detail: "overflow".into(),
        })?;
    if bytes.len() < needed {
        return Err(DecodeError::Truncated {
            needed,
            available: bytes.len(),
        }
        .into());
    }
    if bytes.len() > needed {
        return Err(DecodeError::TrailingBytes(bytes.len() - needed).into());
    }
    let width = precision.scalar_bytes();
    let mut gaussians = Vec::with_capacity(count);
    for r in 0..count {
        let base = HEADER_LEN + r * precision.record_bytes();
        let mut s = [0.0; SCALARS_PER_RECORD];
        for (i, v) in s.iter_mut().enumerate() {
            let o = base + i * width;
            *v = match precision {
                Precision::Fp16 => f16::from_le_bytes([bytes[o], bytes[o + 1]]).to_f64(),
                Precision::Fp32 => {
                    f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64
                }
            };
            if !v.is_finite() {
                return Err(DecodeError::NonFinite {
                    field: field_of(i),
                    record: r,
                }
                .into());
            }
        }
        gaussians.push(decode_record(&s, r)?);
    }
    Ok(GaussianMessage {
        sender_id,
        receiver_id,
        frame_tag,
        precision,
        gaussians,
    })
}

fn decode_record(s: &[f64; SCALARS_PER_RECORD], record: usize) -> Result<SemanticGaussian> {
    let invalid = |field: &'static str, detail: String| -> Error {
        DecodeError::InvalidField {
            field,
            detail: format!("record {record}: {detail}"),
        }
        .into()
    };
    let scale = Vec3::new(s[3], s[4], s[5]);
    if !scale.iter().all(|v| *v > 0.0) {
        return Err(invalid("scale", format!("{scale:?} is not positive")));
    }
    // quantization breaks unit norm; restore it and the sign convention
    let rotation = Quat::new(s[6], s[7], s[8], s[9])
        .canonicalize()
        .map_err(|e| invalid("rotation", e.to_string()))?;
    let opacity = s[10];
    if !(0.0..=1.0).contains(&opacity) {
        return Err(invalid("opacity", format!("{opacity} outside [0, 1]")));
    }
    let mut semantics = [0.0; NUM_CLASSES];
    semantics.copy_from_slice(&s[11..]);
    if semantics.iter().any(|c| *c < 0.0) {
        return Err(invalid("semantics", "negative class weight".into()));
    }
    Ok(SemanticGaussian {
        mean: Vec3::new(s[0], s[1], s[2]),
        scale,
        rotation,
        opacity,
        semantics,
    })
}

/// Outcome of checking a message against the budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BudgetDecision {
    Accept,
    Reject,
}

/// Rejects a message whose wire size exceeds `budget` bytes. `None` means
/// unlimited.
pub fn enforce_budget(byte_len: usize, budget: Option<u64>) -> BudgetDecision {
    match budget {
        Some(b) if byte_len as u64 > b => BudgetDecision::Reject,
        _ => BudgetDecision::Accept,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub messages_sent: u64,
    pub gaussians_sent: u64,
    pub bytes_sent: u64,
    pub messages_rejected: u64,
    pub bytes_rejected: u64,
}

impl LinkStats {
    fn merge(&mut self, o: &LinkStats) {
        self.messages_sent += o.messages_sent;
        self.gaussians_sent += o.gaussians_sent;
        self.bytes_sent += o.bytes_sent;
        self.messages_rejected += o.messages_rejected;
        self.bytes_rejected += o.bytes_rejected;
    }
}

/// Transmission counters keyed by `(sender, receiver)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CommStats {
    pub links: BTreeMap<(u32, u32), LinkStats>,
}

impl CommStats {
    pub fn record_sent(&mut self, sender: u32, receiver: u32, gaussians: usize, bytes: usize) {
        let link = self.links.entry((sender, receiver)).or_default();
        link.messages_sent += 1;
        link.gaussians_sent += gaussians as u64;
        link.bytes_sent += bytes as u64;
    }

    pub fn record_rejected(&mut self, sender: u32, receiver: u32, bytes: usize) {
        let link = self.links.entry((sender, receiver)).or_default();
        link.messages_rejected += 1;
        link.bytes_rejected += bytes as u64;
    }

    pub fn merge(&mut self, other: &CommStats) {
        for (k, v) in &other.links {
            self.links.entry(*k).or_default().merge(v);
        }
    }

    pub fn totals(&self) -> LinkStats {
        let mut t = LinkStats::default();
        for v in self.links.values() {
            t.merge(v);
        }
        t
    }

    pub fn messages_sent(&self) -> u64 {
        self.totals().messages_sent
    }

    pub fn gaussians_sent(&self) -> u64 {
        self.totals().gaussians_sent
    }

    pub fn bytes_sent(&self) -> u64 {
        self.totals().bytes_sent
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VolumeReport {
    pub bytes_sent: u64,
    pub messages_sent: u64,
    pub gaussians_sent: u64,
    /// Average accepted message size, the per-message communication volume.
    pub mean_bytes_per_message: f64,
    /// Average bytes received per receiving agent.
    pub mean_bytes_per_receiver: f64,
    /// Average bytes sent per sending agent.
    pub mean_bytes_per_sender: f64,
}

pub fn communication_volume(stats: &CommStats) -> VolumeReport {
    let t = stats.totals();
    let mut senders = BTreeMap::<u32, u64>::new();
    let mut receivers = BTreeMap::<u32, u64>::new();
    for ((s, r), l) in &stats.links {
        *senders.entry(*s).or_default() += l.bytes_sent;
        *receivers.entry(*r).or_default() += l.bytes_sent;
    }
    let avg = |total: u64, n: usize| if n == 0 { 0.0 } else { total as f64 / n as f64 };
    VolumeReport {
        bytes_sent: t.bytes_sent,
        messages_sent: t.messages_sent,
        gaussians_sent: t.gaussians_sent,
        mean_bytes_per_message: avg(t.bytes_sent, t.messages_sent as usize),
        mean_bytes_per_receiver: avg(t.bytes_sent, receivers.len()),
        mean_bytes_per_sender: avg(t.bytes_sent, senders.len()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::one_hot;

    fn g(mean: Vec3) -> SemanticGaussian {
        SemanticGaussian::with_rotation(
            mean,
            Vec3::new(0.3, 0.2, 0.1),
            Quat::new(0.9, 0.1, -0.3, 0.2),
            0.8,
            one_hot(7, 1.5),
        )
        .unwrap()
    }

    fn message(n: usize, precision: Precision) -> GaussianMessage {
        GaussianMessage {
            sender_id: 2,
            receiver_id: 0,
            frame_tag: 17,
            precision,
            gaussians: (0..n).map(|i| g(Vec3::new(i as f64 * 0.5, -1.0, 1.0))).collect(),
        }
    }

    #[test]
    fn identity_transform_keeps_gaussian() {
        let a = g(Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(transform_gaussian(&a, &RigidTransform::IDENTITY), a);
    }

    #[test]
    fn translation_only_moves_mean() {
        let a = g(Vec3::new(1.0, 2.0, 3.0));
        let b = transform_gaussian(&a, &RigidTransform::from_translation(Vec3::new(1.0, 2.0, 3.0)));
        assert_eq!(b.mean, Vec3::new(2.0, 4.0, 6.0));
        assert_eq!(b.scale, a.scale);
        assert_eq!(b.rotation, a.rotation);
        assert_eq!(b.opacity, a.opacity);
        assert_eq!(b.semantics, a.semantics);
    }

    #[test]
    fn cull_keeps_boundary_and_drops_outside() {
        let roi = Roi::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0)).unwrap();
        let set = vec![
            g(Vec3::new(1.0, 0.0, 0.0)),
            g(Vec3::new(5.0, 0.0, 0.0)),
            g(Vec3::new(0.0, -1.0, 1.0)),
        ];
        let kept = cull_to_roi(&set, &RigidTransform::IDENTITY, &roi);
        assert_eq!(kept.len(), 2);
        let none = cull_to_roi(
            &set,
            &RigidTransform::from_translation(Vec3::new(100.0, 0.0, 0.0)),
            &roi,
        );
        assert!(none.is_empty());
    }

    #[test]
    fn stack_orders_by_sender() {
        let ego = vec![g(Vec3::zeros())];
        assert_eq!(stack(&ego, &[]), ego);
        let a = vec![g(Vec3::new(1.0, 0.0, 0.0)); 2];
        let b = vec![g(Vec3::new(2.0, 0.0, 0.0)); 3];
        let out = stack(&ego, &[(5, b.clone()), (3, a.clone())]);
        assert_eq!(out.len(), 6);
        assert_eq!(out[1], a[0]);
        assert_eq!(out[3], b[0]);
    }

    #[test]
    fn wire_sizes() {
        assert_eq!(message(0, Precision::Fp16).serialize().unwrap().len(), 24);
        assert_eq!(message(1, Precision::Fp16).serialize().unwrap().len(), 24 + 48);
        assert_eq!(message(1, Precision::Fp32).serialize().unwrap().len(), 24 + 96);
        assert_eq!(wire_len(25600, Precision::Fp16), 24 + 1_228_800);
    }

    #[test]
    fn header_fields_round_trip() {
        let m = message(3, Precision::Fp32);
        let d = deserialize_message(&m.serialize().unwrap()).unwrap();
        assert_eq!(d.sender_id, 2);
        assert_eq!(d.receiver_id, 0);
        assert_eq!(d.frame_tag, 17);
        assert_eq!(d.precision, Precision::Fp32);
        assert_eq!(d.count(), 3);
    }

    #[test]
    fn decode_error_kinds() {
        let bytes = message(2, Precision::Fp16).serialize().unwrap();
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(
            deserialize_message(&bad),
            Err(Error::Decode(DecodeError::BadMagic { .. }))
        ));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            deserialize_message(&bad),
            Err(Error::Decode(DecodeError::VersionMismatch { .. }))
        ));
        assert!(matches!(
            deserialize_message(&bytes[..bytes.len() - 3]),
            Err(Error::Decode(DecodeError::Truncated { .. }))
        ));
        let mut bad = bytes.clone();
        let nan = f16::NAN.to_le_bytes();
        bad[HEADER_LEN + 20] = nan[0]; // opacity of record 0
        bad[HEADER_LEN + 21] = nan[1];
        assert!(matches!(
            deserialize_message(&bad),
            Err(Error::Decode(DecodeError::NonFinite { field: "opacity", record: 0 }))
        ));
    }

    #[test]
    fn out_of_range_value_fails_fp16_encode() {
        let mut m = message(1, Precision::Fp16);
        m.gaussians[0].mean.x = 1e6;
        assert!(matches!(m.serialize(), Err(Error::Encode(_))));
    }

    #[test]
    fn budget() {
        assert_eq!(enforce_budget(100, None), BudgetDecision::Accept);
        assert_eq!(enforce_budget(100, Some(100)), BudgetDecision::Accept);
        assert_eq!(enforce_budget(101, Some(100)), BudgetDecision::Reject);
        assert_eq!(enforce_budget(24, Some(0)), BudgetDecision::Reject);
    }

    #[test]
    fn volume_accounting() {
        let mut s = CommStats::default();
        s.record_sent(1, 0, 10, 504);
        s.record_sent(2, 0, 0, 24);
        s.record_sent(0, 1, 5, 264);
        s.record_rejected(2, 1, 1000);
        let v = communication_volume(&s);
        assert_eq!(v.bytes_sent, 792);
        assert_eq!(v.messages_sent, 3);
        assert_eq!(v.mean_bytes_per_message, 264.0);
        assert_eq!(v.mean_bytes_per_receiver, 396.0);
        assert_eq!(s.totals().messages_rejected, 1);
    }
}
