//! The 11-element integer feature vector describing the current session host
//! and the peer under the lateral-movement cursor.

use std::fmt;

/// Length of the observation vector.
pub const OBS_LEN: usize = 11;

/// Encoding for an unknown or inapplicable feature.
pub const UNKNOWN: i32 = -1;

/// Feature indices into an [`Observation`].
pub mod feature {
    pub const PLATFORM: usize = 0;
    pub const WIN_UAC: usize = 1;
    pub const WIN_ADMIN_GROUP: usize = 2;
    pub const WIN_ADMIN_USER: usize = 3;
    pub const WIN_SYSTEM_USER: usize = 4;
    pub const LINUX_ROOT_USER: usize = 5;
    pub const LINUX_KERNEL_VUL: usize = 6;
    pub const HASHDUMP: usize = 7;
    pub const NUM_PEERS: usize = 8;
    pub const PEER_INDEX: usize = 9;
    pub const PEER_PLATFORM: usize = 10;
}

/// One agent state snapshot. Ternary features use 0/1 with -1 for
/// unknown/inapplicable; `hashdump` is strictly 0/1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Observation(pub [i32; OBS_LEN]);

impl Observation {
    pub fn values(&self) -> &[i32; OBS_LEN] {
        &self.0
    }

    /// Network input form.
    pub fn as_f64(&self) -> [f64; OBS_LEN] {
        let mut out = [0.0; OBS_LEN];
        for (o, v) in out.iter_mut().zip(self.0.iter()) {
            *o = f64::from(*v);
        }
        out
    }

    /// Checks the domain invariants of each feature. Returns the offending
    /// feature description on violation.
    pub fn validate(&self) -> Result<(), String> {
        let v = &self.0;
        for idx in [0, 1, 2, 3, 4, 5, 6, 10] {
            if !(-1..=1).contains(&v[idx]) {
                return Err(format!("feature {idx} out of {{-1,0,1}}: {}", v[idx]));
            }
        }
        if !(0..=1).contains(&v[feature::HASHDUMP]) {
            return Err(format!("hashdump out of {{0,1}}: {}", v[feature::HASHDUMP]));
        }
        let peers = v[feature::NUM_PEERS];
        if peers < 0 {
            return Err(format!("num_peers negative: {peers}"));
        }
        let max_index = (peers - 1).max(0);
        if !(0..=max_index).contains(&v[feature::PEER_INDEX]) {
            return Err(format!(
                "peer_index {} out of 0..={max_index}",
                v[feature::PEER_INDEX]
            ));
        }
        Ok(())
    }
}

impl fmt::Display for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")
    }
}
