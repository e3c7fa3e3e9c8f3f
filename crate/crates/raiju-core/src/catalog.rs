//! The fixed 99-slot action space: synthetic exploit-module slots grouped by
//! post-exploitation role, each with a static platform/privilege precondition.

use std::fmt;

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};

/// Number of slots in the catalog.
pub const ACTION_COUNT: usize = 99;

/// Windows privilege-escalation slots occupy ids `0..=22`.
pub const WINDOWS_PRIVESC_IDS: std::ops::RangeInclusive<u16> = 0..=22;
/// Linux privilege-escalation slots occupy ids `23..=94`.
pub const LINUX_PRIVESC_IDS: std::ops::RangeInclusive<u16> = 23..=94;
/// Hashdump slot targeting Windows.
pub const HASHDUMP_WINDOWS_ID: u16 = 95;
/// Hashdump slot targeting Linux.
pub const HASHDUMP_LINUX_ID: u16 = 96;
/// SMB lateral-movement slot targeting Windows peers.
pub const SMB_LM_WINDOWS_ID: u16 = 97;
/// SMB lateral-movement slot targeting Linux peers.
pub const SMB_LM_LINUX_ID: u16 = 98;

/// Operating system of a host, or the platform an action targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Windows,
    Linux,
}

impl Platform {
    /// Observation encoding: Windows is 0, Linux is 1 (unknown is -1).
    pub fn encode(self) -> i32 {
        match self {
            Platform::Windows => 0,
            Platform::Linux => 1,
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Platform::Windows => write!(f, "windows"),
            Platform::Linux => write!(f, "linux"),
        }
    }
}

/// Post-exploitation role of an action slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionGroup {
    WindowsPrivEsc,
    LinuxPrivEsc,
    Hashdump,
    LateralSmb,
}

impl fmt::Display for ActionGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ActionGroup::WindowsPrivEsc => "windows_privesc",
            ActionGroup::LinuxPrivEsc => "linux_privesc",
            ActionGroup::Hashdump => "hashdump",
            ActionGroup::LateralSmb => "lateral_smb",
        };
        write!(f, "{name}")
    }
}

/// One slot in the action catalog.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpec {
    pub id: u16,
    pub group: ActionGroup,
    pub target_platform: Platform,
    /// True iff the action only succeeds from SYSTEM/root.
    pub requires_elevated: bool,
    pub label: String,
}

impl ActionSpec {
    /// Static precheck against a session host: the platform must match and
    /// the privilege prerequisite must hold. A `false` here predicts a failed
    /// step; the environment still applies the full transition rule.
    pub fn applicable(&self, host_platform: Platform, host_elevated: bool) -> bool {
        self.target_platform == host_platform && (!self.requires_elevated || host_elevated)
    }
}

/// The canonical, immutable 99-slot catalog.
///
/// Layout: ids 0..=22 Windows privilege escalation, 23..=94 Linux privilege
/// escalation, 95/96 hashdump (Windows, Linux), 97/98 SMB lateral movement
/// (Windows, Linux). Identical across runs and platforms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionCatalog {
    specs: Vec<ActionSpec>,
}

/// Builds the canonical catalog.
pub fn build_catalog() -> ActionCatalog {
    let mut specs = Vec::with_capacity(ACTION_COUNT);
    for i in 0..23u16 {
        specs.push(ActionSpec {
            id: i,
            group: ActionGroup::WindowsPrivEsc,
            target_platform: Platform::Windows,
            requires_elevated: false,
            label: format!("win_pe_{i:02}"),
        });
    }
    for i in 0..72u16 {
        specs.push(ActionSpec {
            id: 23 + i,
            group: ActionGroup::LinuxPrivEsc,
            target_platform: Platform::Linux,
            requires_elevated: false,
            label: format!("lin_pe_{i:02}"),
        });
    }
    specs.push(ActionSpec {
        id: HASHDUMP_WINDOWS_ID,
        group: ActionGroup::Hashdump,
        target_platform: Platform::Windows,
        requires_elevated: true,
        label: "hashdump_win".to_string(),
    });
    specs.push(ActionSpec {
        id: HASHDUMP_LINUX_ID,
        group: ActionGroup::Hashdump,
        target_platform: Platform::Linux,
        requires_elevated: true,
        label: "hashdump_lin".to_string(),
    });
    specs.push(ActionSpec {
        id: SMB_LM_WINDOWS_ID,
        group: ActionGroup::LateralSmb,
        target_platform: Platform::Windows,
        requires_elevated: false,
        label: "smb_lm_win".to_string(),
    });
    specs.push(ActionSpec {
        id: SMB_LM_LINUX_ID,
        group: ActionGroup::LateralSmb,
        target_platform: Platform::Linux,
        requires_elevated: false,
        label: "smb_lm_lin".to_string(),
    });
    ActionCatalog { specs }
}

static SHARED: Lazy<ActionCatalog> = Lazy::new(build_catalog);

impl ActionCatalog {
    /// Shared read-only instance; the catalog is immutable after construction.
    pub fn shared() -> &'static ActionCatalog {
        &SHARED
    }

    pub fn specs(&self) -> &[ActionSpec] {
        &self.specs
    }

    pub fn spec(&self, id: u16) -> Option<&ActionSpec> {
        self.specs.get(id as usize)
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn group_size(&self, group: ActionGroup) -> usize {
        self.specs.iter().filter(|s| s.group == group).count()
    }

    /// CSV dump with header `id,group,platform,requires_elevated,label`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,group,platform,requires_elevated,label\n");
        for s in &self.specs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.id, s.group, s.target_platform, s.requires_elevated, s.label
            ));
        }
        out
    }
}

impl std::ops::Index<u16> for ActionCatalog {
    type Output = ActionSpec;

    fn index(&self, id: u16) -> &ActionSpec {
        &self.specs[id as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_has_99_dense_ids() {
        let cat = build_catalog();
        assert_eq!(cat.len(), ACTION_COUNT);
        for (i, spec) in cat.specs().iter().enumerate() {
            assert_eq!(spec.id as usize, i);
        }
    }

    #[test]
    fn group_sizes_are_23_72_2_2() {
        let cat = build_catalog();
        assert_eq!(cat.group_size(ActionGroup::WindowsPrivEsc), 23);
        assert_eq!(cat.group_size(ActionGroup::LinuxPrivEsc), 72);
        assert_eq!(cat.group_size(ActionGroup::Hashdump), 2);
        assert_eq!(cat.group_size(ActionGroup::LateralSmb), 2);
        assert_eq!(23 + 72 + 2 + 2, ACTION_COUNT);
    }

    #[test]
    fn fixed_slots_match_layout() {
        let cat = build_catalog();
        let hd_win = &cat[HASHDUMP_WINDOWS_ID];
        assert_eq!(hd_win.group, ActionGroup::Hashdump);
        assert_eq!(hd_win.target_platform, Platform::Windows);
        assert!(hd_win.requires_elevated);
        let lm_lin = &cat[SMB_LM_LINUX_ID];
        assert_eq!(lm_lin.group, ActionGroup::LateralSmb);
        assert_eq!(lm_lin.target_platform, Platform::Linux);
        assert!(!lm_lin.requires_elevated);
        for id in WINDOWS_PRIVESC_IDS {
            assert_eq!(cat[id].group, ActionGroup::WindowsPrivEsc);
            assert!(!cat[id].requires_elevated);
        }
        for id in LINUX_PRIVESC_IDS {
            assert_eq!(cat[id].group, ActionGroup::LinuxPrivEsc);
            assert!(!cat[id].requires_elevated);
        }
    }

    #[test]
    fn applicability_prechecks() {
        let cat = build_catalog();
        // Linux PE against a Windows host: platform mismatch.
        assert!(!cat[30].applicable(Platform::Windows, false));
        // Windows hashdump against a non-elevated Windows host.
        assert!(!cat[HASHDUMP_WINDOWS_ID].applicable(Platform::Windows, false));
        // Windows hashdump against a SYSTEM-level Windows host.
        assert!(cat[HASHDUMP_WINDOWS_ID].applicable(Platform::Windows, true));
    }

    #[test]
    fn builds_identically() {
        assert_eq!(build_catalog(), build_catalog());
        assert_eq!(ActionCatalog::shared(), &build_catalog());
    }
}
