//! Static scenario definitions: the host layout an episode runs against,
//! parsed from TOML or picked from the four builtins.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::catalog::{ActionCatalog, Platform};

/// SMB port number used for lateral movement.
pub const SMB_PORT: i32 = 445;

/// Agent-side marker for "no knowledge about the SMB port".
pub const PORT_UNKNOWN: i32 = -1;

/// Vulnerable privilege-escalation slots shared by all builtin Windows hosts.
pub const BUILTIN_WINDOWS_VULNERABLE: [u16; 2] = [4, 18];

/// Vulnerable privilege-escalation slots shared by all builtin Linux hosts.
pub const BUILTIN_LINUX_VULNERABLE: [u16; 2] = [31, 77];

/// Static description of one host.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostSpec {
    pub host_id: u32,
    pub platform: Platform,
    /// Action ids that succeed against this host (privilege escalation).
    pub vulnerable_actions: BTreeSet<u16>,
    /// 445 if the agent knows the SMB port is open, -1 for no knowledge.
    pub smb_port_known: i32,
    /// Ground truth, hidden from the agent until probed.
    pub smb_open_truth: bool,
    /// Windows only.
    pub uac_enabled: bool,
    /// Linux only.
    pub kernel_vulnerable: bool,
}

/// An immutable scenario: the initially compromised foothold plus an ordered
/// list of neighbor hosts visible as peers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub foothold: HostSpec,
    pub neighbors: Vec<HostSpec>,
    /// When set, a peer's platform reads as unknown until that peer has been
    /// probed or compromised. Off by default: platforms are revealed at reset.
    pub peer_platform_hidden: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("failed to read scenario {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse scenario {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("invalid scenario {origin}: {field}: {reason}")]
    Validation {
        origin: String,
        field: String,
        reason: String,
    },
}

// --- TOML config schema ---------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioConfig {
    name: String,
    #[serde(default, skip_serializing_if = "is_false")]
    peer_platform_hidden: bool,
    foothold: FootholdConfig,
    #[serde(default)]
    neighbors: Vec<NeighborConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FootholdConfig {
    platform: Platform,
    #[serde(default)]
    vulnerable_actions: Vec<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    uac_enabled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel_vulnerable: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NeighborConfig {
    platform: Platform,
    smb_port_known: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    smb_open_truth: Option<bool>,
    #[serde(default)]
    vulnerable_actions: Vec<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    uac_enabled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel_vulnerable: Option<bool>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn build_host(
    origin: &str,
    field: &str,
    host_id: u32,
    platform: Platform,
    vulnerable_actions: &[u16],
    smb_port_known: i32,
    smb_open_truth: Option<bool>,
    uac_enabled: Option<bool>,
    kernel_vulnerable: Option<bool>,
) -> Result<HostSpec, ScenarioError> {
    let validation = |sub: &str, reason: String| ScenarioError::Validation {
        origin: origin.to_string(),
        field: format!("{field}.{sub}"),
        reason,
    };
    if smb_port_known != SMB_PORT && smb_port_known != PORT_UNKNOWN {
        return Err(validation(
            "smb_port_known",
            format!("must be {SMB_PORT} or {PORT_UNKNOWN}, got {smb_port_known}"),
        ));
    }
    let open = smb_open_truth.unwrap_or(smb_port_known == SMB_PORT);
    if smb_port_known == SMB_PORT && !open {
        return Err(validation(
            "smb_open_truth",
            format!("a known port {SMB_PORT} implies the port is open"),
        ));
    }
    match platform {
        Platform::Windows => {
            if kernel_vulnerable.is_some() {
                return Err(validation(
                    "kernel_vulnerable",
                    "only applies to Linux hosts".to_string(),
                ));
            }
        }
        Platform::Linux => {
            if uac_enabled.is_some() {
                return Err(validation(
                    "uac_enabled",
                    "only applies to Windows hosts".to_string(),
                ));
            }
        }
    }
    let catalog = ActionCatalog::shared();
    let mut set = BTreeSet::new();
    for &id in vulnerable_actions {
        let spec = catalog.spec(id).ok_or_else(|| {
            validation(
                "vulnerable_actions",
                format!(
                    "action id {id} outside the catalog range 0..={}",
                    catalog.len() - 1
                ),
            )
        })?;
        if spec.target_platform != platform {
            return Err(validation(
                "vulnerable_actions",
                format!(
                    "action {id} ({}) targets {}, host runs {platform}",
                    spec.label, spec.target_platform
                ),
            ));
        }
        set.insert(id);
    }
    // Inapplicable flags are pinned so equal scenarios compare equal.
    Ok(HostSpec {
        host_id,
        platform,
        vulnerable_actions: set,
        smb_port_known,
        smb_open_truth: open,
        uac_enabled: match platform {
            Platform::Windows => uac_enabled.unwrap_or(true),
            Platform::Linux => false,
        },
        kernel_vulnerable: match platform {
            Platform::Linux => kernel_vulnerable.unwrap_or(false),
            Platform::Windows => false,
        },
    })
}

impl Scenario {
    /// Parses and validates a TOML scenario document. `origin` names the
    /// source for error messages (a path or `"<inline>"`).
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Scenario, ScenarioError> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        if config.name.is_empty() {
            return Err(ScenarioError::Validation {
                origin: origin.to_string(),
                field: "name".to_string(),
                reason: "must be non-empty".to_string(),
            });
        }
        let foothold = build_host(
            origin,
            "foothold",
            0,
            config.foothold.platform,
            &config.foothold.vulnerable_actions,
            PORT_UNKNOWN,
            None,
            config.foothold.uac_enabled,
            config.foothold.kernel_vulnerable,
        )?;
        let mut neighbors = Vec::with_capacity(config.neighbors.len());
        for (i, n) in config.neighbors.iter().enumerate() {
            neighbors.push(build_host(
                origin,
                &format!("neighbors[{i}]"),
                1 + i as u32,
                n.platform,
                &n.vulnerable_actions,
                n.smb_port_known,
                n.smb_open_truth,
                n.uac_enabled,
                n.kernel_vulnerable,
            )?);
        }
        Ok(Scenario {
            name: config.name,
            foothold,
            neighbors,
            peer_platform_hidden: config.peer_platform_hidden,
        })
    }

    pub fn from_path(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Scenario::from_toml_str(&text, &path.display().to_string())
    }

    /// Resolves `id_or_path` as a builtin name first, then as a file path.
    pub fn load(id_or_path: &str) -> Result<Scenario, ScenarioError> {
        if let Some(s) = Scenario::builtin(id_or_path) {
            return Ok(s);
        }
        Scenario::from_path(Path::new(id_or_path))
    }

    pub fn builtin_names() -> [&'static str; 4] {
        ["env1", "env2", "env3", "env4"]
    }

    /// The four builtin scenarios. Every Windows host carries the same two
    /// vulnerable slots, every Linux host likewise; a port listed as -1 means
    /// the peer's SMB service is in truth closed.
    pub fn builtin(name: &str) -> Option<Scenario> {
        let layout: (&str, Platform, &[(Platform, i32)]) = match name {
            "env1" => (
                "env1",
                Platform::Windows,
                &[
                    (Platform::Linux, PORT_UNKNOWN),
                    (Platform::Windows, SMB_PORT),
                    (Platform::Linux, SMB_PORT),
                    (Platform::Windows, PORT_UNKNOWN),
                ],
            ),
            "env2" => (
                "env2",
                Platform::Windows,
                &[
                    (Platform::Linux, PORT_UNKNOWN),
                    (Platform::Windows, SMB_PORT),
                ],
            ),
            "env3" => (
                "env3",
                Platform::Linux,
                &[
                    (Platform::Windows, PORT_UNKNOWN),
                    (Platform::Linux, SMB_PORT),
                    (Platform::Windows, SMB_PORT),
                ],
            ),
            "env4" => (
                "env4",
                Platform::Linux,
                &[
                    (Platform::Windows, PORT_UNKNOWN),
                    (Platform::Windows, PORT_UNKNOWN),
                    (Platform::Linux, SMB_PORT),
                ],
            ),
            _ => return None,
        };
        let (name, foothold_platform, peers) = layout;
        let foothold = builtin_host(0, foothold_platform, PORT_UNKNOWN);
        let neighbors = peers
            .iter()
            .enumerate()
            .map(|(i, &(platform, port))| builtin_host(1 + i as u32, platform, port))
            .collect();
        Some(Scenario {
            name: name.to_string(),
            foothold,
            neighbors,
            peer_platform_hidden: false,
        })
    }

    /// Number of neighbors whose SMB service is in truth open; these are the
    /// peers a lateral-movement goal must compromise.
    pub fn reachable_peers(&self) -> usize {
        self.neighbors.iter().filter(|n| n.smb_open_truth).count()
    }

    /// Serializes back to the TOML config format accepted by `from_toml_str`.
    pub fn to_toml(&self) -> String {
        let config = ScenarioConfig {
            name: self.name.clone(),
            peer_platform_hidden: self.peer_platform_hidden,
            foothold: FootholdConfig {
                platform: self.foothold.platform,
                vulnerable_actions: self.foothold.vulnerable_actions.iter().copied().collect(),
                uac_enabled: match self.foothold.platform {
                    Platform::Windows => Some(self.foothold.uac_enabled),
                    Platform::Linux => None,
                },
                kernel_vulnerable: match self.foothold.platform {
                    Platform::Linux => Some(self.foothold.kernel_vulnerable),
                    Platform::Windows => None,
                },
            },
            neighbors: self
                .neighbors
                .iter()
                .map(|n| NeighborConfig {
                    platform: n.platform,
                    smb_port_known: n.smb_port_known,
                    smb_open_truth: Some(n.smb_open_truth),
                    vulnerable_actions: n.vulnerable_actions.iter().copied().collect(),
                    uac_enabled: match n.platform {
                        Platform::Windows => Some(n.uac_enabled),
                        Platform::Linux => None,
                    },
                    kernel_vulnerable: match n.platform {
                        Platform::Linux => Some(n.kernel_vulnerable),
                        Platform::Windows => None,
                    },
                })
                .collect(),
        };
        toml::to_string(&config).expect("scenario serializes")
    }
}

fn builtin_host(host_id: u32, platform: Platform, port: i32) -> HostSpec {
    let (vulnerable, uac, kernel) = match platform {
        Platform::Windows => (BUILTIN_WINDOWS_VULNERABLE.as_slice(), true, false),
        Platform::Linux => (BUILTIN_LINUX_VULNERABLE.as_slice(), false, true),
    };
    HostSpec {
        host_id,
        platform,
        vulnerable_actions: vulnerable.iter().copied().collect(),
        smb_port_known: port,
        smb_open_truth: port == SMB_PORT,
        uac_enabled: uac,
        kernel_vulnerable: kernel,
    }
}
