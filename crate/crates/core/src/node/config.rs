//! Node configuration: flat `key=value` lines, `#` comments.

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::amm::DEFAULT_STEP_TIMEOUT;
use crate::host::is_host_port;
use crate::push_transfer::DEFAULT_CACHE_CAPACITY;
use crate::registry::DEFAULT_DISCOVERY_TTL;
use crate::transport::FaultRule;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeConfig {
    pub platform_name: String,
    pub listen_address: String,
    pub code_cache_path: Option<PathBuf>,
    pub cache_capacity: usize,
    pub discovery_ttl: Duration,
    pub step_timeout: Duration,
    pub fault_injections: Vec<FaultRule>,
    /// Run agents on their own after creation and power-up.
    pub autorun: bool,
    /// Extra attempts when a hop migration fails.
    pub hop_retries: u32,
}

impl NodeConfig {
    pub fn new(platform_name: impl Into<String>, listen_address: impl Into<String>) -> Self {
        Self {
            platform_name: platform_name.into(),
            listen_address: listen_address.into(),
            code_cache_path: None,
            cache_capacity: DEFAULT_CACHE_CAPACITY,
            discovery_ttl: DEFAULT_DISCOVERY_TTL,
            step_timeout: DEFAULT_STEP_TIMEOUT,
            fault_injections: Vec::new(),
            autorun: true,
            hop_retries: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let name = &self.platform_name;
        if name.is_empty() || name.contains('@') || name.chars().any(char::is_whitespace) {
            return Err(ConfigError(format!(
                "platform-name `{name}` must be a non-empty word without `@`"
            )));
        }
        if !is_host_port(&self.listen_address) {
            return Err(ConfigError(format!(
                "listen-address `{}` must have the form host:port",
                self.listen_address
            )));
        }
        if self.cache_capacity == 0 {
            return Err(ConfigError("cache-capacity must be positive".into()));
        }
        if self.step_timeout.is_zero() {
            return Err(ConfigError("step-timeout-seconds must be positive".into()));
        }
        Ok(())
    }
}

fn number<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError(format!("{key}: `{value}` is not a valid number")))
}

impl FromStr for NodeConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut platform = None;
        let mut listen = None;
        let mut config = NodeConfig::new("", "");
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected key=value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "platform-name" => platform = Some(value.to_string()),
                "listen-address" => listen = Some(value.to_string()),
                "code-cache-path" => config.code_cache_path = Some(PathBuf::from(value)),
                "cache-capacity" => config.cache_capacity = number(key, value)?,
                "discovery-ttl-seconds" => config.discovery_ttl = Duration::from_secs(number(key, value)?),
                "step-timeout-seconds" => config.step_timeout = Duration::from_secs(number(key, value)?),
                "fault-injections" => {
                    config.fault_injections = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse::<FaultRule>().map_err(|e| ConfigError(e.to_string())))
                        .collect::<Result<_, _>>()?
                }
                "autorun" => {
                    config.autorun = value
                        .parse()
                        .map_err(|_| ConfigError(format!("autorun: `{value}` is not true or false")))?
                }
                "hop-retries" => config.hop_retries = number(key, value)?,
                other => return Err(ConfigError(format!("line {}: unknown key `{other}`", n + 1))),
            }
        }
        config.platform_name = platform.ok_or_else(|| ConfigError("platform-name is required".into()))?;
        config.listen_address = listen.ok_or_else(|| ConfigError("listen-address is required".into()))?;
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{FaultDirection, FaultPoint};

    #[test]
    fn parses_all_keys() {
        let text = "\
# node A
platform-name = A
listen-address=127.0.0.1:9001
code-cache-path=/tmp/cache-a
cache-capacity=16
discovery-ttl-seconds=0
step-timeout-seconds=3
fault-injections=registration:send:1, transfer-stage2:send:1:corrupt-code
autorun=false
hop-retries=2
";
        let c: NodeConfig = text.parse().unwrap();
        assert_eq!(c.platform_name, "A");
        assert_eq!(c.code_cache_path, Some(PathBuf::from("/tmp/cache-a")));
        assert_eq!(c.cache_capacity, 16);
        assert_eq!(c.discovery_ttl, Duration::ZERO);
        assert_eq!(c.step_timeout, Duration::from_secs(3));
        assert_eq!(
            c.fault_injections,
            vec![
                FaultRule::new(FaultPoint::Registration, FaultDirection::Send, 1),
                FaultRule::corrupt_code(1)
            ]
        );
        assert!(!c.autorun);
        assert_eq!(c.hop_retries, 2);
    }

    #[test]
    fn defaults_apply() {
        let c: NodeConfig = "platform-name=B\nlisten-address=b:9002\n".parse().unwrap();
        assert_eq!(c.cache_capacity, 128);
        assert_eq!(c.discovery_ttl, Duration::from_secs(300));
        assert_eq!(c.step_timeout, Duration::from_secs(10));
        assert!(c.autorun);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            "listen-address=a:1",
            "platform-name=A",
            "platform-name=a@b\nlisten-address=a:1",
            "platform-name=A\nlisten-address=nowhere",
            "platform-name=A\nlisten-address=a:1\ncolour=blue",
            "platform-name=A\nlisten-address=a:1\ncache-capacity=many",
            "platform-name=A\nlisten-address=a:1\nfault-injections=main:up:1",
            "platform-name=A\nlisten-address=a:1\njust text",
        ] {
            assert!(bad.parse::<NodeConfig>().is_err(), "{bad}");
        }
    }
}
