use std::fmt;

use url::Url;

use super::serial::SerialConfig;
use super::modbus::DEFAULT_SCALE;

/// Network imperfections injected on an in-process link (virtual time only).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LinkImperfection {
    pub delay_us: u64,
    /// Extra uniform delay in `[0, jitter_us]`; reorders messages.
    pub jitter_us: u64,
    /// Drop probability per message.
    pub drop: f64,
}

impl LinkImperfection {
    pub fn is_ideal(&self) -> bool {
        self.delay_us == 0 && self.jitter_us == 0 && self.drop == 0.0
    }
}

/// Where a sensor or actuator channel lives.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelBinding {
    Inproc {
        name: String,
        link: LinkImperfection,
    },
    /// Address is the receiving side's bind address.
    Udp { addr: String },
    Serial {
        path: String,
        config: SerialConfig,
        /// Reserved; accepted and ignored.
        handshake: Option<String>,
    },
    ModbusTcp {
        addr: String,
        unit: u8,
        /// First of the three registers (y, u, r) of loop 0; loop k uses `base + 3k`.
        base: u16,
        scale: f64,
    },
}

impl ChannelBinding {
    pub fn parse(text: &str) -> Result<ChannelBinding, String> {
        let text = text.trim();
        let url = Url::parse(text).map_err(|e| format!("{text:?}: {e}"))?;
        let query: Vec<(String, String)> = url
            .query_pairs()
            .map(|(k, v)| (k.into_owned(), v.into_owned()))
            .collect();
        let num = |key: &str, raw: &str| -> Result<f64, String> {
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("{text:?}: {key}={raw:?} is not a number"))
        };
        let int = |key: &str, raw: &str| -> Result<u64, String> {
            raw.parse::<u64>()
                .map_err(|_| format!("{text:?}: {key}={raw:?} is not a non-negative integer"))
        };
        let host_port = |url: &Url| -> Result<String, String> {
            let host = url.host_str().ok_or_else(|| format!("{text:?}: missing host"))?;
            let port = url.port().ok_or_else(|| format!("{text:?}: missing port"))?;
            Ok(format!("{host}:{port}"))
        };

        match url.scheme() {
            "inproc" => {
                let name = url.path().to_string();
                if name.is_empty() {
                    return Err(format!("{text:?}: inproc channel needs a name"));
                }
                let mut link = LinkImperfection::default();
                for (k, v) in &query {
                    match k.as_str() {
                        "delay_us" => link.delay_us = int(k, v)?,
                        "jitter_us" => link.jitter_us = int(k, v)?,
                        "drop" => {
                            link.drop = num(k, v)?;
                            if !(0.0..1.0).contains(&link.drop) {
                                return Err(format!("{text:?}: drop must be in [0, 1)"));
                            }
                        }
                        other => return Err(format!("{text:?}: unknown option {other:?}")),
                    }
                }
                Ok(ChannelBinding::Inproc { name, link })
            }
            "udp" => {
                if let Some((k, _)) = query.first() {
                    return Err(format!("{text:?}: unknown option {k:?}"));
                }
                Ok(ChannelBinding::Udp { addr: host_port(&url)? })
            }
            "serial" => {
                let path = url.path().to_string();
                if path.is_empty() {
                    return Err(format!("{text:?}: serial channel needs a device or socket path"));
                }
                let mut config = SerialConfig {
                    port: path.clone(),
                    ..SerialConfig::default()
                };
                let mut handshake = None;
                for (k, v) in &query {
                    match k.as_str() {
                        "speed" => config.speed = int(k, v)? as u32,
                        "databits" => config.databits = int(k, v)? as u8,
                        "stopbits" => config.stopbits = int(k, v)? as u8,
                        "parity" => config.parity = int(k, v)? as u8,
                        "buffer" => config.buffer_size = int(k, v)? as usize,
                        "handshake" => handshake = Some(v.clone()),
                        other => return Err(format!("{text:?}: unknown option {other:?}")),
                    }
                }
                config.validate().map_err(|e| format!("{text:?}: {e}"))?;
                Ok(ChannelBinding::Serial {
                    path,
                    config,
                    handshake,
                })
            }
            "modbus-tcp" => {
                let mut unit = 1u8;
                let mut base = 0u16;
                let mut scale = DEFAULT_SCALE;
                for (k, v) in &query {
                    match k.as_str() {
                        "unit" => {
                            unit = u8::try_from(int(k, v)?).map_err(|_| format!("{text:?}: unit > 255"))?
                        }
                        "base" => {
                            base = u16::try_from(int(k, v)?).map_err(|_| format!("{text:?}: base > 65535"))?
                        }
                        "scale" => {
                            scale = num(k, v)?;
                            if scale <= 0.0 {
                                return Err(format!("{text:?}: scale must be > 0"));
                            }
                        }
                        other => return Err(format!("{text:?}: unknown option {other:?}")),
                    }
                }
                Ok(ChannelBinding::ModbusTcp {
                    addr: host_port(&url)?,
                    unit,
                    base,
                    scale,
                })
            }
            other => Err(format!("{text:?}: unknown channel scheme {other:?}")),
        }
    }

    pub fn is_inproc(&self) -> bool {
        matches!(self, ChannelBinding::Inproc { .. })
    }

    /// Identity of the underlying endpoint, shared by channels on the same link.
    pub fn endpoint_key(&self) -> String {
        match self {
            ChannelBinding::Inproc { name, .. } => format!("inproc:{name}"),
            ChannelBinding::Udp { addr } => format!("udp://{addr}"),
            ChannelBinding::Serial { path, .. } => format!("serial:{path}"),
            ChannelBinding::ModbusTcp { addr, unit, .. } => format!("modbus-tcp://{addr}/{unit}"),
        }
    }
}

impl fmt::Display for ChannelBinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelBinding::Inproc { name, link } => {
                write!(f, "inproc:{name}")?;
                let mut opts = Vec::new();
                if link.delay_us > 0 {
                    opts.push(format!("delay_us={}", link.delay_us));
                }
                if link.jitter_us > 0 {
                    opts.push(format!("jitter_us={}", link.jitter_us));
                }
                if link.drop > 0.0 {
                    opts.push(format!("drop={}", link.drop));
                }
                if !opts.is_empty() {
                    write!(f, "?{}", opts.join("&"))?;
                }
                Ok(())
            }
            ChannelBinding::Udp { addr } => write!(f, "udp://{addr}"),
            ChannelBinding::Serial {
                path,
                config,
                handshake,
            } => {
                write!(
                    f,
                    "serial:{path}?speed={}&databits={}&stopbits={}&parity={}&buffer={}",
                    config.speed, config.databits, config.stopbits, config.parity, config.buffer_size
                )?;
                if let Some(h) = handshake {
                    write!(f, "&handshake={h}")?;
                }
                Ok(())
            }
            ChannelBinding::ModbusTcp {
                addr,
                unit,
                base,
                scale,
            } => write!(f, "modbus-tcp://{addr}?unit={unit}&base={base}&scale={scale}"),
        }
    }
}
