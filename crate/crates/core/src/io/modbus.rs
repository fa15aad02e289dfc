//! Modbus/TCP holding-register subset: function codes 0x03, 0x06 and 0x10.
//!
//! Every frame is an MBAP header (transaction id, protocol id 0, length,
//! unit id) followed by the PDU, all big-endian.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const READ_HOLDING: u8 = 0x03;
pub const WRITE_SINGLE: u8 = 0x06;
pub const WRITE_MULTIPLE: u8 = 0x10;

pub const MAX_READ: u16 = 125;
pub const MAX_WRITE: u16 = 123;

pub const EXC_ILLEGAL_FUNCTION: u8 = 0x01;
pub const EXC_ILLEGAL_ADDRESS: u8 = 0x02;
pub const EXC_ILLEGAL_VALUE: u8 = 0x03;

const MBAP_LEN: usize = 7;
/// Largest ADU: MBAP plus a 253-byte PDU.
pub const MAX_ADU: usize = MBAP_LEN + 253;

/// Default fixed-point scale between signal values and registers.
pub const DEFAULT_SCALE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModbusError {
    #[error("unsupported function code 0x{0:02X}")]
    UnsupportedFunction(u8),
    #[error("register count {count} outside 1..={max}")]
    CountOutOfRange { count: usize, max: u16 },
    #[error("frame too short: {0} bytes")]
    ShortFrame(usize),
    #[error("MBAP length {declared} does not match {actual} bytes present")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("protocol id {0} is not Modbus (0)")]
    BadProtocol(u16),
    #[error("exception response 0x{code:02X} to function 0x{function:02X}")]
    Exception { function: u8, code: u8 },
    #[error("response does not match request: {0}")]
    UnexpectedResponse(String),
    #[error("value {value} scaled by {scale} does not fit a 16-bit register")]
    RangeError { value: f64, scale: f64 },
    #[error("io: {message}")]
    Io {
        kind: std::io::ErrorKind,
        message: String,
    },
}

impl From<std::io::Error> for ModbusError {
    fn from(e: std::io::Error) -> Self {
        ModbusError::Io {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    ReadHolding { address: u16, count: u16 },
    WriteSingle { address: u16, value: u16 },
    WriteMultiple { address: u16, values: Vec<u16> },
}

impl Request {
    pub fn function(&self) -> u8 {
        match self {
            Request::ReadHolding { .. } => READ_HOLDING,
            Request::WriteSingle { .. } => WRITE_SINGLE,
            Request::WriteMultiple { .. } => WRITE_MULTIPLE,
        }
    }

    pub fn validate(&self) -> Result<(), ModbusError> {
        match self {
            Request::ReadHolding { count, .. } if *count == 0 || *count > MAX_READ => {
                Err(ModbusError::CountOutOfRange {
                    count: *count as usize,
                    max: MAX_READ,
                })
            }
            Request::WriteMultiple { values, .. } if values.is_empty() || values.len() > MAX_WRITE as usize => {
                Err(ModbusError::CountOutOfRange {
                    count: values.len(),
                    max: MAX_WRITE,
                })
            }
            _ => Ok(()),
        }
    }

    pub fn pdu(&self) -> Result<Vec<u8>, ModbusError> {
        self.validate()?;
        let mut pdu = vec![self.function()];
        match self {
            Request::ReadHolding { address, count } => {
                pdu.extend(address.to_be_bytes());
                pdu.extend(count.to_be_bytes());
            }
            Request::WriteSingle { address, value } => {
                pdu.extend(address.to_be_bytes());
                pdu.extend(value.to_be_bytes());
            }
            Request::WriteMultiple { address, values } => {
                pdu.extend(address.to_be_bytes());
                pdu.extend((values.len() as u16).to_be_bytes());
                pdu.push((values.len() * 2) as u8);
                for v in values {
                    pdu.extend(v.to_be_bytes());
                }
            }
        }
        Ok(pdu)
    }

    /// Full MBAP-framed request.
    pub fn encode(&self, transaction: u16, unit: u8) -> Result<Vec<u8>, ModbusError> {
        Ok(wrap_mbap(transaction, unit, &self.pdu()?))
    }
}

/// Builds a request ADU from a raw function code.
///
/// `payload` is `[count]` for 0x03, `[value]` for 0x06 and the register
/// values for 0x10.
pub fn modbus_request(
    function: u8,
    address: u16,
    payload: &[u16],
    transaction: u16,
    unit: u8,
) -> Result<Vec<u8>, ModbusError> {
    let req = match function {
        READ_HOLDING | WRITE_SINGLE if payload.len() != 1 => {
            return Err(ModbusError::CountOutOfRange {
                count: payload.len(),
                max: 1,
            })
        }
        READ_HOLDING => Request::ReadHolding {
            address,
            count: payload[0],
        },
        WRITE_SINGLE => Request::WriteSingle {
            address,
            value: payload[0],
        },
        WRITE_MULTIPLE => Request::WriteMultiple {
            address,
            values: payload.to_vec(),
        },
        other => return Err(ModbusError::UnsupportedFunction(other)),
    };
    req.encode(transaction, unit)
}

pub fn wrap_mbap(transaction: u16, unit: u8, pdu: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(MBAP_LEN + pdu.len());
    out.extend(transaction.to_be_bytes());
    out.extend(0u16.to_be_bytes());
    out.extend(((pdu.len() + 1) as u16).to_be_bytes());
    out.push(unit);
    out.extend_from_slice(pdu);
    out
}

/// Parsed MBAP header plus the PDU it frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adu<'a> {
    pub transaction: u16,
    pub unit: u8,
    pub pdu: &'a [u8],
}

pub fn split_mbap(frame: &[u8]) -> Result<Adu<'_>, ModbusError> {
    if frame.len() < MBAP_LEN + 1 {
        return Err(ModbusError::ShortFrame(frame.len()));
    }
    let transaction = u16::from_be_bytes([frame[0], frame[1]]);
    let protocol = u16::from_be_bytes([frame[2], frame[3]]);
    if protocol != 0 {
        return Err(ModbusError::BadProtocol(protocol));
    }
    let declared = u16::from_be_bytes([frame[4], frame[5]]) as usize;
    let actual = frame.len() - 6;
    if declared != actual {
        return Err(ModbusError::LengthMismatch { declared, actual });
    }
    Ok(Adu {
        transaction,
        unit: frame[6],
        pdu: &frame[MBAP_LEN..],
    })
}

/// What a holding register carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalRole {
    Measurement,
    Command,
    Setpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegisterBinding {
    pub role: SignalRole,
    pub loop_id: u16,
    pub scale: f64,
}

/// Holding-register table with optional signal bindings.
#[derive(Debug, Clone, PartialEq)]
pub struct RegisterMap {
    registers: Vec<u16>,
    bindings: BTreeMap<u16, RegisterBinding>,
}

impl RegisterMap {
    pub fn new(size: usize) -> Self {
        RegisterMap {
            registers: vec![0; size.min(u16::MAX as usize + 1)],
            bindings: BTreeMap::new(),
        }
    }

    /// Three registers per loop starting at `base`: y, u, r, each scaled by `scale`.
    pub fn for_loops(loop_bases: &[(u16, u16)], scale: f64) -> Result<Self, String> {
        let size = loop_bases
            .iter()
            .map(|(_, base)| *base as usize + 3)
            .max()
            .unwrap_or(3);
        let mut map = RegisterMap::new(size);
        for &(loop_id, base) in loop_bases {
            for (off, role) in [SignalRole::Measurement, SignalRole::Command, SignalRole::Setpoint]
                .into_iter()
                .enumerate()
            {
                map.bind(base + off as u16, RegisterBinding { role, loop_id, scale })?;
            }
        }
        Ok(map)
    }

    pub fn bind(&mut self, index: u16, binding: RegisterBinding) -> Result<(), String> {
        if index as usize >= self.registers.len() {
            return Err(format!("register {index} outside map of {}", self.registers.len()));
        }
        if !(binding.scale.is_finite() && binding.scale > 0.0) {
            return Err(format!("register {index}: scale must be > 0"));
        }
        if self.bindings.contains_key(&index) {
            return Err(format!("register {index} is already bound"));
        }
        self.bindings.insert(index, binding);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.registers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registers.is_empty()
    }

    pub fn get(&self, index: u16) -> Option<u16> {
        self.registers.get(index as usize).copied()
    }

    pub fn set(&mut self, index: u16, value: u16) -> bool {
        match self.registers.get_mut(index as usize) {
            Some(r) => {
                *r = value;
                true
            }
            None => false,
        }
    }

    pub fn find(&self, role: SignalRole, loop_id: u16) -> Option<(u16, RegisterBinding)> {
        self.bindings
            .iter()
            .find(|(_, b)| b.role == role && b.loop_id == loop_id)
            .map(|(i, b)| (*i, *b))
    }

    pub fn read_signal(&self, role: SignalRole, loop_id: u16) -> Option<f64> {
        let (i, b) = self.find(role, loop_id)?;
        Some(register_to_value(self.registers[i as usize], b.scale))
    }

    pub fn write_signal(&mut self, role: SignalRole, loop_id: u16, value: f64) -> Result<(), ModbusError> {
        let (i, b) = self
            .find(role, loop_id)
            .ok_or_else(|| ModbusError::UnexpectedResponse(format!("no {role:?} register for loop {loop_id}")))?;
        self.registers[i as usize] = scale_to_register(value, b.scale)?;
        Ok(())
    }

    fn range(&self, address: u16, count: u16) -> Option<std::ops::Range<usize>> {
        let start = address as usize;
        let end = start + count as usize;
        (end <= self.registers.len()).then_some(start..end)
    }
}

pub fn scale_to_register(value: f64, scale: f64) -> Result<u16, ModbusError> {
    let scaled = (value * scale).round();
    if !scaled.is_finite() || !(0.0..=65535.0).contains(&scaled) {
        return Err(ModbusError::RangeError { value, scale });
    }
    Ok(scaled as u16)
}

pub fn register_to_value(register: u16, scale: f64) -> f64 {
    register as f64 / scale
}

fn exception(function: u8, code: u8) -> Vec<u8> {
    vec![function | 0x80, code]
}

fn serve_pdu(pdu: &[u8], map: &mut RegisterMap) -> Vec<u8> {
    let function = pdu[0];
    let body = &pdu[1..];
    let word = |i: usize| u16::from_be_bytes([body[i], body[i + 1]]);
    match function {
        READ_HOLDING => {
            if body.len() != 4 {
                return exception(function, EXC_ILLEGAL_VALUE);
            }
            let (address, count) = (word(0), word(2));
            if count == 0 || count > MAX_READ {
                return exception(function, EXC_ILLEGAL_VALUE);
            }
            let Some(range) = map.range(address, count) else {
                return exception(function, EXC_ILLEGAL_ADDRESS);
            };
            let mut out = vec![function, (count * 2) as u8];
            for v in &map.registers[range] {
                out.extend(v.to_be_bytes());
            }
            out
        }
        WRITE_SINGLE => {
            if body.len() != 4 {
                return exception(function, EXC_ILLEGAL_VALUE);
            }
            let (address, value) = (word(0), word(2));
            if !map.set(address, value) {
                return exception(function, EXC_ILLEGAL_ADDRESS);
            }
            pdu.to_vec()
        }
        WRITE_MULTIPLE => {
            if body.len() < 5 {
                return exception(function, EXC_ILLEGAL_VALUE);
            }
            let (address, count) = (word(0), word(2));
            let byte_count = body[4] as usize;
            if count == 0
                || count > MAX_WRITE
                || byte_count != count as usize * 2
                || body.len() != 5 + byte_count
            {
                return exception(function, EXC_ILLEGAL_VALUE);
            }
            let Some(range) = map.range(address, count) else {
                return exception(function, EXC_ILLEGAL_ADDRESS);
            };
            for (k, slot) in range.enumerate() {
                map.registers[slot] = word(5 + 2 * k);
            }
            let mut out = vec![function];
            out.extend(address.to_be_bytes());
            out.extend(count.to_be_bytes());
            out
        }
        other => exception(other, EXC_ILLEGAL_FUNCTION),
    }
}

/// Serves one request ADU against `map`, returning the response ADU.
///
/// Transport-level damage (short frame, length mismatch, foreign protocol)
/// is an error and the caller drops the connection; everything else is
/// answered, with an exception PDU where the standard calls for one.
pub fn modbus_serve(request: &[u8], map: &mut RegisterMap) -> Result<Vec<u8>, ModbusError> {
    let adu = split_mbap(request)?;
    let response = serve_pdu(adu.pdu, map);
    Ok(wrap_mbap(adu.transaction, adu.unit, &response))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Registers(Vec<u16>),
    WroteSingle { address: u16, value: u16 },
    WroteMultiple { address: u16, count: u16 },
}

/// Parses a response ADU and checks it against the request that caused it.
pub fn parse_response(request: &Request, transaction: u16, frame: &[u8]) -> Result<Response, ModbusError> {
    let adu = split_mbap(frame)?;
    if adu.transaction != transaction {
        return Err(ModbusError::UnexpectedResponse(format!(
            "transaction {} != {transaction}",
            adu.transaction
        )));
    }
    let pdu = adu.pdu;
    let function = request.function();
    if pdu[0] == function | 0x80 {
        let code = *pdu.get(1).ok_or(ModbusError::ShortFrame(frame.len()))?;
        return Err(ModbusError::Exception { function, code });
    }
    if pdu[0] != function {
        return Err(ModbusError::UnexpectedResponse(format!("function 0x{:02X}", pdu[0])));
    }
    let word = |i: usize| u16::from_be_bytes([pdu[i], pdu[i + 1]]);
    match request {
        Request::ReadHolding { count, .. } => {
            let n = *count as usize;
            if pdu.len() != 2 + 2 * n || pdu[1] as usize != 2 * n {
                return Err(ModbusError::UnexpectedResponse("byte count".into()));
            }
            Ok(Response::Registers((0..n).map(|k| word(2 + 2 * k)).collect()))
        }
        Request::WriteSingle { address, value } => {
            if pdu.len() != 5 || word(1) != *address || word(3) != *value {
                return Err(ModbusError::UnexpectedResponse("write echo".into()));
            }
            Ok(Response::WroteSingle {
                address: *address,
                value: *value,
            })
        }
        Request::WriteMultiple { address, values } => {
            if pdu.len() != 5 || word(1) != *address || word(3) as usize != values.len() {
                return Err(ModbusError::UnexpectedResponse("write-multiple echo".into()));
            }
            Ok(Response::WroteMultiple {
                address: *address,
                count: values.len() as u16,
            })
        }
    }
}

/// Reads one complete ADU from a byte stream.
pub fn read_adu<R: Read>(reader: &mut R) -> Result<Vec<u8>, ModbusError> {
    let mut head = [0u8; MBAP_LEN];
    reader.read_exact(&mut head)?;
    let declared = u16::from_be_bytes([head[4], head[5]]) as usize;
    if declared < 2 || MBAP_LEN - 1 + declared > MAX_ADU {
        return Err(ModbusError::LengthMismatch {
            declared,
            actual: 0,
        });
    }
    let mut frame = head.to_vec();
    frame.resize(6 + declared, 0);
    reader.read_exact(&mut frame[MBAP_LEN..])?;
    Ok(frame)
}

/// Blocking Modbus/TCP client over any byte stream.
#[derive(Debug)]
pub struct ModbusClient<S> {
    stream: S,
    unit: u8,
    transaction: u16,
}

impl<S: Read + Write> ModbusClient<S> {
    pub fn new(stream: S, unit: u8) -> Self {
        ModbusClient {
            stream,
            unit,
            transaction: 0,
        }
    }

    pub fn call(&mut self, request: &Request) -> Result<Response, ModbusError> {
        self.transaction = self.transaction.wrapping_add(1);
        let frame = request.encode(self.transaction, self.unit)?;
        self.stream.write_all(&frame)?;
        self.stream.flush()?;
        let resp = read_adu(&mut self.stream)?;
        parse_response(request, self.transaction, &resp)
    }

    pub fn read_holding(&mut self, address: u16, count: u16) -> Result<Vec<u16>, ModbusError> {
        match self.call(&Request::ReadHolding { address, count })? {
            Response::Registers(v) => Ok(v),
            other => Err(ModbusError::UnexpectedResponse(format!("{other:?}"))),
        }
    }

    pub fn write_single(&mut self, address: u16, value: u16) -> Result<(), ModbusError> {
        self.call(&Request::WriteSingle { address, value }).map(|_| ())
    }

    pub fn write_multiple(&mut self, address: u16, values: &[u16]) -> Result<(), ModbusError> {
        self.call(&Request::WriteMultiple {
            address,
            values: values.to_vec(),
        })
        .map(|_| ())
    }

    pub fn get_ref(&self) -> &S {
        &self.stream
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn read_two_registers_golden() {
        let f = modbus_request(READ_HOLDING, 0, &[2], 1, 1).unwrap();
        assert_eq!(f, vec![0x00, 0x01, 0x00, 0x00, 0x00, 0x06, 0x01, 0x03, 0x00, 0x00, 0x00, 0x02]);
    }

    #[test]
    fn write_single_golden_pdu() {
        let f = modbus_request(WRITE_SINGLE, 2, &[1000], 7, 1).unwrap();
        assert_eq!(&f[7..], &[0x06, 0x00, 0x02, 0x03, 0xE8]);
        assert_eq!(&f[4..6], &[0x00, 0x06]);
    }

    #[test]
    fn request_validation() {
        assert_eq!(
            modbus_request(0x05, 0, &[1], 1, 1),
            Err(ModbusError::UnsupportedFunction(0x05))
        );
        assert!(matches!(
            modbus_request(READ_HOLDING, 0, &[126], 1, 1),
            Err(ModbusError::CountOutOfRange { .. })
        ));
        assert!(matches!(
            modbus_request(WRITE_MULTIPLE, 0, &[0; 124], 1, 1),
            Err(ModbusError::CountOutOfRange { .. })
        ));
        assert!(modbus_request(READ_HOLDING, 0, &[125], 1, 1).is_ok());
        assert!(modbus_request(WRITE_MULTIPLE, 0, &[0; 123], 1, 1).is_ok());
    }

    #[test]
    fn write_then_read() {
        let mut map = RegisterMap::new(8);
        let w = modbus_request(WRITE_SINGLE, 2, &[1000], 1, 1).unwrap();
        let resp = modbus_serve(&w, &mut map).unwrap();
        assert_eq!(resp, w);
        let r = Request::ReadHolding { address: 2, count: 1 };
        let resp = modbus_serve(&r.encode(2, 1).unwrap(), &mut map).unwrap();
        assert_eq!(parse_response(&r, 2, &resp).unwrap(), Response::Registers(vec![1000]));
    }

    #[test]
    fn illegal_address_and_function() {
        let mut map = RegisterMap::new(3);
        let r = Request::ReadHolding { address: 9999, count: 1 };
        let resp = modbus_serve(&r.encode(5, 1).unwrap(), &mut map).unwrap();
        assert_eq!(&resp[7..], &[0x83, 0x02]);
        assert_eq!(
            parse_response(&r, 5, &resp),
            Err(ModbusError::Exception { function: 3, code: 2 })
        );
        let frame = wrap_mbap(1, 1, &[0x05, 0x00, 0x00, 0xFF, 0x00]);
        let resp = modbus_serve(&frame, &mut map).unwrap();
        assert_eq!(&resp[7..], &[0x85, 0x01]);
    }

    #[test]
    fn transport_errors() {
        let mut map = RegisterMap::new(3);
        assert_eq!(modbus_serve(&[0, 1, 0], &mut map), Err(ModbusError::ShortFrame(3)));
        let mut f = modbus_request(READ_HOLDING, 0, &[1], 1, 1).unwrap();
        f.push(0);
        assert!(matches!(modbus_serve(&f, &mut map), Err(ModbusError::LengthMismatch { .. })));
    }

    #[test]
    fn scaling() {
        assert_eq!(scale_to_register(10.0, 100.0).unwrap(), 1000);
        assert!(matches!(
            scale_to_register(655.36, 100.0),
            Err(ModbusError::RangeError { .. })
        ));
        assert!(scale_to_register(-0.01, 100.0).is_err());
        assert_eq!(scale_to_register(655.35, 100.0).unwrap(), 65535);
    }

    #[test]
    fn loop_register_convention() {
        let mut map = RegisterMap::for_loops(&[(0, 0)], DEFAULT_SCALE).unwrap();
        map.write_signal(SignalRole::Measurement, 0, 10.0).unwrap();
        map.write_signal(SignalRole::Setpoint, 0, 12.5).unwrap();
        assert_eq!(map.get(0), Some(1000));
        assert_eq!(map.get(2), Some(1250));
        assert_eq!(map.read_signal(SignalRole::Setpoint, 0), Some(12.5));
        assert!(map
            .bind(1, RegisterBinding { role: SignalRole::Command, loop_id: 1, scale: 1.0 })
            .is_err());
    }

    proptest! {
        #[test]
        fn scaling_roundtrip_error_bounded(v in 0.0f64..655.35, scale in prop_oneof![Just(100.0), 1.0f64..100.0]) {
            if let Ok(reg) = scale_to_register(v, scale) {
                prop_assert!((register_to_value(reg, scale) - v).abs() <= 0.5 / scale + 1e-12);
            }
        }
    }
}
