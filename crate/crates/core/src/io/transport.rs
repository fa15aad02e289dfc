//! Real-time endpoints for each binding scheme.
//!
//! Direction conventions: a UDP address is the bind address of whichever
//! side reads from it; on a serial path the plant listens and the
//! controller connects; on Modbus/TCP the plant hosts the register map and
//! the controller polls it.

use std::collections::HashMap;
use std::io::{ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs, UdpSocket};
use std::os::unix::net::{UnixListener, UnixStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::binding::ChannelBinding;
use super::cell::{Demux, LatestCell};
use super::modbus::{
    modbus_serve, read_adu, scale_to_register, register_to_value, ModbusClient, ModbusError,
    RegisterMap, SignalRole,
};
use super::sample::{decode_sample, encode_sample, MessageKind, SampleMessage, SAMPLE_LEN};
use super::serial::{serial_frame, Deframer};
use super::tty::{is_char_device, open_serial_device};
use super::{ChannelError, SampleSink, SampleSource};
use crate::time::TickTime;

const POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Controller,
    Plant,
}

/// In-memory endpoints shared by a controller and a plant in one process.
#[derive(Debug, Clone, Default)]
pub struct InprocFabric {
    endpoints: Arc<Mutex<HashMap<String, Demux>>>,
}

impl InprocFabric {
    pub fn endpoint(&self, name: &str) -> Demux {
        self.endpoints
            .lock()
            .unwrap()
            .entry(name.to_string())
            .or_default()
            .clone()
    }
}

/// Per-link receive diagnostics.
#[derive(Debug, Default)]
pub struct LinkStats {
    pub received: AtomicU64,
    pub decode_errors: AtomicU64,
    pub corrupt_frames: AtomicU64,
}

struct UdpRx {
    demux: Demux,
    stats: Arc<LinkStats>,
}

struct SerialLink {
    demux: Demux,
    writer: Arc<Mutex<Option<Box<dyn Write + Send>>>>,
    closed: Arc<AtomicBool>,
    stats: Arc<LinkStats>,
}

struct ModbusConn {
    addr: String,
    unit: u8,
    client: Option<ModbusClient<TcpStream>>,
    timeout: Duration,
}

impl ModbusConn {
    fn client(&mut self) -> Result<&mut ModbusClient<TcpStream>, ChannelError> {
        if self.client.is_none() {
            let stream = connect_tcp(&self.addr, self.timeout)?;
            stream.set_read_timeout(Some(self.timeout)).ok();
            stream.set_nodelay(true).ok();
            self.client = Some(ModbusClient::new(stream, self.unit));
        }
        Ok(self.client.as_mut().unwrap())
    }

    fn run<T>(
        &mut self,
        f: impl FnOnce(&mut ModbusClient<TcpStream>) -> Result<T, ModbusError>,
    ) -> Result<T, ChannelError> {
        let client = self.client()?;
        match f(client) {
            Ok(v) => Ok(v),
            Err(ModbusError::Io { kind, message }) => {
                self.client = None;
                if matches!(kind, ErrorKind::WouldBlock | ErrorKind::TimedOut) {
                    Err(ChannelError::Timeout)
                } else {
                    Err(ChannelError::Closed(format!("modbus {}: {message}", self.addr)))
                }
            }
            Err(ModbusError::RangeError { value, scale }) => Err(ChannelError::Range { value, scale }),
            Err(e) => Err(ChannelError::Modbus(e.to_string())),
        }
    }
}

struct ModbusHost {
    map: Arc<Mutex<RegisterMap>>,
    loops: Mutex<Vec<(u16, u16)>>,
    scale: f64,
}

impl ModbusHost {
    fn ensure_loop(&self, loop_id: u16, base: u16) {
        let mut loops = self.loops.lock().unwrap();
        let entry = (loop_id, base + 3 * loop_id);
        if loops.contains(&entry) {
            return;
        }
        loops.push(entry);
        let mut fresh = RegisterMap::for_loops(&loops, self.scale).expect("disjoint loop registers");
        let mut map = self.map.lock().unwrap();
        for i in 0..map.len().min(fresh.len()) {
            fresh.set(i as u16, map.get(i as u16).unwrap());
        }
        *map = fresh;
    }
}

fn connect_tcp(addr: &str, timeout: Duration) -> Result<TcpStream, ChannelError> {
    let deadline = Instant::now() + timeout;
    let target = addr
        .to_socket_addrs()
        .map_err(|e| ChannelError::Bind(format!("{addr}: {e}")))?
        .next()
        .ok_or_else(|| ChannelError::Bind(format!("{addr}: no address")))?;
    loop {
        match TcpStream::connect_timeout(&target, Duration::from_millis(200)) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => {
                return Err(ChannelError::Closed(format!("connect {addr}: {e}")))
            }
            Err(_) => thread::sleep(POLL),
        }
    }
}

/// Opens and caches the endpoints one process side needs.
pub struct Endpoints {
    side: Side,
    fabric: InprocFabric,
    connect_timeout: Duration,
    stop: Arc<AtomicBool>,
    udp_rx: HashMap<String, UdpRx>,
    serial: HashMap<String, SerialLink>,
    modbus_clients: HashMap<String, Arc<Mutex<ModbusConn>>>,
    modbus_hosts: HashMap<String, Arc<ModbusHost>>,
}

impl Drop for Endpoints {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}

impl Endpoints {
    pub fn new(side: Side, fabric: InprocFabric) -> Self {
        Endpoints {
            side,
            fabric,
            connect_timeout: Duration::from_secs(10),
            stop: Arc::new(AtomicBool::new(false)),
            udp_rx: HashMap::new(),
            serial: HashMap::new(),
            modbus_clients: HashMap::new(),
            modbus_hosts: HashMap::new(),
        }
    }

    pub fn with_connect_timeout(mut self, timeout: Duration) -> Self {
        self.connect_timeout = timeout;
        self
    }

    /// Receive-side statistics for a binding, if it has been opened.
    pub fn stats(&self, binding: &ChannelBinding) -> Option<Arc<LinkStats>> {
        match binding {
            ChannelBinding::Udp { addr } => self.udp_rx.get(addr).map(|r| r.stats.clone()),
            ChannelBinding::Serial { path, .. } => self.serial.get(path).map(|l| l.stats.clone()),
            _ => None,
        }
    }

    pub fn source(
        &mut self,
        binding: &ChannelBinding,
        kind: MessageKind,
        loop_id: u16,
    ) -> Result<Box<dyn SampleSource>, ChannelError> {
        match binding {
            ChannelBinding::Inproc { name, .. } => Ok(Box::new(CellSource {
                cell: self.fabric.endpoint(name).cell(kind, loop_id),
                closed: None,
            })),
            ChannelBinding::Udp { addr } => {
                let rx = self.udp_receiver(addr)?;
                Ok(Box::new(CellSource {
                    cell: rx.demux.cell(kind, loop_id),
                    closed: None,
                }))
            }
            ChannelBinding::Serial { path, .. } => {
                let is_controller = self.side == Side::Controller;
                let link = self.serial_link(binding, path)?;
                let closed = is_controller.then(|| (link.closed.clone(), path.clone()));
                Ok(Box::new(CellSource {
                    cell: link.demux.cell(kind, loop_id),
                    closed,
                }))
            }
            ChannelBinding::ModbusTcp {
                addr,
                unit,
                base,
                scale,
            } => {
                let (role, offset) = match kind {
                    MessageKind::SensorSample => (SignalRole::Measurement, 0),
                    MessageKind::ActuatorCmd => (SignalRole::Command, 1),
                    MessageKind::Setpoint => (SignalRole::Setpoint, 2),
                };
                let address = base + 3 * loop_id + offset;
                match self.side {
                    Side::Controller => Ok(Box::new(ModbusPollSource {
                        conn: self.modbus_client(addr, *unit),
                        address,
                        scale: *scale,
                        kind,
                        loop_id,
                        seq: 0,
                    })),
                    Side::Plant => {
                        let host = self.modbus_host(addr, *scale)?;
                        host.ensure_loop(loop_id, *base);
                        Ok(Box::new(RegisterSource {
                            map: host.map.clone(),
                            role,
                            kind,
                            loop_id,
                            seq: 0,
                        }))
                    }
                }
            }
        }
    }

    pub fn sink(&mut self, binding: &ChannelBinding, loop_id: u16) -> Result<Box<dyn SampleSink>, ChannelError> {
        match binding {
            ChannelBinding::Inproc { name, .. } => Ok(Box::new(DemuxSink {
                demux: self.fabric.endpoint(name),
            })),
            ChannelBinding::Udp { addr } => {
                let socket = UdpSocket::bind("0.0.0.0:0").map_err(|e| ChannelError::Bind(e.to_string()))?;
                socket
                    .connect(addr)
                    .map_err(|e| ChannelError::Bind(format!("{addr}: {e}")))?;
                Ok(Box::new(UdpSink {
                    socket,
                    addr: addr.clone(),
                    refused_is_closed: self.side == Side::Controller,
                }))
            }
            ChannelBinding::Serial { path, .. } => {
                let side = self.side;
                let link = self.serial_link(binding, path)?;
                Ok(Box::new(SerialSink {
                    writer: link.writer.clone(),
                    path: path.clone(),
                    side,
                }))
            }
            ChannelBinding::ModbusTcp {
                addr,
                unit,
                base,
                scale,
            } => match self.side {
                Side::Controller => Ok(Box::new(ModbusWriteSink {
                    conn: self.modbus_client(addr, *unit),
                    base: base + 3 * loop_id,
                    scale: *scale,
                })),
                Side::Plant => {
                    let host = self.modbus_host(addr, *scale)?;
                    host.ensure_loop(loop_id, *base);
                    Ok(Box::new(RegisterSink { map: host.map.clone() }))
                }
            },
        }
    }

    fn udp_receiver(&mut self, addr: &str) -> Result<&UdpRx, ChannelError> {
        if !self.udp_rx.contains_key(addr) {
            let socket = UdpSocket::bind(addr).map_err(|e| ChannelError::Bind(format!("{addr}: {e}")))?;
            socket.set_read_timeout(Some(POLL)).ok();
            let demux = Demux::default();
            let stats = Arc::new(LinkStats::default());
            let (d, s, stop) = (demux.clone(), stats.clone(), self.stop.clone());
            thread::Builder::new()
                .name(format!("udp-rx {addr}"))
                .spawn(move || {
                    let mut buf = [0u8; 512];
                    while !stop.load(Ordering::Relaxed) {
                        match socket.recv(&mut buf) {
                            Ok(n) if n == SAMPLE_LEN => match decode_sample(&buf[..n]) {
                                Ok(msg) => {
                                    s.received.fetch_add(1, Ordering::Relaxed);
                                    d.dispatch(msg);
                                }
                                Err(_) => {
                                    s.decode_errors.fetch_add(1, Ordering::Relaxed);
                                }
                            },
                            Ok(_) => {
                                s.decode_errors.fetch_add(1, Ordering::Relaxed);
                            }
                            Err(_) => {}
                        }
                    }
                })
                .map_err(|e| ChannelError::Bind(e.to_string()))?;
            self.udp_rx.insert(addr.to_string(), UdpRx { demux, stats });
        }
        Ok(&self.udp_rx[addr])
    }

    fn serial_link(&mut self, binding: &ChannelBinding, path: &str) -> Result<&SerialLink, ChannelError> {
        if !self.serial.contains_key(path) {
            let ChannelBinding::Serial { config, .. } = binding else {
                unreachable!()
            };
            let link = SerialLink {
                demux: Demux::default(),
                writer: Arc::new(Mutex::new(None)),
                closed: Arc::new(AtomicBool::new(false)),
                stats: Arc::new(LinkStats::default()),
            };
            if is_char_device(path) {
                let file = open_serial_device(path, config).map_err(|e| ChannelError::Bind(format!("{path}: {e}")))?;
                let reader = file.try_clone().map_err(|e| ChannelError::Io(e.to_string()))?;
                *link.writer.lock().unwrap() = Some(Box::new(file));
                spawn_serial_reader(Box::new(reader), &link, self.stop.clone(), config.buffer_size);
            } else {
                match self.side {
                    Side::Controller => {
                        let stream = connect_unix(path, self.connect_timeout)?;
                        stream.set_read_timeout(Some(POLL)).ok();
                        let reader = stream.try_clone().map_err(|e| ChannelError::Io(e.to_string()))?;
                        *link.writer.lock().unwrap() = Some(Box::new(stream));
                        spawn_serial_reader(Box::new(reader), &link, self.stop.clone(), config.buffer_size);
                    }
                    Side::Plant => {
                        let _ = std::fs::remove_file(path);
                        let listener =
                            UnixListener::bind(path).map_err(|e| ChannelError::Bind(format!("{path}: {e}")))?;
                        listener.set_nonblocking(true).ok();
                        let (stop, writer) = (self.stop.clone(), link.writer.clone());
                        let proto = SerialLink {
                            demux: link.demux.clone(),
                            writer: link.writer.clone(),
                            closed: link.closed.clone(),
                            stats: link.stats.clone(),
                        };
                        let buffer = config.buffer_size;
                        let owned_path = path.to_string();
                        thread::spawn(move || {
                            while !stop.load(Ordering::Relaxed) {
                                match listener.accept() {
                                    Ok((stream, _)) => {
                                        stream.set_nonblocking(false).ok();
                                        stream.set_read_timeout(Some(POLL)).ok();
                                        if let Ok(reader) = stream.try_clone() {
                                            *writer.lock().unwrap() = Some(Box::new(stream));
                                            spawn_serial_reader(Box::new(reader), &proto, stop.clone(), buffer);
                                        }
                                    }
                                    Err(_) => thread::sleep(POLL),
                                }
                            }
                            let _ = std::fs::remove_file(owned_path);
                        });
                    }
                }
            }
            self.serial.insert(path.to_string(), link);
        }
        Ok(&self.serial[path])
    }

    fn modbus_client(&mut self, addr: &str, unit: u8) -> Arc<Mutex<ModbusConn>> {
        let timeout = self.connect_timeout;
        self.modbus_clients
            .entry(format!("{addr}/{unit}"))
            .or_insert_with(|| {
                Arc::new(Mutex::new(ModbusConn {
                    addr: addr.to_string(),
                    unit,
                    client: None,
                    timeout,
                }))
            })
            .clone()
    }

    fn modbus_host(&mut self, addr: &str, scale: f64) -> Result<Arc<ModbusHost>, ChannelError> {
        if let Some(h) = self.modbus_hosts.get(addr) {
            return Ok(h.clone());
        }
        let listener = TcpListener::bind(addr).map_err(|e| ChannelError::Bind(format!("{addr}: {e}")))?;
        listener.set_nonblocking(true).ok();
        let host = Arc::new(ModbusHost {
            map: Arc::new(Mutex::new(RegisterMap::new(0))),
            loops: Mutex::new(Vec::new()),
            scale,
        });
        let (map, stop) = (host.map.clone(), self.stop.clone());
        thread::spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let (map, stop) = (map.clone(), stop.clone());
                        thread::spawn(move || serve_modbus_connection(stream, map, stop));
                    }
                    Err(_) => thread::sleep(POLL),
                }
            }
        });
        self.modbus_hosts.insert(addr.to_string(), host.clone());
        Ok(host)
    }
}

/// Serves one Modbus/TCP connection until EOF, a transport error, or `stop`.
pub fn serve_modbus_connection(mut stream: TcpStream, map: Arc<Mutex<RegisterMap>>, stop: Arc<AtomicBool>) {
    stream.set_nonblocking(false).ok();
    stream.set_nodelay(true).ok();
    stream.set_read_timeout(Some(Duration::from_millis(200))).ok();
    while !stop.load(Ordering::Relaxed) {
        let frame = match read_adu(&mut stream) {
            Ok(f) => f,
            Err(ModbusError::Io {
                kind: ErrorKind::WouldBlock | ErrorKind::TimedOut,
                ..
            }) => continue,
            Err(_) => return,
        };
        let response = {
            let mut map = map.lock().unwrap();
            modbus_serve(&frame, &mut map)
        };
        match response {
            Ok(bytes) => {
                if stream.write_all(&bytes).is_err() {
                    return;
                }
            }
            Err(_) => return,
        }
    }
}

fn connect_unix(path: &str, timeout: Duration) -> Result<UnixStream, ChannelError> {
    let deadline = Instant::now() + timeout;
    loop {
        match UnixStream::connect(path) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => return Err(ChannelError::Closed(format!("connect {path}: {e}"))),
            Err(_) => thread::sleep(POLL),
        }
    }
}

fn spawn_serial_reader(mut reader: Box<dyn Read + Send>, link: &SerialLink, stop: Arc<AtomicBool>, buffer: usize) {
    let (demux, closed, stats) = (link.demux.clone(), link.closed.clone(), link.stats.clone());
    thread::spawn(move || {
        let mut deframer = Deframer::with_expected_len(SAMPLE_LEN as u8);
        let mut buf = vec![0u8; buffer.max(64)];
        while !stop.load(Ordering::Relaxed) {
            match reader.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => {
                    for payload in deframer.push(&buf[..n]) {
                        match decode_sample(&payload) {
                            Ok(msg) => {
                                stats.received.fetch_add(1, Ordering::Relaxed);
                                demux.dispatch(msg);
                            }
                            Err(_) => {
                                stats.decode_errors.fetch_add(1, Ordering::Relaxed);
                            }
                        }
                    }
                    stats.corrupt_frames.store(deframer.corrupt_frames(), Ordering::Relaxed);
                }
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
                Err(_) => break,
            }
        }
        closed.store(true, Ordering::SeqCst);
    });
}

struct CellSource {
    cell: LatestCell,
    closed: Option<(Arc<AtomicBool>, String)>,
}

impl SampleSource for CellSource {
    fn latest(&mut self) -> Result<Option<SampleMessage>, ChannelError> {
        if let Some((flag, name)) = &self.closed {
            if flag.load(Ordering::SeqCst) {
                return Err(ChannelError::Closed(format!("serial link {name} closed")));
            }
        }
        Ok(self.cell.latest())
    }
}

struct DemuxSink {
    demux: Demux,
}

impl SampleSink for DemuxSink {
    fn send(&mut self, msg: &SampleMessage) -> Result<(), ChannelError> {
        self.demux.dispatch(*msg);
        Ok(())
    }
}

struct UdpSink {
    socket: UdpSocket,
    addr: String,
    refused_is_closed: bool,
}

impl SampleSink for UdpSink {
    fn send(&mut self, msg: &SampleMessage) -> Result<(), ChannelError> {
        match self.socket.send(&encode_sample(msg)) {
            Ok(_) => Ok(()),
            Err(e) if e.kind() == ErrorKind::ConnectionRefused => {
                if self.refused_is_closed {
                    Err(ChannelError::Closed(format!("udp peer {} refused", self.addr)))
                } else {
                    Ok(())
                }
            }
            Err(e) => Err(ChannelError::Io(e.to_string())),
        }
    }
}

struct SerialSink {
    writer: Arc<Mutex<Option<Box<dyn Write + Send>>>>,
    path: String,
    side: Side,
}

impl SampleSink for SerialSink {
    fn send(&mut self, msg: &SampleMessage) -> Result<(), ChannelError> {
        let frame = serial_frame(&encode_sample(msg)).expect("28-byte payload");
        let mut writer = self.writer.lock().unwrap();
        let Some(w) = writer.as_mut() else {
            return Ok(());
        };
        if let Err(e) = w.write_all(&frame).and_then(|_| w.flush()) {
            *writer = None;
            if self.side == Side::Controller {
                return Err(ChannelError::Closed(format!("serial {}: {e}", self.path)));
            }
        }
        Ok(())
    }
}

struct ModbusPollSource {
    conn: Arc<Mutex<ModbusConn>>,
    address: u16,
    scale: f64,
    kind: MessageKind,
    loop_id: u16,
    seq: u32,
}

impl SampleSource for ModbusPollSource {
    fn latest(&mut self) -> Result<Option<SampleMessage>, ChannelError> {
        let address = self.address;
        let regs = self.conn.lock().unwrap().run(|c| c.read_holding(address, 1))?;
        self.seq += 1;
        Ok(Some(SampleMessage::new(
            self.kind,
            self.loop_id,
            self.seq,
            TickTime::ZERO,
            register_to_value(regs[0], self.scale),
        )))
    }
}

struct ModbusWriteSink {
    conn: Arc<Mutex<ModbusConn>>,
    base: u16,
    scale: f64,
}

impl SampleSink for ModbusWriteSink {
    fn send(&mut self, msg: &SampleMessage) -> Result<(), ChannelError> {
        let offset = match msg.kind {
            MessageKind::SensorSample => 0,
            MessageKind::ActuatorCmd => 1,
            MessageKind::Setpoint => 2,
        };
        let reg = scale_to_register(msg.value, self.scale).map_err(|_| ChannelError::Range {
            value: msg.value,
            scale: self.scale,
        })?;
        let address = self.base + offset;
        self.conn.lock().unwrap().run(|c| c.write_single(address, reg))
    }
}

struct RegisterSource {
    map: Arc<Mutex<RegisterMap>>,
    role: SignalRole,
    kind: MessageKind,
    loop_id: u16,
    seq: u32,
}

impl SampleSource for RegisterSource {
    fn latest(&mut self) -> Result<Option<SampleMessage>, ChannelError> {
        let value = self.map.lock().unwrap().read_signal(self.role, self.loop_id);
        Ok(value.map(|v| {
            self.seq += 1;
            SampleMessage::new(self.kind, self.loop_id, self.seq, TickTime::ZERO, v)
        }))
    }
}

struct RegisterSink {
    map: Arc<Mutex<RegisterMap>>,
}

impl SampleSink for RegisterSink {
    fn send(&mut self, msg: &SampleMessage) -> Result<(), ChannelError> {
        let role = match msg.kind {
            MessageKind::SensorSample => SignalRole::Measurement,
            MessageKind::ActuatorCmd => SignalRole::Command,
            MessageKind::Setpoint => SignalRole::Setpoint,
        };
        self.map
            .lock()
            .unwrap()
            .write_signal(role, msg.loop_id, msg.value)
            .map_err(|e| match e {
                ModbusError::RangeError { value, scale } => ChannelError::Range { value, scale },
                other => ChannelError::Modbus(other.to_string()),
            })
    }
}
