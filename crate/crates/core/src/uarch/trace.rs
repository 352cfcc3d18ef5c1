use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub enum TraceLevel {
    Off,
    /// Enclave transitions, predictions, transient episodes, faults.
    #[default]
    Events,
    /// Events plus every retired and transient instruction.
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub cycle: u64,
    pub kind: &'static str,
    pub addr: u64,
    pub detail: String,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {:#x}", self.cycle, self.kind, self.addr)?;
        if !self.detail.is_empty() {
            write!(f, " {}", self.detail)?;
        }
        Ok(())
    }
}

/// Bounded event log; the oldest half is dropped when full.
#[derive(Debug, Clone)]
pub struct Trace {
    pub level: TraceLevel,
    pub capacity: usize,
    events: Vec<TraceEvent>,
    dropped: usize,
}

impl Default for Trace {
    fn default() -> Self {
        Trace::new(TraceLevel::Events)
    }
}

impl Trace {
    pub fn new(level: TraceLevel) -> Trace {
        Trace {
            level,
            capacity: 200_000,
            events: Vec::new(),
            dropped: 0,
        }
    }

    pub fn wants(&self, level: TraceLevel) -> bool {
        self.level >= level && level != TraceLevel::Off
    }

    pub fn record(&mut self, level: TraceLevel, cycle: u64, kind: &'static str, addr: u64, detail: impl FnOnce() -> String) {
        if !self.wants(level) {
            return;
        }
        if self.events.len() >= self.capacity {
            let half = self.capacity / 2;
            self.events.drain(..half);
            self.dropped += half;
        }
        self.events.push(TraceEvent {
            cycle,
            kind,
            addr,
            detail: detail(),
        });
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn clear(&mut self) {
        self.events.clear();
        self.dropped = 0;
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&e.to_string());
            s.push('\n');
        }
        s
    }
}
