//! Sectioned `key = value` scenario files.
//!
//! ```text
//! [grid]
//! v_slack = 1.0
//! bus = PCC slack
//! bus = BAT inverter p_kw=10
//! line = PCC BAT 0.884 0.039
//! ```
//!
//! Repeated keys (`bus`, `line`, `event`, ...) form lists. Buses are
//! numbered in declaration order and referenced by name elsewhere.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use voltgrid_core::controller::QLimits;
use voltgrid_core::grid::{Bus, BusId, BusKind, Line};
use voltgrid_core::linalg::Matrix;
use voltgrid_core::scenario::{
    ControlMode, ControllerSpec, DummySpec, EventAction, GridSpec, InnerMode, InverterSpec, Scenario, TimedEvent,
    TransportSpec,
};
use voltgrid_core::sim::TransportMode;

#[derive(Debug, thiserror::Error)]
pub enum ParseError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{0}")]
    Semantic(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn syntax(line: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Syntax { line, msg: msg.into() }
}

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    key: String,
    value: String,
}

#[derive(Debug, Default)]
struct Sections(HashMap<String, Vec<Entry>>);

impl Sections {
    fn parse(text: &str) -> Result<Self, ParseError> {
        let mut out: HashMap<String, Vec<Entry>> = HashMap::new();
        let mut current: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| syntax(line, "unterminated section header"))?
                    .trim();
                if !KNOWN_SECTIONS.contains(&name) {
                    return Err(syntax(line, format!("unknown section [{name}]")));
                }
                out.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| syntax(line, "expected `key = value`"))?;
            let section = current
                .as_ref()
                .ok_or_else(|| syntax(line, "entry before the first section"))?;
            out.get_mut(section).expect("created with header").push(Entry {
                line,
                key: key.trim().to_string(),
                value: value.trim().to_string(),
            });
        }
        Ok(Self(out))
    }

    fn entries(&self, section: &str) -> &[Entry] {
        self.0.get(section).map_or(&[], |v| v.as_slice())
    }

    fn all(&self, section: &str, key: &'static str) -> impl Iterator<Item = &Entry> + '_ {
        self.entries(section).iter().filter(move |e| e.key == key)
    }

    fn one(&self, section: &str, key: &'static str) -> Result<Option<&Entry>, ParseError> {
        let mut it = self.all(section, key);
        let first = it.next();
        if let Some(dup) = it.next() {
            return Err(syntax(dup.line, format!("`{key}` given twice in [{section}]")));
        }
        Ok(first)
    }

    fn check_keys(&self, section: &str, allowed: &[&str]) -> Result<(), ParseError> {
        for e in self.entries(section) {
            if !allowed.contains(&e.key.as_str()) {
                return Err(syntax(e.line, format!("unknown key `{}` in [{section}]", e.key)));
            }
        }
        Ok(())
    }
}

const KNOWN_SECTIONS: [&str; 8] = [
    "scenario",
    "grid",
    "inverters",
    "controller",
    "events",
    "transport",
    "dummy_nodes",
    "clock",
];

fn num<T: std::str::FromStr>(line: usize, s: &str, what: &str) -> Result<T, ParseError> {
    s.parse()
        .map_err(|_| syntax(line, format!("invalid {what}: `{s}`")))
}

fn floats(e: &Entry) -> Result<Vec<f64>, ParseError> {
    e.value
        .split_whitespace()
        .map(|t| num(e.line, t, "number"))
        .collect()
}

fn flag(e: &Entry) -> Result<bool, ParseError> {
    match e.value.as_str() {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        v => Err(syntax(e.line, format!("expected true/false, got `{v}`"))),
    }
}

struct BusTable {
    ids: HashMap<String, BusId>,
}

impl BusTable {
    fn resolve(&self, line: usize, name: &str) -> Result<BusId, ParseError> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| syntax(line, format!("unknown bus `{name}`")))
    }
}

fn parse_kind(line: usize, s: &str) -> Result<BusKind, ParseError> {
    Ok(match s {
        "slack" => BusKind::Slack,
        "load" => BusKind::Load,
        "inverter" => BusKind::Inverter,
        "passive" => BusKind::Passive,
        _ => return Err(syntax(line, format!("unknown bus kind `{s}`"))),
    })
}

fn parse_grid(s: &Sections) -> Result<(GridSpec, BusTable), ParseError> {
    s.check_keys("grid", &["v_slack", "v_min", "v_max", "bus", "line", "x_row", "g_row"])?;
    let scalar = |key: &'static str, default: f64| -> Result<f64, ParseError> {
        s.one("grid", key)?
            .map_or(Ok(default), |e| num(e.line, &e.value, key))
    };
    let mut buses = Vec::new();
    let mut ids = HashMap::new();
    for e in s.all("grid", "bus") {
        let mut tok = e.value.split_whitespace();
        let name = tok.next().ok_or_else(|| syntax(e.line, "bus needs a name"))?;
        let kind = parse_kind(e.line, tok.next().ok_or_else(|| syntax(e.line, "bus needs a kind"))?)?;
        let (mut p_w, mut q_var) = (0.0, 0.0);
        for t in tok {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| syntax(e.line, format!("expected key=value, got `{t}`")))?;
            let x: f64 = num(e.line, v, k)?;
            match k {
                "p_kw" => p_w = x * 1000.0,
                "q_kvar" => q_var = x * 1000.0,
                _ => return Err(syntax(e.line, format!("unknown bus attribute `{k}`"))),
            }
        }
        let id = buses.len();
        if ids.insert(name.to_string(), id).is_some() {
            return Err(syntax(e.line, format!("bus `{name}` declared twice")));
        }
        buses.push(Bus::new(id, name, kind).with_injection(p_w, q_var));
    }
    let table = BusTable { ids };
    let mut lines = Vec::new();
    for e in s.all("grid", "line") {
        let tok: Vec<&str> = e.value.split_whitespace().collect();
        if tok.len() != 4 {
            return Err(syntax(e.line, "line needs `FROM TO R_OHM X_OHM`"));
        }
        lines.push(Line::new(
            table.resolve(e.line, tok[0])?,
            table.resolve(e.line, tok[1])?,
            num(e.line, tok[2], "resistance")?,
            num(e.line, tok[3], "reactance")?,
        ));
    }
    let matrix = |key: &'static str| -> Result<Option<Matrix>, ParseError> {
        let rows = s.all("grid", key).map(floats).collect::<Result<Vec<_>, _>>()?;
        if rows.is_empty() {
            return Ok(None);
        }
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(ParseError::Semantic(format!("`{key}` rows must form a square matrix")));
        }
        Ok(Some(Matrix::from_rows(&rows)))
    };
    Ok((
        GridSpec {
            buses,
            lines,
            v_slack: scalar("v_slack", 1.0)?,
            v_min: scalar("v_min", 0.95)?,
            v_max: scalar("v_max", 1.05)?,
            explicit_x: matrix("x_row")?,
            explicit_g: matrix("g_row")?,
        },
        table,
    ))
}

fn parse_inverters(s: &Sections, t: &BusTable) -> Result<Vec<InverterSpec>, ParseError> {
    s.check_keys("inverters", &["inverter"])?;
    s.all("inverters", "inverter")
        .map(|e| {
            let tok: Vec<&str> = e.value.split_whitespace().collect();
            if tok.len() != 3 {
                return Err(syntax(e.line, "inverter needs `BUS Q_MIN_KVAR Q_MAX_KVAR`"));
            }
            let limits = QLimits::new(num(e.line, tok[1], "q_min")?, num(e.line, tok[2], "q_max")?)
                .map_err(|err| syntax(e.line, err.to_string()))?;
            Ok(InverterSpec {
                bus: t.resolve(e.line, tok[0])?,
                limits,
            })
        })
        .collect()
}

fn parse_controller(s: &Sections) -> Result<ControllerSpec, ParseError> {
    s.check_keys(
        "controller",
        &[
            "mode",
            "alpha",
            "gamma",
            "k",
            "period_s",
            "droop",
            "inner",
            "tolerance_kvar",
            "warm_start",
            "enabled_at_start",
        ],
    )?;
    let mut c = ControllerSpec::default();
    if let Some(e) = s.one("controller", "mode")? {
        c.mode = match e.value.as_str() {
            "off" => ControlMode::Off,
            "droop" => ControlMode::Droop,
            "distributed" => ControlMode::Distributed,
            v => return Err(syntax(e.line, format!("unknown controller mode `{v}`"))),
        };
    }
    if let Some(e) = s.one("controller", "alpha")? {
        c.alpha = num(e.line, &e.value, "alpha")?;
    }
    if let Some(e) = s.one("controller", "gamma")? {
        c.gamma = match e.value.as_str() {
            "auto" => None,
            v => Some(num(e.line, v, "gamma")?),
        };
    }
    if let Some(e) = s.one("controller", "k")? {
        c.k = num(e.line, &e.value, "k")?;
    }
    if let Some(e) = s.one("controller", "period_s")? {
        c.period_s = num(e.line, &e.value, "period")?;
    }
    if let Some(e) = s.one("controller", "droop")? {
        let v = floats(e)?;
        c.droop_v = v
            .try_into()
            .map_err(|_| syntax(e.line, "droop needs four breakpoints"))?;
    }
    let tol = match s.one("controller", "tolerance_kvar")? {
        Some(e) => num(e.line, &e.value, "tolerance")?,
        None => 0.01,
    };
    if let Some(e) = s.one("controller", "inner")? {
        c.inner = match e.value.as_str() {
            "fixed" => InnerMode::FixedK,
            "tolerance" => InnerMode::Tolerance { tolerance_kvar: tol },
            v => return Err(syntax(e.line, format!("unknown inner mode `{v}`"))),
        };
    }
    if let Some(e) = s.one("controller", "warm_start")? {
        c.warm_start = flag(e)?;
    }
    if let Some(e) = s.one("controller", "enabled_at_start")? {
        c.enabled_at_start = flag(e)?;
    }
    Ok(c)
}

fn parse_events(s: &Sections, t: &BusTable) -> Result<Vec<TimedEvent>, ParseError> {
    s.check_keys("events", &["event"])?;
    s.all("events", "event")
        .map(|e| {
            let tok: Vec<&str> = e.value.split_whitespace().collect();
            if tok.len() < 2 {
                return Err(syntax(e.line, "event needs `TIME_S ACTION ...`"));
            }
            let time_s: f64 = num(e.line, tok[0], "event time")?;
            let action = match (tok[1], tok.len()) {
                ("enable_controller", 2) => EventAction::EnableController,
                ("disable_controller", 2) => EventAction::DisableController,
                ("end", 2) => EventAction::End,
                ("set_injection", 5) => EventAction::SetInjection {
                    bus: t.resolve(e.line, tok[2])?,
                    p_w: num::<f64>(e.line, tok[3], "p_kw")? * 1000.0,
                    q_var: num::<f64>(e.line, tok[4], "q_kvar")? * 1000.0,
                },
                (a, _) => return Err(syntax(e.line, format!("malformed event `{a}`"))),
            };
            Ok(TimedEvent { time_s, action })
        })
        .collect()
}

fn ms_to_us(line: usize, s: &str) -> Result<u64, ParseError> {
    let ms: f64 = num(line, s, "milliseconds")?;
    if !(ms >= 0.0) {
        return Err(syntax(line, "durations must be >= 0"));
    }
    Ok((ms * 1000.0).round() as u64)
}

fn parse_transport(s: &Sections) -> Result<TransportSpec, ParseError> {
    s.check_keys("transport", &["mode", "seed", "round_ms", "delay_ms"])?;
    let mut t = TransportSpec::default();
    if let Some(e) = s.one("transport", "seed")? {
        t.seed = num(e.line, &e.value, "seed")?;
    }
    let mode = s.one("transport", "mode")?;
    match mode.map(|e| e.value.as_str()).unwrap_or("deterministic_rounds") {
        "deterministic_rounds" => {
            let round_us = match s.one("transport", "round_ms")? {
                Some(e) => ms_to_us(e.line, &e.value)?.max(1),
                None => 1000,
            };
            t.mode = TransportMode::DeterministicRounds { round_us };
        }
        "random_delay" => {
            let e = s
                .one("transport", "delay_ms")?
                .ok_or_else(|| ParseError::Semantic("random_delay needs `delay_ms = MIN MAX`".into()))?;
            let tok: Vec<&str> = e.value.split_whitespace().collect();
            if tok.len() != 2 {
                return Err(syntax(e.line, "delay_ms needs `MIN MAX`"));
            }
            let (min_us, max_us) = (ms_to_us(e.line, tok[0])?, ms_to_us(e.line, tok[1])?);
            if min_us > max_us {
                return Err(syntax(e.line, "delay_ms: MIN exceeds MAX"));
            }
            t.mode = TransportMode::RandomDelay { min_us, max_us };
        }
        v => {
            return Err(syntax(
                mode.map_or(0, |e| e.line),
                format!("unknown transport mode `{v}`"),
            ))
        }
    }
    Ok(t)
}

/// Parses scenario text. `name` is used when the file has none.
pub fn parse_scenario(text: &str, name: &str) -> Result<Scenario, ParseError> {
    let s = Sections::parse(text)?;
    s.check_keys(
        "scenario",
        &["name", "max_steps", "noise_sigma_pu", "interleaved_alpha"],
    )?;
    let (grid, table) = parse_grid(&s)?;
    let inverters = parse_inverters(&s, &table)?;
    let controller = parse_controller(&s)?;
    let events = parse_events(&s, &table)?;
    let transport = parse_transport(&s)?;
    s.check_keys("dummy_nodes", &["count", "host"])?;
    let dummy_nodes = match s.one("dummy_nodes", "host")? {
        Some(e) => {
            let tok: Vec<&str> = e.value.split_whitespace().collect();
            if tok.len() != 2 {
                return Err(syntax(e.line, "host needs `FROM TO`"));
            }
            let count = match s.one("dummy_nodes", "count")? {
                Some(c) => num(c.line, &c.value, "count")?,
                None => 0,
            };
            Some(DummySpec {
                count,
                from: table.resolve(e.line, tok[0])?,
                to: table.resolve(e.line, tok[1])?,
            })
        }
        None => {
            if let Some(c) = s.one("dummy_nodes", "count")? {
                return Err(syntax(c.line, "dummy nodes need a host line"));
            }
            None
        }
    };
    s.check_keys("clock", &["offsets_s"])?;
    let clock_offsets_s = match s.one("clock", "offsets_s")? {
        Some(e) => {
            let v = floats(e)?;
            if v.iter().any(|x| !(*x >= 0.0)) {
                return Err(syntax(e.line, "clock offsets must be >= 0"));
            }
            v
        }
        None => Vec::new(),
    };
    let get = |key: &'static str| s.one("scenario", key);
    let max_steps = match get("max_steps")? {
        Some(e) => num(e.line, &e.value, "max_steps")?,
        None => 100_000,
    };
    let noise_sigma_pu = match get("noise_sigma_pu")? {
        Some(e) => num(e.line, &e.value, "noise")?,
        None => 0.0,
    };
    let interleaved_alpha = match get("interleaved_alpha")? {
        Some(e) => Some(num(e.line, &e.value, "alpha")?),
        None => None,
    };
    let name = get("name")?.map_or_else(|| name.to_string(), |e| e.value.clone());
    let scenario = Scenario {
        name,
        grid,
        inverters,
        controller,
        events,
        transport,
        dummy_nodes,
        clock_offsets_s,
        noise_sigma_pu,
        max_steps,
        interleaved_alpha,
    };
    scenario
        .setup()
        .map_err(|e| ParseError::Semantic(e.to_string()))?;
    Ok(scenario)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ParseError> {
    let text = std::fs::read_to_string(path).map_err(|source| ParseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
    parse_scenario(&text, stem)
}

fn kind_name(k: BusKind) -> &'static str {
    match k {
        BusKind::Slack => "slack",
        BusKind::Load => "load",
        BusKind::Inverter => "inverter",
        BusKind::Passive => "passive",
    }
}

/// Writes `scenario` back in the file format.
pub fn format_scenario(sc: &Scenario) -> String {
    let mut o = String::new();
    let name = |id: BusId| sc.grid.buses[id].name.as_str();
    let _ = writeln!(o, "[scenario]\nname = {}\nmax_steps = {}", sc.name, sc.max_steps);
    let _ = writeln!(o, "noise_sigma_pu = {}", sc.noise_sigma_pu);
    if let Some(a) = sc.interleaved_alpha {
        let _ = writeln!(o, "interleaved_alpha = {a}");
    }
    let g = &sc.grid;
    let _ = writeln!(o, "\n[grid]\nv_slack = {}\nv_min = {}\nv_max = {}", g.v_slack, g.v_min, g.v_max);
    for b in &g.buses {
        let _ = writeln!(
            o,
            "bus = {} {} p_kw={} q_kvar={}",
            b.name,
            kind_name(b.kind),
            b.p_w / 1000.0,
            b.q_var / 1000.0
        );
    }
    for l in &g.lines {
        let _ = writeln!(o, "line = {} {} {} {}", name(l.from), name(l.to), l.r_ohm, l.x_ohm);
    }
    for (key, m) in [("x_row", &g.explicit_x), ("g_row", &g.explicit_g)] {
        if let Some(m) = m {
            for i in 0..m.rows() {
                let row: Vec<String> = m.row(i).iter().map(|x| x.to_string()).collect();
                let _ = writeln!(o, "{key} = {}", row.join(" "));
            }
        }
    }
    let _ = writeln!(o, "\n[inverters]");
    for i in &sc.inverters {
        let _ = writeln!(o, "inverter = {} {} {}", name(i.bus), i.limits.min, i.limits.max);
    }
    let c = &sc.controller;
    let mode = match c.mode {
        ControlMode::Off => "off",
        ControlMode::Droop => "droop",
        ControlMode::Distributed => "distributed",
    };
    let _ = writeln!(o, "\n[controller]\nmode = {mode}\nalpha = {}", c.alpha);
    match c.gamma {
        Some(g) => {
            let _ = writeln!(o, "gamma = {g}");
        }
        None => {
            let _ = writeln!(o, "gamma = auto");
        }
    }
    let _ = writeln!(o, "k = {}\nperiod_s = {}", c.k, c.period_s);
    let d = c.droop_v;
    let _ = writeln!(o, "droop = {} {} {} {}", d[0], d[1], d[2], d[3]);
    match c.inner {
        InnerMode::FixedK => {
            let _ = writeln!(o, "inner = fixed");
        }
        InnerMode::Tolerance { tolerance_kvar } => {
            let _ = writeln!(o, "inner = tolerance\ntolerance_kvar = {tolerance_kvar}");
        }
    }
    let _ = writeln!(
        o,
        "warm_start = {}\nenabled_at_start = {}",
        c.warm_start, c.enabled_at_start
    );
    let _ = writeln!(o, "\n[events]");
    for e in &sc.events {
        let action = match e.action {
            EventAction::EnableController => "enable_controller".to_string(),
            EventAction::DisableController => "disable_controller".to_string(),
            EventAction::End => "end".to_string(),
            EventAction::SetInjection { bus, p_w, q_var } => {
                format!("set_injection {} {} {}", name(bus), p_w / 1000.0, q_var / 1000.0)
            }
        };
        let _ = writeln!(o, "event = {} {action}", e.time_s);
    }
    let _ = writeln!(o, "\n[transport]\nseed = {}", sc.transport.seed);
    match sc.transport.mode {
        TransportMode::DeterministicRounds { round_us } => {
            let _ = writeln!(o, "mode = deterministic_rounds\nround_ms = {}", round_us as f64 / 1000.0);
        }
        TransportMode::RandomDelay { min_us, max_us } => {
            let _ = writeln!(
                o,
                "mode = random_delay\ndelay_ms = {} {}",
                min_us as f64 / 1000.0,
                max_us as f64 / 1000.0
            );
        }
    }
    if let Some(d) = sc.dummy_nodes {
        let _ = writeln!(o, "\n[dummy_nodes]\ncount = {}\nhost = {} {}", d.count, name(d.from), name(d.to));
    }
    if !sc.clock_offsets_s.is_empty() {
        let v: Vec<String> = sc.clock_offsets_s.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(o, "\n[clock]\noffsets_s = {}", v.join(" "));
    }
    o
}
