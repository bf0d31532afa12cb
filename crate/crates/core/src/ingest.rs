//! Event-stream ingestion: parse raw event files into normalized,
//! chronologically ordered per-match event lists, plus match rosters.
//!
//! Two input formats are supported. `wyscout_v2` is the nested JSON layout of
//! the public event releases; `simple_csv` is a flat one-event-per-row format
//! used for hand-written fixtures. Both normalize into [`EventRecord`].
//! Coordinates in both formats are attacking-direction percentages in
//! [0, 100] and are passed through unchanged.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;

use serde::Deserialize;

use crate::error::{Error, Result};

pub const TAG_GOAL: &str = "goal";
pub const TAG_OWN_GOAL: &str = "own_goal";
pub const TAG_ACCURATE: &str = "accurate";
pub const TAG_PENALTY: &str = "penalty";

/// Normalized on-ball / interruption action labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Pass,
    Shot,
    Duel,
    Touch,
    Clearance,
    Cross,
    Dribble,
    FreeKick,
    CornerKick,
    ThrowIn,
    GoalKick,
    Foul,
    Offside,
    Save,
    Interruption,
    Other,
}

impl Action {
    pub fn as_str(&self) -> &'static str {
        match self {
            Action::Pass => "pass",
            Action::Shot => "shot",
            Action::Duel => "duel",
            Action::Touch => "touch",
            Action::Clearance => "clearance",
            Action::Cross => "cross",
            Action::Dribble => "dribble",
            Action::FreeKick => "free_kick",
            Action::CornerKick => "corner_kick",
            Action::ThrowIn => "throw_in",
            Action::GoalKick => "goal_kick",
            Action::Foul => "foul",
            Action::Offside => "offside",
            Action::Save => "save",
            Action::Interruption => "interruption",
            Action::Other => "other",
        }
    }

    /// Unknown labels normalize to `other`.
    pub fn parse(label: &str) -> Action {
        match label.trim().to_ascii_lowercase().as_str() {
            "pass" => Action::Pass,
            "shot" => Action::Shot,
            "duel" => Action::Duel,
            "touch" => Action::Touch,
            "clearance" => Action::Clearance,
            "cross" => Action::Cross,
            "dribble" => Action::Dribble,
            "free_kick" => Action::FreeKick,
            "corner_kick" => Action::CornerKick,
            "throw_in" => Action::ThrowIn,
            "goal_kick" => Action::GoalKick,
            "foul" => Action::Foul,
            "offside" => Action::Offside,
            "save" => Action::Save,
            "interruption" => Action::Interruption,
            _ => Action::Other,
        }
    }

    /// Referee/stoppage actions that terminate possessions without joining
    /// them.
    pub fn is_interruption(&self) -> bool {
        matches!(self, Action::Foul | Action::Offside | Action::Interruption)
    }
}

/// One normalized on-ball event.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub match_id: String,
    /// 1, 2, plus extra periods 3+.
    pub period: u8,
    /// Seconds within the period.
    pub t: f64,
    pub team_id: String,
    pub player_id: String,
    pub action: Action,
    /// Pitch percentage toward the acting team's attacking direction.
    pub x: f64,
    pub y: f64,
    pub tags: BTreeSet<String>,
}

impl EventRecord {
    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.contains(tag)
    }
}

/// Supported raw input layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    WyscoutV2,
    SimpleCsv,
}

impl EventFormat {
    pub fn parse(tag: &str) -> Result<EventFormat> {
        match tag.trim().to_ascii_lowercase().as_str() {
            "wyscout_v2" => Ok(EventFormat::WyscoutV2),
            "simple_csv" => Ok(EventFormat::SimpleCsv),
            other => Err(Error::Config(format!("unknown format tag '{other}'"))),
        }
    }
}

/// Broad position groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Position {
    Fw,
    Mf,
    Df,
    Gk,
}

impl Position {
    pub fn as_str(&self) -> &'static str {
        match self {
            Position::Fw => "FW",
            Position::Mf => "MF",
            Position::Df => "DF",
            Position::Gk => "GK",
        }
    }

    pub fn parse(label: &str) -> Result<Position> {
        match label.trim().to_ascii_uppercase().as_str() {
            "FW" | "F" | "FORWARD" | "STRIKER" => Ok(Position::Fw),
            "MF" | "M" | "MIDFIELDER" => Ok(Position::Mf),
            "DF" | "D" | "DEFENDER" => Ok(Position::Df),
            "GK" | "G" | "GOALKEEPER" => Ok(Position::Gk),
            other => Err(Error::Config(format!("unknown position label '{other}'"))),
        }
    }

    pub const ALL: [Position; 4] = [Position::Fw, Position::Mf, Position::Df, Position::Gk];
}

/// A substitution within a match.
#[derive(Debug, Clone, PartialEq)]
pub struct Substitution {
    pub minute: f64,
    pub player_off: String,
    pub player_on: String,
}

/// One team's sheet in a match.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TeamSheet {
    pub starters: Vec<String>,
    pub substitutions: Vec<Substitution>,
}

/// Lineups plus position assignments for one match.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchRoster {
    pub match_id: String,
    pub teams: BTreeMap<String, TeamSheet>,
    /// Position as listed on this match's sheet.
    pub positions: BTreeMap<String, Position>,
}

/// Parse an event stream in the declared format, grouping by match and
/// sorting by (period, t, input sequence index).
pub fn parse_events<R: Read>(
    reader: R,
    format: EventFormat,
) -> Result<BTreeMap<String, Vec<EventRecord>>> {
    let events = match format {
        EventFormat::SimpleCsv => parse_events_csv(reader)?,
        EventFormat::WyscoutV2 => parse_events_wyscout(reader)?,
    };
    let mut by_match: BTreeMap<String, Vec<EventRecord>> = BTreeMap::new();
    for e in events {
        by_match.entry(e.match_id.clone()).or_default().push(e);
    }
    for match_events in by_match.values_mut() {
        match_events.sort_by(|a, b| {
            (a.period, a.t)
                .partial_cmp(&(b.period, b.t))
                .expect("event times validated finite")
        });
    }
    Ok(by_match)
}

fn validate_event(e: &EventRecord, location: &str) -> Result<()> {
    if !(0.0..=100.0).contains(&e.x) || !(0.0..=100.0).contains(&e.y) {
        return Err(Error::parse(
            location,
            format!("coordinates ({}, {}) outside [0, 100]", e.x, e.y),
        ));
    }
    if e.t < 0.0 || !e.t.is_finite() {
        return Err(Error::parse(location, format!("invalid time {}", e.t)));
    }
    if e.period == 0 {
        return Err(Error::parse(location, "period must be >= 1"));
    }
    if e.has_tag(TAG_GOAL) && e.has_tag(TAG_OWN_GOAL) {
        return Err(Error::parse(
            location,
            "event carries both goal and own_goal tags",
        ));
    }
    Ok(())
}

fn parse_events_csv<R: Read>(reader: R) -> Result<Vec<EventRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = [
        "match_id", "period", "t", "team_id", "player_id", "action", "x", "y", "tags",
    ];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::parse(
            "header",
            format!("expected columns {expected:?}, got {headers:?}"),
        ));
    }
    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let location = format!("record {}", idx + 1);
        let field = |i: usize| -> Result<&str> {
            rec.get(i)
                .ok_or_else(|| Error::parse(&location, format!("missing field {i}")))
        };
        let num = |i: usize, name: &str| -> Result<f64> {
            field(i)?
                .parse::<f64>()
                .map_err(|_| Error::parse(&location, format!("invalid {name} '{}'", rec.get(i).unwrap_or(""))))
        };
        let tags: BTreeSet<String> = field(8)?
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| s.trim().to_string())
            .collect();
        let e = EventRecord {
            match_id: field(0)?.to_string(),
            period: field(1)?
                .parse::<u8>()
                .map_err(|_| Error::parse(&location, "invalid period"))?,
            t: num(2, "t")?,
            team_id: field(3)?.to_string(),
            player_id: field(4)?.to_string(),
            action: Action::parse(field(5)?),
            x: num(6, "x")?,
            y: num(7, "y")?,
            tags,
        };
        validate_event(&e, &location)?;
        out.push(e);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct WyTag {
    id: i64,
}

#[derive(Deserialize)]
struct WyPosition {
    x: f64,
    y: f64,
}

#[derive(Deserialize)]
struct WyEvent {
    #[serde(rename = "matchId")]
    match_id: i64,
    #[serde(rename = "matchPeriod")]
    match_period: String,
    #[serde(rename = "eventSec")]
    event_sec: f64,
    #[serde(rename = "teamId")]
    team_id: i64,
    #[serde(rename = "playerId")]
    player_id: i64,
    #[serde(rename = "eventName", default)]
    event_name: String,
    #[serde(rename = "subEventName", default)]
    sub_event_name: String,
    #[serde(default)]
    positions: Vec<WyPosition>,
    #[serde(default)]
    tags: Vec<WyTag>,
}

fn wyscout_period(label: &str) -> Result<u8> {
    match label {
        "1H" => Ok(1),
        "2H" => Ok(2),
        "E1" => Ok(3),
        "E2" => Ok(4),
        "P" => Ok(5),
        other => Err(Error::parse(
            "matchPeriod",
            format!("unknown period label '{other}'"),
        )),
    }
}

fn wyscout_action(event_name: &str, sub_event_name: &str) -> (Action, bool) {
    let sub = sub_event_name.to_ascii_lowercase();
    match event_name {
        "Pass" => {
            if sub.contains("cross") {
                (Action::Cross, false)
            } else {
                (Action::Pass, false)
            }
        }
        "Shot" => (Action::Shot, false),
        "Duel" => (Action::Duel, false),
        "Others on the ball" => {
            if sub.contains("clearance") {
                (Action::Clearance, false)
            } else if sub.contains("acceleration") {
                (Action::Dribble, false)
            } else {
                (Action::Touch, false)
            }
        }
        "Free Kick" => {
            if sub.contains("corner") {
                (Action::CornerKick, false)
            } else if sub.contains("throw") {
                (Action::ThrowIn, false)
            } else if sub.contains("goal kick") {
                (Action::GoalKick, false)
            } else if sub.contains("penalty") {
                (Action::FreeKick, true)
            } else {
                (Action::FreeKick, false)
            }
        }
        "Foul" => (Action::Foul, false),
        "Offside" => (Action::Offside, false),
        "Interruption" => (Action::Interruption, false),
        "Save attempt" => (Action::Save, false),
        _ => (Action::Other, false),
    }
}

fn parse_events_wyscout<R: Read>(reader: R) -> Result<Vec<EventRecord>> {
    let raw: Vec<WyEvent> = serde_json::from_reader(reader)?;
    let mut out = Vec::with_capacity(raw.len());
    for (idx, w) in raw.into_iter().enumerate() {
        let location = format!("event {}", idx + 1);
        let (action, penalty) = wyscout_action(&w.event_name, &w.sub_event_name);
        let mut tags = BTreeSet::new();
        for t in &w.tags {
            match t.id {
                101 => {
                    tags.insert(TAG_GOAL.to_string());
                }
                102 => {
                    tags.insert(TAG_OWN_GOAL.to_string());
                }
                1801 => {
                    tags.insert(TAG_ACCURATE.to_string());
                }
                _ => {}
            }
        }
        if penalty {
            tags.insert(TAG_PENALTY.to_string());
        }
        let pos = w
            .positions
            .first()
            .ok_or_else(|| Error::parse(&location, "event has no positions"))?;
        let e = EventRecord {
            match_id: w.match_id.to_string(),
            period: wyscout_period(&w.match_period)?,
            t: w.event_sec,
            team_id: w.team_id.to_string(),
            player_id: w.player_id.to_string(),
            action,
            x: pos.x,
            y: pos.y,
            tags,
        };
        validate_event(&e, &location)?;
        out.push(e);
    }
    Ok(out)
}

/// Serialize events into the simple_csv schema. Together with
/// `parse_events(.., SimpleCsv)` this round-trips losslessly.
pub fn write_events_csv<W: std::io::Write>(
    events: impl IntoIterator<Item = EventRecord>,
    w: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "match_id", "period", "t", "team_id", "player_id", "action", "x", "y", "tags",
    ])?;
    for e in events {
        let tags = e.tags.iter().cloned().collect::<Vec<_>>().join(";");
        out.write_record([
            e.match_id.as_str(),
            &e.period.to_string(),
            &format_float(e.t),
            e.team_id.as_str(),
            e.player_id.as_str(),
            e.action.as_str(),
            &format_float(e.x),
            &format_float(e.y),
            &tags,
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn format_float(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Parse the roster CSV: match_id,team_id,player_id,position,role,sub_minute.
///
/// role is `start` or `sub`. A `start` row with a sub_minute is a starter
/// replaced at that minute; a `sub` row with a sub_minute entered at that
/// minute; a `sub` row without one is an unused substitute. Off/on rows are
/// paired per (team, minute) in file order.
pub fn parse_rosters<R: Read>(reader: R) -> Result<Vec<MatchRoster>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = [
        "match_id", "team_id", "player_id", "position", "role", "sub_minute",
    ];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::parse(
            "header",
            format!("expected columns {expected:?}, got {headers:?}"),
        ));
    }

    struct Row {
        team_id: String,
        player_id: String,
        position: Position,
        start: bool,
        sub_minute: Option<f64>,
    }
    let mut rows: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let location = format!("record {}", idx + 1);
        if rec.len() != 6 {
            return Err(Error::parse(&location, "expected 6 fields"));
        }
        let start = match rec.get(4).unwrap() {
            "start" => true,
            "sub" => false,
            other => {
                return Err(Error::parse(
                    &location,
                    format!("role must be start|sub, got '{other}'"),
                ))
            }
        };
        let sub_minute = match rec.get(5).unwrap() {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|_| {
                Error::parse(&location, format!("invalid sub_minute '{s}'"))
            })?),
        };
        rows.entry(rec.get(0).unwrap().to_string())
            .or_default()
            .push(Row {
                team_id: rec.get(1).unwrap().to_string(),
                player_id: rec.get(2).unwrap().to_string(),
                position: Position::parse(rec.get(3).unwrap())?,
                start,
                sub_minute,
            });
    }

    let mut rosters = Vec::new();
    for (match_id, rows) in rows {
        let mut teams: BTreeMap<String, TeamSheet> = BTreeMap::new();
        let mut positions = BTreeMap::new();
        // (team, minute) -> (offs, ons), in file order
        let mut offs: BTreeMap<String, Vec<(f64, String)>> = BTreeMap::new();
        let mut ons: BTreeMap<String, Vec<(f64, String)>> = BTreeMap::new();
        for row in &rows {
            let sheet = teams.entry(row.team_id.clone()).or_default();
            positions.insert(row.player_id.clone(), row.position);
            if row.start {
                sheet.starters.push(row.player_id.clone());
                if let Some(m) = row.sub_minute {
                    offs.entry(row.team_id.clone())
                        .or_default()
                        .push((m, row.player_id.clone()));
                }
            } else if let Some(m) = row.sub_minute {
                ons.entry(row.team_id.clone())
                    .or_default()
                    .push((m, row.player_id.clone()));
            }
        }
        for (team_id, sheet) in teams.iter_mut() {
            if sheet.starters.len() != 11 {
                return Err(Error::Integrity(format!(
                    "match {match_id} team {team_id}: {} starters, expected 11",
                    sheet.starters.len()
                )));
            }
            let mut off_list = offs.remove(team_id).unwrap_or_default();
            let mut on_list = ons.remove(team_id).unwrap_or_default();
            off_list.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            on_list.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            if off_list.len() != on_list.len() {
                return Err(Error::Integrity(format!(
                    "match {match_id} team {team_id}: {} players off vs {} on",
                    off_list.len(),
                    on_list.len()
                )));
            }
            for ((m_off, p_off), (m_on, p_on)) in off_list.into_iter().zip(on_list) {
                if (m_off - m_on).abs() > 1e-9 {
                    return Err(Error::Integrity(format!(
                        "match {match_id} team {team_id}: unmatched substitution minutes {m_off} vs {m_on}"
                    )));
                }
                if sheet.starters.contains(&p_on) {
                    return Err(Error::Integrity(format!(
                        "match {match_id} team {team_id}: substituted-on player {p_on} already a starter"
                    )));
                }
                sheet.substitutions.push(Substitution {
                    minute: m_on,
                    player_off: p_off,
                    player_on: p_on,
                });
            }
        }
        rosters.push(MatchRoster {
            match_id,
            teams,
            positions,
        });
    }
    Ok(rosters)
}

/// Season-level position assignment: modal listed position per player, ties
/// broken FW > MF > DF > GK.
pub fn player_positions(rosters: &[MatchRoster]) -> BTreeMap<String, Position> {
    let mut counts: BTreeMap<String, HashMap<Position, usize>> = BTreeMap::new();
    for roster in rosters {
        for (player, &pos) in &roster.positions {
            *counts
                .entry(player.clone())
                .or_default()
                .entry(pos)
                .or_insert(0) += 1;
        }
    }
    counts
        .into_iter()
        .map(|(player, tally)| {
            // first strict maximum in FW > MF > DF > GK order wins ties
            let mut best = Position::ALL[0];
            let mut best_count = tally.get(&best).copied().unwrap_or(0);
            for p in &Position::ALL[1..] {
                let c = tally.get(p).copied().unwrap_or(0);
                if c > best_count {
                    best = *p;
                    best_count = c;
                }
            }
            (player, best)
        })
        .collect()
}

/// Every player acting in the events must appear on that match's roster.
pub fn verify_coverage(
    events_by_match: &BTreeMap<String, Vec<EventRecord>>,
    rosters: &[MatchRoster],
) -> Result<()> {
    let by_match: HashMap<&str, &MatchRoster> = rosters
        .iter()
        .map(|r| (r.match_id.as_str(), r))
        .collect();
    let mut orphans = BTreeSet::new();
    for (match_id, events) in events_by_match {
        match by_match.get(match_id.as_str()) {
            None => {
                return Err(Error::Integrity(format!(
                    "no roster for match {match_id}"
                )))
            }
            Some(roster) => {
                for e in events {
                    if !roster.positions.contains_key(&e.player_id) {
                        orphans.insert(e.player_id.clone());
                    }
                }
            }
        }
    }
    if orphans.is_empty() {
        Ok(())
    } else {
        let list = orphans.into_iter().collect::<Vec<_>>().join(", ");
        Err(Error::Integrity(format!(
            "players in events but missing from all rosters: {list}"
        )))
    }
}
