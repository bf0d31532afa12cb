//! Possession segmentation and filtering.
//!
//! A possession is a maximal run of consecutive on-ball events by one team.
//! It ends at the first on-ball event by the other team, at a referee
//! stoppage (foul, offside, ball out), at the end of a period, or at a goal.
//! Stoppage events close possessions but belong to none. Own-goal-tagged
//! events are treated the same way: they force a restart and never set the
//! attacking side's goal label.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::ingest::{Action, EventRecord, MatchRoster, TAG_GOAL, TAG_OWN_GOAL, TAG_PENALTY};

/// Attacking-direction x threshold for "ends in the last third".
pub const LAST_THIRD_X: f64 = 200.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartReason {
    OpenPlay,
    FreeKick,
    CornerKick,
    ThrowIn,
    GoalKick,
    Kickoff,
}

impl StartReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StartReason::OpenPlay => "open_play",
            StartReason::FreeKick => "free_kick",
            StartReason::CornerKick => "corner_kick",
            StartReason::ThrowIn => "throw_in",
            StartReason::GoalKick => "goal_kick",
            StartReason::Kickoff => "kickoff",
        }
    }

    pub fn parse(s: &str) -> Result<StartReason> {
        match s {
            "open_play" => Ok(StartReason::OpenPlay),
            "free_kick" => Ok(StartReason::FreeKick),
            "corner_kick" => Ok(StartReason::CornerKick),
            "throw_in" => Ok(StartReason::ThrowIn),
            "goal_kick" => Ok(StartReason::GoalKick),
            "kickoff" => Ok(StartReason::Kickoff),
            other => Err(Error::parse("start_reason", other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndReason {
    OpponentGain,
    Foul,
    BallOut,
    PeriodEnd,
    Goal,
}

impl EndReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            EndReason::OpponentGain => "opponent_gain",
            EndReason::Foul => "foul",
            EndReason::BallOut => "ball_out",
            EndReason::PeriodEnd => "period_end",
            EndReason::Goal => "goal",
        }
    }

    pub fn parse(s: &str) -> Result<EndReason> {
        match s {
            "opponent_gain" => Ok(EndReason::OpponentGain),
            "foul" => Ok(EndReason::Foul),
            "ball_out" => Ok(EndReason::BallOut),
            "period_end" => Ok(EndReason::PeriodEnd),
            "goal" => Ok(EndReason::Goal),
            other => Err(Error::parse("end_reason", other)),
        }
    }
}

/// A segmented possession with event payload and on-field context.
#[derive(Debug, Clone, PartialEq)]
pub struct Possession {
    pub possession_id: String,
    pub match_id: String,
    pub team_id: String,
    pub events: Vec<EventRecord>,
    pub start_reason: StartReason,
    pub end_reason: EndReason,
    pub involved: BTreeSet<String>,
    pub onfield_attack: BTreeSet<String>,
    pub onfield_defense: BTreeSet<String>,
    pub ends_last_third: bool,
    pub goal: bool,
}

impl Possession {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn to_record(&self) -> PossessionRecord {
        PossessionRecord {
            possession_id: self.possession_id.clone(),
            match_id: self.match_id.clone(),
            team_id: self.team_id.clone(),
            n_events: self.events.len(),
            start_reason: self.start_reason,
            end_reason: self.end_reason,
            goal: self.goal,
            involved: self.involved.iter().cloned().collect(),
            onfield_attack: self.onfield_attack.iter().cloned().collect(),
            onfield_defense: self.onfield_defense.iter().cloned().collect(),
        }
    }
}

/// Flat possession form used by the design matrix and the record file.
#[derive(Debug, Clone, PartialEq)]
pub struct PossessionRecord {
    pub possession_id: String,
    pub match_id: String,
    pub team_id: String,
    pub n_events: usize,
    pub start_reason: StartReason,
    pub end_reason: EndReason,
    pub goal: bool,
    pub involved: Vec<String>,
    pub onfield_attack: Vec<String>,
    pub onfield_defense: Vec<String>,
}

/// Minute offsets per period for substitution bookkeeping.
fn period_offset_minutes(period: u8) -> f64 {
    match period {
        1 => 0.0,
        2 => 45.0,
        3 => 90.0,
        4 => 105.0,
        _ => 120.0,
    }
}

fn onfield_at(
    roster: &MatchRoster,
    team_id: &str,
    match_minute: f64,
) -> Result<BTreeSet<String>> {
    let sheet = roster.teams.get(team_id).ok_or_else(|| {
        Error::Integrity(format!(
            "match {}: team {team_id} missing from roster",
            roster.match_id
        ))
    })?;
    let mut onfield: BTreeSet<String> = sheet.starters.iter().cloned().collect();
    for sub in &sheet.substitutions {
        if sub.minute <= match_minute {
            onfield.remove(&sub.player_off);
            onfield.insert(sub.player_on.clone());
        }
    }
    Ok(onfield)
}

struct OpenPossession {
    team_id: String,
    events: Vec<EventRecord>,
    start_reason: StartReason,
}

/// Segment one match's ordered event list into possessions.
pub fn segment(match_events: &[EventRecord], roster: &MatchRoster) -> Result<Vec<Possession>> {
    let mut possessions: Vec<Possession> = Vec::new();
    let mut current: Option<OpenPossession> = None;
    let mut seq = 0usize;
    let mut last_period: Option<u8> = None;
    let mut first_of_period = true;
    let mut after_goal = false;

    let close = |open: Option<OpenPossession>,
                     reason: EndReason,
                     goal: bool,
                     possessions: &mut Vec<Possession>,
                     seq: &mut usize|
     -> Result<()> {
        let Some(open) = open else { return Ok(()) };
        let first = &open.events[0];
        let minute = period_offset_minutes(first.period) + first.t / 60.0;
        let onfield_attack = onfield_at(roster, &open.team_id, minute)?;
        let defense_id = roster
            .teams
            .keys()
            .find(|t| *t != &open.team_id)
            .ok_or_else(|| {
                Error::Integrity(format!("match {}: need two teams in roster", first.match_id))
            })?
            .clone();
        let onfield_defense = onfield_at(roster, &defense_id, minute)?;
        for e in &open.events {
            let at_event = onfield_at(
                roster,
                &open.team_id,
                period_offset_minutes(e.period) + e.t / 60.0,
            )?;
            if !at_event.contains(&e.player_id) {
                return Err(Error::Integrity(format!(
                    "match {} period {} t {:.1}: acting player {} not on the field",
                    e.match_id, e.period, e.t, e.player_id
                )));
            }
        }
        let involved: BTreeSet<String> =
            open.events.iter().map(|e| e.player_id.clone()).collect();
        if !involved.is_subset(&onfield_attack) {
            return Err(Error::Integrity(format!(
                "match {}: involvement outside the possession-start on-field set",
                first.match_id
            )));
        }
        let last = open.events.last().unwrap();
        let possession = Possession {
            possession_id: format!("{}#{:04}", first.match_id, *seq),
            match_id: first.match_id.clone(),
            team_id: open.team_id,
            start_reason: open.start_reason,
            end_reason: reason,
            involved,
            onfield_attack,
            onfield_defense,
            ends_last_third: last.x >= LAST_THIRD_X,
            goal,
            events: open.events,
        };
        *seq += 1;
        possessions.push(possession);
        Ok(())
    };

    for e in match_events {
        if last_period.is_some_and(|p| p != e.period) {
            close(
                current.take(),
                EndReason::PeriodEnd,
                false,
                &mut possessions,
                &mut seq,
            )?;
            first_of_period = true;
            after_goal = false;
        }
        last_period = Some(e.period);

        if e.action.is_interruption() {
            let reason = match e.action {
                Action::Foul | Action::Offside => EndReason::Foul,
                _ => EndReason::BallOut,
            };
            close(current.take(), reason, false, &mut possessions, &mut seq)?;
            continue;
        }
        if e.has_tag(TAG_OWN_GOAL) {
            // A restart follows; the deflection joins no possession and the
            // attacking side's label stays 0.
            close(
                current.take(),
                EndReason::BallOut,
                false,
                &mut possessions,
                &mut seq,
            )?;
            after_goal = true;
            first_of_period = false;
            continue;
        }

        let switches = current
            .as_ref()
            .is_some_and(|open| open.team_id != e.team_id);
        if switches {
            close(
                current.take(),
                EndReason::OpponentGain,
                false,
                &mut possessions,
                &mut seq,
            )?;
        }
        match current.as_mut() {
            Some(open) => open.events.push(e.clone()),
            None => {
                let start_reason = match e.action {
                    Action::FreeKick => StartReason::FreeKick,
                    Action::CornerKick => StartReason::CornerKick,
                    Action::ThrowIn => StartReason::ThrowIn,
                    Action::GoalKick => StartReason::GoalKick,
                    _ if first_of_period || after_goal => StartReason::Kickoff,
                    _ => StartReason::OpenPlay,
                };
                current = Some(OpenPossession {
                    team_id: e.team_id.clone(),
                    events: vec![e.clone()],
                    start_reason,
                });
            }
        }
        first_of_period = false;
        after_goal = false;

        if e.has_tag(TAG_GOAL) {
            close(current.take(), EndReason::Goal, true, &mut possessions, &mut seq)?;
            after_goal = true;
        }
    }
    close(
        current.take(),
        EndReason::PeriodEnd,
        false,
        &mut possessions,
        &mut seq,
    )?;
    Ok(possessions)
}

/// Keep possessions that end in the last third and either have at least 3
/// actions or started from a free kick or corner. Possessions containing a
/// penalty-tagged action are dropped. Idempotent.
pub fn filter_valuable(possessions: Vec<Possession>) -> Vec<Possession> {
    possessions
        .into_iter()
        .filter(|p| {
            let exempt = matches!(
                p.start_reason,
                StartReason::FreeKick | StartReason::CornerKick
            );
            p.ends_last_third
                && (p.len() >= 3 || exempt)
                && !p.events.iter().any(|e| e.has_tag(TAG_PENALTY))
        })
        .collect()
}

/// Summary statistics over a possession list.
#[derive(Debug, Clone, PartialEq)]
pub struct PossessionStats {
    pub count: usize,
    pub mean_length: f64,
    pub median_length: f64,
    pub goal_rate: f64,
    /// Per-player count of possessions with at least one on-ball action.
    pub involvement_counts: BTreeMap<String, usize>,
    /// Mean of `involvement_counts` over players.
    pub mean_involvements: f64,
}

pub fn possession_stats(possessions: &[Possession]) -> Result<PossessionStats> {
    if possessions.is_empty() {
        return Err(Error::Config("possession_stats on empty list".into()));
    }
    let mut lengths: Vec<usize> = possessions.iter().map(Possession::len).collect();
    lengths.sort_unstable();
    let n = lengths.len();
    let median_length = if n % 2 == 1 {
        lengths[n / 2] as f64
    } else {
        (lengths[n / 2 - 1] + lengths[n / 2]) as f64 / 2.0
    };
    let mean_length = lengths.iter().sum::<usize>() as f64 / n as f64;
    let goal_rate = possessions.iter().filter(|p| p.goal).count() as f64 / n as f64;
    let mut involvement_counts: BTreeMap<String, usize> = BTreeMap::new();
    for p in possessions {
        for player in &p.involved {
            *involvement_counts.entry(player.clone()).or_insert(0) += 1;
        }
    }
    let mean_involvements = if involvement_counts.is_empty() {
        0.0
    } else {
        involvement_counts.values().sum::<usize>() as f64 / involvement_counts.len() as f64
    };
    Ok(PossessionStats {
        count: n,
        mean_length,
        median_length,
        goal_rate,
        involvement_counts,
        mean_involvements,
    })
}

const RECORD_HEADER: [&str; 10] = [
    "possession_id",
    "match_id",
    "team_id",
    "n_events",
    "start_reason",
    "end_reason",
    "goal",
    "involved",
    "onfield_attack",
    "onfield_defense",
];

/// Write the line-delimited possession record file.
pub fn write_records<W: Write>(records: &[PossessionRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RECORD_HEADER)?;
    for r in records {
        out.write_record([
            r.possession_id.as_str(),
            r.match_id.as_str(),
            r.team_id.as_str(),
            &r.n_events.to_string(),
            r.start_reason.as_str(),
            r.end_reason.as_str(),
            if r.goal { "1" } else { "0" },
            &r.involved.join(";"),
            &r.onfield_attack.join(";"),
            &r.onfield_defense.join(";"),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<PossessionRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != RECORD_HEADER {
        return Err(Error::parse("header", "unexpected possession file columns"));
    }
    let split_list = |s: &str| -> Vec<String> {
        s.split(';')
            .filter(|p| !p.is_empty())
            .map(str::to_string)
            .collect()
    };
    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let location = format!("record {}", idx + 1);
        out.push(PossessionRecord {
            possession_id: rec[0].to_string(),
            match_id: rec[1].to_string(),
            team_id: rec[2].to_string(),
            n_events: rec[3]
                .parse()
                .map_err(|_| Error::parse(&location, "invalid n_events"))?,
            start_reason: StartReason::parse(&rec[4])?,
            end_reason: EndReason::parse(&rec[5])?,
            goal: match &rec[6] {
                "1" => true,
                "0" => false,
                other => return Err(Error::parse(&location, format!("invalid goal '{other}'"))),
            },
            involved: split_list(&rec[7]),
            onfield_attack: split_list(&rec[8]),
            onfield_defense: split_list(&rec[9]),
        });
    }
    Ok(out)
}
