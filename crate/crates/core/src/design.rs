//! Regression matrix construction.
//!
//! X_mod = (X_inv, X_of): one involvement column and one on-field column per
//! player. Involvement entries are 0/1; on-field entries are +1 for the
//! attacking side, -1 for the defending side. The response is the goal
//! indicator per possession. Columns are ordered by sorted player id, the
//! involvement block before the on-field block. An unpenalized intercept is
//! appended by the solvers at fit time, never stored here.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::ingest::{player_positions, MatchRoster, Position};
use crate::possession::PossessionRecord;
use crate::sparse::{write_triplets, SparseColMatrix};

/// Sparse design matrix with response and column maps.
#[derive(Debug, Clone)]
pub struct PossessionMatrix {
    pub matrix: SparseColMatrix,
    pub y: Vec<f64>,
    /// Sorted distinct player ids; defines both column blocks.
    pub players: Vec<String>,
    pub row_ids: Vec<String>,
}

impl PossessionMatrix {
    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    pub fn inv_col(&self, player_idx: usize) -> usize {
        player_idx
    }

    pub fn of_col(&self, player_idx: usize) -> usize {
        self.players.len() + player_idx
    }

    pub fn player_index(&self, player_id: &str) -> Option<usize> {
        self.players.binary_search_by(|p| p.as_str().cmp(player_id)).ok()
    }

    /// Block membership of a column: false = involvement, true = on-field.
    pub fn is_of_col(&self, col: usize) -> bool {
        col >= self.players.len()
    }
}

/// Build the possession matrix from filtered possession records.
pub fn build_matrix(
    records: &[PossessionRecord],
    registry: &[String],
) -> Result<PossessionMatrix> {
    if records.is_empty() {
        return Err(Error::Config("cannot build a matrix from zero possessions".into()));
    }
    let mut players: Vec<String> = registry.to_vec();
    players.sort();
    players.dedup();
    let index: BTreeMap<&str, usize> = players
        .iter()
        .enumerate()
        .map(|(i, p)| (p.as_str(), i))
        .collect();
    let n_players = players.len();
    let mut matrix = SparseColMatrix::new(records.len(), 2 * n_players);
    let mut y = Vec::with_capacity(records.len());
    let mut row_ids = Vec::with_capacity(records.len());

    for (row, rec) in records.iter().enumerate() {
        let lookup = |player: &str| -> Result<usize> {
            index.get(player).copied().ok_or_else(|| {
                Error::Integrity(format!(
                    "possession {} references unregistered player {player}",
                    rec.possession_id
                ))
            })
        };
        if rec.onfield_attack.len() != 11 || rec.onfield_defense.len() != 11 {
            return Err(Error::Integrity(format!(
                "possession {}: on-field sets must have 11 players each",
                rec.possession_id
            )));
        }
        let mut inv: Vec<usize> = Vec::with_capacity(rec.involved.len());
        for p in &rec.involved {
            inv.push(lookup(p)?);
        }
        inv.sort_unstable();
        inv.dedup();
        let mut of: Vec<(usize, f64)> = Vec::with_capacity(22);
        for p in &rec.onfield_attack {
            of.push((lookup(p)?, 1.0));
        }
        for p in &rec.onfield_defense {
            let idx = lookup(p)?;
            if of.iter().any(|&(i, _)| i == idx) {
                return Err(Error::Integrity(format!(
                    "possession {}: player {p} on both sides",
                    rec.possession_id
                )));
            }
            of.push((idx, -1.0));
        }
        of.sort_unstable_by_key(|&(i, _)| i);
        for &i in &inv {
            if !of.iter().any(|&(j, v)| j == i && v > 0.0) {
                return Err(Error::Integrity(format!(
                    "possession {}: involved player {} not in the attacking on-field set",
                    rec.possession_id, players[i]
                )));
            }
            matrix.push(row, i, 1.0);
        }
        for &(i, v) in &of {
            matrix.push(row, n_players + i, v);
        }
        y.push(if rec.goal { 1.0 } else { 0.0 });
        row_ids.push(rec.possession_id.clone());
    }

    Ok(PossessionMatrix {
        matrix,
        y,
        players,
        row_ids,
    })
}

/// Column grouping for the grouped penalties.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupingScheme {
    pub name: String,
    /// Group id per penalized column.
    pub assignment: Vec<usize>,
    pub n_groups: usize,
}

impl GroupingScheme {
    pub fn new(name: impl Into<String>, assignment: Vec<usize>) -> Result<GroupingScheme> {
        let n_groups = assignment.iter().copied().max().map_or(0, |m| m + 1);
        let scheme = GroupingScheme {
            name: name.into(),
            assignment,
            n_groups,
        };
        scheme.validate()?;
        Ok(scheme)
    }

    /// Every group must be non-empty and every column assigned.
    pub fn validate(&self) -> Result<()> {
        if self.assignment.is_empty() {
            return Err(Error::Config("grouping covers no columns".into()));
        }
        let mut seen = vec![false; self.n_groups];
        for &g in &self.assignment {
            if g >= self.n_groups {
                return Err(Error::Config(format!("group id {g} out of range")));
            }
            seen[g] = true;
        }
        if let Some(empty) = seen.iter().position(|&s| !s) {
            return Err(Error::Config(format!("group {empty} is empty")));
        }
        Ok(())
    }

    /// One group per column.
    pub fn singletons(ncols: usize) -> GroupingScheme {
        GroupingScheme {
            name: "singleton".into(),
            assignment: (0..ncols).collect(),
            n_groups: ncols,
        }
    }

    /// All columns in one group.
    pub fn single_group(ncols: usize) -> GroupingScheme {
        GroupingScheme {
            name: "single".into(),
            assignment: vec![0; ncols],
            n_groups: 1,
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.n_groups];
        for &g in &self.assignment {
            sizes[g] += 1;
        }
        sizes
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.n_groups];
        for (col, &g) in self.assignment.iter().enumerate() {
            members[g].push(col);
        }
        members
    }
}

/// Modal team per player across the season's rosters, ties by team id order.
fn player_teams(rosters: &[MatchRoster]) -> BTreeMap<String, String> {
    let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for roster in rosters {
        for (team_id, sheet) in &roster.teams {
            for player in sheet
                .starters
                .iter()
                .chain(sheet.substitutions.iter().map(|s| &s.player_on))
            {
                *counts
                    .entry(player.clone())
                    .or_default()
                    .entry(team_id.clone())
                    .or_insert(0) += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|(player, tally)| {
            let team = tally
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(t, _)| t.clone())
                .unwrap();
            (player, team)
        })
        .collect()
}

/// Group columns by position and involvement type: 4 positions x {Inv, OF}
/// gives eight groups; with `split_by_team` the grouping is additionally per
/// team. Group ids are compacted so every group is non-empty.
pub fn position_grouping(
    pm: &PossessionMatrix,
    rosters: &[MatchRoster],
    split_by_team: bool,
) -> Result<GroupingScheme> {
    let positions = player_positions(rosters);
    let teams = player_teams(rosters);
    let team_ids: Vec<String> = {
        let mut t: Vec<String> = teams.values().cloned().collect();
        t.sort();
        t.dedup();
        t
    };
    let mut raw = Vec::with_capacity(2 * pm.n_players());
    for block in 0..2 {
        for player in &pm.players {
            let pos = positions.get(player).ok_or_else(|| {
                Error::Config(format!("player {player} has no position assignment"))
            })?;
            let pos_idx = Position::ALL.iter().position(|p| p == pos).unwrap();
            let team_idx = if split_by_team {
                team_ids
                    .iter()
                    .position(|t| t == &teams[player])
                    .unwrap_or(0)
            } else {
                0
            };
            raw.push((team_idx * 8) + block * 4 + pos_idx);
        }
    }
    // compact to dense group ids, preserving first-appearance order
    let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
    for &r in &raw {
        let next = remap.len();
        remap.entry(r).or_insert(next);
    }
    let assignment: Vec<usize> = raw.iter().map(|r| remap[r]).collect();
    GroupingScheme::new(
        if split_by_team {
            "position_by_team"
        } else {
            "position"
        },
        assignment,
    )
}

/// Export the matrix as coordinate triplets plus sidecar column-map and
/// response files.
pub fn export_matrix<W: Write>(
    pm: &PossessionMatrix,
    triplets: W,
    mut columns: W,
    mut response: W,
) -> Result<()> {
    write_triplets(&pm.matrix, triplets)?;
    for (j, player) in pm.players.iter().enumerate() {
        writeln!(columns, "{} {}:inv", j, player)?;
    }
    for (j, player) in pm.players.iter().enumerate() {
        writeln!(columns, "{} {}:of", pm.players.len() + j, player)?;
    }
    for (row, y) in pm.y.iter().enumerate() {
        writeln!(response, "{} {}", row, *y as i64)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_rosters;
    use crate::possession::{EndReason, StartReason};

    pub(crate) fn record(
        id: &str,
        involved: &[&str],
        attack: &[&str],
        defense: &[&str],
        goal: bool,
    ) -> PossessionRecord {
        PossessionRecord {
            possession_id: id.to_string(),
            match_id: "m1".into(),
            team_id: "T1".into(),
            n_events: involved.len().max(3),
            start_reason: StartReason::OpenPlay,
            end_reason: EndReason::OpponentGain,
            goal,
            involved: involved.iter().map(|s| s.to_string()).collect(),
            onfield_attack: attack.iter().map(|s| s.to_string()).collect(),
            onfield_defense: defense.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn eleven(prefix: char, start: u8) -> Vec<String> {
        (start..start + 11).map(|i| format!("{prefix}{i:02}")).collect()
    }

    #[test]
    fn single_possession_matrix_entries() {
        let attack = eleven('a', 0);
        let defense = eleven('b', 0);
        let attack_refs: Vec<&str> = attack.iter().map(String::as_str).collect();
        let defense_refs: Vec<&str> = defense.iter().map(String::as_str).collect();
        let rec = record("p1", &["a00", "a01", "a02"], &attack_refs, &defense_refs, true);
        let registry: Vec<String> = attack.iter().chain(defense.iter()).cloned().collect();
        let pm = build_matrix(&[rec], &registry).unwrap();

        assert_eq!(pm.matrix.nrows(), 1);
        assert_eq!(pm.matrix.ncols(), 44);
        let dense = pm.matrix.to_dense();
        for i in 0..3 {
            assert_eq!(dense[0][pm.inv_col(i)], 1.0);
        }
        for player in &attack {
            let idx = pm.player_index(player).unwrap();
            assert_eq!(dense[0][pm.of_col(idx)], 1.0);
        }
        for player in &defense {
            let idx = pm.player_index(player).unwrap();
            assert_eq!(dense[0][pm.of_col(idx)], -1.0);
        }
        let nonzero_of: usize = (0..22).filter(|&i| dense[0][22 + i] != 0.0).count();
        assert_eq!(nonzero_of, 22);
        assert_eq!(pm.y, vec![1.0]);
    }

    #[test]
    fn empty_possession_list_rejected() {
        assert!(build_matrix(&[], &["a".into()]).is_err());
    }

    #[test]
    fn unregistered_player_rejected() {
        let attack = eleven('a', 0);
        let defense = eleven('b', 0);
        let attack_refs: Vec<&str> = attack.iter().map(String::as_str).collect();
        let defense_refs: Vec<&str> = defense.iter().map(String::as_str).collect();
        let rec = record("p1", &["a00"], &attack_refs, &defense_refs, false);
        let registry: Vec<String> = attack.iter().cloned().collect(); // defense missing
        let err = build_matrix(&[rec], &registry).unwrap_err();
        assert!(err.to_string().contains("unregistered"), "{err}");
    }

    #[test]
    fn row_permutation_only_permutes_rows() {
        let attack = eleven('a', 0);
        let defense = eleven('b', 0);
        let attack_refs: Vec<&str> = attack.iter().map(String::as_str).collect();
        let defense_refs: Vec<&str> = defense.iter().map(String::as_str).collect();
        let r1 = record("p1", &["a00", "a03"], &attack_refs, &defense_refs, false);
        let r2 = record("p2", &["a05"], &attack_refs, &defense_refs, true);
        let registry: Vec<String> = attack.iter().chain(defense.iter()).cloned().collect();
        let pm_a = build_matrix(&[r1.clone(), r2.clone()], &registry).unwrap();
        let pm_b = build_matrix(&[r2, r1], &registry).unwrap();
        let da = pm_a.matrix.to_dense();
        let db = pm_b.matrix.to_dense();
        assert_eq!(da[0], db[1]);
        assert_eq!(da[1], db[0]);
        assert_eq!(pm_a.y, vec![0.0, 1.0]);
        assert_eq!(pm_b.y, vec![1.0, 0.0]);
    }

    #[test]
    fn inv_column_sums_equal_involvement_counts() {
        let attack = eleven('a', 0);
        let defense = eleven('b', 0);
        let attack_refs: Vec<&str> = attack.iter().map(String::as_str).collect();
        let defense_refs: Vec<&str> = defense.iter().map(String::as_str).collect();
        let recs = vec![
            record("p1", &["a00", "a01"], &attack_refs, &defense_refs, false),
            record("p2", &["a00"], &attack_refs, &defense_refs, false),
            record("p3", &["a00", "a02"], &attack_refs, &defense_refs, true),
        ];
        let registry: Vec<String> = attack.iter().chain(defense.iter()).cloned().collect();
        let pm = build_matrix(&recs, &registry).unwrap();
        let a0 = pm.player_index("a00").unwrap();
        assert_eq!(pm.matrix.col_sum(pm.inv_col(a0)), 3.0);
        // on-field column sum = attacking appearances - defending appearances
        assert_eq!(pm.matrix.col_sum(pm.of_col(a0)), 3.0);
        let b0 = pm.player_index("b00").unwrap();
        assert_eq!(pm.matrix.col_sum(pm.of_col(b0)), -3.0);
    }

    fn roster_fixture(n_matches: usize, teams: usize) -> Vec<MatchRoster> {
        let mut csv = String::from("match_id,team_id,player_id,position,role,sub_minute\n");
        let positions = ["GK", "DF", "DF", "DF", "DF", "MF", "MF", "MF", "MF", "FW", "FW"];
        for m in 0..n_matches {
            let home = (2 * m) % teams;
            let away = (2 * m + 1) % teams;
            for (t, team) in [home, away].into_iter().enumerate() {
                for i in 0..11 {
                    csv.push_str(&format!(
                        "m{m},t{team},t{team}p{i},{},start,\n",
                        positions[(i + t) % 11]
                    ));
                }
            }
        }
        parse_rosters(csv.as_bytes()).unwrap()
    }

    #[test]
    fn eight_position_groups_cover_all_columns() {
        let rosters = roster_fixture(4, 8);
        let mut registry: Vec<String> = rosters
            .iter()
            .flat_map(|r| r.positions.keys().cloned())
            .collect();
        registry.sort();
        registry.dedup();
        let r0 = &rosters[0];
        let team_ids: Vec<&String> = r0.teams.keys().collect();
        let attack: Vec<&str> = r0.teams[team_ids[0]].starters.iter().map(String::as_str).collect();
        let defense: Vec<&str> = r0.teams[team_ids[1]].starters.iter().map(String::as_str).collect();
        let rec = record("p1", &[attack[0]], &attack, &defense, false);
        let pm = build_matrix(&[rec], &registry).unwrap();

        let scheme = position_grouping(&pm, &rosters, false).unwrap();
        assert_eq!(scheme.n_groups, 8);
        assert_eq!(scheme.sizes().iter().sum::<usize>(), 2 * pm.n_players());

        let by_team = position_grouping(&pm, &rosters, true).unwrap();
        // distinct (team, position, block) triples actually present
        let positions = player_positions(&rosters);
        let teams = player_teams(&rosters);
        let mut triples = std::collections::BTreeSet::new();
        for p in &pm.players {
            triples.insert((teams[p].clone(), positions[p], 0u8));
            triples.insert((teams[p].clone(), positions[p], 1u8));
        }
        assert_eq!(by_team.n_groups, triples.len());
        assert!(by_team.n_groups <= 8 * 8);
        assert!(by_team.n_groups > 8);
    }

    #[test]
    fn singleton_player_gets_two_groups() {
        let mut csv = String::from("match_id,team_id,player_id,position,role,sub_minute\n");
        for i in 0..11 {
            csv.push_str(&format!("m0,h,h{i},MF,start,\n"));
            csv.push_str(&format!("m0,w,w{i},MF,start,\n"));
        }
        let rosters = parse_rosters(csv.as_bytes()).unwrap();
        // registry restricted to one player: matrix has 2 columns
        let attack: Vec<String> = (0..11).map(|i| format!("h{i}")).collect();
        let defense: Vec<String> = (0..11).map(|i| format!("w{i}")).collect();
        let attack_refs: Vec<&str> = attack.iter().map(String::as_str).collect();
        let defense_refs: Vec<&str> = defense.iter().map(String::as_str).collect();
        let _rec = record("p1", &["h0"], &attack_refs, &defense_refs, false);
        // a 1-player registry cannot host an 11v11 row, so synthesize directly
        let pm = PossessionMatrix {
            matrix: SparseColMatrix::from_dense(&[vec![1.0, 1.0]]),
            y: vec![0.0],
            players: vec!["h0".into()],
            row_ids: vec!["p1".into()],
        };
        let scheme = position_grouping(&pm, &rosters, false).unwrap();
        assert_eq!(scheme.n_groups, 2);
        assert_eq!(scheme.sizes(), vec![1, 1]);
    }

    #[test]
    fn grouping_validation_rejects_empty_group() {
        assert!(GroupingScheme::new("bad", vec![0, 2]).is_err());
        assert!(GroupingScheme::new("ok", vec![0, 1, 0]).is_ok());
    }

    #[test]
    fn export_writes_three_files() {
        let pm = PossessionMatrix {
            matrix: SparseColMatrix::from_dense(&[vec![1.0, -1.0]]),
            y: vec![1.0],
            players: vec!["p".into()],
            row_ids: vec!["r0".into()],
        };
        let (mut t, mut c, mut r) = (Vec::new(), Vec::new(), Vec::new());
        export_matrix(&pm, &mut t, &mut c, &mut r).unwrap();
        assert_eq!(String::from_utf8(t).unwrap(), "0 0 1\n0 1 -1\n");
        assert!(String::from_utf8(c).unwrap().contains("1 p:of"));
        assert_eq!(String::from_utf8(r).unwrap(), "0 1\n");
    }
}
