//! Characteristic-function game files.

use std::collections::BTreeMap;

use serde::Deserialize;
use shapcoop::{CharacteristicGame, Coalition};

use crate::error::{CliError, CliResult};

/// On-disk game. Exactly one of `table`, `values` or `additive` is given.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameFile {
    #[serde(default)]
    pub players: Option<Vec<String>>,
    #[serde(default)]
    pub n: Option<usize>,
    /// Dense values indexed by coalition bitmask (bit i = player i).
    #[serde(default)]
    pub table: Option<Vec<f64>>,
    /// Sparse values keyed by comma-separated members (names or indices);
    /// unlisted coalitions are worth 0.
    #[serde(default)]
    pub values: Option<BTreeMap<String, f64>>,
    /// Per-player weights of an additive game.
    #[serde(default)]
    pub additive: Option<Vec<f64>>,
}

#[derive(Debug)]
pub struct LoadedGame {
    pub names: Vec<String>,
    pub game: CharacteristicGame,
}

pub fn parse_game(text: &str) -> CliResult<LoadedGame> {
    let file: GameFile = serde_json::from_str(text)
        .map_err(|e| CliError::Data(format!("game file, line {} column {}: {e}", e.line(), e.column())))?;
    let given = [file.table.is_some(), file.values.is_some(), file.additive.is_some()];
    if given.iter().filter(|&&g| g).count() != 1 {
        return Err(CliError::Data("game file needs exactly one of \"table\", \"values\" or \"additive\"".into()));
    }
    let n = match (&file.players, file.n, &file.table, &file.additive) {
        (Some(p), _, _, _) => p.len(),
        (None, Some(n), _, _) => n,
        (None, None, Some(t), _) => t.len().trailing_zeros() as usize,
        (None, None, None, Some(w)) => w.len(),
        _ => return Err(CliError::Data("game file needs \"players\" or \"n\"".into())),
    };
    if n == 0 || n > 30 {
        return Err(CliError::Data(format!("game must have between 1 and 30 players, got {n}")));
    }
    if let (Some(p), Some(k)) = (&file.players, file.n) {
        if p.len() != k {
            return Err(CliError::Data(format!("\"n\" is {k} but {} players are named", p.len())));
        }
    }
    let names = file.players.clone().unwrap_or_else(|| (0..n).map(|i| format!("agent{i}")).collect());

    let game = if let Some(table) = file.table {
        CharacteristicGame::from_table(n, table)
    } else if let Some(weights) = file.additive {
        if weights.len() != n {
            return Err(CliError::Data(format!("{} additive weights for {n} players", weights.len())));
        }
        CharacteristicGame::additive(weights)
    } else {
        let mut table = vec![0.0; 1 << n];
        for (key, value) in file.values.unwrap_or_default() {
            table[coalition_key(&key, &names)?.bits() as usize] = value;
        }
        CharacteristicGame::from_table(n, table)
    }
    .map_err(|e| CliError::data("game file", e))?;
    Ok(LoadedGame { names, game })
}

fn coalition_key(key: &str, names: &[String]) -> CliResult<Coalition> {
    let mut c = Coalition::EMPTY;
    for part in key.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let idx = names
            .iter()
            .position(|n| n == part)
            .or_else(|| part.parse::<usize>().ok().filter(|&i| i < names.len()))
            .ok_or_else(|| CliError::Data(format!("coalition {key:?}: unknown player {part:?}")))?;
        c = c.with(idx);
    }
    Ok(c)
}
