//! Fixtures shared by the benchmarks.

use shapcoop::CharacteristicGame;

/// Table game with pseudo-random values in [0, 1) and `v(∅) = 0`.
pub fn table_game(n: usize, seed: u64) -> CharacteristicGame {
    let mut state = seed;
    let mut next = || {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
    };
    let table = (0..1usize << n).map(|c| if c == 0 { 0.0 } else { next() }).collect();
    CharacteristicGame::from_table(n, table).expect("valid table")
}
