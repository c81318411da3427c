use std::cmp::Reverse;

/// Ordering key for the part and pixel window searches; the smallest key
/// wins. Higher score first, then the better-ranked source, then the
/// smaller displacement from the query position, then scan order.
pub(crate) type SearchKey = (Reverse<u32>, usize, i32, u32, u32);

#[inline]
pub(crate) fn search_key(score: u32, rank: usize, drow: i32, dcol: i32, row: u32, col: u32) -> SearchKey {
    (Reverse(score), rank, drow * drow + dcol * dcol, row, col)
}

/// Clipped `[center - radius, center + radius]` range inside `0..len`.
#[inline]
pub(crate) fn window_range(center: u32, radius: u32, len: u32) -> std::ops::RangeInclusive<u32> {
    center.saturating_sub(radius)..=(center + radius).min(len - 1)
}
