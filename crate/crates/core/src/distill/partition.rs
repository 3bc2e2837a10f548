use crate::error::{Error, Result};

/// `K` contiguous item groups in descending-popularity order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PopularityPartition {
    pub groups: Vec<Vec<u32>>,
    /// Popularity sum per group.
    pub group_mass: Vec<u64>,
    /// Group index of every item.
    pub item_group: Vec<u16>,
}

impl PopularityPartition {
    pub fn k(&self) -> usize {
        self.groups.len()
    }

    pub fn group_of(&self, item: u32) -> usize {
        self.item_group[item as usize] as usize
    }
}

/// Greedy equal-mass split.
///
/// Items are walked by popularity descending (ties by index). Group `g`
/// closes as soon as its mass reaches `remaining_mass / remaining_groups`;
/// the last group takes everything left, including zero-popularity items.
pub fn partition_items(popularity: &[u32], k: usize) -> Result<PopularityPartition> {
    if k == 0 {
        return Err(Error::InvalidArgument("group count K must be >= 1".into()));
    }
    if k > u16::MAX as usize {
        return Err(Error::InvalidArgument(format!("group count {k} too large")));
    }
    let mut order: Vec<u32> = (0..popularity.len() as u32).collect();
    order.sort_by(|&a, &b| {
        popularity[b as usize]
            .cmp(&popularity[a as usize])
            .then(a.cmp(&b))
    });
    let positive = order
        .iter()
        .take_while(|&&i| popularity[i as usize] > 0)
        .count();
    if positive < k {
        return Err(Error::InvalidArgument(format!(
            "K = {k} exceeds the {positive} items with positive popularity"
        )));
    }

    let mut groups = Vec::with_capacity(k);
    let mut group_mass = Vec::with_capacity(k);
    let mut remaining: u64 = order[..positive]
        .iter()
        .map(|&i| popularity[i as usize] as u64)
        .sum();
    let mut pos = 0;
    for g in 0..k - 1 {
        let groups_left = (k - g) as u64;
        let start = pos;
        let mut mass = 0u64;
        while mass * groups_left < remaining {
            mass += popularity[order[pos] as usize] as u64;
            pos += 1;
        }
        // Minimal prefixes over a descending order always leave at least one
        // item per remaining group.
        debug_assert!(positive - pos >= k - g - 1);
        groups.push(order[start..pos].to_vec());
        group_mass.push(mass);
        remaining -= mass;
    }
    groups.push(order[pos..].to_vec());
    group_mass.push(remaining);

    let mut item_group = vec![0u16; popularity.len()];
    for (g, items) in groups.iter().enumerate() {
        for &i in items {
            item_group[i as usize] = g as u16;
        }
    }
    Ok(PopularityPartition {
        groups,
        group_mass,
        item_group,
    })
}
