//! Best-effort thread placement: one thread per physical core first, then
//! the hyperthread siblings.

use std::collections::BTreeSet;
use std::fs;

use core_affinity::CoreId;

fn topology(cpu: usize, field: &str) -> Option<u64> {
    let path = format!("/sys/devices/system/cpu/cpu{cpu}/topology/{field}");
    fs::read_to_string(path).ok()?.trim().parse().ok()
}

/// Cores in pinning order. Without topology information the platform order
/// is kept; where affinity is unavailable the list is empty.
pub fn pinning_order() -> Vec<CoreId> {
    let Some(ids) = core_affinity::get_core_ids() else {
        return Vec::new();
    };
    let mut seen = BTreeSet::new();
    let (mut first, mut siblings) = (Vec::new(), Vec::new());
    for id in ids {
        let key = (topology(id.id, "physical_package_id"), topology(id.id, "core_id"));
        let fresh = key.0.is_none() || key.1.is_none() || seen.insert(key);
        if fresh {
            first.push(id);
        } else {
            siblings.push(id);
        }
    }
    first.extend(siblings);
    first
}

/// Pins the calling thread to the `index`-th core of `order`, wrapping.
/// Failure is ignored.
pub fn pin(order: &[CoreId], index: usize) {
    if !order.is_empty() {
        let _ = core_affinity::set_for_current(order[index % order.len()]);
    }
}
