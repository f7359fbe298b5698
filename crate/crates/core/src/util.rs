//! Small shared helpers: stable hashing and fixed-order parallel mapping.

/// FNV-1a 64-bit hash. Stable across platforms and releases, used for config
/// hashes and deterministic label-derived values.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100_0000_01b3);
    }
    hash
}

/// Uniform value in [0, 1) derived from a hash, for seedless deterministic maps.
pub fn hash_unit(bytes: &[u8]) -> f64 {
    (fnv1a(bytes) >> 11) as f64 / (1u64 << 53) as f64
}

/// Encode floats as base64 of their little-endian 64-bit representation, the
/// same layout checkpoints use.
pub fn encode_le64(values: &[f64]) -> String {
    use base64::Engine;
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    base64::engine::general_purpose::STANDARD.encode(&bytes)
}

pub fn decode_le64(text: &str) -> Option<Vec<f64>> {
    use base64::Engine;
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(text.as_bytes())
        .ok()?;
    if bytes.len() % 8 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    )
}

/// Map `items` with up to `workers` threads, returning results in input order.
/// The fold order is fixed so results do not depend on scheduling.
pub fn ordered_parallel_map<T, U, F>(items: Vec<T>, workers: usize, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync,
{
    let workers = workers.max(1);
    if workers == 1 || items.len() <= 1 {
        return items.into_iter().map(f).collect();
    }
    let mut slots: Vec<Option<U>> = (0..items.len()).map(|_| None).collect();
    let queue: Vec<(usize, T)> = items.into_iter().enumerate().collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let queue = std::sync::Mutex::new(
        queue
            .into_iter()
            .map(|(i, t)| Some((i, t)))
            .collect::<Vec<_>>(),
    );
    let slots_mutex = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let item = {
                    let mut q = queue.lock().unwrap();
                    if idx >= q.len() {
                        return;
                    }
                    q[idx].take()
                };
                let Some((i, t)) = item else { return };
                let out = f(t);
                slots_mutex.lock().unwrap()[i] = Some(out);
            });
        }
    });
    slots.into_iter().map(|s| s.unwrap()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_known_vector() {
        // FNV-1a("") is the offset basis; "a" is a published test vector.
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn parallel_map_preserves_order() {
        let items: Vec<usize> = (0..50).collect();
        let out = ordered_parallel_map(items.clone(), 4, |i| i * 2);
        assert_eq!(out, items.iter().map(|i| i * 2).collect::<Vec<_>>());
    }
}
