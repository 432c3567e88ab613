use super::config::AttentionMode;

/// Row-major `len x len` allow-matrix plus the key-padding vector it was built from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    pub len: usize,
    pub allow: Vec<bool>,
    pub pad: Vec<bool>,
}

impl AttentionMask {
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allow[i * self.len + j]
    }
}

/// `pad` shorter than `len` is treated as unpadded at the missing positions.
pub fn build_mask(len: usize, pad: &[bool], mode: AttentionMode) -> AttentionMask {
    let pad: Vec<bool> = (0..len).map(|j| pad.get(j).copied().unwrap_or(false)).collect();
    let mut allow = vec![false; len * len];
    for i in 0..len {
        for j in 0..len {
            let visible = match mode {
                AttentionMode::Causal => j <= i,
                AttentionMode::Bidirectional => true,
            };
            allow[i * len + j] = visible && !pad[j];
        }
    }
    AttentionMask { len, allow, pad }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(m: &AttentionMask) -> Vec<Vec<bool>> {
        (0..m.len).map(|i| (0..m.len).map(|j| m.allowed(i, j)).collect()).collect()
    }

    #[test]
    fn causal_is_lower_triangular() {
        let m = build_mask(3, &[false; 3], AttentionMode::Causal);
        assert_eq!(
            grid(&m),
            vec![
                vec![true, false, false],
                vec![true, true, false],
                vec![true, true, true]
            ]
        );
    }

    #[test]
    fn bidirectional_is_full() {
        let m = build_mask(3, &[false; 3], AttentionMode::Bidirectional);
        assert!(m.allow.iter().all(|&a| a));
    }

    #[test]
    fn pad_column_disallowed() {
        for mode in [AttentionMode::Causal, AttentionMode::Bidirectional] {
            let m = build_mask(3, &[false, false, true], mode);
            assert!((0..3).all(|i| !m.allowed(i, 2)));
            // Every non-pad query row keeps at least its own position.
            assert!((0..2).all(|i| (0..3).any(|j| m.allowed(i, j))));
        }
    }
}
