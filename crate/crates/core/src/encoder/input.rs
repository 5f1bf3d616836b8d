use crate::error::{DseError, Result};

use super::vocab::{TokenId, CLS, PAD, SEP};

/// Encoder input: token ids, segment ids (0 = A, 1 = B) and an attention mask
/// (1 = real, 0 = padding), all the same length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceInput {
    pub tokens: Vec<TokenId>,
    pub segments: Vec<u8>,
    pub mask: Vec<u8>,
}

impl SequenceInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of unmasked positions. The mask is a prefix of ones.
    pub fn real_len(&self) -> usize {
        self.mask.iter().take_while(|&&m| m == 1).count()
    }

    /// The same input with trailing padding removed.
    pub fn trimmed(&self) -> SequenceInput {
        let n = self.real_len();
        SequenceInput {
            tokens: self.tokens[..n].to_vec(),
            segments: self.segments[..n].to_vec(),
            mask: self.mask[..n].to_vec(),
        }
    }

    /// The same input padded to `len` positions.
    pub fn padded_to(&self, len: usize) -> SequenceInput {
        let mut out = self.clone();
        if len > out.len() {
            out.tokens.resize(len, PAD);
            out.segments.resize(len, 0);
            out.mask.resize(len, 0);
        }
        out
    }
}

/// `[CLS, a…, SEP, b…, SEP]` with segment 0 over `CLS a SEP` and segment 1
/// over `b SEP`, padded to `max_len`.
///
/// When the pair does not fit, trailing tokens are dropped from the longer
/// sentence (from `b` on ties) until it does.
pub fn build_pair_input(a: &[TokenId], b: &[TokenId], max_len: usize) -> Result<SequenceInput> {
    if max_len < 5 {
        return Err(DseError::Input(format!(
            "max_len {max_len} cannot hold CLS + 1 + SEP + 1 + SEP"
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Err(DseError::Input(
            "both sentences of a pair must be nonempty".into(),
        ));
    }
    let budget = max_len - 3;
    let (mut la, mut lb) = (a.len(), b.len());
    while la + lb > budget {
        if la > lb {
            la -= 1;
        } else {
            lb -= 1;
        }
    }

    let mut tokens = Vec::with_capacity(max_len);
    tokens.push(CLS);
    tokens.extend_from_slice(&a[..la]);
    tokens.push(SEP);
    let seg_a = tokens.len();
    tokens.extend_from_slice(&b[..lb]);
    tokens.push(SEP);
    let real = tokens.len();

    let mut segments = vec![0u8; seg_a];
    segments.resize(real, 1);
    Ok(SequenceInput {
        tokens,
        segments,
        mask: vec![1; real],
    }
    .padded_to(max_len))
}

/// `[CLS, y…, SEP]`, all segment 0, padded to `max_len`; `y` is truncated to
/// `max_len - 2` tokens.
pub fn build_single_input(y: &[TokenId], max_len: usize) -> Result<SequenceInput> {
    if max_len < 3 {
        return Err(DseError::Input(format!(
            "max_len {max_len} cannot hold CLS + 1 + SEP"
        )));
    }
    if y.is_empty() {
        return Err(DseError::Input("sentence must be nonempty".into()));
    }
    let keep = y.len().min(max_len - 2);
    let mut tokens = Vec::with_capacity(max_len);
    tokens.push(CLS);
    tokens.extend_from_slice(&y[..keep]);
    tokens.push(SEP);
    let real = tokens.len();
    Ok(SequenceInput {
        tokens,
        segments: vec![0; real],
        mask: vec![1; real],
    }
    .padded_to(max_len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::SeededRng;

    #[test]
    fn pair_layout() {
        let x = build_pair_input(&[7], &[9], 6).unwrap();
        assert_eq!(x.tokens, vec![CLS, 7, SEP, 9, SEP, PAD]);
        assert_eq!(x.segments, vec![0, 0, 0, 1, 1, 0]);
        assert_eq!(x.mask, vec![1, 1, 1, 1, 1, 0]);
    }

    #[test]
    fn pair_truncates_longer_sentence() {
        let a: Vec<TokenId> = (10..18).collect();
        let x = build_pair_input(&a, &[9], 8).unwrap();
        assert_eq!(x.tokens, vec![CLS, 10, 11, 12, 13, SEP, 9, SEP]);
        assert_eq!(x.real_len(), 8);

        assert!(build_pair_input(&[1], &[2], 4).is_err());
        assert!(build_pair_input(&[], &[2], 8).is_err());
    }

    #[test]
    fn single_layout_and_truncation() {
        let x = build_single_input(&[7, 8], 5).unwrap();
        assert_eq!(x.tokens, vec![CLS, 7, 8, SEP, PAD]);
        assert_eq!(x.segments, vec![0; 5]);
        assert_eq!(x.mask, vec![1, 1, 1, 1, 0]);

        let x = build_single_input(&[4, 5, 6, 7, 8], 5).unwrap();
        assert_eq!(x.tokens, vec![CLS, 4, 5, 6, SEP]);
        assert!(build_single_input(&[], 5).is_err());
        assert!(build_single_input(&[4], 2).is_err());
    }

    fn random_sentence(rng: &mut SeededRng, max: usize) -> Vec<TokenId> {
        let len = rng.range_inclusive(1, max);
        (0..len).map(|_| 4 + rng.below(100) as TokenId).collect()
    }

    #[test]
    fn depadding_recovers_truncated_pair() {
        let mut rng = SeededRng::new(21);
        for _ in 0..500 {
            let a = random_sentence(&mut rng, 30);
            let b = random_sentence(&mut rng, 30);
            let max_len = rng.range_inclusive(5, 40);
            let x = build_pair_input(&a, &b, max_len).unwrap();
            assert_eq!(x.len(), max_len);

            // Independent statement of the truncation rule.
            let budget = max_len - 3;
            let (mut la, mut lb) = (a.len(), b.len());
            while la + lb > budget {
                if la > lb {
                    la -= 1
                } else {
                    lb -= 1
                }
            }

            let real = &x.tokens[..x.real_len()];
            assert_eq!(real[0], CLS);
            let sep = real.iter().position(|&t| t == SEP).unwrap();
            assert_eq!(&real[1..sep], &a[..la]);
            assert_eq!(&real[sep + 1..real.len() - 1], &b[..lb]);
            assert_eq!(*real.last().unwrap(), SEP);
            assert!(x.tokens[x.real_len()..].iter().all(|&t| t == PAD));
            assert!(x.mask[x.real_len()..].iter().all(|&m| m == 0));
        }
    }

    #[test]
    fn single_inputs_use_segment_a_only() {
        let mut rng = SeededRng::new(22);
        for _ in 0..500 {
            let y = random_sentence(&mut rng, 40);
            let x = build_single_input(&y, 32).unwrap();
            assert!(x.segments.iter().all(|&s| s == 0));
            assert_eq!(x.tokens[0], CLS);
            assert_eq!(x.tokens[x.real_len() - 1], SEP);
        }
    }
}
