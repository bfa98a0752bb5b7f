use thiserror::Error;

use super::Variant;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("empty sequence")]
    Empty,
    #[error("pointer {pointer} at position {position} is past the end of a length-{len} sequence")]
    PointerOutOfRange {
        position: usize,
        pointer: usize,
        len: usize,
    },
    #[error("constraint violated: inner pointer {inner} is not smaller than outer pointer {outer}")]
    ConstraintViolated { outer: usize, inner: usize },
}

/// Computes the label of a token sequence under the task's pointer rule.
pub fn label_oracle(tokens: &[usize], variant: Variant) -> Result<usize, LabelError> {
    let len = tokens.len();
    let last = len.checked_sub(1).ok_or(LabelError::Empty)?;
    let follow = |position: usize| -> Result<usize, LabelError> {
        let pointer = tokens[position];
        tokens.get(pointer).copied().ok_or(LabelError::PointerOutOfRange {
            position,
            pointer,
            len,
        })
    };
    let first = follow(last)?;
    match variant {
        Variant::Single => Ok(first),
        Variant::Double => {
            let outer = tokens[last];
            if first >= outer {
                return Err(LabelError::ConstraintViolated { outer, inner: first });
            }
            follow(outer)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_single_skip_examples() {
        assert_eq!(label_oracle(&[8, 5, 1, 7, 4, 3], Variant::Single), Ok(7));
        assert_eq!(label_oracle(&[2, 6, 4, 1, 3, 2], Variant::Single), Ok(4));
    }

    #[test]
    fn printed_double_skip_example() {
        let tokens = [8, 5, 1, 7, 1, 3, 3, 4, 7, 9, 4];
        assert_eq!(tokens[tokens[10]], 1);
        assert_eq!(label_oracle(&tokens, Variant::Double), Ok(5));
    }

    #[test]
    fn degenerate_pointers() {
        assert_eq!(label_oracle(&[0; 11], Variant::Single), Ok(0));
        let mut tokens = vec![3; 11];
        tokens[10] = 9;
        tokens[9] = 9;
        // pointer at the last position is followed to position 9, not 10
        assert_eq!(label_oracle(&tokens, Variant::Single), Ok(9));
        let selfref = [1, 1];
        assert_eq!(label_oracle(&selfref, Variant::Single), Ok(1));
    }

    #[test]
    fn double_constraint_violation_is_signalled() {
        // outer pointer 2 -> tokens[2] = 5, which is not < 2
        let tokens = [0, 0, 5, 2];
        assert_eq!(
            label_oracle(&tokens, Variant::Double),
            Err(LabelError::ConstraintViolated { outer: 2, inner: 5 })
        );
        // outer pointer 0 can never be satisfied
        assert!(label_oracle(&[0, 0, 0], Variant::Double).is_err());
    }

    #[test]
    fn pointer_past_end() {
        assert!(matches!(
            label_oracle(&[1, 7], Variant::Single),
            Err(LabelError::PointerOutOfRange { pointer: 7, .. })
        ));
        assert_eq!(label_oracle(&[], Variant::Single), Err(LabelError::Empty));
    }
}
