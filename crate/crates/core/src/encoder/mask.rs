use crate::tensor::Scalar;
use crate::tokenize::TokenizedSequence;

/// Additive `{0, -inf}` attention mask of shape `L x L`. Entry `(i, j)`
/// is 0 iff the tokens share a row or a column, or either token is not a
/// cell token (CLS, SEP, title, delimiters see and are seen by all);
/// every other pair is `-inf`. The diagonal is always 0.
pub fn build_hard_mask<T: Scalar>(seq: &TokenizedSequence) -> Vec<T> {
    let len = seq.len();
    let mut mask = vec![T::zero(); len * len];
    for i in 0..len {
        let (ri, ci) = (seq.row_ids[i], seq.col_ids[i]);
        if ri == 0 || ci == 0 {
            continue; // non-cell source row: fully visible
        }
        for j in 0..len {
            let (rj, cj) = (seq.row_ids[j], seq.col_ids[j]);
            let j_cell = rj > 0 && cj > 0;
            if j_cell && ri != rj && ci != cj {
                mask[i * len + j] = T::neg_infinity();
            }
        }
    }
    mask
}
