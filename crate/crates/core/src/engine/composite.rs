//! Pointwise arithmetic on evaluated frames.

use std::collections::HashMap;

use crate::error::Result;
use crate::frame::ResultFrame;
use crate::metric::ArithOp;
use crate::table::{Cell, SliceKey};

/// One side of a composite: an evaluated frame or a broadcast constant.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Frame(&'a ResultFrame),
    Scalar(f64),
}

/// Combine two results value by value.
///
/// Frames are joined on the key columns they share; the output keys are the
/// left keys followed by any right-only keys. Value columns pair up by
/// position and a scalar broadcasts to every value. Keys found on only one
/// side, and frames whose arities differ, produce NaN.
pub fn eval_composite(op: ArithOp, left: Operand<'_>, right: Operand<'_>) -> Result<ResultFrame> {
    match (left, right) {
        (Operand::Scalar(a), Operand::Scalar(b)) => ResultFrame::new(
            Vec::new(),
            vec![format!("{a}_{}_{b}", op.label())],
            vec![(SliceKey::empty(), vec![op.apply(a, b)])],
        ),
        (Operand::Frame(f), Operand::Scalar(s)) => broadcast(op, f, s, false),
        (Operand::Scalar(s), Operand::Frame(f)) => broadcast(op, f, s, true),
        (Operand::Frame(l), Operand::Frame(r)) => join(op, l, r),
    }
}

fn broadcast(op: ArithOp, frame: &ResultFrame, s: f64, scalar_on_left: bool) -> Result<ResultFrame> {
    let apply = |v: f64| if scalar_on_left { op.apply(s, v) } else { op.apply(v, s) };
    let names = frame
        .value_columns()
        .iter()
        .map(|n| {
            if scalar_on_left {
                format!("{s}_{}_{n}", op.label())
            } else {
                format!("{n}_{}_{s}", op.label())
            }
        })
        .collect();
    let rows = frame
        .rows()
        .iter()
        .map(|(k, v)| (k.clone(), v.iter().map(|&x| apply(x)).collect()))
        .collect();
    ResultFrame::new(frame.key_columns().to_vec(), names, rows)
}

fn join(op: ArithOp, left: &ResultFrame, right: &ResultFrame) -> Result<ResultFrame> {
    let lk = left.key_columns();
    let rk = right.key_columns();
    // (position in left, position in right) for each shared key column
    let common: Vec<(usize, usize)> = lk
        .iter()
        .enumerate()
        .filter_map(|(i, name)| rk.iter().position(|r| r == name).map(|j| (i, j)))
        .collect();
    let right_only: Vec<usize> = (0..rk.len()).filter(|j| !common.iter().any(|&(_, c)| c == *j)).collect();

    let mut key_columns = lk.to_vec();
    key_columns.extend(right_only.iter().map(|&j| rk[j].clone()));

    let compatible = left.arity() == right.arity();
    let arity = left.arity().max(right.arity());
    let ln = left.value_columns();
    let rn = right.value_columns();
    let value_columns = (0..arity)
        .map(|i| {
            let l = ln.get(i).map_or("nan", String::as_str);
            let r = rn.get(i).map_or("nan", String::as_str);
            format!("{l}_{}_{r}", op.label())
        })
        .collect();
    let nan_row = || vec![f64::NAN; arity];

    let mut by_common: HashMap<SliceKey, Vec<usize>> = HashMap::new();
    for (j, (key, _)) in right.rows().iter().enumerate() {
        let ck = SliceKey(common.iter().map(|&(_, c)| key.0[c].clone()).collect());
        by_common.entry(ck).or_default().push(j);
    }

    let mut matched = vec![false; right.len()];
    let mut rows = Vec::with_capacity(left.len().max(right.len()));
    for (key, lv) in left.rows() {
        let ck = SliceKey(common.iter().map(|&(i, _)| key.0[i].clone()).collect());
        match by_common.get(&ck) {
            None => {
                let mut k = key.0.clone();
                k.extend(right_only.iter().map(|_| Cell::Null));
                rows.push((SliceKey(k), nan_row()));
            }
            Some(js) => {
                for &j in js {
                    matched[j] = true;
                    let (rkey, rv) = &right.rows()[j];
                    let mut k = key.0.clone();
                    k.extend(right_only.iter().map(|&c| rkey.0[c].clone()));
                    let values = if compatible {
                        lv.iter().zip(rv).map(|(&a, &b)| op.apply(a, b)).collect()
                    } else {
                        nan_row()
                    };
                    rows.push((SliceKey(k), values));
                }
            }
        }
    }
    for (j, (rkey, _)) in right.rows().iter().enumerate() {
        if matched[j] {
            continue;
        }
        let mut k: Vec<Cell> = vec![Cell::Null; lk.len()];
        for &(i, c) in &common {
            k[i] = rkey.0[c].clone();
        }
        k.extend(right_only.iter().map(|&c| rkey.0[c].clone()));
        rows.push((SliceKey(k), nan_row()));
    }
    ResultFrame::new(key_columns, value_columns, rows)
}
