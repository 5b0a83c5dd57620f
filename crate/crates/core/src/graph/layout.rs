use super::{Layout, TensorSpec};
use crate::error::{Error, Result};

/// Permutes a rank-3 tensor between HWC and CHW element orders.
///
/// `hwc[(h·W + w)·C + c] == chw[(c·H + h)·W + w]`.
pub fn convert_layout<T: Copy>(spec: &TensorSpec, data: &[T], target: Layout) -> Result<(TensorSpec, Vec<T>)> {
    let (h, w, c) = spec.hwc().ok_or(Error::UnsupportedRank { rank: spec.dims.len(), op: "layout conversion" })?;
    if data.len() != h * w * c {
        return Err(Error::ShapeMismatch(format!(
            "tensor `{}` has {} elements, spec says {}",
            spec.name,
            data.len(),
            h * w * c
        )));
    }
    let dims = match target {
        Layout::Hwc => vec![h, w, c],
        Layout::Chw => vec![c, h, w],
        Layout::Flat => {
            return Err(Error::InvalidArgument("layout conversion target must be HWC or CHW".into()));
        }
    };
    let out_spec = TensorSpec { dims, layout: target, ..spec.clone() };
    if spec.layout == target {
        return Ok((out_spec, data.to_vec()));
    }
    let mut out = Vec::with_capacity(data.len());
    match target {
        Layout::Hwc => {
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        out.push(data[(ch * h + y) * w + x]);
                    }
                }
            }
        }
        Layout::Chw => {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        out.push(data[(y * w + x) * c + ch]);
                    }
                }
            }
        }
        Layout::Flat => unreachable!(),
    }
    Ok((out_spec, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DType;
    use proptest::prelude::*;

    fn spec(dims: Vec<usize>, layout: Layout) -> TensorSpec {
        TensorSpec::new("t", dims, layout, DType::Float32).unwrap()
    }

    #[test]
    fn degenerate_spatial_dims_keep_data() {
        let data = [1.0f32, 2.0, 3.0, 4.0];
        let (s, out) = convert_layout(&spec(vec![1, 1, 4], Layout::Hwc), &data, Layout::Chw).unwrap();
        assert_eq!(s.dims, vec![4, 1, 1]);
        assert_eq!(out, data);
        let (_, back) = convert_layout(&spec(vec![4, 1, 1], Layout::Chw), &data, Layout::Hwc).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn chw_to_hwc_matches_index_formula() {
        let (hh, ww, cc) = (2usize, 2usize, 2usize);
        let chw: Vec<f32> = (0..8).map(|v| v as f32 * 1.5 + 0.25).collect();
        let (_, hwc) = convert_layout(&spec(vec![cc, hh, ww], Layout::Chw), &chw, Layout::Hwc).unwrap();
        for h in 0..hh {
            for w in 0..ww {
                for c in 0..cc {
                    assert_eq!(hwc[(h * ww + w) * cc + c], chw[(c * hh + h) * ww + w]);
                }
            }
        }
    }

    #[test]
    fn rejects_flat_tensors() {
        let err = convert_layout(&spec(vec![6], Layout::Flat), &[0u8; 6], Layout::Hwc).unwrap_err();
        assert!(matches!(err, Error::UnsupportedRank { rank: 1, .. }));
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(h in 1usize..8, w in 1usize..8, c in 1usize..6, seed in any::<u64>()) {
            let data: Vec<f32> = (0..h * w * c)
                .map(|i| f32::from_bits((seed as u32).wrapping_mul(2654435761).wrapping_add(i as u32 * 97) & 0x7f7f_ffff))
                .collect();
            let s = spec(vec![c, h, w], Layout::Chw);
            let (s2, hwc) = convert_layout(&s, &data, Layout::Hwc).unwrap();
            let (s3, back) = convert_layout(&s2, &hwc, Layout::Chw).unwrap();
            prop_assert_eq!(s3, s);
            prop_assert!(back.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits()));
            let mut sorted_a: Vec<u32> = hwc.iter().map(|v| v.to_bits()).collect();
            let mut sorted_b: Vec<u32> = data.iter().map(|v| v.to_bits()).collect();
            sorted_a.sort_unstable();
            sorted_b.sort_unstable();
            prop_assert_eq!(sorted_a, sorted_b);
        }
    }
}
