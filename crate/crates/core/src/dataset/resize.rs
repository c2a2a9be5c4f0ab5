use super::image::Image;

/// Bilinear resampling onto a `p`×`p` grid whose corner samples coincide with
/// the input's corner pixels. A single-pixel target samples the centre.
pub fn resize_bilinear(image: &Image, p: usize) -> Image {
    assert!(p >= 1, "target side must be positive");
    let q = image.side();
    if q == p {
        return image.clone();
    }
    let coord = |k: usize| -> f64 {
        if p == 1 {
            (q - 1) as f64 / 2.0
        } else {
            k as f64 * (q - 1) as f64 / (p - 1) as f64
        }
    };
    let lerp = |a: f64, b: f64, t: f64| if a == b { a } else { a + (b - a) * t };

    let mut out = Vec::with_capacity(p * p);
    for r in 0..p {
        let y = coord(r);
        let y0 = (y.floor() as usize).min(q - 1);
        let y1 = (y0 + 1).min(q - 1);
        let ty = y - y0 as f64;
        for c in 0..p {
            let x = coord(c);
            let x0 = (x.floor() as usize).min(q - 1);
            let x1 = (x0 + 1).min(q - 1);
            let tx = x - x0 as f64;
            let (v00, v01) = (image.get(y0, x0), image.get(y0, x1));
            let (v10, v11) = (image.get(y1, x0), image.get(y1, x1));
            let top = lerp(v00, v01, tx);
            let bottom = lerp(v10, v11, tx);
            let lo = v00.min(v01).min(v10).min(v11);
            let hi = v00.max(v01).max(v10).max(v11);
            out.push(lerp(top, bottom, ty).clamp(lo, hi));
        }
    }
    Image::new(p, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_is_fixed_point() {
        for p in 1..9 {
            let out = resize_bilinear(&Image::constant(2, 0.5), p);
            assert!(out.as_slice().iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn same_size_is_identity() {
        let img = Image::from_rows(&[vec![0.1, 0.7], vec![0.3, 0.9]]);
        assert_eq!(resize_bilinear(&img, 2), img);
    }

    #[test]
    fn upsample_midpoint_column() {
        let img = Image::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]);
        let out = resize_bilinear(&img, 3);
        for r in 0..3 {
            assert_eq!(out.get(r, 0), 0.0);
            assert_eq!(out.get(r, 1), 0.5);
            assert_eq!(out.get(r, 2), 1.0);
        }
    }

    proptest! {
        #[test]
        fn output_stays_within_input_range(
            q in 1usize..7,
            p in 1usize..12,
            seed in proptest::collection::vec(0.0f64..1.0, 49),
            c in 0.0f64..1.0,
        ) {
            let img = Image::new(q, seed[..q * q].to_vec());
            let out = resize_bilinear(&img, p);
            let lo = img.as_slice().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = img.as_slice().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out.as_slice().iter().all(|&v| v >= lo && v <= hi));
            let flat = resize_bilinear(&Image::constant(q, c), p);
            prop_assert!(flat.as_slice().iter().all(|&v| v == c));
        }
    }
}
