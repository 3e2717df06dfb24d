//! Self-contained stand-in classifier and dataset.
//!
//! The model has handcrafted weights: channels 0..3 of both convolutions are
//! 3x3 box filters that carry each input colour plane's mean energy forward,
//! the remaining channels are fixed edge/texture detectors, and the dense
//! head maps the pooled energy of plane `k` onto logit `k`. Images put their
//! label's colour plane at high intensity, so the classes are separable by
//! construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Conv2d, ConvGeometry, Dense, Layer, ModelGraph, Pool2d};
use crate::tensor::{FloatTensor, Shape};

pub const FIXTURE_LABELS: [&str; 3] = ["mpox", "other", "healthy"];

const SIDE: usize = 16;
const WIDTH: usize = 32;
const LOGIT_GAIN: f32 = 10.0;

const SOBEL_X: [f32; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
const SOBEL_Y: [f32; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
const LAPLACE: [f32; 9] = [0.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 0.0];
const SURROUND: [f32; 9] = [-1.0, -1.0, -1.0, -1.0, 8.0, -1.0, -1.0, -1.0, -1.0];

fn texture(o: usize) -> [f32; 9] {
    match (o / 3) % 4 {
        0 => SOBEL_X,
        1 => SOBEL_Y,
        2 => LAPLACE,
        _ => SURROUND,
    }
}

fn tensor(dims: &[usize], data: Vec<f32>) -> FloatTensor {
    FloatTensor::new(Shape::new(dims.to_vec()).expect("fixture shape"), data)
        .expect("fixture weights are finite")
}

fn conv3x3(in_ch: usize, weights: Vec<f32>, bias: Vec<f32>) -> Layer {
    let geometry = ConvGeometry {
        in_ch,
        out_ch: WIDTH,
        kh: 3,
        kw: 3,
        stride: 1,
        padding: 1,
    };
    Layer::Conv2d(
        Conv2d::new(
            geometry,
            tensor(&[WIDTH, in_ch, 3, 3], weights),
            tensor(&[WIDTH], bias),
        )
        .expect("fixture conv"),
    )
}

fn first_conv() -> Layer {
    let mut w = vec![0.0; WIDTH * 3 * 9];
    let mut b = vec![0.0; WIDTH];
    for o in 0..WIDTH {
        let c = o % 3;
        let taps = &mut w[(o * 3 + c) * 9..(o * 3 + c + 1) * 9];
        if o < 3 {
            taps.fill(1.0 / 9.0);
        } else {
            for (t, k) in taps.iter_mut().zip(texture(o)) {
                *t = 0.0625 * k;
            }
            b[o] = -0.05;
        }
    }
    conv3x3(3, w, b)
}

fn second_conv() -> Layer {
    let mut w = vec![0.0; WIDTH * WIDTH * 9];
    for o in 0..WIDTH {
        let row = &mut w[o * WIDTH * 9..(o + 1) * WIDTH * 9];
        if o < 3 {
            row[o * 9..(o + 1) * 9].fill(1.0 / 9.0);
        } else {
            // centre tap of this channel's own texture response, plus a weak
            // neighbour mix so the channels are not independent
            row[o * 9 + 4] = 0.5;
            let n = 3 + (o - 3 + 1) % (WIDTH - 3);
            row[n * 9 + 4] = -0.25;
        }
    }
    conv3x3(WIDTH, w, vec![0.0; WIDTH])
}

fn head() -> Layer {
    let positions = (SIDE / 4) * (SIDE / 4);
    let features = WIDTH * positions;
    let mut w = vec![0.0; 3 * features];
    for k in 0..3 {
        w[k * features + k * positions..k * features + (k + 1) * positions]
            .fill(LOGIT_GAIN / positions as f32);
    }
    Layer::Dense(Dense::new(tensor(&[3, features], w), tensor(&[3], vec![0.0; 3])).expect("head"))
}

/// Conv 3→32, ReLU, MaxPool 2/2, Conv 32→32, ReLU, MaxPool 2/2, Flatten,
/// Dense 512→3, Softmax on a `[3,16,16]` input.
pub fn fixture_model() -> ModelGraph {
    let pool = Pool2d {
        kh: 2,
        kw: 2,
        stride: 2,
    };
    ModelGraph::new(
        Shape::new(vec![3, SIDE, SIDE]).expect("input shape"),
        vec![
            first_conv(),
            Layer::Relu,
            Layer::MaxPool2d(pool),
            second_conv(),
            Layer::Relu,
            Layer::MaxPool2d(pool),
            Layer::Flatten,
            head(),
            Layer::Softmax,
        ],
        FIXTURE_LABELS.iter().map(|s| s.to_string()).collect(),
    )
    .expect("fixture graph is valid")
}

/// `n` labelled `[3,16,16]` images, deterministic per seed. Image `i` has
/// label `i % 3`.
pub fn fixture_dataset(n: usize, seed: u64) -> Vec<(FloatTensor, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = SIDE * SIDE;
    (0..n)
        .map(|i| {
            let label = i % 3;
            let mut data = Vec::with_capacity(3 * plane);
            for c in 0..3 {
                let level: f32 = if c == label {
                    rng.gen_range(0.8..=1.0)
                } else {
                    rng.gen_range(0.0..=0.2)
                };
                for _ in 0..plane {
                    let noise: f32 = rng.gen_range(-0.05..=0.05);
                    data.push((level + noise).clamp(0.0, 1.0));
                }
            }
            (tensor(&[3, SIDE, SIDE], data), label)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_is_seeded() {
        let a = fixture_dataset(10, 7);
        let b = fixture_dataset(10, 7);
        let bytes = |d: &[(FloatTensor, usize)]| -> Vec<u8> {
            d.iter()
                .flat_map(|(t, l)| {
                    t.data()
                        .iter()
                        .flat_map(|v| v.to_le_bytes())
                        .chain([*l as u8])
                        .collect::<Vec<_>>()
                })
                .collect()
        };
        assert_eq!(bytes(&a), bytes(&b));
        assert_ne!(bytes(&a), bytes(&fixture_dataset(10, 8)));
    }

    #[test]
    fn labelled_plane_dominates() {
        for (img, label) in fixture_dataset(30, 3) {
            let plane = SIDE * SIDE;
            for c in 0..3 {
                let mean: f32 =
                    img.data()[c * plane..(c + 1) * plane].iter().sum::<f32>() / plane as f32;
                if c == label {
                    assert!((0.75..=1.0).contains(&mean), "{mean}");
                } else {
                    assert!((0.0..=0.25).contains(&mean), "{mean}");
                }
            }
        }
    }

    #[test]
    fn architecture_trace() {
        let g = fixture_model();
        let trace = g.validate().unwrap();
        assert_eq!(trace.last().unwrap().dims(), &[3]);
        assert_eq!(trace[0].dims(), &[32, 16, 16]);
        assert_eq!(trace[6].dims(), &[512]);
        assert_eq!(g.parameter_count(), 864 + 32 + 9216 + 32 + 1536 + 3);
    }

    #[test]
    fn float_accuracy_is_perfect() {
        let g = fixture_model();
        for (img, label) in fixture_dataset(500, 42) {
            let y = g.forward(&img).unwrap();
            assert_eq!(y.argmax(), label);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let g = fixture_model();
        let (img, _) = &fixture_dataset(1, 9)[0];
        let a = g.forward(img).unwrap();
        let b = g.forward(img).unwrap();
        let bits = |t: &FloatTensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn trace_matches_runtime_shapes() {
        let g = fixture_model();
        let (img, _) = &fixture_dataset(1, 1)[0];
        let sites = g.forward_sites(img).unwrap();
        let trace = g.validate().unwrap();
        for (shape, site) in trace.iter().zip(&sites[1..]) {
            assert_eq!(shape, site.shape());
        }
    }
}
