use convlens_core::analysis::{dead_map_stats, DEFAULT_DEAD_EPS};
use convlens_core::imaging::{channel_grid, DEAD_TINT, MIN_TILE_SIDE};
use convlens_core::model::Network;
use convlens_core::testing::{self, fixtures};
use rand::{rngs::StdRng, SeedableRng};

const SEP: usize = 2;

/// Channels whose tile centre is the dead tint.
fn blue_tiles(
    grid: &convlens_core::imaging::RgbImage,
    k: usize,
    cols: usize,
    tile: usize,
) -> Vec<usize> {
    (0..k)
        .filter(|c| {
            let x = SEP + (c % cols) * (tile + SEP) + tile / 2;
            let y = SEP + (c / cols) * (tile + SEP) + tile / 2;
            grid.get(x, y) == DEAD_TINT
        })
        .collect()
}

fn brute_dead(act: &convlens_core::Tensor, eps: f64) -> Vec<usize> {
    (0..act.shape()[0])
        .filter(|&c| act.channel(c).unwrap().iter().all(|&v| v as f64 <= eps))
        .collect()
}

#[test]
fn tiles_and_report_agree_with_definition() {
    let mut rng = StdRng::seed_from_u64(40);
    for (first, second) in [
        (&[0usize, 3, 7][..], &[2usize][..]),
        (&[5], &[0, 1, 5]),
        (&[], &[3, 4]),
    ] {
        let net = Network::load(fixtures::dead_channel_container(&mut rng, first, second)).unwrap();
        let input = testing::random_tensor(&mut rng, &net.input_shape(), -1.0, 1.0);
        let stats = dead_map_stats(&net, &input, DEFAULT_DEAD_EPS).unwrap();
        for (ordinal, forced) in [(1, first), (2, second)] {
            let layer = net.feature_layer(ordinal).unwrap();
            let act = net.forward(&input, &[layer]).unwrap().trace.entries[&layer].clone();
            let expected = brute_dead(&act, DEFAULT_DEAD_EPS);
            assert!(forced.iter().all(|c| expected.contains(c)));
            assert_eq!(stats[ordinal - 1].dead_indices, expected);
            let grid = channel_grid(&act, DEFAULT_DEAD_EPS, 4).unwrap();
            let tile = act.shape()[1] * MIN_TILE_SIDE.div_ceil(act.shape()[1]);
            assert_eq!(blue_tiles(&grid, act.shape()[0], 4, tile), expected);
        }
    }
}

#[test]
fn zero_input_zero_bias_kills_first_layer() {
    let mut rng = StdRng::seed_from_u64(41);
    let mut c = fixtures::dead_channel_container(&mut rng, &[], &[]);
    c.tensors["conv1.bias"].data_mut().fill(0.0);
    let net = Network::load(c).unwrap();
    let zero = convlens_core::Tensor::zeros(net.input_shape().to_vec()).unwrap();
    let stats = dead_map_stats(&net, &zero, DEFAULT_DEAD_EPS).unwrap();
    assert_eq!(stats[0].dead, fixtures::DEAD_NET_CHANNELS.0);
    let all = dead_map_stats(&net, &zero, 1e300).unwrap();
    assert!(all.iter().all(|s| s.dead == s.channels));
}
