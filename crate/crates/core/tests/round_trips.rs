use filterprune_core::io::{decode_tensor, encode_tensor, read_model, read_tensor, write_model, write_tensor, Model};
use filterprune_core::tensor::{Activation, ConvLayer, Network, Tensor};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn tensor_strategy() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(1usize..5, 1..5).prop_flat_map(|shape| {
        let len: usize = shape.iter().product();
        prop::collection::vec(any::<f64>(), len).prop_map(move |data| Tensor::new(shape.clone(), data).unwrap())
    })
}

fn layer_strategy(m: usize) -> impl Strategy<Value = ConvLayer> {
    (1usize..5, prop::sample::select(vec![1usize, 3]), any::<bool>(), any::<bool>()).prop_flat_map(move |(n, k, relu, mix)| {
        let act = if relu { Activation::Relu } else { Activation::Identity };
        (prop::collection::vec(-1e3f64..1e3, n * m * k * k), prop::collection::vec(-10.0f64..10.0, n * (n + 1)))
            .prop_map(move |(w, g)| {
                let layer = ConvLayer::new(m, n, k, w, act).unwrap();
                if mix {
                    layer.with_comp(DMatrix::from_vec(n, n + 1, g)).unwrap()
                } else {
                    layer
                }
            })
    })
}

fn network_strategy() -> impl Strategy<Value = Network> {
    (1usize..4).prop_flat_map(layer_strategy).prop_flat_map(|first| {
        let width = first.output_width();
        layer_strategy(width).prop_map(move |second| Network::new(vec![first.clone(), second]).unwrap())
    })
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn tensor_bytes_round_trip(t in tensor_strategy()) {
        let bytes = encode_tensor(&t).unwrap();
        prop_assert_eq!(bytes.len(), 8 + 4 * t.shape().len() + 8 * t.len());
        let back = decode_tensor(&bytes).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert_eq!(bits(back.data()), bits(t.data()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn model_file_round_trip(net in network_strategy(), h in 1usize..9) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let model = Model { input_shape: vec![net.input_channels(), h, h], network: net };
        write_model(&path, &model).unwrap();
        let back = read_model(&path).unwrap();
        for (a, b) in back.network.layers().iter().zip(model.network.layers()) {
            prop_assert_eq!(bits(a.weights()), bits(b.weights()));
        }
        prop_assert_eq!(back, model);
    }

    #[test]
    fn tensor_file_round_trip(t in tensor_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pkt");
        write_tensor(&path, &t).unwrap();
        prop_assert_eq!(bits(read_tensor(&path).unwrap().data()), bits(t.data()));
    }
}
