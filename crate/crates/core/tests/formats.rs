use proptest::prelude::*;
use specmargin::formats::{dataset_to_json, parse_dataset, parse_weights, weights_to_json};
use specmargin::{LabeledDataset, Matrix, ReluNetwork};

fn finite() -> impl Strategy<Value = f64> {
    any::<f64>().prop_filter("finite", |v| v.is_finite())
}

fn network() -> impl Strategy<Value = ReluNetwork> {
    prop::collection::vec(1usize..5, 2..5).prop_flat_map(|arch| {
        let shapes: Vec<(usize, usize)> = arch.windows(2).map(|w| (w[1], w[0])).collect();
        shapes
            .into_iter()
            .map(|(r, c)| prop::collection::vec(finite(), r * c).prop_map(move |d| Matrix::new(r, c, d).unwrap()))
            .collect::<Vec<_>>()
            .prop_map(|layers| ReluNetwork::new(layers).unwrap())
    })
}

proptest! {
    #[test]
    fn weights_round_trip_bit_for_bit(net in network()) {
        let text = weights_to_json(&net);
        let back = parse_weights(&text).unwrap();
        for (a, b) in net.layers().iter().zip(back.layers()) {
            let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
        }
        prop_assert_eq!(weights_to_json(&back), text);
    }

    #[test]
    fn datasets_round_trip_bit_for_bit(
        inputs in prop::collection::vec(prop::collection::vec(finite(), 3), 1..20),
        k in 1usize..5,
    ) {
        let labels = (0..inputs.len()).map(|i| i % k).collect();
        let data = LabeledDataset::new(inputs, labels, k).unwrap();
        let text = dataset_to_json(&data);
        let back = parse_dataset(&text).unwrap();
        for (a, b) in data.inputs().iter().flatten().zip(back.inputs().iter().flatten()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        prop_assert_eq!(dataset_to_json(&back), text);
    }
}
