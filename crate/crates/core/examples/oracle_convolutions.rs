//! The three reference convolutions on small hand-written tensors, and the
//! flat-buffer entry point used to check simulator output.

use dataflow_sim::oracle::{dilated_conv, direct_conv, reference_output, rotate180, transposed_conv};
use dataflow_sim::tensor::{FeatureMap, Filter};
use dataflow_sim::{ConvType, LayerSpec};

fn show(name: &str, m: &FeatureMap) {
    println!("{name}: {}x{}x{}", m.channels, m.height, m.width);
    for y in 0..m.height {
        let row: Vec<String> = (0..m.width).map(|x| format!("{:6.1}", m.get(0, y, x))).collect();
        println!("  {}", row.join(""));
    }
}

fn main() -> dataflow_sim::Result<()> {
    let ifmap = FeatureMap::from_rows(&[
        vec![1.0, 2.0, 3.0, 4.0, 5.0],
        vec![6.0, 7.0, 8.0, 9.0, 10.0],
        vec![11.0, 12.0, 13.0, 14.0, 15.0],
        vec![16.0, 17.0, 18.0, 19.0, 20.0],
        vec![21.0, 22.0, 23.0, 24.0, 25.0],
    ])?;
    let filter = Filter::from_rows(&[vec![1.0, 0.0, -1.0], vec![2.0, 0.0, -2.0], vec![1.0, 0.0, -1.0]])?;
    let stride = 2;

    let ofmap = direct_conv(&ifmap, &filter, stride)?;
    show("forward output", &ofmap);

    // Pretend the loss gradient equals the forward output.
    let input_grad = transposed_conv(&ofmap, &filter, stride)?;
    show("input gradient (transposed)", &input_grad);

    let weight_grad = dilated_conv(&ifmap, &ofmap, stride, 3)?;
    println!("weight gradient (dilated): {:?}", weight_grad.data);
    println!("rotated filter: {:?}", rotate180(&filter).data);

    // Same computation through the flat layout the simulator uses.
    let layer = LayerSpec::new(ConvType::Transposed, 1, 5, 5, 3, 1, 2);
    let flat = reference_output(&layer, &ofmap.data, &filter.data)?;
    assert_eq!(flat, input_grad.data);
    println!("flat reference for {} matches", layer.label());
    Ok(())
}
