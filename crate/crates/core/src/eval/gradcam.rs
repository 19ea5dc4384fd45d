use crate::error::{Error, Result};
use crate::model::{ForwardOpts, McdNet, ParamStore};
use crate::tensor::{bilinear_axis_taps, Graph, Tensor};

/// Class-evidence heatmap at input resolution, max-normalized to [0,1].
#[derive(Debug, Clone)]
pub struct CamHeatmap {
    pub values: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub target_class: usize,
    pub target_layer: String,
}

/// Grad-CAM: gradient of the spatial sum of the target-class logits with
/// respect to a feature tap; channel weights are the spatial means of
/// that gradient, the heatmap is the ReLU of the weighted channel sum,
/// bilinearly upsampled and max-normalized (an all-zero map stays zero).
///
/// `target_layer` accepts `f_base`, `f_att`, `f_aspp` or `f_low`; the
/// default is `f_att` for CBAM models and `f_base` otherwise.
pub fn grad_cam(
    model: &McdNet,
    store: &ParamStore<f32>,
    image: &Tensor<f32>,
    target_class: usize,
    target_layer: Option<&str>,
) -> Result<CamHeatmap> {
    if image.shape().len() != 3 || image.shape()[0] != 3 {
        return Err(Error::Shape(format!(
            "grad_cam expects a [3,H,W] image, got {:?}",
            image.shape()
        )));
    }
    if target_class >= model.config.num_classes {
        return Err(Error::Config(format!(
            "target class {target_class} outside 0..{}",
            model.config.num_classes
        )));
    }
    let layer = match target_layer {
        Some(name) => name.to_string(),
        None => {
            if model.config.use_cbam {
                "f_att".to_string()
            } else {
                "f_base".to_string()
            }
        }
    };

    let (h, w) = (image.shape()[1], image.shape()[2]);
    let mut graph: Graph<f32> = Graph::new();
    let batch = Tensor::new(&[1, 3, h, w], image.data().to_vec())?;
    let input = graph.leaf_tensor(&batch, false);
    let opts = ForwardOpts {
        train: false,
        track_grads: true,
        bypass_cbam: false,
    };
    let pass = model.forward(&mut graph, store, input, opts)?;

    let tap = match layer.as_str() {
        "f_base" => pass.f_base,
        "f_att" => pass.f_att,
        "f_aspp" => pass.f_aspp,
        "f_low" => pass.f_low,
        other => return Err(Error::UnknownLayer(other.to_string())),
    };

    // Spatial sum of the target class channel, via a one-hot channel mask.
    let classes = model.config.num_classes;
    let mut onehot = vec![0f32; classes];
    onehot[target_class] = 1.0;
    let mask = graph.leaf(onehot, &[1, classes, 1, 1], false)?;
    let selected = graph.mul_bcast(pass.logits, mask)?;
    let score = graph.sum_all(selected)?;
    graph.backward(score)?;

    let grads = graph
        .grad(tap)
        .ok_or_else(|| Error::Autodiff("no gradient reached the target layer".into()))?;
    let acts = graph.data(tap);
    let shape = graph.shape(tap);
    let (c, fh, fw) = (shape[1], shape[2], shape[3]);
    let map = cam_from_activations(acts, grads, c, fh, fw);
    let values = upsample_plane(&map, fh, fw, h, w);
    Ok(CamHeatmap {
        values,
        height: h,
        width: w,
        target_class,
        target_layer: layer,
    })
}

/// Core Grad-CAM combination on raw activation/gradient planes.
pub fn cam_from_activations<S: crate::tensor::Scalar>(
    acts: &[S],
    grads: &[S],
    channels: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let hw = h * w;
    let mut map = vec![0f64; hw];
    for ch in 0..channels {
        let mut weight = 0f64;
        for p in 0..hw {
            weight += grads[ch * hw + p].to_f64();
        }
        weight /= hw as f64;
        for p in 0..hw {
            map[p] += weight * acts[ch * hw + p].to_f64();
        }
    }
    for v in map.iter_mut() {
        *v = v.max(0.0);
    }
    let peak = map.iter().cloned().fold(0.0f64, f64::max);
    if peak > 0.0 {
        for v in map.iter_mut() {
            *v /= peak;
        }
    }
    map
}

fn upsample_plane(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let ys = bilinear_axis_taps(h, oh);
    let xs = bilinear_axis_taps(w, ow);
    let mut out = vec![0f64; oh * ow];
    for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
            let top = src[y0 * w + x0] + (src[y0 * w + x1] - src[y0 * w + x0]) * tx;
            let bot = src[y1 * w + x0] + (src[y1 * w + x1] - src[y1 * w + x0]) * tx;
            out[oy * ow + ox] = top + (bot - top) * ty;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{McdNet, ModelConfig};

    fn tiny_model() -> (McdNet, ParamStore<f32>) {
        let config = ModelConfig {
            channel_scale: 0.25,
            cbam_reduction: 4,
            ..Default::default()
        };
        let model = McdNet::build(config).unwrap();
        let store = model.init_params(23).unwrap();
        (model, store)
    }

    #[test]
    fn heatmap_contract_shape_and_range() {
        let (model, store) = tiny_model();
        let image = Tensor::full(&[3, 32, 32], 0.5f32);
        let cam = grad_cam(&model, &store, &image, 1, None).unwrap();
        assert_eq!(cam.values.len(), 32 * 32);
        assert_eq!(cam.target_layer, "f_att");
        assert!(cam.values.iter().all(|v| (0.0..=1.0).contains(v)));
        let peak = cam.values.iter().cloned().fold(0.0f64, f64::max);
        assert!(
            peak == 0.0 || (peak - 1.0).abs() < 1e-12,
            "max-normalized to 1, got {peak}"
        );
    }

    #[test]
    fn single_channel_analytic_case() {
        // Score = mean of channel 0 => weights (1/hw, 0, ...) and the
        // heatmap is proportional to ReLU of channel 0.
        let acts = vec![1.0, -2.0, 3.0, 0.5, 9.0, 9.0, 9.0, 9.0];
        let grads = vec![0.25, 0.25, 0.25, 0.25, 0.0, 0.0, 0.0, 0.0];
        let map = cam_from_activations(&acts, &grads, 2, 2, 2);
        // ReLU then /max: [1, 0, 3, 0.5] / 3.
        let expect = [1.0 / 3.0, 0.0, 1.0, 0.5 / 3.0];
        for (m, e) in map.iter().zip(&expect) {
            assert!((m - e).abs() < 1e-12, "{m} vs {e}");
        }
    }

    #[test]
    fn all_negative_map_stays_zero() {
        let acts = vec![-1.0, -2.0, -3.0, -4.0];
        let grads = vec![1.0, 1.0, 1.0, 1.0];
        let map = cam_from_activations(&acts, &grads, 1, 2, 2);
        assert!(map.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unknown_layer_and_class_are_rejected() {
        let (model, store) = tiny_model();
        let image = Tensor::full(&[3, 32, 32], 0.4f32);
        assert!(matches!(
            grad_cam(&model, &store, &image, 1, Some("f_bogus")),
            Err(Error::UnknownLayer(_))
        ));
        assert!(grad_cam(&model, &store, &image, 5, None).is_err());
    }
}
