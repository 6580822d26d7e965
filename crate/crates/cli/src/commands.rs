use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use convlens_core::analysis::{
    dead_map_stats, serialize_sig6, top_k, DeadMapReport, LayerDeadStats,
};
use convlens_core::gradcam::{compute_gradcam, ClassSelect, LayerSelect};
use convlens_core::imaging::{
    channel_grid, channel_to_grayscale, encode_png, load_image, preprocess, render_overlay,
    resize_image, RgbImage,
};
use convlens_core::model::{select_fraction_layers, Network, WeightContainer};
use convlens_core::Tensor;
use serde::Serialize;

use crate::failure::Failure;

fn load_net(path: &Path) -> Result<Network, Failure> {
    let container = WeightContainer::read(path).map_err(|e| Failure::load(path, e))?;
    Network::load(container).map_err(|e| Failure::load(path, e))
}

fn load_input(net: &Network, path: &Path) -> Result<(RgbImage, Tensor), Failure> {
    let img = load_image(path).map_err(|e| Failure::load(path, e))?;
    let input = preprocess(&img, net.preprocessing())?;
    Ok((img, input))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::write(path, e))
}

fn write_png(path: &Path, img: &RgbImage) -> Result<(), Failure> {
    let mut bytes = Vec::new();
    encode_png(img, &mut bytes).map_err(|e| Failure::write(path, e))?;
    write_file(path, &bytes)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

fn shape_text(shape: &[usize]) -> String {
    shape
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("x")
}

fn join(values: &[usize]) -> String {
    values
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Left-aligned columns separated by two spaces, trailing spaces trimmed.
fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let header: Vec<String> = header.iter().map(|h| h.to_string()).collect();
    for row in std::iter::once(&header).chain(rows) {
        let mut line = String::new();
        for (cell, w) in row.iter().zip(&widths) {
            let _ = write!(line, "{cell:<w$}  ");
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

pub fn inspect(model: &Path) -> Result<(), Failure> {
    let net = load_net(model)?;
    let rows: Vec<Vec<String>> = net
        .arch()
        .layers
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            vec![
                i.to_string(),
                spec.kind.name().to_string(),
                spec.kind.describe_params(),
                shape_text(net.layer_output_shape(i)),
                net.conv_ordinal_of(i)
                    .map(|o| o.to_string())
                    .unwrap_or_default(),
            ]
        })
        .collect();
    print!(
        "{}",
        table(&["index", "kind", "params", "output", "conv"], &rows)
    );
    let n = net.conv_layer_count();
    println!(
        "conv layers: {n}; fraction picks: {}",
        join(&select_fraction_layers(n))
    );
    Ok(())
}

pub fn classify(model: &Path, image: &Path, k: usize) -> Result<(), Failure> {
    if k == 0 {
        return Err(Failure::usage("--top must be at least 1"));
    }
    let net = load_net(model)?;
    let (_, input) = load_input(&net, image)?;
    let classes = net.num_classes();
    if k > classes {
        eprintln!("warning: --top {k} exceeds the {classes} classes; showing {classes}");
    }
    let out = net.forward(&input, &[])?;
    let top = top_k(&out.probs, k, net.arch().class_labels.as_deref());
    print!("{}", to_json(&top));
    Ok(())
}

fn parse_ordinals(spec: &str, net: &Network) -> Result<Vec<usize>, Failure> {
    let n = net.conv_layer_count();
    if spec == "auto" {
        return Ok(select_fraction_layers(n));
    }
    let mut ordinals = Vec::new();
    for part in spec.split(',') {
        let o: usize = part.trim().parse().map_err(|_| {
            Failure::usage(format!(
                "--layers: `{part}` is not a conv ordinal or `auto`"
            ))
        })?;
        net.conv_ordinal_to_layer_index(o)?;
        if !ordinals.contains(&o) {
            ordinals.push(o);
        }
    }
    Ok(ordinals)
}

pub fn activations(
    model: &Path,
    image: &Path,
    layers: &str,
    channel: Option<usize>,
    dead_eps: f64,
    out_dir: &Path,
) -> Result<(), Failure> {
    if dead_eps.is_nan() {
        return Err(Failure::usage("--dead-eps must be a number"));
    }
    let net = load_net(model)?;
    let ordinals = parse_ordinals(layers, &net)?;
    let features = ordinals
        .iter()
        .map(|&o| net.feature_layer(o))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(c) = channel {
        for (&o, &l) in ordinals.iter().zip(&features) {
            let k = net.layer_output_shape(l)[0];
            if c >= k {
                return Err(Failure::usage(format!(
                    "--channel {c} is out of range for conv {o} with {k} channels (valid 0..{k})"
                )));
            }
        }
    }
    let (_, input) = load_input(&net, image)?;
    let out = net.forward(&input, &features)?;
    fs::create_dir_all(out_dir).map_err(|e| Failure::write(out_dir, e))?;
    for (&o, l) in ordinals.iter().zip(&features) {
        let act = &out.trace.entries[l];
        let k = act.shape()[0];
        let cols = (1..=k).find(|c| c * c >= k).unwrap_or(1);
        let grid = channel_grid(act, dead_eps, cols)?;
        write_png(&out_dir.join(format!("act_L{o}_grid.png")), &grid)?;
        if let Some(c) = channel {
            let (_, h, w) = act.chw()?;
            let plane = Tensor::new(vec![h, w], act.channel(c)?.to_vec())?;
            let tile = channel_to_grayscale(&plane)?;
            write_png(&out_dir.join(format!("act_L{o}_c{c}.png")), &tile)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct GradCamSidecar {
    class_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    chosen_by: &'static str,
    conv_ordinal: usize,
    #[serde(serialize_with = "serialize_sig6")]
    logit: f64,
    #[serde(serialize_with = "serialize_sig6")]
    probability: f64,
    heatmap_max_location: [usize; 2],
    degenerate: bool,
}

pub fn gradcam(
    model: &Path,
    image: &Path,
    class: &str,
    layer: &str,
    blend: f32,
    out: &Path,
) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&blend) {
        return Err(Failure::usage(format!(
            "--blend {blend} must lie in [0, 1]"
        )));
    }
    let class = match class {
        "auto" => ClassSelect::Auto,
        c => ClassSelect::Index(c.parse().map_err(|_| {
            Failure::usage(format!("--class: `{c}` is not a class index or `auto`"))
        })?),
    };
    let layer = match layer {
        "last" => LayerSelect::Last,
        l => LayerSelect::Ordinal(l.parse().map_err(|_| {
            Failure::usage(format!("--layer: `{l}` is not a conv ordinal or `last`"))
        })?),
    };
    let net = load_net(model)?;
    let (img, input) = load_input(&net, image)?;
    let r = compute_gradcam(&net, &input, class, layer)?;
    let [_, h, w] = net.input_shape();
    let overlay = render_overlay(&resize_image(&img, w, h)?, &r.heatmap, blend)?;
    let (y, x) = r.max_location();
    let sidecar = GradCamSidecar {
        class_index: r.class_index,
        label: net.class_label(r.class_index).map(str::to_string),
        chosen_by: if class == ClassSelect::Auto {
            "auto"
        } else {
            "user"
        },
        conv_ordinal: r.conv_ordinal,
        logit: r.logits.data()[r.class_index] as f64,
        probability: r.probs.data()[r.class_index] as f64,
        heatmap_max_location: [y, x],
        degenerate: r.is_degenerate(),
    };
    if sidecar.degenerate {
        eprintln!(
            "warning: Grad-CAM map for class {} at conv {} is all zero",
            r.class_index, r.conv_ordinal
        );
    }
    write_png(out, &overlay)?;
    let sidecar_path = out.with_extension("json");
    write_file(&sidecar_path, to_json(&sidecar).as_bytes())?;
    eprintln!("wrote {}", sidecar_path.display());
    Ok(())
}

fn dead_table(layers: &[LayerDeadStats]) -> String {
    let rows: Vec<Vec<String>> = layers
        .iter()
        .map(|s| {
            vec![
                s.layer.to_string(),
                s.channels.to_string(),
                s.dead.to_string(),
                format!("{:.4}", s.dead_fraction),
            ]
        })
        .collect();
    table(&["conv", "channels", "dead", "fraction"], &rows)
}

pub fn deadmaps(model: &Path, image: &Path, eps: f64, json: Option<&Path>) -> Result<(), Failure> {
    if eps.is_nan() {
        return Err(Failure::usage("--eps must be a number"));
    }
    let net = load_net(model)?;
    let (_, input) = load_input(&net, image)?;
    let report = DeadMapReport {
        model: model.display().to_string(),
        input: image.display().to_string(),
        epsilon: eps,
        layers: dead_map_stats(&net, &input, eps)?,
    };
    match json {
        Some(path) => {
            write_file(path, to_json(&report).as_bytes())?;
            print!("{}", dead_table(&report.layers));
        }
        None => {
            print!("{}", to_json(&report));
            eprint!("{}", dead_table(&report.layers));
        }
    }
    Ok(())
}
