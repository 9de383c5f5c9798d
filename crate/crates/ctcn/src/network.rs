//! The anchor-pyramid detector: stem, four stages of residual blocks, a
//! temporal feature pyramid with top-down and lateral connections, and
//! per-scale classifier/regressor heads.
//!
//! Three operator families share this assembly. The `ctcn` variant uses
//! concept-wise temporal convolutions over a `potential x concept x snippet`
//! map; the `tcn` and `group_tcn` baselines use standard and grouped
//! temporal convolutions with a constant channel count, matching depth and
//! stride schedule so the comparison isolates the operator family.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::anchors::AnchorConfig;
use crate::conv::{
    ctc_conv, group_temporal_conv, standard_temporal_conv, CtcFilterBank, FeatureSequence,
};
use crate::error::{CtcnError, Result};
use crate::tensor::{Parameter, Tensor};

/// Convolution operator family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Ctcn,
    Tcn,
    GroupTcn(usize),
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Ctcn => write!(f, "ctcn"),
            Variant::Tcn => write!(f, "tcn"),
            Variant::GroupTcn(g) => write!(f, "group_tcn({g})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetworkConfig {
    /// Input snippet count `t0`; must equal `2^max_scale`.
    pub input_snippets: usize,
    /// Concept count of the input feature sequence.
    pub concepts: usize,
    /// Action classes `A` (background excluded).
    pub num_classes: usize,
    /// Anchors per cell `M`.
    pub anchors_per_cell: usize,
    pub min_scale: u32,
    pub max_scale: u32,
    /// Kernel extent of the two stem layers.
    pub stem_width: usize,
    /// Residual blocks per stage (depth control).
    pub stage_blocks: [usize; 4],
    /// Potential count per stage (`ctcn` variant only).
    pub stage_potentials: [usize; 4],
    /// Potential count of the pyramid maps (`ctcn` variant only).
    pub pyramid_potentials: usize,
    /// Optional learned reduction of the input concept dimension.
    pub reduce_concepts: Option<usize>,
    pub variant: Variant,
}

impl NetworkConfig {
    /// CPU-scale default: small enough to train in minutes.
    pub fn desk_scale() -> NetworkConfig {
        NetworkConfig {
            input_snippets: 64,
            concepts: 16,
            num_classes: 3,
            anchors_per_cell: 2,
            min_scale: 2,
            max_scale: 6,
            stem_width: 7,
            stage_blocks: [1, 1, 1, 1],
            stage_potentials: [4, 8, 8, 8],
            pyramid_potentials: 8,
            reduce_concepts: None,
            variant: Variant::Ctcn,
        }
    }

    /// The geometry of the full-scale configuration (512 snippets, scales
    /// P2..P9, 7 anchors, 256-d reduced input).
    pub fn full_scale() -> NetworkConfig {
        NetworkConfig {
            input_snippets: 512,
            concepts: 2048,
            num_classes: 20,
            anchors_per_cell: 7,
            min_scale: 2,
            max_scale: 9,
            stem_width: 7,
            stage_blocks: [3, 4, 6, 3],
            stage_potentials: [4, 8, 16, 32],
            pyramid_potentials: 16,
            reduce_concepts: Some(256),
            variant: Variant::Ctcn,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_scale < 2 || self.min_scale > 5 {
            return Err(CtcnError::InvalidArgument(format!(
                "min_scale {} must lie in 2..=5 (laterals come from the four backbone stages)",
                self.min_scale
            )));
        }
        if self.max_scale < 6 {
            return Err(CtcnError::InvalidArgument(format!(
                "max_scale {} must be >= 6 (the first coarse scale hangs off the last stage)",
                self.max_scale
            )));
        }
        let needed = 1usize << self.max_scale;
        if self.input_snippets != needed {
            return Err(CtcnError::InvalidArgument(format!(
                "input snippet count {} too small or mismatched for scales up to {}: need exactly {needed}",
                self.input_snippets, self.max_scale
            )));
        }
        if self.num_classes == 0 || self.anchors_per_cell == 0 || self.concepts == 0 {
            return Err(CtcnError::InvalidArgument(
                "num_classes, anchors_per_cell and concepts must be >= 1".into(),
            ));
        }
        if self.stem_width % 2 == 0 {
            return Err(CtcnError::InvalidArgument("stem_width must be odd".into()));
        }
        if let Variant::GroupTcn(g) = self.variant {
            let c = self.reduce_concepts.unwrap_or(self.concepts);
            if g == 0 || c % g != 0 {
                return Err(CtcnError::InvalidArgument(format!(
                    "group count {g} must divide the working concept count {c}"
                )));
            }
        }
        Ok(())
    }

    pub fn anchor_config(&self) -> Result<AnchorConfig> {
        AnchorConfig::new(
            self.input_snippets,
            self.min_scale,
            self.max_scale,
            self.anchors_per_cell,
        )
    }

    /// Concept count after the optional input reduction.
    fn working_concepts(&self) -> usize {
        self.reduce_concepts.unwrap_or(self.concepts)
    }
}

/// Per-scale prediction maps.
#[derive(Clone)]
pub struct ScaleOutput {
    pub scale: u32,
    /// `[(A+1)*M, cells]` classification logits.
    pub cls: Tensor,
    /// `[2*M, cells]` offset predictions (`beta` rows then `gamma` rows).
    pub reg: Tensor,
}

#[derive(Clone)]
pub struct PyramidOutputs {
    pub num_classes: usize,
    pub anchors_per_cell: usize,
    pub scales: Vec<ScaleOutput>,
}

/// One convolution layer of whichever operator family the variant uses.
/// All maps are rank-3 `[potentials, concepts, snippets]`; the `tcn`
/// variants keep the potential extent at 1 and vary the concept extent.
enum Layer {
    Ctc {
        bank: CtcFilterBank,
        stride: usize,
    },
    Std {
        w: Tensor,
        b: Tensor,
        stride: usize,
    },
    Group {
        ws: Vec<Tensor>,
        bs: Vec<Tensor>,
        stride: usize,
    },
}

impl Layer {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Ctc { bank, stride } => ctc_conv(x, bank, *stride),
            Layer::Std { w, b, stride } => {
                let s = x.shape();
                let flat = x.reshape(vec![s[0] * s[1], s[2]])?;
                let y = standard_temporal_conv(&flat, w, b, *stride)?;
                let ys = y.shape();
                y.reshape(vec![1, ys[0], ys[1]])
            }
            Layer::Group { ws, bs, stride } => {
                let s = x.shape();
                let flat = x.reshape(vec![s[0] * s[1], s[2]])?;
                let y = group_temporal_conv(&flat, ws, bs, *stride)?;
                let ys = y.shape();
                y.reshape(vec![1, ys[0], ys[1]])
            }
        }
    }
}

struct Block {
    conv1: Layer,
    conv2: Layer,
    down: Option<Layer>,
}

impl Block {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv1.apply(x)?.relu();
        let y = self.conv2.apply(&y)?;
        let shortcut = match &self.down {
            Some(l) => l.apply(x)?,
            None => x.clone(),
        };
        Ok(y.add(&shortcut)?.relu())
    }
}

struct Head {
    hidden: Layer,
    pred_w: Tensor,
    pred_b: Tensor,
}

impl Head {
    fn apply(&self, p: &Tensor) -> Result<Tensor> {
        let h = self.hidden.apply(p)?.relu();
        let s = h.shape();
        let flat = h.reshape(vec![s[0] * s[1], s[2]])?;
        self.pred_w.matmul(&flat)?.add_bias_rows(&self.pred_b)
    }
}

/// Initializer: Kaiming-style fan-in scaled normals, seed-controlled.
struct Builder {
    rng: ChaCha8Rng,
    params: Vec<Parameter>,
}

impl Builder {
    fn normal(&mut self) -> f64 {
        // Box-Muller; uses two uniforms per sample.
        let u1: f64 = self.rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = self.rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    fn weight(&mut self, name: &str, shape: Vec<usize>, fan_in: usize) -> Tensor {
        let std = (2.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.normal() * std).collect();
        let p = Parameter::new(name, shape, data).expect("valid weight shape");
        self.params.push(p.clone());
        p.tensor
    }

    /// Small-magnitude init for prediction layers, so initial logits stay
    /// near zero and the loss starts at the uniform-softmax value instead
    /// of arbitrary confident guesses.
    fn pred_weight(&mut self, name: &str, shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.normal() * 0.01).collect();
        let p = Parameter::new(name, shape, data).expect("valid weight shape");
        self.params.push(p.clone());
        p.tensor
    }

    fn zeros(&mut self, name: &str, shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product();
        let p = Parameter::new(name, shape, vec![0.0; n]).expect("valid bias shape");
        self.params.push(p.clone());
        p.tensor
    }

    /// A conv layer of the variant's family. `c` is the working concept
    /// count (ignored for shapes in the ctc family).
    fn conv(
        &mut self,
        name: &str,
        variant: Variant,
        k_in: usize,
        k_out: usize,
        c: usize,
        width: usize,
        stride: usize,
        grouped: bool,
    ) -> Layer {
        match variant {
            Variant::Ctcn => {
                let w = self.weight(
                    &format!("{name}.w"),
                    vec![k_out, k_in, width],
                    k_in * width,
                );
                let b = self.zeros(&format!("{name}.b"), vec![k_out]);
                Layer::Ctc {
                    bank: CtcFilterBank::new(w, b).expect("valid bank"),
                    stride,
                }
            }
            Variant::Tcn => Layer::Std {
                w: self.weight(&format!("{name}.w"), vec![c, c, width], c * width),
                b: self.zeros(&format!("{name}.b"), vec![c]),
                stride,
            },
            Variant::GroupTcn(g) if grouped => {
                let per = c / g;
                let ws = (0..g)
                    .map(|i| {
                        self.weight(
                            &format!("{name}.g{i}.w"),
                            vec![per, per, width],
                            per * width,
                        )
                    })
                    .collect();
                let bs = (0..g)
                    .map(|i| self.zeros(&format!("{name}.g{i}.b"), vec![per]))
                    .collect();
                Layer::Group { ws, bs, stride }
            }
            Variant::GroupTcn(_) => Layer::Std {
                w: self.weight(&format!("{name}.w"), vec![c, c, width], c * width),
                b: self.zeros(&format!("{name}.b"), vec![c]),
                stride,
            },
        }
    }
}

pub struct Network {
    pub cfg: NetworkConfig,
    params: Vec<Parameter>,
    reduce: Option<(Tensor, Tensor)>,
    stem: Vec<Layer>,
    stages: Vec<Vec<Block>>,
    laterals: Vec<Layer>,
    extras: Vec<Layer>,
    cls_head: Head,
    reg_head: Head,
}

/// Forward-pass mode; training applies inverted-scale dropout (rate 0.5)
/// after every pyramid map.
pub enum ForwardMode<'a> {
    Eval,
    Train { rng: &'a mut ChaCha8Rng },
}

/// Deterministically initialize a network from a seed.
pub fn build_network(cfg: &NetworkConfig, seed: u64) -> Result<Network> {
    cfg.validate()?;
    use rand::SeedableRng;
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        params: Vec::new(),
    };
    let v = cfg.variant;
    let c = cfg.working_concepts();

    let reduce = cfg.reduce_concepts.map(|cr| {
        (
            b.weight("reduce.w", vec![cr, cfg.concepts], cfg.concepts),
            b.zeros("reduce.b", vec![cr]),
        )
    });

    // Stem: two wide layers with temporal stride 2 (resolution /4).
    let p0 = cfg.stage_potentials[0];
    let stem = vec![
        b.conv("stem.0", v, 1, p0, c, cfg.stem_width, 2, true),
        b.conv("stem.1", v, p0, p0, c, cfg.stem_width, 2, true),
    ];

    // Four residual stages; the first keeps resolution, the rest halve it.
    let mut stages = Vec::with_capacity(4);
    let mut k_prev = p0;
    for (si, (&blocks, &k_stage)) in cfg
        .stage_blocks
        .iter()
        .zip(&cfg.stage_potentials)
        .enumerate()
    {
        let mut stage = Vec::with_capacity(blocks);
        for bi in 0..blocks {
            let stride = if si > 0 && bi == 0 { 2 } else { 1 };
            let k_in = if bi == 0 { k_prev } else { k_stage };
            let name = format!("c{}.{bi}", si + 2);
            let conv1 = b.conv(&format!("{name}.conv1"), v, k_in, k_stage, c, 3, stride, true);
            let conv2 = b.conv(&format!("{name}.conv2"), v, k_stage, k_stage, c, 3, 1, true);
            let needs_down = stride != 1 || (v == Variant::Ctcn && k_in != k_stage);
            let down = needs_down
                .then(|| b.conv(&format!("{name}.down"), v, k_in, k_stage, c, 1, stride, false));
            stage.push(Block { conv1, conv2, down });
        }
        stages.push(stage);
        k_prev = k_stage;
    }

    let kp = cfg.pyramid_potentials;
    let laterals = (0..4)
        .map(|i| {
            b.conv(
                &format!("lateral.p{}", i + 2),
                v,
                cfg.stage_potentials[i],
                kp,
                c,
                1,
                1,
                false,
            )
        })
        .collect();

    // P6 from C5, then each further scale from the previous one.
    let mut extras = Vec::new();
    for l in 6..=cfg.max_scale {
        let k_in = if l == 6 { cfg.stage_potentials[3] } else { kp };
        extras.push(b.conv(&format!("extra.p{l}"), v, k_in, kp, c, 3, 2, true));
    }

    let a1m = (cfg.num_classes + 1) * cfg.anchors_per_cell;
    let head = |tag: &str, out_ch: usize, b: &mut Builder| -> Head {
        let (k_h, flat_in) = match v {
            Variant::Ctcn => {
                let k_h = (kp / 2).max(1);
                (k_h, k_h * c)
            }
            _ => {
                let c_h = (c / 2).max(1);
                (c_h, c_h)
            }
        };
        let hidden = match v {
            Variant::Ctcn => b.conv(&format!("{tag}.hidden"), v, kp, k_h, c, 3, 1, true),
            _ => {
                // Halved channel count; built directly since the generic
                // helper keeps c constant.
                let w = b.weight(&format!("{tag}.hidden.w"), vec![k_h, c, 3], c * 3);
                let bias = b.zeros(&format!("{tag}.hidden.b"), vec![k_h]);
                Layer::Std { w, b: bias, stride: 1 }
            }
        };
        Head {
            hidden,
            pred_w: b.pred_weight(&format!("{tag}.pred.w"), vec![out_ch, flat_in]),
            pred_b: b.zeros(&format!("{tag}.pred.b"), vec![out_ch]),
        }
    };
    let cls_head = head("cls", a1m, &mut b);
    let reg_head = head("reg", 2 * cfg.anchors_per_cell, &mut b);

    Ok(Network {
        cfg: cfg.clone(),
        params: b.params,
        reduce,
        stem,
        stages,
        laterals,
        extras,
        cls_head,
        reg_head,
    })
}

/// Nearest-neighbor x2 upsample of the coarse map added to the projected
/// lateral map; the upsampled length must equal the lateral length.
pub fn top_down_merge(coarse: &Tensor, lateral: &Tensor) -> Result<Tensor> {
    let cs = coarse.shape();
    let ls = lateral.shape();
    if cs.last().unwrap() * 2 != *ls.last().unwrap() {
        return Err(CtcnError::InvalidArgument(format!(
            "top-down merge needs a 2:1 length ratio, got {:?} vs {:?}",
            cs, ls
        )));
    }
    coarse.upsample2_last().add(lateral)
}

impl Network {
    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.tensor.zero_grad();
        }
    }

    pub fn forward(&self, x: &FeatureSequence, mode: ForwardMode) -> Result<PyramidOutputs> {
        let cfg = &self.cfg;
        if x.snippets() != cfg.input_snippets {
            return Err(CtcnError::InvalidArgument(format!(
                "input has {} snippets, network expects {}",
                x.snippets(),
                cfg.input_snippets
            )));
        }
        if x.concepts() != cfg.concepts {
            return Err(CtcnError::InvalidArgument(format!(
                "input has {} concepts, network expects {}",
                x.concepts(),
                cfg.concepts
            )));
        }
        let values = match &self.reduce {
            Some((w, b)) => w.matmul(&x.values)?.add_bias_rows(b)?,
            None => x.values.clone(),
        };
        let vs = values.shape();
        let mut map = values.reshape(vec![1, vs[0], vs[1]])?;
        for layer in &self.stem {
            map = layer.apply(&map)?.relu();
        }

        let mut stage_outs = Vec::with_capacity(4);
        for stage in &self.stages {
            for block in stage {
                map = block.apply(&map)?;
            }
            stage_outs.push(map.clone());
        }

        // Coarse scales P6.. from C5.
        let mut extra_maps = Vec::with_capacity(self.extras.len());
        let mut prev = stage_outs[3].clone();
        for (i, layer) in self.extras.iter().enumerate() {
            let input = if i == 0 { prev.clone() } else { prev.relu() };
            prev = layer.apply(&input)?;
            extra_maps.push(prev.clone());
        }

        // Top-down path P5 -> P2.
        let mut tops = vec![None, None, None, None];
        let mut p = self.laterals[3].apply(&stage_outs[3])?;
        tops[3] = Some(p.clone());
        for i in (0..3).rev() {
            let lateral = self.laterals[i].apply(&stage_outs[i])?;
            p = top_down_merge(&p, &lateral)?;
            tops[i] = Some(p.clone());
        }

        let mut rng_opt = match mode {
            ForwardMode::Eval => None,
            ForwardMode::Train { rng } => Some(rng),
        };
        let mut scales = Vec::new();
        for l in cfg.min_scale..=cfg.max_scale {
            let mut pmap = if l <= 5 {
                tops[(l - 2) as usize].clone().expect("top-down map built")
            } else {
                extra_maps[(l - 6) as usize].clone()
            };
            if let Some(rng) = rng_opt.as_deref_mut() {
                let n = pmap.numel();
                let mask: Vec<f64> = (0..n)
                    .map(|_| if rng.gen::<f64>() < 0.5 { 0.0 } else { 2.0 })
                    .collect();
                let mask = Tensor::leaf(pmap.shape(), mask)?;
                pmap = pmap.mul(&mask)?;
            }
            scales.push(ScaleOutput {
                scale: l,
                cls: self.cls_head.apply(&pmap)?,
                reg: self.reg_head.apply(&pmap)?,
            });
        }
        Ok(PyramidOutputs {
            num_classes: cfg.num_classes,
            anchors_per_cell: cfg.anchors_per_cell,
            scales,
        })
    }

    /// Textual architecture echo: one line per parameter plus totals.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "variant: {}\nscales: P{}..P{} over {} snippets, {} classes, {} anchors/cell\n",
            self.cfg.variant,
            self.cfg.min_scale,
            self.cfg.max_scale,
            self.cfg.input_snippets,
            self.cfg.num_classes,
            self.cfg.anchors_per_cell
        ));
        for p in &self.params {
            out.push_str(&format!(
                "{:<24} {:?} = {}\n",
                p.name,
                p.tensor.shape(),
                p.tensor.numel()
            ));
        }
        out.push_str(&format!("total parameters: {}\n", self.parameter_count()));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn toy_cfg() -> NetworkConfig {
        NetworkConfig {
            concepts: 4,
            stage_potentials: [2, 2, 4, 4],
            pyramid_potentials: 4,
            ..NetworkConfig::desk_scale()
        }
    }

    fn rand_features(cfg: &NetworkConfig, seed: u64) -> FeatureSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.concepts * cfg.input_snippets;
        FeatureSequence::new(
            Tensor::leaf(
                vec![cfg.concepts, cfg.input_snippets],
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn full_geometry_cell_counts() {
        let cfg = NetworkConfig::full_scale();
        let ac = cfg.anchor_config().unwrap();
        let cells: Vec<usize> = (2..=9).map(|l| ac.cells(l).unwrap()).collect();
        assert_eq!(cells, vec![128, 64, 32, 16, 8, 4, 2, 1]);
    }

    #[test]
    fn toy_geometry_cell_counts() {
        let ac = NetworkConfig::desk_scale().anchor_config().unwrap();
        let cells: Vec<usize> = (2..=6).map(|l| ac.cells(l).unwrap()).collect();
        assert_eq!(cells, vec![16, 8, 4, 2, 1]);
    }

    #[test]
    fn build_rejects_small_input() {
        let cfg = NetworkConfig {
            input_snippets: 32,
            ..NetworkConfig::desk_scale()
        };
        let err = match build_network(&cfg, 0) {
            Err(e) => e.to_string(),
            Ok(_) => panic!("expected rejection"),
        };
        assert!(err.contains("64"), "{err}");
    }

    #[test]
    fn forward_output_shapes() {
        let cfg = toy_cfg();
        let net = build_network(&cfg, 1).unwrap();
        let out = net.forward(&rand_features(&cfg, 2), ForwardMode::Eval).unwrap();
        let expect = [(16usize), 8, 4, 2, 1];
        assert_eq!(out.scales.len(), 5);
        for (s, &cells) in out.scales.iter().zip(&expect) {
            assert_eq!(s.cls.shape(), vec![8, cells]); // (A+1)M = 8
            assert_eq!(s.reg.shape(), vec![4, cells]); // 2M = 4
        }
    }

    #[test]
    fn zero_heads_give_uniform_logits() {
        let cfg = toy_cfg();
        let net = build_network(&cfg, 1).unwrap();
        for p in net.parameters() {
            if p.name.starts_with("cls.pred") || p.name.starts_with("reg.pred") {
                p.tensor.set_data(vec![0.0; p.tensor.numel()]).unwrap();
            }
        }
        let out = net.forward(&rand_features(&cfg, 3), ForwardMode::Eval).unwrap();
        for s in &out.scales {
            for &v in &s.cls.data() {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn ctc_parameter_count_independent_of_concepts() {
        let cfg16 = NetworkConfig { reduce_concepts: None, ..toy_cfg() };
        let cfg32 = NetworkConfig { concepts: cfg16.concepts * 2, ..cfg16.clone() };
        let n16 = build_network(&cfg16, 0).unwrap();
        let n32 = build_network(&cfg32, 0).unwrap();
        // Only the prediction layers (which read all concepts) may differ.
        let count = |net: &Network| -> usize {
            net.parameters()
                .iter()
                .filter(|p| !p.name.contains("pred"))
                .map(|p| p.tensor.numel())
                .sum()
        };
        assert_eq!(count(&n16), count(&n32));
    }

    #[test]
    fn tcn_variant_keeps_channel_count() {
        let cfg = NetworkConfig { variant: Variant::Tcn, ..toy_cfg() };
        let net = build_network(&cfg, 0).unwrap();
        for p in net.parameters() {
            if p.name.ends_with(".w") && !p.name.contains("pred") && !p.name.contains("hidden") {
                let s = p.tensor.shape();
                assert_eq!(s[0], cfg.concepts, "{}: {:?}", p.name, s);
                assert_eq!(s[1], cfg.concepts, "{}: {:?}", p.name, s);
            }
        }
        let out = net
            .forward(&rand_features(&cfg, 5), ForwardMode::Eval)
            .unwrap();
        assert_eq!(out.scales.len(), 5);
    }

    #[test]
    fn group_variant_runs() {
        let cfg = NetworkConfig { variant: Variant::GroupTcn(2), ..toy_cfg() };
        let net = build_network(&cfg, 0).unwrap();
        let out = net
            .forward(&rand_features(&cfg, 6), ForwardMode::Eval)
            .unwrap();
        assert_eq!(out.scales.len(), 5);
    }

    #[test]
    fn deterministic_build_and_forward() {
        let cfg = toy_cfg();
        let run = || {
            let net = build_network(&cfg, 42).unwrap();
            let out = net.forward(&rand_features(&cfg, 7), ForwardMode::Eval).unwrap();
            (net.parameter_count(), out.scales[0].cls.data())
        };
        let (c1, d1) = run();
        let (c2, d2) = run();
        assert_eq!(c1, c2);
        let b1: Vec<u64> = d1.iter().map(|v| v.to_bits()).collect();
        let b2: Vec<u64> = d2.iter().map(|v| v.to_bits()).collect();
        assert_eq!(b1, b2);
    }

    #[test]
    fn dropout_off_at_inference() {
        let cfg = toy_cfg();
        let net = build_network(&cfg, 8).unwrap();
        let x = rand_features(&cfg, 9);
        let a = net.forward(&x, ForwardMode::Eval).unwrap();
        let b = net.forward(&x, ForwardMode::Eval).unwrap();
        for (sa, sb) in a.scales.iter().zip(&b.scales) {
            assert_eq!(sa.cls.data(), sb.cls.data());
            assert_eq!(sa.reg.data(), sb.reg.data());
        }
        // Train mode differs (dropout active).
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = net.forward(&x, ForwardMode::Train { rng: &mut rng }).unwrap();
        assert_ne!(a.scales[0].cls.data(), c.scales[0].cls.data());
    }

    #[test]
    fn top_down_merge_examples() {
        let coarse = Tensor::leaf(vec![1, 1, 2], vec![1.0, 2.0]).unwrap();
        let lateral = Tensor::leaf(vec![1, 1, 4], vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let merged = top_down_merge(&coarse, &lateral).unwrap();
        assert_eq!(merged.data(), vec![1.5, 1.5, 2.5, 2.5]);
        let zero_coarse = Tensor::zeros(vec![1, 1, 2]);
        assert_eq!(top_down_merge(&zero_coarse, &lateral).unwrap().data(), lateral.data());
        assert!(top_down_merge(&coarse, &coarse).is_err());
    }
}
