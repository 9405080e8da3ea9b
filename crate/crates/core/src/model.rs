//! On-disk model description: a text layer list ("netspec") plus a binary
//! weights file.
//!
//! Netspec: one layer per line, `name kind key=value...`; `#` starts a
//! comment.
//!
//! ```text
//! input   input channels=3 height=224 width=224
//! conv_1  conv  out=16 stride=1 pad=1
//! bn_1    bn
//! ReLU_1  relu
//! pool_1  pool
//! yolo    head  from=ReLU_1 anchors=24x64,40x104,72x168 classes=1
//! ```
//!
//! Weights (little-endian): magic `TGW1`, `u32` record count, then per
//! record a `u8` kind tag (1 conv, 2 bn, 3 relu, 4 pool), `u16` name length
//! and UTF-8 name, `u32` dimension count followed by that many `u32`
//! dimensions, then the `f32` payload.
//!
//! | kind | dimensions                          | payload                           |
//! |------|-------------------------------------|-----------------------------------|
//! | conv | out, in, kh, kw, stride, padding    | weights (out·in·kh·kw), bias (out) |
//! | bn   | channels                            | gamma, beta, mean, var, epsilon   |
//! | relu | (none)                              | (none)                            |
//! | pool | window, stride (both 2)             | (none)                            |
//!
//! The detection head is stored as a conv record with a 1×1 kernel.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::engine::{
    BatchNormParams, ConvLayer, Layer, MaxPool2, NamedLayer, NetworkSpec, Shape,
    DEFAULT_INPUT_SHAPE, INPUT_NAME, KERNEL_SIZE,
};
use crate::error::{Error, Result};
use crate::yolo::{AnchorSet, YoloHead, BOX_PARAMS};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"TGW1";

const TAG_CONV: u8 = 1;
const TAG_BN: u8 = 2;
const TAG_RELU: u8 = 3;
const TAG_POOL: u8 = 4;

#[derive(Clone, Debug, PartialEq)]
pub enum WeightRecord {
    Conv {
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    },
    BatchNorm(BatchNormParams),
    Relu,
    Pool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightsFile {
    pub records: Vec<(String, WeightRecord)>,
}

impl WeightsFile {
    pub fn get(&self, name: &str) -> Option<&WeightRecord> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, r)| r)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = WEIGHTS_MAGIC.to_vec();
        out.extend((self.records.len() as u32).to_le_bytes());
        for (name, record) in &self.records {
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Network(format!("layer name `{name}` is too long")))?;
            let (tag, dims, payload): (u8, Vec<usize>, Vec<f32>) = match record {
                WeightRecord::Conv {
                    out_channels,
                    in_channels,
                    kernel,
                    stride,
                    padding,
                    weights,
                    bias,
                } => (
                    TAG_CONV,
                    vec![
                        *out_channels,
                        *in_channels,
                        *kernel,
                        *kernel,
                        *stride,
                        *padding,
                    ],
                    weights.iter().chain(bias).copied().collect(),
                ),
                WeightRecord::BatchNorm(bn) => (
                    TAG_BN,
                    vec![bn.channels()],
                    [bn.gamma(), bn.beta(), bn.running_mean(), bn.running_var()]
                        .concat()
                        .into_iter()
                        .chain([bn.epsilon()])
                        .collect(),
                ),
                WeightRecord::Relu => (TAG_RELU, vec![], vec![]),
                WeightRecord::Pool => (TAG_POOL, vec![MaxPool2::WINDOW, MaxPool2::STRIDE], vec![]),
            };
            out.push(tag);
            out.extend(name_len.to_le_bytes());
            out.extend(name.as_bytes());
            out.extend((dims.len() as u32).to_le_bytes());
            for d in dims {
                out.extend((d as u32).to_le_bytes());
            }
            for v in payload {
                out.extend(v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != WEIGHTS_MAGIC {
            return Err(Error::parse(0, "expected magic TGW1"));
        }
        let count = r.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let tag_at = r.pos;
            let tag = r.take(1)?[0];
            if !(TAG_CONV..=TAG_POOL).contains(&tag) {
                return Err(Error::parse(tag_at, format!("unknown record kind {tag}")));
            }
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name_at = r.pos;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::parse(name_at, "layer name is not UTF-8"))?
                .to_string();
            let dims_at = r.pos;
            let ndims = r.u32()? as usize;
            let dims = (0..ndims)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let expect_dims = |n: usize| {
                if dims.len() == n {
                    Ok(())
                } else {
                    Err(Error::parse(
                        dims_at,
                        format!("record `{name}` needs {n} dimensions, has {}", dims.len()),
                    ))
                }
            };
            let record = match tag {
                TAG_CONV => {
                    expect_dims(6)?;
                    let (out, inp, kh, kw) = (dims[0], dims[1], dims[2], dims[3]);
                    if kh != kw {
                        return Err(Error::parse(
                            dims_at,
                            format!("conv `{name}` kernel {kh}x{kw} is not square"),
                        ));
                    }
                    let weights = r.f32s(out * inp * kh * kw)?;
                    let bias = r.f32s(out)?;
                    WeightRecord::Conv {
                        out_channels: out,
                        in_channels: inp,
                        kernel: kh,
                        stride: dims[4],
                        padding: dims[5],
                        weights,
                        bias,
                    }
                }
                TAG_BN => {
                    expect_dims(1)?;
                    let c = dims[0];
                    let payload_at = r.pos;
                    let v = r.f32s(4 * c + 1)?;
                    let bn = BatchNormParams::new(
                        v[..c].to_vec(),
                        v[c..2 * c].to_vec(),
                        v[2 * c..3 * c].to_vec(),
                        v[3 * c..4 * c].to_vec(),
                        v[4 * c],
                    )
                    .map_err(|e| Error::parse(payload_at, format!("batch norm `{name}`: {e}")))?;
                    WeightRecord::BatchNorm(bn)
                }
                TAG_RELU => {
                    expect_dims(0)?;
                    WeightRecord::Relu
                }
                TAG_POOL => {
                    expect_dims(2)?;
                    if dims != [MaxPool2::WINDOW, MaxPool2::STRIDE] {
                        return Err(Error::parse(
                            dims_at,
                            format!("pool `{name}` must be 2x2 stride 2"),
                        ));
                    }
                    WeightRecord::Pool
                }
                _ => unreachable!("tag checked above"),
            };
            records.push((name, record));
        }
        Ok(Self { records })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Length {
                expected: self.pos.saturating_add(n),
                found: self.bytes.len(),
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::parse(self.pos, "payload size overflows"))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv {
        out_channels: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm,
    Relu,
    Pool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerDecl {
    pub name: String,
    pub kind: LayerKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadDecl {
    pub name: String,
    pub feature_layer: String,
    pub anchors: AnchorSet,
    pub num_classes: usize,
}

/// Parsed netspec: structure only, no parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelLayout {
    pub input: Shape,
    pub layers: Vec<LayerDecl>,
    pub head: Option<HeadDecl>,
}

impl ModelLayout {
    /// The head's source layer, or the last layer when there is no head.
    pub fn feature_layer(&self) -> String {
        match (&self.head, self.layers.last()) {
            (Some(h), _) => h.feature_layer.clone(),
            (None, Some(l)) => l.name.clone(),
            (None, None) => INPUT_NAME.to_string(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut input = DEFAULT_INPUT_SHAPE;
        let mut layers = Vec::new();
        let mut head = None;
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let name = tokens.next().unwrap().to_string();
            let kind = tokens
                .next()
                .ok_or_else(|| line_error(line_no, &name, "missing layer kind"))?;
            let mut keys = HashMap::new();
            for tok in tokens {
                let (k, v) = tok
                    .split_once('=')
                    .ok_or_else(|| line_error(line_no, tok, "expected key=value"))?;
                if keys.insert(k.to_string(), v.to_string()).is_some() {
                    return Err(line_error(line_no, k, "duplicate key"));
                }
            }
            let mut take = |key: &str| keys.remove(key);
            let uint = |key: &str, v: Option<String>, default: usize| -> Result<usize> {
                match v {
                    None => Ok(default),
                    Some(s) => s.parse().map_err(|_| {
                        line_error(
                            line_no,
                            key,
                            &format!("`{s}` is not a non-negative integer"),
                        )
                    }),
                }
            };
            if head.is_some() {
                return Err(line_error(line_no, &name, "the head must be the last line"));
            }
            match kind {
                "input" => {
                    if !layers.is_empty() {
                        return Err(line_error(line_no, &name, "input must precede all layers"));
                    }
                    input = Shape::new(
                        uint("channels", take("channels"), input.channels)?,
                        uint("height", take("height"), input.height)?,
                        uint("width", take("width"), input.width)?,
                    );
                }
                "conv" => {
                    let out_channels = match take("out") {
                        Some(v) => uint("out", Some(v), 0)?,
                        None => return Err(line_error(line_no, "out", "conv needs out=")),
                    };
                    let stride = uint("stride", take("stride"), 1)?;
                    let padding = uint("pad", take("pad"), 1)?;
                    layers.push(LayerDecl {
                        name,
                        kind: LayerKind::Conv {
                            out_channels,
                            stride,
                            padding,
                        },
                    });
                }
                "bn" => layers.push(LayerDecl {
                    name,
                    kind: LayerKind::BatchNorm,
                }),
                "relu" => layers.push(LayerDecl {
                    name,
                    kind: LayerKind::Relu,
                }),
                "pool" => layers.push(LayerDecl {
                    name,
                    kind: LayerKind::Pool,
                }),
                "head" => {
                    let feature_layer = take("from")
                        .or_else(|| layers.last().map(|l: &LayerDecl| l.name.clone()))
                        .unwrap_or_else(|| INPUT_NAME.to_string());
                    let anchors = match take("anchors") {
                        Some(v) => {
                            parse_anchors(&v).map_err(|m| line_error(line_no, "anchors", &m))?
                        }
                        None => AnchorSet::default(),
                    };
                    let num_classes = uint("classes", take("classes"), 1)?;
                    if num_classes == 0 {
                        return Err(line_error(line_no, "classes", "must be at least 1"));
                    }
                    head = Some(HeadDecl {
                        name,
                        feature_layer,
                        anchors,
                        num_classes,
                    });
                }
                other => return Err(line_error(line_no, other, "unknown layer kind")),
            }
            if let Some(k) = keys.keys().min() {
                return Err(line_error(line_no, k, "unknown key"));
            }
        }
        Ok(Self {
            input,
            layers,
            head,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let i = self.input;
        writeln!(
            s,
            "{INPUT_NAME} input channels={} height={} width={}",
            i.channels, i.height, i.width
        )
        .unwrap();
        for l in &self.layers {
            match &l.kind {
                LayerKind::Conv {
                    out_channels,
                    stride,
                    padding,
                } => writeln!(
                    s,
                    "{} conv out={out_channels} stride={stride} pad={padding}",
                    l.name
                )
                .unwrap(),
                LayerKind::BatchNorm => writeln!(s, "{} bn", l.name).unwrap(),
                LayerKind::Relu => writeln!(s, "{} relu", l.name).unwrap(),
                LayerKind::Pool => writeln!(s, "{} pool", l.name).unwrap(),
            }
        }
        if let Some(h) = &self.head {
            let anchors: Vec<String> = h
                .anchors
                .iter()
                .map(|(w, hh)| format!("{w}x{hh}"))
                .collect();
            writeln!(
                s,
                "{} head from={} anchors={} classes={}",
                h.name,
                h.feature_layer,
                anchors.join(","),
                h.num_classes
            )
            .unwrap();
        }
        s
    }
}

fn line_error(line: usize, key: &str, message: &str) -> Error {
    Error::ConfigKey {
        key: key.to_string(),
        line,
        message: message.to_string(),
    }
}

fn parse_anchors(v: &str) -> std::result::Result<AnchorSet, String> {
    let anchors = v
        .split(',')
        .map(|pair| {
            let (w, h) = pair
                .split_once(['x', 'X'])
                .ok_or_else(|| format!("`{pair}` is not WxH"))?;
            Ok((
                w.parse::<f64>()
                    .map_err(|_| format!("bad anchor width `{w}`"))?,
                h.parse::<f64>()
                    .map_err(|_| format!("bad anchor height `{h}`"))?,
            ))
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    AnchorSet::new(anchors).map_err(|e| e.to_string())
}

/// A backbone with an optional detection head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub net: NetworkSpec,
    pub head: Option<(String, YoloHead, AnchorSet)>,
}

impl Model {
    /// Binds parameters from `weights` to the layers declared in `layout`.
    pub fn assemble(layout: &ModelLayout, weights: &WeightsFile) -> Result<Self> {
        let mut layers = Vec::with_capacity(layout.layers.len());
        let mut channels = layout.input.channels;
        for decl in &layout.layers {
            let layer = match &decl.kind {
                LayerKind::Conv {
                    out_channels,
                    stride,
                    padding,
                } => {
                    let Some(WeightRecord::Conv {
                        out_channels: o,
                        in_channels: i,
                        kernel,
                        stride: s,
                        padding: p,
                        weights,
                        bias,
                    }) = weights.get(&decl.name)
                    else {
                        return Err(Error::Network(format!(
                            "no conv weights for layer `{}`",
                            decl.name
                        )));
                    };
                    if (*o, *i, *kernel, *s, *p)
                        != (*out_channels, channels, KERNEL_SIZE, *stride, *padding)
                    {
                        return Err(Error::Network(format!(
                            "weights for `{}` are {o}x{i} k{kernel} s{s} p{p}, layout needs {out_channels}x{channels} k3 s{stride} p{padding}",
                            decl.name
                        )));
                    }
                    channels = *out_channels;
                    Layer::Conv(
                        ConvLayer::new(*i, *o, *s, *p, weights.clone(), bias.clone())
                            .map_err(|e| e.in_layer(&decl.name))?,
                    )
                }
                LayerKind::BatchNorm => match weights.get(&decl.name) {
                    Some(WeightRecord::BatchNorm(bn)) => Layer::BatchNorm(bn.clone()),
                    _ => {
                        return Err(Error::Network(format!(
                            "no batch norm parameters for layer `{}`",
                            decl.name
                        )))
                    }
                },
                LayerKind::Relu => Layer::Relu,
                LayerKind::Pool => Layer::MaxPool(MaxPool2),
            };
            layers.push(NamedLayer {
                name: decl.name.clone(),
                layer,
            });
        }
        let net = NetworkSpec::new(layout.input, layers, layout.feature_layer())?;

        let head = match &layout.head {
            None => None,
            Some(h) => {
                let feature = net.feature_shape()?;
                let expected_out = h.anchors.len() * (BOX_PARAMS + h.num_classes);
                let Some(WeightRecord::Conv {
                    out_channels,
                    in_channels,
                    kernel: 1,
                    weights: w,
                    bias,
                    ..
                }) = weights.get(&h.name)
                else {
                    return Err(Error::Network(format!(
                        "no 1x1 conv weights for head `{}`",
                        h.name
                    )));
                };
                if *in_channels != feature.channels || *out_channels != expected_out {
                    return Err(Error::Network(format!(
                        "head `{}` weights are {out_channels}x{in_channels}, layout needs {expected_out}x{}",
                        h.name, feature.channels
                    )));
                }
                let head = YoloHead::new(*in_channels, *out_channels, w.clone(), bias.clone())
                    .map_err(|e| e.in_layer(&h.name))?;
                Some((h.name.clone(), head, h.anchors.clone()))
            }
        };
        Ok(Self { net, head })
    }

    pub fn load(netspec_path: &Path, weights_path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(netspec_path).map_err(|e| Error::file(netspec_path, e))?;
        let bytes = std::fs::read(weights_path).map_err(|e| Error::file(weights_path, e))?;
        Self::assemble(&ModelLayout::parse(&text)?, &WeightsFile::decode(&bytes)?)
    }

    /// Reference backbone plus a seeded random head.
    pub fn reference(seed: u64) -> Self {
        let net = NetworkSpec::reference(seed);
        let anchors = AnchorSet::default();
        let in_c = net.feature_shape().expect("reference shape").channels;
        let head = YoloHead::random(in_c, anchors.len(), 1, seed.wrapping_add(1));
        Self {
            net,
            head: Some(("yolo_head".to_string(), head, anchors)),
        }
    }

    pub fn layout(&self) -> ModelLayout {
        let layers = self
            .net
            .layers()
            .iter()
            .map(|l| LayerDecl {
                name: l.name.clone(),
                kind: match &l.layer {
                    Layer::Conv(c) => LayerKind::Conv {
                        out_channels: c.out_channels(),
                        stride: c.stride(),
                        padding: c.padding(),
                    },
                    Layer::BatchNorm(_) => LayerKind::BatchNorm,
                    Layer::Relu => LayerKind::Relu,
                    Layer::MaxPool(_) => LayerKind::Pool,
                },
            })
            .collect();
        ModelLayout {
            input: self.net.input_shape(),
            layers,
            head: self.head.as_ref().map(|(name, head, anchors)| HeadDecl {
                name: name.clone(),
                feature_layer: self.net.feature_layer().to_string(),
                anchors: anchors.clone(),
                num_classes: head.out_channels() / anchors.len() - BOX_PARAMS,
            }),
        }
    }

    pub fn weights(&self) -> WeightsFile {
        let mut records: Vec<(String, WeightRecord)> = self
            .net
            .layers()
            .iter()
            .map(|l| {
                let rec = match &l.layer {
                    Layer::Conv(c) => WeightRecord::Conv {
                        out_channels: c.out_channels(),
                        in_channels: c.in_channels(),
                        kernel: KERNEL_SIZE,
                        stride: c.stride(),
                        padding: c.padding(),
                        weights: c.weights().to_vec(),
                        bias: c.bias().to_vec(),
                    },
                    Layer::BatchNorm(bn) => WeightRecord::BatchNorm(bn.clone()),
                    Layer::Relu => WeightRecord::Relu,
                    Layer::MaxPool(_) => WeightRecord::Pool,
                };
                (l.name.clone(), rec)
            })
            .collect();
        if let Some((name, head, _)) = &self.head {
            records.push((
                name.clone(),
                WeightRecord::Conv {
                    out_channels: head.out_channels(),
                    in_channels: head.in_channels(),
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                    weights: head.weights().to_vec(),
                    bias: head.bias().to_vec(),
                },
            ));
        }
        WeightsFile { records }
    }
}
