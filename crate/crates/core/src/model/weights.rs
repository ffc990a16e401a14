//! The parameter tree, generic over the leaf type so the same layout holds owned
//! tensors, tape handles, or shapes.

use super::ArchConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct Conv<P> {
    pub weight: P,
    pub bias: P,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock<P> {
    pub conv1: Conv<P>,
    pub conv2: Conv<P>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaseNet<P> {
    pub conv_in: Conv<P>,
    pub conv_down: Conv<P>,
    pub blocks: Vec<ResBlock<P>>,
    pub conv_up: Conv<P>,
    pub conv_post: Conv<P>,
    pub conv_out: Conv<P>,
}

/// One bias-free linear map per controllable connection.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionNet<P> {
    /// `[channels, condition_dim]` per group.
    pub local: Vec<P>,
    /// `[image_channels, condition_dim]`.
    pub global: P,
}

/// Base network plus an optional condition network. Without a condition network
/// every connection weight is fixed at 1 (the plain upper-bound baseline).
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<P> {
    pub base: BaseNet<P>,
    pub condition: Option<ConditionNet<P>>,
}

impl<P> Conv<P> {
    fn map<Q>(&self, prefix: &str, f: &mut impl FnMut(&str, &P) -> Q) -> Conv<Q> {
        Conv {
            weight: f(&format!("{prefix}.weight"), &self.weight),
            bias: f(&format!("{prefix}.bias"), &self.bias),
        }
    }
}

impl<P> Weights<P> {
    /// Maps every leaf in canonical order, passing its dotted name.
    pub fn map<Q>(&self, mut f: impl FnMut(&str, &P) -> Q) -> Weights<Q> {
        let b = &self.base;
        let base = BaseNet {
            conv_in: b.conv_in.map("base.conv_in", &mut f),
            conv_down: b.conv_down.map("base.conv_down", &mut f),
            blocks: b
                .blocks
                .iter()
                .enumerate()
                .map(|(i, blk)| ResBlock {
                    conv1: blk.conv1.map(&format!("base.blocks.{i}.conv1"), &mut f),
                    conv2: blk.conv2.map(&format!("base.blocks.{i}.conv2"), &mut f),
                })
                .collect(),
            conv_up: b.conv_up.map("base.conv_up", &mut f),
            conv_post: b.conv_post.map("base.conv_post", &mut f),
            conv_out: b.conv_out.map("base.conv_out", &mut f),
        };
        let condition = self.condition.as_ref().map(|c| ConditionNet {
            local: c
                .local
                .iter()
                .enumerate()
                .map(|(i, w)| f(&format!("condition.local.{i}"), w))
                .collect(),
            global: f("condition.global", &c.global),
        });
        Weights { base, condition }
    }

    /// Leaves in canonical order with their names.
    pub fn named(&self) -> Vec<(String, &P)> {
        let names = self.map(|name, _| name.to_string());
        let mut refs = Vec::new();
        self.visit(&mut refs);
        let mut name_list = Vec::new();
        names.visit(&mut name_list);
        name_list.into_iter().cloned().zip(refs).collect()
    }

    fn visit<'a>(&'a self, out: &mut Vec<&'a P>) {
        let b = &self.base;
        for c in [&b.conv_in, &b.conv_down]
            .into_iter()
            .chain(b.blocks.iter().flat_map(|blk| [&blk.conv1, &blk.conv2]))
            .chain([&b.conv_up, &b.conv_post, &b.conv_out])
        {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        if let Some(c) = &self.condition {
            out.extend(c.local.iter());
            out.push(&c.global);
        }
    }

    /// Mutable leaves in canonical order.
    pub fn leaves_mut(&mut self) -> Vec<&mut P> {
        let mut out = Vec::new();
        let b = &mut self.base;
        for c in [&mut b.conv_in, &mut b.conv_down]
            .into_iter()
            .chain(b.blocks.iter_mut().flat_map(|blk| [&mut blk.conv1, &mut blk.conv2]))
            .chain([&mut b.conv_up, &mut b.conv_post, &mut b.conv_out])
        {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        if let Some(c) = &mut self.condition {
            out.extend(c.local.iter_mut());
            out.push(&mut c.global);
        }
        out
    }

    pub fn leaves(&self) -> Vec<&P> {
        let mut out = Vec::new();
        self.visit(&mut out);
        out
    }
}

impl Weights<Vec<usize>> {
    /// Shapes of every leaf for `arch`; `conditioned = false` omits the condition net.
    pub fn shapes(arch: &ArchConfig, conditioned: bool) -> Self {
        let (c, ci, n) = (arch.channels, arch.image_channels, arch.condition_dim);
        let conv = |cin: usize, cout: usize| Conv {
            weight: vec![cout, cin, 3, 3],
            bias: vec![cout],
        };
        Weights {
            base: BaseNet {
                conv_in: conv(ci, c),
                conv_down: conv(c, c),
                blocks: (0..arch.blocks)
                    .map(|_| ResBlock {
                        conv1: conv(c, c),
                        conv2: conv(c, c),
                    })
                    .collect(),
                conv_up: conv(c, 4 * c),
                conv_post: conv(c, c),
                conv_out: conv(c, ci),
            },
            condition: conditioned.then(|| ConditionNet {
                local: (0..arch.groups).map(|_| vec![c, n]).collect(),
                global: vec![ci, n],
            }),
        }
    }
}
