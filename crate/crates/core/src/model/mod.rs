//! The network: a point-wise scene encoder, a causal transformer planner
//! that emits `<SEG>` tokens, a query-conditioned mask decoder with
//! additive semantic fusion at each scale, and the heads used for
//! reconstruction pre-training.

mod checkpoint;
mod layers;
mod vocab;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_model, save_model, ModelMeta, CONFIG_FILE, PARAMS_FILE, VOCAB_FILE};
pub use vocab::{tokenize, Vocabulary, BOS, EOS, PAD, SEG, UNK};

use crate::autograd::{attention, causal_mask, pooled_attention, Graph, Init, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::lift::FeatureBank;
use crate::scene::GaussianScene;
use layers::{Linear, Mlp};

/// Width of the per-primitive geometric input: position, quaternion, log-scale.
pub const GEO_INPUT_DIM: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Widths of the shared per-point MLP after the 10-wide input.
    pub point_widths: Vec<usize>,
    pub d_model: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            point_widths: vec![64, 128],
            d_model: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    /// Maximum sequence length (instruction, `<BOS>` and output).
    pub context: usize,
    pub mlp_ratio: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            layers: 2,
            heads: 4,
            d_model: 128,
            context: 96,
            mlp_ratio: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub scales: usize,
    pub mlp_hidden: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            scales: 2,
            mlp_hidden: 256,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub planner: PlannerConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.planner;
        if p.heads == 0 || p.d_model == 0 || p.d_model % p.heads != 0 {
            return Err(Error::Config(format!(
                "planner d_model {} must be a positive multiple of heads {}",
                p.d_model, p.heads
            )));
        }
        if p.context < 2 || p.mlp_ratio == 0 {
            return Err(Error::Config("planner context must be ≥ 2 and mlp_ratio ≥ 1".into()));
        }
        if self.encoder.d_model == 0 || self.encoder.point_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        if self.decoder.scales == 0 || self.decoder.mlp_hidden == 0 {
            return Err(Error::Config("decoder needs at least one scale and a positive MLP width".into()));
        }
        Ok(())
    }
}

/// Per-primitive encoder input `[N, 10]`: position relative to the bounding
/// sphere, the quaternion with `w ≥ 0`, and `ln(scale / radius)`.
pub fn geometry_input(scene: &GaussianScene) -> Result<Tensor> {
    let (center, radius) = scene
        .bounding_sphere()
        .ok_or_else(|| Error::Invalid("cannot encode an empty scene".into()))?;
    let r = if radius > 0.0 { radius } else { 1.0 };
    let mut data = Vec::with_capacity(scene.len() * GEO_INPUT_DIM);
    for p in &scene.primitives {
        data.extend((0..3).map(|k| (p.position[k] - center[k]) / r));
        let q = p.rotation.to_array();
        let sign = if q[0] < 0.0 { -1.0 } else { 1.0 };
        data.extend(q.iter().map(|v| sign * v));
        data.extend(p.scale.iter().map(|s| (s / r).ln()));
    }
    Tensor::matrix(scene.len(), GEO_INPUT_DIM, data)
}

/// Geometry tensor plus an optional semantic bank, both row-aligned with the
/// scene's primitives.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneTensors {
    pub geo: Tensor,
    pub sem: Option<Tensor>,
}

impl SceneTensors {
    pub fn new(scene: &GaussianScene, sem: Option<&FeatureBank>) -> Result<Self> {
        let geo = geometry_input(scene)?;
        let sem = match sem {
            Some(b) if b.n() != scene.len() => {
                return Err(Error::Shape(format!(
                    "semantic bank has {} rows for {} primitives",
                    b.n(),
                    scene.len()
                )))
            }
            Some(b) => Some(b.to_tensor()),
            None => None,
        };
        Ok(SceneTensors { geo, sem })
    }

    pub fn n(&self) -> usize {
        self.geo.shape()[0]
    }
}

struct Encoder {
    point: Mlp,
    head: Mlp,
}

struct Block {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    mlp: Mlp,
}

struct Planner {
    tok: ParamId,
    pos: ParamId,
    blocks: Vec<Block>,
    out: Linear,
}

struct Scale {
    point: Linear,
    sem: Linear,
    q: Linear,
    o: Linear,
    mlp: Mlp,
}

struct Decoder {
    query: Linear,
    scales: Vec<Scale>,
    mask: Linear,
}

/// Output of the planner over one token sequence.
pub struct PlanVars<'g> {
    /// `[L, V]`; row `p` predicts token `p + 1`.
    pub logits: Var<'g>,
    /// `[L, d]` final-layer hidden states after the last LayerNorm.
    pub hidden: Var<'g>,
}

/// Query-independent decoder state for one scene: the fused keys per scale.
pub struct DecoderMemory<'g> {
    pub keys: Vec<Var<'g>>,
}

/// Plain-value planner output.
#[derive(Clone, Debug, PartialEq)]
pub struct SegOutput {
    pub token_logits: Tensor,
    pub seg_states: Vec<Vec<f64>>,
    /// Positions (in the full input sequence) of the `<SEG>` tokens.
    pub seg_positions: Vec<usize>,
    /// Generated tokens after `<BOS>`, including the final `<EOS>` if emitted.
    pub output: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Mode {
    /// Gold output ids (steps, `<SEG>`s and `<EOS>`).
    Teacher(Vec<usize>),
    Greedy { max_steps: usize, max_tokens: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceOutput {
    pub plan: SegOutput,
    /// One logit vector per `<SEG>`, in emission order.
    pub mask_logits: Vec<Vec<f64>>,
}

/// All parameters and sub-networks, including the pre-training heads.
pub struct SeqSplatNet {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub sem_dim: usize,
    pub params: ParamStore,
    encoder: Encoder,
    mask_encoder: Mlp,
    reconstruct: Mlp,
    planner: Planner,
    decoder: Decoder,
}

/// Full planner input: instruction, `<BOS>`, then the output tokens.
pub fn planner_input(instruction: &[usize], output: &[usize]) -> Vec<usize> {
    let mut v = instruction.to_vec();
    v.push(BOS);
    v.extend_from_slice(output);
    v
}

/// Next-token targets for `planner_input(instruction, output)` with the last
/// token dropped: `PAD` (ignored) over the instruction, then the output.
pub fn planner_targets(instruction_len: usize, output: &[usize]) -> Vec<usize> {
    let mut t = vec![PAD; instruction_len];
    t.extend_from_slice(output);
    t
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl SeqSplatNet {
    /// Builds a freshly initialised network; every initialiser draws from
    /// one stream seeded by `seed`.
    pub fn new(config: ModelConfig, vocab_size: usize, sem_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab_size <= SEG {
            return Err(Error::Config(format!("vocabulary of {vocab_size} lacks the reserved tokens")));
        }
        let mut rng: ChaCha8Rng = crate::util::rng_stream(seed, "init");
        let mut ps = ParamStore::new();
        let d = config.encoder.d_model;
        let e = &config.encoder;

        let mut widths = vec![GEO_INPUT_DIM];
        widths.extend(&e.point_widths);
        let last = *widths.last().unwrap();
        let encoder = Encoder {
            point: Mlp::new(&mut ps, "enc.point", &widths, &mut rng),
            head: Mlp::new(&mut ps, "enc.head", &[2 * last, d, d], &mut rng),
        };
        let mask_encoder = Mlp::new(&mut ps, "mask_enc", &[d, d, d], &mut rng);
        let reconstruct = Mlp::new(&mut ps, "recon", &[3 * d, d, 1], &mut rng);

        let p = &config.planner;
        let pd = p.d_model;
        let blocks = (0..p.layers)
            .map(|l| {
                let n = format!("plan.block{l}");
                Block {
                    q: Linear::new(&mut ps, &format!("{n}.q"), pd, pd, &mut rng),
                    k: Linear::new(&mut ps, &format!("{n}.k"), pd, pd, &mut rng),
                    v: Linear::new(&mut ps, &format!("{n}.v"), pd, pd, &mut rng),
                    o: Linear::new(&mut ps, &format!("{n}.o"), pd, pd, &mut rng),
                    mlp: Mlp::new(&mut ps, &format!("{n}.mlp"), &[pd, p.mlp_ratio * pd, pd], &mut rng),
                }
            })
            .collect();
        let planner = Planner {
            tok: ps.add("plan.tok", &[vocab_size, pd], Init::Normal(0.1), &mut rng),
            pos: ps.add("plan.pos", &[p.context, pd], Init::Normal(0.1), &mut rng),
            blocks,
            out: Linear::new(&mut ps, "plan.out", pd, vocab_size, &mut rng),
        };

        let scales = (0..config.decoder.scales)
            .map(|s| {
                let n = format!("dec.scale{s}");
                Scale {
                    point: Linear::new(&mut ps, &format!("{n}.point"), d, d, &mut rng),
                    sem: Linear::zero_no_bias(&mut ps, &format!("{n}.sem"), sem_dim.max(1), d, &mut rng),
                    q: Linear::new(&mut ps, &format!("{n}.q"), d, d, &mut rng),
                    o: Linear::new(&mut ps, &format!("{n}.o"), d, d, &mut rng),
                    mlp: Mlp::new(&mut ps, &format!("{n}.mlp"), &[d, config.decoder.mlp_hidden, d], &mut rng),
                }
            })
            .collect();
        let decoder = Decoder {
            query: Linear::new(&mut ps, "dec.query", pd, d, &mut rng),
            scales,
            mask: Linear::no_bias(&mut ps, "dec.mask", d, d, &mut rng),
        };
        Ok(SeqSplatNet {
            config,
            vocab_size,
            sem_dim,
            params: ps,
            encoder,
            mask_encoder,
            reconstruct,
            planner,
            decoder,
        })
    }

    pub fn d_model(&self) -> usize {
        self.config.encoder.d_model
    }

    // ---- graph-level building blocks ----

    /// `F_geo: [N, d]` from the `[N, 10]` geometric input.
    pub fn encode_scene_var<'g>(&self, g: &'g Graph, geo: &Tensor) -> Result<Var<'g>> {
        let ps = &self.params;
        let n = geo.shape()[0];
        let x = g.constant(geo.clone());
        let h = self.encoder.point.forward(g, ps, x)?.gelu();
        let global = h.max_axis(0)?.expand_rows(n)?;
        let cat = Var::concat(&[h, global], 1)?;
        let f = self.encoder.head.forward(g, ps, cat)?;
        // Centre over the scene's points so attention scores are not
        // dominated by a component shared by every row.
        let uniform = g.constant(Tensor::vector(vec![1.0 / n as f64; n]));
        let mean = Var::pool(uniform, f)?.expand_rows(n)?;
        Ok(f.sub(mean)?.layer_norm())
    }

    /// `e_mask: [1, d]` from the score-weighted mean of `F_geo` rows.
    pub fn encode_mask_var<'g>(&self, g: &'g Graph, f_geo: Var<'g>, scores: &[f64]) -> Result<Var<'g>> {
        let n = f_geo.shape()[0];
        if scores.len() != n {
            return Err(Error::Shape(format!("mask of length {} for {n} primitives", scores.len())));
        }
        let mut tmp = scores.to_vec();
        let total = crate::autograd::order_invariant_sum(&mut tmp);
        if !(total > 0.0) {
            return Err(Error::Invalid("cannot embed an all-zero mask".into()));
        }
        let w = g.constant(Tensor::vector(scores.iter().map(|s| s / total).collect()));
        let pooled = Var::pool(w, f_geo)?;
        pooled.add(self.mask_encoder.forward(g, &self.params, pooled)?)
    }

    /// Reconstruction logits `[N]`: attention of `e_mask` over `F_geo`, then a
    /// per-point MLP over `[F_geo_i ; F_fused ; F_geo_i ⊙ F_fused]`.
    pub fn reconstruct_var<'g>(&self, g: &'g Graph, e_mask: Var<'g>, f_geo: Var<'g>) -> Result<Var<'g>> {
        let (n, d) = (f_geo.shape()[0], f_geo.shape()[1]);
        let fused = pooled_attention(e_mask, f_geo, f_geo)?;
        let prod = f_geo.mul(fused.reshape(&[d])?)?;
        let x = Var::concat(&[f_geo, fused.expand_rows(n)?, prod], 1)?;
        self.reconstruct.forward(g, &self.params, x)?.reshape(&[n])
    }

    /// Causal transformer over `ids`.
    pub fn plan_var<'g>(&self, g: &'g Graph, ids: &[usize]) -> Result<PlanVars<'g>> {
        let p = &self.config.planner;
        let l = ids.len();
        if l == 0 || l > p.context {
            return Err(Error::Invalid(format!(
                "planner sequence of {l} tokens exceeds the context cap of {}",
                p.context
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::Invalid(format!("token id {bad} outside vocabulary of {}", self.vocab_size)));
        }
        let ps = &self.params;
        let tok = g.param(ps, self.planner.tok).embedding(ids)?;
        let positions: Vec<usize> = (0..l).collect();
        let pos = g.param(ps, self.planner.pos).embedding(&positions)?;
        let mut x = tok.add(pos)?;
        let mask = g.constant(causal_mask(l));
        let dh = p.d_model / p.heads;
        for b in &self.planner.blocks {
            let h = x.layer_norm();
            let (q, k, v) = (b.q.forward(g, ps, h)?, b.k.forward(g, ps, h)?, b.v.forward(g, ps, h)?);
            let heads = (0..p.heads)
                .map(|i| {
                    let s = |t: Var<'g>| t.slice(1, i * dh, (i + 1) * dh);
                    attention(s(q)?, s(k)?, s(v)?, Some(mask))
                })
                .collect::<Result<Vec<_>>>()?;
            x = x.add(b.o.forward(g, ps, Var::concat(&heads, 1)?)?)?;
            x = x.add(b.mlp.forward(g, ps, x.layer_norm())?)?;
        }
        let hidden = x.layer_norm();
        let logits = self.planner.out.forward(g, ps, hidden)?;
        Ok(PlanVars { logits, hidden })
    }

    /// Fused keys `K_ℓ = P_ℓ + S_ℓ(F_sem)` per scale, where
    /// `P_ℓ = GELU(Linear(P_{ℓ-1}))` and `P_0 = F_geo`. With no semantic bank
    /// the additive term is skipped.
    pub fn decoder_memory<'g>(
        &self,
        g: &'g Graph,
        f_geo: Var<'g>,
        f_sem: Option<&Tensor>,
    ) -> Result<DecoderMemory<'g>> {
        let ps = &self.params;
        let sem = match f_sem {
            Some(t) => {
                if t.shape()[0] != f_geo.shape()[0] || t.shape()[1] != self.sem_dim {
                    return Err(Error::Shape(format!(
                        "semantic bank {:?} vs {} primitives × {} channels",
                        t.shape(),
                        f_geo.shape()[0],
                        self.sem_dim
                    )));
                }
                Some(g.constant(t.clone()))
            }
            None => None,
        };
        let mut point = f_geo;
        let mut keys = Vec::with_capacity(self.decoder.scales.len());
        for s in &self.decoder.scales {
            point = s.point.forward(g, ps, point)?.gelu();
            let k = match sem {
                Some(f) => point.add(s.sem.forward(g, ps, f)?)?,
                None => point,
            };
            keys.push(k);
        }
        Ok(DecoderMemory { keys })
    }

    /// Mask logits `[N]` for one `h_seg: [1, d_planner]`.
    pub fn decode_var<'g>(&self, g: &'g Graph, h_seg: Var<'g>, memory: &DecoderMemory<'g>) -> Result<Var<'g>> {
        let ps = &self.params;
        let mut q = self.decoder.query.forward(g, ps, h_seg)?;
        for (s, k) in self.decoder.scales.iter().zip(&memory.keys) {
            let qq = s.q.forward(g, ps, q.layer_norm())?;
            q = q.add(s.o.forward(g, ps, pooled_attention(qq, *k, *k)?)?)?;
            q = q.add(s.mlp.forward(g, ps, q.layer_norm())?)?;
        }
        let last = *memory.keys.last().expect("at least one scale");
        let n = last.shape()[0];
        let m = self.decoder.mask.forward(g, ps, q)?;
        last.matmul(m.transpose()?)?.reshape(&[n])
    }

    // ---- value-level operations ----

    pub fn encode_scene(&self, scene: &GaussianScene) -> Result<FeatureBank> {
        let geo = geometry_input(scene)?;
        let g = Graph::new();
        let f = self.encode_scene_var(&g, &geo)?.value();
        FeatureBank::new(scene.len(), self.d_model(), f.data().to_vec(), vec![1.0; scene.len()])
    }

    pub fn encode_mask(&self, scores: &[f64], f_geo: &FeatureBank) -> Result<Vec<f64>> {
        let g = Graph::new();
        let f = g.constant(f_geo.to_tensor());
        Ok(self.encode_mask_var(&g, f, scores)?.value().data().to_vec())
    }

    pub fn reconstruct_mask(&self, e_mask: &[f64], f_geo: &FeatureBank) -> Result<Vec<f64>> {
        let g = Graph::new();
        let e = g.constant(Tensor::matrix(1, e_mask.len(), e_mask.to_vec())?);
        let f = g.constant(f_geo.to_tensor());
        Ok(self.reconstruct_var(&g, e, f)?.value().data().to_vec())
    }

    pub fn decode_affordance(&self, h_seg: &[f64], f_geo: &FeatureBank, f_sem: Option<&FeatureBank>) -> Result<Vec<f64>> {
        let g = Graph::new();
        let f = g.constant(f_geo.to_tensor());
        let sem = f_sem.map(|b| b.to_tensor());
        let mem = self.decoder_memory(&g, f, sem.as_ref())?;
        let h = g.constant(Tensor::matrix(1, h_seg.len(), h_seg.to_vec())?);
        Ok(self.decode_var(&g, h, &mem)?.value().data().to_vec())
    }

    /// Planner over `[instruction ; <BOS> ; gold_output]` with `h_seg` read at
    /// every `<SEG>` of the gold output.
    pub fn plan_teacher_forced(&self, instruction: &[usize], gold_output: &[usize]) -> Result<SegOutput> {
        let full = planner_input(instruction, gold_output);
        let ids = &full[..full.len() - 1];
        let g = Graph::new();
        let out = self.plan_var(&g, ids)?;
        let hidden = out.hidden.value();
        let seg_positions: Vec<usize> = (0..ids.len()).filter(|&p| ids[p] == SEG && p > instruction.len()).collect();
        Ok(SegOutput {
            token_logits: (*out.logits.value()).clone(),
            seg_states: seg_positions.iter().map(|&p| hidden.row(p).to_vec()).collect(),
            seg_positions,
            output: gold_output.to_vec(),
        })
    }

    /// Greedy decoding from `<BOS>` until `<EOS>`, `max_steps` `<SEG>`s,
    /// `max_tokens` generated tokens, or the context cap. Ties go to the
    /// lowest id. The returned logits are those of the final forward pass.
    pub fn plan_greedy(&self, instruction: &[usize], max_steps: usize, max_tokens: usize) -> Result<SegOutput> {
        if max_steps == 0 || max_tokens == 0 {
            return Err(Error::Config("max_steps and max_tokens must be positive".into()));
        }
        let cap = self.config.planner.context;
        let mut ids = planner_input(instruction, &[]);
        let prefix = ids.len();
        let mut output = Vec::new();
        let mut seg_states = Vec::new();
        let mut seg_positions = Vec::new();
        loop {
            let g = Graph::new();
            let out = self.plan_var(&g, &ids)?;
            let last = ids.len() - 1;
            if last >= prefix && ids[last] == SEG {
                seg_states.push(out.hidden.value().row(last).to_vec());
                seg_positions.push(last);
            }
            let done = seg_states.len() >= max_steps || ids.len() >= cap || output.len() >= max_tokens;
            let logits = out.logits.value();
            if done {
                return Ok(SegOutput {
                    token_logits: (*logits).clone(),
                    seg_states,
                    seg_positions,
                    output,
                });
            }
            let next = argmax(logits.row(last));
            output.push(next);
            if next == EOS {
                return Ok(SegOutput {
                    token_logits: (*logits).clone(),
                    seg_states,
                    seg_positions,
                    output,
                });
            }
            ids.push(next);
        }
    }

    /// Planner then one decoder call per `h_seg`, in emission order.
    pub fn forward_sequence(&self, instruction: &[usize], scene: &SceneTensors, mode: &Mode) -> Result<SequenceOutput> {
        let plan = match mode {
            Mode::Teacher(gold) => self.plan_teacher_forced(instruction, gold)?,
            Mode::Greedy { max_steps, max_tokens } => self.plan_greedy(instruction, *max_steps, *max_tokens)?,
        };
        let g = Graph::new();
        let f_geo = self.encode_scene_var(&g, &scene.geo)?;
        let mem = self.decoder_memory(&g, f_geo, scene.sem.as_ref())?;
        let mask_logits = plan
            .seg_states
            .iter()
            .map(|h| {
                let hv = g.constant(Tensor::matrix(1, h.len(), h.clone())?);
                Ok(self.decode_var(&g, hv, &mem)?.value().data().to_vec())
            })
            .collect::<Result<_>>()?;
        Ok(SequenceOutput { plan, mask_logits })
    }

    /// Copies every `enc.*` parameter present in `named`; returns the count.
    pub fn load_encoder(&mut self, named: &[(String, Tensor)]) -> Result<usize> {
        let enc: Vec<(String, Tensor)> = named
            .iter()
            .filter(|(n, _)| n.starts_with("enc."))
            .cloned()
            .collect();
        if enc.is_empty() {
            return Err(Error::Invalid("checkpoint holds no encoder parameters".into()));
        }
        self.params.load_named(&enc, false)
    }
}
