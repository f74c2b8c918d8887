#include "dualrr/models.hpp"

#include <cmath>
#include <unordered_set>

namespace dualrr {

namespace {

struct Linear {
  Tensor w, b;
};

struct Ln {
  Tensor g, b;  // g is the offset from unit gain
};

struct Attn {
  Linear q, k, v, o;
};

struct Ffn {
  Linear in, out;
};

struct EncLayer {
  Ln ln1;
  Attn self_attn;
  Ln ln2;
  Ffn ffn;
};

struct DecLayer {
  Ln ln1;
  Attn self_attn;
  Ln ln2;
  Attn cross_attn;
  Ln ln3;
  Ffn ffn;
};

Tensor apply(const Linear& l, const Tensor& x) {
  return add_rowvec(matmul(x, l.w), l.b);
}

Tensor apply(const Ln& l, const Tensor& x) { return layer_norm_rows(x, l.g, l.b); }

Tensor apply(const Ffn& f, const Tensor& x) {
  return apply(f.out, gelu(apply(f.in, x)));
}

// Multi-head scaled dot-product attention. Queries come from `q_in`, keys and
// values from `kv_in`. With `causal`, query row i attends to kv rows <= i
// (only meaningful when both sides index the same sequence).
Tensor attention(const Attn& a, const Tensor& q_in, const Tensor& kv_in,
                 std::size_t n_heads, bool causal) {
  const std::size_t d = a.q.w.cols();
  const std::size_t dh = d / n_heads;
  const Tensor q = apply(a.q, q_in);
  const Tensor k = apply(a.k, kv_in);
  const Tensor v = apply(a.v, kv_in);
  const std::size_t nq = q.rows(), nk = k.rows();
  std::vector<std::uint8_t> mask;
  if (causal) {
    mask.assign(nq * nk, 0);
    for (std::size_t i = 0; i < nq; ++i)
      for (std::size_t j = i + 1; j < nk; ++j) mask[i * nk + j] = 1;
  }
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t h = 0; h < n_heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
    if (causal) scores = masked_fill(scores, mask, kMaskSentinel);
    heads.push_back(matmul(softmax_rows(scores), vh));
  }
  return apply(a.o, concat_cols(heads));
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_ffn == 0 || l_out == 0)
    throw UserError("model config: dimensions must be positive");
  if (d_model % n_heads != 0)
    throw UserError("model config: d_model must be divisible by n_heads");
  if (enc_layers == 0 || teacher_layers == 0)
    throw UserError("model config: need at least one layer per stack");
  if (d_item == 0 || d_user == 0 || d_query == 0 || d_hist == 0)
    throw UserError("model config: feature dims must be positive");
}

struct RankerModel::Impl {
  ModelConfig cfg;

  Linear ctx_proj, item_proj;
  std::vector<EncLayer> enc;
  Ln enc_final;

  Tensor start_token;  // [1, d_model]
  std::vector<DecLayer> teacher;
  Ln teacher_final;

  Tensor pos_queries;  // [l_out, d_model]
  DecLayer student;
  Ln student_final;

  mutable std::uint64_t teacher_forwards = 0;
  mutable std::uint64_t student_forwards = 0;

  // Registry assembled at construction so ordering is frozen exactly once.
  std::vector<ParamRef> registry;

  void reg(const std::string& name, const Tensor& t, bool embedding = false) {
    Tensor handle = t;
    handle.set_requires_grad(true);
    registry.push_back({name, handle, embedding});
  }

  Linear make_linear(const std::string& name, std::size_t in, std::size_t out,
                     Rng& rng) {
    Linear l{Tensor::param(in, out, rng, 0.05), Tensor::param(1, out, rng, 0.05)};
    reg(name + ".w", l.w);
    reg(name + ".b", l.b);
    return l;
  }

  Ln make_ln(const std::string& name, std::size_t d, Rng& rng) {
    Ln l{Tensor::param(1, d, rng, 0.05), Tensor::param(1, d, rng, 0.05)};
    reg(name + ".g", l.g);
    reg(name + ".b", l.b);
    return l;
  }

  Attn make_attn(const std::string& name, std::size_t d, Rng& rng) {
    return Attn{make_linear(name + ".wq", d, d, rng),
                make_linear(name + ".wk", d, d, rng),
                make_linear(name + ".wv", d, d, rng),
                make_linear(name + ".wo", d, d, rng)};
  }

  Ffn make_ffn(const std::string& name, std::size_t d, std::size_t dff, Rng& rng) {
    return Ffn{make_linear(name + ".in", d, dff, rng),
               make_linear(name + ".out", dff, d, rng)};
  }

  EncLayer make_enc_layer(const std::string& name, Rng& rng) {
    EncLayer l;
    l.ln1 = make_ln(name + ".ln1", cfg.d_model, rng);
    l.self_attn = make_attn(name + ".attn", cfg.d_model, rng);
    l.ln2 = make_ln(name + ".ln2", cfg.d_model, rng);
    l.ffn = make_ffn(name + ".ffn", cfg.d_model, cfg.d_ffn, rng);
    return l;
  }

  DecLayer make_dec_layer(const std::string& name, Rng& rng) {
    DecLayer l;
    l.ln1 = make_ln(name + ".ln1", cfg.d_model, rng);
    l.self_attn = make_attn(name + ".self", cfg.d_model, rng);
    l.ln2 = make_ln(name + ".ln2", cfg.d_model, rng);
    l.cross_attn = make_attn(name + ".cross", cfg.d_model, rng);
    l.ln3 = make_ln(name + ".ln3", cfg.d_model, rng);
    l.ffn = make_ffn(name + ".ffn", cfg.d_model, cfg.d_ffn, rng);
    return l;
  }

  // Shared decoder-layer application (teacher layers and the student layer
  // have the same shape; they differ in depth and in what feeds the queries).
  Tensor run_dec_layer(const DecLayer& l, Tensor x, const Tensor& memory) const {
    Tensor h = apply(l.ln1, x);
    x = add(x, attention(l.self_attn, h, h, cfg.n_heads, /*causal=*/true));
    x = add(x, attention(l.cross_attn, apply(l.ln2, x), memory, cfg.n_heads,
                         /*causal=*/false));
    x = add(x, apply(l.ffn, apply(l.ln3, x)));
    return x;
  }

  // Pointer logits: decoder states against encoded items, scaled.
  Tensor pointer_logits(const Tensor& states, const EncoderOutput& enc) const {
    return scale(matmul_nt(states, enc.items),
                 1.0 / std::sqrt(static_cast<double>(cfg.d_model)));
  }

  Tensor teacher_states(const EncoderOutput& enc, const Slate& prefix) const {
    std::vector<Tensor> rows;
    rows.push_back(start_token);
    if (!prefix.empty()) {
      std::vector<std::size_t> idx;
      idx.reserve(prefix.size());
      for (std::size_t p : prefix) idx.push_back(p + 1);  // skip context row
      rows.push_back(gather_rows(enc.all, idx));
    }
    Tensor x = rows.size() == 1 ? rows[0] : concat_rows(rows);
    for (const DecLayer& l : teacher) x = run_dec_layer(l, x, enc.all);
    return apply(teacher_final, x);
  }
};

RankerModel::RankerModel(const ModelConfig& cfg, std::uint64_t seed)
    : impl_(std::make_shared<Impl>()) {
  cfg.validate();
  impl_->cfg = cfg;
  Rng rng(seed);
  Impl& m = *impl_;
  m.ctx_proj = m.make_linear("enc.ctx_proj", cfg.d_user + cfg.d_query + cfg.d_hist,
                             cfg.d_model, rng);
  m.item_proj = m.make_linear("enc.item_proj", cfg.d_item, cfg.d_model, rng);
  for (std::size_t i = 0; i < cfg.enc_layers; ++i)
    m.enc.push_back(m.make_enc_layer("enc.l" + std::to_string(i), rng));
  m.enc_final = m.make_ln("enc.final", cfg.d_model, rng);

  m.start_token = Tensor::param(1, cfg.d_model, rng, 0.05);
  m.reg("teacher.start", m.start_token, /*embedding=*/true);
  for (std::size_t i = 0; i < cfg.teacher_layers; ++i)
    m.teacher.push_back(m.make_dec_layer("teacher.l" + std::to_string(i), rng));
  m.teacher_final = m.make_ln("teacher.final", cfg.d_model, rng);

  m.pos_queries = Tensor::param(cfg.l_out, cfg.d_model, rng, 0.05);
  m.reg("student.pos", m.pos_queries, /*embedding=*/true);
  m.student = m.make_dec_layer("student.l0", rng);
  m.student_final = m.make_ln("student.final", cfg.d_model, rng);
}

const ModelConfig& RankerModel::config() const { return impl_->cfg; }

EncoderOutput RankerModel::encode(const Context& ctx,
                                  const CandidateList& cands) const {
  const ModelConfig& cfg = impl_->cfg;
  if (ctx.user.size() != cfg.d_user || ctx.query.size() != cfg.d_query ||
      ctx.hist.size() != cfg.d_hist)
    throw Error("encode: context feature dims do not match config");
  if (cands.empty()) throw Error("encode: empty candidate list");
  for (const Candidate& c : cands)
    if (c.feat.size() != cfg.d_item)
      throw Error("encode: candidate feature dims do not match config");

  std::vector<double> ctx_flat;
  ctx_flat.reserve(cfg.d_user + cfg.d_query + cfg.d_hist);
  ctx_flat.insert(ctx_flat.end(), ctx.user.begin(), ctx.user.end());
  ctx_flat.insert(ctx_flat.end(), ctx.query.begin(), ctx.query.end());
  ctx_flat.insert(ctx_flat.end(), ctx.hist.begin(), ctx.hist.end());
  Tensor ctx_row = apply(impl_->ctx_proj, Tensor::row(std::move(ctx_flat)));

  const std::size_t n = cands.size();
  Tensor feats = Tensor::zeros(n, cfg.d_item);
  for (std::size_t i = 0; i < n; ++i)
    std::copy(cands[i].feat.begin(), cands[i].feat.end(),
              feats.data() + i * cfg.d_item);
  Tensor item_rows = apply(impl_->item_proj, feats);

  Tensor x = concat_rows({ctx_row, item_rows});
  for (const EncLayer& l : impl_->enc) {
    Tensor h = apply(l.ln1, x);
    x = add(x, attention(l.self_attn, h, h, cfg.n_heads, /*causal=*/false));
    x = add(x, apply(l.ffn, apply(l.ln2, x)));
  }
  x = apply(impl_->enc_final, x);

  EncoderOutput out;
  out.all = x;
  out.items = slice_rows(x, 1, n);
  out.context = slice_rows(x, 0, 1);
  out.n = n;
  return out;
}

Tensor RankerModel::teacher_step(const EncoderOutput& enc,
                                 const Slate& prefix) const {
  if (prefix.size() >= impl_->cfg.l_out)
    throw Error("teacher_step: prefix already a full slate");
  std::unordered_set<std::size_t> seen;
  for (std::size_t p : prefix) {
    if (p >= enc.n) throw Error("teacher_step: prefix index out of range");
    if (!seen.insert(p).second) throw Error("teacher_step: repeated prefix index");
  }
  Tensor states = impl_->teacher_states(enc, prefix);
  Tensor h_last = slice_rows(states, states.rows() - 1, 1);
  Tensor logits = impl_->pointer_logits(h_last, enc);
  if (!prefix.empty()) {
    std::vector<std::uint8_t> mask(enc.n, 0);
    for (std::size_t p : prefix) mask[p] = 1;
    logits = masked_fill(logits, mask, kMaskSentinel);
  }
  ++impl_->teacher_forwards;
  return logits;
}

Tensor RankerModel::teacher_forced_logits(const EncoderOutput& enc,
                                          const Slate& slate) const {
  if (slate.size() != impl_->cfg.l_out)
    throw Error("teacher_forced_logits: slate length != l_out");
  std::vector<Tensor> rows;
  rows.reserve(slate.size());
  Slate prefix;
  for (std::size_t t = 0; t < slate.size(); ++t) {
    rows.push_back(teacher_step(enc, prefix));
    prefix.push_back(slate[t]);
  }
  return concat_rows(rows);
}

Slate RankerModel::teacher_decode_greedy(const EncoderOutput& enc) const {
  const std::size_t l = impl_->cfg.l_out;
  if (enc.n < l) throw Error("teacher_decode_greedy: fewer candidates than slots");
  Slate out;
  out.reserve(l);
  for (std::size_t t = 0; t < l; ++t) {
    Tensor logits = teacher_step(enc, out);
    std::size_t best = 0;
    double best_v = logits.at(0, 0);
    for (std::size_t i = 1; i < enc.n; ++i)
      if (logits.at(0, i) > best_v) {
        best_v = logits.at(0, i);
        best = i;
      }
    out.push_back(best);
  }
  return out;
}

Tensor RankerModel::student_forward(const EncoderOutput& enc) const {
  Tensor x = impl_->run_dec_layer(impl_->student, impl_->pos_queries, enc.all);
  x = apply(impl_->student_final, x);
  Tensor cube = impl_->pointer_logits(x, enc);
  ++impl_->student_forwards;
  return cube;
}

std::vector<ParamRef> RankerModel::params() const { return impl_->registry; }

std::uint64_t RankerModel::teacher_decoder_forwards() const {
  return impl_->teacher_forwards;
}

std::uint64_t RankerModel::student_decoder_forwards() const {
  return impl_->student_forwards;
}

}  // namespace dualrr
