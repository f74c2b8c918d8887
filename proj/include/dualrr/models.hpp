#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dualrr/tensor.hpp"

namespace dualrr {

// Request-side context: user profile, query, and a summary of recent
// interactions, each a dense feature vector.
struct Context {
  std::vector<double> user;
  std::vector<double> query;
  std::vector<double> hist;
  bool operator==(const Context&) const = default;
};

struct Candidate {
  std::int64_t id = 0;
  std::vector<double> feat;
  bool operator==(const Candidate&) const = default;
};

using CandidateList = std::vector<Candidate>;

// Ordered slate: distinct indices into the candidate list, length l_out.
using Slate = std::vector<std::size_t>;

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 2;
  std::size_t d_ffn = 128;
  std::size_t enc_layers = 2;
  std::size_t teacher_layers = 2;
  std::size_t l_out = 6;
  std::size_t d_item = 8;
  std::size_t d_user = 8;
  std::size_t d_query = 4;
  std::size_t d_hist = 8;

  void validate() const;  // throws UserError on inconsistent settings
};

// Encoder output shared by both decoding branches. `all` is [n+1, d_model]
// with the context token in row 0; `items` and `context` are views carved
// from it so gradients flow back through either branch into the same encoder.
struct EncoderOutput {
  Tensor all;
  Tensor items;
  Tensor context;
  std::size_t n = 0;  // number of candidates
};

// One trainable leaf. `embedding` marks lookup-table-like parameters (start
// token, position queries), which the training loop pairs with the sparse
// optimizer; everything else is dense.
struct ParamRef {
  std::string name;
  Tensor tensor;
  bool embedding = false;
};

// Shared-encoder ranking model with two heads over the same encoding:
//  - an autoregressive pointer-decoder (the ranking teacher) that emits one
//    candidate distribution per sequential step, and
//  - a single-layer parallel decoder (the serving student) that emits the
//    distributions for all slate positions in one forward pass.
// Forward passes are pure given fixed parameters; instrumented decoder
// counters record the serial-vs-parallel cost asymmetry.
class RankerModel {
 public:
  RankerModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const;

  // Encodes context + candidate set. No positional encodings on candidates:
  // permuting the candidate list permutes item states identically.
  EncoderOutput encode(const Context& ctx, const CandidateList& cands) const;

  // One pointer-decoder step given the already-placed prefix. Returns a
  // [1, n] logit row with prefix members set to the mask sentinel.
  // Increments the teacher decoder counter by 1.
  Tensor teacher_step(const EncoderOutput& enc, const Slate& prefix) const;

  // Teacher-forced logits for a complete slate: row t is teacher_step on
  // slate[0..t). Returns [l_out, n]; counter +l_out.
  Tensor teacher_forced_logits(const EncoderOutput& enc, const Slate& slate) const;

  // Sequential greedy decode: l_out argmax steps with masking; counter +l_out.
  Slate teacher_decode_greedy(const EncoderOutput& enc) const;

  // All-position logits cube [l_out, n] in a single decoder forward
  // (counter +1). Rows are produced by learned position queries; no
  // duplicate masking is applied here.
  Tensor student_forward(const EncoderOutput& enc) const;

  // Stable-ordered registry of named parameters (names unique).
  std::vector<ParamRef> params() const;

  std::uint64_t teacher_decoder_forwards() const;
  std::uint64_t student_decoder_forwards() const;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

}  // namespace dualrr
