#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "milkt/autodiff.hpp"
#include "milkt/matrix.hpp"

namespace milkt {

/// Raised when a configuration or a cross-object contract is violated
/// (incompatible architectures, missing inputs, invalid settings).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Gated-attention MIL classifier shape. d_embed is d_t for a teacher and d_s
/// for a student.
struct MILArch {
  std::size_t d_in = 1024;
  std::size_t d_embed = 512;
  std::size_t d_attn = 256;
  std::size_t n_classes = 2;
  double dropout_rate = 0.25;

  void validate() const;
  friend bool operator==(const MILArch&, const MILArch&) = default;
};

/// "small" = 512/256, "big" = 768/384.
MILArch arch_preset(const std::string& name, std::size_t d_in, std::size_t n_classes);

struct MILParams {
  Matrix W_embed;  // d_in x d_embed
  Matrix b_embed;  // 1 x d_embed
  Matrix attn_V;   // d_embed x d_attn
  Matrix attn_U;   // d_embed x d_attn
  Matrix attn_w;   // d_attn x 1
  Matrix W_cls;    // d_embed x c
  Matrix b_cls;    // 1 x c

  friend bool operator==(const MILParams&, const MILParams&) = default;
};

struct NamedTensor {
  std::string name;
  Matrix* value;
};

struct ConstNamedTensor {
  std::string name;
  const Matrix* value;
};

/// Stable order: W_embed, b_embed, attn_V, attn_U, attn_w, W_cls, b_cls.
std::vector<NamedTensor> param_list(MILParams& p);
std::vector<ConstNamedTensor> param_list(const MILParams& p);

/// Glorot-uniform weights, zero biases. Each tensor draws from its own
/// seed-derived stream.
MILParams init_params(const MILArch& arch, std::uint64_t seed);

/// Glorot-uniform fill of `m` from `rng`.
void glorot_fill(Matrix& m, std::mt19937_64& rng);

/// Throws ContractError if any tensor shape disagrees with `arch`.
void check_shapes(const MILParams& p, const MILArch& arch);
MILArch infer_arch(const MILParams& p, double dropout_rate);

/// MILParams bound onto a tape.
struct MILVars {
  ad::Var W_embed, b_embed, attn_V, attn_U, attn_w, W_cls, b_cls;
};

/// Trainable binds as gradient-carrying parameters; otherwise as constants.
MILVars bind(ad::Tape& tape, const MILParams& p, bool trainable);

struct MILOutputs {
  ad::Var attention;    // 1 x n
  ad::Var bag_feature;  // 1 x d_embed
  ad::Var probs;        // 1 x c
  ad::Var logits_raw;   // 1 x c
};

/// E = dropout(relu(X W + b)); s = (dropout(tanh(E V)) * dropout(sigmoid(E U))) w;
/// a = softmax(s^T); h = a E; probs = softmax(h W_cls + b_cls).
/// `rng` drives dropout and is untouched when `train` is false.
MILOutputs forward(const MILVars& params, const Matrix& bag, double dropout_rate, bool train,
                   ad::Tape& tape, std::mt19937_64& rng);

/// Eval-mode forward returning plain values.
struct MILPrediction {
  Matrix attention;
  Matrix bag_feature;
  Matrix probs;
};
MILPrediction predict(const MILParams& params, const Matrix& bag);

}  // namespace milkt
