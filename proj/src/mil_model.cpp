#include "milkt/mil_model.hpp"

#include <cmath>

#include "milkt/seed.hpp"

namespace milkt {

void MILArch::validate() const {
  if (d_in == 0 || d_embed == 0 || d_attn == 0 || n_classes == 0) {
    throw ContractError("MILArch: all dimensions must be >= 1");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ContractError("MILArch: dropout_rate must be in [0,1), got " +
                        std::to_string(dropout_rate));
  }
}

MILArch arch_preset(const std::string& name, std::size_t d_in, std::size_t n_classes) {
  MILArch a;
  a.d_in = d_in;
  a.n_classes = n_classes;
  if (name == "small") {
    a.d_embed = 512;
    a.d_attn = 256;
  } else if (name == "big") {
    a.d_embed = 768;
    a.d_attn = 384;
  } else {
    throw ContractError("unknown architecture preset '" + name + "' (expected small or big)");
  }
  return a;
}

std::vector<NamedTensor> param_list(MILParams& p) {
  return {{"W_embed", &p.W_embed}, {"b_embed", &p.b_embed}, {"attn_V", &p.attn_V},
          {"attn_U", &p.attn_U},   {"attn_w", &p.attn_w},   {"W_cls", &p.W_cls},
          {"b_cls", &p.b_cls}};
}

std::vector<ConstNamedTensor> param_list(const MILParams& p) {
  return {{"W_embed", &p.W_embed}, {"b_embed", &p.b_embed}, {"attn_V", &p.attn_V},
          {"attn_U", &p.attn_U},   {"attn_w", &p.attn_w},   {"W_cls", &p.W_cls},
          {"b_cls", &p.b_cls}};
}

void glorot_fill(Matrix& m, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (auto& v : m.data()) v = u(rng);
}

MILParams init_params(const MILArch& arch, std::uint64_t seed) {
  arch.validate();
  MILParams p{Matrix(arch.d_in, arch.d_embed), Matrix(1, arch.d_embed),
              Matrix(arch.d_embed, arch.d_attn), Matrix(arch.d_embed, arch.d_attn),
              Matrix(arch.d_attn, 1),           Matrix(arch.d_embed, arch.n_classes),
              Matrix(1, arch.n_classes)};
  for (auto& t : param_list(p)) {
    if (t.name.starts_with("b_")) continue;
    std::mt19937_64 rng(derive_seed(seed, "glorot:" + t.name));
    glorot_fill(*t.value, rng);
  }
  return p;
}

void check_shapes(const MILParams& p, const MILArch& arch) {
  const MILParams ref{Matrix(arch.d_in, arch.d_embed), Matrix(1, arch.d_embed),
                      Matrix(arch.d_embed, arch.d_attn), Matrix(arch.d_embed, arch.d_attn),
                      Matrix(arch.d_attn, 1),           Matrix(arch.d_embed, arch.n_classes),
                      Matrix(1, arch.n_classes)};
  const auto got = param_list(p);
  const auto want = param_list(ref);
  for (std::size_t i = 0; i < got.size(); ++i) {
    if (!got[i].value->same_shape(*want[i].value)) {
      throw ContractError("parameter " + got[i].name + " has shape " +
                          got[i].value->shape_str() + ", architecture expects " +
                          want[i].value->shape_str());
    }
  }
}

MILArch infer_arch(const MILParams& p, double dropout_rate) {
  MILArch a{p.W_embed.rows(), p.W_embed.cols(), p.attn_V.cols(), p.W_cls.cols(), dropout_rate};
  check_shapes(p, a);
  return a;
}

MILVars bind(ad::Tape& tape, const MILParams& p, bool trainable) {
  auto b = [&](const Matrix& m) { return trainable ? tape.parameter(m) : tape.input(m); };
  return {b(p.W_embed), b(p.b_embed), b(p.attn_V), b(p.attn_U),
          b(p.attn_w),  b(p.W_cls),   b(p.b_cls)};
}

MILOutputs forward(const MILVars& params, const Matrix& bag, double dropout_rate, bool train,
                   ad::Tape& tape, std::mt19937_64& rng) {
  const std::size_t d_in = params.W_embed.rows();
  if (bag.cols() != d_in) {
    throw ShapeError("forward: bag has " + std::to_string(bag.cols()) +
                     " feature columns, model expects " + std::to_string(d_in));
  }
  const ad::Var x = tape.input(bag);
  const ad::Var ones = tape.constant(Matrix(bag.rows(), 1, 1.0));

  // Biases are added through an explicit ones column so no broadcasting is needed.
  ad::Var e = ad::add(ad::matmul(x, params.W_embed), ad::matmul(ones, params.b_embed));
  e = ad::dropout(ad::relu(e), dropout_rate, train, rng);

  const ad::Var gate_v =
      ad::dropout(ad::tanh(ad::matmul(e, params.attn_V)), dropout_rate, train, rng);
  const ad::Var gate_u =
      ad::dropout(ad::sigmoid(ad::matmul(e, params.attn_U)), dropout_rate, train, rng);
  const ad::Var scores = ad::matmul(ad::hadamard(gate_v, gate_u), params.attn_w);  // n x 1

  const ad::Var attention = ad::softmax_row(ad::transpose(scores));
  const ad::Var h = ad::matmul(attention, e);
  const ad::Var logits =
      ad::add(ad::matmul(h, params.W_cls), params.b_cls);
  return {attention, h, ad::softmax_row(logits), logits};
}

MILPrediction predict(const MILParams& params, const Matrix& bag) {
  ad::Tape tape;
  std::mt19937_64 unused(0);
  const MILVars vars = bind(tape, params, false);
  const MILOutputs out = forward(vars, bag, 0.0, false, tape, unused);
  return {out.attention.value(), out.bag_feature.value(), out.probs.value()};
}

}  // namespace milkt
