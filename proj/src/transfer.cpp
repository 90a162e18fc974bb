#include "milkt/transfer.hpp"

#include <cmath>

#include "milkt/seed.hpp"

namespace milkt {

std::string to_string(Method m) {
  switch (m) {
    case Method::none: return "none";
    case Method::finetune: return "finetune";
    case Method::logit: return "logit";
    case Method::attention: return "attention";
    case Method::feature_pts: return "feature_pts";
    case Method::mhfa: return "mhfa";
  }
  return "none";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::none, Method::finetune, Method::logit, Method::attention,
                   Method::feature_pts, Method::mhfa}) {
    if (to_string(m) == name) return m;
  }
  throw ContractError("unknown method '" + name +
                      "' (expected none, finetune, logit, attention, feature_pts, mhfa)");
}

bool uses_teacher_signal(Method m) {
  return m == Method::logit || m == Method::attention || m == Method::feature_pts ||
         m == Method::mhfa;
}

void TransferSetting::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw ContractError("alpha must be a finite non-negative number");
  }
  student_arch.validate();
  if (method != Method::none) teacher_arch.validate();
  if (method == Method::logit && teacher_arch.n_classes != student_arch.n_classes) {
    throw ContractError("logit transfer needs equal class counts: teacher has " +
                        std::to_string(teacher_arch.n_classes) + ", student has " +
                        std::to_string(student_arch.n_classes));
  }
}

void PTSConfig::validate() const {
  if (!(temperature > 0.0)) throw ContractError("PTS temperature must be > 0");
  if (!(power >= 1.0)) throw ContractError("PTS power must be >= 1");
}

std::size_t MHFADims::default_head_dim(std::size_t d_s, std::size_t heads) {
  if (heads == 0) throw ContractError("MHFA needs at least one head");
  const std::size_t d = (d_s + heads - 1) / heads;
  return d < 8 ? 8 : d;
}

MHFADims MHFADims::make(std::size_t d_t, std::size_t d_s, std::size_t heads,
                        std::size_t d_hidden) {
  return {d_t, d_s, heads, default_head_dim(d_s, heads), d_hidden};
}

MHFADims MHFAParams::dims() const {
  if (heads.empty()) throw ContractError("MHFA has no heads");
  return {heads[0].W_Q.rows(), heads[0].W_V.cols(), heads.size(), heads[0].W_Q.cols(),
          pool.W_V_gate.cols()};
}

MHFAParams init_mhfa(const MHFADims& d, std::uint64_t seed, PTSConfig pts) {
  if (d.heads == 0) throw ContractError("MHFA needs at least one head");
  pts.validate();
  MHFAParams p;
  p.pts = pts;
  for (std::size_t i = 0; i < d.heads; ++i) {
    p.heads.push_back({Matrix(d.d_t, d.d_k), Matrix(d.d_t, d.d_k), Matrix(d.d_t, d.d_s)});
  }
  p.pool = {Matrix(d.d_s, d.d_hidden), Matrix(d.d_s, d.d_hidden), Matrix(d.d_hidden, 1)};
  for (auto& t : param_list(p)) {
    std::mt19937_64 rng(derive_seed(seed, "mhfa:" + t.name));
    glorot_fill(*t.value, rng);
  }
  return p;
}

std::vector<NamedTensor> param_list(MHFAParams& p) {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < p.heads.size(); ++i) {
    const std::string h = "head" + std::to_string(i);
    out.push_back({h + ".W_Q", &p.heads[i].W_Q});
    out.push_back({h + ".W_K", &p.heads[i].W_K});
    out.push_back({h + ".W_V", &p.heads[i].W_V});
  }
  out.push_back({"pool.W_V_gate", &p.pool.W_V_gate});
  out.push_back({"pool.W_U_gate", &p.pool.W_U_gate});
  out.push_back({"pool.w_gate", &p.pool.w_gate});
  return out;
}

std::vector<ConstNamedTensor> param_list(const MHFAParams& p) {
  std::vector<ConstNamedTensor> out;
  for (auto& t : param_list(const_cast<MHFAParams&>(p))) out.push_back({t.name, t.value});
  return out;
}

MHFAVars bind(ad::Tape& tape, const MHFAParams& p, bool trainable) {
  auto b = [&](const Matrix& m) { return trainable ? tape.parameter(m) : tape.input(m); };
  MHFAVars v;
  for (const auto& h : p.heads) v.heads.push_back({b(h.W_Q), b(h.W_K), b(h.W_V)});
  v.pool = {b(p.pool.W_V_gate), b(p.pool.W_U_gate), b(p.pool.w_gate)};
  v.pts = p.pts;
  return v;
}

ad::Var pts_normalise(ad::Var h, const PTSConfig& cfg) {
  cfg.validate();
  const ad::Var magnitude =
      ad::pow_const(ad::abs(ad::scale(h, 1.0 / cfg.temperature)), 1.0 / cfg.power);
  return ad::hadamard(ad::sign(h), magnitude);
}

ad::Var sha_forward(ad::Var h, const SHAVars& head) {
  const std::size_t d_t = head.W_Q.rows();
  if (h.rows() != 1 || h.cols() != d_t) {
    throw ShapeError("sha_forward: expected input [1x" + std::to_string(d_t) + "], got " +
                     h.value().shape_str());
  }
  const ad::Var q = ad::matmul(h, head.W_Q);
  const ad::Var k = ad::matmul(h, head.W_K);
  const ad::Var score =
      ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(static_cast<double>(d_t)));
  return ad::matmul(score, ad::matmul(h, head.W_V));
}

ad::Var mha_forward(ad::Var h, std::span<const SHAVars> heads) {
  if (heads.empty()) throw ContractError("mha_forward: no heads");
  const auto& first = heads.front();
  std::vector<ad::Var> rows;
  rows.reserve(heads.size());
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const auto& hd = heads[i];
    if (!hd.W_Q.value().same_shape(first.W_Q.value()) ||
        !hd.W_K.value().same_shape(first.W_K.value()) ||
        !hd.W_V.value().same_shape(first.W_V.value())) {
      throw ShapeError("mha_forward: head " + std::to_string(i) +
                       " shapes differ from head 0");
    }
    rows.push_back(sha_forward(h, hd));
  }
  return ad::concat_rows(rows);
}

ad::Var gated_pool(ad::Var rows, const GatedPoolVars& pool) {
  if (rows.cols() != pool.W_V_gate.rows()) {
    throw ShapeError("gated_pool: input " + rows.value().shape_str() + " vs W_V_gate " +
                     pool.W_V_gate.value().shape_str());
  }
  const ad::Var gate = ad::hadamard(ad::tanh(ad::matmul(rows, pool.W_V_gate)),
                                    ad::sigmoid(ad::matmul(rows, pool.W_U_gate)));
  const ad::Var scores = ad::matmul(gate, pool.w_gate);  // m x 1
  const ad::Var weights = ad::softmax_row(ad::transpose(scores));
  return ad::matmul(weights, rows);
}

ad::Var mhfa_forward(ad::Var h_t, const MHFAVars& mhfa) {
  const ad::Var normalised = pts_normalise(h_t, mhfa.pts);
  return gated_pool(mha_forward(normalised, mhfa.heads), mhfa.pool);
}

std::optional<ad::Var> transfer_term(const TransferSetting& setting,
                                     const TeacherSignals& teacher, const MILOutputs& student,
                                     const TransferInputs& extra) {
  ad::Tape& tape = *student.probs.tape;
  switch (setting.method) {
    case Method::none:
    case Method::finetune:
      return std::nullopt;
    case Method::logit: {
      if (teacher.probs.cols() != student.probs.cols()) {
        throw ContractError("logit transfer: teacher has " + std::to_string(teacher.probs.cols()) +
                            " classes, student has " + std::to_string(student.probs.cols()));
      }
      return ad::rss_loss(tape.constant(teacher.probs), student.probs);
    }
    case Method::attention: {
      if (teacher.attention.cols() != student.attention.cols()) {
        throw ContractError("attention transfer: teacher saw " +
                            std::to_string(teacher.attention.cols()) + " instances, student " +
                            std::to_string(student.attention.cols()));
      }
      return ad::rss_loss(tape.constant(teacher.attention), student.attention);
    }
    case Method::feature_pts: {
      ad::Var target = pts_normalise(tape.constant(teacher.bag_feature), PTSConfig{});
      const std::size_t d_s = student.bag_feature.cols();
      if (target.cols() != d_s) {
        if (extra.pts_projection == nullptr) {
          throw ContractError("feature_pts: d_t=" + std::to_string(target.cols()) +
                              " differs from d_s=" + std::to_string(d_s) +
                              " and no PCA projection was supplied");
        }
        target = ad::matmul(target, tape.constant(*extra.pts_projection));
      }
      return ad::rss_loss(target, student.bag_feature);
    }
    case Method::mhfa: {
      if (extra.mhfa == nullptr) throw ContractError("mhfa transfer: MHFA parameters missing");
      const ad::Var adapted = mhfa_forward(tape.constant(teacher.bag_feature), *extra.mhfa);
      return ad::rss_loss(adapted, student.bag_feature);
    }
  }
  return std::nullopt;
}

ad::Var transfer_loss(const TransferSetting& setting, const TeacherSignals& teacher,
                      const MILOutputs& student, const TransferInputs& extra,
                      ad::Var task_loss) {
  const auto term = transfer_term(setting, teacher, student, extra);
  if (!term) return task_loss;
  return ad::add(ad::scale(*term, setting.alpha), task_loss);
}

std::optional<MILParams> init_student_from_teacher(const MILParams& teacher,
                                                   const MILArch& student_arch) {
  try {
    check_shapes(teacher, student_arch);
  } catch (const ContractError&) {
    return std::nullopt;
  }
  return teacher;
}

}  // namespace milkt
