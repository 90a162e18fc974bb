#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "milkt/autodiff.hpp"
#include "milkt/mil_model.hpp"

namespace milkt {

enum class Method { none, finetune, logit, attention, feature_pts, mhfa };

std::string to_string(Method m);
/// Throws ContractError on an unknown name.
Method parse_method(const std::string& name);
/// True for methods whose loss reads teacher outputs.
bool uses_teacher_signal(Method m);

struct TransferSetting {
  Method method = Method::none;
  double alpha = 0.1;
  std::string source_tag;
  std::string target_tag;
  MILArch teacher_arch;
  MILArch student_arch;

  /// Throws ContractError: negative alpha, logit with differing class counts.
  void validate() const;
};

/// Power temperature scaling: sign(h) |h / T|^(1/t).
struct PTSConfig {
  double temperature = 0.1;
  double power = 3.0;

  void validate() const;
};

struct SHAParams {
  Matrix W_Q;  // d_t x d_k
  Matrix W_K;  // d_t x d_k
  Matrix W_V;  // d_t x d_s
};

struct GatedPoolParams {
  Matrix W_V_gate;  // d_s x d'
  Matrix W_U_gate;  // d_s x d'
  Matrix w_gate;    // d' x 1
};

struct MHFADims {
  std::size_t d_t = 768;
  std::size_t d_s = 512;
  std::size_t heads = 8;
  std::size_t d_k = 64;
  std::size_t d_hidden = 256;

  /// max(8, ceil(d_s / heads)).
  static std::size_t default_head_dim(std::size_t d_s, std::size_t heads);
  static MHFADims make(std::size_t d_t, std::size_t d_s, std::size_t heads,
                       std::size_t d_hidden = 256);
};

struct MHFAParams {
  std::vector<SHAParams> heads;
  GatedPoolParams pool;
  PTSConfig pts;

  MHFADims dims() const;
};

/// Glorot init, each tensor from its own seed-derived stream.
MHFAParams init_mhfa(const MHFADims& dims, std::uint64_t seed, PTSConfig pts = {});
/// Names: head<i>.W_Q, head<i>.W_K, head<i>.W_V, pool.W_V_gate, pool.W_U_gate, pool.w_gate.
std::vector<NamedTensor> param_list(MHFAParams& p);
std::vector<ConstNamedTensor> param_list(const MHFAParams& p);

struct SHAVars {
  ad::Var W_Q, W_K, W_V;
};
struct GatedPoolVars {
  ad::Var W_V_gate, W_U_gate, w_gate;
};
struct MHFAVars {
  std::vector<SHAVars> heads;
  GatedPoolVars pool;
  PTSConfig pts;
};

MHFAVars bind(ad::Tape& tape, const MHFAParams& p, bool trainable);

ad::Var pts_normalise(ad::Var h, const PTSConfig& cfg);
/// (h W_Q)(h W_K)^T / sqrt(d_t) * (h W_V); a 1 x d_s row.
ad::Var sha_forward(ad::Var h, const SHAVars& head);
/// Row i is head i's output.
ad::Var mha_forward(ad::Var h, std::span<const SHAVars> heads);
/// Gated attention over rows: softmax over per-row scores, then weighted row sum.
ad::Var gated_pool(ad::Var rows, const GatedPoolVars& pool);
/// gated_pool(mha_forward(pts_normalise(h_t))).
ad::Var mhfa_forward(ad::Var h_t, const MHFAVars& mhfa);

/// Detached teacher quantities for one bag.
struct TeacherSignals {
  Matrix attention;
  Matrix bag_feature;
  Matrix probs;
};

struct TransferInputs {
  const MHFAVars* mhfa = nullptr;
  /// d_t x d_s projection for feature_pts when d_t != d_s.
  const Matrix* pts_projection = nullptr;
};

/// Objective for one bag: task_loss plus alpha times the method's RSS term.
/// Teacher signals enter as constants; no gradient reaches the teacher.
ad::Var transfer_loss(const TransferSetting& setting, const TeacherSignals& teacher,
                      const MILOutputs& student, const TransferInputs& extra,
                      ad::Var task_loss);

/// The alpha-free alignment term alone (RSS), or nullopt for none/finetune.
std::optional<ad::Var> transfer_term(const TransferSetting& setting,
                                     const TeacherSignals& teacher, const MILOutputs& student,
                                     const TransferInputs& extra);

/// Deep copy of the teacher when every tensor shape matches `student_arch`,
/// otherwise nullopt ("shapes differ").
std::optional<MILParams> init_student_from_teacher(const MILParams& teacher,
                                                   const MILArch& student_arch);

/// Top `components` principal directions (columns) of the mean-centred rows of
/// `fit_data`, by power iteration with deflation.
Matrix pca_reduce(const Matrix& fit_data, std::size_t components,
                  std::size_t iterations = 200, double tol = 1e-9);

}  // namespace milkt
