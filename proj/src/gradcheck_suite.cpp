#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>

#include "milkt/experiment.hpp"
#include "milkt/gradcheck.hpp"
#include "milkt/mil_model.hpp"
#include "milkt/seed.hpp"
#include "milkt/transfer.hpp"

namespace milkt {
namespace {

constexpr double kStep = 1e-5;
// Gradients below this magnitude are compared in absolute terms; finite
// differences cannot resolve them more finely at h = 1e-5.
constexpr double kGradFloor = 1e-6;

using Builder = std::function<ad::Var(ad::Tape&, ad::Var)>;

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (auto& v : m.data()) v = u(rng);
  return m;
}

// Values bounded away from zero so kinks (relu, abs) are never within h.
Matrix away_from_zero(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  Matrix m = random_matrix(r, c, rng, 0.2, 1.0);
  std::bernoulli_distribution flip(0.5);
  for (auto& v : m.data())
    if (flip(rng)) v = -v;
  return m;
}

// Full finite-difference check of d(sum(build(x) * weights))/dx.
GradcheckEntry check_op(const std::string& name, const Builder& build, const Matrix& x0,
                        std::mt19937_64& rng) {
  Matrix weights;
  {
    ad::Tape probe;
    const Matrix out = build(probe, probe.constant(x0)).value();
    weights = random_matrix(out.rows(), out.cols(), rng, 0.5, 1.5);
  }
  auto loss_of = [&](ad::Tape& t, ad::Var x) {
    const ad::Var y = build(t, x);
    return ad::sum(ad::hadamard(y, t.constant(weights)));
  };
  ad::Tape tape;
  const ad::Var x = tape.variable(x0);
  tape.backward(loss_of(tape, x));
  const Matrix analytic = tape.grad(x);
  const Matrix numeric = finite_difference_gradient(
      [&](const Matrix& m) {
        ad::Tape t;
        return loss_of(t, t.constant(m)).value()[0];
      },
      x0, kStep);
  GradcheckEntry e{name, 0.0, x0.size()};
  for (std::size_t i = 0; i < x0.size(); ++i) {
    e.max_rel_error =
        std::max(e.max_rel_error, relative_error(analytic[i], numeric[i], kGradFloor));
  }
  return e;
}

void tensor_core_suite(std::uint64_t seed, std::vector<GradcheckEntry>& out) {
  std::mt19937_64 rng(derive_seed(seed, "gradcheck:tensor-core"));
  const Matrix a34 = random_matrix(3, 4, rng);
  const Matrix b42 = random_matrix(4, 2, rng);
  const Matrix c34 = random_matrix(3, 4, rng);
  std::mt19937_64 unused(0);

  out.push_back(check_op("matmul.lhs",
                         [&](ad::Tape& t, ad::Var x) { return ad::matmul(x, t.constant(b42)); },
                         a34, rng));
  out.push_back(check_op("matmul.rhs",
                         [&](ad::Tape& t, ad::Var x) { return ad::matmul(t.constant(a34), x); },
                         b42, rng));
  out.push_back(check_op("transpose", [](ad::Tape&, ad::Var x) { return ad::transpose(x); },
                         a34, rng));
  out.push_back(check_op("add", [&](ad::Tape& t, ad::Var x) { return ad::add(x, t.constant(c34)); },
                         a34, rng));
  out.push_back(check_op("sub", [&](ad::Tape& t, ad::Var x) { return ad::sub(t.constant(c34), x); },
                         a34, rng));
  out.push_back(check_op(
      "hadamard", [&](ad::Tape& t, ad::Var x) { return ad::hadamard(x, t.constant(c34)); }, a34,
      rng));
  out.push_back(check_op("tanh", [](ad::Tape&, ad::Var x) { return ad::tanh(x); }, a34, rng));
  out.push_back(check_op("sigmoid", [](ad::Tape&, ad::Var x) { return ad::sigmoid(x); }, a34, rng));
  out.push_back(check_op("relu", [](ad::Tape&, ad::Var x) { return ad::relu(x); },
                         away_from_zero(3, 4, rng), rng));
  out.push_back(check_op("abs", [](ad::Tape&, ad::Var x) { return ad::abs(x); },
                         away_from_zero(3, 4, rng), rng));
  out.push_back(check_op("pow_const", [](ad::Tape&, ad::Var x) { return ad::pow_const(x, 1.0 / 3.0); },
                         random_matrix(3, 4, rng, 0.2, 2.0), rng));
  out.push_back(check_op("scale", [](ad::Tape&, ad::Var x) { return ad::scale(x, -2.5); }, a34, rng));
  out.push_back(check_op("dropout.eval",
                         [&](ad::Tape&, ad::Var x) { return ad::dropout(x, 0.25, false, unused); },
                         a34, rng));
  out.push_back(check_op("softmax_row", [](ad::Tape&, ad::Var x) { return ad::softmax_row(x); },
                         random_matrix(3, 5, rng, -2.0, 2.0), rng));
  const Matrix r1 = random_matrix(1, 4, rng);
  const Matrix r2 = random_matrix(1, 4, rng);
  out.push_back(check_op("concat_rows",
                         [&](ad::Tape& t, ad::Var x) {
                           const ad::Var rows[] = {t.constant(r1), x, t.constant(r2)};
                           return ad::concat_rows(rows);
                         },
                         random_matrix(1, 4, rng), rng));
  out.push_back(check_op("sum", [](ad::Tape&, ad::Var x) { return ad::sum(x); }, a34, rng));
  const Matrix target = random_matrix(1, 6, rng);
  out.push_back(check_op("rss",
                         [&](ad::Tape& t, ad::Var x) { return ad::rss_loss(x, t.constant(target)); },
                         random_matrix(1, 6, rng), rng));
  out.push_back(check_op("cross_entropy",
                         [](ad::Tape&, ad::Var x) { return ad::cross_entropy_loss(x, 1); },
                         random_matrix(1, 3, rng, 0.1, 0.9), rng));
  out.push_back(check_op("pts_normalise",
                         [](ad::Tape&, ad::Var x) { return pts_normalise(x, PTSConfig{}); },
                         away_from_zero(1, 6, rng), rng));
}

// Sampled check of one tensor: analytic gradient vs central differences at a
// few random entries (all entries for small tensors).
GradcheckEntry check_tensor(const std::string& name, Matrix& tensor, const Matrix& analytic,
                            const std::function<double()>& loss, std::size_t samples,
                            std::mt19937_64& rng) {
  std::vector<std::size_t> idx;
  if (tensor.size() <= samples) {
    for (std::size_t i = 0; i < tensor.size(); ++i) idx.push_back(i);
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, tensor.size() - 1);
    while (idx.size() < samples) {
      const std::size_t i = pick(rng);
      if (std::find(idx.begin(), idx.end(), i) == idx.end()) idx.push_back(i);
    }
  }
  const auto numeric = finite_difference_in_place(loss, tensor, idx, kStep);
  GradcheckEntry e{name, 0.0, idx.size()};
  for (std::size_t k = 0; k < idx.size(); ++k) {
    e.max_rel_error =
        std::max(e.max_rel_error, relative_error(analytic[idx[k]], numeric[k], kGradFloor));
  }
  return e;
}

Matrix random_bag(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(n, d);
  for (auto& v : m.data()) v = g(rng);
  return m;
}

void mil_suite(std::uint64_t seed, const GradcheckDims& dims, std::vector<GradcheckEntry>& out) {
  std::mt19937_64 rng(derive_seed(seed, "gradcheck:mil"));
  const MILArch arch = arch_preset("small", dims.d_in, 2);
  MILParams params = init_params(arch, derive_seed(seed, "gradcheck:mil-params"));
  // Non-zero biases so their gradients are exercised away from the init point.
  for (auto* b : {&params.b_embed, &params.b_cls}) {
    for (auto& v : b->data()) v = std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
  }
  const Matrix bag = random_bag(dims.bag_size, dims.d_in, rng);
  const std::size_t label = 1;

  auto loss = [&]() {
    ad::Tape t;
    std::mt19937_64 unused(0);
    const MILOutputs o = forward(bind(t, params, false), bag, 0.0, false, t, unused);
    return ad::cross_entropy_loss(o.probs, label).value()[0];
  };
  ad::Tape tape;
  std::mt19937_64 unused(0);
  const MILVars vars = bind(tape, params, true);
  const MILOutputs o = forward(vars, bag, arch.dropout_rate, false, tape, unused);
  tape.backward(ad::cross_entropy_loss(o.probs, label));
  const ad::Var handles[] = {vars.W_embed, vars.b_embed, vars.attn_V, vars.attn_U,
                             vars.attn_w,  vars.W_cls,   vars.b_cls};
  auto tensors = param_list(params);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const Matrix analytic = tape.grad(handles[i]);
    out.push_back(check_tensor("mil." + tensors[i].name, *tensors[i].value, analytic, loss,
                               dims.samples_per_tensor, rng));
  }
}

// Full transfer objective: CE(student) + alpha * RSS(MHFA(h_t), h_s).
void mhfa_suite(std::uint64_t seed, const GradcheckDims& dims, std::vector<GradcheckEntry>& out) {
  std::mt19937_64 rng(derive_seed(seed, "gradcheck:mhfa"));
  MILArch teacher_arch = arch_preset("small", dims.d_in, 3);
  teacher_arch.d_embed = dims.d_t;
  teacher_arch.d_attn = dims.d_t / 2;
  MILArch student_arch = arch_preset("small", dims.d_in, 2);
  student_arch.d_embed = dims.d_s;
  student_arch.d_attn = dims.d_s / 2;

  const MILParams teacher = init_params(teacher_arch, derive_seed(seed, "gradcheck:teacher"));
  MILParams student = init_params(student_arch, derive_seed(seed, "gradcheck:student"));
  MHFAParams mhfa = init_mhfa(MHFADims::make(dims.d_t, dims.d_s, dims.heads, dims.d_hidden),
                              derive_seed(seed, "gradcheck:mhfa-params"));
  const Matrix bag = random_bag(dims.bag_size, dims.d_in, rng);
  const std::size_t label = 0;

  TransferSetting setting;
  setting.method = Method::mhfa;
  setting.alpha = 0.1;
  setting.teacher_arch = teacher_arch;
  setting.student_arch = student_arch;

  // Teacher parameters sit on the tape as trainable leaves so that any leak of
  // gradient through the detached signals would show up.
  auto objective = [&](ad::Tape& t, bool trainable, MILVars* sv_out, MHFAVars* mv_out,
                       MILVars* tv_out) {
    std::mt19937_64 unused(0);
    const MILVars tv = bind(t, teacher, trainable);
    const MILOutputs to = forward(tv, bag, 0.0, false, t, unused);
    const TeacherSignals sig{to.attention.value(), to.bag_feature.value(), to.probs.value()};
    const MILVars sv = bind(t, student, trainable);
    const MHFAVars mv = bind(t, mhfa, trainable);
    const MILOutputs so = forward(sv, bag, 0.0, false, t, unused);
    const ad::Var task = ad::cross_entropy_loss(so.probs, label);
    const ad::Var total = transfer_loss(setting, sig, so, {&mv, nullptr}, task);
    if (sv_out) *sv_out = sv;
    if (mv_out) *mv_out = mv;
    if (tv_out) *tv_out = tv;
    return total;
  };
  auto loss = [&]() {
    ad::Tape t;
    return objective(t, false, nullptr, nullptr, nullptr).value()[0];
  };

  ad::Tape tape;
  MILVars sv, tv;
  MHFAVars mv;
  tape.backward(objective(tape, true, &sv, &mv, &tv));

  const ad::Var student_handles[] = {sv.W_embed, sv.b_embed, sv.attn_V, sv.attn_U,
                                     sv.attn_w,  sv.W_cls,   sv.b_cls};
  auto st = param_list(student);
  for (std::size_t i = 0; i < st.size(); ++i) {
    const Matrix analytic = tape.grad(student_handles[i]);
    out.push_back(check_tensor("mhfa-objective.student." + st[i].name, *st[i].value, analytic,
                               loss, dims.samples_per_tensor, rng));
  }
  std::vector<ad::Var> mhfa_handles;
  for (const auto& h : mv.heads) {
    mhfa_handles.insert(mhfa_handles.end(), {h.W_Q, h.W_K, h.W_V});
  }
  mhfa_handles.insert(mhfa_handles.end(), {mv.pool.W_V_gate, mv.pool.W_U_gate, mv.pool.w_gate});
  auto mt = param_list(mhfa);
  for (std::size_t i = 0; i < mt.size(); ++i) {
    const Matrix analytic = tape.grad(mhfa_handles[i]);
    out.push_back(check_tensor("mhfa-objective.mhfa." + mt[i].name, *mt[i].value, analytic, loss,
                               dims.samples_per_tensor, rng));
  }

  // Detachment: every teacher gradient must be exactly zero.
  double leak = 0.0;
  std::size_t n = 0;
  for (ad::Var v : {tv.W_embed, tv.b_embed, tv.attn_V, tv.attn_U, tv.attn_w, tv.W_cls, tv.b_cls}) {
    for (double g : tape.grad(v).data()) leak = std::max(leak, std::abs(g));
    n += tape.grad(v).size();
  }
  out.push_back({"mhfa-objective.teacher-detached", leak, n});
}

}  // namespace

bool GradcheckReport::passed() const { return failures().empty(); }

std::vector<std::string> GradcheckReport::failures() const {
  std::vector<std::string> bad;
  for (const auto& e : entries) {
    if (!(e.max_rel_error < threshold)) bad.push_back(e.name);
  }
  return bad;
}

GradcheckReport run_gradcheck(const std::string& scope, std::uint64_t seed,
                              const GradcheckDims& dims) {
  const auto t0 = std::chrono::steady_clock::now();
  const bool all = scope == "all";
  if (!all && scope != "tensor-core" && scope != "mil" && scope != "mhfa") {
    throw ContractError("unknown gradcheck scope '" + scope +
                        "' (expected tensor-core, mil, mhfa or all)");
  }
  GradcheckReport report;
  if (all || scope == "tensor-core") tensor_core_suite(seed, report.entries);
  if (all || scope == "mil") mil_suite(seed, dims, report.entries);
  if (all || scope == "mhfa") mhfa_suite(seed, dims, report.entries);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace milkt
