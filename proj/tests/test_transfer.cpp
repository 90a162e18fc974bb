#include <cmath>
#include <random>

#include "doctest.h"
#include "milkt/gradcheck.hpp"
#include "milkt/experiment.hpp"
#include "milkt/transfer.hpp"

using namespace milkt;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (double& x : m.data()) x = u(rng);
  return m;
}

Matrix softmax_of(const Matrix& x) {
  Matrix out = x;
  double z = 0.0;
  for (double& v : out.data()) z += (v = std::exp(v));
  for (double& v : out.data()) v /= z;
  return out;
}

}  // namespace

TEST_CASE("method names") {
  for (Method m : {Method::none, Method::finetune, Method::logit, Method::attention,
                   Method::feature_pts, Method::mhfa})
    CHECK(parse_method(to_string(m)) == m);
  CHECK_THROWS_AS(parse_method("distill"), ContractError);
  CHECK_FALSE(uses_teacher_signal(Method::none));
  CHECK_FALSE(uses_teacher_signal(Method::finetune));
  CHECK(uses_teacher_signal(Method::mhfa));
  CHECK(TransferSetting{}.alpha == 0.1);

  TransferSetting s;
  s.method = Method::logit;
  s.teacher_arch.n_classes = 3;
  s.student_arch.n_classes = 2;
  CHECK_THROWS_AS(s.validate(), ContractError);
  s.method = Method::mhfa;
  CHECK_NOTHROW(s.validate());
  s.alpha = -0.1;
  CHECK_THROWS_AS(s.validate(), ContractError);
}

TEST_CASE("PTS") {
  ad::Tape t;
  const PTSConfig cfg;
  CHECK(cfg.temperature == 0.1);
  CHECK(cfg.power == 3.0);
  const Matrix out = t.value(pts_normalise(t.constant(Matrix{{0.8, 0.0, -0.8}}), cfg));
  CHECK(std::abs(out[0] - 2.0) < 1e-12);
  CHECK(out[1] == 0.0);
  CHECK(std::abs(out[2] + 2.0) < 1e-12);

  std::mt19937_64 rng(1);
  const Matrix x = random_matrix(1, 50, rng, -5, 5);
  Matrix neg = x;
  for (double& v : neg.data()) v = -v;
  const Matrix px = t.value(pts_normalise(t.constant(x), cfg));
  const Matrix pn = t.value(pts_normalise(t.constant(neg), cfg));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(pn[i] == -px[i]);
}

TEST_CASE("SHA and MHA") {
  CHECK(MHFADims::default_head_dim(512, 8) == 64);
  CHECK(MHFADims::default_head_dim(20, 8) == 8);
  CHECK(MHFADims::default_head_dim(100, 8) == 13);

  ad::Tape t;
  const SHAVars unit{t.constant(Matrix{{1.0}}), t.constant(Matrix{{1.0}}), t.constant(Matrix{{1.0}})};
  CHECK(std::abs(t.value(sha_forward(t.constant(Matrix{{2.0}}), unit))[0] - 8.0) < 1e-12);

  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 30);
    const std::size_t d_t = dim(rng), d_k = dim(rng), d_s = dim(rng);
    const SHAVars head{t.constant(random_matrix(d_t, d_k, rng)),
                       t.constant(random_matrix(d_t, d_k, rng)),
                       t.constant(random_matrix(d_t, d_s, rng))};
    const auto h = t.constant(random_matrix(1, d_t, rng));
    const Matrix out = t.value(sha_forward(h, head));
    CHECK(out.rows() == 1);
    CHECK(out.cols() == d_s);
    const SHAVars zero_q{t.constant(Matrix(d_t, d_k)), head.W_K, head.W_V};
    CHECK(t.value(sha_forward(h, zero_q)) == Matrix(1, d_s));
  }

  const MHFAParams p = init_mhfa(MHFADims::make(768, 512, 8), 3);
  CHECK(p.heads.size() == 8);
  CHECK(p.dims().d_k == 64);
  CHECK(p.dims().d_hidden == 256);
  const MHFAVars v = bind(t, p, false);
  const auto h = t.constant(random_matrix(1, 768, rng));
  const Matrix all = t.value(mha_forward(h, v.heads));
  CHECK(all.rows() == 8);
  CHECK(all.cols() == 512);
  const std::vector<SHAVars> first{v.heads[0]};
  CHECK(t.value(mha_forward(h, first)) == t.value(sha_forward(h, v.heads[0])));
  // Reversing the head list reverses the rows and leaves each row unchanged.
  std::vector<SHAVars> reversed(v.heads.rbegin(), v.heads.rend());
  const Matrix rev = t.value(mha_forward(h, reversed));
  for (std::size_t i = 0; i < 8; ++i)
    CHECK(Matrix::row_vector(rev.row(i)) == Matrix::row_vector(all.row(7 - i)));
}

TEST_CASE("gated pool") {
  std::mt19937_64 rng(3);
  ad::Tape t;
  for (int draw = 0; draw < 100; ++draw) {
    const GatedPoolVars pool{t.constant(random_matrix(16, 8, rng, -3, 3)),
                             t.constant(random_matrix(16, 8, rng, -3, 3)),
                             t.constant(random_matrix(8, 1, rng, -3, 3))};
    const Matrix row = random_matrix(1, 16, rng, -10, 10);
    CHECK(t.value(gated_pool(t.constant(row), pool)) == row);
  }
  const GatedPoolVars pool{t.constant(random_matrix(4, 3, rng)), t.constant(random_matrix(4, 3, rng)),
                           t.constant(random_matrix(3, 1, rng))};
  const Matrix r1 = random_matrix(1, 4, rng);
  Matrix twice(2, 4);
  std::copy(r1.data().begin(), r1.data().end(), twice.row(0).begin());
  std::copy(r1.data().begin(), r1.data().end(), twice.row(1).begin());
  CHECK(max_abs_diff(t.value(gated_pool(t.constant(twice), pool)), r1) < 1e-15);

  const Matrix two = random_matrix(2, 4, rng);
  const GatedPoolVars flat{pool.W_V_gate, pool.W_U_gate, t.constant(Matrix(3, 1))};
  const Matrix avg = t.value(gated_pool(t.constant(two), flat));
  for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(avg[c] - 0.5 * (two(0, c) + two(1, c))) < 1e-15);
}

TEST_CASE("MHFA composition") {
  std::mt19937_64 rng(4);
  const MHFAParams p = init_mhfa(MHFADims::make(768, 512, 8), 9);
  ad::Tape t;
  const MHFAVars v = bind(t, p, false);
  CHECK(t.value(mhfa_forward(t.constant(Matrix(1, 768)), v)) == Matrix(1, 512));
  const Matrix out = t.value(mhfa_forward(t.constant(random_matrix(1, 768, rng)), v));
  CHECK(out.rows() == 1);
  CHECK(out.cols() == 512);
  CHECK(out.all_finite());

  const auto names = param_list(p);
  CHECK(names.size() == 8 * 3 + 3);
  CHECK(names[0].name == "head0.W_Q");
  CHECK(names.back().name == "pool.w_gate");
  // Independent streams: two seeds give different heads, one seed is stable.
  CHECK(init_mhfa(MHFADims::make(768, 512, 8), 9).heads[3].W_V == p.heads[3].W_V);
}

TEST_CASE("MHFA gradients match finite differences at default dims") {
  const GradcheckReport report = run_gradcheck("mhfa", 0);
  for (const auto& e : report.entries) {
    CAPTURE(e.name);
    CHECK(e.checked > 0);
    CHECK(e.max_rel_error < 1e-4);
  }
  CHECK(report.passed());
}

TEST_CASE("loss algebra") {
  std::mt19937_64 rng(5);
  const std::size_t d = 16, n = 7;
  const MHFAParams mp = init_mhfa(MHFADims::make(d, d, 2, 8), 1);
  const TeacherSignals teacher{softmax_of(random_matrix(1, n, rng)), random_matrix(1, d, rng),
                               softmax_of(random_matrix(1, 2, rng))};
  for (Method m : {Method::none, Method::finetune, Method::logit, Method::attention,
                   Method::feature_pts, Method::mhfa}) {
    CAPTURE(to_string(m));
    auto total_and_task = [&](double alpha, double* term_value) {
      ad::Tape t;
      const MILOutputs student{t.variable(softmax_of(random_matrix(1, n, rng))),
                               t.variable(random_matrix(1, d, rng)),
                               t.variable(softmax_of(random_matrix(1, 2, rng))),
                               t.variable(random_matrix(1, 2, rng))};
      const auto task = ad::cross_entropy_loss(student.probs, 1);
      TransferSetting s;
      s.method = m;
      s.alpha = alpha;
      const MHFAVars mv = bind(t, mp, true);
      const TransferInputs extra{&mv, nullptr};
      const auto total = transfer_loss(s, teacher, student, extra, task);
      const auto term = transfer_term(s, teacher, student, extra);
      if (term_value) *term_value = term ? alpha * t.value(*term)[0] : 0.0;
      return std::make_pair(t.value(total)[0], t.value(task)[0]);
    };
    const auto seed = rng();
    rng.seed(seed);
    const auto [t0, k0] = total_and_task(0.0, nullptr);
    CHECK(std::abs(t0 - k0) <= 1e-12);
    rng.seed(seed);
    double term1 = 0.0, term2 = 0.0;
    const auto [t1, k1] = total_and_task(0.1, &term1);
    rng.seed(seed);
    const auto [t2, k2] = total_and_task(0.2, &term2);
    CHECK(k1 == k2);
    CHECK(term2 == 2.0 * term1);
    const double diff1 = t1 - k1, diff2 = t2 - k2;
    CHECK(std::abs(diff2 - 2.0 * diff1) <= 1e-12 * std::max(1.0, std::abs(diff2)));
    if (m == Method::none || m == Method::finetune) CHECK(t1 == k1);
  }

  // Logit with matching probabilities contributes nothing.
  ad::Tape t;
  const MILOutputs student{t.variable(Matrix{{0.5, 0.5}}), t.variable(Matrix(1, d)),
                           t.variable(teacher.probs), t.variable(Matrix(1, 2))};
  const auto task = ad::cross_entropy_loss(student.probs, 0);
  TransferSetting s;
  s.method = Method::logit;
  CHECK(t.value(transfer_loss(s, teacher, student, {}, task))[0] == t.value(task)[0]);

  // Contract errors.
  const TeacherSignals three{teacher.attention, teacher.bag_feature, Matrix{{0.2, 0.3, 0.5}}};
  CHECK_THROWS_AS(transfer_term(s, three, student, {}), ContractError);
  s.method = Method::mhfa;
  CHECK_THROWS_AS(transfer_term(s, teacher, student, {}), ContractError);
  s.method = Method::feature_pts;
  const TeacherSignals wide{teacher.attention, Matrix(1, d + 4, 0.3), teacher.probs};
  CHECK_THROWS_AS(transfer_term(s, wide, student, {}), ContractError);
  const Matrix proj = Matrix(d + 4, d, 0.01);
  CHECK(transfer_term(s, wide, student, {nullptr, &proj}).has_value());
}

TEST_CASE("init_student_from_teacher") {
  const MILArch big = arch_preset("big", 64, 2);
  const MILArch small = arch_preset("small", 64, 2);
  const MILParams teacher = init_params(big, 1);
  const auto copy = init_student_from_teacher(teacher, big);
  REQUIRE(copy.has_value());
  CHECK(*copy == teacher);
  MILParams student = *copy;
  student.W_embed(0, 0) += 1.0;
  CHECK(teacher.W_embed(0, 0) != student.W_embed(0, 0));
  CHECK_FALSE(init_student_from_teacher(teacher, small).has_value());
}

TEST_CASE("pca_reduce") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  Matrix line(50, 2);
  for (std::size_t r = 0; r < 50; ++r) {
    const double v = g(rng);
    line(r, 0) = v;
    line(r, 1) = v;
  }
  const Matrix dir = pca_reduce(line, 1);
  CHECK(std::abs(std::abs(dir(0, 0)) - 1.0 / std::sqrt(2.0)) < 1e-6);
  CHECK(std::abs(dir(1, 0) - dir(0, 0)) < 1e-6);

  // Rank-3 data in 10 dimensions plus an offset.
  const Matrix basis = random_matrix(3, 10, rng);
  Matrix data(80, 10, 4.0);
  for (std::size_t r = 0; r < 80; ++r) {
    const double w[3] = {g(rng), g(rng), g(rng)};
    for (std::size_t c = 0; c < 10; ++c)
      for (std::size_t b = 0; b < 3; ++b) data(r, c) += w[b] * basis(b, c);
  }
  const Matrix proj = pca_reduce(data, 3);
  const Matrix gram = matmul(proj.transposed(), proj);
  CHECK(max_abs_diff(gram, Matrix::identity(3)) < 1e-6);
  std::vector<double> mean(10, 0.0);
  for (std::size_t r = 0; r < 80; ++r)
    for (std::size_t c = 0; c < 10; ++c) mean[c] += data(r, c) / 80.0;
  Matrix centred = data;
  for (std::size_t r = 0; r < 80; ++r)
    for (std::size_t c = 0; c < 10; ++c) centred(r, c) -= mean[c];
  const Matrix reduced = matmul(centred, proj);
  double before = 0.0, after = 0.0;
  for (double v : centred.data()) before += v * v;
  for (double v : reduced.data()) after += v * v;
  CHECK(std::abs(before - after) / before < 1e-6);
  CHECK_THROWS_AS(pca_reduce(data, 11), ContractError);
}
