#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "cli_util.hpp"
#include "doctest.h"
#include "milkt/checkpoint.hpp"
#include "milkt/mil_model.hpp"
#include "milkt/serialize.hpp"

using namespace milkt;

namespace {

Matrix random_bag(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(n, d);
  for (double& x : m.data()) x = g(rng);
  return m;
}

MILArch tiny_arch(std::size_t c = 2) {
  MILArch a;
  a.d_in = 12;
  a.d_embed = 10;
  a.d_attn = 6;
  a.n_classes = c;
  return a;
}

}  // namespace

TEST_CASE("arch presets and validation") {
  const MILArch small = arch_preset("small", 1024, 2);
  CHECK(small.d_embed == 512);
  CHECK(small.d_attn == 256);
  const MILArch big = arch_preset("big", 1024, 3);
  CHECK(big.d_embed == 768);
  CHECK(big.d_attn == 384);
  CHECK(big.n_classes == 3);
  CHECK_THROWS_AS(arch_preset("huge", 1024, 2), ContractError);
  MILArch bad = small;
  bad.dropout_rate = 1.0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = small;
  bad.d_attn = 0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("init_params") {
  const MILArch arch = tiny_arch();
  const MILParams p = init_params(arch, 5);
  CHECK(p == init_params(arch, 5));
  CHECK_FALSE(p == init_params(arch, 6));
  CHECK_NOTHROW(check_shapes(p, arch));
  for (double v : p.b_embed.data()) CHECK(v == 0.0);
  for (double v : p.b_cls.data()) CHECK(v == 0.0);
  CHECK(infer_arch(p, arch.dropout_rate) == arch);

  const auto names = param_list(p);
  CHECK(names.size() == 7);
  std::set<std::string> unique;
  for (const auto& n : names) unique.insert(n.name);
  CHECK(unique.size() == 7);
  CHECK(names.front().name == "W_embed");
  CHECK(names.back().name == "b_cls");

  // Glorot-uniform on [-l, l] has variance l^2/3. The mean of N draws over 10
  // seeds must lie within 3 sigma of zero.
  const MILArch big = arch_preset("small", 64, 2);
  for (const char* which : {"W_embed", "attn_V", "attn_U", "W_cls"}) {
    double total = 0.0;
    std::size_t count = 0;
    double limit = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const MILParams q = init_params(big, seed);
      for (const auto& t : param_list(q)) {
        if (t.name != which) continue;
        limit = std::sqrt(6.0 / static_cast<double>(t.value->rows() + t.value->cols()));
        for (double v : t.value->data()) {
          CHECK(std::abs(v) <= limit);
          total += v;
          ++count;
        }
      }
    }
    const double sigma = limit / std::sqrt(3.0) / std::sqrt(static_cast<double>(count));
    CAPTURE(which);
    CHECK(std::abs(total / static_cast<double>(count)) < 3.0 * sigma);
  }

  MILParams wrong = p;
  wrong.W_cls = Matrix(10, 3);
  CHECK_THROWS_AS(check_shapes(wrong, arch), ContractError);
}

TEST_CASE("forward contracts") {
  std::mt19937_64 rng(9);
  const MILArch arch = tiny_arch(3);
  const MILParams p = init_params(arch, 1);

  const MILPrediction one = predict(p, random_bag(1, arch.d_in, rng));
  CHECK(one.attention == Matrix{{1.0}});

  Matrix same(5, arch.d_in);
  const Matrix row = random_bag(1, arch.d_in, rng);
  for (std::size_t r = 0; r < 5; ++r)
    std::copy(row.data().begin(), row.data().end(), same.row(r).begin());
  const MILPrediction uniform = predict(p, same);
  for (double a : uniform.attention.data()) CHECK(a == doctest::Approx(0.2).epsilon(1e-14));

  for (int t = 0; t < 50; ++t) {
    const Matrix bag = random_bag(3 + static_cast<std::size_t>(t), arch.d_in, rng);
    const MILPrediction out = predict(p, bag);
    CHECK(out.probs.cols() == 3);
    CHECK(out.bag_feature.cols() == arch.d_embed);
    CHECK(out.attention.cols() == bag.rows());
    const auto& pd = out.probs.data();
    CHECK(std::abs(std::accumulate(pd.begin(), pd.end(), 0.0) - 1.0) < 1e-9);
    const auto& ad = out.attention.data();
    CHECK(std::abs(std::accumulate(ad.begin(), ad.end(), 0.0) - 1.0) < 1e-9);
  }
}

TEST_CASE("row permutation invariance") {
  std::mt19937_64 rng(21);
  const MILArch arch = tiny_arch();
  const MILParams p = init_params(arch, 2);
  for (int t = 0; t < 20; ++t) {
    const Matrix bag = random_bag(17, arch.d_in, rng);
    std::vector<std::size_t> perm(bag.rows());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix shuffled(bag.rows(), bag.cols());
    for (std::size_t r = 0; r < perm.size(); ++r)
      std::copy(bag.row(perm[r]).begin(), bag.row(perm[r]).end(), shuffled.row(r).begin());
    const MILPrediction a = predict(p, bag);
    const MILPrediction b = predict(p, shuffled);
    // Same permutation; the softmax normaliser is summed in a different order,
    // so equality holds to rounding rather than bitwise.
    for (std::size_t r = 0; r < perm.size(); ++r) CHECK(std::abs(b.attention[r] - a.attention[perm[r]]) < 1e-15);
    CHECK(max_abs_diff(a.bag_feature, b.bag_feature) < 1e-9);
    CHECK(max_abs_diff(a.probs, b.probs) < 1e-9);
  }
}

TEST_CASE("eval-mode forward leaves the rng alone and train mode uses it") {
  std::mt19937_64 rng(4);
  const MILArch arch = tiny_arch();
  const MILParams p = init_params(arch, 3);
  const Matrix bag = random_bag(6, arch.d_in, rng);
  ad::Tape t;
  const MILVars vars = bind(t, p, true);
  std::mt19937_64 drop(77);
  const auto saved = drop;
  const MILOutputs eval = forward(vars, bag, arch.dropout_rate, false, t, drop);
  CHECK((drop == saved));
  CHECK(t.value(eval.probs) == predict(p, bag).probs);
  forward(vars, bag, arch.dropout_rate, true, t, drop);
  CHECK_FALSE((drop == saved));
}

TEST_CASE("checkpoint round trip") {
  milkt::testing::TempDir dir("ckpt");
  const MILArch arch = tiny_arch(3);
  MILCheckpoint ck{arch, init_params(arch, 8), 8, "tcga_a"};
  save_checkpoint(dir.path() / "c", ck);
  const MILCheckpoint back = load_checkpoint(dir.path() / "c");
  CHECK(back.arch == arch);
  CHECK(back.seed == 8);
  CHECK(back.source_tag == "tcga_a");
  const auto want = param_list(ck.params);
  const auto got = param_list(back.params);
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(*got[i].value == round_to_f32(*want[i].value));

  CHECK_THROWS_AS(load_checkpoint(dir.path() / "missing"), IoError);
  // Corrupt one tensor file: the error names it.
  for (const auto& entry : std::filesystem::directory_iterator(dir.path() / "c")) {
    if (entry.path().extension() != ".milb") continue;
    std::ofstream(entry.path(), std::ios::binary | std::ios::trunc) << "JUNKJUNKJUNKJUNK";
    break;
  }
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "c"), FormatError);
}
