#include <cmath>

#include "doctest.h"
#include "milkt/optim.hpp"
#include "milkt/seed.hpp"
#include "milkt/synthdata.hpp"
#include "milkt/trainer.hpp"

using namespace milkt;

namespace {

DomainProfile tiny_profile(const std::string& name) {
  DomainProfile p = builtin_profile(name, 16);
  p.n_min = 4;
  p.n_max = 9;
  return p;
}

MILArch tiny_arch(std::size_t c, std::size_t d_embed = 12) {
  MILArch a;
  a.d_in = 16;
  a.d_embed = d_embed;
  a.d_attn = 6;
  a.n_classes = c;
  return a;
}

TrainConfig tiny_config(Method m, std::size_t epochs = 3) {
  TrainConfig cfg;
  cfg.max_epochs = epochs;
  cfg.patience = 50;
  cfg.lr = 1e-3;
  cfg.heads = 2;
  cfg.mhfa_hidden = 8;
  cfg.setting.method = m;
  cfg.setting.student_arch = tiny_arch(2);
  cfg.setting.teacher_arch = tiny_arch(2);
  return cfg;
}

}  // namespace

TEST_CASE("adam") {
  OptimState defaults;
  CHECK(defaults.lr == 2e-4);
  CHECK(defaults.weight_decay == 1e-5);

  Matrix w{{1.0, -2.0}};
  const Matrix zero(1, 2);
  std::vector<NamedTensor> params{{"w", &w}};
  std::vector<const Matrix*> grads{&zero};
  OptimState s;
  s.weight_decay = 0.0;
  for (int i = 0; i < 3; ++i) adam_step(params, grads, s);
  CHECK(w == Matrix{{1.0, -2.0}});

  const Matrix one(1, 2, 1.0);
  grads = {&one};
  OptimState first;
  first.weight_decay = 0.0;
  adam_step(params, grads, first);
  CHECK(std::abs((1.0 - w[0]) - 2e-4) < 1e-9);
  CHECK(std::abs((-2.0 - w[1]) - 2e-4) < 1e-9);
  CHECK(first.step_count == 1);

  Matrix bad{{1.0, 2.0}};
  const Matrix nan_grad{{std::nan(""), 0.0}};
  std::vector<NamedTensor> bp{{"attn_V", &bad}};
  std::vector<const Matrix*> bg{&nan_grad};
  OptimState s2;
  try {
    adam_step(bp, bg, s2);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("attn_V") != std::string::npos);
  }
}

TEST_CASE("training is deterministic and selects the best epoch") {
  const auto bags = generate_dataset(tiny_profile("tcga_b"), 12, 1);
  const std::span<const Bag> all(bags);
  const auto train = all.subspan(0, 8), val = all.subspan(8);
  const TrainConfig cfg = tiny_config(Method::none, 4);
  const TrainResult a = train_run(train, val, cfg, nullptr);
  const TrainResult b = train_run(train, val, cfg, nullptr);
  REQUIRE(a.record.epochs.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a.record.epochs[i].train_loss == b.record.epochs[i].train_loss);
    CHECK(a.record.epochs[i].val_loss == b.record.epochs[i].val_loss);
  }
  CHECK(a.student == b.student);
  std::size_t best = 1;
  for (std::size_t i = 1; i < 4; ++i)
    if (a.record.epochs[i].val_loss < a.record.epochs[best - 1].val_loss) best = i + 1;
  CHECK(a.record.best_epoch == best);
  CHECK_FALSE(a.record.stopped_early);
}

TEST_CASE("patience 1 with rising validation loss stops after epoch 2") {
  // Validation bags are the training bags with flipped labels, so every step
  // that fits the training set raises the validation loss.
  const auto bags = generate_dataset(tiny_profile("tcga_b"), 8, 2);
  std::vector<Bag> flipped = bags;
  for (Bag& b : flipped) b.label = 1 - b.label;
  TrainConfig cfg = tiny_config(Method::none, 10);
  cfg.patience = 1;
  cfg.lr = 5e-3;
  cfg.setting.student_arch.dropout_rate = 0.0;
  std::vector<double> seen;
  const TrainResult r = train_run(bags, flipped, cfg, nullptr,
                                  [&](const EpochRecord& e, const MILParams&) { seen.push_back(e.val_loss); });
  REQUIRE(r.record.epochs.size() == 2);
  CHECK(seen.size() == 2);
  CHECK(seen[1] > seen[0]);
  CHECK(r.record.best_epoch == 1);
  CHECK(r.record.stopped_early);
}

TEST_CASE("teacher-free methods never read the teacher") {
  const auto bags = generate_dataset(tiny_profile("tcga_b"), 10, 3);
  const std::span<const Bag> all(bags);
  const FrozenTeacher teacher(tiny_arch(2), init_params(tiny_arch(2), 5));
  const std::size_t before = teacher.reads();
  train_run(all.subspan(0, 7), all.subspan(7), tiny_config(Method::none, 2), &teacher);
  CHECK(teacher.reads() == before);
}

TEST_CASE("initial student contracts") {
  const MILArch arch = tiny_arch(2);
  const MILParams tp = init_params(arch, 11);
  const FrozenTeacher teacher(arch, tp);

  for (Method m : {Method::finetune, Method::mhfa}) {
    const auto [student, copied] = initial_student(tiny_config(m), &teacher);
    CHECK(copied);
    CHECK(student == tp);
  }
  const auto [fresh, copied] = initial_student(tiny_config(Method::none), &teacher);
  CHECK_FALSE(copied);
  CHECK_FALSE(fresh == tp);

  TrainConfig other = tiny_config(Method::finetune);
  other.setting.student_arch = tiny_arch(2, 20);
  const FrozenTeacher wide(tiny_arch(2), tp);
  const auto [fallback, copied2] = initial_student(other, &wide);
  CHECK_FALSE(copied2);
  CHECK(fallback == init_params(other.setting.student_arch, derive_seed(other.seed, "student-init")));

  // Finetuning moves the student, never the teacher.
  const auto bags = generate_dataset(tiny_profile("tcga_b"), 10, 4);
  const std::span<const Bag> all(bags);
  const TrainResult r = train_run(all.subspan(0, 7), all.subspan(7), tiny_config(Method::finetune, 2), &teacher);
  CHECK(r.record.student_from_teacher);
  CHECK(teacher.params() == tp);
  CHECK_FALSE(r.student == tp);
}

TEST_CASE("every transfer method trains to finite parameters") {
  // feature_pts fits a PCA with d_s components, so train holds more than d_s bags.
  const auto bags = generate_dataset(tiny_profile("tcga_b"), 20, 5);
  const std::span<const Bag> all(bags);
  const MILArch t_arch = tiny_arch(2, 14);
  const FrozenTeacher teacher(t_arch, init_params(t_arch, 3));
  for (Method m : {Method::logit, Method::attention, Method::feature_pts, Method::mhfa}) {
    CAPTURE(to_string(m));
    TrainConfig cfg = tiny_config(m, 2);
    cfg.setting.teacher_arch = t_arch;
    const std::size_t before = teacher.reads();
    const TrainResult r = train_run(all.subspan(0, 15), all.subspan(15), cfg, &teacher);
    CHECK(teacher.reads() > before);
    for (const auto& t : param_list(r.student)) CHECK(t.value->all_finite());
    for (const auto& e : r.record.epochs) CHECK(std::isfinite(e.val_loss));
    CHECK(r.mhfa.has_value() == (m == Method::mhfa));
  }
  CHECK_THROWS_AS(train_run(all.subspan(0, 7), all.subspan(7), tiny_config(Method::mhfa, 1), nullptr),
                  ContractError);
}

TEST_CASE("transfer training loss falls over the first five epochs on separable data") {
  DomainProfile p = tiny_profile("tcga_b");
  p.noise_scale = 0.5;
  const auto bags = generate_dataset(p, 30, 6);
  const std::span<const Bag> all(bags);
  const MILArch t_arch = tiny_arch(2, 14);
  const FrozenTeacher teacher(t_arch, init_params(t_arch, 8));
  for (Method m : {Method::logit, Method::attention, Method::feature_pts, Method::mhfa}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      CAPTURE(to_string(m));
      CAPTURE(seed);
      TrainConfig cfg = tiny_config(m, 5);
      cfg.seed = seed;
      cfg.setting.teacher_arch = t_arch;
      const TrainResult r = train_run(all.subspan(0, 22), all.subspan(22), cfg, &teacher);
      REQUIRE(r.record.epochs.size() == 5);
      CHECK(r.record.epochs[4].train_loss < r.record.epochs[0].train_loss);
      // The selected epoch is never worse than an earlier one.
      for (std::size_t e = 0; e + 1 < r.record.best_epoch; ++e)
        CHECK(r.record.epochs[r.record.best_epoch - 1].val_loss <= r.record.epochs[e].val_loss);
    }
  }
}
