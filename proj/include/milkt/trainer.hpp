#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "milkt/metrics.hpp"
#include "milkt/mil_model.hpp"
#include "milkt/synthdata.hpp"
#include "milkt/transfer.hpp"

namespace milkt {

struct TrainConfig {
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  std::uint64_t seed = 0;
  double lr = 2e-4;
  double weight_decay = 1e-5;
  std::size_t heads = 8;
  std::size_t mhfa_hidden = 256;
  TransferSetting setting;  // carries alpha

  void validate() const;
};

/// Pre-trained teacher. Every parameter access is counted so callers can
/// verify that teacher-free methods never touch it.
class FrozenTeacher {
 public:
  FrozenTeacher(MILArch arch, MILParams params);
  const MILParams& params() const;
  const MILArch& arch() const { return arch_; }
  std::size_t reads() const { return reads_.load(); }

 private:
  MILArch arch_;
  MILParams params_;
  mutable std::atomic<std::size_t> reads_{0};
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  bool student_from_teacher = false;
  std::optional<EvalResult> test;
  double wall_seconds = 0.0;
};

struct TrainResult {
  MILParams student;
  std::optional<MHFAParams> mhfa;
  RunRecord record;
};

/// Student at step 0: a copy of the teacher for finetune/mhfa when shapes
/// allow, otherwise seeded Glorot. The bool reports whether the copy happened.
std::pair<MILParams, bool> initial_student(const TrainConfig& cfg, const FrozenTeacher* teacher);

/// Batch size one bag; bag order reshuffled every epoch from a seed-derived
/// stream; early stopping on the full validation objective; returns the
/// parameters of the best epoch (earliest on ties).
/// `on_epoch`, when set, sees each finished epoch with the current student.
using EpochHook = std::function<void(const EpochRecord&, const MILParams&)>;
TrainResult train_run(std::span<const Bag> train, std::span<const Bag> val,
                      const TrainConfig& cfg, const FrozenTeacher* teacher,
                      const EpochHook& on_epoch = {});

/// Eval-mode class probabilities for every bag.
std::vector<Matrix> predict_all(const MILParams& params, std::span<const Bag> bags);
EvalResult evaluate_model(const MILParams& params, std::span<const Bag> bags);

nlohmann::json epoch_to_json(const EpochRecord& e);
nlohmann::json summary_to_json(const RunRecord& r);

}  // namespace milkt
