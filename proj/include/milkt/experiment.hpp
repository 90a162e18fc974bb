#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "milkt/autodiff.hpp"
#include "milkt/metrics.hpp"
#include "milkt/synthdata.hpp"

// Reproducible experiment drivers behind the command-line tool.
namespace milkt {

struct ExperimentConfig {
  std::string data;                // target dataset directory
  std::string out;                 // output directory
  std::string method = "none";
  double alpha = 0.1;
  std::size_t heads = 8;
  std::size_t mhfa_hidden = 256;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string student_arch = "small";
  std::string teacher_arch;        // optional declared preset for the teacher
  std::string teacher_checkpoint;  // transfer
  std::string init_checkpoint;     // train --method finetune
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  double lr = 2e-4;
  double weight_decay = 1e-5;
  std::string split = "6:1.5:2.5";
  std::uint64_t split_seed = 0;
  bool no_overwrite = false;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void apply_json(ExperimentConfig& c, const nlohmann::json& j);

enum class ExperimentMode { train, transfer };

/// Runs every seed, writes seed_<s>/{run.jsonl,timing.json,checkpoint/,mhfa/}
/// and summary.json under cfg.out, and returns the summary.
nlohmann::json run_experiment(const ExperimentConfig& cfg, ExperimentMode mode);

/// Mean and sample standard deviation of auc/f1/accuracy over seeds.
nlohmann::json aggregate_metrics(const std::vector<EvalResult>& results);

/// Evaluates a saved checkpoint on one split ("train", "val", "test" or "all").
EvalResult run_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                    const std::string& split_name, const SplitRatios& ratios,
                    std::uint64_t split_seed);

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double threshold = 1e-4;
  double seconds = 0.0;

  bool passed() const;
  std::vector<std::string> failures() const;
};

struct GradcheckDims {
  std::size_t d_in = 1024;
  std::size_t d_t = 768;
  std::size_t d_s = 512;
  std::size_t heads = 8;
  std::size_t d_hidden = 256;
  std::size_t bag_size = 16;
  std::size_t samples_per_tensor = 6;
};

/// scope: "tensor-core", "mil", "mhfa" or "all".
GradcheckReport run_gradcheck(const std::string& scope, std::uint64_t seed,
                              const GradcheckDims& dims = {});

}  // namespace milkt
