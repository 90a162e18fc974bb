#include "milkt/experiment.hpp"

#include <cmath>
#include <fstream>

#include "milkt/checkpoint.hpp"
#include "milkt/serialize.hpp"
#include "milkt/trainer.hpp"

namespace milkt {
namespace fs = std::filesystem;
using nlohmann::json;

json to_json(const ExperimentConfig& c) {
  return {{"data", c.data},
          {"out", c.out},
          {"method", c.method},
          {"alpha", c.alpha},
          {"heads", c.heads},
          {"mhfa_hidden", c.mhfa_hidden},
          {"seeds", c.seeds},
          {"student_arch", c.student_arch},
          {"teacher_arch", c.teacher_arch},
          {"teacher_checkpoint", c.teacher_checkpoint},
          {"init_checkpoint", c.init_checkpoint},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"split", c.split},
          {"split_seed", c.split_seed},
          {"no_overwrite", c.no_overwrite}};
}

void apply_json(ExperimentConfig& c, const json& j) {
  if (!j.is_object()) throw ContractError("config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "data") c.data = v.get<std::string>();
      else if (key == "out") c.out = v.get<std::string>();
      else if (key == "method") c.method = v.get<std::string>();
      else if (key == "alpha") c.alpha = v.get<double>();
      else if (key == "heads") c.heads = v.get<std::size_t>();
      else if (key == "mhfa_hidden") c.mhfa_hidden = v.get<std::size_t>();
      else if (key == "seeds") c.seeds = v.get<std::vector<std::uint64_t>>();
      else if (key == "student_arch") c.student_arch = v.get<std::string>();
      else if (key == "teacher_arch") c.teacher_arch = v.get<std::string>();
      else if (key == "teacher_checkpoint") c.teacher_checkpoint = v.get<std::string>();
      else if (key == "init_checkpoint") c.init_checkpoint = v.get<std::string>();
      else if (key == "max_epochs") c.max_epochs = v.get<std::size_t>();
      else if (key == "patience") c.patience = v.get<std::size_t>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "weight_decay") c.weight_decay = v.get<double>();
      else if (key == "split") c.split = v.get<std::string>();
      else if (key == "split_seed") c.split_seed = v.get<std::uint64_t>();
      else if (key == "no_overwrite") c.no_overwrite = v.get<bool>();
      else throw ContractError("unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ContractError(std::string("config value has the wrong type: ") + e.what());
  }
}

namespace {

MILParams rounded(const MILParams& p) {
  MILParams out = p;
  for (auto& t : param_list(out)) *t.value = round_to_f32(*t.value);
  return out;
}

MHFAParams rounded(const MHFAParams& p) {
  MHFAParams out = p;
  for (auto& t : param_list(out)) *t.value = round_to_f32(*t.value);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

MILCheckpoint load_compatible(const std::string& path, std::size_t d_in, const char* role) {
  MILCheckpoint ckpt = load_checkpoint(path);
  if (ckpt.arch.d_in != d_in) {
    throw ContractError(std::string(role) + " checkpoint expects d_in=" +
                        std::to_string(ckpt.arch.d_in) + " but the dataset has d_in=" +
                        std::to_string(d_in));
  }
  return ckpt;
}

}  // namespace

json aggregate_metrics(const std::vector<EvalResult>& results) {
  auto stats = [](const std::vector<double>& xs) -> std::pair<json, json> {
    if (xs.empty()) return {nullptr, nullptr};
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double sd = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
    return {mean, sd};
  };
  std::vector<double> auc, f1, acc;
  for (const auto& r : results) {
    if (r.auc) auc.push_back(*r.auc);
    f1.push_back(r.f1);
    acc.push_back(r.accuracy);
  }
  const auto [auc_m, auc_s] = stats(auc);
  const auto [f1_m, f1_s] = stats(f1);
  const auto [acc_m, acc_s] = stats(acc);
  return {{"mean", {{"auc", auc_m}, {"f1", f1_m}, {"accuracy", acc_m}}},
          {"sd", {{"auc", auc_s}, {"f1", f1_s}, {"accuracy", acc_s}}}};
}

json run_experiment(const ExperimentConfig& cfg, ExperimentMode mode) {
  const Method method = parse_method(cfg.method);
  if (cfg.seeds.empty()) throw ContractError("at least one seed is required");
  if (cfg.heads < 1) throw ContractError("--heads must be >= 1");
  if (cfg.out.empty()) throw ContractError("an output directory is required (--out)");
  if (cfg.data.empty()) throw ContractError("a dataset directory is required (--data)");
  if (mode == ExperimentMode::train) {
    if (method != Method::none && method != Method::finetune) {
      throw ContractError("train supports methods none and finetune; use transfer for " +
                          cfg.method);
    }
    if (method == Method::finetune && cfg.init_checkpoint.empty()) {
      throw ContractError("finetune needs --init-checkpoint");
    }
  } else if (cfg.teacher_checkpoint.empty()) {
    throw ContractError("transfer needs --teacher");
  }
  const fs::path out(cfg.out);
  if (cfg.no_overwrite && fs::exists(out)) {
    throw ContractError("output directory " + out.string() + " exists and --no-overwrite is set");
  }

  const Dataset ds = read_dataset(cfg.data);
  const SplitRatios ratios = parse_split(cfg.split);
  const DatasetSplits splits = split_dataset(ds.bags, ratios, cfg.split_seed);
  const MILArch student_arch = arch_preset(cfg.student_arch, ds.profile.d_in(), ds.profile.n_classes);

  std::optional<MILCheckpoint> teacher_ckpt;
  if (mode == ExperimentMode::transfer) {
    teacher_ckpt = load_compatible(cfg.teacher_checkpoint, ds.profile.d_in(), "teacher");
    if (!cfg.teacher_arch.empty()) {
      const MILArch declared =
          arch_preset(cfg.teacher_arch, teacher_ckpt->arch.d_in, teacher_ckpt->arch.n_classes);
      if (declared.d_embed != teacher_ckpt->arch.d_embed ||
          declared.d_attn != teacher_ckpt->arch.d_attn) {
        throw ContractError("teacher checkpoint does not match declared architecture '" +
                            cfg.teacher_arch + "'");
      }
    }
  } else if (method == Method::finetune) {
    teacher_ckpt = load_compatible(cfg.init_checkpoint, ds.profile.d_in(), "init");
  }

  TransferSetting setting;
  setting.method = method;
  setting.alpha = cfg.alpha;
  setting.student_arch = student_arch;
  setting.target_tag = ds.profile.name;
  if (teacher_ckpt) {
    setting.teacher_arch = teacher_ckpt->arch;
    setting.source_tag = teacher_ckpt->source_tag;
  }
  setting.validate();

  std::optional<FrozenTeacher> teacher;
  if (teacher_ckpt) teacher.emplace(teacher_ckpt->arch, teacher_ckpt->params);

  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());

  json per_seed = json::array();
  std::vector<EvalResult> tests;
  for (std::uint64_t seed : cfg.seeds) {
    TrainConfig tc;
    tc.max_epochs = cfg.max_epochs;
    tc.patience = cfg.patience;
    tc.seed = seed;
    tc.lr = cfg.lr;
    tc.weight_decay = cfg.weight_decay;
    tc.heads = cfg.heads;
    tc.mhfa_hidden = cfg.mhfa_hidden;
    tc.setting = setting;

    TrainResult res = train_run(splits.train, splits.val, tc, teacher ? &*teacher : nullptr);
    // Test metrics come from the stored (f32) weights so that `eval` on the
    // checkpoint reproduces them exactly.
    const MILParams stored = rounded(res.student);
    res.record.test = evaluate_model(stored, splits.test);
    tests.push_back(*res.record.test);

    const fs::path seed_dir = out / ("seed_" + std::to_string(seed));
    fs::create_directories(seed_dir, ec);
    if (ec) throw IoError("cannot create " + seed_dir.string() + ": " + ec.message());
    save_checkpoint(seed_dir / "checkpoint", {student_arch, stored, seed, ds.profile.name});
    if (res.mhfa) save_mhfa_checkpoint(seed_dir / "mhfa", {rounded(*res.mhfa), seed});

    std::string lines;
    for (const auto& e : res.record.epochs) lines += epoch_to_json(e).dump() + "\n";
    json summary_line = summary_to_json(res.record);
    summary_line["seed"] = seed;
    lines += summary_line.dump() + "\n";
    write_text(seed_dir / "run.jsonl", lines);
    write_json_file(seed_dir / "timing.json", {{"wall_seconds", res.record.wall_seconds}});

    std::string init = "glorot";
    if (method == Method::finetune || method == Method::mhfa) {
      init = res.record.student_from_teacher ? "teacher_copy" : "glorot_fallback";
    }
    per_seed.push_back({{"seed", seed},
                        {"best_epoch", res.record.best_epoch},
                        {"epochs_run", res.record.epochs.size()},
                        {"student_from_teacher", res.record.student_from_teacher},
                        {"init", init},
                        {"test", to_json(*res.record.test)}});
  }

  json provenance = {{"mode", mode == ExperimentMode::train ? "train" : "transfer"},
                     {"method", to_string(method)},
                     {"alpha", cfg.alpha},
                     {"student_arch", arch_to_json(student_arch)},
                     {"target", ds.profile.name},
                     {"split_sizes",
                      {splits.train.size(), splits.val.size(), splits.test.size()}}};
  if (teacher_ckpt) {
    provenance["teacher_arch"] = arch_to_json(teacher_ckpt->arch);
    provenance["source"] = teacher_ckpt->source_tag;
  }
  if (method == Method::mhfa) {
    const MHFADims d = MHFADims::make(teacher_ckpt->arch.d_embed, student_arch.d_embed, cfg.heads,
                                      cfg.mhfa_hidden);
    const PTSConfig pts;
    provenance["m"] = d.heads;
    provenance["d_k"] = d.d_k;
    provenance["d_prime"] = d.d_hidden;
    provenance["pts"] = {{"T", pts.temperature}, {"t", pts.power}};
  }

  const json agg = aggregate_metrics(tests);
  json summary = {{"config", to_json(cfg)},
                  {"provenance", provenance},
                  {"per_seed", per_seed},
                  {"mean", agg.at("mean")},
                  {"sd", agg.at("sd")}};
  write_json_file(out / "summary.json", summary);
  return summary;
}

EvalResult run_eval(const fs::path& checkpoint, const fs::path& data,
                    const std::string& split_name, const SplitRatios& ratios,
                    std::uint64_t split_seed) {
  const MILCheckpoint ckpt = load_checkpoint(checkpoint);
  const Dataset ds = read_dataset(data);
  if (ckpt.arch.d_in != ds.profile.d_in() || ckpt.arch.n_classes != ds.profile.n_classes) {
    throw ContractError("checkpoint (d_in=" + std::to_string(ckpt.arch.d_in) + ", classes=" +
                        std::to_string(ckpt.arch.n_classes) + ") is incompatible with dataset (d_in=" +
                        std::to_string(ds.profile.d_in()) + ", classes=" +
                        std::to_string(ds.profile.n_classes) + ")");
  }
  if (split_name == "all") return evaluate_model(ckpt.params, ds.bags);
  DatasetSplits s = split_dataset(ds.bags, ratios, split_seed);
  if (split_name == "train") return evaluate_model(ckpt.params, s.train);
  if (split_name == "val") return evaluate_model(ckpt.params, s.val);
  if (split_name == "test") return evaluate_model(ckpt.params, s.test);
  throw ContractError("unknown split '" + split_name + "' (expected train, val, test or all)");
}

}  // namespace milkt
