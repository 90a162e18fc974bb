// milkt: synthetic-data MIL knowledge-transfer experiments.
//
// Exit codes: 0 ok, 1 configuration/contract error, 2 I/O error,
// 3 verification failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "milkt/autodiff.hpp"
#include "milkt/checkpoint.hpp"
#include "milkt/experiment.hpp"
#include "milkt/optim.hpp"
#include "milkt/parallel.hpp"
#include "milkt/runtime.hpp"
#include "milkt/serialize.hpp"
#include "milkt/synthdata.hpp"
#include "milkt/transfer.hpp"

namespace fs = std::filesystem;
using namespace milkt;

namespace {

constexpr int kOk = 0;
constexpr int kContract = 1;
constexpr int kIo = 2;
constexpr int kVerify = 3;

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ContractError("invalid seed list '" + text + "'");
    }
  }
  if (seeds.empty()) throw ContractError("seed list is empty");
  return seeds;
}

// Flags given on the command line; applied over the --config file.
struct RunFlags {
  std::string config, data, out, method, seeds, split, student_arch, teacher_arch, teacher,
      init_checkpoint;
  double alpha = 0.1, lr = 2e-4, weight_decay = 1e-5;
  std::size_t heads = 8, max_epochs = 200, patience = 20;
  std::uint64_t split_seed = 0;
  bool no_overwrite = false;
};

void add_run_options(CLI::App* cmd, RunFlags& f, bool transfer) {
  cmd->add_option("--config", f.config, "JSON config file; flags override it");
  cmd->add_option("--data", f.data, "Target dataset directory");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--method", f.method,
                  transfer ? "none|finetune|logit|attention|feature_pts|mhfa" : "none|finetune");
  cmd->add_option("--seeds", f.seeds, "Comma-separated seeds (default 0,1,2)");
  cmd->add_option("--alpha", f.alpha, "Transfer loss coefficient (default 0.1)");
  cmd->add_option("--heads", f.heads, "MHFA attention heads (default 8)");
  cmd->add_option("--split", f.split, "train:val:test ratios (default 6:1.5:2.5)");
  cmd->add_option("--split-seed", f.split_seed, "Seed of the dataset split (default 0)");
  cmd->add_option("--student-arch", f.student_arch, "small|big (default small)");
  cmd->add_option("--max-epochs", f.max_epochs, "Epoch cap (default 200)");
  cmd->add_option("--patience", f.patience, "Early-stopping patience (default 20)");
  cmd->add_option("--lr", f.lr, "Adam learning rate (default 2e-4)");
  cmd->add_option("--weight-decay", f.weight_decay, "Decoupled weight decay (default 1e-5)");
  cmd->add_flag("--no-overwrite", f.no_overwrite, "Fail if the output directory exists");
  if (transfer) {
    cmd->add_option("--teacher", f.teacher, "Teacher checkpoint directory")->required();
    cmd->add_option("--teacher-arch", f.teacher_arch, "Declared teacher preset (checked)");
  } else {
    cmd->add_option("--init-checkpoint", f.init_checkpoint,
                    "Checkpoint to initialise from (method finetune)");
  }
}

ExperimentConfig resolve(const CLI::App* cmd, const RunFlags& f) {
  ExperimentConfig c;
  if (!f.config.empty()) apply_json(c, read_json_file(f.config));
  auto given = [&](const char* name) { return cmd->count(name) > 0; };
  if (given("--data")) c.data = f.data;
  if (given("--out")) c.out = f.out;
  if (given("--method")) c.method = f.method;
  if (given("--seeds")) c.seeds = parse_seeds(f.seeds);
  if (given("--alpha")) c.alpha = f.alpha;
  if (given("--heads")) c.heads = f.heads;
  if (given("--split")) c.split = f.split;
  if (given("--split-seed")) c.split_seed = f.split_seed;
  if (given("--student-arch")) c.student_arch = f.student_arch;
  if (given("--max-epochs")) c.max_epochs = f.max_epochs;
  if (given("--patience")) c.patience = f.patience;
  if (given("--lr")) c.lr = f.lr;
  if (given("--weight-decay")) c.weight_decay = f.weight_decay;
  if (given("--no-overwrite")) c.no_overwrite = f.no_overwrite;
  if (cmd->get_option_no_throw("--teacher") && given("--teacher")) c.teacher_checkpoint = f.teacher;
  if (cmd->get_option_no_throw("--teacher-arch") && given("--teacher-arch")) {
    c.teacher_arch = f.teacher_arch;
  }
  if (cmd->get_option_no_throw("--init-checkpoint") && given("--init-checkpoint")) {
    c.init_checkpoint = f.init_checkpoint;
  }
  return c;
}

void print_summary(const nlohmann::json& s) {
  const auto& mean = s.at("mean");
  const auto& sd = s.at("sd");
  auto fmt = [](const nlohmann::json& v) {
    return v.is_null() ? std::string("n/a") : std::to_string(v.get<double>());
  };
  std::cout << "method " << s.at("provenance").at("method").get<std::string>() << " over "
            << s.at("per_seed").size() << " seed(s)\n";
  for (const char* k : {"auc", "f1", "accuracy"}) {
    std::cout << "  " << k << ": " << fmt(mean.at(k)) << " +/- " << fmt(sd.at(k)) << "\n";
  }
}

int cmd_gen_data(const std::string& profile_arg, std::size_t n_bags, std::uint64_t seed,
                 const std::string& out, const std::string& split, std::uint64_t split_seed,
                 std::size_t d_in, bool no_overwrite) {
  if (no_overwrite && fs::exists(out)) {
    throw ContractError("output directory " + out + " exists and --no-overwrite is set");
  }
  DomainProfile profile;
  if (fs::exists(profile_arg) && fs::is_regular_file(profile_arg)) {
    profile = profile_from_json(read_json_file(profile_arg));
  } else {
    profile = builtin_profile(profile_arg, d_in);
  }
  Dataset ds{profile, generate_dataset(profile, n_bags, seed)};
  write_dataset(ds, out);

  std::map<std::size_t, std::size_t> hist;
  for (const auto& b : ds.bags) ++hist[b.label];
  std::cout << "profile " << profile.name << " (witness_fraction " << profile.witness_fraction
            << ", mean_shift " << profile.mean_shift << ", d_in " << profile.d_in() << ")\n";
  std::cout << "bags: " << ds.bags.size() << "\n";
  for (std::size_t c = 0; c < profile.n_classes; ++c) {
    std::cout << "  class " << c << ": " << hist[c] << "\n";
  }
  if (!split.empty()) {
    const auto s = split_dataset(ds.bags, parse_split(split), split_seed);
    std::cout << "split: " << s.train.size() << "/" << s.val.size() << "/" << s.test.size()
              << "\n";
  }
  return kOk;
}

int cmd_gradcheck(const std::string& scope, std::uint64_t seed, const std::string& fault) {
  if (!fault.empty()) {
    bool found = false;
    for (int i = 0; i <= static_cast<int>(ad::Op::cross_entropy); ++i) {
      if (ad::op_name(static_cast<ad::Op>(i)) == fault) {
        ad::debug::inject_backward_fault(static_cast<ad::Op>(i));
        found = true;
      }
    }
    if (!found) throw ContractError("unknown op '" + fault + "' for --inject-fault");
  }
  const GradcheckReport report = run_gradcheck(scope, seed);
  for (const auto& e : report.entries) {
    std::printf("%-44s max_rel_err %.3e  (%zu checked)%s\n", e.name.c_str(), e.max_rel_error,
                e.checked, e.max_rel_error < report.threshold ? "" : "  FAIL");
  }
  std::printf("gradcheck %s: %zu entries in %.2f s\n", scope.c_str(), report.entries.size(),
              report.seconds);
  if (!report.passed()) {
    std::cerr << "gradient check failed for:";
    for (const auto& name : report.failures()) std::cerr << " " << name;
    std::cerr << "\n";
    return kVerify;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MIL knowledge-transfer experiments on synthetic domain-shift data"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP threads (default: runtime setting)");

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic MIL dataset");
  std::string profile = "tcga_a", gen_out, gen_split;
  std::size_t n_bags = 100, d_in = 1024;
  std::uint64_t gen_seed = 0, gen_split_seed = 0;
  bool gen_no_overwrite = false;
  gen->add_option("--profile", profile, "Built-in profile name or profile JSON file");
  gen->add_option("--n-bags", n_bags, "Number of bags (default 100)");
  gen->add_option("--seed", gen_seed, "Generator seed (default 0)");
  gen->add_option("--out", gen_out, "Dataset directory")->required();
  gen->add_option("--split", gen_split, "Report split sizes for train:val:test ratios");
  gen->add_option("--split-seed", gen_split_seed, "Seed of the reported split (default 0)");
  gen->add_option("--d-in", d_in, "Instance feature dimension of built-in profiles (default 1024)");
  gen->add_flag("--no-overwrite", gen_no_overwrite, "Fail if the output directory exists");

  RunFlags train_flags, transfer_flags;
  auto* train = app.add_subcommand("train", "Train students without a teacher signal");
  add_run_options(train, train_flags, false);
  auto* transfer = app.add_subcommand("transfer", "Train students with a frozen teacher");
  add_run_options(transfer, transfer_flags, true);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  std::string eval_ckpt, eval_data, eval_subset = "test", eval_split = "6:1.5:2.5";
  std::uint64_t eval_split_seed = 0;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint directory")->required();
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_option("--subset", eval_subset, "train|val|test|all (default test)");
  eval->add_option("--split", eval_split, "train:val:test ratios (default 6:1.5:2.5)");
  eval->add_option("--split-seed", eval_split_seed, "Seed of the dataset split (default 0)");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  std::string scope = "all", fault;
  std::uint64_t grad_seed = 0;
  grad->add_option("--scope", scope, "tensor-core|mil|mhfa|all (default all)");
  grad->add_option("--seed", grad_seed, "Seed (default 0)");
  grad->add_option("--inject-fault", fault, "Corrupt one op's backward pass")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kContract;
  }
  set_threads(threads);
  keep_heap_memory();

  try {
    if (*gen) {
      return cmd_gen_data(profile, n_bags, gen_seed, gen_out, gen_split, gen_split_seed, d_in,
                          gen_no_overwrite);
    }
    if (*train) {
      print_summary(run_experiment(resolve(train, train_flags), ExperimentMode::train));
      return kOk;
    }
    if (*transfer) {
      print_summary(run_experiment(resolve(transfer, transfer_flags), ExperimentMode::transfer));
      return kOk;
    }
    if (*eval) {
      const EvalResult r = run_eval(eval_ckpt, eval_data, eval_subset, parse_split(eval_split),
                                    eval_split_seed);
      std::cout << to_json(r).dump(2) << "\n";
      return kOk;
    }
    if (*grad) return cmd_gradcheck(scope, grad_seed, fault);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kContract;
  }
  return kContract;
}
