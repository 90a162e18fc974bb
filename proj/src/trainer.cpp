#include "milkt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <random>

#include "milkt/optim.hpp"
#include "milkt/parallel.hpp"
#include "milkt/seed.hpp"

namespace milkt {
namespace {

struct BagObjective {
  ad::Var total;
  ad::Var task;
};

// Full per-bag objective on `tape`. `mhfa` may be null for other methods.
BagObjective bag_objective(const TrainConfig& cfg, const MILVars& student, const Bag& bag,
                           const TeacherSignals* teacher, const MHFAVars* mhfa,
                           const Matrix* projection, bool train, ad::Tape& tape,
                           std::mt19937_64& rng) {
  const MILOutputs out =
      forward(student, bag.instances, cfg.setting.student_arch.dropout_rate, train, tape, rng);
  const ad::Var task = ad::cross_entropy_loss(out.probs, bag.label);
  if (!uses_teacher_signal(cfg.setting.method)) return {task, task};
  const TransferInputs extra{mhfa, projection};
  return {transfer_loss(cfg.setting, *teacher, out, extra, task), task};
}

std::vector<TeacherSignals> teacher_signals(const FrozenTeacher& teacher,
                                            std::span<const Bag> bags) {
  const MILParams& params = teacher.params();
  std::vector<TeacherSignals> out(bags.size());
  parallel_for(
      bags.size(),
      [&](std::size_t i) {
        MILPrediction p = predict(params, bags[i].instances);
        out[i] = {std::move(p.attention), std::move(p.bag_feature), std::move(p.probs)};
      },
      2);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (max_epochs < 1) throw ContractError("max_epochs must be >= 1");
  if (patience < 1) throw ContractError("patience must be >= 1");
  if (!(lr > 0.0)) throw ContractError("learning rate must be > 0");
  if (!(weight_decay >= 0.0)) throw ContractError("weight decay must be >= 0");
  if (heads < 1) throw ContractError("number of heads must be >= 1");
  setting.validate();
}

FrozenTeacher::FrozenTeacher(MILArch arch, MILParams params)
    : arch_(arch), params_(std::move(params)) {
  check_shapes(params_, arch_);
}

const MILParams& FrozenTeacher::params() const {
  reads_.fetch_add(1);
  return params_;
}

std::pair<MILParams, bool> initial_student(const TrainConfig& cfg, const FrozenTeacher* teacher) {
  const Method m = cfg.setting.method;
  if ((m == Method::finetune || m == Method::mhfa) && teacher != nullptr) {
    if (auto copy = init_student_from_teacher(teacher->params(), cfg.setting.student_arch)) {
      return {std::move(*copy), true};
    }
  }
  return {init_params(cfg.setting.student_arch, derive_seed(cfg.seed, "student-init")), false};
}

TrainResult train_run(std::span<const Bag> train, std::span<const Bag> val,
                      const TrainConfig& cfg, const FrozenTeacher* teacher,
                      const EpochHook& on_epoch) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  if (train.empty() || val.empty()) throw ContractError("train_run: empty train or val split");
  const Method method = cfg.setting.method;
  if (uses_teacher_signal(method) && teacher == nullptr) {
    throw ContractError("method " + to_string(method) + " requires a teacher model");
  }

  TrainResult result;
  auto [student, from_teacher] = initial_student(cfg, teacher);
  result.record.student_from_teacher = from_teacher;

  std::vector<TeacherSignals> train_sig, val_sig;
  std::optional<MHFAParams> mhfa;
  std::optional<Matrix> projection;
  if (uses_teacher_signal(method)) {
    train_sig = teacher_signals(*teacher, train);
    val_sig = teacher_signals(*teacher, val);
    const std::size_t d_t = teacher->arch().d_embed;
    const std::size_t d_s = cfg.setting.student_arch.d_embed;
    if (method == Method::mhfa) {
      mhfa = init_mhfa(MHFADims::make(d_t, d_s, cfg.heads, cfg.mhfa_hidden),
                       derive_seed(cfg.seed, "mhfa-init"));
    } else if (method == Method::feature_pts && d_t != d_s) {
      // Fit once on PTS-normalised teacher features of the training split.
      Matrix fit(train_sig.size(), d_t);
      ad::Tape tape;
      for (std::size_t i = 0; i < train_sig.size(); ++i) {
        const ad::Var p = pts_normalise(tape.constant(train_sig[i].bag_feature), PTSConfig{});
        std::copy(p.value().data().begin(), p.value().data().end(), fit.row(i).begin());
      }
      projection = pca_reduce(fit, d_s);
    }
  }
  const Matrix* proj = projection ? &*projection : nullptr;

  OptimState opt;
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;

  std::mt19937_64 dropout_rng(derive_seed(cfg.seed, "dropout"));
  MILParams best_student = student;
  std::optional<MHFAParams> best_mhfa = mhfa;
  double best_val = 0.0;
  std::size_t since_best = 0;

  std::vector<std::size_t> order(train.size());
  std::vector<double> val_losses(val.size());
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, "epoch" + std::to_string(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double train_total = 0.0;
    for (std::size_t idx : order) {
      ad::Tape tape;
      const MILVars sv = bind(tape, student, true);
      std::optional<MHFAVars> mv;
      if (mhfa) mv = bind(tape, *mhfa, true);
      const TeacherSignals* sig = train_sig.empty() ? nullptr : &train_sig[idx];
      const BagObjective obj = bag_objective(cfg, sv, train[idx], sig, mv ? &*mv : nullptr,
                                             proj, true, tape, dropout_rng);
      tape.backward(obj.total);
      train_total += obj.total.value()[0];

      std::vector<NamedTensor> params = param_list(student);
      std::vector<const Matrix*> grads;
      for (ad::Var v : {sv.W_embed, sv.b_embed, sv.attn_V, sv.attn_U, sv.attn_w, sv.W_cls,
                        sv.b_cls}) {
        grads.push_back(&tape.grad(v));
      }
      if (mhfa) {
        auto extra = param_list(*mhfa);
        params.insert(params.end(), extra.begin(), extra.end());
        for (const auto& h : mv->heads) {
          grads.push_back(&tape.grad(h.W_Q));
          grads.push_back(&tape.grad(h.W_K));
          grads.push_back(&tape.grad(h.W_V));
        }
        grads.push_back(&tape.grad(mv->pool.W_V_gate));
        grads.push_back(&tape.grad(mv->pool.W_U_gate));
        grads.push_back(&tape.grad(mv->pool.w_gate));
      }
      adam_step(params, grads, opt);
    }

    // Validation: independent tapes against a frozen snapshot, reduced in index order.
    parallel_for(
        val.size(),
        [&](std::size_t i) {
          ad::Tape tape;
          std::mt19937_64 unused(0);
          const MILVars sv = bind(tape, student, false);
          std::optional<MHFAVars> mv;
          if (mhfa) mv = bind(tape, *mhfa, false);
          const TeacherSignals* sig = val_sig.empty() ? nullptr : &val_sig[i];
          val_losses[i] = bag_objective(cfg, sv, val[i], sig, mv ? &*mv : nullptr, proj, false,
                                        tape, unused)
                              .total.value()[0];
        },
        2);
    const double val_loss =
        std::accumulate(val_losses.begin(), val_losses.end(), 0.0) / static_cast<double>(val.size());
    const double train_loss = train_total / static_cast<double>(train.size());
    result.record.epochs.push_back({epoch, train_loss, val_loss});
    if (on_epoch) on_epoch(result.record.epochs.back(), student);

    if (epoch == 1 || val_loss < best_val) {
      best_val = val_loss;
      result.record.best_epoch = epoch;
      best_student = student;
      best_mhfa = mhfa;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      result.record.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }

  result.student = std::move(best_student);
  result.mhfa = std::move(best_mhfa);
  result.record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

std::vector<Matrix> predict_all(const MILParams& params, std::span<const Bag> bags) {
  std::vector<Matrix> out(bags.size());
  parallel_for(
      bags.size(), [&](std::size_t i) { out[i] = predict(params, bags[i].instances).probs; }, 2);
  return out;
}

EvalResult evaluate_model(const MILParams& params, std::span<const Bag> bags) {
  const auto preds = predict_all(params, bags);
  std::vector<std::size_t> labels;
  labels.reserve(bags.size());
  for (const auto& b : bags) labels.push_back(b.label);
  return evaluate(preds, labels);
}

nlohmann::json epoch_to_json(const EpochRecord& e) {
  return {{"type", "epoch"},
          {"epoch", e.epoch},
          {"train_loss", e.train_loss},
          {"val_loss", e.val_loss}};
}

nlohmann::json summary_to_json(const RunRecord& r) {
  nlohmann::json j = {{"type", "summary"},
                      {"epochs_run", r.epochs.size()},
                      {"best_epoch", r.best_epoch},
                      {"best_val_loss", r.epochs.empty() ? 0.0 : r.epochs[r.best_epoch - 1].val_loss},
                      {"stopped_early", r.stopped_early},
                      {"student_from_teacher", r.student_from_teacher}};
  j["test"] = r.test ? to_json(*r.test) : nlohmann::json(nullptr);
  return j;
}

}  // namespace milkt
