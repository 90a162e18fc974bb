#include "milkt/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "milkt/checkpoint.hpp"
#include "milkt/mil_model.hpp"
#include "milkt/parallel.hpp"
#include "milkt/seed.hpp"
#include "milkt/serialize.hpp"

namespace milkt {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kPrototypeSeed = 0x6d696c6b74ULL;
// Per-coordinate standard deviation of a morphology prototype.
constexpr double kPrototypeScale = 0.15;

std::vector<double> prototype(std::size_t index, std::size_t d_in) {
  std::mt19937_64 rng(derive_seed(kPrototypeSeed, "prototype:" + std::to_string(index)));
  std::normal_distribution<double> n(0.0, kPrototypeScale);
  std::vector<double> v(d_in);
  for (double& x : v) x = n(rng);
  return v;
}

// Row = sum of weight * prototype[index].
std::vector<double> blend(std::initializer_list<std::pair<double, std::size_t>> parts,
                          std::size_t d_in) {
  std::vector<double> out(d_in, 0.0);
  for (const auto& [w, idx] : parts) {
    const auto p = prototype(idx, d_in);
    for (std::size_t i = 0; i < d_in; ++i) out[i] += w * p[i];
  }
  return out;
}

Matrix stack(const std::vector<std::vector<double>>& rows) {
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  return m;
}

std::vector<double> normalised(std::vector<double> w) {
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= s;
  return w;
}

}  // namespace

void DomainProfile::validate() const {
  if (n_classes == 0) throw ContractError("profile " + name + ": n_classes must be >= 1");
  if (!(witness_fraction > 0.0 && witness_fraction <= 1.0)) {
    throw ContractError("profile " + name + ": witness_fraction must be in (0,1]");
  }
  if (class_means.rows() != n_classes) {
    throw ContractError("profile " + name + ": class_means has " +
                        std::to_string(class_means.rows()) + " rows for " +
                        std::to_string(n_classes) + " classes");
  }
  if (n_min < 1 || n_max < n_min) {
    throw ContractError("profile " + name + ": need 1 <= n_min <= n_max");
  }
  if (!(noise_scale >= 0.0) || !std::isfinite(mean_shift)) {
    throw ContractError("profile " + name + ": noise_scale must be >= 0, mean_shift finite");
  }
  if (class_weights.size() != n_classes) {
    throw ContractError("profile " + name + ": class_weights needs one entry per class");
  }
  double s = 0.0;
  for (double w : class_weights) {
    if (!(w >= 0.0)) throw ContractError("profile " + name + ": negative class weight");
    s += w;
  }
  if (std::abs(s - 1.0) > 1e-9) {
    throw ContractError("profile " + name + ": class_weights must sum to 1");
  }
  if (!class_means.all_finite()) throw ContractError("profile " + name + ": non-finite means");
}

json to_json(const DomainProfile& p) {
  json means = json::array();
  for (std::size_t r = 0; r < p.class_means.rows(); ++r) {
    const auto row = p.class_means.row(r);
    means.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return {{"name", p.name},
          {"n_classes", p.n_classes},
          {"witness_fraction", p.witness_fraction},
          {"class_means", means},
          {"mean_shift", p.mean_shift},
          {"noise_scale", p.noise_scale},
          {"n_range", {p.n_min, p.n_max}},
          {"class_weights", p.class_weights}};
}

DomainProfile profile_from_json(const json& j) {
  DomainProfile p;
  try {
    p.name = j.at("name").get<std::string>();
    p.n_classes = j.at("n_classes").get<std::size_t>();
    p.witness_fraction = j.at("witness_fraction").get<double>();
    const auto rows = j.at("class_means").get<std::vector<std::vector<double>>>();
    if (rows.empty() || rows.front().empty()) throw ContractError("empty class_means");
    for (const auto& r : rows) {
      if (r.size() != rows.front().size()) throw ContractError("ragged class_means");
    }
    p.class_means = stack(rows);
    p.mean_shift = j.at("mean_shift").get<double>();
    p.noise_scale = j.at("noise_scale").get<double>();
    const auto range = j.at("n_range").get<std::vector<std::size_t>>();
    if (range.size() != 2) throw ContractError("n_range needs two entries");
    p.n_min = range[0];
    p.n_max = range[1];
    p.class_weights = j.at("class_weights").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid profile JSON: ") + e.what());
  }
  p.validate();
  return p;
}

DomainProfile builtin_profile(const std::string& name, std::size_t d_in) {
  DomainProfile p;
  p.name = name;
  if (name == "tcga_a") {
    // Three classes with an imbalanced prior.
    p.n_classes = 3;
    p.witness_fraction = 0.80;
    p.class_means = stack({blend({{1.0, 0}}, d_in), blend({{1.0, 1}}, d_in),
                           blend({{0.8, 2}, {0.6, 5}}, d_in)});
    p.mean_shift = 0.0;
    p.class_weights = normalised({121.0, 519.0, 300.0});
  } else if (name == "tcga_b") {
    // Two near-balanced classes built from prototypes shared with tcga_a.
    p.n_classes = 2;
    p.witness_fraction = 0.80;
    p.class_means = stack({blend({{0.6, 1}, {0.8, 3}}, d_in), blend({{0.6, 2}, {0.8, 4}}, d_in)});
    p.mean_shift = 0.5;
    p.class_weights = normalised({512.0, 541.0});
  } else if (name == "came_like") {
    // Class 1 reuses tcga_a's class 2 prototype mix, but its witnesses are a
    // small minority of each bag. Class 0 bags carry no class signal.
    p.n_classes = 2;
    p.witness_fraction = 0.10;
    p.class_means = stack({std::vector<double>(d_in, 0.0), blend({{0.8, 2}, {0.6, 5}}, d_in)});
    p.mean_shift = 1.0;
    p.class_weights = normalised({239.0, 160.0});
  } else {
    throw ContractError("unknown built-in profile '" + name +
                        "' (expected tcga_a, tcga_b or came_like)");
  }
  p.noise_scale = 1.0;
  p.n_min = 50;
  p.n_max = 200;
  p.validate();
  return p;
}

std::vector<std::string> builtin_profile_names() { return {"tcga_a", "tcga_b", "came_like"}; }

std::size_t witness_count(double witness_fraction, std::size_t n) {
  const double raw = witness_fraction * static_cast<double>(n);
  const auto k = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::clamp<std::size_t>(k, 1, n);
}

std::string bag_id_for(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "bag_%05zu", index);
  return buf;
}

GeneratedBag generate_bag(const DomainProfile& profile, std::uint64_t seed, std::size_t index) {
  GeneratedBag out;
  out.bag.bag_id = bag_id_for(index);
  std::mt19937_64 rng(derive_seed(seed, out.bag.bag_id));

  std::discrete_distribution<std::size_t> pick_class(profile.class_weights.begin(),
                                                     profile.class_weights.end());
  out.bag.label = pick_class(rng);
  std::uniform_int_distribution<std::size_t> pick_n(profile.n_min, profile.n_max);
  const std::size_t n = pick_n(rng);
  const std::size_t k = witness_count(profile.witness_fraction, n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  out.witness.assign(n, false);
  for (std::size_t i = 0; i < k; ++i) out.witness[order[i]] = true;

  const std::size_t d = profile.d_in();
  out.bag.instances = Matrix(n, d);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto mean = profile.class_means.row(out.bag.label);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = out.bag.instances.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      const double centre = (out.witness[r] ? mean[c] : 0.0) + profile.mean_shift;
      row[c] = centre + profile.noise_scale * noise(rng);
    }
  }
  return out;
}

std::vector<Bag> generate_dataset(const DomainProfile& profile, std::size_t n_bags,
                                  std::uint64_t seed) {
  profile.validate();
  if (n_bags == 0) throw ContractError("generate_dataset: n_bags must be >= 1");
  std::vector<Bag> bags(n_bags);
  parallel_for(
      n_bags, [&](std::size_t i) { bags[i] = generate_bag(profile, seed, i).bag; }, 2);
  return bags;
}

SplitRatios parse_split(const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ':')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ContractError("invalid split '" + text + "' (expected a:b:c)");
    }
  }
  if (parts.size() != 3) throw ContractError("invalid split '" + text + "' (expected a:b:c)");
  return {parts[0], parts[1], parts[2]};
}

DatasetSplits split_dataset(std::vector<Bag> bags, const SplitRatios& r, std::uint64_t seed) {
  if (!(r.train > 0.0 && r.val > 0.0 && r.test > 0.0)) {
    throw ContractError("split ratios must all be positive");
  }
  const double total = r.train + r.val + r.test;
  const std::size_t n = bags.size();
  const auto cut = [&](double part) {
    return static_cast<std::size_t>(std::floor(part / total * static_cast<double>(n) + 1e-9));
  };
  const std::size_t n_val = cut(r.val);
  const std::size_t n_test = cut(r.test);
  const std::size_t n_train = n - n_val - n_test;
  if (n_train == 0 || n_val == 0 || n_test == 0) {
    throw ContractError("split of " + std::to_string(n) + " bags leaves an empty split (" +
                        std::to_string(n_train) + "/" + std::to_string(n_val) + "/" +
                        std::to_string(n_test) + ")");
  }
  std::mt19937_64 rng(derive_seed(seed, "split"));
  std::shuffle(bags.begin(), bags.end(), rng);
  DatasetSplits s;
  auto it = std::make_move_iterator(bags.begin());
  s.train.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(it + static_cast<std::ptrdiff_t>(n_train),
               it + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(it + static_cast<std::ptrdiff_t>(n_train + n_val),
                std::make_move_iterator(bags.end()));
  return s;
}

void write_dataset(const Dataset& ds, const fs::path& dir) {
  ds.profile.validate();
  std::error_code ec;
  fs::create_directories(dir / "bags", ec);
  if (ec) throw IoError("cannot create " + (dir / "bags").string() + ": " + ec.message());
  json bags = json::array();
  for (const auto& b : ds.bags) {
    if (b.instances.cols() != ds.profile.d_in()) {
      throw ContractError("bag " + b.bag_id + " has " + std::to_string(b.instances.cols()) +
                          " columns, profile d_in is " + std::to_string(ds.profile.d_in()));
    }
    const std::string file = "bags/" + b.bag_id + ".milb";
    write_milb(dir / file, b.instances);
    bags.push_back({{"id", b.bag_id}, {"label", b.label}, {"file", file}});
  }
  json m;
  m["format_version"] = 1;
  m["profile"] = to_json(ds.profile);
  m["bags"] = bags;
  write_json_file(dir / "manifest.json", m);
}

Dataset read_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw IoError("dataset manifest missing: " + manifest_path.string());
  const json m = read_json_file(manifest_path);
  Dataset ds;
  try {
    if (m.at("format_version").get<int>() != 1) {
      throw FormatError(manifest_path.string() + ": unsupported format_version");
    }
    ds.profile = profile_from_json(m.at("profile"));
    for (const auto& entry : m.at("bags")) {
      Bag b;
      b.bag_id = entry.at("id").get<std::string>();
      b.label = entry.at("label").get<std::size_t>();
      if (b.label >= ds.profile.n_classes) {
        throw FormatError("bag " + b.bag_id + ": label " + std::to_string(b.label) +
                          " out of range for " + std::to_string(ds.profile.n_classes) +
                          " classes");
      }
      const fs::path file = dir / entry.at("file").get<std::string>();
      if (!fs::exists(file)) throw IoError("bag " + b.bag_id + ": missing file " + file.string());
      b.instances = read_milb(file, "bag " + b.bag_id);
      if (b.instances.cols() != ds.profile.d_in()) {
        throw FormatError("bag " + b.bag_id + ": " + std::to_string(b.instances.cols()) +
                          " columns, profile d_in is " + std::to_string(ds.profile.d_in()));
      }
      ds.bags.push_back(std::move(b));
    }
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": malformed dataset manifest (" + e.what() + ")");
  } catch (const ContractError& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  if (ds.bags.empty()) throw FormatError(manifest_path.string() + ": dataset has no bags");
  return ds;
}

}  // namespace milkt
