#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "milkt/matrix.hpp"

namespace milkt {

struct Bag {
  Matrix instances;  // n x d_in
  std::size_t label = 0;
  std::string bag_id;
};

/// Generator profile for one domain. Domain shift between profiles is carried
/// by witness_fraction (share of class-bearing instances per bag) and
/// mean_shift (offset added to every instance coordinate).
struct DomainProfile {
  std::string name;
  std::size_t n_classes = 2;
  double witness_fraction = 0.8;
  Matrix class_means{1, 1};  // n_classes x d_in
  double mean_shift = 0.0;
  double noise_scale = 1.0;
  std::size_t n_min = 50;
  std::size_t n_max = 200;
  std::vector<double> class_weights;

  std::size_t d_in() const { return class_means.cols(); }
  /// Throws ContractError on any broken invariant.
  void validate() const;
};

nlohmann::json to_json(const DomainProfile& p);
DomainProfile profile_from_json(const nlohmann::json& j);

/// "tcga_a" (3 classes, wf 0.8), "tcga_b" (2 classes, wf 0.8, shift 0.5),
/// "came_like" (2 classes, wf 0.1, shift 1.0).
DomainProfile builtin_profile(const std::string& name, std::size_t d_in = 1024);
std::vector<std::string> builtin_profile_names();

/// ceil(witness_fraction * n), guarded against representation error.
std::size_t witness_count(double witness_fraction, std::size_t n);

struct GeneratedBag {
  Bag bag;
  std::vector<bool> witness;  // per instance row
};

std::string bag_id_for(std::size_t index);
/// Bag `index` of the dataset generated with `seed`; independent of other bags.
GeneratedBag generate_bag(const DomainProfile& profile, std::uint64_t seed, std::size_t index);
std::vector<Bag> generate_dataset(const DomainProfile& profile, std::size_t n_bags,
                                  std::uint64_t seed);

struct SplitRatios {
  double train = 6.0;
  double val = 1.5;
  double test = 2.5;
};

/// Parses "a:b:c".
SplitRatios parse_split(const std::string& text);

struct DatasetSplits {
  std::vector<Bag> train;
  std::vector<Bag> val;
  std::vector<Bag> test;
};

/// Seeded shuffle, then val = floor(r_val N), test = floor(r_test N), rest train.
DatasetSplits split_dataset(std::vector<Bag> bags, const SplitRatios& ratios,
                            std::uint64_t seed);

struct Dataset {
  DomainProfile profile;
  std::vector<Bag> bags;
};

/// Layout: manifest.json + bags/<bag_id>.milb.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace milkt
