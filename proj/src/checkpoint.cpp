#include "milkt/checkpoint.hpp"

#include <fstream>

#include "milkt/serialize.hpp"

namespace milkt {
namespace fs = std::filesystem;
using nlohmann::json;

nlohmann::json arch_to_json(const MILArch& a) {
  return {{"d_in", a.d_in},           {"d_embed", a.d_embed},
          {"d_attn", a.d_attn},       {"n_classes", a.n_classes},
          {"dropout_rate", a.dropout_rate}};
}

MILArch arch_from_json(const nlohmann::json& j) {
  MILArch a;
  a.d_in = j.at("d_in").get<std::size_t>();
  a.d_embed = j.at("d_embed").get<std::size_t>();
  a.d_attn = j.at("d_attn").get<std::size_t>();
  a.n_classes = j.at("n_classes").get<std::size_t>();
  a.dropout_rate = j.at("dropout_rate").get<double>();
  return a;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": invalid JSON (" + e.what() + ")");
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

template <class Tensors>
json write_tensors(const fs::path& dir, const Tensors& tensors) {
  json names = json::array();
  for (const auto& t : tensors) {
    const std::string file = t.name + ".milb";
    write_milb(dir / file, *t.value);
    names.push_back(file);
  }
  return names;
}

template <class Tensors>
void read_tensors(const fs::path& dir, const json& manifest, Tensors tensors) {
  const auto& files = manifest.at("tensors");
  if (files.size() != tensors.size()) {
    throw FormatError(dir.string() + ": manifest lists " + std::to_string(files.size()) +
                      " tensors, expected " + std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto file = files[i].get<std::string>();
    if (file != tensors[i].name + ".milb") {
      throw FormatError(dir.string() + ": tensor " + std::to_string(i) + " is '" + file +
                        "', expected '" + tensors[i].name + ".milb'");
    }
    Matrix m = read_milb(dir / file, tensors[i].name);
    if (!m.same_shape(*tensors[i].value)) {
      throw FormatError(dir.string() + ": tensor " + tensors[i].name + " has shape " +
                        m.shape_str() + ", manifest implies " + tensors[i].value->shape_str());
    }
    *tensors[i].value = std::move(m);
  }
}

json load_manifest(const fs::path& dir, const std::string& kind) {
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) throw IoError("checkpoint manifest missing: " + path.string());
  json m = read_json_file(path);
  if (!m.is_object() || m.value("kind", "") != kind) {
    throw FormatError(path.string() + ": not a '" + kind + "' checkpoint manifest");
  }
  return m;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const MILCheckpoint& ckpt) {
  check_shapes(ckpt.params, ckpt.arch);
  ensure_dir(dir);
  json m;
  m["format_version"] = 1;
  m["kind"] = "mil";
  m["arch"] = arch_to_json(ckpt.arch);
  m["seed"] = ckpt.seed;
  m["source"] = ckpt.source_tag;
  m["tensors"] = write_tensors(dir, param_list(ckpt.params));
  write_json_file(dir / "manifest.json", m);
}

MILCheckpoint load_checkpoint(const fs::path& dir) {
  const json m = load_manifest(dir, "mil");
  try {
    MILCheckpoint ckpt;
    ckpt.arch = arch_from_json(m.at("arch"));
    ckpt.arch.validate();
    ckpt.seed = m.at("seed").get<std::uint64_t>();
    ckpt.source_tag = m.value("source", "");
    ckpt.params = init_params(ckpt.arch, 0);  // shape template, overwritten below
    read_tensors(dir, m, param_list(ckpt.params));
    return ckpt;
  } catch (const json::exception& e) {
    throw FormatError(dir.string() + ": malformed checkpoint manifest (" + e.what() + ")");
  } catch (const ContractError& e) {
    throw FormatError(dir.string() + ": " + e.what());
  }
}

void save_mhfa_checkpoint(const fs::path& dir, const MHFACheckpoint& ckpt) {
  ensure_dir(dir);
  const MHFADims d = ckpt.params.dims();
  json m;
  m["format_version"] = 1;
  m["kind"] = "mhfa";
  m["m"] = d.heads;
  m["d_t"] = d.d_t;
  m["d_s"] = d.d_s;
  m["d_k"] = d.d_k;
  m["d_prime"] = d.d_hidden;
  m["T"] = ckpt.params.pts.temperature;
  m["t"] = ckpt.params.pts.power;
  m["seed"] = ckpt.seed;
  m["tensors"] = write_tensors(dir, param_list(ckpt.params));
  write_json_file(dir / "manifest.json", m);
}

MHFACheckpoint load_mhfa_checkpoint(const fs::path& dir) {
  const json m = load_manifest(dir, "mhfa");
  try {
    const MHFADims d{m.at("d_t").get<std::size_t>(), m.at("d_s").get<std::size_t>(),
                     m.at("m").get<std::size_t>(), m.at("d_k").get<std::size_t>(),
                     m.at("d_prime").get<std::size_t>()};
    const PTSConfig pts{m.at("T").get<double>(), m.at("t").get<double>()};
    MHFACheckpoint ckpt;
    ckpt.seed = m.at("seed").get<std::uint64_t>();
    ckpt.params = init_mhfa(d, 0, pts);
    read_tensors(dir, m, param_list(ckpt.params));
    return ckpt;
  } catch (const json::exception& e) {
    throw FormatError(dir.string() + ": malformed MHFA manifest (" + e.what() + ")");
  } catch (const ContractError& e) {
    throw FormatError(dir.string() + ": " + e.what());
  }
}

}  // namespace milkt
