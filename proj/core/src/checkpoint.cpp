#include "coronagan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace coronagan::io {
namespace {

using ordered_json = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written in host order, which must be little-endian");

constexpr const char* kFormat = "coronagan-tensors";
constexpr int kVersion = 1;

}  // namespace

void write_tensors(const std::filesystem::path& dir, const std::string& stem,
                   const std::vector<NamedTensor>& tensors, const std::string& extra_json) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  const auto bin_path = dir / (stem + ".bin");
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot write " + bin_path.string());

  ordered_json manifest;
  manifest["format"] = kFormat;
  manifest["version"] = kVersion;
  manifest["blob"] = stem + ".bin";
  manifest["meta"] = ordered_json::parse(extra_json);
  ordered_json entries = ordered_json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const Shape4& s = t->shape();
    entries[name] = {{"shape", {s.n, s.c, s.h, s.w}}, {"dtype", "float32"}, {"offset", offset}};
    bin.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(t->size() * sizeof(float)));
    offset += t->size() * sizeof(float);
  }
  manifest["tensors"] = std::move(entries);
  if (!bin) throw IoError("write failed: " + bin_path.string());

  const auto json_path = dir / (stem + ".json");
  std::ofstream js(json_path);
  if (!js) throw IoError("cannot write " + json_path.string());
  js << manifest.dump(1) << '\n';
  if (!js) throw IoError("write failed: " + json_path.string());
}

TensorFile read_tensors(const std::filesystem::path& dir, const std::string& stem) {
  const auto json_path = dir / (stem + ".json");
  std::ifstream js(json_path);
  if (!js) throw IoError("cannot read " + json_path.string());
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(json_path.string() + ": " + e.what());
  }
  if (manifest.value("format", std::string{}) != kFormat) {
    throw IoError(json_path.string() + ": not a " + std::string(kFormat) + " manifest");
  }
  const auto bin_path = dir / manifest.at("blob").get<std::string>();
  std::ifstream bin(bin_path, std::ios::binary | std::ios::ate);
  if (!bin) throw IoError("cannot read " + bin_path.string());
  const auto blob_size = static_cast<std::uint64_t>(bin.tellg());

  TensorFile out;
  out.meta_json = manifest.value("meta", ordered_json::object()).dump();
  for (const auto& [name, entry] : manifest.at("tensors").items()) {
    if (entry.at("dtype").get<std::string>() != "float32") {
      throw IoError(json_path.string() + ": tensor " + name + " has unsupported dtype");
    }
    const auto dims = entry.at("shape").get<std::vector<int>>();
    if (dims.size() != 4) throw IoError(json_path.string() + ": tensor " + name + " is not 4-d");
    Tensor<float> t(dims[0], dims[1], dims[2], dims[3]);
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const std::uint64_t bytes = t.size() * sizeof(float);
    if (offset + bytes > blob_size) {
      throw IoError(bin_path.string() + ": tensor " + name + " extends past end of blob");
    }
    bin.seekg(static_cast<std::streamoff>(offset));
    bin.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(bytes));
    if (!bin) throw IoError("read failed: " + bin_path.string());
    out.tensors.emplace(name, std::move(t));
  }
  return out;
}

std::string network_config_json(const net::NetworkConfig& c) {
  ordered_json j{{"oct_channels", c.oct_channels},   {"hist_channels", c.hist_channels},
                 {"base_width", c.base_width},       {"n_resblocks", c.n_resblocks},
                 {"n_down", c.n_down},               {"disc_base_width", c.disc_base_width},
                 {"disc_layers", c.disc_layers},     {"classes", c.classes},
                 {"gen_max_width", c.gen_max_width}};
  return j.dump();
}

net::NetworkConfig network_config_from_json(const std::string& json) {
  const auto j = nlohmann::json::parse(json);
  net::NetworkConfig c;
  c.oct_channels = j.at("oct_channels").get<int>();
  c.hist_channels = j.at("hist_channels").get<int>();
  c.base_width = j.at("base_width").get<int>();
  c.n_resblocks = j.at("n_resblocks").get<int>();
  c.n_down = j.at("n_down").get<int>();
  c.disc_base_width = j.at("disc_base_width").get<int>();
  c.disc_layers = j.at("disc_layers").get<int>();
  c.classes = j.at("classes").get<int>();
  c.gen_max_width = j.at("gen_max_width").get<int>();
  return c;
}

void save_model(const net::CoronaryGan<float>& model, const std::filesystem::path& dir) {
  std::vector<NamedTensor> tensors;
  for (const auto& [net_name, store] : model.networks()) {
    for (int i = 0; i < store->size(); ++i) {
      tensors.push_back({net_name + "." + store->name(i), &store->value(i)});
    }
  }
  const std::string meta = R"({"network":)" + network_config_json(model.config) + "}";
  write_tensors(dir, "model", tensors, meta);
}

void load_params_into(const TensorFile& file, net::CoronaryGan<float>& model) {
  std::size_t expected = 0;
  for (auto& [net_name, store] : model.networks()) {
    for (int i = 0; i < store->size(); ++i) {
      ++expected;
      const std::string key = net_name + "." + store->name(i);
      const auto it = file.tensors.find(key);
      if (it == file.tensors.end()) throw IoError("checkpoint is missing tensor " + key);
      require_shape(it->second.shape(), store->value(i).shape(), "checkpoint tensor " + key);
      store->value(i) = it->second;
    }
  }
  if (file.tensors.size() != expected) {
    throw IoError("checkpoint holds " + std::to_string(file.tensors.size()) +
                  " tensors, model expects " + std::to_string(expected));
  }
}

net::CoronaryGan<float> load_model(const std::filesystem::path& dir) {
  const TensorFile file = read_tensors(dir, "model");
  const auto meta = nlohmann::json::parse(file.meta_json);
  if (!meta.contains("network")) throw IoError(dir.string() + ": model manifest lacks network config");
  net::CoronaryGan<float> model(network_config_from_json(meta.at("network").dump()));
  load_params_into(file, model);
  return model;
}

}  // namespace coronagan::io
